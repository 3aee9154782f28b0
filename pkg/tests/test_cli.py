import csv
import json

import numpy as np
import pytest

from regpath import cli
from regpath.problems import builtin


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_trace_l1(tmp_path, capsys):
    out = tmp_path / "p.json"
    code, _, _ = run(capsys, "trace", "--problem", "builtin:l1_kink", "--out", str(out))
    assert code == 0
    doc = cli.loads(out.read_text())
    assert doc["termination"] == "GCritical"
    lines = [s for s in doc["segments"] if len(s["points"]) > 1]
    assert len(lines) == 2 and len(doc["segments"]) == 3
    assert len(doc["breakpoints"]) == 1
    b = doc["breakpoints"][0]
    assert np.allclose(b["x"], [1, 0], atol=1e-9)
    assert set(b["kink_class"]) == {"A3-violation", "A5-violation"}
    assert set(b["assumptions"]) == {"A1", "A2", "A3", "A4", "A5"}


def test_trace_schema(tmp_path, capsys):
    out = tmp_path / "p.json"
    run(capsys, "trace", "--problem", "builtin:l1_kink", "--out", str(out))
    doc = cli.loads(out.read_text())
    assert set(doc) >= {"problem", "config", "segments", "breakpoints", "termination"}
    s = doc["segments"][0]
    assert set(s) >= {"active_pattern", "reduced_index_set", "points", "start_event", "end_event", "local_dimension"}
    assert set(s["points"][0]) == {"x", "lambda", "alpha", "beta", "f", "g"}
    for a in doc["breakpoints"][0]["assumptions"].values():
        assert set(a) == {"status", "evidence"}


def test_trace_json_round_trip(tmp_path, capsys):
    out = tmp_path / "p.json"
    run(capsys, "trace", "--problem", "builtin:penalty_circles", "--out", str(out))
    text = out.read_text()
    doc = cli.loads(text)
    assert cli.dumps(doc) + "\n" == text


def test_dumps_precision_and_infinity():
    x = 0.1 + 0.2
    doc = {"a": [x, float("inf"), -float("inf")], "b": 1, "c": "s"}
    text = cli.dumps(doc)
    assert "0.30000000000000004" in text and '"inf"' in text
    back = cli.loads(text)
    assert back["a"][0] == x and back["a"][1] == np.inf and back["a"][2] == -np.inf


def test_trace_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run(capsys, "trace", "--problem", "builtin:svm_osy", "--out", str(a))
    run(capsys, "trace", "--problem", "builtin:svm_osy", "--out", str(b))
    assert a.read_bytes() == b.read_bytes()


def test_trace_csv_svm(tmp_path, capsys):
    out = tmp_path / "p.csv"
    code, _, _ = run(capsys, "trace", "--problem", "builtin:svm_osy", "--csv", str(out))
    assert code == 0
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["seg", "x1", "x2", "x3", "lambda", "f", "g"]
    X = np.array([[float(v) for v in r[1:4]] for r in rows[1:]])
    pts = builtin("svm_osy").metadata["points"]
    for key in ("x2", "x3", "x4"):
        assert np.min(np.linalg.norm(X - pts[key], axis=1)) < 1e-8


def test_trace_stdout(capsys):
    code, out, _ = run(capsys, "trace", "--problem", "builtin:l1_kink")
    assert code == 0 and cli.loads(out)["termination"] == "GCritical"


def test_trace_penalty_seed_point(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run(capsys, "trace", "--problem", "builtin:penalty_circles", "--out", str(a))
    seed = ",".join(str(v) for v in builtin("penalty_circles").metadata["seeds"][0])
    code, _, _ = run(capsys, "trace", "--problem", "builtin:penalty_circles", "--out", str(b), "--seed-point", seed)
    assert code == 0
    da, db = cli.loads(a.read_text()), cli.loads(b.read_text())
    assert {s["component"] for s in da["segments"]} == {0}
    assert {s["component"] for s in db["segments"]} == {0, 1}
    assert da["termination"] == "GCritical"


def test_trace_stalled_exit_code(tmp_path, capsys, monkeypatch):
    from regpath import tracer
    monkeypatch.setattr(cli, "TracerConfig", lambda **kw: tracer.TracerConfig(max_steps=2, **kw))
    out = tmp_path / "p.json"
    code, _, _ = run(capsys, "trace", "--problem", "builtin:penalty_circles", "--out", str(out))
    assert code == 2
    assert cli.loads(out.read_text())["termination"] == "Stalled"


def test_trace_lambda_max_and_step(tmp_path, capsys):
    out = tmp_path / "p.json"
    code, _, _ = run(capsys, "trace", "--problem", "builtin:aff_degenerate", "--lambda-max", "5",
                     "--step", "0.05", "--out", str(out))
    doc = cli.loads(out.read_text())
    assert code == 0 and doc["termination"] == "LambdaMax"
    assert doc["config"]["h_max"] == 0.05


def test_trace_spec_file(tmp_path, capsys):
    spec = {"kind": "quadratic_pwlinear", "A": [[1, 0], [0, 1]], "b": [-2, -1],
            "terms": [[{"a": [1, 0]}, {"a": [-1, 0]}], [{"a": [0, 1]}, {"a": [0, -1]}]]}
    src = tmp_path / "spec.json"
    src.write_text(json.dumps(spec))
    code, out, _ = run(capsys, "trace", "--problem", str(src))
    assert code == 0
    doc = cli.loads(out)
    assert doc["problem"]["kind"] == "quadratic_pwlinear"
    assert doc["termination"] == "GCritical"


@pytest.mark.parametrize("argv", [
    ["trace"],
    ["trace", "--problem", "builtin:l1_kink", "--lambda-max", "abc"],
    ["trace", "--problem", "builtin:l1_kink", "--step", "-1"],
    ["trace", "--problem", "builtin:nope"],
    ["classify", "--problem", "builtin:l1_kink", "--point", "1,x"],
    ["classify", "--problem", "builtin:l1_kink", "--point", "1,2,3"],
    ["oracle", "--problem", "builtin:l1_kink", "--box", "2,1;0,1"],
    ["frobnicate"],
])
def test_bad_flags(argv, capsys):
    code, _, err = run(capsys, *argv)
    assert code == 1 and err


def _classify(capsys, problem, point):
    code, out, err = run(capsys, "classify", "--problem", f"builtin:{problem}", "--point", point)
    return code, (cli.loads(out) if code == 0 else err)


def test_classify_svm_x3(capsys):
    code, doc = _classify(capsys, "svm_osy", "-0.6667,-0.6667,1.6667")
    st = {k: v["status"] for k, v in doc["assumptions"].items()}
    assert code == 0 and st["A2"] == "Violated" and st["A3"] == "Violated" and st["A5"] == "Violated"


def test_classify_penalty_x2(capsys):
    x2 = builtin("penalty_circles").metadata["points"]["x2"]
    code, doc = _classify(capsys, "penalty_circles", ",".join(f"{v:.6f}" for v in x2))
    st = {k: v["status"] for k, v in doc["assumptions"].items()}
    assert code == 0 and st["A2"] == "Violated" and st["A3"] == "Holds"


def test_classify_l1_segment(capsys):
    code, doc = _classify(capsys, "l1_kink", "1.5,0.5")
    st = {k: v["status"] for k, v in doc["assumptions"].items()}
    assert code == 0
    assert all(st[k] == "Holds" for k in ("A1", "A2", "A3", "A5"))
    assert np.allclose(doc["polished"], [1.5, 0.5], atol=1e-12)


def test_classify_fraction_point(capsys):
    code, doc = _classify(capsys, "svm_osy", "-2/3,-2/3,5/3")
    assert code == 0 and doc["assumptions"]["A2"]["status"] == "Violated"


def test_classify_off_path(capsys):
    code, err = _classify(capsys, "l1_kink", "2.5,-1")
    assert code == 3 and "not on critical path" in err


def test_oracle_csv(tmp_path, capsys):
    out = tmp_path / "scan.csv"
    code, _, _ = run(capsys, "oracle", "--problem", "builtin:l1_kink", "--box", "0,1;0,1",
                     "--resolution", "0.25", "--out", str(out))
    assert code == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "x1,x2,residual,marked" and len(rows) == 17


def test_oracle_negative_box(tmp_path, capsys):
    out = tmp_path / "scan.csv"
    code, _, _ = run(capsys, "oracle", "--problem", "builtin:l1_kink", "--box", "-0.5,0.5;-0.5,0.5",
                     "--resolution", "0.25", "--out", str(out))
    assert code == 0 and float(out.read_text().splitlines()[1].split(",")[0]) == -0.375


def test_oracle_compare(tmp_path, capsys):
    p = tmp_path / "p.json"
    run(capsys, "trace", "--problem", "builtin:l1_kink", "--out", str(p))
    code, out, _ = run(capsys, "oracle", "--problem", "builtin:l1_kink", "--box", "-0.5,2.5;-0.5,2.5",
                       "--resolution", "0.02", "--compare", str(p))
    assert code == 0 and cli.loads(out)["verdict"] == "Pass"


def test_oracle_compare_mismatch(tmp_path, capsys):
    p = tmp_path / "p.json"
    run(capsys, "trace", "--problem", "builtin:aff_degenerate", "--lambda-max", "5", "--out", str(p))
    code, out, _ = run(capsys, "oracle", "--problem", "builtin:l1_kink", "--box", "-0.5,2.5;-0.5,2.5",
                       "--resolution", "0.02", "--compare", str(p))
    assert code == 4 and cli.loads(out)["verdict"] == "Fail"


def test_oracle_large_dim(tmp_path, capsys):
    spec = {"kind": "quadratic_pwlinear", "A": np.eye(4).tolist(), "b": [0, 0, 0, 0],
            "branches": [[{"a": [1, 0, 0, 0]}, {"a": [-1, 0, 0, 0]}]]}
    src = tmp_path / "spec.json"
    src.write_text(json.dumps(spec))
    code, _, _ = run(capsys, "oracle", "--problem", str(src), "--box", "0,1;0,1;0,1;0,1")
    assert code == 5
