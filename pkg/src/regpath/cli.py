"""Command-line front end: ``regpath trace | classify | oracle``.

Exit codes: 0 success, 1 bad flags or input, 2 stalled trace (partial output
written), 3 point not on the critical path, 4 oracle comparison failed,
5 dimension too large for a grid scan.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
from fractions import Fraction
from typing import Optional

import numpy as np

from .hsys import NotOnPath, classify_point
from .numkernel import RegpathError
from .oracle import Unsupported, compare, grid_scan
from .pcmodel import ActivityPattern
from .problems import load_problem
from .tracer import TracerConfig, local_context, polish, trace

EXIT_OK, EXIT_USAGE, EXIT_STALLED, EXIT_NOT_ON_PATH, EXIT_FAIL, EXIT_DIM = 0, 1, 2, 3, 4, 5

# evidence keys reported under each assumption
_EVIDENCE = {
    "A1": ("sample_affdims",),
    "A2": ("d", "r", "a2_residual", "a2_witness", "a2_witness_selections"),
    "A3": ("t_star", "reduced_certificate", "alpha_range", "lambda_range", "g_critical"),
    "A4": ("rank", "kernel_dim", "W_dim", "V2_dim", "sample_ranks", "A4_case"),
    "A5": ("context",),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# JSON with 17 significant digits
# ---------------------------------------------------------------------------

def plain(obj):
    """Convert results to JSON-ready builtins (floats kept as floats)."""
    if isinstance(obj, ActivityPattern):
        return [list(a) for a in obj.active]
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating, Fraction)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def _num(v: float) -> str:
    if math.isnan(v):
        return '"nan"'
    if math.isinf(v):
        return '"inf"' if v > 0 else '"-inf"'
    return format(v, ".17g")


def dumps(obj, indent: int = 1, _level: int = 0) -> str:
    """JSON text; floats with 17 significant digits, infinities as strings."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return json.dumps(obj)
    if isinstance(obj, float):
        return _num(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _restore(obj):
    if isinstance(obj, dict):
        return {k: _restore(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore(v) for v in obj]
    if obj in ("inf", "-inf", "nan"):
        return float(obj)
    return obj


def loads(text: str):
    """Inverse of ``dumps``."""
    return _restore(json.loads(text))


def report_dict(cls) -> dict:
    """Assumption statuses with their evidence, plus kink labels."""
    rep, kink = cls.report, cls.kink
    ev = plain(rep.evidence)
    out = {}
    for key, status in rep.status.items():
        out[key] = {"status": status, "evidence": {k: ev[k] for k in _EVIDENCE[key] if k in ev}}
    return {
        "pattern": plain(cls.pattern),
        "kink_class": list(kink.labels),
        "assumptions": out,
        "certificates": ev.get("certificates", []),
    }


def path_document(problem, cfg: TracerConfig, path) -> dict:
    segs = []
    for s in path.segments:
        segs.append({
            "active_pattern": plain(s.pattern),
            "reduced_index_set": plain(s.index_set),
            "points": [{"x": plain(p.x), "lambda": float(p.lam), "alpha": float(p.alpha),
                        "beta": plain(p.beta), "f": float(p.f), "g": float(p.g)} for p in s.points],
            "start_event": s.start_event,
            "end_event": s.end_event,
            "local_dimension": int(s.local_dimension),
            "component": int(s.component),
            "branch": int(s.branch),
            "sense": int(s.sense),
            "tag": s.tag,
        })
    bps = []
    for b in path.breakpoints:
        entry = {"x": plain(b.x), "lambda": float(b.lam), "event": b.event, "component": int(b.component),
                 "kink_class": list(b.kink.labels)}
        if b.report is not None:
            ev = plain(b.report.evidence)
            entry["assumptions"] = {k: {"status": v, "evidence": {e: ev[e] for e in _EVIDENCE[k] if e in ev}}
                                    for k, v in b.report.status.items()}
        bps.append(entry)
    conf = {f.name: plain(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}
    return {
        "problem": problem.spec.to_dict() if problem.spec is not None else problem.name,
        "config": conf,
        "segments": segs,
        "breakpoints": bps,
        "termination": path.termination,
    }


def read_path_polylines(path_json: str) -> list:
    """Polylines (one per segment) from a trace JSON document."""
    with open(path_json) as fh:
        doc = loads(fh.read())
    return [np.array([p["x"] for p in s["points"]], dtype=float) for s in doc["segments"]]


def write_path_csv(path, dest):
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        n = path.segments[0].points[0].x.size if path.segments else 0
        w.writerow(["seg"] + [f"x{i + 1}" for i in range(n)] + ["lambda", "f", "g"])
        for k, s in enumerate(path.segments):
            for p in s.points:
                w.writerow([k] + [_num(float(v)) for v in p.x] + [_num(p.lam), _num(p.f), _num(p.g)])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _vector(text: str, name: str) -> np.ndarray:
    try:
        v = np.array([float(Fraction(t.strip())) for t in text.split(",")])
    except (ValueError, ZeroDivisionError) as e:
        raise UsageError(f"{name}: expected a comma separated list of numbers") from e
    return v


def _box(text: str) -> list:
    out = []
    for part in text.split(";"):
        v = _vector(part, "--box")
        if v.size != 2 or v[1] <= v[0]:
            raise UsageError("--box: each range needs lo,hi with lo < hi")
        out.append((float(v[0]), float(v[1])))
    return out


def cmd_trace(args) -> int:
    problem = load_problem(args.problem)
    cfg = TracerConfig(lambda_max=args.lambda_max)
    if args.step is not None:
        if args.step <= 0:
            raise UsageError("--step must be positive")
        cfg.h0 = args.step
        cfg.h_max = max(args.step, cfg.h_min)
    seeds = [_vector(s, "--seed-point") for s in args.seed_point or []]
    for s in seeds:
        if s.size != problem.dim:
            raise UsageError(f"--seed-point needs {problem.dim} coordinates")
    md = problem.metadata
    path = trace(problem.f, problem.g, cfg, seeds=seeds, convex=md.get("convex"), start=md.get("start"))
    doc = path_document(problem, cfg, path)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(dumps(doc) + "\n")
    if args.csv:
        write_path_csv(path, args.csv)
    if not args.out and not args.csv:
        sys.stdout.write(dumps(doc) + "\n")
    logging.getLogger("regpath").info("termination %s, %d segments, %d breakpoints",
                                      path.termination, len(path.segments), len(path.breakpoints))
    return EXIT_STALLED if path.termination == "Stalled" else EXIT_OK


def cmd_classify(args) -> int:
    problem = load_problem(args.problem)
    x = _vector(args.point, "--point")
    if x.size != problem.dim:
        raise UsageError(f"--point needs {problem.dim} coordinates")
    xp = polish(problem.f, problem.g, x)
    if xp is None:
        print("not on critical path", file=sys.stderr)
        return EXIT_NOT_ON_PATH
    try:
        cls = classify_point(problem.f, problem.g, xp, context=local_context(problem.f, problem.g, xp))
    except NotOnPath:
        print("not on critical path", file=sys.stderr)
        return EXIT_NOT_ON_PATH
    doc = {"point": plain(x), "polished": plain(xp)}
    doc.update(report_dict(cls))
    sys.stdout.write(dumps(doc) + "\n")
    return EXIT_OK


def cmd_oracle(args) -> int:
    problem = load_problem(args.problem)
    if problem.dim > 3:
        print("grid scans are limited to n <= 3", file=sys.stderr)
        return EXIT_DIM
    if args.box is not None:
        box = _box(args.box)
    elif "box" in problem.metadata:
        box = [tuple(map(float, b)) for b in problem.metadata["box"]]
    else:
        raise UsageError("--box is required for this problem")
    if len(box) != problem.dim:
        raise UsageError(f"--box needs {problem.dim} ranges")
    if args.resolution <= 0:
        raise UsageError("--resolution must be positive")
    scan = grid_scan(problem.f, problem.g, box, args.resolution, args.tol_mark)
    if args.out:
        scan.to_csv(args.out)
    elif not args.compare:
        scan.to_csv(sys.stdout)
    if args.compare:
        rep = compare(read_path_polylines(args.compare), scan, args.tol)
        sys.stdout.write(dumps(plain(rep)) + "\n")
        return EXIT_OK if rep.passed else EXIT_FAIL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="regpath", description="Critical regularization paths of f + lambda g.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    t = sub.add_parser("trace", help="trace the critical path")
    t.add_argument("--problem", required=True, help="builtin:<name> or a JSON problem spec")
    t.add_argument("--lambda-max", type=float, default=100.0)
    t.add_argument("--step", type=float, default=None, help="initial and maximal predictor step")
    t.add_argument("--out", help="JSON output file")
    t.add_argument("--csv", help="CSV output file (seg,x1..xn,lambda,f,g)")
    t.add_argument("--seed-point", action="append", help="extra component seed, comma list (repeatable)")
    t.set_defaults(func=cmd_trace)

    c = sub.add_parser("classify", help="assumption report at a point")
    c.add_argument("--problem", required=True)
    c.add_argument("--point", required=True, help="comma list; moved onto the critical set first")
    c.set_defaults(func=cmd_classify)

    o = sub.add_parser("oracle", help="grid scan and path comparison")
    o.add_argument("--problem", required=True)
    o.add_argument("--box", help='"lo1,hi1;lo2,hi2[;lo3,hi3]"')
    o.add_argument("--resolution", type=float, default=0.01)
    o.add_argument("--tol-mark", type=float, default=None, help="marking threshold (default 2*resolution)")
    o.add_argument("--tol", type=float, default=None, help="coverage distance (default 3*resolution)")
    o.add_argument("--out", help="scan CSV output file")
    o.add_argument("--compare", help="trace JSON to compare against the scan")
    o.set_defaults(func=cmd_oracle)
    return p


def _setup_logging():
    level = os.environ.get("REGPATH_LOG", "error").lower()
    lv = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(level, logging.ERROR)
    logging.basicConfig(level=lv, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger("regpath").setLevel(lv)


_VALUE_FLAGS = ("--box", "--point", "--seed-point")


def _attach_negative_values(argv: list) -> list:
    # "--point -1,2" would otherwise read the coordinate list as an option
    out, i = [], 0
    while i < len(argv):
        a = argv[i]
        if a in _VALUE_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-") and argv[i + 1][1:2] in "0123456789.":
            out.append(f"{a}={argv[i + 1]}")
            i += 2
            continue
        out.append(a)
        i += 1
    return out


def main(argv: Optional[list] = None) -> int:
    _setup_logging()
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(_attach_negative_values(argv))
        return args.func(args)
    except UsageError as e:
        print(f"regpath: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Unsupported as e:
        print(f"regpath: {e}", file=sys.stderr)
        return EXIT_DIM
    except (RegpathError, OSError, ValueError) as e:
        print(f"regpath: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
