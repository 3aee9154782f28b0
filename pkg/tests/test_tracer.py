import time

import numpy as np
import pytest

from regpath import hull
from regpath.oracle import _polyline_points, exact_pwlinear_path, hausdorff
from regpath.pcmodel import ActivityPattern, MaxTerm, PCFunction, QuadraticFunction, activity, affine, subdiff_generators
from regpath.problems import build, builtin, constraint_values
from regpath.tracer import (PLATEAU_TAG, STEEPEST_TAG, Stratum, TracerConfig, detect_events, fast_path_pwlinear,
                            find_minimizer, local_context, polish, restart_candidates, trace)


def component_vertices(path, comp=0):
    return [np.round(v, 9) for v in path.vertices(comp)]


# l1 example

def test_l1_vertices(l1):
    P, path = l1
    V = path.vertices(0)
    assert len(V) == 3
    for v, e in zip(V, P.metadata["vertices"]):
        assert np.linalg.norm(v - e) < 1e-6
    assert path.termination == "GCritical"


def test_l1_breakpoint(l1):
    _, path = l1
    assert len(path.breakpoints) == 1
    b = path.breakpoints[0]
    assert np.linalg.norm(b.x - [1, 0]) < 1e-9 and abs(b.lam - 2) < 1e-8
    assert set(b.kink.labels) == {"A3-violation", "A5-violation"}


def test_l1_segment_lambdas(l1):
    P, path = l1
    lines = [s for s in path.segments if len(s.points) > 1]
    assert lines[0].points[0].lam == 0 and abs(lines[0].points[-1].lam - 2) < 1e-8
    assert abs(lines[1].points[-1].lam - 4) < 1e-8
    assert path.segments[-1].end_event == "GCritical"


def test_l1_fast():
    P = builtin("l1_kink")
    t = time.perf_counter()
    trace(P.f, P.g, start=P.metadata["start"], convex=True)
    assert time.perf_counter() - t < 1.0


# invariants on every built-in

@pytest.fixture(params=["l1", "svm", "aff", "penalty"])
def traced(request):
    return request.getfixturevalue(request.param)


def test_residuals_on_path(traced):
    P, path = traced
    for s in path.segments:
        assert s.max_residual <= 1e-9
        if s.tag == PLATEAU_TAG or len(s.points) < 2:
            continue
        st = Stratum(P.f, P.g, s.pattern)
        for p in s.points:
            z = np.concatenate([p.x, [p.alpha], p.beta])
            assert st.residual(z) <= 1e-9


def test_lambda_monotone_per_segment(traced):
    _, path = traced
    for s in path.segments:
        lam = np.array([p.lam for p in s.points])
        if lam.size > 1:
            assert np.all(s.sense * np.diff(lam) > 0)


def test_pattern_constant_per_segment(traced):
    P, path = traced
    for s in path.segments:
        if s.tag == PLATEAU_TAG:
            continue
        for p in s.points[1:-1]:
            act = activity(P.g, p.x, 1e-6)
            assert act.contains(s.pattern)


def test_segments_connect(traced):
    _, path = traced
    ends = {}
    for s in path.segments:
        prev = ends.setdefault(s.component, [])
        if prev:
            assert min(np.linalg.norm(s.points[0].x - e) for e in prev) <= 1e-7
        prev.extend([s.points[0].x, s.points[-1].x])


def test_criticality_along_path(traced):
    P, path = traced
    pts = [p for s in path.segments for p in s.points][::10]
    for p in pts:
        gens = subdiff_generators(P.g, p.x, activity(P.g, p.x, 1e-7))
        ok, _ = hull.criticality(P.f.gradient(p.x), gens)
        assert ok


@pytest.mark.parametrize("fx", ["l1", "svm"])
def test_collinear_segments(fx, request):
    _, path = request.getfixturevalue(fx)
    for s in path.segments:
        X = np.array([p.x for p in s.points])
        if len(X) < 3:
            continue
        d = X[-1] - X[0]
        if np.linalg.norm(d) == 0:
            assert np.max(np.linalg.norm(X - X[0], axis=1)) <= 1e-8
            continue
        u = d / np.linalg.norm(d)
        R = (X - X[0]) - np.outer((X - X[0]) @ u, u)
        assert np.max(np.linalg.norm(R, axis=1)) <= 1e-8


# fast path and oracle agreement

@pytest.mark.parametrize("name", ["l1_kink", "svm_osy"])
def test_trace_matches_fast_path(name):
    P = builtin(name)
    md = P.metadata
    a = trace(P.f, P.g, start=md["start"], convex=True)
    b = fast_path_pwlinear(P.f, P.g, start=md["start"], convex=True)
    assert hausdorff(_polyline_points(a), _polyline_points(b)) <= 1e-6


def test_fast_path_l1_exact_vertices():
    P = builtin("l1_kink")
    path = fast_path_pwlinear(P.f, P.g, start=P.metadata["start"], convex=True)
    for v, e in zip(path.vertices(0), P.metadata["vertices"]):
        assert np.max(np.abs(v - e)) <= 1e-12


def test_fast_path_orthant_direction():
    A = np.diag([2.0, 4.0])
    f = QuadraticFunction(A, [-10.0, -20.0])
    g = PCFunction(2, [MaxTerm([affine([1, 0]), affine([-1, 0])]), MaxTerm([affine([0, 1]), affine([0, -1])])])
    path = fast_path_pwlinear(f, g, convex=True)
    s = path.segments[0]
    p0, p1 = s.points[0], s.points[-1]
    dx = (p1.x - p0.x) / (p1.lam - p0.lam)
    assert np.allclose(dx, -np.linalg.solve(A, [1.0, 1.0]), atol=1e-12)


def test_fast_path_falls_back():
    P = builtin("penalty_circles")
    a = fast_path_pwlinear(P.f, P.g, start=P.metadata["start"], convex=False)
    b = trace(P.f, P.g, start=P.metadata["start"], convex=False)
    assert len(a.segments) == len(b.segments)


def test_svm_vertices_visit_named_points(svm):
    P, path = svm
    V = np.array(path.vertices(0))
    for key in ("x2", "x3", "x4"):
        assert np.min(np.linalg.norm(V - P.metadata["points"][key], axis=1)) < 1e-8
    assert path.termination == "GCritical"


def test_svm_steepest_tag(svm):
    _, path = svm
    dims = {s.local_dimension for s in path.segments}
    assert max(dims) >= 2
    for s in path.segments:
        if s.local_dimension > 1 and s.tag != PLATEAU_TAG and len(s.points) > 1:
            assert s.tag == STEEPEST_TAG


def test_svm_matches_exact(svm):
    P, path = svm
    ex = exact_pwlinear_path(P.f, P.g, start=P.metadata["start"])
    assert hausdorff(_polyline_points(path), _polyline_points(ex)) <= 1e-6


# events and restarts

def _z(st, x, alpha):
    beta, _ = st.coefficients(x, alpha)
    return np.concatenate([x, [alpha], beta])


def test_event_new_branch_on_diagonal():
    P = builtin("l1_kink")
    st = Stratum(P.f, P.g, ActivityPattern(((0,),)))
    za = _z(st, np.array([1.2, 0.2]), 1 / (1 + 2 * 0.8))
    zb = _z(st, np.array([0.8, -0.2]), 1 / (1 + 2 * 1.2))
    kinds = [e[0] for e in detect_events(st, za, zb, TracerConfig())]
    assert "NewBranchActive" in kinds


def test_event_beta_zero_on_axis():
    P = builtin("l1_kink")
    st = Stratum(P.f, P.g, ActivityPattern(((0, 1),)))
    za = _z(st, np.array([0.5, 0.0]), 1 / (5 - 1.0))
    zb = _z(st, np.array([1.2, 0.0]), 1 / (5 - 2.4))
    ev = detect_events(st, za, zb, TracerConfig(), sense=-1)
    assert [e[0] for e in ev] == ["BetaZero"]
    assert st.nu_labels[ev[0][1]] == (0, 1)


def test_event_alpha_zero():
    P = builtin("l1_kink")
    st = Stratum(P.f, P.g, ActivityPattern(((0, 1, 2, 3),)))
    za = _z(st, np.zeros(2), 0.1)
    zb = za.copy()
    zb[2] = -0.01
    assert "AlphaZero" in [e[0] for e in detect_events(st, za, zb, TracerConfig())]


def test_restart_at_l1_kink():
    P = builtin("l1_kink")
    x = np.array([1.0, 0.0])
    cands = restart_candidates(P.f, P.g, x, ActivityPattern(((0,),)), activity(P.g, x), 1 / 3)
    viable = [c for c in cands if c.viable]
    assert viable and viable[0].pattern.active == ((0, 1),)
    assert not any(c.viable for c in cands if c.pattern.active == ((1,),))


def test_candidate_order_deterministic():
    P = builtin("l1_kink")
    x = np.array([1.0, 0.0])
    a = [c.pattern.active for c in restart_candidates(P.f, P.g, x, None, activity(P.g, x), 1 / 3)]
    b = [c.pattern.active for c in restart_candidates(P.f, P.g, x, None, activity(P.g, x), 1 / 3)]
    assert a == b


# other built-ins

def test_aff_degenerate_plateau(aff):
    P, path = aff
    plateaus = [s for s in path.segments if s.tag == PLATEAU_TAG]
    assert plateaus
    s = plateaus[0]
    assert np.allclose(s.points[0].x, [0, 0.5], atol=1e-9)
    assert abs(s.points[0].lam - 0.5) < 1e-8 and abs(s.points[-1].lam - 1.0) < 1e-8
    assert path.termination == "LambdaMax"


def test_penalty_main_passes_x2(penalty_main):
    P, path = penalty_main
    V = np.array(path.vertices(0))
    assert np.min(np.linalg.norm(V - P.metadata["points"]["x2"], axis=1)) < 1e-8
    assert path.termination == "GCritical"


def test_penalty_breakpoints_on_constraints(penalty):
    P, path = penalty
    for b in path.breakpoints:
        assert np.min(np.abs(constraint_values(P, b.x))) <= 1e-5


def test_penalty_fold_flips_sense(penalty_main):
    _, path = penalty_main
    folds = [s for s in path.segments if s.end_event == "LambdaFold"]
    assert folds
    i = path.segments.index(folds[0])
    assert path.segments[i + 1].sense == -folds[0].sense


def test_penalty_second_component(penalty):
    P, path = penalty
    comps = {s.component for s in path.segments}
    assert comps == {0, 1}
    bps = [b for b in path.breakpoints if b.component == 1]
    assert bps and np.linalg.norm(bps[0].x - P.metadata["points"]["x4"]) < 1e-3


def test_points_in_r_flag(l1):
    _, path = l1
    assert all(p.in_R for s in path.segments for p in s.points)


def test_stalled_returns_partial():
    P = builtin("penalty_circles")
    cfg = TracerConfig(max_steps=2)
    path = trace(P.f, P.g, cfg, start=P.metadata["start"], convex=False)
    assert path.termination == "Stalled" and path.segments


def test_lambda_max_respected():
    P = builtin("aff_degenerate")
    path = trace(P.f, P.g, TracerConfig(lambda_max=5.0), convex=True)
    assert path.termination == "LambdaMax"
    assert max(p.lam for s in path.segments for p in s.points) <= 5.0 + 1e-9


def test_find_minimizer():
    P = builtin("penalty_circles")
    assert np.allclose(find_minimizer(P.f, np.zeros(2)), [1.0, 1.5])


def test_polish_snaps_to_kink():
    P = builtin("svm_osy")
    xp = polish(P.f, P.g, [-0.6667, -0.6667, 1.6667])
    assert np.allclose(xp, [-2 / 3, -2 / 3, 5 / 3], atol=1e-12)
    assert polish(P.f, P.g, [5.0, 5.0, 5.0]) is None


def test_local_context_patterns():
    P = builtin("l1_kink")
    ctx = local_context(P.f, P.g, [1.0, 0.0])
    assert ctx.pattern_before.active == ((0,),) and ctx.pattern_after.active == ((0, 1),)
