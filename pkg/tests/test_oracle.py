import io

import numpy as np
import pytest
from scipy.spatial import cKDTree

from regpath.oracle import (Unsupported, compare, distance_to_polylines, exact_pwlinear_path, grid_scan, hausdorff,
                            _polyline_points)
from regpath.pcmodel import ActivityPattern, MaxTerm, PCFunction, QuadraticFunction, affine
from regpath.problems import builtin
from regpath.tracer import Stratum, trace

L1_PIECES = [np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[1.0, 0.0], [2.0, 1.0]])]


@pytest.fixture(scope="module")
def l1_scan():
    P = builtin("l1_kink")
    return grid_scan(P.f, P.g, [(-0.5, 2.5)] * 2, 0.01, 0.02)


@pytest.fixture(scope="module")
def penalty_scan():
    P = builtin("penalty_circles")
    return grid_scan(P.f, P.g, [(-2, 2)] * 2, 0.01)


def one_dim_problem():
    f = QuadraticFunction([[1.0]], [-1.0], 0.5)
    g = PCFunction(1, [MaxTerm([affine([1.0]), affine([-1.0])])])
    return f, g


# grid scan

def test_l1_pieces_covered_by_marked_cells(l1_scan):
    t = np.linspace(0, 1, 401)[:, None]
    Q = np.vstack([t * [1.0, 0.0], [1.0, 0.0] + t * [1.0, 1.0]])
    d, _ = cKDTree(l1_scan.marked_centers).query(Q)
    assert d.max() <= 0.02


def test_l1_marked_band_width(l1_scan):
    # residual grows like alpha * |P A n| * distance, so the band is a little
    # wider than the marking threshold itself
    d = distance_to_polylines(l1_scan.marked_centers, L1_PIECES)
    assert d.max() <= 0.03
    assert np.mean(d <= 0.02) >= 0.85


@pytest.mark.xfail(strict=True, reason="residual slope below 1 puts some marked centres 0.028 from the pieces")
def test_l1_marked_within_tol_mark(l1_scan):
    d = distance_to_polylines(l1_scan.marked_centers, L1_PIECES)
    assert d.max() <= 0.02


def test_l1_single_cluster(l1_scan):
    assert l1_scan.clusters() == 1


def test_smooth_only_marks_minimizer():
    f = QuadraticFunction(np.diag([1.0, 2.0]), [-0.3, 0.4])
    g = PCFunction(2, [])
    s = grid_scan(f, g, [(-1, 1)] * 2, 0.02)
    xstar = np.array([0.3, -0.2])
    pts = s.centers[s.finite_marked]
    assert len(pts) > 0
    assert np.max(np.linalg.norm(pts - xstar, axis=1)) <= 0.2
    assert s.clusters() == 1
    # with a term-free g every cell is critical for lambda -> inf
    assert s.marked.all()


def test_penalty_two_clusters(penalty_scan):
    assert penalty_scan.clusters() == 2


def test_residual_nonnegative(l1_scan):
    assert np.all(l1_scan.residual >= 0)


def test_scan_deterministic():
    P = builtin("l1_kink")
    a = grid_scan(P.f, P.g, [(0, 2)] * 2, 0.05)
    b = grid_scan(P.f, P.g, [(0, 2)] * 2, 0.05)
    assert np.array_equal(a.residual, b.residual) and np.array_equal(a.marked, b.marked)


@pytest.mark.parametrize("name,box", [("l1_kink", [(-0.5, 2.5)] * 2), ("penalty_circles", [(-2, 2)] * 2)])
def test_resolution_halving(name, box):
    P = builtin(name)
    r = 0.04
    coarse = grid_scan(P.f, P.g, box, r, 0.04)
    fine = grid_scan(P.f, P.g, box, r / 2, 0.04)
    d, _ = cKDTree(fine.marked_centers).query(coarse.marked_centers)
    assert d.max() <= 2 * r


def test_three_dim_scan_runs():
    P = builtin("svm_osy")
    s = grid_scan(P.f, P.g, [(-1.2, 0.2), (-1.2, 0.2), (0, 2.6)], 0.1)
    assert s.dim == 3 and s.marked.any()


def test_scan_rejects_large_dim():
    f = QuadraticFunction(np.eye(4), np.zeros(4))
    with pytest.raises(Unsupported):
        grid_scan(f, PCFunction(4, []), [(-1, 1)] * 4, 0.5)


def test_scan_rejects_bad_box():
    P = builtin("l1_kink")
    with pytest.raises(ValueError):
        grid_scan(P.f, P.g, [(1, 0), (0, 1)], 0.1)


def test_csv_format():
    P = builtin("l1_kink")
    s = grid_scan(P.f, P.g, [(0, 1)] * 2, 0.5)
    buf = io.StringIO()
    s.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "x1,x2,residual,marked"
    assert len(lines) == 5
    row = lines[1].split(",")
    assert float(row[0]) == 0.25 and row[3] in ("0", "1")


# exact path

def test_exact_l1_three_segments():
    P = builtin("l1_kink")
    ex = exact_pwlinear_path(P.f, P.g, start=P.metadata["start"])
    assert len(ex.segments) == 3
    assert [s.kind for s in ex.segments] == ["line", "line", "terminal"]
    V = ex.vertices()
    for v, e in zip(V, [(2, 1), (1, 0), (0, 0)]):
        assert np.max(np.abs(v - e)) <= 1e-12
    assert ex.termination == "GCritical"


def test_exact_svm_visits_x2():
    P = builtin("svm_osy")
    ex = exact_pwlinear_path(P.f, P.g, start=P.metadata["start"])
    x2 = np.array([-35, -65, 137]) / 93
    assert min(np.linalg.norm(x - x2) for x, _ in ex.breakpoints) <= 1e-12
    assert ex.termination == "GCritical"


def test_exact_one_dim():
    f, g = one_dim_problem()
    ex = exact_pwlinear_path(f, g)
    assert len(ex.breakpoints) == 1
    x, lam = ex.breakpoints[0]
    assert abs(x[0]) <= 1e-14 and abs(lam - 1) <= 1e-14
    s = ex.segments[0]
    assert np.allclose(s.x0, [1.0]) and np.allclose(s.dx, [-1.0])
    assert ex.termination == "GCritical"


def test_exact_matches_one_dim_trace():
    f, g = one_dim_problem()
    path = trace(f, g, convex=True)
    assert hausdorff(_polyline_points(path), _polyline_points(exact_pwlinear_path(f, g))) <= 1e-9


@pytest.mark.parametrize("name", ["l1_kink", "svm_osy"])
def test_exact_segments_solve_h(name):
    P = builtin(name)
    ex = exact_pwlinear_path(P.f, P.g, start=P.metadata["start"])
    for s in ex.segments:
        if s.kind != "line" or s.lam1 <= s.lam0:
            continue
        st = Stratum(P.f, P.g, ActivityPattern(s.pattern))
        for lam in np.linspace(s.lam0, s.lam1, 12)[1:-1]:
            x = s.at(lam)
            alpha = 1 / (1 + lam)
            beta, res = st.coefficients(x, alpha)
            assert res <= 1e-10
            assert st.residual(np.concatenate([x, [alpha], beta])) <= 1e-10


def test_exact_rejects_curved_branches():
    P = builtin("aff_degenerate")
    with pytest.raises(Unsupported):
        exact_pwlinear_path(P.f, P.g)


def test_exact_pattern_limit():
    P = builtin("l1_kink")
    with pytest.raises(Unsupported):
        exact_pwlinear_path(P.f, P.g, start=P.metadata["start"], max_patterns=1)


def test_exact_rejects_indefinite():
    f = QuadraticFunction(np.diag([1.0, -1.0]), np.zeros(2))
    with pytest.raises(Unsupported):
        exact_pwlinear_path(f, PCFunction(2, []))


# comparison

def test_compare_l1_passes(l1, l1_scan):
    _, path = l1
    rep = compare(path, l1_scan)
    assert rep.passed and rep.forward <= 0.02 and rep.coverage >= 0.95
    assert rep.forward >= 0 and rep.coverage <= 1


def test_compare_truncated_fails(l1, l1_scan):
    _, path = l1
    lines = [L for L in _polyline_points(path) if len(L) > 1][:1]
    rep = compare(lines, l1_scan)
    assert rep.coverage < 0.95 and rep.verdict == "Fail"


def test_compare_mismatch_fails(aff, l1_scan):
    _, path = aff
    assert compare(path, l1_scan).verdict == "Fail"


def test_compare_dimension_mismatch(svm, l1_scan):
    _, path = svm
    rep = compare(path, l1_scan)
    assert rep.verdict == "Fail" and rep.forward == np.inf


def test_hausdorff_basic():
    a = [np.array([[0.0, 0.0], [1.0, 0.0]])]
    b = [np.array([[0.0, 0.1], [1.0, 0.1]])]
    assert abs(hausdorff(a, b) - 0.1) <= 1e-12
    assert hausdorff(a, a) == 0
