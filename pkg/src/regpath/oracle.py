"""Independent checks of traced paths.

* ``grid_scan``: criticality residual |min-norm point of conv({grad f} u dg)|
  on a regular grid (n <= 3).
* ``exact_pwlinear_path``: closed-form active-set path for quadratic f and
  affine branches, written against scipy (linprog / lstsq) so that it shares
  no numerics with the tracer.
* ``compare``: forward distance and backward coverage of a path against a scan.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import null_space
from scipy.ndimage import label
from scipy.optimize import linprog
from scipy.spatial import cKDTree

from .numkernel import RegpathError, min_norm_point
from .pcmodel import PCFunction, SmoothFunction


class Unsupported(RegpathError):
    pass


# ---------------------------------------------------------------------------
# grid scan
# ---------------------------------------------------------------------------

class UnionLMO:
    """Linear minimization over conv({p} u (offset + sum_t conv(G_t)))."""

    def __init__(self, point, offset, groups, shrink: float = 0.0):
        # shrink = a0 restricts to a0 * p + (1 - a0) * conv(...)
        self.p = np.asarray(point, dtype=float)
        self.offset = np.asarray(offset, dtype=float)
        self.groups = [np.atleast_2d(np.asarray(G, dtype=float)) for G in groups]
        self.a0 = shrink
        self.dim = self.p.size

    def _raw(self, d):
        v = self.offset.copy()
        for G in self.groups:
            v = v + G[int(np.argmin(G @ d))]
        return v if v @ d < self.p @ d else self.p.copy()

    def __call__(self, d):
        return self.a0 * self.p + (1.0 - self.a0) * self._raw(d)


@dataclass
class GridScan:
    lower: np.ndarray
    upper: np.ndarray
    resolution: float
    centers: np.ndarray
    residual: np.ndarray
    marked: np.ndarray
    inf_only: np.ndarray
    tol_mark: float
    lam_cap: float

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def marked_centers(self) -> np.ndarray:
        return self.centers[self.marked]

    @property
    def finite_marked(self) -> np.ndarray:
        """Marked cells that stay marked with lambda <= lam_cap."""
        return self.marked & ~self.inf_only

    def clusters(self, which: Optional[np.ndarray] = None) -> int:
        """Number of 8-connected (26 in 3-D) clusters of the given cells."""
        which = self.finite_marked if which is None else which
        shape = [len(np.arange(lo + self.resolution / 2, hi, self.resolution))
                 for lo, hi in zip(self.lower, self.upper)]
        grid = which.reshape(shape)
        _, k = label(grid, structure=np.ones((3,) * self.dim))
        return int(k)

    def to_csv(self, dest):
        """Write 'x1,x2[,x3],residual,marked' to a path or an open text stream."""
        if hasattr(dest, "write"):
            self._write(dest)
        else:
            with open(dest, "w", newline="") as fh:
                self._write(fh)

    def _write(self, fh):
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(self.dim)] + ["residual", "marked"])
        for c, r, m in zip(self.centers, self.residual, self.marked):
            w.writerow([f"{v:.17g}" for v in c] + [f"{r:.17g}", int(m)])


def _segment_min_norm(a, b):
    """Row-wise min-norm point of the segment [a, b]."""
    d = b - a
    dd = np.einsum("ij,ij->i", d, d)
    t = np.where(dd > 0, -np.einsum("ij,ij->i", a, d) / np.where(dd > 0, dd, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    return a + t[:, None] * d


def _values_grads(fn, X):
    vals = np.array([fn.value(x) for x in X])
    grads = np.array([fn.gradient(x) for x in X])
    return vals, grads


def cell_subdifferentials(g: PCFunction, C, half: float):
    """Per cell: gradient of the uniquely active part and, per tied term, the
    gradients of the branches active somewhere in the cell.

    A branch counts as active when its gap to the term max is at most
    |grad gap| * half (first-order bound over a cell of half diagonal ``half``).
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    N, n = C.shape
    base = np.zeros((N, n))
    if g.smooth_part is not None:
        base += np.array([g.smooth_part.gradient(x) for x in C])
    tied_info = [[] for _ in range(N)]
    for term in g.terms:
        vg = [_values_grads(b, C) for b in term.branches]
        V = np.column_stack([v for v, _ in vg])
        G = np.stack([gr for _, gr in vg], axis=1)  # N x k x n
        top = np.argmax(V, axis=1)
        gap = V[np.arange(N), top][:, None] - V
        slope = np.linalg.norm(G - G[np.arange(N), top][:, None, :], axis=2)
        act = gap <= slope * half + 1e-8 * (1 + np.abs(V.max(axis=1)))[:, None]
        single = act.sum(axis=1) == 1
        base[single] += G[single, top[single]]
        for i in np.flatnonzero(~single):
            tied_info[i].append(G[i, act[i]])
    return base, tied_info


def grid_scan(f: SmoothFunction, g: PCFunction, box, resolution: float, tol_mark: Optional[float] = None,
              lam_cap: float = 3.0) -> GridScan:
    """Criticality residual at cell centres.

    A branch counts as active in a cell when its gap to the term max is at
    most |grad gap| times the half diagonal, so kinks crossing a cell are
    seen even if they miss the centre.  Marked cells whose residual exceeds
    ``tol_mark`` once alpha >= 1/(1+lam_cap) is imposed are flagged
    ``inf_only`` (critical only for very large lambda, e.g. critical points of g).
    """
    n = f.dim
    if n > 3:
        raise Unsupported("grid scans are limited to n <= 3")
    box = np.asarray(box, dtype=float).reshape(n, 2)
    if resolution <= 0 or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("invalid box or resolution")
    tol_mark = 2.0 * resolution if tol_mark is None else tol_mark
    axes = [np.arange(lo + resolution / 2, hi, resolution) for lo, hi in box]
    C = np.array(list(itertools.product(*axes)))
    half = 0.5 * resolution * np.sqrt(n)
    N = C.shape[0]

    gf = np.array([f.gradient(x) for x in C])
    base, tied_info = cell_subdifferentials(g, C, half)
    res = np.empty(N)
    untied = np.array([not ti for ti in tied_info])
    res[untied] = np.linalg.norm(_segment_min_norm(gf[untied], base[untied]), axis=1)
    for i in np.flatnonzero(~untied):
        res[i] = np.linalg.norm(min_norm_point(UnionLMO(gf[i], base[i], tied_info[i]), tol=1e-12).point)
    marked = res <= tol_mark

    a0 = 1.0 / (1.0 + lam_cap)
    inf_only = np.zeros(N, dtype=bool)
    for i in np.flatnonzero(marked):
        if untied[i]:
            p = a0 * gf[i] + (1 - a0) * base[i]
            r = np.linalg.norm(_segment_min_norm(p[None, :], gf[i][None, :])[0])
        else:
            r = np.linalg.norm(min_norm_point(UnionLMO(gf[i], base[i], tied_info[i], a0), tol=1e-12).point)
        inf_only[i] = r > tol_mark
    return GridScan(box[:, 0], box[:, 1], resolution, C, res, marked, inf_only, tol_mark, lam_cap)


# ---------------------------------------------------------------------------
# exact piecewise-linear path
# ---------------------------------------------------------------------------

@dataclass
class ExactSegment:
    pattern: tuple
    lam0: float
    lam1: float
    x0: np.ndarray
    dx: np.ndarray  # dx/dlambda (zero on plateaus)
    kind: str = "line"  # line | plateau | terminal
    end_event: str = ""

    @property
    def x1(self) -> np.ndarray:
        if not np.isfinite(self.lam1):
            return self.x0.copy()
        return self.x0 + (self.lam1 - self.lam0) * self.dx

    def at(self, lam: float) -> np.ndarray:
        return self.x0 + (lam - self.lam0) * self.dx


@dataclass
class ExactPath:
    segments: list
    termination: str
    breakpoints: list = field(default_factory=list)

    def polyline(self) -> np.ndarray:
        pts = []
        for s in self.segments:
            pts.append(s.x0)
            pts.append(s.x1)
        return np.array(pts)

    def vertices(self, tol: float = 1e-12) -> list:
        out = []
        for p in self.polyline():
            if not out or np.linalg.norm(out[-1] - p) > tol:
                out.append(p)
        return out


class _PL:
    """Affine data of a piecewise-linear g: per term, rows a_b and offsets c_b."""

    def __init__(self, f, g: PCFunction):
        if not (getattr(f, "is_quadratic", False) and g.is_piecewise_linear):
            raise Unsupported("exact path needs quadratic f and affine branches")
        self.A, self.b = f.A, f.b
        self.n = f.dim
        z = np.zeros(self.n)
        self.s = g.smooth_part.gradient(z) if g.smooth_part is not None else np.zeros(self.n)
        self.rows = [np.array([br.gradient(z) for br in t.branches]) for t in g.terms]
        self.offs = [np.array([br.value(z) for br in t.branches]) for t in g.terms]

    def values(self, t, x):
        return self.rows[t] @ x + self.offs[t]

    def activity(self, x, eps):
        out = []
        for t in range(len(self.rows)):
            v = self.values(t, x)
            m = v.max()
            out.append(tuple(int(b) for b in np.flatnonzero(m - v <= eps * (1 + abs(m)))))
        return tuple(out)


def _lambda_range(pl: _PL, x, pattern):
    """min / max lambda with grad f + lambda s + sum mu = 0, sum_b mu_tb = lambda (linprog)."""
    n = pl.n
    cols = [(t, b) for t, act in enumerate(pattern) for b in act]
    nv = 1 + len(cols)
    A_eq = np.zeros((n + len(pattern), nv))
    A_eq[:n, 0] = pl.s
    for j, (t, b) in enumerate(cols):
        A_eq[:n, 1 + j] = pl.rows[t][b]
        A_eq[n + t, 1 + j] = 1.0
    A_eq[n:, 0] = -1.0
    b_eq = np.concatenate([-(pl.A @ x + pl.b), np.zeros(len(pattern))])
    out = []
    for sense in (1.0, -1.0):
        c = np.zeros(nv)
        c[0] = sense
        r = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * nv, method="highs")
        if r.status == 3:
            out.append(np.inf if sense < 0 else 0.0)
        elif r.status != 0:
            return None
        else:
            out.append(float(r.x[0]))
    return out[0], out[1]


def _stratum_data(pl: _PL, pattern):
    base = [act[0] for act in pattern]
    c0 = pl.s + sum(pl.rows[t][b] for t, b in enumerate(base))
    extras = [(t, b) for t, act in enumerate(pattern) for b in act[1:]]
    D = np.array([pl.rows[t][b] - pl.rows[t][pattern[t][0]] for t, b in extras]).reshape(-1, pl.n).T
    return c0, extras, D


def _direction(pl: _PL, D, c0):
    """Min-norm dx/dlambda (and dmu) with A dx + D dmu = -c0, D' dx = 0."""
    n, m = pl.n, D.shape[1]
    M = np.zeros((n + m, n + m))
    M[:n, :n] = pl.A
    M[:n, n:] = D
    M[n:, :n] = D.T
    rhs = np.concatenate([-c0, np.zeros(m)])
    p = np.linalg.lstsq(M, rhs, rcond=None)[0]
    if np.linalg.norm(M @ p - rhs) > 1e-9 * (1 + np.linalg.norm(rhs)):
        return None
    N = null_space(M)
    if N.size:
        c = np.linalg.lstsq(N[:n], -p[:n], rcond=None)[0]
        p = p + N @ c
    return p[:n], p[n:]


def _weights(pattern, extras, mu_ex, lam):
    """Per-term weights (first branch gets lambda minus the rest)."""
    out = {}
    k = 0
    for t, act in enumerate(pattern):
        m = len(act) - 1
        ex = mu_ex[k:k + m]
        out[(t, act[0])] = lam - ex.sum()
        for b, v in zip(act[1:], ex):
            out[(t, b)] = v
        k += m
    return out


def _viable(pl: _PL, x, lam, pattern, full, tol=1e-9):
    c0, extras, D = _stratum_data(pl, pattern)
    m = D.shape[1]
    if m and np.linalg.matrix_rank(D, tol=1e-9) < m:
        return None
    rhs = -(pl.A @ x + pl.b + lam * c0)
    if m:
        mu = np.linalg.lstsq(D, rhs, rcond=None)[0]
        if np.linalg.norm(D @ mu - rhs) > 1e-7 * (1 + np.linalg.norm(rhs)):
            return None
    else:
        if np.linalg.norm(rhs) > 1e-7 * (1 + np.linalg.norm(pl.A @ x + pl.b)):
            return None
        mu = np.zeros(0)
    w = _weights(pattern, extras, mu, lam)
    if min(w.values()) < -tol:
        return None
    d = _direction(pl, D, c0)
    if d is None:
        return None
    dx, dmu = d
    dw = _weights(pattern, extras, dmu, 1.0)
    for key, val in w.items():
        if val <= tol and dw[key] < -tol:
            return None
    for t, act in enumerate(full):
        first = pattern[t][0]
        for b in act:
            if b in pattern[t]:
                continue
            if (pl.rows[t][first] - pl.rows[t][b]) @ dx <= tol:
                return None
    return mu, dx, dmu


def _subsets(full):
    per = [[c for k in range(1, len(a) + 1) for c in itertools.combinations(a, k)] for a in full]
    pats = list(itertools.product(*per))
    pats.sort(key=lambda p: (sum(len(a) for a in p), p))
    return pats


def exact_pwlinear_path(f, g: PCFunction, lambda_max: float = 100.0, start=None, eps: float = 1e-8,
                        max_patterns: int = 10 ** 4) -> ExactPath:
    """Active-set path for quadratic f and piecewise-linear g, from lambda = 0."""
    pl = _PL(f, g)
    if np.linalg.eigvalsh(pl.A).min() < -1e-12:
        raise Unsupported("A must be positive semidefinite")
    x = np.zeros(pl.n) if start is None else np.asarray(start, dtype=float)
    x = x - np.linalg.lstsq(pl.A, pl.A @ x + pl.b, rcond=None)[0]
    lam = 0.0
    segs, bps = [], []
    seen = 0
    while True:
        full = pl.activity(x, eps)
        rng = _lambda_range(pl, x, full)
        if rng is None:
            return ExactPath(segs, "Stalled", bps)
        lo, hi = rng
        if not np.isfinite(hi):
            segs.append(ExactSegment(full, lam, np.inf, x.copy(), np.zeros(pl.n), "terminal", "GCritical"))
            return ExactPath(segs, "GCritical", bps)
        if hi > lam + 1e-9 * (1 + lam):
            top = min(hi, lambda_max)
            segs.append(ExactSegment(full, lam, top, x.copy(), np.zeros(pl.n), "plateau", "PlateauEnd"))
            lam = top
            if hi >= lambda_max:
                return ExactPath(segs, "LambdaMax", bps)
        choice = None
        for p in _subsets(full):
            seen += 1
            if seen > max_patterns:
                raise Unsupported("pattern enumeration limit exceeded")
            v = _viable(pl, x, lam, p, full)
            if v is not None:
                choice = (p, v)
                break
        if choice is None:
            return ExactPath(segs, "Stalled", bps)
        p, (mu, dx, dmu) = choice
        c0, extras, D = _stratum_data(pl, p)
        # ratio tests: weights and gaps to the excluded branches
        w0 = _weights(p, extras, mu, lam)
        dw = _weights(p, extras, dmu, 1.0)
        events = [(lambda_max, "LambdaMax")]
        for key in w0:
            if dw[key] < -1e-14:
                events.append((lam - max(w0[key], 0.0) / dw[key], "BetaZero"))
        for t, term_rows in enumerate(pl.rows):
            first = p[t][0]
            vf = pl.values(t, x)
            for b in range(len(term_rows)):
                if b in p[t]:
                    continue
                s = (term_rows[first] - term_rows[b]) @ dx
                if s < -1e-14:
                    events.append((lam - max(vf[first] - vf[b], 0.0) / s, "NewBranchActive"))
        lam1, kind = min(events, key=lambda e: e[0])
        lam1 = max(lam1, lam)
        segs.append(ExactSegment(p, lam, lam1, x.copy(), dx, "line", kind))
        x = x + (lam1 - lam) * dx
        lam = lam1
        if kind == "LambdaMax":
            return ExactPath(segs, "LambdaMax", bps)
        bps.append((x.copy(), lam))


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------

@dataclass
class ComparisonReport:
    forward: float
    coverage: float
    verdict: str
    considered: int
    covered: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.verdict == "Pass"


def _polyline_points(path) -> list:
    """Polylines (one per segment, in x) of a traced path or an exact path."""
    if hasattr(path, "segments") and path.segments and hasattr(path.segments[0], "points"):
        return [np.array([p.x for p in s.points]) for s in path.segments]
    if hasattr(path, "segments"):
        return [np.array([s.x0, s.x1]) for s in path.segments]
    if isinstance(path, (list, tuple)) and path and np.ndim(path[0]) == 2:
        return [np.asarray(L, dtype=float) for L in path]
    return [np.atleast_2d(np.asarray(path, dtype=float))]


def distance_to_polylines(P, lines) -> np.ndarray:
    """Distance of each row of P to the union of the polylines."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    best = np.full(P.shape[0], np.inf)
    for L in lines:
        if len(L) == 1:
            best = np.minimum(best, np.linalg.norm(P - L[0], axis=1))
            continue
        for a, b in zip(L[:-1], L[1:]):
            d = b - a
            dd = d @ d
            t = np.clip(((P - a) @ d) / dd, 0, 1) if dd > 0 else np.zeros(P.shape[0])
            best = np.minimum(best, np.linalg.norm(P - (a + t[:, None] * d), axis=1))
    return best


def hausdorff(lines_a, lines_b) -> float:
    """Symmetric Hausdorff distance between two unions of polylines (vertex-sampled)."""
    def dense(lines):
        pts = []
        for L in lines:
            L = np.atleast_2d(L)
            pts.append(L[:1])
            for a, b in zip(L[:-1], L[1:]):
                k = max(2, int(np.ceil(np.linalg.norm(b - a) / 1e-3)) + 1)
                pts.append(a + np.linspace(0, 1, k)[1:, None] * (b - a))
        return np.vstack(pts)

    pa, pb = dense(lines_a), dense(lines_b)
    return float(max(distance_to_polylines(pa, lines_b).max(), distance_to_polylines(pb, lines_a).max()))


def compare(path, scan: GridScan, tol: Optional[float] = None) -> ComparisonReport:
    """Forward distance (traced points to marked cells) and backward coverage
    (marked finite-lambda cells near the traced polyline)."""
    tol = 3.0 * scan.resolution if tol is None else tol
    lines = _polyline_points(path)
    pts = np.vstack(lines)
    if pts.shape[1] != scan.dim:
        return ComparisonReport(np.inf, 0.0, "Fail", 0, 0, tol)
    inside = np.all((pts >= scan.lower) & (pts <= scan.upper), axis=1)
    mc = scan.marked_centers
    if mc.size == 0:
        fwd = np.inf if inside.any() else 0.0
    else:
        d, _ = cKDTree(mc).query(pts[inside]) if inside.any() else (np.zeros(0), None)
        fwd = float(d.max()) if d.size else 0.0
    cand = scan.centers[scan.marked & ~scan.inf_only]
    if cand.shape[0]:
        covered = int(np.sum(distance_to_polylines(cand, lines) <= tol))
        cov = covered / cand.shape[0]
    else:
        covered, cov = 0, 1.0
    verdict = "Pass" if fwd <= 2 * scan.resolution and cov >= 0.95 else "Fail"
    return ComparisonReport(fwd, cov, verdict, int(cand.shape[0]), covered, tol)
