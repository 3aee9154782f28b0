"""The augmented system h, its Jacobian, tangents and the assumption report.

For selection functions g_1..g_r,

    h(x, a, b) = ( a grad f + sum_j b_j grad g_j ,  a + sum b - 1 ,
                   (g_j - g_1)_{j >= 2} )

and tangents of the critical set are kernel vectors of Dh.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import hull
from .numkernel import NoConvergence, RegpathError, StepFailure, newton_solve, rank_nullspace
from .pcmodel import ActivityPattern, PCFunction, SelectionFunction, SmoothFunction, activity, subdiff_generators

HOLDS = "Holds"
VIOLATED = "Violated"
UNDECIDABLE = "Undecidable-at-point"

KINK_LABELS = {
    "A2": "A2-violation",
    "A3": "A3-violation",
    "A4": "A4-violation",
    "A5": "A5-violation",
}


class IsolatedPoint(RegpathError):
    pass


class NotOnPath(RegpathError):
    pass


@dataclass
class HPoint:
    x: np.ndarray
    alpha: float
    beta: np.ndarray

    @classmethod
    def from_vector(cls, z, n: int) -> "HPoint":
        z = np.asarray(z, dtype=float)
        return cls(z[:n].copy(), float(z[n]), z[n + 1:].copy())

    def vector(self) -> np.ndarray:
        return np.concatenate([self.x, [self.alpha], self.beta])

    @property
    def lam(self) -> float:
        return (1.0 - self.alpha) / self.alpha if self.alpha > 0 else np.inf


class HSystem:
    """h and Dh for f and a fixed list of selection functions."""

    def __init__(self, f: SmoothFunction, selections: Sequence[SelectionFunction]):
        if not selections:
            raise ValueError("an h-system needs at least one selection function")
        self.f = f
        self.selections = list(selections)
        self.n = f.dim
        self.r = len(self.selections)

    @property
    def choices(self) -> list:
        return [s.choice for s in self.selections]

    def residual(self, z) -> np.ndarray:
        return eval_h(self, HPoint.from_vector(z, self.n))

    def jacobian(self, z) -> np.ndarray:
        return eval_dh(self, HPoint.from_vector(z, self.n))


def eval_h(sys: HSystem, p: HPoint) -> np.ndarray:
    x = np.asarray(p.x, dtype=float)
    beta = np.asarray(p.beta, dtype=float)
    if x.size != sys.n or beta.size != sys.r:
        raise ValueError("point dimensions do not match the h-system")
    top = p.alpha * sys.f.gradient(x)
    vals = np.empty(sys.r)
    for j, s in enumerate(sys.selections):
        top = top + beta[j] * s.gradient(x)
        vals[j] = s.value(x)
    return np.concatenate([top, [p.alpha + beta.sum() - 1.0], vals[1:] - vals[0]])


def eval_dh(sys: HSystem, p: HPoint) -> np.ndarray:
    n, r = sys.n, sys.r
    x = np.asarray(p.x, dtype=float)
    beta = np.asarray(p.beta, dtype=float)
    grads = np.array([s.gradient(x) for s in sys.selections])
    H = p.alpha * sys.f.hessian(x)
    for j, s in enumerate(sys.selections):
        if beta[j] != 0.0:
            H = H + beta[j] * s.hessian(x)
    D = np.zeros((n + r, n + r + 1))
    D[:n, :n] = H
    D[:n, n] = sys.f.gradient(x)
    D[:n, n + 1:] = grads.T
    D[n, n:] = 1.0
    if r > 1:
        D[n + 1:, :n] = grads[1:] - grads[0]
    return D


def tangent(sys: HSystem, p: HPoint, rel_tol: float = 1e-10) -> list:
    """Orthonormal basis of ker Dh (unit vectors in (x, alpha, beta) space)."""
    K = rank_nullspace(eval_dh(sys, p), rel_tol).nullspace_basis
    if K.shape[1] == 0:
        raise IsolatedPoint("Dh has full column rank: no tangent direction")
    return [K[:, i].copy() for i in range(K.shape[1])]


@dataclass
class RankDiagnostics:
    rank: int
    kernel_dim: int
    W_dim: int
    V2_dim: int

    def __iter__(self):
        return iter((self.rank, self.kernel_dim, self.W_dim, self.V2_dim))


def rank_diagnostics(sys: HSystem, p: HPoint, rel_tol: float = 1e-10) -> RankDiagnostics:
    D = eval_dh(sys, p)
    rr = rank_nullspace(D, rel_tol)
    x = np.asarray(p.x, dtype=float)
    gf = sys.f.gradient(x)
    grads = np.array([s.gradient(x) for s in sys.selections])
    W = grads - gf
    w_dim = rank_nullspace(W, rel_tol).rank if np.any(W) else 0
    diffs = grads[1:] - grads[0]
    d_rank = rank_nullspace(diffs, rel_tol).rank if sys.r > 1 and np.any(diffs) else 0
    return RankDiagnostics(rr.rank, rr.kernel_dim, w_dim, sys.n - d_rank)


# ---------------------------------------------------------------------------
# assumption report
# ---------------------------------------------------------------------------

@dataclass
class AssumptionReport:
    status: dict
    evidence: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.status[key]


@dataclass
class KinkClass:
    labels: tuple
    context: dict = field(default_factory=dict)


@dataclass
class PointContext:
    """Activity patterns of the critical set on either side of a point."""

    pattern_before: Optional[ActivityPattern] = None
    pattern_after: Optional[ActivityPattern] = None
    source: str = "trace"
    neighbours: tuple = ()


@dataclass
class Classification:
    report: AssumptionReport
    kink: KinkClass
    pattern: ActivityPattern

    def __iter__(self):
        return iter((self.report, self.kink))


def _tie_equations(g: PCFunction, pattern: ActivityPattern):
    pairs = [(t, b, pattern.active[t][0]) for t in pattern.tied_terms for b in pattern.active[t][1:]]

    def F(x):
        return np.array([g.terms[t].branches[b].value(x) - g.terms[t].branches[b0].value(x)
                         for t, b, b0 in pairs])

    def J(x):
        return np.array([g.terms[t].branches[b].gradient(x) - g.terms[t].branches[b0].gradient(x)
                         for t, b, b0 in pairs]).reshape(len(pairs), g.dim)

    return pairs, F, J


def tie_manifold_samples(g: PCFunction, x, pattern: ActivityPattern, count: int = 16,
                         radius: float = 1e-4, seed: int = 0) -> list:
    """Points within ``radius`` of x on which every tie of ``pattern`` persists."""
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    pairs, F, J = _tie_equations(g, pattern)
    out = []
    for _ in range(count):
        u = rng.standard_normal(x.size)
        y = x + radius * u / np.linalg.norm(u)
        if pairs:
            try:
                y = newton_solve(F, J, y, tol=1e-13, max_iter=20)
            except (NoConvergence, StepFailure):
                continue
        out.append(y)
    return out


def _affdim_at(g, x, pattern):
    gens = subdiff_generators(g, x, pattern)
    D = gens.differences()
    return hull.rank_nullspace(D, hull.RANK_TOL).rank if D.size else 0


def classify_point(f: SmoothFunction, g: PCFunction, x, context: Optional[PointContext] = None,
                   eps_act: float = 1e-8, samples: int = 16, seed: int = 0) -> Classification:
    """Assumption report (A1..A5) and kink labels at a critical point."""
    x = np.asarray(x, dtype=float)
    pattern = activity(g, x, eps_act)
    gens = subdiff_generators(g, x, pattern)
    gf = f.gradient(x)
    rng_certs = hull.alpha_range(gf, gens)
    if rng_certs is None:
        raise NotOnPath("point is not critical for any lambda")
    c_hi, c_lo = rng_certs
    status, ev = {}, {}
    ev["pattern"] = str(pattern)
    ev["certificates"] = [c_hi, c_lo]
    ev["alpha_range"] = (c_lo.alpha, c_hi.alpha)
    ev["lambda_range"] = (c_hi.lam, c_lo.lam)
    ev["g_critical"] = bool(c_lo.alpha <= 1e-12)

    # A2
    summ = hull.summarize(gf, gens)
    a2 = hull.check_a2(gf, gens)
    status["A2"] = HOLDS if a2.holds else VIOLATED
    ev["d"], ev["r"] = summ.d, summ.r
    ev["a2_residual"] = a2.residual
    if not a2.holds:
        ev["a2_witness"] = a2.witness
        ev["a2_witness_selections"] = a2.choices

    # A3: relative interior over the explicit generator list, then a reduced set
    positive = None
    if gens.count <= 4096:
        t_star = hull.interiority(gf, gens)
        ev["t_star"] = t_star
        if t_star <= hull.INTERIOR_TOL:
            status["A3"] = VIOLATED
        else:
            positive, exhausted = hull.positive_reduced_set(gf, gens, summ.r)
            status["A3"] = HOLDS if positive is not None else (VIOLATED if exhausted else UNDECIDABLE)
    else:
        status["A3"] = UNDECIDABLE
    if positive is not None:
        ev["reduced_certificate"] = positive

    # A4 at the certified point, then at samples on the tie manifold
    cert = positive
    if cert is None and c_hi.alpha > 0:
        try:
            cert = hull.caratheodory_reduce(gf, gens, c_hi)
        except hull.NablaFInAffine:
            cert = None
    pts = tie_manifold_samples(g, x, pattern, samples, seed=seed)
    if cert is not None and len(cert.index_set):
        sys = HSystem(f, [g.selection(c) for c in cert.index_set])
        hp = HPoint(x, cert.alpha, np.asarray(cert.beta, dtype=float))
        diag = rank_diagnostics(sys, hp)
        ranks = [rank_nullspace(eval_dh(sys, HPoint(y, cert.alpha, hp.beta)), 1e-10).rank for y in pts]
        ev["rank"], ev["kernel_dim"] = diag.rank, diag.kernel_dim
        ev["W_dim"], ev["V2_dim"] = diag.W_dim, diag.V2_dim
        ev["sample_ranks"] = ranks
        full = sys.n + sys.r
        if diag.rank == full and all(rk == full for rk in ranks):
            status["A4"] = HOLDS
            ev["A4_case"] = "a (at point and samples)"
        elif all(rk == diag.rank for rk in ranks):
            status["A4"] = UNDECIDABLE
            ev["A4_case"] = "constant rank at samples; global case b not certified"
        else:
            status["A4"] = VIOLATED
            ev["A4_case"] = "rank defect"
    else:
        status["A4"] = UNDECIDABLE

    # A1 (iii): affine dimension of dg stable along the tie manifold
    d0 = _affdim_at(g, x, pattern)
    dims = [_affdim_at(g, y, pattern) for y in pts]
    ev["sample_affdims"] = dims
    status["A1"] = HOLDS if all(d == d0 for d in dims) else VIOLATED

    # A5 needs the patterns of the critical set around x
    if context is None or (context.pattern_before is None and context.pattern_after is None):
        status["A5"] = UNDECIDABLE
    else:
        changed = any(p is not None and p.active != pattern.active
                      for p in (context.pattern_before, context.pattern_after))
        changed = changed or any(p.active != pattern.active for p in context.neighbours)
        status["A5"] = VIOLATED if changed else HOLDS
        ev["context"] = {
            "before": str(context.pattern_before) if context.pattern_before else None,
            "after": str(context.pattern_after) if context.pattern_after else None,
            "source": context.source,
        }

    order = ("A1", "A2", "A3", "A4", "A5")
    report = AssumptionReport({k: status[k] for k in order}, ev)
    labels = tuple(KINK_LABELS[k] for k in ("A2", "A3", "A4", "A5") if status[k] == VIOLATED)
    kctx = dict(ev.get("context", {}))
    kctx["at"] = str(pattern)
    return Classification(report, KinkClass(labels, kctx), pattern)
