"""Affine geometry of {grad f} and the subdifferential of g.

Affine dimension, the A2 membership test, KKT certificates from small LPs,
relative-interior (interiority) tests and Caratheodory reduction.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .numkernel import InvalidInput, LPProblem, RegpathError, rank_nullspace, solve_lp
from .pcmodel import SubdiffGenerators

CRIT_TOL = 1e-7
INTERIOR_TOL = 1e-7
AFFINE_TOL = 1e-8
RANK_TOL = 1e-10


class NotCritical(RegpathError):
    pass


class NablaFInAffine(RegpathError):
    pass


def affine_dimension(vectors, rel_tol: float = RANK_TOL) -> int:
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    if V.shape[0] == 0:
        raise InvalidInput("affine_dimension of an empty list")
    if V.shape[0] == 1:
        return 0
    D = V[1:] - V[0]
    if not np.any(D):
        return 0
    # differences below the scale of the vectors themselves count as zero
    scale = max(np.abs(V).max(), 1e-300)
    s = np.linalg.svd(D, compute_uv=False)
    return int(np.sum(s > rel_tol * max(s[0], scale)))


@dataclass
class HullSummary:
    d: int
    r: int
    a2_holds: bool
    a2_residual: float


@dataclass
class A2Check:
    holds: bool
    residual: float
    witness: Optional[np.ndarray]
    choices: list  # selection functions the witness coefficients refer to

    def __iter__(self):
        return iter((self.holds, self.residual, self.witness))


@dataclass
class KKTCertificate:
    """alpha*grad f + sum beta_j grad g_{i_j} = 0 with alpha + sum beta = 1."""

    alpha: float
    beta: np.ndarray
    index_set: list
    lam: float
    t_star: float = 0.0
    residual: float = 0.0
    term_weights: dict = field(default_factory=dict)

    @property
    def coefficients(self) -> np.ndarray:
        return np.concatenate([[self.alpha], self.beta])


def _lam(alpha: float) -> float:
    return (1.0 - alpha) / alpha if alpha > 0 else np.inf


def _star_choices(gens: SubdiffGenerators) -> list:
    base = list(gens.pattern.base_choice())
    out = [tuple(base)]
    for t, branches, _ in gens.tied:
        for b in branches[1:]:
            ch = list(base)
            ch[t] = b
            out.append(tuple(ch))
    return out


def summarize(grad_f, gens: SubdiffGenerators) -> HullSummary:
    grad_f = np.asarray(grad_f, dtype=float)
    D = gens.differences()
    d = rank_nullspace(D, RANK_TOL).rank if D.size else 0
    a2 = check_a2(grad_f, gens)
    return HullSummary(d, d + 1 if a2.holds else d, a2.holds, a2.residual)


def hull_dims(grad_f, gens: SubdiffGenerators) -> tuple:
    """(d, r): affine dimensions of dg and of {grad f} u dg."""
    s = summarize(grad_f, gens)
    return s.d, s.r


def check_a2(grad_f, gens: SubdiffGenerators) -> A2Check:
    """Is grad f outside aff(dg)?  Witness = affine coefficients over the
    star selections (base choice, then one switched branch per column)."""
    grad_f = np.asarray(grad_f, dtype=float)
    D = gens.differences()
    v = grad_f - gens.anchor()
    if D.size:
        w, *_ = np.linalg.lstsq(D.T, v, rcond=None)
        res = float(np.linalg.norm(D.T @ w - v))
    else:
        w = np.zeros(0)
        res = float(np.linalg.norm(v))
    holds = res > AFFINE_TOL * (1.0 + np.linalg.norm(grad_f))
    witness = None if holds else np.concatenate([[1.0 - w.sum()], w])
    return A2Check(bool(holds), res, witness, _star_choices(gens))


# ---------------------------------------------------------------------------
# KKT linear programs
# ---------------------------------------------------------------------------

def _kkt_columns(grad_f, gens: SubdiffGenerators):
    """Columns of the vanishing-combination system in variables (s, nu)."""
    grad_f = np.asarray(grad_f, dtype=float)
    cols = [grad_f - gens.base]
    groups = []
    k = 1
    for t, branches, G in gens.tied:
        cols.extend(G)
        groups.append(list(range(k, k + len(branches))))
        k += len(branches)
    M = np.array(cols).T.reshape(gens.dim, k)
    return M, -gens.base, groups


def _kkt_lp(grad_f, gens: SubdiffGenerators, sense: Optional[float], e_bound: Optional[float]):
    """Solve over (s, nu): sum_b nu_tb = 1 - s, |M(s,nu) - rhs|_inf <= e.

    With ``e_bound`` None the residual e is minimized; otherwise it is fixed
    and ``sense`` * s is maximized.  Returns (x, e) or None if infeasible.
    """
    M, rhs, groups = _kkt_columns(grad_f, gens)
    n, k = M.shape
    use_e = e_bound is None
    nv = k + (1 if use_e else 0)
    A_eq = np.zeros((len(groups), nv))
    for i, grp in enumerate(groups):
        A_eq[i, 0] = 1.0
        A_eq[i, grp] = 1.0
    b_eq = np.ones(len(groups))
    A_ub = np.zeros((2 * n + 1, nv))
    b_ub = np.zeros(2 * n + 1)
    A_ub[:n, :k] = M
    A_ub[n:2 * n, :k] = -M
    b_ub[:n] = rhs
    b_ub[n:2 * n] = -rhs
    if use_e:
        A_ub[:2 * n, k] = -1.0
    else:
        b_ub[:2 * n] += e_bound
    A_ub[2 * n, 0] = 1.0
    b_ub[2 * n] = 1.0
    c = np.zeros(nv)
    if use_e:
        c[k] = -1.0
    else:
        c[0] = sense
    res = solve_lp(LPProblem(c, A_eq if len(groups) else None, b_eq if len(groups) else None, A_ub, b_ub))
    if not res.optimal:
        return None
    x = res.x
    e = float(x[k]) if use_e else float(np.max(np.abs(M @ x[:k] - rhs)))
    return x[:k], e, groups


def _staircase(gens: SubdiffGenerators, s: float, nu: np.ndarray, groups):
    """Write per-term weights as a short convex combination of selections."""
    base_choice = list(gens.pattern.base_choice())
    total = 1.0 - s
    if total <= 0:
        return [], np.zeros(0)
    if not gens.tied:
        return [tuple(base_choice)], np.array([total])
    dists = []
    for (t, branches, _), grp in zip(gens.tied, groups):
        q = np.maximum(nu[np.array(grp) - 0], 0.0)
        q = q / q.sum() if q.sum() > 0 else np.full(len(q), 1.0 / len(q))
        dists.append(q)
    ptr = [0] * len(dists)
    rem = [d.copy() for d in dists]
    left = 1.0
    choices, weights = [], []
    while left > 1e-15:
        m = min(rem[i][ptr[i]] for i in range(len(dists)))
        m = min(m, left)
        ch = list(base_choice)
        for i, (t, branches, _) in enumerate(gens.tied):
            ch[t] = branches[ptr[i]]
        if m > 0:
            choices.append(tuple(ch))
            weights.append(m)
        left -= m
        advanced = False
        for i in range(len(dists)):
            rem[i][ptr[i]] -= m
            if rem[i][ptr[i]] <= 1e-15 and ptr[i] < len(rem[i]) - 1:
                ptr[i] += 1
                advanced = True
        if not advanced and left > 1e-15:
            break
    w = np.array(weights)
    return choices, total * w / w.sum()


def _selection_gradient(gens: SubdiffGenerators, choice) -> np.ndarray:
    v = gens.base.copy()
    for t, branches, G in gens.tied:
        v = v + G[branches.index(choice[t])]
    return v


def _certificate(grad_f, gens, x, groups, reduce: bool = True) -> KKTCertificate:
    s = float(np.clip(x[0], 0.0, 1.0))
    choices, w = _staircase(gens, s, x, groups)
    tw = {}
    for (t, branches, _), grp in zip(gens.tied, groups):
        for b, j in zip(branches, grp):
            tw[(t, b)] = float(max(x[j], 0.0))
    cert = KKTCertificate(s, w, choices, _lam(s), term_weights=tw)
    _finish(grad_f, gens, cert)
    if reduce and s > 0 and len(choices) > 0:
        cert = caratheodory_reduce(grad_f, gens, cert)
        cert.term_weights = tw
    return cert


def _finish(grad_f, gens, cert):
    G = np.array([_selection_gradient(gens, c) for c in cert.index_set]).reshape(-1, gens.dim)
    v = cert.alpha * np.asarray(grad_f, dtype=float) + (cert.beta @ G if len(cert.beta) else 0.0)
    cert.residual = float(np.linalg.norm(v))
    cert.t_star = float(np.min(cert.coefficients)) if cert.coefficients.size else 0.0


def min_residual(grad_f, gens: SubdiffGenerators) -> float:
    sol = _kkt_lp(grad_f, gens, None, None)
    return np.inf if sol is None else sol[1]


def criticality(grad_f, gens: SubdiffGenerators, reduce: bool = True):
    """Decide 0 in conv({grad f} u dg); certificate with the largest alpha."""
    grad_f = np.asarray(grad_f, dtype=float)
    scale = 1.0 + np.linalg.norm(grad_f)
    sol = _kkt_lp(grad_f, gens, None, None)
    if sol is None or sol[1] > CRIT_TOL * scale:
        return False, None
    bound = sol[1] + 1e-12 * scale
    sol2 = _kkt_lp(grad_f, gens, 1.0, bound)
    if sol2 is None:
        sol2 = sol
    return True, _certificate(grad_f, gens, sol2[0], sol2[2], reduce)


def alpha_range(grad_f, gens: SubdiffGenerators, reduce: bool = True):
    """Certificates with the largest and the smallest alpha (None if not critical)."""
    grad_f = np.asarray(grad_f, dtype=float)
    scale = 1.0 + np.linalg.norm(grad_f)
    sol = _kkt_lp(grad_f, gens, None, None)
    if sol is None or sol[1] > CRIT_TOL * scale:
        return None
    bound = sol[1] + 1e-12 * scale
    hi = _kkt_lp(grad_f, gens, 1.0, bound) or sol
    lo = _kkt_lp(grad_f, gens, -1.0, bound) or sol
    c_hi = _certificate(grad_f, gens, hi[0], hi[2], reduce)
    c_lo = _certificate(grad_f, gens, lo[0], lo[2], reduce and lo[0][0] > 1e-12)
    return c_hi, c_lo


def interiority(grad_f, gens, index_set: Optional[Sequence] = None) -> float:
    """t* = max t with every coefficient >= t in a vanishing convex combination
    of grad f and the listed generators (all explicit selections by default)."""
    grad_f = np.asarray(grad_f, dtype=float)
    if isinstance(gens, SubdiffGenerators):
        if index_set is None:
            _, G = gens.explicit()
        else:
            G = np.array([_selection_gradient(gens, c) for c in index_set])
    else:
        G = np.atleast_2d(np.asarray(gens, dtype=float))
    P = np.vstack([grad_f, G])  # rows are points
    m, n = P.shape
    scale = 1.0 + np.linalg.norm(grad_f)
    # phase A: smallest residual of any convex combination
    A_eq = np.concatenate([np.ones(m), [0.0]])[None, :]
    A_ub = np.zeros((2 * n, m + 1))
    A_ub[:n, :m] = P.T
    A_ub[n:, :m] = -P.T
    A_ub[:, m] = -1.0
    res = solve_lp(LPProblem(np.concatenate([np.zeros(m), [-1.0]]), A_eq, [1.0], A_ub, np.zeros(2 * n)))
    if not res.optimal or res.x[m] > CRIT_TOL * scale:
        raise NotCritical("0 is not in the convex hull of the generators")
    bound = res.x[m] + 1e-12 * scale
    # phase B: maximize the smallest coefficient, t free
    nv = m + 1
    A_eq = np.concatenate([np.ones(m), [0.0]])[None, :]
    A_ub = np.zeros((2 * n + m, nv))
    b_ub = np.zeros(2 * n + m)
    A_ub[:n, :m] = P.T
    A_ub[n:2 * n, :m] = -P.T
    b_ub[:2 * n] = bound
    A_ub[2 * n:, :m] = -np.eye(m)
    A_ub[2 * n:, m] = 1.0
    lb = np.concatenate([np.zeros(m), [-np.inf]])
    c = np.zeros(nv)
    c[m] = 1.0
    res = solve_lp(LPProblem(c, A_eq, [1.0], A_ub, b_ub, lb))
    if not res.optimal:
        raise NotCritical("interiority LP failed")
    return float(res.x[m])


# ---------------------------------------------------------------------------
# Caratheodory reduction
# ---------------------------------------------------------------------------

def _dependence(P: np.ndarray):
    """An affine dependence d (sum d = 0, sum d_i P_i = 0), preferring d_0 = 0."""
    A = np.vstack([P.T, np.ones(P.shape[0])])
    K = rank_nullspace(A, RANK_TOL).nullspace_basis
    if K.shape[1] == 0:
        return None
    if K.shape[1] >= 2:
        d = K[:, 0] * K[0, 1] - K[:, 1] * K[0, 0]
        if np.linalg.norm(d) < 1e-12:
            d = K[:, 0] if abs(K[0, 0]) < abs(K[0, 1]) else K[:, 1]
    else:
        d = K[:, 0]
    d = d / np.max(np.abs(d))
    if abs(d[0]) > 1e-12:
        if d[0] > 0:
            d = -d
    else:
        d[0] = 0.0
        nz = np.flatnonzero(np.abs(d) > 1e-12)
        if nz.size and d[nz[0]] < 0:
            d = -d
    return d


def caratheodory_reduce(grad_f, gens: SubdiffGenerators, cert: KKTCertificate,
                        extend: bool = True) -> KKTCertificate:
    """Shrink the certificate to an affinely independent support keeping grad f.

    With ``extend`` the support is padded with zero-weight selections until it
    has r generators, r = affdim(aff({grad f} u dg)).
    """
    if cert.alpha <= 0:
        raise NablaFInAffine("alpha is zero: grad f cannot be kept in the support")
    grad_f = np.asarray(grad_f, dtype=float)
    choices = list(cert.index_set)
    coef = np.concatenate([[cert.alpha], np.asarray(cert.beta, dtype=float)])
    pts = [grad_f] + [_selection_gradient(gens, c) for c in choices]
    while True:
        keep = [0] + [i for i in range(1, len(coef)) if coef[i] > 1e-15]
        coef = coef[keep]
        pts = [pts[i] for i in keep]
        choices = [choices[i - 1] for i in keep[1:]]
        d = _dependence(np.array(pts))
        if d is None:
            break
        pos = np.flatnonzero(d > 1e-12)
        pos = pos[pos > 0] if d[0] <= 0 else pos
        if pos.size == 0:
            break
        ratios = coef[pos] / d[pos]
        theta = ratios.min()
        hit = pos[np.flatnonzero(ratios <= theta + 1e-15)[0]]
        coef = coef - theta * d
        coef[hit] = 0.0
        coef = np.maximum(coef, 0.0)
        coef[0] = max(coef[0], 1e-300)
    coef = coef / coef.sum()
    if extend:
        _, r = hull_dims(grad_f, gens)
        if len(choices) < r and gens.count <= 4096:
            all_choices, G = gens.explicit()
            for ch, g in zip(all_choices, G):
                if len(choices) >= r:
                    break
                if ch in choices:
                    continue
                if affine_dimension(np.vstack(pts + [g])) == len(pts):
                    pts.append(g)
                    choices.append(ch)
                    coef = np.append(coef, 0.0)
    out = KKTCertificate(float(coef[0]), coef[1:].copy(), choices, _lam(float(coef[0])),
                         term_weights=dict(cert.term_weights))
    _finish(grad_f, gens, out)
    return out


def positive_reduced_set(grad_f, gens: SubdiffGenerators, r: int, limit: int = 200000):
    """Search r selections that with grad f are affinely independent and carry
    strictly positive barycentric coefficients of 0.  Returns (cert, exhausted)."""
    grad_f = np.asarray(grad_f, dtype=float)
    choices, G = gens.explicit()
    # first attempt: reduce a strictly interior combination
    try:
        cert = _interior_certificate(grad_f, gens, choices, G)
    except NotCritical:
        return None, True
    if cert is not None and len(cert.index_set) == r and cert.t_star > INTERIOR_TOL:
        return cert, True
    count = 0
    for sub in itertools.combinations(range(len(choices)), r):
        count += 1
        if count > limit:
            return None, False
        P = np.vstack([grad_f, G[list(sub)]])
        if affine_dimension(P) != r:
            continue
        A = np.vstack([P.T, np.ones(r + 1)])
        rhs = np.zeros(A.shape[0])
        rhs[-1] = 1.0
        lam, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        if np.linalg.norm(A @ lam - rhs) > CRIT_TOL * (1 + np.linalg.norm(grad_f)):
            continue
        if lam.min() > INTERIOR_TOL:
            out = KKTCertificate(float(lam[0]), lam[1:], [choices[i] for i in sub], _lam(float(lam[0])))
            _finish(grad_f, gens, out)
            return out, True
    return None, True


def _interior_certificate(grad_f, gens, choices, G):
    P = np.vstack([grad_f, G])
    m, n = P.shape
    t = interiority(grad_f, G)
    if t <= INTERIOR_TOL:
        return None
    # recover the maximizing combination and reduce it
    scale = 1.0 + np.linalg.norm(grad_f)
    A_eq = np.ones((1, m))
    A_ub = np.vstack([P.T, -P.T, -np.eye(m)])
    b_ub = np.concatenate([np.full(2 * n, 1e-9 * scale), np.full(m, -0.5 * t)])
    res = solve_lp(LPProblem(np.zeros(m), A_eq, [1.0], A_ub, b_ub))
    if not res.optimal:
        return None
    lam = res.x
    cert = KKTCertificate(float(lam[0]), lam[1:], list(choices), _lam(float(lam[0])))
    return caratheodory_reduce(grad_f, gens, cert, extend=False)
