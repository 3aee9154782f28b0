"""Dense small-scale numerical kernels.

Rank and nullspace by SVD, a dense-tableau simplex with Bland's rule,
Wolfe's minimum-norm-point method driven by a linear minimization oracle,
and a least-squares Newton iteration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


class RegpathError(Exception):
    """Base class for library errors."""


class InvalidInput(RegpathError, ValueError):
    pass


class NoConvergence(RegpathError):
    """Iteration limit reached; carries the best iterate seen."""

    def __init__(self, message: str, best=None, residual: float = np.inf):
        super().__init__(message)
        self.best = best
        self.residual = residual


class StepFailure(RegpathError):
    """The Newton step system could not be solved."""

    def __init__(self, message: str, residual: float = np.inf):
        super().__init__(message)
        self.residual = residual


# ---------------------------------------------------------------------------
# rank and nullspace
# ---------------------------------------------------------------------------

@dataclass
class RankResult:
    rank: int
    nullspace_basis: np.ndarray  # columns are orthonormal kernel vectors
    singular_values: np.ndarray

    @property
    def kernel_dim(self) -> int:
        return self.nullspace_basis.shape[1]


def rank_nullspace(M, rel_tol: float = 1e-10) -> RankResult:
    """Numerical rank and orthonormal kernel basis of ``M``.

    Singular values above ``rel_tol * sigma_max`` count towards the rank.
    """
    if rel_tol <= 0:
        raise InvalidInput("rel_tol must be positive")
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise InvalidInput("matrix has non-finite entries")
    rows, cols = M.shape
    if rows == 0 or cols == 0:
        return RankResult(0, np.eye(cols), np.zeros(0))
    _, s, vt = np.linalg.svd(M, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = 0 if smax == 0.0 else int(np.sum(s > rel_tol * smax))
    return RankResult(rank, vt[rank:].T.copy(), s)


# ---------------------------------------------------------------------------
# simplex
# ---------------------------------------------------------------------------

@dataclass
class LPProblem:
    """maximize c.x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  x >= lb.

    ``lb`` defaults to zero; ``-inf`` entries make a variable free.
    """

    c: np.ndarray
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    A_ub: Optional[np.ndarray] = None
    b_ub: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None


@dataclass
class LPResult:
    status: str  # "Optimal", "Infeasible" or "Unbounded"
    x: Optional[np.ndarray]
    objective: float
    basis: tuple = ()

    @property
    def optimal(self) -> bool:
        return self.status == "Optimal"


_PIVOT_TOL = 1e-11


def _as_rows(A, b, nvar, name):
    if A is None:
        if b is not None and len(np.atleast_1d(b)):
            raise InvalidInput(f"{name}: rhs given without matrix")
        return np.zeros((0, nvar)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if A.shape[0] == 0:
        return np.zeros((0, nvar)), np.zeros(0)
    if A.shape[1] != nvar or A.shape[0] != b.shape[0]:
        raise InvalidInput(f"{name}: dimension mismatch")
    return A, b


def _bland_pivots(T, basis, ncols, allowed):
    """Run Bland's rule on tableau ``T`` (last row = reduced costs of a
    minimization, last column = rhs). Returns False if unbounded."""
    m = T.shape[0] - 1
    while True:
        cost = T[-1, :ncols]
        enter = -1
        for j in range(ncols):
            if allowed[j] and cost[j] < -1e-11:
                enter = j
                break
        if enter < 0:
            return True
        col = T[:m, enter]
        best_ratio, leave = np.inf, -1
        for i in range(m):
            if col[i] > _PIVOT_TOL:
                ratio = T[i, -1] / col[i]
                if ratio < best_ratio - 1e-14 or (
                    abs(ratio - best_ratio) <= 1e-14 and basis[i] < basis[leave]
                ):
                    best_ratio, leave = ratio, i
        if leave < 0:
            return False
        _pivot(T, leave, enter)
        basis[leave] = enter


def _pivot(T, i, j):
    T[i] /= T[i, j]
    for k in range(T.shape[0]):
        if k != i and T[k, j] != 0.0:
            T[k] -= T[k, j] * T[i]


def solve_lp(p: LPProblem) -> LPResult:
    """Two-phase dense simplex with Bland's anti-cycling rule."""
    c = np.atleast_1d(np.asarray(p.c, dtype=float))
    nvar = c.shape[0]
    A_eq, b_eq = _as_rows(p.A_eq, p.b_eq, nvar, "equality")
    A_ub, b_ub = _as_rows(p.A_ub, p.b_ub, nvar, "inequality")
    lb = np.zeros(nvar) if p.lb is None else np.asarray(p.lb, dtype=float).copy()
    if lb.shape != (nvar,):
        raise InvalidInput("lower bounds: dimension mismatch")
    for arr in (c, A_eq, b_eq, A_ub, b_ub):
        if not np.all(np.isfinite(arr)):
            raise InvalidInput("non-finite LP data")

    # substitute x = lb + y (finite bounds) or x = y+ - y- (free)
    free = ~np.isfinite(lb)
    shift = np.where(free, 0.0, lb)
    cols = [np.eye(nvar)[:, j] for j in range(nvar)]
    cols += [-np.eye(nvar)[:, j] for j in np.flatnonzero(free)]
    S = np.array(cols).T  # x = shift + S y
    ny = S.shape[1]

    m_eq, m_ub = A_eq.shape[0], A_ub.shape[0]
    m = m_eq + m_ub
    A = np.zeros((m, ny + m_ub))
    rhs = np.zeros(m)
    if m_eq:
        A[:m_eq, :ny] = A_eq @ S
        rhs[:m_eq] = b_eq - A_eq @ shift
    if m_ub:
        A[m_eq:, :ny] = A_ub @ S
        A[m_eq:, ny:] = np.eye(m_ub)
        rhs[m_eq:] = b_ub - A_ub @ shift
    neg = rhs < 0
    A[neg] *= -1.0
    rhs[neg] *= -1.0
    nstd = ny + m_ub
    cstd = np.concatenate([S.T @ c, np.zeros(m_ub)])

    # phase 1: artificial variable per row
    ncols = nstd + m
    T = np.zeros((m + 1, ncols + 1))
    T[:m, :nstd] = A
    T[:m, nstd:ncols] = np.eye(m)
    T[:m, -1] = rhs
    T[-1, :nstd] = -A.sum(axis=0)
    T[-1, -1] = -rhs.sum()
    basis = list(range(nstd, ncols))
    allowed = np.ones(ncols, dtype=bool)
    _bland_pivots(T, basis, ncols, allowed)
    scale = 1.0 + np.abs(rhs).max(initial=0.0)
    if -T[-1, -1] > 1e-9 * scale:
        return LPResult("Infeasible", None, np.nan)

    # drive artificials out of the basis, dropping redundant rows
    keep = []
    for i in range(m):
        if basis[i] >= nstd:
            row = T[i, :nstd]
            js = np.flatnonzero(np.abs(row) > 1e-9)
            if js.size:
                _pivot(T, i, js[0])
                basis[i] = int(js[0])
                keep.append(i)
        else:
            keep.append(i)
    T = np.vstack([T[keep], T[-1:]])
    basis = [basis[i] for i in keep]
    m2 = len(keep)

    # phase 2: minimize -c over the standard columns only
    T[-1, :] = 0.0
    T[-1, :nstd] = -cstd
    for i, bj in enumerate(basis):
        if T[-1, bj] != 0.0:
            T[-1] -= T[-1, bj] * T[i]
    allowed = np.zeros(ncols, dtype=bool)
    allowed[:nstd] = True
    if not _bland_pivots(T, basis, ncols, allowed):
        return LPResult("Unbounded", None, np.inf)

    # recompute the basic solution from the original data to limit drift
    ystd = np.zeros(nstd)
    B = A[keep][:, basis] if m2 else np.zeros((0, 0))
    if m2:
        xb = np.linalg.lstsq(B, rhs[keep], rcond=None)[0]
        if np.any(xb < -1e-9):
            xb = T[:m2, -1]
        ystd[basis] = np.maximum(xb, 0.0)
    x = shift + S @ ystd[:ny]
    return LPResult("Optimal", x, float(c @ x), tuple(basis))


# ---------------------------------------------------------------------------
# Wolfe minimum-norm point
# ---------------------------------------------------------------------------

class VertexLMO:
    """Linear minimization oracle over the convex hull of explicit vertices."""

    def __init__(self, vertices):
        self.vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
        self.dim = self.vertices.shape[1]

    def __call__(self, d):
        return self.vertices[int(np.argmin(self.vertices @ d))]


class MinkowskiLMO:
    """Oracle over ``offset + sum_k conv(groups[k])`` without enumeration."""

    def __init__(self, offset, groups: Sequence):
        self.offset = np.asarray(offset, dtype=float)
        self.groups = [np.atleast_2d(np.asarray(G, dtype=float)) for G in groups]
        self.dim = self.offset.shape[0]

    def __call__(self, d):
        v = self.offset.copy()
        for G in self.groups:
            v += G[int(np.argmin(G @ d))]
        return v


@dataclass
class MinNormResult:
    point: np.ndarray
    corral: np.ndarray
    coefficients: np.ndarray
    iterations: int = 0

    def __iter__(self):
        return iter((self.point, self.corral, self.coefficients))


def _affine_minimizer(S):
    """Weights w (summing to one) minimizing ||S^T w||."""
    k = S.shape[0]
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = S @ S.T
    K[:k, k] = 1.0
    K[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    w = np.linalg.lstsq(K, rhs, rcond=None)[0][:k]
    return w / w.sum()


def min_norm_point(lmo, max_iter: int = 1000, tol: float = 1e-10, x0=None) -> MinNormResult:
    """Wolfe's algorithm for the point of smallest norm in a polytope.

    ``lmo(d)`` must return a vertex minimizing ``<d, v>``.
    """
    if tol <= 0:
        raise InvalidInput("tol must be positive")
    if x0 is None:
        x0 = lmo(np.zeros(lmo.dim))
    corral = [np.asarray(x0, dtype=float)]
    lam = np.ones(1)
    p = corral[0].copy()
    for it in range(1, max_iter + 1):
        v = np.asarray(lmo(p), dtype=float)
        if p @ (v - p) >= -tol * (1.0 + p @ p):
            return MinNormResult(p, np.array(corral), lam, it)
        if any(np.allclose(v, c, rtol=0.0, atol=1e-14) for c in corral):
            return MinNormResult(p, np.array(corral), lam, it)
        corral.append(v)
        lam = np.append(lam, 0.0)
        added = v
        # minor cycles
        for _ in range(len(corral) + 5):
            S = np.array(corral)
            w = _affine_minimizer(S)
            if np.all(w > 1e-14):
                lam = w
                break
            mask = w <= 1e-14
            denom = lam[mask] - w[mask]
            theta = np.min(np.where(denom > 0, lam[mask] / np.where(denom > 0, denom, 1.0), 1.0))
            theta = min(max(theta, 0.0), 1.0)
            lam = lam + theta * (w - lam)
            keep = lam > 1e-14
            keep[np.argmax(lam)] = True
            corral = [c for c, kp in zip(corral, keep) if kp]
            lam = lam[keep]
            lam = lam / lam.sum()
        if not any(c is added for c in corral):
            # the new vertex was dropped again: no further progress possible
            p = np.array(corral).T @ lam
            return MinNormResult(p, np.array(corral), lam, it)
        p = np.array(corral).T @ lam
    raise NoConvergence("min_norm_point: iteration limit", best=MinNormResult(p, np.array(corral), lam, max_iter),
                        residual=float(np.linalg.norm(p)))


# ---------------------------------------------------------------------------
# Newton
# ---------------------------------------------------------------------------

def newton_solve(F: Callable, J: Callable, x0, tol: float = 1e-10, max_iter: int = 25,
                 history: Optional[list] = None) -> np.ndarray:
    """Newton iteration with least-squares steps (rectangular J allowed).

    Residual norms (sup-norm) are appended to ``history`` when given.
    """
    x = np.array(x0, dtype=float)
    r = np.atleast_1d(np.asarray(F(x), dtype=float))
    best, best_res = x.copy(), np.inf
    for k in range(max_iter + 1):
        res = float(np.max(np.abs(r))) if r.size else 0.0
        if not np.isfinite(res):
            raise StepFailure("non-finite residual", residual=res)
        if history is not None:
            history.append(res)
        if res < best_res:
            best, best_res = x.copy(), res
        if res <= tol:
            return x
        if k == max_iter:
            break
        Jx = np.atleast_2d(np.asarray(J(x), dtype=float))
        if not np.all(np.isfinite(Jx)) or not np.any(Jx):
            raise StepFailure("singular step system", residual=res)
        step = np.linalg.lstsq(Jx, -r, rcond=None)[0]
        if not np.all(np.isfinite(step)) or not np.any(step):
            raise StepFailure("singular step system", residual=res)
        x = x + step
        r = np.atleast_1d(np.asarray(F(x), dtype=float))
    raise NoConvergence("newton_solve: iteration limit", best=best, residual=best_res)
