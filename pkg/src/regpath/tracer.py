"""Predictor-corrector continuation of the critical regularization path.

The path is followed stratum by stratum.  A stratum is a per-term set of
branches carrying weight (an activity pattern); it fixes the selection
functions of an h-system

    s_0 = first branch in every term,  s_k = s_0 with one term switched,

so the per-term weights are nu[t, b] = beta_k for the switched branches and
nu[t, first] = (1 - alpha) - sum of the switched ones.  Along a stratum all
nu must stay >= 0 and no excluded branch may catch up with the term max.
When that fails (or alpha / rank / orientation events occur) the point is
classified and the path restarts with the first viable sub-pattern of the
activity there.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from . import hull
from .hsys import (HSystem, KinkClass, AssumptionReport, PointContext, classify_point, eval_dh,
                   rank_diagnostics)
from .numkernel import NoConvergence, RegpathError, StepFailure, newton_solve, rank_nullspace
from .pcmodel import ActivityPattern, PCFunction, SmoothFunction, activity, subdiff_generators

log = logging.getLogger("regpath.tracer")

EVENT_PRIORITY = {
    "AlphaZero": 0,
    "LambdaMax": 1,
    "LambdaZero": 1,
    "BetaZero": 2,
    "NewBranchActive": 3,
    "RankDrop": 4,
    "LambdaFold": 5,
}
TERMINATIONS = ("LambdaMax", "GCritical", "Stalled")
STEEPEST_TAG = "higher-dimensional region traversed along steepest-lambda curve"
PLATEAU_TAG = "plateau: x fixed while lambda varies"
TERMINAL_TAG = "critical point of g (lambda = inf)"


@dataclass
class TracerConfig:
    h0: float = 1e-2
    h_min: float = 1e-8
    h_max: float = 1e-1
    corrector_tol: float = 1e-10
    corrector_iters: int = 25
    event_tol: float = 1e-10
    lambda_max: float = 100.0
    eps_act: float = 1e-8
    trial_step: float = 1e-4
    max_candidates: int = 256
    max_segments: int = 400
    max_steps: int = 20000
    plateau_points: int = 11
    classify: bool = True
    start: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 0 < self.h_min <= self.h0 <= self.h_max:
            raise ValueError("step sizes must satisfy 0 < h_min <= h0 <= h_max")
        for name in ("corrector_tol", "event_tol", "lambda_max", "eps_act", "trial_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.corrector_iters < 1:
            raise ValueError("corrector_iters must be >= 1")

    @property
    def alpha_min(self) -> float:
        return 1.0 / (1.0 + self.lambda_max)


@dataclass
class Event:
    kind: str
    tau: float = 1.0
    detail: dict = field(default_factory=dict)

    def __str__(self):
        if not self.detail:
            return self.kind
        return self.kind + "(" + ",".join(f"{k}={v}" for k, v in self.detail.items()) + ")"


@dataclass
class PathPoint:
    x: np.ndarray
    lam: float
    alpha: float
    beta: np.ndarray
    f: float
    g: float
    in_R: Optional[bool] = None


@dataclass
class PathSegment:
    pattern: ActivityPattern
    index_set: list
    points: list
    start_event: str
    end_event: str
    local_dimension: int = 1
    tag: str = ""
    component: int = 0
    branch: int = 0
    max_residual: float = 0.0
    sense: int = 1

    @property
    def xs(self) -> np.ndarray:
        return np.array([p.x for p in self.points])

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.lam for p in self.points])


@dataclass
class Breakpoint:
    x: np.ndarray
    lam: float
    kink: KinkClass
    report: Optional[AssumptionReport]
    event: str
    component: int = 0

    def __iter__(self):
        return iter((self.x, self.kink, self.report))


@dataclass
class Path:
    segments: list
    breakpoints: list
    termination: str
    components: list = field(default_factory=list)

    def polyline(self, component: Optional[int] = None) -> np.ndarray:
        pts = [p.x for s in self.segments if component is None or s.component == component for p in s.points]
        return np.array(pts)

    def vertices(self, component: int = 0, tol: float = 1e-9) -> list:
        """Distinct segment endpoints in path order."""
        out = []
        for s in self.segments:
            if s.component != component:
                continue
            for p in (s.points[0], s.points[-1]):
                if not out or np.linalg.norm(out[-1] - p.x) > tol:
                    out.append(p.x.copy())
        return out


@dataclass
class Candidate:
    pattern: ActivityPattern
    viable: bool
    reason: str = ""
    z: Optional[np.ndarray] = None
    direction: Optional[np.ndarray] = None
    stratum: Optional["Stratum"] = None


# ---------------------------------------------------------------------------
# strata
# ---------------------------------------------------------------------------

class Stratum:
    """h-system of a weighted activity pattern (star selections)."""

    def __init__(self, f: SmoothFunction, g: PCFunction, pattern: ActivityPattern):
        self.f, self.g, self.pattern = f, g, pattern
        base = pattern.base_choice()
        self.extras = [(t, b) for t in pattern.tied_terms for b in pattern.active[t][1:]]
        sels = [g.selection(base)]
        for t, b in self.extras:
            ch = list(base)
            ch[t] = b
            sels.append(g.selection(ch))
        self.sys = HSystem(f, sels)
        self.n, self.r = self.sys.n, self.sys.r
        self.excluded = [(t, b) for t, term in enumerate(g.terms) for b in range(len(term))
                         if b not in pattern.active[t]]
        self.nu_labels = []
        for t in pattern.tied_terms:
            self.nu_labels.extend((t, b) for b in pattern.active[t])

    @property
    def choices(self) -> list:
        return self.sys.choices

    def split(self, z):
        z = np.asarray(z, dtype=float)
        return z[:self.n], float(z[self.n]), z[self.n + 1:]

    def nu(self, z) -> np.ndarray:
        _, alpha, beta = self.split(z)
        out, k = [], 1
        for t in self.pattern.tied_terms:
            m = len(self.pattern.active[t]) - 1
            ex = beta[k:k + m]
            out.append((1.0 - alpha) - ex.sum())
            out.extend(ex)
            k += m
        return np.array(out)

    def gaps(self, x) -> np.ndarray:
        """Term max over the pattern minus each excluded branch (>0 while excluded)."""
        out = np.empty(len(self.excluded))
        for i, (t, b) in enumerate(self.excluded):
            term = self.g.terms[t]
            out[i] = term.branches[self.pattern.active[t][0]].value(x) - term.branches[b].value(x)
        return out

    def diff_matrix(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g0 = self.sys.selections[0].gradient(x)
        return np.array([s.gradient(x) - g0 for s in self.sys.selections[1:]]).reshape(-1, self.n)

    def independent(self, x) -> bool:
        D = self.diff_matrix(x)
        return D.shape[0] == 0 or rank_nullspace(D, 1e-9).rank == D.shape[0]

    def coefficients(self, x, alpha: float):
        """beta (full star vector) making the first block of h vanish at alpha."""
        x = np.asarray(x, dtype=float)
        gf = self.f.gradient(x)
        g0 = self.sys.selections[0].gradient(x)
        rhs = -alpha * gf - (1.0 - alpha) * g0
        D = self.diff_matrix(x)
        if D.shape[0]:
            ex, *_ = np.linalg.lstsq(D.T, rhs, rcond=None)
            res = float(np.max(np.abs(D.T @ ex - rhs)))
        else:
            ex = np.zeros(0)
            res = float(np.max(np.abs(rhs)))
        beta = np.concatenate([[1.0 - alpha - ex.sum()], ex])
        return beta, res

    def residual(self, z) -> float:
        return float(np.max(np.abs(self.sys.residual(z))))


def _pattern_key(p: ActivityPattern):
    return (p.cardinality, p.active)


def sub_patterns(pattern: ActivityPattern, cap: int = 256) -> list:
    """Per-term nonempty subsets of the active branches, smallest first."""
    per_term = []
    total = 1
    for a in pattern.active:
        subs = [c for k in range(1, len(a) + 1) for c in itertools.combinations(a, k)]
        per_term.append(subs)
        total *= len(subs)
    if total > 20000:
        per_term = [[s for s in subs if len(s) <= 2] for subs in per_term]
    pats = [ActivityPattern(tuple(c), pattern.eps) for c in itertools.product(*per_term)]
    pats.sort(key=_pattern_key)
    return pats[:cap]


# ---------------------------------------------------------------------------
# tangent, corrector, events
# ---------------------------------------------------------------------------

def _direction(st: Stratum, z, sense: int = 1, prev=None, reg: float = 1e-10):
    """Unit kernel vector of Dh moving lambda in ``sense``; (v, kernel_dim) or (None, k)."""
    K = rank_nullspace(st.sys.jacobian(z), 1e-10).nullspace_basis
    k = K.shape[1]
    if k == 0:
        return None, 0
    n = st.n
    if k == 1:
        v = K[:, 0].copy()
        if prev is not None:
            if v @ prev < 0:
                v = -v
        elif -sense * v[n] < 0:
            v = -v
        return v, 1
    ka = K[n, :]
    if np.linalg.norm(ka) < 1e-12:
        return None, k
    Kx = K[:n, :]
    Q = Kx.T @ Kx + reg * np.eye(k)
    c = np.linalg.solve(Q, ka)
    c = -sense * c / (ka @ c)
    v = K @ c
    return v / np.linalg.norm(v), k


def _correct(st: Stratum, zp, v, cfg: TracerConfig):
    def F(z):
        return np.concatenate([st.sys.residual(z), [v @ (z - zp)]])

    def J(z):
        return np.vstack([st.sys.jacobian(z), v])

    return newton_solve(F, J, zp, tol=cfg.corrector_tol, max_iter=cfg.corrector_iters)


def _event_values(st: Stratum, z, cfg: TracerConfig, sense: int) -> dict:
    x, alpha, _ = st.split(z)
    vals = {"AlphaZero": np.array([alpha])}
    if sense > 0:
        vals["LambdaMax"] = np.array([alpha - cfg.alpha_min])
    else:
        vals["LambdaZero"] = np.array([(1.0 - 1e-12) - alpha])
    vals["BetaZero"] = st.nu(z)
    vals["NewBranchActive"] = st.gaps(x)
    return vals


def _event_detail(st: Stratum, kind: str, j: int) -> dict:
    if kind == "BetaZero":
        t, b = st.nu_labels[j]
        return {"term": t, "branch": b}
    if kind == "NewBranchActive":
        t, b = st.excluded[j]
        return {"term": t, "branch": b}
    return {}


def detect_events(st: Stratum, z_a, z_b, cfg: TracerConfig, sense: int = 1,
                  rank_ref: Optional[int] = None, v_b=None, tol: float = 1e-12) -> list:
    """Events triggered between two corrected points: (kind, index, value_a, value_b)."""
    va = _event_values(st, z_a, cfg, sense)
    vb = _event_values(st, z_b, cfg, sense)
    out = []
    for kind in va:
        a, b = va[kind], vb[kind]
        for j in np.flatnonzero(b < -tol):
            out.append((kind, int(j), float(a[j]), float(b[j])))
    if rank_ref is not None:
        rk = rank_nullspace(st.sys.jacobian(z_b), 1e-10).rank
        if rk != rank_ref:
            out.append(("RankDrop", -1, 0.0, float(rk - rank_ref)))
    if v_b is not None and -sense * v_b[st.n] < -1e-9:
        out.append(("LambdaFold", -1, 0.0, float(-sense * v_b[st.n])))
    return out


def _localize(st, z_a, v, h, cfg, sense, evs, rank_ref):
    """Earliest event along the step; returns (tau, kind, index, corrected point)."""

    def C(tau):
        return _correct(st, z_a + tau * h * v, v, cfg)

    best = None
    for kind, j, ea, eb in evs:
        if kind == "RankDrop":
            lo, hi = 0.0, 1.0
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                rk = rank_nullspace(st.sys.jacobian(C(mid)), 1e-10).rank
                lo, hi = (mid, hi) if rk == rank_ref else (lo, mid)
            tau = hi
        elif kind == "LambdaFold":
            def phi(tau):
                zc = C(tau)
                vv, _ = _direction(st, zc, sense, prev=v)
                return -sense * vv[st.n]
            tau = brentq(phi, 0.0, 1.0, xtol=cfg.event_tol) if phi(0.0) > 0 else 0.0
        else:
            def phi(tau, kind=kind, j=j):
                return _event_values(st, C(tau), cfg, sense)[kind][j]
            if ea <= 0.0:
                tau = 0.0
            else:
                try:
                    tau = brentq(phi, 0.0, 1.0, xtol=cfg.event_tol, rtol=4 * np.finfo(float).eps)
                except ValueError:
                    tau = 1.0
        key = (tau, EVENT_PRIORITY[kind])
        if best is None or key[0] < best[0][0] - 1e-12 or (abs(key[0] - best[0][0]) <= 1e-12 and key[1] < best[0][1]):
            best = (key, kind, j)
    (tau, _), kind, j = best
    return tau, kind, j, C(tau)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def find_minimizer(f: SmoothFunction, x0, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Damped Newton (least-squares steps) on grad f."""
    x = np.array(x0, dtype=float)
    for _ in range(max_iter):
        gr = f.gradient(x)
        if np.max(np.abs(gr)) <= tol:
            return x
        step = np.linalg.lstsq(f.hessian(x), -gr, rcond=None)[0]
        slope = gr @ step
        if slope >= 0:
            step, slope = -gr, -(gr @ gr)
        t, fx = 1.0, f.value(x)
        while f.value(x + t * step) > fx + 1e-4 * t * slope and t > 1e-12:
            t *= 0.5
        x = x + t * step
    raise RegpathError("no minimizer of f located from the start point")


def _is_local_min(f, g, x, lam, rng, samples=32, radius=1e-3) -> bool:
    F0 = f.value(x) + lam * g.value(x)
    U = rng.standard_normal((samples, x.size))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    tol = 1e-12 * (1.0 + abs(F0))
    return all(f.value(x + radius * u) + lam * g.value(x + radius * u) >= F0 - tol for u in U)


def _gcritical(alpha: float) -> bool:
    return alpha <= 1e-10


# ---------------------------------------------------------------------------
# restart candidates
# ---------------------------------------------------------------------------

def _trial(st: Stratum, z, v, cfg: TracerConfig, sense: int, h: float):
    zc = _correct(st, z + h * v, v, cfg)
    x, alpha, _ = st.split(zc)
    if sense * (st.split(z)[1] - alpha) <= 0:
        return None, "lambda does not move in the requested sense"
    if np.min(st.nu(zc), initial=0.0) < -1e-9:
        return None, "negative branch weight after trial step"
    if activity(st.g, x, cfg.eps_act).active != st.pattern.active:
        return None, "trial point has a different activity pattern"
    return zc, ""


def evaluate_candidate(f, g, x, alpha: float, pattern: ActivityPattern, cfg: TracerConfig,
                       sense: int = 1) -> Candidate:
    st = Stratum(f, g, pattern)
    if not st.independent(x):
        return Candidate(pattern, False, "dependent branch differences")
    beta, res = st.coefficients(x, alpha)
    scale = 1.0 + np.linalg.norm(f.gradient(x))
    if res > 1e-7 * scale:
        return Candidate(pattern, False, "no multipliers at this lambda")
    z = np.concatenate([x, [alpha], beta])
    if np.min(st.nu(z), initial=0.0) < -1e-9:
        return Candidate(pattern, False, "negative branch weight")
    if np.min(st.gaps(x), initial=0.0) < -1e-9 * scale:
        return Candidate(pattern, False, "excluded branch above the term max")
    v, k = _direction(st, z, sense)
    if v is None:
        return Candidate(pattern, False, "no tangent changing lambda")
    dirs = [v]
    if abs(v[st.n]) < 1e-9:
        dirs.append(-v)
    reason = ""
    for d in dirs:
        for h in (cfg.trial_step, 1e-2 * cfg.trial_step):
            try:
                zc, reason = _trial(st, z, d, cfg, sense, h)
            except (NoConvergence, StepFailure):
                zc, reason = None, "corrector failed in trial step"
            if zc is not None:
                return Candidate(pattern, True, "", z, d, st)
    return Candidate(pattern, False, reason)


def restart_candidates(f, g, x_kink, old_pattern: Optional[ActivityPattern], new_activity: ActivityPattern,
                       alpha: float, cfg: Optional[TracerConfig] = None, sense: int = 1) -> list:
    """Sub-patterns of the activity at a kink, viable ones first, then by
    (cardinality, lexicographic).  ``old_pattern`` is only reported."""
    cfg = cfg or TracerConfig()
    x = np.asarray(x_kink, dtype=float)
    out = [evaluate_candidate(f, g, x, alpha, p, cfg, sense)
           for p in sub_patterns(new_activity, cfg.max_candidates)]
    out.sort(key=lambda c: (not c.viable, _pattern_key(c.pattern)))
    return out


# ---------------------------------------------------------------------------
# the tracer
# ---------------------------------------------------------------------------

class _Tracer:
    def __init__(self, f, g, cfg: TracerConfig, convex: Optional[bool], closed_form: bool = False):
        self.f, self.g, self.cfg = f, g, cfg
        self.convex = convex
        self.closed_form = closed_form
        self.segments, self.breakpoints, self.components = [], [], []
        self.rng = np.random.default_rng(0)

    # -- points and segments ------------------------------------------------

    def _point(self, st_or_sys, z) -> PathPoint:
        n = self.f.dim
        x = np.array(z[:n])
        alpha = float(z[n])
        lam = (1.0 - alpha) / alpha if alpha > 0 else np.inf
        if self.convex is None:
            in_r = _is_local_min(self.f, self.g, x, lam, self.rng) if np.isfinite(lam) else None
        else:
            in_r = bool(self.convex)
        return PathPoint(x, lam, alpha, np.array(z[n + 1:]), self.f.value(x), self.g.value(x), in_r)

    def _segment(self, sys, pattern, zs, start_event, end_event, comp, branch, dim, tag="", sense=1):
        pts = [self._point(sys, z) for z in zs]
        res = max(float(np.max(np.abs(sys.residual(z)))) for z in zs)
        if res > 1e-9:
            log.warning("segment residual %.3g exceeds 1e-9", res)
        seg = PathSegment(pattern, [list(c) for c in sys.choices], pts, start_event, end_event,
                          dim, tag or (STEEPEST_TAG if dim > 1 else ""), comp, branch, res, sense)
        self.segments.append(seg)
        return seg

    # -- following one stratum -----------------------------------------------

    def _follow_stratum(self, st: Stratum, z0, v0, sense: int):
        """Continuation until the first event: (list of z, Event, kernel dim)."""
        cfg = self.cfg
        z, v, h = np.array(z0), np.array(v0), cfg.h0
        zs = [z.copy()]
        clean = 0
        rank_ref, kdim = None, None
        for _ in range(cfg.max_steps):
            zp = z + h * v
            try:
                zc = _correct(st, zp, v, cfg)
                if np.linalg.norm(zc - zp) > 0.5 * h + 1e-12:
                    raise StepFailure("corrector left the predictor neighbourhood")
                vn, k = _direction(st, zc, sense, prev=v if (kdim or 1) == 1 else None)
                if vn is None:
                    raise StepFailure("no tangent")
            except (NoConvergence, StepFailure, np.linalg.LinAlgError):
                h *= 0.5
                clean = 0
                if h < cfg.h_min:
                    return zs, Event("Stalled"), kdim or 1, v
                continue
            evs = detect_events(st, z, zc, cfg, sense, rank_ref, vn if k == 1 else None)
            if evs:
                tau, kind, j, ze = _localize(st, z, v, h, cfg, sense, evs, rank_ref)
                if np.linalg.norm(ze - z) > 1e-14:
                    zs.append(ze)
                ve, _ = _direction(st, ze, sense, prev=v if k == 1 else None)
                return zs, Event(kind, tau, _event_detail(st, kind, j)), kdim or k, (v if ve is None else ve)
            if rank_ref is None:
                rank_ref = rank_nullspace(st.sys.jacobian(zc), 1e-10).rank
                kdim = k
            zs.append(zc)
            z, v = zc, vn
            clean += 1
            if clean >= 3:
                h = min(2.0 * h, cfg.h_max)
                clean = 0
        return zs, Event("Stalled"), kdim or 1, v

    def _closed_form_stratum(self, st: Stratum, z0):
        """Exact affine segment for quadratic f and affine branches."""
        cfg = self.cfg
        n = st.n
        x0, alpha0, beta0 = st.split(z0)
        lam0 = (1.0 - alpha0) / alpha0
        A = self.f.A
        g0 = st.sys.selections[0].gradient(x0)
        D = st.diff_matrix(x0).T  # n x m
        m = D.shape[1]
        K = np.zeros((n + m, n + m))
        K[:n, :n] = A
        K[:n, n:] = D
        K[n:, :n] = D.T
        sol = np.linalg.solve(K, np.concatenate([-g0, np.zeros(m)]))
        dx, dmu = sol[:n], sol[n:]
        mu0 = beta0[1:] / alpha0
        # linear event functions e0 + s * (lam - lam0), positive inside
        cands = [(cfg.lambda_max, "LambdaMax", -1)]
        k = 0
        for t in st.pattern.tied_terms:
            mt = len(st.pattern.active[t]) - 1
            e_first = lam0 - mu0[k:k + mt].sum()
            s_first = 1.0 - dmu[k:k + mt].sum()
            for j, (e0, s) in enumerate([(e_first, s_first)] + list(zip(mu0[k:k + mt], dmu[k:k + mt]))):
                if s < -1e-14:
                    cands.append((lam0 - max(e0, 0.0) / s, "BetaZero", st.nu_labels.index((t, st.pattern.active[t][j]))))
            k += mt
        gaps = st.gaps(x0)
        for i, (t, b) in enumerate(st.excluded):
            term = self.g.terms[t]
            s = (term.branches[st.pattern.active[t][0]].gradient(x0) - term.branches[b].gradient(x0)) @ dx
            if s < -1e-14:
                cands.append((lam0 - max(gaps[i], 0.0) / s, "NewBranchActive", i))
        cands.sort(key=lambda c: (c[0], EVENT_PRIORITY[c[1]]))
        lam1, kind, j = cands[0]
        lam1 = max(lam1, lam0)
        if kind != "LambdaMax" and lam1 > cfg.lambda_max:
            lam1, kind, j = cfg.lambda_max, "LambdaMax", -1

        def z_at(lam):
            a = 1.0 / (1.0 + lam)
            x = x0 + (lam - lam0) * dx
            mu = mu0 + (lam - lam0) * dmu
            ex = a * mu
            return np.concatenate([x, [a], [1.0 - a - ex.sum()], ex])

        zs = [z_at(l) for l in np.linspace(lam0, lam1, 5)]
        zs[0] = np.array(z0)
        kdim = rank_diagnostics(st.sys, hsys_point(zs[-1], n)).kernel_dim
        return zs, Event(kind, 1.0, _event_detail(st, kind, j)), kdim, None

    # -- breakpoints ----------------------------------------------------------

    def _classify(self, x, before, after, neighbours=()):
        if not self.cfg.classify:
            return None, KinkClass(("A5-violation",) if before != after else (), {})
        ctx = PointContext(before, after, "trace", tuple(neighbours))
        try:
            c = classify_point(self.f, self.g, x, ctx, self.cfg.eps_act)
        except RegpathError as e:
            log.warning("classification failed at %s: %s", x, e)
            return None, KinkClass((), {"error": str(e)})
        return c.report, c.kink

    def _at_point(self, x, alpha_e, entry_choices, entry_beta, event: str, comp: int, branch: int,
                  sense: int, came_from: Optional[ActivityPattern]):
        """Plateau / termination / viable continuations at a breakpoint.

        Returns (termination or None, activity, viable candidates, sense).
        """
        cfg, f, g = self.cfg, self.f, self.g
        pat = activity(g, x, cfg.eps_act)
        gens = subdiff_generators(g, x, pat)
        certs = hull.alpha_range(f.gradient(x), gens)
        lam_e = (1.0 - alpha_e) / alpha_e
        alpha_r = alpha_e
        if certs is not None:
            c_hi, c_lo = certs
            if _gcritical(c_lo.alpha):
                z = np.concatenate([x, [alpha_e], entry_beta])
                sys = HSystem(f, [g.selection(c) for c in entry_choices]) if entry_choices else None
                seg = PathSegment(pat, [list(c) for c in entry_choices], [self._point(None, z)], event,
                                  "GCritical", 0, TERMINAL_TAG, comp, branch,
                                  float(np.max(np.abs(sys.residual(z)))) if sys else 0.0, sense)
                self.segments.append(seg)
                return "GCritical", pat, [], sense
            end = c_lo if sense > 0 else c_hi
            if sense * (end.lam - lam_e) > 1e-9 * (1.0 + lam_e):
                lam_end = min(end.lam, cfg.lambda_max)
                self._plateau(x, alpha_e, entry_choices, entry_beta, end, lam_end, pat, event, comp, branch, sense)
                alpha_r = 1.0 / (1.0 + lam_end)
                if end.lam >= cfg.lambda_max:
                    return "LambdaMax", pat, [], sense
        for s in (sense, -sense):
            cands = restart_candidates(f, g, x, None, pat, alpha_r, cfg, sense=s)
            viable = [c for c in cands if c.viable and not (s != sense and came_from is not None
                                                               and c.pattern.active == came_from.active)]
            if viable:
                return None, pat, viable, s
        return None, pat, [], sense

    def _plateau(self, x, alpha_e, entry_choices, entry_beta, c_end, lam_end, pat, event, comp, branch, sense):
        f, g = self.f, self.g
        union = [tuple(c) for c in entry_choices]
        for c in c_end.index_set:
            if tuple(c) not in union:
                union.append(tuple(c))
        b0 = np.zeros(len(union))
        b0[:len(entry_beta)] = entry_beta
        b1 = np.zeros(len(union))
        for c, w in zip(c_end.index_set, c_end.beta):
            b1[union.index(tuple(c))] += w
        a1 = 1.0 / (1.0 + lam_end)
        if abs(c_end.alpha - a1) > 1e-15 and abs(alpha_e - c_end.alpha) > 1e-15:
            # the end certificate is cut at lambda_max: interpolate onto alpha = a1
            s = (a1 - c_end.alpha) / (alpha_e - c_end.alpha)
            b1 = (1 - s) * b1 + s * b0
        sys = HSystem(f, [g.selection(c) for c in union])
        zs = []
        for th in np.linspace(0.0, 1.0, self.cfg.plateau_points):
            zs.append(np.concatenate([x, [(1 - th) * alpha_e + th * a1], (1 - th) * b0 + th * b1]))
        self._segment(sys, pat, zs, event, "PlateauEnd", comp, branch, 0, PLATEAU_TAG, sense)

    # -- component driver --------------------------------------------------------

    def _run(self, x, alpha, entry_choices, entry_beta, before, event, comp, branch,
             first: bool, chosen: Optional[Candidate] = None, sense: int = 1) -> str:
        cfg = self.cfg
        for _ in range(cfg.max_segments):
            if chosen is None:
                term, pat, viable, sense = self._at_point(x, alpha, entry_choices, entry_beta, event,
                                                          comp, branch, sense, before)
                if term is not None or not viable:
                    if not first and term != "GCritical":
                        self._record(x, alpha, before, viable[0].pattern if viable else None, event, comp)
                    return term or "Stalled"
                cand = viable[0]
                if not first:
                    self._record(x, alpha, before, cand.pattern, event, comp)
            else:
                cand, chosen = chosen, None
            st = cand.stratum
            if self.closed_form:
                zs, ev, kdim, v_end = self._closed_form_stratum(st, cand.z)
            else:
                zs, ev, kdim, v_end = self._follow_stratum(st, cand.z, cand.direction, sense)
            self._segment(st.sys, st.pattern, zs, event if not first else "Start", str(ev), comp, branch,
                          kdim, "", sense)
            first = False
            if ev.kind in ("Stalled", "LambdaMax", "AlphaZero", "LambdaZero"):
                return {"AlphaZero": "GCritical", "LambdaZero": "Stalled"}.get(ev.kind, ev.kind)
            x, alpha, entry_beta = st.split(zs[-1])
            x = x.copy()
            entry_choices = st.choices
            before, event = st.pattern, str(ev)
            if ev.kind == "LambdaFold":
                # smooth turning point: same stratum, lambda now moves the other way
                sense = -sense
                chosen = Candidate(st.pattern, True, "", np.array(zs[-1]), v_end, st)
        return "Stalled"

    def _record(self, x, alpha, before, after, event, comp, neighbours=()):
        rep, kink = self._classify(x, before, after, neighbours)
        self.breakpoints.append(Breakpoint(x.copy(), (1 - alpha) / alpha, kink, rep, event, comp))

    def run_main(self, x0) -> str:
        term = self._run(np.asarray(x0, dtype=float), 1.0, [], np.zeros(0), None, "Start", 0, 0, True)
        self.components.append({"id": 0, "seed": None, "terminations": [term]})
        return term

    def run_seed(self, seed, comp: int) -> Optional[str]:
        """Follow a seed towards smaller lambda to its first event, then trace
        every lambda-increasing continuation from there."""
        f, g, cfg = self.f, self.g, self.cfg
        info = {"id": comp, "seed": [float(v) for v in seed], "terminations": ["Stalled"]}
        xs = polish(f, g, seed, eps_act=cfg.eps_act)
        if xs is None:
            log.warning("seed %s could not be placed on the critical set", seed)
            self.components.append(info)
            return None
        pat = activity(g, xs, cfg.eps_act)
        certs = hull.alpha_range(f.gradient(xs), subdiff_generators(g, xs, pat))
        alpha = certs[0].alpha if certs else 0.5
        back = [c for c in restart_candidates(f, g, xs, None, pat, alpha, cfg, sense=-1) if c.viable]
        if not back:
            log.warning("no backward continuation from seed %s", seed)
            self.components.append(info)
            return None
        st = back[0].stratum
        zs, ev, _, v_end = self._follow_stratum(st, back[0].z, back[0].direction, -1)
        xe, ae, _ = st.split(zs[-1])
        xe = xe.copy()
        if ev.kind == "LambdaFold":
            fwd = [Candidate(st.pattern, True, "", np.array(zs[-1]), d, st) for d in (v_end, -v_end)]
        else:
            pat_e = activity(g, xe, cfg.eps_act)
            fwd = [c for c in restart_candidates(f, g, xe, None, pat_e, ae, cfg) if c.viable]
            if fwd:
                self._record(xe, ae, None, fwd[0].pattern, str(ev), comp, [c.pattern for c in fwd])
        terms = [self._run(xe, ae, [], np.zeros(0), None, str(ev), comp, b, False, chosen=cand)
                 for b, cand in enumerate(fwd)]
        info.update({"turning_point": xe.tolist(), "turning_lambda": (1 - ae) / ae,
                     "terminations": terms or ["Stalled"]})
        self.components.append(info)
        return terms[0] if terms else "Stalled"

    def path(self, term: str) -> Path:
        return Path(self.segments, self.breakpoints, term, self.components)


def hsys_point(z, n):
    from .hsys import HPoint
    return HPoint.from_vector(z, n)


def trace(f: SmoothFunction, g: PCFunction, cfg: Optional[TracerConfig] = None, seeds: Sequence = (),
          convex: Optional[bool] = None, start=None) -> Path:
    """Critical regularization path from the minimizer of f, plus seeded components."""
    cfg = cfg or TracerConfig()
    x_start = start if start is not None else (cfg.start if cfg.start is not None else np.zeros(f.dim))
    x0 = find_minimizer(f, x_start)
    tr = _Tracer(f, g, cfg, convex)
    term = tr.run_main(x0)
    for k, s in enumerate(seeds, 1):
        tr.run_seed(np.asarray(s, dtype=float), k)
    return tr.path(term)


def fast_path_pwlinear(f: SmoothFunction, g: PCFunction, cfg: Optional[TracerConfig] = None,
                       convex: Optional[bool] = None, start=None) -> Path:
    """Closed-form segments for quadratic f with positive definite A and affine branches."""
    cfg = cfg or TracerConfig()
    ok = getattr(f, "is_quadratic", False) and g.is_piecewise_linear
    if ok:
        ok = bool(np.linalg.eigvalsh(f.A).min() > 1e-12)
    if not ok:
        log.info("fast path not applicable; falling back to continuation")
        return trace(f, g, cfg, convex=convex, start=start)
    x_start = start if start is not None else (cfg.start if cfg.start is not None else np.zeros(f.dim))
    x0 = find_minimizer(f, x_start)
    tr = _Tracer(f, g, cfg, convex, closed_form=True)
    return tr.path(tr.run_main(x0))


# ---------------------------------------------------------------------------
# point utilities
# ---------------------------------------------------------------------------

def _relaxed_pattern(g, x, relax):
    active = []
    for tv in g.term_values(x):
        m = float(np.max(tv))
        active.append(tuple(int(b) for b in np.flatnonzero(m - tv <= relax * (1.0 + abs(m)))))
    return ActivityPattern(tuple(active))


def polish(f: SmoothFunction, g: PCFunction, x, radius: float = 5e-2, relax: float = 1e-3,
           eps_act: float = 1e-8) -> Optional[np.ndarray]:
    """Move x onto the critical set, preferring kinks (lowest local dimension).

    Among solutions within 1e-3 of the nearest one the lowest local dimension
    wins, so a point rounded near a kink lands on the kink.  Returns None if
    nothing is found within ``radius``.
    """
    x = np.asarray(x, dtype=float)
    rel = _relaxed_pattern(g, x, relax)
    found = []
    for Q in sub_patterns(rel, 512):
        st = Stratum(f, g, Q)
        free = [[b for b in rel.active[t] if b not in Q.active[t]] for t in range(len(rel.active))]
        slots = [(t, b) for t in range(len(free)) for b in free[t]]
        for k in range(len(slots) + 1):
            for T in itertools.combinations(slots, k):
                z = _polish_solve(st, x, T)
                if z is None:
                    continue
                xs, alpha, _ = st.split(z)
                d = float(np.linalg.norm(xs - x))
                if d > radius or not 0 < alpha <= 1 or np.min(st.nu(z), initial=0.0) < -1e-9:
                    continue
                if np.min(st.gaps(xs), initial=0.0) < -1e-9:
                    continue
                J = np.vstack([st.sys.jacobian(z)] + [_tie_row(st, xs, t, b) for t, b in T])
                dim = J.shape[1] - rank_nullspace(J, 1e-9).rank
                found.append((dim, d, xs))
    if not found:
        return None
    dmin = min(d for _, d, _ in found)
    near = [c for c in found if c[1] <= dmin + 1e-3]
    near.sort(key=lambda c: (c[0], c[1]))
    return near[0][2]


def _tie_row(st, x, t, b):
    term = st.g.terms[t]
    row = np.zeros(st.n + 1 + st.r)
    row[:st.n] = term.branches[b].gradient(x) - term.branches[st.pattern.active[t][0]].gradient(x)
    return row


def _polish_solve(st: Stratum, x, T):
    f, n = st.f, st.n
    # initial multipliers from least squares with lambda free
    g0 = st.sys.selections[0].gradient(x)
    D = st.diff_matrix(x)
    M = np.column_stack([g0] + list(D)) if D.shape[0] else g0[:, None]
    sol, *_ = np.linalg.lstsq(M, -f.gradient(x), rcond=None)
    lam = max(float(sol[0]), 1e-6)
    alpha = 1.0 / (1.0 + lam)
    ex = alpha * sol[1:]
    z0 = np.concatenate([x, [alpha], [1.0 - alpha - ex.sum()], ex])

    def F(z):
        xx = z[:n]
        extra = [st.g.terms[t].branches[b].value(xx) - st.g.terms[t].branches[st.pattern.active[t][0]].value(xx)
                 for t, b in T]
        return np.concatenate([st.sys.residual(z), extra])

    def J(z):
        return np.vstack([st.sys.jacobian(z)] + [_tie_row(st, z[:n], t, b) for t, b in T])

    try:
        return newton_solve(F, J, z0, tol=1e-12, max_iter=50)
    except (NoConvergence, StepFailure, np.linalg.LinAlgError):
        return None


def local_context(f: SmoothFunction, g: PCFunction, x, cfg: Optional[TracerConfig] = None) -> PointContext:
    """Patterns of the critical set continuing from x towards smaller and larger lambda."""
    cfg = cfg or TracerConfig()
    x = np.asarray(x, dtype=float)
    pat = activity(g, x, cfg.eps_act)
    certs = hull.alpha_range(f.gradient(x), subdiff_generators(g, x, pat))
    if certs is None:
        return PointContext(source="local")
    c_hi, c_lo = certs
    after, before, neigh = None, None, []
    if not _gcritical(c_lo.alpha):
        fwd = [c for c in restart_candidates(f, g, x, None, pat, c_lo.alpha, cfg, 1) if c.viable]
        neigh += [c.pattern for c in fwd]
        after = fwd[0].pattern if fwd else None
    if c_hi.alpha < 1.0 - 1e-12:
        bwd = [c for c in restart_candidates(f, g, x, None, pat, c_hi.alpha, cfg, -1) if c.viable]
        neigh += [c.pattern for c in bwd]
        before = bwd[0].pattern if bwd else None
    return PointContext(before, after, "local", tuple(neigh))
