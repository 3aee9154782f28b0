"""Smooth functions and piecewise-smooth regularizers built from max-terms.

A regularizer is ``g = smooth_part + sum_t max_b branch[t][b]``.  Activity,
selection functions and the Clarke subdifferential are computed per term,
so the number of generators never has to be enumerated up front.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .numkernel import InvalidInput, MinkowskiLMO


class SmoothFunction:
    """A C2 function given by value, gradient and Hessian callables."""

    is_quadratic = False
    is_affine = False

    def __init__(self, dim: int, value: Callable, gradient: Callable, hessian: Callable,
                 name: str = ""):
        self.dim = int(dim)
        self._value = value
        self._gradient = gradient
        self._hessian = hessian
        self.name = name

    def value(self, x) -> float:
        return float(self._value(np.asarray(x, dtype=float)))

    def gradient(self, x) -> np.ndarray:
        return np.asarray(self._gradient(np.asarray(x, dtype=float)), dtype=float)

    def hessian(self, x) -> np.ndarray:
        return np.asarray(self._hessian(np.asarray(x, dtype=float)), dtype=float)

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim}{', ' + self.name if self.name else ''})"


class QuadraticFunction(SmoothFunction):
    """f(x) = 0.5 x'Ax + b'x + c with symmetric A."""

    is_quadratic = True

    def __init__(self, A, b, c: float = 0.0, name: str = ""):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        if A.shape != (b.size, b.size):
            raise InvalidInput("quadratic: A and b dimensions differ")
        self.A = 0.5 * (A + A.T)
        self.b = b
        self.c = float(c)
        self.dim = b.size
        self.name = name
        self.is_affine = not np.any(self.A)

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.A @ x + self.b @ x + self.c)

    def gradient(self, x) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float) + self.b

    def hessian(self, x) -> np.ndarray:
        return self.A.copy()

    def scaled(self, s: float) -> "QuadraticFunction":
        return QuadraticFunction(s * self.A, s * self.b, s * self.c, name=self.name)


def affine(a, c: float = 0.0, name: str = "") -> QuadraticFunction:
    a = np.asarray(a, dtype=float).ravel()
    return QuadraticFunction(np.zeros((a.size, a.size)), a, c, name=name)


def zero_function(dim: int) -> QuadraticFunction:
    return affine(np.zeros(dim), 0.0, name="0")


class MaxTerm:
    """max over a list of smooth branches sharing one dimension."""

    def __init__(self, branches: Sequence[SmoothFunction], name: str = ""):
        if not branches:
            raise InvalidInput("a max-term needs at least one branch")
        dims = {b.dim for b in branches}
        if len(dims) != 1:
            raise InvalidInput("branches of a max-term must share their dimension")
        self.branches = list(branches)
        self.dim = dims.pop()
        self.name = name

    def values(self, x) -> np.ndarray:
        return np.array([b.value(x) for b in self.branches])

    def __len__(self):
        return len(self.branches)


class PCFunction:
    """g = smooth_part + sum of max-terms.

    ``essential`` is an optional hook ``(g, x, pattern) -> pattern`` pruning
    active branches that are not essentially active.  Without it every active
    branch is treated as essentially active.
    """

    def __init__(self, dim: int, terms: Sequence[MaxTerm], smooth_part: Optional[SmoothFunction] = None,
                 essential: Optional[Callable] = None, name: str = ""):
        self.dim = int(dim)
        self.terms = list(terms)
        self.smooth_part = smooth_part
        self.essential = essential
        self.name = name
        for t in self.terms:
            if t.dim != self.dim:
                raise InvalidInput("term dimension differs from g")
        if smooth_part is not None and smooth_part.dim != self.dim:
            raise InvalidInput("smooth part dimension differs from g")

    @property
    def shape(self) -> tuple:
        return tuple(len(t) for t in self.terms)

    @property
    def is_piecewise_linear(self) -> bool:
        sp = self.smooth_part is None or self.smooth_part.is_affine
        return sp and all(b.is_affine for t in self.terms for b in t.branches)

    def term_values(self, x) -> list:
        return [t.values(x) for t in self.terms]

    def value(self, x) -> float:
        v = self.smooth_part.value(x) if self.smooth_part is not None else 0.0
        return v + sum(float(np.max(tv)) for tv in self.term_values(x))

    def selection(self, choice) -> "SelectionFunction":
        return SelectionFunction(self, tuple(choice))


@dataclass(frozen=True)
class ActivityPattern:
    """Per-term tuple of active branch indices (sorted)."""

    active: tuple
    eps: float = 1e-8

    @property
    def tied_terms(self) -> tuple:
        return tuple(t for t, a in enumerate(self.active) if len(a) > 1)

    @property
    def cardinality(self) -> int:
        return sum(len(a) for a in self.active)

    def base_choice(self) -> tuple:
        return tuple(a[0] for a in self.active)

    def contains(self, other: "ActivityPattern") -> bool:
        return all(set(b) <= set(a) for a, b in zip(self.active, other.active))

    def __str__(self):
        return "[" + " ".join("{" + ",".join(map(str, a)) + "}" for a in self.active) + "]"


def activity(g: PCFunction, x, eps: float = 1e-8) -> ActivityPattern:
    """Active branches per term: gap to the term max within eps*(1+|max|)."""
    if eps <= 0:
        raise InvalidInput("eps must be positive")
    active = []
    for tv in g.term_values(x):
        if not np.all(np.isfinite(tv)):
            raise InvalidInput("non-finite branch value")
        m = float(np.max(tv))
        active.append(tuple(int(b) for b in np.flatnonzero(m - tv <= eps * (1.0 + abs(m)))))
    pat = ActivityPattern(tuple(active), eps)
    if g.essential is not None:
        pat = g.essential(g, np.asarray(x, dtype=float), pat)
    return pat


class SelectionFunction:
    """One branch per term, summed with the smooth part."""

    def __init__(self, parent: PCFunction, choice: tuple):
        if len(choice) != len(parent.terms):
            raise InvalidInput("choice length differs from number of terms")
        for t, b in zip(parent.terms, choice):
            if not 0 <= b < len(t):
                raise InvalidInput("branch index out of range")
        self.parent = parent
        self.choice = tuple(int(b) for b in choice)
        self.dim = parent.dim

    def _parts(self):
        if self.parent.smooth_part is not None:
            yield self.parent.smooth_part
        for t, b in zip(self.parent.terms, self.choice):
            yield t.branches[b]

    def value(self, x) -> float:
        return float(sum(p.value(x) for p in self._parts()))

    def gradient(self, x) -> np.ndarray:
        out = np.zeros(self.dim)
        for p in self._parts():
            out += p.gradient(x)
        return out

    def hessian(self, x) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        for p in self._parts():
            out += p.hessian(x)
        return 0.5 * (out + out.T)

    def __repr__(self):
        return f"SelectionFunction{self.choice}"


def selection_value_grad_hess(s: SelectionFunction, x):
    return s.value(x), s.gradient(x), s.hessian(x)


@dataclass
class SubdiffGenerators:
    """dg(x) = base + Minkowski sum over tied terms of conv(gradients)."""

    base: np.ndarray
    tied: tuple  # of (term index, branch indices, gradient matrix)
    pattern: ActivityPattern

    @property
    def dim(self) -> int:
        return self.base.size

    @property
    def is_singleton(self) -> bool:
        return not self.tied

    @property
    def count(self) -> int:
        return int(np.prod([len(b) for _, b, _ in self.tied])) if self.tied else 1

    def lmo(self) -> MinkowskiLMO:
        return MinkowskiLMO(self.base, [G for _, _, G in self.tied])

    def anchor(self) -> np.ndarray:
        """Gradient of the base selection (first active branch everywhere)."""
        return self.base + sum((G[0] for _, _, G in self.tied), np.zeros(self.dim))

    def differences(self) -> np.ndarray:
        """Rows G[t][b] - G[t][0] spanning the direction space of aff(dg)."""
        rows = [G[k] - G[0] for _, _, G in self.tied for k in range(1, len(G))]
        return np.array(rows).reshape(-1, self.dim)

    def explicit(self, limit: int = 1 << 16):
        """All selection gradients as (choices, matrix); choice = full branch tuple."""
        if self.count > limit:
            raise InvalidInput(f"{self.count} selection gradients exceed the limit {limit}")
        base_choice = list(self.pattern.base_choice())
        choices, grads = [], []
        ranges = [range(len(b)) for _, b, _ in self.tied]
        for combo in itertools.product(*ranges):
            ch = list(base_choice)
            v = self.base.copy()
            for (t, branches, G), k in zip(self.tied, combo):
                ch[t] = branches[k]
                v = v + G[k]
            choices.append(tuple(ch))
            grads.append(v)
        return choices, np.array(grads).reshape(-1, self.dim)


def subdiff_generators(g: PCFunction, x, pattern: Optional[ActivityPattern] = None) -> SubdiffGenerators:
    x = np.asarray(x, dtype=float)
    if pattern is None:
        pattern = activity(g, x)
    base = g.smooth_part.gradient(x) if g.smooth_part is not None else np.zeros(g.dim)
    tied = []
    for t, (term, act) in enumerate(zip(g.terms, pattern.active)):
        if len(act) == 1:
            base = base + term.branches[act[0]].gradient(x)
        else:
            G = np.array([term.branches[b].gradient(x) for b in act])
            tied.append((t, tuple(act), G))
    return SubdiffGenerators(np.asarray(base, dtype=float), tuple(tied), pattern)


@dataclass
class GradientCheck:
    max_gradient_error: float
    max_hessian_error: float
    max_asymmetry: float


def check_gradients(fn: SmoothFunction, samples, rel_h: float = 1e-5) -> GradientCheck:
    """Compare analytic derivatives with central differences."""
    ge = he = asym = 0.0
    for x in np.atleast_2d(np.asarray(samples, dtype=float)):
        g = fn.gradient(x)
        H = fn.hessian(x)
        asym = max(asym, float(np.max(np.abs(H - H.T))))
        for i in range(x.size):
            h = rel_h * max(1.0, abs(x[i]))
            e = np.zeros(x.size)
            e[i] = h
            fd = (fn.value(x + e) - fn.value(x - e)) / (2 * h)
            ge = max(ge, abs(fd - g[i]))
            fdh = (fn.gradient(x + e) - fn.gradient(x - e)) / (2 * h)
            he = max(he, float(np.max(np.abs(fdh - H[:, i]))))
    return GradientCheck(ge, he, asym)
