"""Built-in problem instances and loaders for user problems.

Problem kinds:

* ``quadratic_pwlinear``: f = 0.5 x'Ax + b'x + c, g a sum of max-terms of
  affine branches.
* ``svm``: f(w, b) = 0.5 |w|^2, g = sum_i max(0, 1 - y_i (w'x_i + b)).
* ``penalty``: quadratic f, g = sum max(c_i, 0) + sum |c_j| for quadratic
  inequality / equality constraints.
* ``builtin:<name>``: one of the catalog entries below.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path as FilePath
from typing import Optional

import numpy as np

from .numkernel import InvalidInput, rank_nullspace
from .pcmodel import MaxTerm, PCFunction, QuadraticFunction, SmoothFunction, affine, zero_function

KINDS = ("quadratic_pwlinear", "svm", "penalty")


class InvalidSpec(InvalidInput):
    pass


@dataclass
class ProblemSpec:
    kind: str
    payload: dict = field(default_factory=dict)
    name: str = ""

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        if not isinstance(d, dict) or "kind" not in d:
            raise InvalidSpec("problem spec needs a 'kind' field")
        payload = {k: v for k, v in d.items() if k not in ("kind", "name")}
        return cls(str(d["kind"]), payload, str(d.get("name", "")))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "name": self.name, **self.payload}


@dataclass
class Problem:
    """Built problem: f, g and reference metadata."""

    f: SmoothFunction
    g: PCFunction
    metadata: dict
    spec: ProblemSpec

    @property
    def name(self) -> str:
        return self.spec.name or self.spec.kind

    @property
    def dim(self) -> int:
        return self.f.dim

    def __iter__(self):
        return iter((self.f, self.g, self.metadata))


def frac_point(*coords) -> np.ndarray:
    return np.array([float(Fraction(c)) for c in coords])


def quadratic_constraint(A, b, c: float = 0.0, name: str = "") -> QuadraticFunction:
    """c(x) = 0.5 x'Ax + b'x + c."""
    return QuadraticFunction(A, b, c, name=name)


# ---------------------------------------------------------------------------
# builders per kind
# ---------------------------------------------------------------------------

def _array(payload, key, ndim, default=None):
    if key not in payload:
        if default is not None:
            return default
        raise InvalidSpec(f"missing field '{key}'")
    try:
        a = np.asarray(payload[key], dtype=float)
    except (TypeError, ValueError) as e:
        raise InvalidSpec(f"field '{key}' is not numeric") from e
    if a.ndim != ndim:
        raise InvalidSpec(f"field '{key}' must be {ndim}-dimensional")
    if not np.all(np.isfinite(a)):
        raise InvalidSpec(f"field '{key}' has non-finite entries")
    return a


def _quadratic(payload, name="f") -> QuadraticFunction:
    A = _array(payload, "A", 2)
    b = _array(payload, "b", 1)
    if A.shape != (b.size, b.size):
        raise InvalidSpec(f"{name}: A must be {b.size}x{b.size}")
    return QuadraticFunction(A, b, float(payload.get("c", 0.0)), name=name)


def _build_quadratic_pwlinear(spec: ProblemSpec):
    p = spec.payload
    f = _quadratic(p)
    n = f.dim
    terms_raw = p.get("branches", p.get("terms"))
    if not isinstance(terms_raw, list) or not terms_raw:
        raise InvalidSpec("quadratic_pwlinear needs a nonempty 'branches' list of terms")
    terms = []
    for t, term in enumerate(terms_raw):
        if not isinstance(term, list) or not term:
            raise InvalidSpec(f"term {t} must be a nonempty list of branches")
        brs = []
        for br in term:
            a = _array(br, "a", 1)
            if a.size != n:
                raise InvalidSpec(f"term {t}: branch gradient has wrong dimension")
            brs.append(affine(a, float(br.get("c", 0.0))))
        terms.append(MaxTerm(brs, name=f"t{t}"))
    smooth = None
    if "smooth" in p:
        a = _array(p["smooth"], "a", 1)
        smooth = affine(a, float(p["smooth"].get("c", 0.0)))
    g = PCFunction(n, terms, smooth_part=smooth, name="g")
    meta = {"convex": bool(np.all(np.linalg.eigvalsh(f.A) >= -1e-12))}
    return f, g, meta


def svm_functions(X, y):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.size or y.size == 0:
        raise InvalidSpec("svm: data rows and labels differ in number")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise InvalidSpec("svm: labels must be -1 or +1")
    l = X.shape[1]
    n = l + 1
    A = np.zeros((n, n))
    A[:l, :l] = np.eye(l)
    f = QuadraticFunction(A, np.zeros(n), 0.0, name="0.5|w|^2")
    zero = zero_function(n)
    terms = []
    for i in range(y.size):
        a = -y[i] * np.concatenate([X[i], [1.0]])
        terms.append(MaxTerm([zero, affine(a, 1.0)], name=f"hinge{i}"))
    g = PCFunction(n, terms, name="hinge")
    return f, g


def _build_svm(spec: ProblemSpec):
    p = spec.payload
    if "csv" in p:
        X, y = load_svm_csv(p["csv"])
    else:
        data = _array(p, "data", 2)
        if data.shape[1] < 2:
            raise InvalidSpec("svm: each data row needs features and a label")
        X, y = data[:, :-1], data[:, -1]
    f, g = svm_functions(X, y)
    meta = {"convex": True, "X": X, "y": y}
    if "start" in p:
        meta["start"] = _array(p, "start", 1)
    return f, g, meta


def penalty_functions(f: SmoothFunction, ineq, eq):
    n = f.dim
    terms = []
    zero = zero_function(n)
    for i, c in enumerate(ineq):
        terms.append(MaxTerm([zero, c], name=f"ineq{i}"))
    for j, c in enumerate(eq):
        neg = QuadraticFunction(-c.A, -c.b, -c.c) if isinstance(c, QuadraticFunction) else SmoothFunction(
            n, lambda x, c=c: -c.value(x), lambda x, c=c: -c.gradient(x), lambda x, c=c: -c.hessian(x))
        terms.append(MaxTerm([c, neg], name=f"eq{j}"))
    if not terms:
        raise InvalidSpec("penalty: at least one constraint is required")
    return PCFunction(n, terms, name="penalty")


def _build_penalty(spec: ProblemSpec):
    p = spec.payload
    f = _quadratic(p["f"] if "f" in p else p)
    cons = p.get("constraints")
    if not isinstance(cons, list) or not cons:
        raise InvalidSpec("penalty needs a nonempty 'constraints' list")
    ineq, eq = [], []
    for k, c in enumerate(cons):
        typ = c.get("type", c.get("kind"))
        if typ not in ("ineq", "eq"):
            raise InvalidSpec(f"constraint {k}: type must be 'ineq' or 'eq'")
        q = _quadratic(c, name=f"c{k}")
        if q.dim != f.dim:
            raise InvalidSpec(f"constraint {k}: dimension differs from f")
        (ineq if typ == "ineq" else eq).append(q)
    g = penalty_functions(f, ineq, eq)
    meta = {"convex": False, "ineq": ineq, "eq": eq}
    return f, g, meta


# ---------------------------------------------------------------------------
# built-in catalog
# ---------------------------------------------------------------------------

SVM_OSY_DATA = [
    ((0.7, 0.3), 1), ((0.5, 0.5), 1), ((2.0, 2.0), -1),
    ((1.0, 3.0), -1), ((0.75, 0.75), 1), ((1.75, 1.75), -1),
]

SVM_OSY_POINTS = {
    "x1": tuple(Fraction(c, 372) for c in (-35, -65, 137)),
    "x2": tuple(Fraction(c, 93) for c in (-35, -65, 137)),
    "x3": tuple(Fraction(c, 3) for c in (-2, -2, 5)),
    "x4": tuple(Fraction(c, 5) for c in (-4, -4, 11)),
}


def _l1_kink():
    f = QuadraticFunction(2 * np.eye(2), [-4.0, -2.0], 5.0, name="|x-(2,1)|^2")
    signs = [(1, 1), (1, -1), (-1, 1), (-1, -1)]
    g = PCFunction(2, [MaxTerm([affine(s) for s in signs], name="l1")], name="l1")
    meta = {
        "convex": True,
        "start": np.array([2.0, 1.0]),
        "minimizer": np.array([2.0, 1.0]),
        "vertices": [np.array([2.0, 1.0]), np.array([1.0, 0.0]), np.array([0.0, 0.0])],
        "vertex_lambdas": [0.0, 2.0, 4.0],
        "points": {"x0": np.array([1.0, 0.0])},
        "expected": {"x0": {"A2": "Holds", "A3": "Violated", "A5": "Violated"}},
        "box": [(-0.5, 2.5), (-0.5, 2.5)],
    }
    return f, g, meta


def _aff_degenerate():
    f = QuadraticFunction(2 * np.eye(2), [0.0, 0.0], 0.0, name="|x|^2")
    g1 = QuadraticFunction(2 * np.eye(2), [0.0, -2.0], 1.0, name="g1")
    g2 = QuadraticFunction(2 * np.eye(2), [0.0, -3.0], 1.5, name="g2")
    g = PCFunction(2, [MaxTerm([g1, g2], name="max")], name="max(g1,g2)")
    meta = {
        "convex": True,
        "start": np.array([0.0, 0.0]),
        "minimizer": np.array([0.0, 0.0]),
        "points": {"x0": frac_point(0, "1/2")},
        "witness": np.array([3.0, -2.0]),
        "alphas": (0.5, 2.0 / 3.0),
        "expected": {"x0": {"A2": "Violated"}},
        "box": [(-1.0, 1.0), (-0.5, 1.5)],
    }
    return f, g, meta


def _svm_osy():
    X = np.array([p for p, _ in SVM_OSY_DATA])
    y = np.array([float(l) for _, l in SVM_OSY_DATA])
    f, g = svm_functions(X, y)
    pts = {k: np.array([float(c) for c in v]) for k, v in SVM_OSY_POINTS.items()}
    meta = {
        "convex": True,
        "X": X,
        "y": y,
        # f has a line of minimizers (w = 0); this start makes the path run through x1
        "start": np.array([0.0, 0.0, 137.0 / 372.0]),
        "minimizer": np.array([0.0, 0.0, 137.0 / 372.0]),
        "points": pts,
        "points_exact": dict(SVM_OSY_POINTS),
        "x1_selection": (1,) * 6,
        "expected": {
            "x2": {"A2": "Holds", "A3": "Violated", "A5": "Violated"},
            "x3": {"A2": "Violated", "A3": "Violated", "A5": "Violated"},
            "x4": {"A2": "Violated", "A3": "Violated", "A5": "Violated"},
        },
    }
    return f, g, meta


def _circle(cx, cy, sign, name):
    # sign * ((x1 - cx)^2 + (x2 - cy)^2 - 1)
    A = sign * 2.0 * np.eye(2)
    b = sign * np.array([-2.0 * cx, -2.0 * cy])
    c = sign * (cx * cx + cy * cy - 1.0)
    return quadratic_constraint(A, b, c, name=name)


def _penalty_circles():
    f = QuadraticFunction([[1.0, -1.0], [-1.0, 2.0]], [0.5, -2.0], 0.0, name="f")
    ineq = [_circle(0.5, 0.0, -1.0, "c1"), _circle(-0.5, 0.0, 1.0, "c2"), _circle(0.0, 0.5, -1.0, "c3")]
    g = penalty_functions(f, ineq, [])
    meta = {
        "convex": False,
        "ineq": ineq,
        "eq": [],
        "start": np.array([1.0, 1.5]),
        "minimizer": np.array([1.0, 1.5]),
        # rounded to four decimals, polished onto the critical set before use
        "points": {
            "x1": np.array([0.1614, 0.9409]),
            "x2": np.array([0.0, np.sqrt(3.0) / 2.0]),
            "x3": np.array([-0.8027, 0.9531]),
            "x4": np.array([0.4631, -0.2691]),
        },
        "points_approximate": ("x1", "x3", "x4"),
        "expected": {
            "x1": {"A2": "Holds", "A3": "Violated"},
            "x2": {"A2": "Violated", "A3": "Holds"},
        },
        # second component of the critical path, located by a grid scan
        "seeds": [np.array([0.5, 0.0])],
        "box": [(-2.0, 2.0), (-2.0, 2.0)],
    }
    return f, g, meta


BUILTINS = {
    "l1_kink": _l1_kink,
    "aff_degenerate": _aff_degenerate,
    "zero_in_aff_g": _aff_degenerate,
    "svm_osy": _svm_osy,
    "penalty_circles": _penalty_circles,
}


def build(spec) -> Problem:
    """Build (f, g, metadata) from a spec, a spec dict or 'builtin:<name>'."""
    if isinstance(spec, str):
        spec = ProblemSpec(spec)
    elif isinstance(spec, dict):
        spec = ProblemSpec.from_dict(spec)
    kind = spec.kind
    if kind.startswith("builtin:"):
        name = kind.split(":", 1)[1]
        if name not in BUILTINS:
            raise InvalidSpec(f"unknown builtin '{name}' (known: {', '.join(sorted(BUILTINS))})")
        f, g, meta = BUILTINS[name]()
        spec = ProblemSpec(kind, spec.payload, spec.name or name)
    elif kind == "quadratic_pwlinear":
        f, g, meta = _build_quadratic_pwlinear(spec)
    elif kind == "svm":
        f, g, meta = _build_svm(spec)
    elif kind == "penalty":
        f, g, meta = _build_penalty(spec)
    else:
        raise InvalidSpec(f"unknown problem kind '{kind}'")
    if "start" in spec.payload:
        meta["start"] = _array(spec.payload, "start", 1)
    if "seeds" in spec.payload:
        meta["seeds"] = [np.asarray(s, dtype=float) for s in spec.payload["seeds"]]
    meta.setdefault("start", np.zeros(f.dim))
    if meta["start"].size != f.dim:
        raise InvalidSpec("start point has the wrong dimension")
    return Problem(f, g, meta, spec)


def builtin(name: str) -> Problem:
    return build(ProblemSpec("builtin:" + name))


def load_spec(path) -> ProblemSpec:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise InvalidSpec(f"{path}: invalid JSON ({e})") from e
    spec = ProblemSpec.from_dict(d)
    if spec.kind == "svm" and "csv" in spec.payload:
        spec.payload["csv"] = str(FilePath(path).parent / spec.payload["csv"])
    if not spec.name:
        spec.name = FilePath(path).stem
    return spec


def load_problem(ref: str) -> Problem:
    """'builtin:<name>' or a path to a JSON spec."""
    if ref.startswith("builtin:"):
        return build(ProblemSpec(ref))
    return build(load_spec(ref))


def load_svm_csv(path):
    """Rows 'x1,...,xl,y' with a header line; y in {-1, 1}."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise InvalidSpec(f"{path}: no data rows")
    header = [h.strip() for h in rows[0]]
    if header[-1] != "y":
        raise InvalidSpec(f"{path}: last column must be 'y'")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as e:
        raise InvalidSpec(f"{path}: non-numeric entry") from e
    if data.shape[1] != len(header):
        raise InvalidSpec(f"{path}: ragged rows")
    return data[:, :-1], data[:, -1]


def licq_check(problem: Problem, x, tol: float = 1e-8) -> bool:
    """Linear independence of the gradients of the active constraints."""
    meta = problem.metadata
    if "ineq" not in meta:
        raise InvalidSpec("licq_check applies to penalty problems only")
    x = np.asarray(x, dtype=float)
    grads = [c.gradient(x) for c in list(meta["ineq"]) + list(meta["eq"]) if abs(c.value(x)) <= tol]
    if not grads:
        return True
    G = np.array(grads)
    return rank_nullspace(G, tol).rank == len(grads)


def constraint_values(problem: Problem, x) -> np.ndarray:
    meta = problem.metadata
    return np.array([c.value(x) for c in list(meta.get("ineq", [])) + list(meta.get("eq", []))])
