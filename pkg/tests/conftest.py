import numpy as np
import pytest

from regpath.problems import builtin
from regpath.tracer import trace


def run_trace(name, seeds=None):
    P = builtin(name)
    md = P.metadata
    seeds = md.get("seeds", ()) if seeds is None else seeds
    return P, trace(P.f, P.g, start=md["start"], seeds=seeds, convex=md["convex"])


@pytest.fixture(scope="session")
def l1():
    return run_trace("l1_kink")


@pytest.fixture(scope="session")
def svm():
    return run_trace("svm_osy")


@pytest.fixture(scope="session")
def aff():
    return run_trace("aff_degenerate")


@pytest.fixture(scope="session")
def penalty():
    return run_trace("penalty_circles")


@pytest.fixture(scope="session")
def penalty_main():
    return run_trace("penalty_circles", seeds=())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
