import math
import sys

import numpy as np
import pytest

from mptcf.market_model import MomentEstimates


def random_psd(rng: np.random.Generator, n: int, rank: int | None = None) -> np.ndarray:
    rank = n if rank is None else rank
    A = rng.normal(0.0, 0.1, (n, rank))
    return A @ A.T + 1e-4 * np.eye(n)


def random_moments(rng: np.random.Generator, n: int) -> MomentEstimates:
    return MomentEstimates(rng.normal(0.01, 0.05, n), random_psd(rng, n))


def random_portfolios(rng: np.random.Generator, m: int, n: int, density: float = 0.3) -> np.ndarray:
    W = rng.random((m, n)) * (rng.random((m, n)) < density)
    W[W.sum(axis=1) == 0, rng.integers(n)] = 1.0
    return W / W.sum(axis=1, keepdims=True)


def log_uniform(rng: np.random.Generator, lo: float, hi: float, size=None):
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size))


@pytest.fixture
def two_asset():
    """mu = (0.1, 0.2), sigma = diag(0.01, 0.04)."""
    return MomentEstimates([0.1, 0.2], np.diag([0.01, 0.04]), ["A", "B"])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
