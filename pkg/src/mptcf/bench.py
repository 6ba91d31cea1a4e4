"""Wall-clock scaling study of the naive and closed-form MPT scorers."""

from __future__ import annotations

import math
import statistics
import time
from typing import Callable, Iterable

import numpy as np

from .market_model import MomentEstimates
from .mpt_scoring import replacement_weights, score_naive, score_vectorized

SCORERS = {"naive": score_naive, "vectorized": score_vectorized}


def random_instance(m: int, n: int, seed: int = 0, holdings: int = 10):
    """Sparse user portfolios, a factor-model covariance and log-uniform risk aversions."""
    rng = np.random.default_rng([seed, m, n])
    W = np.zeros((m, n))
    k = min(holdings, n)
    for i in range(m):
        cols = rng.choice(n, size=k, replace=False)
        W[i, cols] = rng.random(k)
    W /= W.sum(axis=1, keepdims=True)
    loadings = rng.normal(0.0, 0.01, (n, 3))
    sigma = loadings @ loadings.T + np.diag(rng.uniform(1e-4, 6e-4, n))
    mu = rng.normal(4e-4, 4e-4, n)
    gammas = np.exp(rng.uniform(math.log(0.1), math.log(1000.0), m))
    return W, replacement_weights(W), gammas, MomentEstimates(mu, sigma)


def time_call(fn: Callable[[], object], repetitions: int = 3, min_time: float = 0.2) -> float:
    """Median over ``repetitions`` of the mean per-call time.

    Each repetition loops the call enough times to last about ``min_time``
    seconds, which keeps sub-millisecond calls above timer noise.
    """
    t0 = time.perf_counter()
    fn()
    first = time.perf_counter() - t0
    number = max(1, math.ceil(min_time / max(first, 1e-9)))
    samples = [first] if number == 1 else []
    while len(samples) < repetitions:
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        samples.append((time.perf_counter() - t0) / number)
    return statistics.median(samples)


def run(
    sizes: Iterable[tuple[int, int]],
    methods: Iterable[str] = ("vectorized",),
    *,
    repetitions: int = 3,
    min_time: float = 0.2,
    seed: int = 0,
) -> list[tuple[int, int, str, float]]:
    """Rows ``(m, n, method, seconds)``."""
    rows = []
    for m, n in sizes:
        W, w_r, gammas, moments = random_instance(m, n, seed)
        for method in methods:
            scorer = SCORERS[method]
            seconds = time_call(lambda: scorer(W, w_r, gammas, moments), repetitions, min_time)
            rows.append((m, n, method, seconds))
    return rows
