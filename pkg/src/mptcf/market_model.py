"""Return histories, exponentially weighted moments and the mean-variance utility."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyHistory, NonFiniteInput

DEFAULT_HALF_LIFE = 63.0
DEFAULT_RIDGE = 1e-8


@dataclass(frozen=True)
class ReturnHistory:
    """Per-period simple returns, one row per date and one column per asset."""

    dates: list[dt.date]
    assets: list[str]
    returns: np.ndarray

    def __post_init__(self):
        returns = np.asarray(self.returns, dtype=float)
        if returns.ndim != 2:
            raise DimensionMismatch("returns must be a T x n matrix")
        if returns.shape != (len(self.dates), len(self.assets)):
            raise DimensionMismatch(
                f"returns shape {returns.shape} does not match "
                f"{len(self.dates)} dates x {len(self.assets)} assets"
            )
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError("dates must be strictly increasing")
        if not np.all(np.isfinite(returns)):
            raise NonFiniteInput("returns contain NaN or infinite values")
        if np.any(returns <= -1.0):
            raise ValueError("a simple return cannot be <= -1")
        object.__setattr__(self, "returns", returns)

    @property
    def n_periods(self) -> int:
        return self.returns.shape[0]

    @property
    def n_assets(self) -> int:
        return self.returns.shape[1]


@dataclass(frozen=True)
class DecayConfig:
    half_life: float = DEFAULT_HALF_LIFE
    ridge_epsilon: float = DEFAULT_RIDGE

    def __post_init__(self):
        if not self.half_life > 0:
            raise ValueError(f"half_life must be positive, got {self.half_life}")
        if not self.ridge_epsilon >= 0:
            raise ValueError(f"ridge_epsilon must be non-negative, got {self.ridge_epsilon}")

    @property
    def decay(self) -> float:
        """Per-period multiplier lambda = 2 ** (-1 / half_life)."""
        return 2.0 ** (-1.0 / self.half_life)


@dataclass(frozen=True)
class MomentEstimates:
    """Expected per-period returns ``mu`` and their covariance ``sigma``."""

    mu: np.ndarray
    sigma: np.ndarray
    assets: list[str] = field(default_factory=list)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        sigma = np.asarray(self.sigma, dtype=float)
        n = mu.shape[0]
        if sigma.shape != (n, n):
            raise DimensionMismatch(f"sigma shape {sigma.shape} does not match mu length {n}")
        assets = list(self.assets) if self.assets else [str(j) for j in range(n)]
        if len(assets) != n:
            raise DimensionMismatch(f"{len(assets)} asset ids for {n} assets")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "assets", assets)

    @property
    def n_assets(self) -> int:
        return self.mu.shape[0]

    def subset(self, index: Sequence[int]) -> "MomentEstimates":
        """Moments restricted to the assets at ``index`` (in that order)."""
        idx = np.asarray(index, dtype=int)
        return MomentEstimates(
            self.mu[idx], self.sigma[np.ix_(idx, idx)], [self.assets[j] for j in idx]
        )


def returns_from_prices(closes: np.ndarray) -> np.ndarray:
    """Simple returns ``close_t / close_{t-1} - 1`` along axis 0."""
    closes = np.asarray(closes, dtype=float)
    return closes[1:] / closes[:-1] - 1.0


def decay_weights(n_periods: int, half_life: float) -> np.ndarray:
    """Normalized exponential weights ordered oldest to newest.

    The newest period has age 0 and weight proportional to 1; a period of age
    ``a`` gets ``lambda ** a`` with ``lambda = 2 ** (-1 / half_life)``.
    """
    lam = 2.0 ** (-1.0 / half_life)
    ages = np.arange(n_periods - 1, -1, -1, dtype=float)
    w = lam**ages
    return w / w.sum()


def compute_moments(history: ReturnHistory, cfg: DecayConfig | None = None) -> MomentEstimates:
    """Exponentially weighted mean and covariance of ``history``.

    The covariance uses the reliability-weight bias correction
    ``1 / (1 - sum(w**2))`` so that equal weights reproduce the usual
    ``ddof=1`` sample covariance. A ridge of ``ridge_epsilon * trace / n`` is
    added to the diagonal.
    """
    cfg = cfg or DecayConfig()
    returns = history.returns
    n_periods, n = returns.shape
    if n_periods < 2:
        raise EmptyHistory(f"need at least 2 return periods, got {n_periods}")
    if not np.all(np.isfinite(returns)):
        raise NonFiniteInput("returns contain NaN or infinite values")

    w = decay_weights(n_periods, cfg.half_life)
    mu = w @ returns
    centered = returns - mu
    sigma = (centered * w[:, None]).T @ centered
    sigma /= 1.0 - np.sum(w * w)
    sigma = 0.5 * (sigma + sigma.T)
    if cfg.ridge_epsilon > 0 and n > 0:
        sigma[np.diag_indices(n)] += cfg.ridge_epsilon * np.trace(sigma) / n
    return MomentEstimates(mu, sigma, list(history.assets))


def utility(w: np.ndarray, gamma: float, m: MomentEstimates) -> float:
    """Mean-variance utility ``mu' w - gamma * w' sigma w``."""
    w = np.asarray(w, dtype=float)
    if w.shape != (m.n_assets,):
        raise DimensionMismatch(f"portfolio of shape {w.shape} for {m.n_assets} assets")
    return float(m.mu @ w - gamma * (w @ m.sigma @ w))


def check_portfolio(w: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    """Validate a long-only, fully invested weight vector and return it as float array."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise DimensionMismatch("portfolio weights must be a vector")
    if np.any(w < 0):
        raise ValueError("portfolio weights must be non-negative")
    if abs(w.sum() - 1.0) > atol:
        raise ValueError(f"portfolio weights sum to {w.sum()!r}, expected 1")
    return w


def portfolio_risk(w: np.ndarray, m: MomentEstimates) -> float:
    return float(np.sqrt(max(w @ m.sigma @ w, 0.0)))
