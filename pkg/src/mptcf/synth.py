"""Seeded synthetic markets and user populations with known risk aversions."""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .cf import SnapshotStore
from .frontier import GAMMA_MAX, GAMMA_MIN, FrontierPath, optimal_portfolio
from .io import prices_to_returns
from .market_model import MomentEstimates, ReturnHistory

# Independent random streams derived from the one user-facing seed.
_MARKET_STREAM = 0
_USER_STREAM = 1


@dataclass(frozen=True)
class SynthConfig:
    n_assets: int = 50
    n_users: int = 200
    n_days: int = 500
    seed: int = 0
    n_factors: int = 3
    factor_vol: float = 0.01
    idio_vol: tuple[float, float] = (0.01, 0.025)
    mean_return: float = 4e-4
    mean_return_dispersion: float = 4e-4
    start_date: dt.date = dt.date(2015, 4, 1)
    # risk-aversion law: "lognormal" (median, log-std), "loguniform" (range) or "choice"
    gamma_law: str = "lognormal"
    gamma_median: float = 20.9
    gamma_log_std: float = 1.0
    gamma_range: tuple[float, float] = (0.5, 500.0)
    gamma_choices: tuple[float, ...] = (1.0, 20.0, 100.0)
    popularity_exponent: float = 1.0
    assets_per_user: int | None = 10
    noise_scale: float = 0.1
    snapshot_days: int = 30
    wealth_median: float = 1e6
    gamma_bounds: tuple[float, float] = field(default=(GAMMA_MIN, GAMMA_MAX))

    def __post_init__(self):
        for name in ("n_assets", "n_users", "n_days", "snapshot_days"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_factors < 0:
            raise ValueError("n_factors must be non-negative")
        if self.gamma_law not in ("lognormal", "loguniform", "choice"):
            raise ValueError(f"unknown gamma_law {self.gamma_law!r}")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, stream])


def asset_ids(n: int) -> list[str]:
    width = max(4, len(str(n)))
    return [f"A{j:0{width}d}" for j in range(1, n + 1)]


def user_ids(m: int) -> list[str]:
    width = max(5, len(str(m)))
    return [f"u{i:0{width}d}" for i in range(1, m + 1)]


def generate_prices(cfg: SynthConfig) -> pd.DataFrame:
    """Close prices in long format (``date, asset_id, close``) from a factor model."""
    rng = cfg.rng(_MARKET_STREAM)
    n, T = cfg.n_assets, cfg.n_days
    alpha = rng.normal(cfg.mean_return, cfg.mean_return_dispersion, n)
    idio = rng.uniform(cfg.idio_vol[0], cfg.idio_vol[1], n)
    if cfg.n_factors:
        loadings = rng.normal(0.0, 0.5, (n, cfg.n_factors))
        loadings[:, 0] += 1.0  # first factor acts as the market
        factors = rng.normal(0.0, cfg.factor_vol, (T, cfg.n_factors))
        common = factors @ loadings.T
    else:
        common = np.zeros((T, n))
    returns = alpha + common + rng.normal(0.0, 1.0, (T, n)) * idio
    returns = np.maximum(returns, -0.95)

    closes = np.empty((T + 1, n))
    closes[0] = 100.0
    closes[1:] = 100.0 * np.cumprod(1.0 + returns, axis=0)
    dates = pd.bdate_range(cfg.start_date, periods=T + 1).date
    frame = pd.DataFrame(closes, index=dates, columns=asset_ids(n))
    frame.index.name = "date"
    return (
        frame.reset_index()
        .melt(id_vars="date", var_name="asset_id", value_name="close")
        .sort_values(["date", "asset_id"], kind="stable")
        .reset_index(drop=True)
    )


def generate_market(cfg: SynthConfig) -> ReturnHistory:
    """Seeded return history; identical to what ingesting the price file yields."""
    return prices_to_returns(generate_prices(cfg))


def draw_gammas(cfg: SynthConfig, size: int, rng: np.random.Generator) -> np.ndarray:
    if cfg.gamma_law == "lognormal":
        g = np.exp(rng.normal(math.log(cfg.gamma_median), cfg.gamma_log_std, size))
    elif cfg.gamma_law == "loguniform":
        lo, hi = cfg.gamma_range
        g = np.exp(rng.uniform(math.log(lo), math.log(hi), size))
    else:
        g = rng.choice(np.asarray(cfg.gamma_choices, dtype=float), size)
    return np.clip(g, *cfg.gamma_bounds)


def generate_users(
    cfg: SynthConfig,
    m: MomentEstimates,
    dates: list[dt.date] | None = None,
) -> tuple[SnapshotStore, dict[str, float]]:
    """Users holding noisy optimal portfolios on popularity-sampled subsets.

    Each user draws a true risk aversion, picks ``assets_per_user`` stocks
    (all of them when None) with probability decaying in popularity rank,
    holds the optimal portfolio of that subset, perturbed multiplicatively by
    ``noise_scale`` and renormalized. Positions are constant over the last
    ``snapshot_days`` of ``dates`` (business days ending at the last market
    date when omitted).
    """
    rng = cfg.rng(_USER_STREAM)
    n = m.n_assets
    ids = user_ids(cfg.n_users)
    gammas = draw_gammas(cfg, cfg.n_users, rng)
    popularity = rng.permutation(n)
    pick_p = (np.arange(1, n + 1, dtype=float) ** -cfg.popularity_exponent)[np.argsort(popularity)]
    pick_p /= pick_p.sum()

    if dates is None:
        end = pd.bdate_range(cfg.start_date, periods=cfg.n_days + 1)[-1]
        dates = pd.bdate_range(end=end, periods=cfg.snapshot_days).date.tolist()
    else:
        dates = list(dates)[-cfg.snapshot_days :]

    full = cfg.assets_per_user is None or cfg.assets_per_user >= n
    path = FrontierPath.trace(m, *cfg.gamma_bounds) if full and n > 1 else None

    rows_user, rows_asset, rows_value = [], [], []
    for uid, gamma in zip(ids, gammas):
        if full:
            subset = np.arange(n)
            w = path.weights(gamma) if path is not None else np.ones(1)
        else:
            subset = np.sort(rng.choice(n, size=cfg.assets_per_user, replace=False, p=pick_p))
            w = optimal_portfolio(m.subset(subset), gamma).weights
        if cfg.noise_scale > 0:
            w = w * np.exp(cfg.noise_scale * rng.standard_normal(w.shape[0]))
            w /= w.sum()
        wealth = cfg.wealth_median * math.exp(rng.normal(0.0, 1.0))
        held = np.nonzero(w > 0)[0]
        for j in held:
            rows_user.append(uid)
            rows_asset.append(m.assets[subset[j]])
            rows_value.append(wealth * w[j])

    n_days = len(dates)
    frame = pd.DataFrame(
        {
            "date": np.repeat(np.asarray(dates, dtype="datetime64[D]"), len(rows_user)),
            "user_id": np.tile(rows_user, n_days),
            "asset_id": np.tile(rows_asset, n_days),
            "market_value": np.tile(rows_value, n_days),
        }
    )
    return SnapshotStore(frame), dict(zip(ids, gammas.tolist()))
