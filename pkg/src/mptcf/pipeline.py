"""End-to-end run: moments, frontier, risk aversions, MPT and CF scores, hybrid lists."""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import hashlib
import datetime as dt
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from .cf import (
    DEFAULT_T_R_DAYS,
    DateRange,
    PortfolioMatrix,
    SnapshotStore,
    build_R,
    build_W,
    cf_scores,
    cocount,
    daily_portfolios,
    transition,
)
from .errors import NoValidDays, UniverseMismatch
from .frontier import (
    DEFAULT_GAMMA,
    GAMMA_MAX,
    GAMMA_MIN,
    FrontierPath,
    compute_frontier,
    estimate_user_gamma,
    log_gamma_grid,
)
from .hybrid import DEFAULT_K, DEFAULT_TOP_N, RecommendationList, hybrid_scores, random_scores, top_n
from .market_model import DEFAULT_HALF_LIFE, DEFAULT_RIDGE, DecayConfig, MomentEstimates, compute_moments
from .mpt_scoring import replacement_weights, score_naive, score_vectorized

log = logging.getLogger(__name__)

METHODS = ("random", "mpt", "cf", "hybrid")
REC_HEADER = ["user_id", "rank", "asset_id", "score_mpt", "score_cf"]


@dataclass
class PipelineConfig:
    prices: str = "prices.csv"
    snapshots: str = "snapshots.csv"
    out_dir: str = "out"
    half_life: float = DEFAULT_HALF_LIFE
    ridge_epsilon: float = DEFAULT_RIDGE
    # windows end at ``as_of`` (default: last snapshot date) and span whole calendar days
    as_of: str | None = None
    t_r_days: int = DEFAULT_T_R_DAYS
    t_w_days: int = 1
    gamma_window_days: int = 30
    gamma_min: float = GAMMA_MIN
    gamma_max: float = GAMMA_MAX
    default_gamma: float = DEFAULT_GAMMA
    frontier_points: int = 50
    k: int = DEFAULT_K
    top_n: int = DEFAULT_TOP_N
    mask_held: bool = True
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    score_method: str = "vectorized"
    seed: int = 0
    workers: int = 1
    eval_users: int | None = None
    forced_gammas: list[float] | None = None
    record_timings: bool = False

    def __post_init__(self):
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if self.score_method not in ("naive", "vectorized"):
            raise ValueError(f"unknown score method {self.score_method!r}")
        if not 0 < self.gamma_min < self.gamma_max:
            raise ValueError("need 0 < gamma_min < gamma_max")
        for name in ("t_r_days", "t_w_days", "gamma_window_days", "top_n", "k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def output_settings(self) -> dict:
        """Settings that determine the artifacts; excludes where and how fast they are made.

        Input locations are left out too; the manifest identifies inputs by content.
        """
        data = self.to_dict()
        for key in ("prices", "snapshots", "out_dir", "workers", "record_timings"):
            data.pop(key)
        return data

    def windows(self, store: SnapshotStore) -> tuple[DateRange, DateRange, DateRange]:
        end = dt.date.fromisoformat(self.as_of) if self.as_of else store.last_date
        return (
            DateRange.trailing(end, self.t_r_days),
            DateRange.trailing(end, self.t_w_days),
            DateRange.trailing(end, self.gamma_window_days),
        )


@dataclass
class PipelineResult:
    recommendations: dict[str, list[RecommendationList]]
    manifest: dict


def shared_universe(moments: MomentEstimates, store: SnapshotStore) -> None:
    held = set(store.assets)
    common = held & set(moments.assets)
    if not common:
        raise UniverseMismatch("price and snapshot files share no assets")
    if len(common) < len(held):
        log.warning("%d snapshot assets have no prices and are ignored", len(held) - len(common))


def estimate_gammas(
    store: SnapshotStore,
    moments: MomentEstimates,
    period: DateRange,
    users: Sequence[str],
    *,
    gamma_min: float = GAMMA_MIN,
    gamma_max: float = GAMMA_MAX,
    default_gamma: float = DEFAULT_GAMMA,
    path: FrontierPath | None = None,
) -> list[tuple[str, float, int, int, str]]:
    """Rows ``(user_id, gamma, clamped_days, n_days, source)``; source is estimated or default."""
    if path is None:
        path = FrontierPath.trace(moments, gamma_min, gamma_max)
    days = daily_portfolios(store, period, moments.assets, users)
    rows = []
    for u in users:
        try:
            est = estimate_user_gamma(
                days[u], moments, gamma_min=gamma_min, gamma_max=gamma_max, path=path
            )
        except NoValidDays:
            rows.append((u, default_gamma, 0, 0, "default"))
            continue
        rows.append((u, est.gamma, est.clamped_days, len(est.daily_gammas), "estimated"))
    return rows


def write_recommendations(path: str | Path, lists: Sequence[RecommendationList]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(REC_HEADER)
        for rec in lists:
            for it in rec.items:
                writer.writerow([rec.user_id, it.rank, it.asset_id, io.fmt(it.score_mpt), io.fmt(it.score_cf)])


def recommend(
    method: str,
    Y_cf: np.ndarray,
    Y_mpt: np.ndarray,
    *,
    k: int,
    n: int,
    held: np.ndarray | None,
    users: Sequence[str],
    assets: Sequence[str],
    seed: int = 0,
) -> list[RecommendationList]:
    """Top-``n`` lists for one of the four methods."""
    if method == "mpt":
        Y = Y_mpt
    elif method == "cf":
        Y = Y_cf
    elif method == "hybrid":
        Y = hybrid_scores(Y_cf, Y_mpt, min(k, Y_cf.shape[1]), exclude=held)
    elif method == "random":
        Y = random_scores(Y_cf.shape, seed)
    else:
        raise ValueError(f"unknown method {method!r}")
    return top_n(
        Y, n, held, users=users, assets=assets, mpt=Y_mpt, cf=Y_cf, k=k if method == "hybrid" else None
    )


def score(method: str, W: np.ndarray, gammas: np.ndarray, moments: MomentEstimates, workers: int = 1):
    w_r = replacement_weights(W)
    if method == "naive":
        return score_naive(W, w_r, gammas, moments)
    return score_vectorized(W, w_r, gammas, moments, workers=workers)


@contextlib.contextmanager
def _stage(timings: dict[str, float], name: str):
    t0 = time.perf_counter()
    yield
    timings[name] = time.perf_counter() - t0
    log.info("stage %s: %.3fs", name, timings[name])


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    """Run every stage and write all intermediate artifacts under ``cfg.out_dir``."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}

    with _stage(timings, "ingest"):
        history = io.prices_to_returns(io.read_prices(cfg.prices), cfg.prices)
        store = io.read_snapshots(cfg.snapshots)

    with _stage(timings, "moments"):
        moments = compute_moments(history, DecayConfig(cfg.half_life, cfg.ridge_epsilon))
        shared_universe(moments, store)
        io.write_moments(out / "moments", moments)
    assets = moments.assets
    users = store.users
    io.write_ids(out / "assets.txt", assets)
    io.write_ids(out / "users.txt", users)

    with _stage(timings, "frontier"):
        grid = log_gamma_grid(cfg.frontier_points, cfg.gamma_min, cfg.gamma_max)
        frontier = compute_frontier(moments, grid)
        write_frontier(out, frontier)
        path = FrontierPath.trace(moments, cfg.gamma_min, cfg.gamma_max)

    t_r, t_w, t_gamma = cfg.windows(store)
    with _stage(timings, "gamma"):
        gamma_rows = estimate_gammas(
            store,
            moments,
            t_gamma,
            users,
            gamma_min=cfg.gamma_min,
            gamma_max=cfg.gamma_max,
            default_gamma=cfg.default_gamma,
            path=path,
        )

    with _stage(timings, "cf"):
        R = build_R(store, t_r, assets, users)
        W = build_W(store, t_w, assets, users)
        C = transition(cocount(R))
        Y_cf = cf_scores(W, C)
        io.write_matrix(out / "R.txt", R.matrix)
        io.write_matrix(out / "W.txt", W.matrix)
        io.write_matrix(out / "C.txt", C)
        io.write_matrix(out / "Y_cf.txt", Y_cf)

    eval_rows = select_eval_users(W, cfg.eval_users, cfg.seed)
    if cfg.forced_gammas:
        forced = np.random.default_rng([cfg.seed, 2]).choice(
            np.asarray(cfg.forced_gammas, dtype=float), len(eval_rows)
        )
        for i, g in zip(eval_rows, forced):
            u, _, clamped, n_days, _ = gamma_rows[i]
            gamma_rows[i] = (u, float(g), clamped, n_days, "forced")
    io.write_gammas(out / "gammas.csv", gamma_rows)
    gammas = np.array([row[1] for row in gamma_rows])

    with _stage(timings, "score"):
        Y_mpt = score(cfg.score_method, W.matrix, gammas, moments, cfg.workers)
        io.write_matrix(out / "Y_mpt.txt", Y_mpt)

    held = W.held_mask() if cfg.mask_held else None
    with _stage(timings, "recommend"):
        sub = np.asarray(eval_rows, dtype=int)
        sub_users = [users[i] for i in sub]
        sub_held = held[sub] if held is not None else None
        if "hybrid" in cfg.methods:
            io.write_matrix(
                out / "Y_hybrid.txt",
                hybrid_scores(Y_cf, Y_mpt, min(cfg.k, len(assets)), exclude=held),
            )
        recs = {}
        for method in cfg.methods:
            recs[method] = recommend(
                method,
                Y_cf[sub],
                Y_mpt[sub],
                k=cfg.k,
                n=cfg.top_n,
                held=sub_held,
                users=sub_users,
                assets=assets,
                seed=cfg.seed,
            )
            write_recommendations(out / f"recommendations_{method}.csv", recs[method])

    manifest = {
        "config": cfg.output_settings(),
        "inputs": {
            name: {"file": Path(src).name, "sha256": _sha256(src)}
            for name, src in (("prices", cfg.prices), ("snapshots", cfg.snapshots))
        },
        "n_users": len(users),
        "n_assets": len(assets),
        "n_eval_users": len(sub_users),
        "windows": {
            name: [r.start.isoformat(), r.end.isoformat()]
            for name, r in (("T_R", t_r), ("T_W", t_w), ("gamma", t_gamma))
        },
        "frontier_segments": len(path),
        "files": sorted(p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"),
    }
    if cfg.record_timings:
        manifest["timings"] = timings
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return PipelineResult(recs, manifest)


def _sha256(path: str | Path) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def select_eval_users(W: PortfolioMatrix, count: int | None, seed: int) -> list[int]:
    """Row indices of the users receiving recommendation lists.

    All users when ``count`` is None, else a seeded sample of users holding
    something in the portfolio window, in row order.
    """
    n_users = W.matrix.shape[0]
    if count is None:
        return list(range(n_users))
    holders = np.nonzero((W.matrix > 0).any(axis=1))[0]
    count = min(count, holders.size)
    picked = np.random.default_rng([seed, 3]).choice(holders, size=count, replace=False)
    return sorted(int(i) for i in picked)


def write_frontier(out: Path, frontier, stem: str = "frontier") -> None:
    with open(out / f"{stem}.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["gamma", "risk", "expected_return", "utility"])
        for p in frontier.points:
            writer.writerow([io.fmt(p.gamma), io.fmt(p.risk), io.fmt(p.expected_return), io.fmt(p.utility_value)])
    io.write_matrix(out / f"{stem}_weights.txt", np.array([p.weights for p in frontier.points]))
