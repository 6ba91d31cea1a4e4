"""Item-item collaborative filtering from portfolio snapshots.

Users' holdings are turned into a binary held/not-held matrix ``R`` over a
long window and a value-weighted portfolio matrix ``W`` over a short one.
Co-holding counts ``R'R`` with the diagonal removed and rows normalized give a
Markov transition matrix ``C`` between stocks, and ``W @ C`` scores every
stock for every user.
"""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import DimensionMismatch, NonFiniteInput

log = logging.getLogger(__name__)

DEFAULT_T_R_DAYS = 183


@dataclass(frozen=True)
class DateRange:
    """Inclusive calendar date range."""

    start: dt.date
    end: dt.date

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"empty date range {self.start} .. {self.end}")

    @classmethod
    def trailing(cls, end: dt.date, days: int) -> "DateRange":
        """The ``days`` calendar days ending at ``end`` (inclusive)."""
        if days < 1:
            raise ValueError("a trailing window needs at least one day")
        return cls(end - dt.timedelta(days=days - 1), end)

    def mask(self, dates: np.ndarray) -> np.ndarray:
        dates = np.asarray(dates, dtype="datetime64[D]")
        return (dates >= np.datetime64(self.start, "D")) & (dates <= np.datetime64(self.end, "D"))


class SnapshotStore:
    """Daily market values ``q[user, asset, date]`` of user positions.

    Backed by a frame with columns ``date``, ``user_id``, ``asset_id`` and
    ``market_value``; at most one row per (user, asset, date).
    """

    columns = ["date", "user_id", "asset_id", "market_value"]

    def __init__(self, records: pd.DataFrame):
        frame = records.loc[:, self.columns].copy()
        frame["date"] = pd.to_datetime(frame["date"]).values.astype("datetime64[D]")
        frame["user_id"] = frame["user_id"].astype(str)
        frame["asset_id"] = frame["asset_id"].astype(str)
        frame["market_value"] = frame["market_value"].astype(float)
        values = frame["market_value"].to_numpy()
        if not np.all(np.isfinite(values)):
            raise NonFiniteInput("market values must be finite")
        if np.any(values < 0):
            raise ValueError("market values must be non-negative")
        if frame.duplicated(["user_id", "asset_id", "date"]).any():
            raise ValueError("duplicate (user, asset, date) snapshot record")
        self.records = frame.sort_values(["user_id", "date", "asset_id"], kind="stable").reset_index(
            drop=True
        )

    @classmethod
    def from_records(cls, rows: Sequence[tuple]) -> "SnapshotStore":
        """Build from ``(user_id, asset_id, date, market_value)`` tuples."""
        frame = pd.DataFrame(list(rows), columns=["user_id", "asset_id", "date", "market_value"])
        return cls(frame)

    def __len__(self):
        return len(self.records)

    @property
    def users(self) -> list[str]:
        return sorted(self.records["user_id"].unique().tolist())

    @property
    def assets(self) -> list[str]:
        return sorted(self.records["asset_id"].unique().tolist())

    @property
    def dates(self) -> list[dt.date]:
        return sorted(pd.to_datetime(self.records["date"].unique()).date.tolist())

    @property
    def last_date(self) -> dt.date:
        return pd.Timestamp(self.records["date"].max()).date()

    def window(self, period: DateRange, universe: Sequence[str]) -> pd.DataFrame:
        """Records inside ``period`` on assets of ``universe``."""
        frame = self.records
        in_period = period.mask(frame["date"].to_numpy())
        known = frame["asset_id"].isin(set(universe)).to_numpy()
        dropped = in_period & ~known
        if dropped.any():
            log.warning(
                "dropping %d snapshot records on %d assets outside the universe",
                int(dropped.sum()),
                frame.loc[dropped, "asset_id"].nunique(),
            )
        return frame[in_period & known]


@dataclass(frozen=True)
class BinaryHoldings:
    matrix: np.ndarray
    users: list[str]
    assets: list[str]
    period: DateRange | None = None


@dataclass(frozen=True)
class PortfolioMatrix:
    matrix: np.ndarray
    users: list[str]
    assets: list[str]
    period: DateRange | None = None

    def held_mask(self) -> np.ndarray:
        return self.matrix > 0


def _indexers(frame: pd.DataFrame, users: Sequence[str], universe: Sequence[str]):
    user_pos = {u: i for i, u in enumerate(users)}
    asset_pos = {a: j for j, a in enumerate(universe)}
    rows = frame["user_id"].map(user_pos)
    keep = rows.notna().to_numpy()
    cols = frame["asset_id"].map(asset_pos).to_numpy()[keep].astype(int)
    return rows.to_numpy()[keep].astype(int), cols, keep


def build_R(
    store: SnapshotStore,
    period: DateRange,
    universe: Sequence[str],
    users: Sequence[str] | None = None,
) -> BinaryHoldings:
    """Entry (i, j) is 1 iff user i had a non-zero position on asset j during ``period``."""
    users = list(users) if users is not None else store.users
    universe = list(universe)
    frame = store.window(period, universe)
    frame = frame[frame["market_value"].to_numpy() != 0]
    rows, cols, _ = _indexers(frame, users, universe)
    R = np.zeros((len(users), len(universe)), dtype=np.int64)
    R[rows, cols] = 1
    return BinaryHoldings(R, users, universe, period)


def build_W(
    store: SnapshotStore,
    period: DateRange,
    universe: Sequence[str],
    users: Sequence[str] | None = None,
) -> PortfolioMatrix:
    """Position values summed over ``period`` and normalized per user.

    Users without holdings in the window get an all-zero row.
    """
    users = list(users) if users is not None else store.users
    universe = list(universe)
    frame = store.window(period, universe)
    rows, cols, keep = _indexers(frame, users, universe)
    values = frame["market_value"].to_numpy()[keep]
    totals = np.zeros((len(users), len(universe)))
    np.add.at(totals, (rows, cols), values)
    denom = totals.sum(axis=1)
    W = np.divide(totals, denom[:, None], out=np.zeros_like(totals), where=denom[:, None] > 0)
    return PortfolioMatrix(W, users, universe, period)


def daily_portfolios(
    store: SnapshotStore,
    period: DateRange,
    universe: Sequence[str],
    users: Sequence[str] | None = None,
) -> dict[str, list[tuple[dt.date, np.ndarray]]]:
    """Per-user list of ``(date, market-value vector)`` over ``period``.

    Vectors are indexed like ``universe``; values are unnormalized.
    """
    users = list(users) if users is not None else store.users
    universe = list(universe)
    asset_pos = {a: j for j, a in enumerate(universe)}
    frame = store.window(period, universe)
    out: dict[str, list[tuple[dt.date, np.ndarray]]] = {u: [] for u in users}
    frame = frame[frame["user_id"].isin(set(users))]
    cols = frame["asset_id"].map(asset_pos).to_numpy()
    values = frame["market_value"].to_numpy()
    groups = frame.groupby(["user_id", "date"], sort=True).indices
    for (user, day), idx in sorted(groups.items()):
        vec = np.zeros(len(universe))
        vec[cols[idx]] = values[idx]
        out[user].append((pd.Timestamp(day).date(), vec))
    return out


def cocount(R: BinaryHoldings | np.ndarray) -> np.ndarray:
    """Co-holding counts ``R' R``; the diagonal counts holders of each asset."""
    mat = R.matrix if isinstance(R, BinaryHoldings) else np.asarray(R)
    mat = mat.astype(np.int64)
    return mat.T @ mat


def transition(cocounts: np.ndarray) -> np.ndarray:
    """Row-stochastic item-item transition matrix with a zero diagonal.

    Rows of assets never co-held with another asset stay all-zero.
    """
    C = np.array(cocounts, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise DimensionMismatch(f"co-count matrix must be square, got {C.shape}")
    np.fill_diagonal(C, 0.0)
    row_sums = C.sum(axis=1)
    np.divide(C, row_sums[:, None], out=C, where=row_sums[:, None] > 0)
    return C


def cf_scores(W: PortfolioMatrix | np.ndarray, C: np.ndarray) -> np.ndarray:
    """One Markov step from each user's portfolio: ``W @ C``."""
    mat = W.matrix if isinstance(W, PortfolioMatrix) else np.asarray(W, dtype=float)
    C = np.asarray(C, dtype=float)
    if mat.ndim != 2 or C.ndim != 2 or mat.shape[1] != C.shape[0]:
        raise DimensionMismatch(f"cannot multiply {mat.shape} by {C.shape}")
    return mat @ C
