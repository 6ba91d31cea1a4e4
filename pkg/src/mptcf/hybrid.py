"""CF shortlist, MPT re-rank, and top-N extraction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidCutoff

DEFAULT_K = 20
DEFAULT_TOP_N = 5


@dataclass(frozen=True)
class RecommendedItem:
    asset_id: str
    rank: int
    score_mpt: float
    score_cf: float


@dataclass(frozen=True)
class RecommendationList:
    user_id: str
    items: list[RecommendedItem] = field(default_factory=list)
    k: int | None = None

    @property
    def asset_ids(self) -> list[str]:
        return [it.asset_id for it in self.items]


def _descending_order(scores: np.ndarray, eligible: np.ndarray | None = None) -> np.ndarray:
    """Column order per row: descending score, ties by ascending column index.

    Ineligible entries sort last.
    """
    key = -scores
    if eligible is not None:
        key = np.where(eligible, key, np.inf)
    return np.argsort(key, axis=1, kind="stable")


def hybrid_scores(
    Y_cf: np.ndarray, Y_mpt: np.ndarray, k: int, exclude: np.ndarray | None = None
) -> np.ndarray:
    """Keep each user's top-``k`` CF stocks, scored by their MPT utility.

    Every other entry is ``-inf``. Stocks flagged in ``exclude`` (typically the
    ones already held) are never shortlisted.
    """
    Y_cf = np.asarray(Y_cf, dtype=float)
    Y_mpt = np.asarray(Y_mpt, dtype=float)
    if Y_cf.shape != Y_mpt.shape or Y_cf.ndim != 2:
        raise DimensionMismatch(f"score matrices differ: {Y_cf.shape} vs {Y_mpt.shape}")
    n_users, n_assets = Y_cf.shape
    if not 1 <= k <= n_assets:
        raise InvalidCutoff(f"k={k} outside [1, {n_assets}]")

    eligible = None if exclude is None else ~np.asarray(exclude, dtype=bool)
    shortlist = _descending_order(Y_cf, eligible)[:, :k]
    rows = np.arange(n_users)[:, None]
    if eligible is not None:
        keep = eligible[rows, shortlist]
    else:
        keep = np.ones(shortlist.shape, dtype=bool)

    Y_h = np.full(Y_cf.shape, -np.inf)
    r, c = np.broadcast_to(rows, shortlist.shape)[keep], shortlist[keep]
    Y_h[r, c] = Y_mpt[r, c]
    return Y_h


def top_n(
    Y: np.ndarray,
    n: int,
    held_mask: np.ndarray | None = None,
    *,
    users: Sequence[str] | None = None,
    assets: Sequence[str] | None = None,
    mpt: np.ndarray | None = None,
    cf: np.ndarray | None = None,
    k: int | None = None,
) -> list[RecommendationList]:
    """The ``n`` highest finite scores per user, descending, ties by asset index.

    ``mpt`` and ``cf`` only annotate the output items; they do not affect the
    order. Users with fewer than ``n`` eligible stocks get shorter lists.
    """
    Y = np.asarray(Y, dtype=float)
    n_users, n_assets = Y.shape
    if n < 1:
        raise ValueError("n must be positive")
    users = list(users) if users is not None else [str(i) for i in range(n_users)]
    assets = list(assets) if assets is not None else [str(j) for j in range(n_assets)]
    mpt = Y if mpt is None else np.asarray(mpt, dtype=float)
    cf = np.full(Y.shape, np.nan) if cf is None else np.asarray(cf, dtype=float)

    eligible = np.isfinite(Y)
    if held_mask is not None:
        eligible &= ~np.asarray(held_mask, dtype=bool)
    order = _descending_order(Y, eligible)[:, :n]

    lists = []
    for i in range(n_users):
        items = []
        for j in order[i]:
            if not eligible[i, j]:
                break
            items.append(RecommendedItem(assets[j], len(items) + 1, float(mpt[i, j]), float(cf[i, j])))
        lists.append(RecommendationList(users[i], items, k))
    return lists


def random_scores(shape: tuple[int, int], seed: int) -> np.ndarray:
    """Uniform scores for the random baseline."""
    return np.random.default_rng(seed).random(shape)
