"""Utility of adding one stock to each user's portfolio.

For user ``i`` with portfolio ``w_i`` and candidate stock ``j`` the new
portfolio is ``(1 - r_i) w_i + r_i e_j`` where ``r_i`` (the replacement
weight) is the mean of the user's non-zero weights. The score is the
mean-variance utility of that portfolio at the user's risk aversion.

``score_naive`` evaluates every pair independently in O(m n^3).
``score_vectorized`` computes the whole matrix in closed form in O(m n^2).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import DimensionMismatch
from .market_model import MomentEstimates, utility

BLOCK_ROWS = 512


def replacement_weights(W: np.ndarray) -> np.ndarray:
    """Mean of the strictly positive entries of each row; 0 for empty rows."""
    W = np.asarray(W, dtype=float)
    positive = W > 0
    counts = positive.sum(axis=1)
    sums = np.where(positive, W, 0.0).sum(axis=1)
    return np.divide(sums, counts, out=np.zeros(W.shape[0]), where=counts > 0)


def _check(W, w_r, gammas, m: MomentEstimates):
    W = np.asarray(W, dtype=float)
    w_r = np.asarray(w_r, dtype=float).reshape(-1)
    gammas = np.asarray(gammas, dtype=float).reshape(-1)
    if W.ndim != 2:
        raise DimensionMismatch("W must be a matrix")
    n_users, n_assets = W.shape
    if n_assets != m.n_assets:
        raise DimensionMismatch(f"W has {n_assets} columns for {m.n_assets} assets")
    if w_r.shape != (n_users,) or gammas.shape != (n_users,):
        raise DimensionMismatch(
            f"need {n_users} replacement weights and risk aversions, "
            f"got {w_r.shape[0]} and {gammas.shape[0]}"
        )
    # An empty portfolio is replaced outright by the candidate stock.
    empty = ~(W > 0).any(axis=1)
    if empty.any():
        w_r = np.where(empty, 1.0, w_r)
    return W, w_r, gammas


def score_naive(W, w_r, gammas, m: MomentEstimates) -> np.ndarray:
    """Reference implementation: one utility evaluation per (user, stock) pair."""
    W, w_r, gammas = _check(W, w_r, gammas, m)
    n_users, n_assets = W.shape
    Y = np.empty((n_users, n_assets))
    for i in range(n_users):
        base = (1.0 - w_r[i]) * W[i]
        for j in range(n_assets):
            v = base.copy()
            v[j] += w_r[i]
            Y[i, j] = utility(v, gammas[i], m)
    return Y


def _score_block(W, w_r, gammas, mu, sigma, sigma_diag):
    # W' = ((1 - r) 1') o W is applied as a row scaling of the products below,
    # so W'S = keep o (W S) and W' mu = keep o (W mu).
    keep = 1.0 - w_r
    WS = W @ sigma

    # (W'S o W') 1, the variance of each kept portfolio
    own_var = keep * keep * np.einsum("ij,ij->i", WS, W)
    own_mean = keep * (W @ mu)

    # Y = Y_mu - gamma Y_sigma with
    #   Y_mu    = W' mu 1' + r mu'
    #   Y_sigma = (W'S o W') 1 1' + (r o r) diag(S)' + 2 W'S o (r 1')
    # The only full-rank term is 2 W'S o (r 1'); the rest has rank 3.
    y = WS
    y *= (-2.0 * gammas * w_r * keep)[:, None]
    rows = np.column_stack([own_mean - gammas * own_var, w_r, -gammas * w_r * w_r])
    cols = np.vstack([np.ones_like(mu), mu, sigma_diag])
    y += rows @ cols
    return y


def score_vectorized(
    W, w_r, gammas, m: MomentEstimates, *, workers: int = 1, block_rows: int = BLOCK_ROWS
) -> np.ndarray:
    """Closed-form scoring matrix, O(m n^2).

    Rows are processed in fixed blocks of ``block_rows`` users, so the result
    is identical for any number of ``workers``.
    """
    W, w_r, gammas = _check(W, w_r, gammas, m)
    mu, sigma = m.mu, m.sigma
    sigma_diag = np.diag(sigma).copy()
    n_users = W.shape[0]
    if n_users <= block_rows:
        return _score_block(W, w_r, gammas, mu, sigma, sigma_diag)

    starts = range(0, n_users, block_rows)
    out = np.empty(W.shape)

    def run(start):
        sl = slice(start, start + block_rows)
        out[sl] = _score_block(W[sl], w_r[sl], gammas[sl], mu, sigma, sigma_diag)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for start in starts:
            run(start)
    return out
