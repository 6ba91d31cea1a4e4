"""Plot data and SVG figures: risk-aversion histogram and risk-return moves."""

from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .frontier import GAMMA_MAX, GAMMA_MIN, FrontierPath, log_gamma_grid
from .io import fmt, read_gammas, read_ids, read_matrix, read_moments
from .market_model import MomentEstimates
from .mpt_scoring import replacement_weights

log = logging.getLogger(__name__)

BINS_PER_DECADE = 4


def gamma_histogram(
    gammas: Sequence[float],
    gamma_min: float = GAMMA_MIN,
    gamma_max: float = GAMMA_MAX,
    per_decade: int = BINS_PER_DECADE,
) -> tuple[np.ndarray, np.ndarray]:
    """Counts over log-spaced bins; values on an upper edge fall in the bin above."""
    lo, hi = math.log10(gamma_min), math.log10(gamma_max)
    n_bins = int(round((hi - lo) * per_decade))
    exponents = lo + np.arange(n_bins + 1) / per_decade
    edges = 10.0**exponents
    values = np.log10(np.asarray(gammas, dtype=float))
    idx = np.floor((values - lo) * per_decade + 1e-9).astype(int)
    idx = np.clip(idx, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    return edges, counts


def post_addition(w: np.ndarray, w_r: float, j: int) -> np.ndarray:
    if not (w > 0).any():
        w_r = 1.0
    v = (1.0 - w_r) * w
    v[j] += w_r
    return v


def _risk_return(m: MomentEstimates, w: np.ndarray, gamma: float) -> tuple[float, float, float]:
    var = float(w @ m.sigma @ w)
    ret = float(m.mu @ w)
    return math.sqrt(max(var, 0.0)), ret, ret - gamma * var


def risk_return_rows(
    m: MomentEstimates,
    w: np.ndarray,
    gamma: float,
    candidates: Sequence[int],
    path: FrontierPath,
    n_curve: int = 60,
) -> list[tuple[str, str, float, float, float]]:
    """Rows ``(kind, label, risk, expected_return, utility)`` for one user.

    Kinds: ``frontier`` curve points, the ``user`` portfolio, the ``best``
    portfolio at the user's gamma and ``candidate`` post-purchase portfolios.
    """
    rows = []
    for g in log_gamma_grid(n_curve, path.gamma_min, path.gamma_max):
        p = path.point(g)
        rows.append(("frontier", fmt(g), p.risk, p.expected_return, p.utility_value))
    rows.append(("user", "current", *_risk_return(m, w, gamma)))
    g_user = min(max(gamma, path.gamma_min), path.gamma_max)
    best = path.point(g_user)
    rows.append(("best", fmt(gamma), best.risk, best.expected_return, float(m.mu @ best.weights - gamma * best.risk**2)))
    w_r = float(replacement_weights(w[None, :])[0])
    for rank, j in enumerate(candidates, start=1):
        v = post_addition(w, w_r, j)
        rows.append(("candidate", f"top{rank}:{m.assets[j]}", *_risk_return(m, v, gamma)))
    return rows


def _svg_setup():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "mptcf"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def write_histogram(path: Path, edges: np.ndarray, counts: np.ndarray, svg: bool = True) -> list[Path]:
    written = [path]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            writer.writerow([fmt(lo), fmt(hi), int(c)])
    if svg:
        plt = _svg_setup()
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge", edgecolor="black")
        ax.set_xscale("log")
        ax.set_xlabel("risk aversion")
        ax.set_ylabel("users")
        svg_path = path.with_suffix(".svg")
        fig.savefig(svg_path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(svg_path)
    return written


def write_risk_return(path: Path, rows, svg: bool = True) -> list[Path]:
    written = [path]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["kind", "label", "risk", "expected_return", "utility"])
        for kind, label, risk, ret, util in rows:
            writer.writerow([kind, label, fmt(risk), fmt(ret), fmt(util)])
    if svg:
        plt = _svg_setup()
        fig, ax = plt.subplots(figsize=(6, 4))
        curve = [(r[2], r[3]) for r in rows if r[0] == "frontier"]
        if curve:
            xs, ys = zip(*curve)
            ax.plot(xs, ys, "-", color="gray", label="efficient frontier")
        style = {"user": ("s", "black"), "best": ("s", "white"), "candidate": ("o", "tab:green")}
        for kind, label, risk, ret, _ in rows:
            if kind in style:
                marker, color = style[kind]
                ax.plot([risk], [ret], marker, color=color, markeredgecolor="black", label=label)
        ax.set_xlabel("risk (std of return)")
        ax.set_ylabel("expected return")
        ax.legend(fontsize="small")
        svg_path = path.with_suffix(".svg")
        fig.savefig(svg_path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(svg_path)
    return written


def write_frontier_svg(path: Path, frontier) -> Path:
    plt = _svg_setup()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(frontier.risks, frontier.expected_returns, ".-", color="tab:blue")
    ax.set_xlabel("risk (std of return)")
    ax.set_ylabel("expected return")
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _recommended(out_dir: Path, method: str) -> dict[str, list[str]]:
    recs: dict[str, list[str]] = {}
    path = out_dir / f"recommendations_{method}.csv"
    if not path.exists():
        return recs
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            recs.setdefault(row["user_id"], []).append(row["asset_id"])
    return recs


def emit_plots(
    out_dir: str | Path,
    *,
    plot_dir: str | Path | None = None,
    users: Sequence[str] | None = None,
    method: str = "hybrid",
    n_candidates: int = 2,
    max_users: int = 3,
    gamma_min: float = GAMMA_MIN,
    gamma_max: float = GAMMA_MAX,
    svg: bool = True,
) -> list[Path]:
    """Write the gamma histogram and per-user risk-return plot data under ``plot_dir``."""
    out_dir = Path(out_dir)
    plot_dir = Path(plot_dir) if plot_dir is not None else out_dir / "plots"
    plot_dir.mkdir(parents=True, exist_ok=True)

    gammas = read_gammas(out_dir / "gammas.csv") if (out_dir / "gammas.csv").exists() else {}
    hist_path = plot_dir / "gamma_hist.csv"
    if not gammas:
        hist_path.write_text("")
        log.info("no users, wrote empty histogram")
        return [hist_path]
    edges, counts = gamma_histogram(list(gammas.values()), gamma_min, gamma_max)
    written = write_histogram(hist_path, edges, counts, svg)

    m = read_moments(out_dir / "moments")
    all_users = read_ids(out_dir / "users.txt")
    W = read_matrix(out_dir / "W.txt")
    recs = _recommended(out_dir, method)
    if users is None:
        users = [u for u in all_users if u in recs][:max_users]
    if not users:
        return written
    path = FrontierPath.trace(m, gamma_min, gamma_max)
    row_of = {u: i for i, u in enumerate(all_users)}
    asset_of = {a: j for j, a in enumerate(m.assets)}
    for u in users:
        w = W[row_of[u]]
        cand = [asset_of[a] for a in recs.get(u, [])[:n_candidates]]
        rows = risk_return_rows(m, w, gammas[u], cand, path)
        written += write_risk_return(plot_dir / f"risk_return_{u}.csv", rows, svg)
    return written
