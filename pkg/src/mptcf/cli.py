"""Command line interface.

Every subcommand reads plain-text inputs and writes plain-text outputs under
``--out-dir``. Settings come from built-in defaults, then ``--config`` (a JSON
object of pipeline settings with an optional ``"synth"`` section), then
explicit flags.

Exit codes: 0 success, 2 parse or configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, io
from .cf import build_R, build_W, cf_scores, cocount, transition
from .errors import MptcfError, ParseError, SolverDivergence
from .frontier import compute_frontier, log_gamma_grid
from .market_model import DecayConfig, compute_moments
from .pipeline import (
    METHODS,
    PipelineConfig,
    estimate_gammas,
    recommend,
    run_pipeline,
    score,
    shared_universe,
    write_frontier,
    write_recommendations,
)
from .plots import emit_plots, write_frontier_svg
from .synth import SynthConfig, generate_prices, generate_users

log = logging.getLogger("mptcf")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3

S = argparse.SUPPRESS


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def _sizes(text: str) -> list[tuple[int, int]]:
    out = []
    for item in text.split(","):
        m, n = item.lower().split("x")
        out.append((int(m), int(n)))
    return out


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=S, help="JSON settings file")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--out-dir", default=S)
    p.add_argument("--workers", type=int, default=S)
    p.add_argument("-v", "--verbose", action="store_true", default=S)


def _add_decay(p):
    p.add_argument("--half-life", type=float, default=S)
    p.add_argument("--ridge-epsilon", type=float, default=S)


def _add_bounds(p):
    p.add_argument("--gamma-min", type=float, default=S)
    p.add_argument("--gamma-max", type=float, default=S)


def _add_windows(p):
    p.add_argument("--as-of", default=S, help="ISO date closing every window")
    p.add_argument("--t-r-days", type=int, default=S)
    p.add_argument("--t-w-days", type=int, default=S)
    p.add_argument("--gamma-window-days", type=int, default=S)


def _add_ranking(p):
    p.add_argument("--k", type=int, default=S, help="CF shortlist size")
    p.add_argument("--top-n", type=int, default=S)
    p.add_argument("--mask-held", action=argparse.BooleanOptionalAction, default=S)


def _add_synth(p):
    p.add_argument("--n-assets", type=int, default=S)
    p.add_argument("--n-users", type=int, default=S)
    p.add_argument("--n-days", type=int, default=S)
    p.add_argument("--n-factors", type=int, default=S)
    p.add_argument("--snapshot-days", type=int, default=S)
    p.add_argument("--assets-per-user", type=int, default=S, help="0 holds the whole universe")
    p.add_argument("--noise-scale", type=float, default=S)
    p.add_argument("--popularity-exponent", type=float, default=S)
    p.add_argument("--gamma-law", choices=["lognormal", "loguniform", "choice"], default=S)
    p.add_argument("--gamma-median", type=float, default=S)
    p.add_argument("--gamma-log-std", type=float, default=S)
    p.add_argument("--gamma-choices", type=_floats, default=S)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mptcf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write synthetic prices, snapshots and true gammas")
    _add_common(p)
    _add_synth(p)
    _add_decay(p)

    p = sub.add_parser("moments", help="exponentially weighted moments from prices")
    _add_common(p)
    p.add_argument("--prices", default=S)
    _add_decay(p)

    p = sub.add_parser("frontier", help="efficient frontier on a log-gamma grid")
    _add_common(p)
    p.add_argument("--moments", type=Path, required=True, help="directory written by 'moments'")
    p.add_argument("--points", type=int, default=S, dest="frontier_points")
    p.add_argument("--svg", action="store_true", default=False)
    _add_bounds(p)

    p = sub.add_parser("gamma", help="estimate each user's risk aversion")
    _add_common(p)
    p.add_argument("--moments", type=Path, required=True)
    p.add_argument("--snapshots", default=S)
    p.add_argument("--default-gamma", type=float, default=S)
    _add_bounds(p)
    _add_windows(p)

    p = sub.add_parser("cf", help="co-holding transition matrix and CF scores")
    _add_common(p)
    p.add_argument("--moments", type=Path, required=True, help="asset universe source")
    p.add_argument("--snapshots", default=S)
    _add_windows(p)

    p = sub.add_parser("score", help="MPT one-stock-addition scores")
    _add_common(p)
    p.add_argument("--moments", type=Path, required=True)
    p.add_argument("--W", dest="W", type=Path, required=True)
    p.add_argument("--users", type=Path, required=True)
    p.add_argument("--gammas", type=Path, required=True)
    p.add_argument("--method", choices=["naive", "vectorized"], default=S, dest="score_method")

    p = sub.add_parser("recommend", help="top-N lists from score matrices")
    _add_common(p)
    p.add_argument("--y-cf", type=Path, required=True)
    p.add_argument("--y-mpt", type=Path, required=True)
    p.add_argument("--users", type=Path, required=True)
    p.add_argument("--assets", type=Path, required=True)
    p.add_argument("--W", dest="W", type=Path, help="portfolio matrix, for held-asset masking")
    p.add_argument("--method", choices=METHODS, default="hybrid")
    _add_ranking(p)

    p = sub.add_parser("bench", help="scaling benchmark of the scorers")
    _add_common(p)
    p.add_argument("--sizes", type=_sizes, default=[(200, 250), (200, 500), (400, 500)])
    p.add_argument("--methods", dest="scorers", default="vectorized", help="comma list of naive,vectorized")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--min-time", type=float, default=0.2)

    p = sub.add_parser("plot", help="histogram and risk-return plot data from a pipeline run")
    _add_common(p)
    p.add_argument("--run-dir", type=Path, required=True)
    p.add_argument("--users", default=None, help="comma list of user ids")
    p.add_argument("--method", choices=METHODS, default="hybrid")
    p.add_argument("--no-svg", action="store_true")

    p = sub.add_parser("pipeline", help="run every stage end to end")
    _add_common(p)
    p.add_argument("--prices", default=S)
    p.add_argument("--snapshots", default=S)
    p.add_argument("--simulate", action="store_true", help="generate synthetic inputs first")
    p.add_argument("--plots", action="store_true", help="also emit plot data")
    p.add_argument("--methods", type=lambda s: s.split(","), default=S)
    p.add_argument("--score-method", choices=["naive", "vectorized"], default=S)
    p.add_argument("--eval-users", type=int, default=S)
    p.add_argument("--forced-gammas", type=_floats, default=S)
    p.add_argument("--points", type=int, default=S, dest="frontier_points")
    p.add_argument("--default-gamma", type=float, default=S)
    p.add_argument("--timings", action="store_true", default=S, dest="record_timings")
    _add_decay(p)
    _add_bounds(p)
    _add_windows(p)
    _add_ranking(p)
    _add_synth(p)
    return parser


_SYNTH_FIELDS = {f.name for f in dataclasses.fields(SynthConfig)}
_PIPE_FIELDS = {f.name for f in dataclasses.fields(PipelineConfig)}


def _settings(args) -> tuple[PipelineConfig, SynthConfig]:
    """Merge defaults, the JSON config and explicit flags."""
    pipe: dict = {}
    synth: dict = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"cannot read config: {exc}", args.config) from None
        if not isinstance(data, dict):
            raise ParseError("config must be a JSON object", args.config)
        synth.update(data.pop("synth", {}))
        pipe.update(data)
    flags = vars(args)
    for key, value in flags.items():
        if key in _PIPE_FIELDS:
            pipe[key] = value
        if key in _SYNTH_FIELDS:
            synth[key] = value
    if "seed" in pipe:
        synth.setdefault("seed", pipe["seed"])
    if synth.get("assets_per_user") == 0:
        synth["assets_per_user"] = None
    for key in ("idio_vol", "gamma_range", "gamma_choices", "gamma_bounds"):
        if key in synth:
            synth[key] = tuple(synth[key])
    if "start_date" in synth and isinstance(synth["start_date"], str):
        import datetime as dt

        synth["start_date"] = dt.date.fromisoformat(synth["start_date"])
    try:
        return PipelineConfig.from_dict(pipe), SynthConfig(**synth)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"invalid settings: {exc}") from None


def _out(cfg: PipelineConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args, cfg: PipelineConfig, synth: SynthConfig) -> None:
    out = _out(cfg)
    simulate(out, synth, DecayConfig(cfg.half_life, cfg.ridge_epsilon))


def simulate(out: Path, synth: SynthConfig, decay: DecayConfig) -> None:
    prices = generate_prices(synth)
    history = io.prices_to_returns(prices)
    moments = compute_moments(history, decay)
    store, true_gammas = generate_users(synth, moments)
    io.write_prices(prices, out / "prices.csv")
    io.write_snapshots(store, out / "snapshots.csv")
    io.write_gammas(out / "true_gammas.csv", sorted(true_gammas.items()))


def cmd_moments(args, cfg, synth):
    out = _out(cfg)
    history = io.prices_to_returns(io.read_prices(cfg.prices), cfg.prices)
    io.write_moments(out / "moments", compute_moments(history, DecayConfig(cfg.half_life, cfg.ridge_epsilon)))


def cmd_frontier(args, cfg, synth):
    out = _out(cfg)
    m = io.read_moments(args.moments)
    frontier = compute_frontier(m, log_gamma_grid(cfg.frontier_points, cfg.gamma_min, cfg.gamma_max))
    write_frontier(out, frontier)
    if args.svg:
        write_frontier_svg(out / "frontier.svg", frontier)


def cmd_gamma(args, cfg, synth):
    out = _out(cfg)
    m = io.read_moments(args.moments)
    store = io.read_snapshots(cfg.snapshots)
    shared_universe(m, store)
    _, _, t_gamma = cfg.windows(store)
    rows = estimate_gammas(
        store,
        m,
        t_gamma,
        store.users,
        gamma_min=cfg.gamma_min,
        gamma_max=cfg.gamma_max,
        default_gamma=cfg.default_gamma,
    )
    io.write_ids(out / "users.txt", store.users)
    io.write_gammas(out / "gammas.csv", rows)


def cmd_cf(args, cfg, synth):
    out = _out(cfg)
    m = io.read_moments(args.moments)
    store = io.read_snapshots(cfg.snapshots)
    shared_universe(m, store)
    t_r, t_w, _ = cfg.windows(store)
    R = build_R(store, t_r, m.assets)
    W = build_W(store, t_w, m.assets)
    C = transition(cocount(R))
    io.write_ids(out / "users.txt", W.users)
    io.write_ids(out / "assets.txt", W.assets)
    io.write_matrix(out / "R.txt", R.matrix)
    io.write_matrix(out / "W.txt", W.matrix)
    io.write_matrix(out / "C.txt", C)
    io.write_matrix(out / "Y_cf.txt", cf_scores(W, C))


def cmd_score(args, cfg, synth):
    out = _out(cfg)
    m = io.read_moments(args.moments)
    W = io.read_matrix(args.W)
    users = io.read_ids(args.users)
    table = io.read_gammas(args.gammas)
    missing = [u for u in users if u not in table]
    if missing:
        raise ParseError(f"no gamma for {len(missing)} users, e.g. {missing[0]}", args.gammas)
    gammas = np.array([table[u] for u in users])
    io.write_matrix(out / "Y_mpt.txt", score(cfg.score_method, W, gammas, m, cfg.workers))


def cmd_recommend(args, cfg, synth):
    out = _out(cfg)
    Y_cf = io.read_matrix(args.y_cf)
    Y_mpt = io.read_matrix(args.y_mpt)
    users = io.read_ids(args.users)
    assets = io.read_ids(args.assets)
    held = None
    if cfg.mask_held and args.W is not None:
        held = io.read_matrix(args.W) > 0
    lists = recommend(
        args.method, Y_cf, Y_mpt, k=cfg.k, n=cfg.top_n, held=held, users=users, assets=assets, seed=cfg.seed
    )
    write_recommendations(out / f"recommendations_{args.method}.csv", lists)


def cmd_bench(args, cfg, synth):
    out = _out(cfg)
    methods = [m for m in args.scorers.split(",") if m]
    rows = bench.run(args.sizes, methods, repetitions=args.repetitions, min_time=args.min_time, seed=cfg.seed)
    with open(out / "bench.csv", "w") as f:
        f.write("m,n,method,seconds\n")
        for m, n, method, seconds in rows:
            line = f"{m},{n},{method},{io.fmt(seconds)}"
            f.write(line + "\n")
            print(line)


def cmd_plot(args, cfg, synth):
    users = args.users.split(",") if args.users else None
    emit_plots(
        args.run_dir,
        plot_dir=Path(cfg.out_dir) / "plots" if "out_dir" in vars(args) else None,
        users=users,
        method=args.method,
        gamma_min=cfg.gamma_min,
        gamma_max=cfg.gamma_max,
        svg=not args.no_svg,
    )


def cmd_pipeline(args, cfg, synth):
    out = _out(cfg)
    if args.simulate:
        inputs = out / "inputs"
        inputs.mkdir(exist_ok=True)
        simulate(inputs, synth, DecayConfig(cfg.half_life, cfg.ridge_epsilon))
        cfg = dataclasses.replace(cfg, prices=str(inputs / "prices.csv"), snapshots=str(inputs / "snapshots.csv"))
    result = run_pipeline(cfg)
    if args.plots:
        emit_plots(out, gamma_min=cfg.gamma_min, gamma_max=cfg.gamma_max)
    log.info("wrote %d files to %s", len(result.manifest["files"]), out)


COMMANDS = {
    "simulate": cmd_simulate,
    "moments": cmd_moments,
    "frontier": cmd_frontier,
    "gamma": cmd_gamma,
    "cf": cmd_cf,
    "score": cmd_score,
    "recommend": cmd_recommend,
    "bench": cmd_bench,
    "plot": cmd_plot,
    "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg, synth = _settings(args)
        COMMANDS[args.command](args, cfg, synth)
    except SolverDivergence as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (MptcfError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
