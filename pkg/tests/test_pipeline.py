import csv
import filecmp
import json
from pathlib import Path

import numpy as np
import pytest

from mptcf import cli, io
from mptcf.errors import SolverDivergence, UniverseMismatch
from mptcf.pipeline import PipelineConfig, run_pipeline
from mptcf.plots import emit_plots, gamma_histogram, post_addition

SIM_ARGS = ["--n-assets", "25", "--n-users", "60", "--n-days", "260", "--seed", "7"]


def tree(root: Path) -> dict[str, bytes]:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def read_recs(path: Path) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.setdefault(row["user_id"], []).append(row["asset_id"])
    return out


@pytest.fixture(scope="module")
def inputs(tmp_path_factory):
    d = tmp_path_factory.mktemp("inputs")
    assert cli.main(["simulate", "--out-dir", str(d), *SIM_ARGS]) == 0
    return d


def config(inputs, out, **kw):
    return PipelineConfig(prices=str(inputs / "prices.csv"), snapshots=str(inputs / "snapshots.csv"), out_dir=str(out), **kw)


@pytest.fixture(scope="module")
def run(inputs, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    result = run_pipeline(config(inputs, out))
    return out, result


class TestSimulate:
    def test_files(self, inputs):
        assert (inputs / "prices.csv").read_text().startswith("date,asset_id,close\n")
        assert (inputs / "snapshots.csv").read_text().startswith("date,user_id,asset_id,market_value\n")
        assert len(io.read_gammas(inputs / "true_gammas.csv")) == 60

    def test_rerun_identical(self, inputs, tmp_path):
        assert cli.main(["simulate", "--out-dir", str(tmp_path), *SIM_ARGS]) == 0
        assert tree(tmp_path) == tree(inputs)


class TestPipeline:
    def test_artifacts(self, run):
        out, _ = run
        names = set(tree(out))
        for name in ["moments/mu.txt", "moments/sigma.txt", "moments/assets.txt", "frontier.csv",
                     "frontier_weights.txt", "gammas.csv", "R.txt", "W.txt", "C.txt", "Y_cf.txt",
                     "Y_mpt.txt", "Y_hybrid.txt", "users.txt", "assets.txt", "manifest.json"]:
            assert name in names
        for method in ("random", "mpt", "cf", "hybrid"):
            assert f"recommendations_{method}.csv" in names

    def test_manifest(self, run):
        out, result = run
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest == result.manifest
        assert manifest["config"]["seed"] == 0
        assert "timings" not in manifest
        assert sorted(manifest["files"]) == sorted(n for n in tree(out) if n != "manifest.json")
        assert set(manifest["inputs"]) == {"prices", "snapshots"}

    def test_timings_on_request(self, inputs, tmp_path):
        result = run_pipeline(config(inputs, tmp_path, record_timings=True))
        assert {"moments", "frontier", "gamma", "cf", "score", "recommend"} <= set(result.manifest["timings"])

    def test_deterministic_across_workers(self, inputs, run, tmp_path):
        out, _ = run
        run_pipeline(config(inputs, tmp_path / "a", workers=3))
        assert tree(tmp_path / "a") == tree(out)

    def test_hybrid_lists_follow_contract(self, run):
        out, result = run
        users = io.read_ids(out / "users.txt")
        assets = io.read_ids(out / "assets.txt")
        Y_cf, Y_mpt, W = io.read_matrix(out / "Y_cf.txt"), io.read_matrix(out / "Y_mpt.txt"), io.read_matrix(out / "W.txt")
        for rec in result.recommendations["hybrid"]:
            i = users.index(rec.user_id)
            eligible = [j for j in range(len(assets)) if W[i, j] == 0]
            shortlist = sorted(eligible, key=lambda j: (-Y_cf[i, j], j))[:20]
            expected = sorted(shortlist, key=lambda j: (-Y_mpt[i, j], j))[:5]
            assert rec.asset_ids == [assets[j] for j in expected]

    def test_full_cutoff_hybrid_equals_mpt(self, inputs, tmp_path):
        result = run_pipeline(config(inputs, tmp_path, k=25, top_n=10, methods=["mpt", "hybrid"]))
        for a, b in zip(result.recommendations["mpt"], result.recommendations["hybrid"]):
            assert a.asset_ids == b.asset_ids

    def test_forced_gammas_on_eval_users(self, inputs, tmp_path):
        result = run_pipeline(config(inputs, tmp_path, eval_users=8, forced_gammas=[1, 20, 100], top_n=20))
        with open(tmp_path / "gammas.csv", newline="") as f:
            forced = [r for r in csv.DictReader(f) if r["source"] == "forced"]
        assert len(forced) == 8
        assert {float(r["gamma"]) for r in forced} <= {1.0, 20.0, 100.0}
        W = io.read_matrix(tmp_path / "W.txt")
        users = io.read_ids(tmp_path / "users.txt")
        for method, lists in result.recommendations.items():
            assert len(lists) == 8
            for r in lists:
                eligible = int((W[users.index(r.user_id)] == 0).sum())
                assert len(r.items) == min(20, eligible)
            assert {r.user_id for r in lists} == {r["user_id"] for r in forced}

    def test_held_assets_masked(self, run):
        out, result = run
        W = io.read_matrix(out / "W.txt")
        users, assets = io.read_ids(out / "users.txt"), io.read_ids(out / "assets.txt")
        for method, lists in result.recommendations.items():
            for rec in lists:
                held = {assets[j] for j in np.nonzero(W[users.index(rec.user_id)])[0]}
                assert not held & set(rec.asset_ids)

    def test_disjoint_universes(self, tmp_path):
        (tmp_path / "p.csv").write_text("date,asset_id,close\n2020-01-01,A,1\n2020-01-02,A,2\n2020-01-03,A,3\n")
        (tmp_path / "s.csv").write_text("date,user_id,asset_id,market_value\n2020-01-03,u,B,1\n")
        cfg = PipelineConfig(prices=str(tmp_path / "p.csv"), snapshots=str(tmp_path / "s.csv"), out_dir=str(tmp_path / "o"))
        with pytest.raises(UniverseMismatch):
            run_pipeline(cfg)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PipelineConfig.from_dict({"nope": 1})
        with pytest.raises(ValueError):
            PipelineConfig(methods=["magic"])
        with pytest.raises(ValueError):
            PipelineConfig(gamma_min=10, gamma_max=1)


class TestStagedCli:
    """Running the stages one by one reproduces the pipeline's files."""

    def test_stages_match_pipeline(self, inputs, run, tmp_path):
        out, _ = run
        d = str(tmp_path)
        prices, snaps = str(inputs / "prices.csv"), str(inputs / "snapshots.csv")
        assert cli.main(["moments", "--prices", prices, "--out-dir", d]) == 0
        assert cli.main(["frontier", "--moments", f"{d}/moments", "--out-dir", d, "--svg"]) == 0
        assert cli.main(["gamma", "--moments", f"{d}/moments", "--snapshots", snaps, "--out-dir", d]) == 0
        assert cli.main(["cf", "--moments", f"{d}/moments", "--snapshots", snaps, "--out-dir", d]) == 0
        assert cli.main(["score", "--moments", f"{d}/moments", "--W", f"{d}/W.txt", "--users", f"{d}/users.txt",
                         "--gammas", f"{d}/gammas.csv", "--out-dir", d]) == 0
        for method in ("hybrid", "mpt", "cf", "random"):
            assert cli.main(["recommend", "--y-cf", f"{d}/Y_cf.txt", "--y-mpt", f"{d}/Y_mpt.txt", "--users",
                             f"{d}/users.txt", "--assets", f"{d}/assets.txt", "--W", f"{d}/W.txt",
                             "--method", method, "--out-dir", d]) == 0
        for name in ["moments/mu.txt", "moments/sigma.txt", "frontier.csv", "frontier_weights.txt", "gammas.csv",
                     "R.txt", "W.txt", "C.txt", "Y_cf.txt", "Y_mpt.txt", "recommendations_hybrid.csv",
                     "recommendations_mpt.csv", "recommendations_cf.csv", "recommendations_random.csv"]:
            assert filecmp.cmp(tmp_path / name, out / name, shallow=False), name
        assert (tmp_path / "frontier.svg").read_text().lstrip().startswith("<?xml")

    def test_naive_score_matches(self, run, tmp_path):
        out, _ = run
        args = ["score", "--moments", str(out / "moments"), "--W", str(out / "W.txt"), "--users", str(out / "users.txt"),
                "--gammas", str(out / "gammas.csv"), "--out-dir", str(tmp_path), "--method", "naive"]
        assert cli.main(args) == 0
        np.testing.assert_allclose(io.read_matrix(tmp_path / "Y_mpt.txt"), io.read_matrix(out / "Y_mpt.txt"), rtol=1e-9)

    def test_pipeline_subcommand_reruns_identically(self, tmp_path):
        args = ["pipeline", "--simulate", "--n-assets", "15", "--n-users", "30", "--n-days", "200", "--plots"]
        assert cli.main([*args, "--out-dir", str(tmp_path / "a")]) == 0
        assert cli.main([*args, "--out-dir", str(tmp_path / "b"), "--workers", "2"]) == 0
        assert tree(tmp_path / "a") == tree(tmp_path / "b")

    def test_bench(self, tmp_path, capsys):
        assert cli.main(["bench", "--sizes", "5x6", "--methods", "naive,vectorized", "--min-time", "0.001",
                         "--out-dir", str(tmp_path)]) == 0
        lines = (tmp_path / "bench.csv").read_text().splitlines()
        assert lines[0] == "m,n,method,seconds"
        assert [l.split(",")[2] for l in lines[1:]] == ["naive", "vectorized"]


class TestCliErrors:
    def test_config_file_and_flag_precedence(self, inputs, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"prices": str(inputs / "prices.csv"), "snapshots": str(inputs / "snapshots.csv"),
                                   "top_n": 3, "k": 4, "methods": ["hybrid"]}))
        assert cli.main(["pipeline", "--config", str(cfg), "--top-n", "2", "--out-dir", str(tmp_path / "o")]) == 0
        recs = read_recs(tmp_path / "o" / "recommendations_hybrid.csv")
        assert all(len(v) == 2 for v in recs.values())
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert manifest["config"]["k"] == 4

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"bogus": 1}')
        assert cli.main(["pipeline", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2

    def test_unreadable_config(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("{not json")
        assert cli.main(["moments", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2

    def test_parse_error(self, tmp_path, capsys):
        bad = tmp_path / "p.csv"
        bad.write_text("date,asset_id,close\n2020-01-01,A,1\n2020-01-02,A,x\n")
        assert cli.main(["moments", "--prices", str(bad), "--out-dir", str(tmp_path)]) == 2
        assert "p.csv:3:" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert cli.main(["moments", "--prices", str(tmp_path / "none.csv"), "--out-dir", str(tmp_path)]) == 2

    def test_bad_flag_value(self):
        with pytest.raises(SystemExit) as info:
            cli.main(["recommend", "--method", "astrology"])
        assert info.value.code == 2

    def test_solver_failure_exit_code(self, run, tmp_path, monkeypatch, capsys):
        out, _ = run

        def diverge(*a, **k):
            raise SolverDivergence("no convergence", gamma=1.0)

        monkeypatch.setattr(cli, "compute_frontier", diverge)
        assert cli.main(["frontier", "--moments", str(out / "moments"), "--out-dir", str(tmp_path)]) == 3
        assert "solver failure" in capsys.readouterr().err


class TestPlots:
    def test_histogram_single_gamma_one_bin(self):
        edges, counts = gamma_histogram([20.9] * 50)
        assert counts.sum() == 50 and np.count_nonzero(counts) == 1
        assert edges[np.argmax(counts)] <= 20.9 < edges[np.argmax(counts) + 1]

    def test_histogram_bins(self):
        edges, counts = gamma_histogram([1e-3, 0.5, 1e4])
        assert len(edges) == 29 and counts.sum() == 3
        assert counts[0] == 1 and counts[-1] == 1

    def test_empty_user_set(self, tmp_path):
        written = emit_plots(tmp_path, plot_dir=tmp_path / "plots")
        assert written == [tmp_path / "plots" / "gamma_hist.csv"]
        assert (tmp_path / "plots" / "gamma_hist.csv").read_text() == ""
        assert cli.main(["plot", "--run-dir", str(tmp_path)]) == 0

    def test_risk_return_rows(self, run, tmp_path):
        out, _ = run
        emit_plots(out, plot_dir=tmp_path, method="mpt", n_candidates=3, svg=False)
        files = sorted(tmp_path.glob("risk_return_*.csv"))
        assert files
        gammas = io.read_gammas(out / "gammas.csv")
        for f in files:
            with open(f, newline="") as fh:
                rows = list(csv.DictReader(fh))
            kinds = [r["kind"] for r in rows]
            assert kinds.count("user") == 1 and kinds.count("best") == 1
            cand = [float(r["utility"]) for r in rows if r["kind"] == "candidate"]
            assert cand == sorted(cand, reverse=True)
            best = [float(r["utility"]) for r in rows if r["kind"] == "best"][0]
            # no single addition beats the optimal portfolio at the user's gamma
            assert all(u <= best + 1e-12 for u in cand)
            frontier = [(float(r["risk"]), float(r["expected_return"])) for r in rows if r["kind"] == "frontier"]
            assert all(b[0] <= a[0] + 1e-12 for a, b in zip(frontier, frontier[1:]))
            assert f.stem.removeprefix("risk_return_") in gammas

    def test_svg_deterministic(self, run, tmp_path):
        out, _ = run
        emit_plots(out, plot_dir=tmp_path / "a")
        emit_plots(out, plot_dir=tmp_path / "b")
        assert tree(tmp_path / "a") == tree(tmp_path / "b")
        assert any(p.suffix == ".svg" for p in (tmp_path / "a").iterdir())


def test_post_addition():
    w = np.array([0.25, 0.75, 0.0])
    np.testing.assert_allclose(post_addition(w, 0.5, 2), [0.125, 0.375, 0.5])
    np.testing.assert_allclose(post_addition(np.zeros(3), 0.0, 1), [0.0, 1.0, 0.0])
