import math

import numpy as np
import pytest

from mptcf.cf import DateRange, build_W, daily_portfolios
from mptcf.frontier import estimate_user_gamma, optimal_portfolio
from mptcf.market_model import DecayConfig, compute_moments
from mptcf.synth import SynthConfig, draw_gammas, generate_market, generate_prices, generate_users


def small(**kw):
    base = dict(n_assets=12, n_users=30, n_days=250, seed=3)
    base.update(kw)
    return SynthConfig(**base)


class TestMarket:
    def test_same_seed_same_history(self):
        a, b = generate_market(small()), generate_market(small())
        assert a.dates == b.dates and a.assets == b.assets
        assert np.array_equal(a.returns, b.returns)
        assert generate_prices(small()).equals(generate_prices(small()))

    def test_seed_matters(self):
        assert not np.array_equal(generate_market(small()).returns, generate_market(small(seed=4)).returns)

    def test_no_factors_means_uncorrelated(self):
        h = generate_market(SynthConfig(n_assets=6, n_days=5000, n_factors=0, seed=1))
        rho = np.corrcoef(h.returns, rowvar=False)
        off = rho[~np.eye(6, dtype=bool)]
        assert np.max(np.abs(off)) < 0.1

    def test_factors_induce_correlation(self):
        h = generate_market(SynthConfig(n_assets=6, n_days=2000, n_factors=1, seed=1))
        rho = np.corrcoef(h.returns, rowvar=False)
        assert np.mean(rho[~np.eye(6, dtype=bool)]) > 0.1

    def test_single_asset_sample_variance(self):
        h = generate_market(SynthConfig(n_assets=1, n_days=300, seed=2))
        m = compute_moments(h, DecayConfig(1e12, 0.0))
        assert m.sigma.shape == (1, 1)
        assert m.sigma[0, 0] == pytest.approx(np.var(h.returns[:, 0], ddof=1), rel=1e-6)

    def test_sigma_psd(self):
        m = compute_moments(generate_market(small(n_assets=40)))
        assert np.linalg.eigvalsh(m.sigma).min() >= -1e-10


@pytest.fixture(scope="module")
def market():
    return compute_moments(generate_market(small()))


class TestUsers:
    def test_same_seed_same_store(self, market):
        s1, g1 = generate_users(small(), market)
        s2, g2 = generate_users(small(), market)
        assert s1.records.equals(s2.records)
        assert g1 == g2

    def test_zero_noise_full_universe_is_optimal(self, market):
        cfg = small(noise_scale=0.0, assets_per_user=None)
        store, gammas = generate_users(cfg, market)
        W = build_W(store, DateRange(store.last_date, store.last_date), market.assets)
        for i, u in enumerate(W.users[:10]):
            np.testing.assert_allclose(W.matrix[i], optimal_portfolio(market, gammas[u]).weights, atol=1e-8)

    def test_zero_noise_round_trip(self, market):
        cfg = small(noise_scale=0.0, assets_per_user=None, gamma_law="loguniform", gamma_range=(2.0, 200.0))
        store, gammas = generate_users(cfg, market)
        days = daily_portfolios(store, DateRange.trailing(store.last_date, 30), market.assets)
        errs = [abs(estimate_user_gamma(days[u], market).gamma / g - 1) for u, g in gammas.items()]
        assert np.mean(np.array(errs) <= 0.05) >= 0.9

    def test_portfolio_rows_valid(self, market):
        store, _ = generate_users(small(), market)
        W = build_W(store, DateRange(store.dates[0], store.last_date), market.assets).matrix
        np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(W >= 0)
        assert np.all((W > 0).sum(axis=1) <= 10)

    def test_snapshot_days(self, market):
        store, _ = generate_users(small(snapshot_days=7), market)
        assert len(store.dates) == 7

    def test_choice_law(self):
        cfg = SynthConfig(gamma_law="choice")
        g = draw_gammas(cfg, 300, cfg.rng(1))
        assert set(np.unique(g)) == {1.0, 20.0, 100.0}


def test_gamma_median_near_default():
    cfg = SynthConfig(n_users=2000, seed=11)
    g = draw_gammas(cfg, cfg.n_users, cfg.rng(1))
    assert abs(np.median(g) / 20.9 - 1) <= 0.15
    assert math.log(np.median(g)) == pytest.approx(math.log(20.9), abs=0.15)


@pytest.mark.parametrize("kw", [dict(n_assets=0), dict(n_users=0), dict(gamma_law="pareto"), dict(noise_scale=-1)])
def test_invalid_config(kw):
    with pytest.raises(ValueError):
        SynthConfig(**kw)
