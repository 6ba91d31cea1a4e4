import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mptcf import io
from mptcf.cf import SnapshotStore
from mptcf.errors import ParseError
from mptcf.market_model import MomentEstimates


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestMatrixFormat:
    @given(M=hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=6),
                        elements=st.floats(allow_nan=False, allow_infinity=False)))
    @settings(max_examples=50, deadline=None)
    def test_round_trip_is_exact(self, tmp_path_factory, M):
        p = tmp_path_factory.mktemp("m") / "M.txt"
        io.write_matrix(p, M)
        back = io.read_matrix(p)
        assert back.shape == M.shape
        assert np.array_equal(back, M)

    def test_header_and_layout(self, tmp_path):
        p = tmp_path / "M.txt"
        io.write_matrix(p, np.array([[0.1, 2.0], [3.0, -4.5]]))
        assert p.read_text() == "2 2\n0.10000000000000001 2\n3 -4.5\n"

    def test_empty(self, tmp_path):
        p = tmp_path / "M.txt"
        io.write_matrix(p, np.zeros((0, 3)))
        assert io.read_matrix(p).shape == (0, 3)

    def test_declared_shape_checked(self, tmp_path):
        with pytest.raises(ParseError):
            io.read_matrix(write(tmp_path, "M.txt", "2 2\n1 2\n"))
        with pytest.raises(ParseError):
            io.read_matrix(write(tmp_path, "N.txt", "x\n"))


class TestPrices:
    def test_round_trip(self, tmp_path):
        text = "date,asset_id,close\n2020-01-01,A,100\n2020-01-01,B,50\n2020-01-02,A,110\n2020-01-02,B,45\n2020-01-03,A,99\n2020-01-03,B,45\n"
        prices = io.read_prices(write(tmp_path, "p.csv", text))
        h = io.prices_to_returns(prices)
        assert h.assets == ["A", "B"]
        assert h.dates == [dt.date(2020, 1, 2), dt.date(2020, 1, 3)]
        np.testing.assert_allclose(h.returns, [[0.1, -0.1], [-0.1, 0.0]], atol=1e-15)
        io.write_prices(prices, tmp_path / "q.csv")
        assert io.read_prices(tmp_path / "q.csv").equals(prices)

    @pytest.mark.parametrize(
        "body,line",
        [
            ("2020-01-01,A,1\n2020-13-01,A,2\n", 3),
            ("2020-01-01,A,1\n2020-01-02,A,oops\n", 3),
            ("2020-01-01,A,1\n2020-01-02,A\n", 3),
            ("2020-01-01,A,-5\n", 2),
            ("2020-01-01,A,nan\n", 2),
            ("2020-01-01,A,1\n2020-01-01,A,2\n", 3),
        ],
    )
    def test_errors_carry_line_numbers(self, tmp_path, body, line):
        with pytest.raises(ParseError) as info:
            io.read_prices(write(tmp_path, "p.csv", "date,asset_id,close\n" + body))
        assert info.value.line == line
        assert f"p.csv:{line}:" in str(info.value)

    def test_bad_header(self, tmp_path):
        with pytest.raises(ParseError) as info:
            io.read_prices(write(tmp_path, "p.csv", "day,asset,px\n"))
        assert info.value.line == 1

    def test_incomplete_panel(self, tmp_path):
        text = "date,asset_id,close\n2020-01-01,A,1\n2020-01-01,B,1\n2020-01-02,A,1\n2020-01-03,A,1\n2020-01-03,B,1\n"
        with pytest.raises(ParseError):
            io.prices_to_returns(io.read_prices(write(tmp_path, "p.csv", text)))


class TestSnapshots:
    def test_round_trip(self, tmp_path):
        s = SnapshotStore.from_records([("u1", "A", dt.date(2020, 1, 1), 0.1), ("u2", "B", dt.date(2020, 1, 2), 1e6 / 3)])
        io.write_snapshots(s, tmp_path / "s.csv")
        back = io.read_snapshots(tmp_path / "s.csv")
        assert back.records.equals(s.records)

    @pytest.mark.parametrize(
        "body,line",
        [("2020-01-01,u,A,-1\n", 2), ("2020-01-01,u,A,1\n2020-01-01,u,A,2\n", 3), ("01/02/2020,u,A,1\n", 2)],
    )
    def test_rejections(self, tmp_path, body, line):
        with pytest.raises(ParseError) as info:
            io.read_snapshots(write(tmp_path, "s.csv", "date,user_id,asset_id,market_value\n" + body))
        assert info.value.line == line


def test_moments_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 4))
    m = MomentEstimates(rng.normal(size=4), A @ A.T, ["w", "x", "y", "z"])
    io.write_moments(tmp_path / "mom", m)
    back = io.read_moments(tmp_path / "mom")
    assert back.assets == m.assets
    assert np.array_equal(back.mu, m.mu) and np.array_equal(back.sigma, m.sigma)


def test_gammas_round_trip(tmp_path):
    io.write_gammas(tmp_path / "g.csv", [("u1", 1 / 3, 0, 5, "estimated"), ("u2", 20.9, 0, 0, "default")])
    assert (tmp_path / "g.csv").read_text().splitlines()[0] == "user_id,gamma,clamped_days,n_days,source"
    assert io.read_gammas(tmp_path / "g.csv") == {"u1": 1 / 3, "u2": 20.9}
    io.write_gammas(tmp_path / "h.csv", [("u1", 2.0)])
    assert (tmp_path / "h.csv").read_text() == "user_id,gamma\nu1,2\n"


def test_ids_round_trip(tmp_path):
    io.write_ids(tmp_path / "ids.txt", ["b", "a", "c"])
    assert io.read_ids(tmp_path / "ids.txt") == ["b", "a", "c"]
