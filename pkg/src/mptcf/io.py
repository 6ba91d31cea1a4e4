"""Text file formats shared by the CLI stages.

* prices: ``date,asset_id,close``
* snapshots: ``date,user_id,asset_id,market_value``
* matrices: first line ``rows cols``, then one whitespace-separated row per line
* id lists: one identifier per line

Floats are written with 17 significant digits so every file round-trips exactly.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .cf import SnapshotStore
from .errors import ParseError
from .market_model import MomentEstimates, ReturnHistory, returns_from_prices

PRICE_HEADER = ["date", "asset_id", "close"]
SNAPSHOT_HEADER = ["date", "user_id", "asset_id", "market_value"]
FLOAT_FMT = "%.17g"


def fmt(x: float) -> str:
    return FLOAT_FMT % x


def _rows(path: Path, header: list[str]) -> Iterable[tuple[int, list[str]]]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        first = next(reader, None)
        if first is None:
            raise ParseError("empty file", path, 1)
        if [c.strip() for c in first] != header:
            raise ParseError(f"expected header {','.join(header)!r}, got {','.join(first)!r}", path, 1)
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, reader.line_num)
            yield reader.line_num, [c.strip() for c in row]


def _date(text: str, path, line) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise ParseError(f"bad ISO-8601 date {text!r}", path, line) from None


def _number(text: str, path, line) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"bad number {text!r}", path, line) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite number {text!r}", path, line)
    return value


def read_prices(path: str | Path) -> pd.DataFrame:
    """Long-format close prices, validated."""
    path = Path(path)
    dates, assets, closes = [], [], []
    seen = set()
    for line, (d, a, c) in _rows(path, PRICE_HEADER):
        day = _date(d, path, line)
        close = _number(c, path, line)
        if close <= 0:
            raise ParseError(f"close price must be positive, got {c}", path, line)
        if (day, a) in seen:
            raise ParseError(f"duplicate price for {a} on {day}", path, line)
        seen.add((day, a))
        dates.append(day)
        assets.append(a)
        closes.append(close)
    return pd.DataFrame({"date": dates, "asset_id": assets, "close": closes})


def prices_to_returns(prices: pd.DataFrame, path: str | Path | None = None) -> ReturnHistory:
    """Simple returns from a complete date x asset close panel."""
    panel = prices.pivot(index="date", columns="asset_id", values="close").sort_index()
    if panel.isna().to_numpy().any():
        missing = panel.isna().stack()
        d, a = missing[missing].index[0]
        raise ParseError(f"incomplete price panel: no close for {a} on {d}", path)
    if len(panel) < 3:
        raise ParseError(f"need at least 3 price dates for 2 returns, got {len(panel)}", path)
    closes = panel.to_numpy(dtype=float)
    dates = [pd.Timestamp(d).date() for d in panel.index]
    return ReturnHistory(dates[1:], [str(a) for a in panel.columns], returns_from_prices(closes))


def write_prices(prices: pd.DataFrame, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        f.write(",".join(PRICE_HEADER) + "\n")
        for d, a, c in prices[PRICE_HEADER].itertuples(index=False):
            f.write(f"{_iso(d)},{a},{fmt(c)}\n")


def _iso(d) -> str:
    if isinstance(d, dt.date):
        return d.isoformat()
    return pd.Timestamp(d).date().isoformat()


def read_snapshots(path: str | Path) -> SnapshotStore:
    path = Path(path)
    dates, users, assets, values = [], [], [], []
    seen = set()
    for line, (d, u, a, v) in _rows(path, SNAPSHOT_HEADER):
        day = _date(d, path, line)
        value = _number(v, path, line)
        if value < 0:
            raise ParseError(f"negative market value {v}", path, line)
        key = (u, a, day)
        if key in seen:
            raise ParseError(f"duplicate snapshot for user {u}, asset {a} on {day}", path, line)
        seen.add(key)
        dates.append(day)
        users.append(u)
        assets.append(a)
        values.append(value)
    frame = pd.DataFrame({"date": dates, "user_id": users, "asset_id": assets, "market_value": values})
    return SnapshotStore(frame)


def write_snapshots(store: SnapshotStore, path: str | Path) -> None:
    frame = store.records.sort_values(["date", "user_id", "asset_id"], kind="stable")
    dates = np.datetime_as_string(frame["date"].to_numpy().astype("datetime64[D]"))
    with open(path, "w", newline="") as f:
        f.write(",".join(SNAPSHOT_HEADER) + "\n")
        for d, u, a, v in zip(dates, frame["user_id"], frame["asset_id"], frame["market_value"]):
            f.write(f"{d},{u},{a},{fmt(v)}\n")


def write_matrix(path: str | Path, M: np.ndarray) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    rows, cols = M.shape
    with open(path, "w") as f:
        f.write(f"{rows} {cols}\n")
        if rows and cols:
            np.savetxt(f, M, fmt=FLOAT_FMT, delimiter=" ")


def read_matrix(path: str | Path) -> np.ndarray:
    path = Path(path)
    with open(path) as f:
        head = f.readline().split()
        try:
            rows, cols = int(head[0]), int(head[1])
        except (IndexError, ValueError):
            raise ParseError("first line must be 'rows cols'", path, 1) from None
        if rows == 0 or cols == 0:
            return np.zeros((rows, cols))
        try:
            data = np.loadtxt(f, dtype=float, ndmin=2)
        except ValueError as exc:
            raise ParseError(f"bad matrix body: {exc}", path) from None
    if data.shape != (rows, cols):
        raise ParseError(f"declared {rows}x{cols}, found {data.shape[0]}x{data.shape[1]}", path)
    return data


def write_ids(path: str | Path, ids: Sequence[str]) -> None:
    with open(path, "w") as f:
        for i in ids:
            f.write(f"{i}\n")


def read_ids(path: str | Path) -> list[str]:
    with open(path) as f:
        return [line.strip() for line in f if line.strip()]


def write_moments(directory: str | Path, m: MomentEstimates) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_ids(directory / "assets.txt", m.assets)
    write_matrix(directory / "mu.txt", m.mu[None, :])
    write_matrix(directory / "sigma.txt", m.sigma)


def read_moments(directory: str | Path) -> MomentEstimates:
    directory = Path(directory)
    assets = read_ids(directory / "assets.txt")
    mu = read_matrix(directory / "mu.txt").reshape(-1)
    sigma = read_matrix(directory / "sigma.txt")
    return MomentEstimates(mu, sigma, assets)


def write_gammas(path: str | Path, rows: Iterable[Sequence]) -> None:
    """``user_id,gamma`` rows, optionally followed by extra columns."""
    rows = list(rows)
    extra = len(rows[0]) - 2 if rows else 0
    header = ["user_id", "gamma", "clamped_days", "n_days", "source"][: 2 + extra]
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            cells = [str(row[0]), fmt(row[1])] + [str(c) for c in row[2:]]
            f.write(",".join(cells) + "\n")


def read_gammas(path: str | Path) -> dict[str, float]:
    path = Path(path)
    out = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[:2] != ["user_id", "gamma"]:
            raise ParseError("expected header starting with 'user_id,gamma'", path, 1)
        for row in reader:
            if row:
                out[row[0]] = _number(row[1], path, reader.line_num)
    return out
