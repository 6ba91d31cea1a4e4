"""Optimal long-only portfolios, the efficient frontier and risk-aversion inference.

Two independent routes compute optimal portfolios:

* :func:`optimal_portfolio` solves one simplex-constrained concave QP with
  accelerated projected gradient, polished by an equality-constrained solve
  on the detected support.
* :class:`FrontierPath` traces the whole frontier at once. On a fixed support
  the optimal weights are affine in ``lam = 1 / (2 * gamma)``, so the path is a
  list of segments whose end points are found analytically (critical line).

Risk-aversion inference bisects on ``log(gamma)`` and accepts either route as
the risk oracle.
"""

from __future__ import annotations

import bisect
import datetime as dt
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import DimensionMismatch, NoValidDays, SolverDivergence
from .market_model import MomentEstimates

log = logging.getLogger(__name__)

GAMMA_MIN = 1e-3
GAMMA_MAX = 1e4
DEFAULT_GAMMA = 20.9
MAX_ITER = 10_000
KKT_TOL = 1e-8


@dataclass(frozen=True)
class FrontierPoint:
    gamma: float
    weights: np.ndarray
    risk: float
    expected_return: float
    utility_value: float
    iterations: int = 0


@dataclass(frozen=True)
class EfficientFrontier:
    points: list[FrontierPoint]
    moments: MomentEstimates

    @property
    def gammas(self) -> np.ndarray:
        return np.array([p.gamma for p in self.points])

    @property
    def risks(self) -> np.ndarray:
        return np.array([p.risk for p in self.points])

    @property
    def expected_returns(self) -> np.ndarray:
        return np.array([p.expected_return for p in self.points])


class RiskMatch(NamedTuple):
    gamma: float
    clamped: bool


@dataclass(frozen=True)
class GammaEstimate:
    gamma: float
    daily_gammas: list[tuple[dt.date, float]] = field(default_factory=list)
    clamped_days: int = 0


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{w >= 0, sum(w) = 1}``."""
    n = v.shape[0]
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, n + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def kkt_residual(mu: np.ndarray, sigma: np.ndarray, gamma: float, w: np.ndarray) -> float:
    """Stationarity residual of a feasible ``w`` for ``max mu'w - gamma w'Sw`` on the simplex.

    With gradient ``g`` and support ``S = {w > 0}`` the optimum has ``g_S``
    constant (the multiplier ``nu``) and ``g_j <= nu`` off the support. The
    residual is the worst violation of these conditions, in gradient units.
    """
    g = mu - 2.0 * gamma * (sigma @ w)
    on = w > 0
    nu = g[on].mean()
    res = float(np.max(np.abs(g[on] - nu)))
    if not on.all():
        res = max(res, float(np.max(g[~on] - nu)))
    return max(res, 0.0)


def _spectral_bound(sigma: np.ndarray) -> float:
    # Largest absolute row sum bounds the spectral radius of a symmetric matrix.
    return float(np.max(np.abs(sigma).sum(axis=1)))


def _support_solve(mu, sigma, gamma, support):
    """Maximize on the affine hull of ``support``; returns (w_S, nu) or None."""
    k = support.shape[0]
    kkt = np.empty((k + 1, k + 1))
    kkt[:k, :k] = 2.0 * gamma * sigma[np.ix_(support, support)]
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    kkt[k, k] = 0.0
    rhs = np.append(mu[support], 1.0)
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    if not np.all(np.isfinite(sol)):
        return None
    return sol[:k], sol[k]


def _polish(mu, sigma, gamma, support, tol, max_rounds=25):
    """Primal active-set iterations starting from ``support``.

    Returns a feasible weight vector meeting ``tol`` or None.
    """
    n = mu.shape[0]
    support = np.sort(np.asarray(support, dtype=int))
    for _ in range(max_rounds):
        if support.size == 0:
            return None
        solved = _support_solve(mu, sigma, gamma, support)
        if solved is None:
            return None
        ws, _ = solved
        if np.any(ws < 0):
            support = support[ws > 0]
            continue
        w = np.zeros(n)
        w[support] = ws
        w /= w.sum()
        g = mu - 2.0 * gamma * (sigma @ w)
        nu = g[support].mean()
        viol = g - nu
        viol[support] = -np.inf
        j = int(np.argmax(viol))
        if viol[j] > 0.1 * tol:
            support = np.sort(np.append(support, j))
            continue
        return w
    return None


def _argmax_return(mu: np.ndarray) -> np.ndarray:
    w = np.zeros_like(mu)
    w[int(np.argmax(mu))] = 1.0
    return w


def solve_simplex_qp(
    mu: np.ndarray,
    sigma: np.ndarray,
    gamma: float,
    *,
    tol: float = KKT_TOL,
    max_iter: int = MAX_ITER,
) -> tuple[np.ndarray, int]:
    """Maximize ``mu'w - gamma w' sigma w`` over the probability simplex.

    Accelerated projected gradient (FISTA with adaptive restart). Every few
    iterations the current support is handed to an active-set polish, which
    usually terminates the solve exactly. Returns ``(weights, iterations)``.
    """
    n = mu.shape[0]
    if gamma < 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    if n == 1:
        return np.ones(1), 0
    if gamma == 0:
        return _argmax_return(mu), 0

    lip = 2.0 * gamma * _spectral_bound(sigma)
    if lip <= 0:
        return _argmax_return(mu), 0
    step = 1.0 / lip

    def objective(w):
        return mu @ w - gamma * (w @ sigma @ w)

    x = np.full(n, 1.0 / n)
    y = x.copy()
    t = 1.0
    fx = objective(x)
    for it in range(1, max_iter + 1):
        g = mu - 2.0 * gamma * (sigma @ y)
        x_new = project_simplex(y + step * g)
        f_new = objective(x_new)
        if f_new < fx:
            # objective went down: restart momentum from the last iterate
            y = x.copy()
            t = 1.0
            continue
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, fx, t = x_new, f_new, t_new

        if it % 10 == 0 or it == 1:
            if kkt_residual(mu, sigma, gamma, x) <= tol:
                return x, it
            polished = _polish(mu, sigma, gamma, np.nonzero(x > 0)[0], tol)
            if polished is not None and kkt_residual(mu, sigma, gamma, polished) <= tol:
                return polished, it
    raise SolverDivergence(
        f"no convergence after {max_iter} iterations at gamma={gamma!r}", gamma=gamma
    )


def _point(m: MomentEstimates, gamma: float, w: np.ndarray, iterations: int = 0) -> FrontierPoint:
    var = float(w @ m.sigma @ w)
    ret = float(m.mu @ w)
    return FrontierPoint(
        gamma=float(gamma),
        weights=w,
        risk=math.sqrt(max(var, 0.0)),
        expected_return=ret,
        utility_value=ret - gamma * var,
        iterations=iterations,
    )


def optimal_portfolio(
    m: MomentEstimates, gamma: float, *, tol: float = KKT_TOL, max_iter: int = MAX_ITER
) -> FrontierPoint:
    """Utility-maximizing long-only, fully invested portfolio at risk aversion ``gamma``."""
    if m.n_assets < 1:
        raise DimensionMismatch("need at least one asset")
    w, iterations = solve_simplex_qp(m.mu, m.sigma, float(gamma), tol=tol, max_iter=max_iter)
    return _point(m, gamma, w, iterations)


def log_gamma_grid(
    n_points: int = 50, gamma_min: float = GAMMA_MIN, gamma_max: float = GAMMA_MAX
) -> np.ndarray:
    return np.logspace(math.log10(gamma_min), math.log10(gamma_max), n_points)


def compute_frontier(m: MomentEstimates, gamma_grid: Iterable[float]) -> EfficientFrontier:
    """Solve each grid value in isolation; points come back in grid order."""
    grid = [float(g) for g in gamma_grid]
    if not grid:
        raise ValueError("gamma grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("gamma grid must be strictly increasing")
    points = []
    for g in grid:
        try:
            points.append(optimal_portfolio(m, g))
        except SolverDivergence as exc:
            raise SolverDivergence(str(exc), gamma=g) from exc
    return EfficientFrontier(points, m)


@dataclass(frozen=True)
class _Segment:
    lam_lo: float
    lam_hi: float
    support: np.ndarray
    a: np.ndarray
    b: np.ndarray
    var_coef: tuple[float, float, float]
    ret_coef: tuple[float, float]


class FrontierPath:
    """Exact piecewise-affine efficient frontier over ``[gamma_min, gamma_max]``.

    Build with :meth:`trace`. Evaluation at any gamma in range costs a binary
    search plus O(1) for risk and return, O(n) for weights.
    """

    def __init__(self, moments: MomentEstimates, segments: list[_Segment], gamma_min, gamma_max):
        self.moments = moments
        self.segments = segments
        self.gamma_min = gamma_min
        self.gamma_max = gamma_max
        self._starts = [s.lam_lo for s in segments]

    def __len__(self):
        return len(self.segments)

    @classmethod
    def trace(
        cls,
        m: MomentEstimates,
        gamma_min: float = GAMMA_MIN,
        gamma_max: float = GAMMA_MAX,
    ) -> "FrontierPath":
        if not 0 < gamma_min < gamma_max:
            raise ValueError("need 0 < gamma_min < gamma_max")
        mu, sigma = m.mu, m.sigma
        n = m.n_assets
        lam_lo = 0.5 / gamma_max
        lam_hi = 0.5 / gamma_min
        scale = float(np.max(np.abs(mu))) + float(np.max(np.abs(np.diag(sigma))))

        def support_at(lam):
            w, _ = solve_simplex_qp(mu, sigma, 0.5 / lam)
            return np.nonzero(w > 0)[0]

        def affine(support):
            k = support.shape[0]
            kkt = np.zeros((k + 1, k + 1))
            kkt[:k, :k] = sigma[np.ix_(support, support)]
            kkt[:k, k] = 1.0
            kkt[k, :k] = 1.0
            rhs = np.zeros((k + 1, 2))
            rhs[k, 0] = 1.0
            rhs[:k, 1] = mu[support]
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
            a, nu0 = sol[:k, 0], sol[k, 0]
            b, nu1 = sol[:k, 1], sol[k, 1]
            cross = sigma[:, support]
            # slack of off-support assets: c + lam * d <= 0
            c = -(cross @ a) - nu0
            d = mu - cross @ b - nu1
            return a, b, c, d

        def next_event(support, a, b, c, d, lam):
            eps = 1e-12 * max(lam, 1e-300)
            best, kind, which = math.inf, None, None
            neg = b < 0
            if neg.any():
                hits = -a[neg] / b[neg]
                idx = np.nonzero(neg)[0]
                ok = hits > lam + eps
                if ok.any():
                    i = int(np.argmin(np.where(ok, hits, np.inf)))
                    best, kind, which = float(hits[i]), "leave", int(support[idx[i]])
            off = np.ones(n, dtype=bool)
            off[support] = False
            enter = off & (d > 0)
            if enter.any():
                hits = np.full(n, np.inf)
                hits[enter] = -c[enter] / d[enter]
                hits[hits <= lam + eps] = np.inf
                j = int(np.argmin(hits))
                if hits[j] < best:
                    best, kind, which = float(hits[j]), "enter", j
            return best, kind, which

        def valid(support, a, b, c, d, lam):
            tol = 1e-9 * (1.0 + lam * scale)
            if np.any(a + lam * b < -1e-10):
                return False
            off = np.ones(n, dtype=bool)
            off[support] = False
            return not np.any((c + lam * d)[off] > tol)

        support = support_at(lam_lo)
        lam = lam_lo
        segments: list[_Segment] = []
        pending = None
        for _ in range(20 * n + 100):
            a, b, c, d = pending if pending is not None else affine(support)
            pending = None
            lam_next, kind, which = next_event(support, a, b, c, d, lam)
            end = min(lam_next, lam_hi)
            sig_s = sigma[np.ix_(support, support)]
            var_coef = (float(a @ sig_s @ a), float(2.0 * a @ sig_s @ b), float(b @ sig_s @ b))
            ret_coef = (float(mu[support] @ a), float(mu[support] @ b))
            segments.append(_Segment(lam, end, support.copy(), a, b, var_coef, ret_coef))
            if end >= lam_hi:
                break
            if kind == "leave":
                new = support[support != which]
            else:
                new = np.sort(np.append(support, which))
            na, nb, nc, nd = affine(new)
            probe_end, _, _ = next_event(new, na, nb, nc, nd, end)
            probe = 0.5 * (end + min(probe_end, lam_hi))
            if new.size == 0 or not valid(new, na, nb, nc, nd, probe):
                log.debug("critical line degenerate at lam=%g, re-solving", end)
                new = support_at(min(end * (1.0 + 1e-6), 0.5 * (end + lam_hi)))
            else:
                pending = (na, nb, nc, nd)
            support = new
            lam = end
        else:
            raise SolverDivergence("frontier tracing did not terminate")
        return cls(m, segments, gamma_min, gamma_max)

    def _locate(self, gamma: float) -> tuple[_Segment, float]:
        if not self.gamma_min * (1 - 1e-12) <= gamma <= self.gamma_max * (1 + 1e-12):
            raise ValueError(
                f"gamma={gamma!r} outside traced range [{self.gamma_min}, {self.gamma_max}]"
            )
        lam = 0.5 / gamma
        k = bisect.bisect_right(self._starts, lam) - 1
        k = min(max(k, 0), len(self.segments) - 1)
        return self.segments[k], lam

    def variance(self, gamma: float) -> float:
        seg, lam = self._locate(gamma)
        c0, c1, c2 = seg.var_coef
        return c0 + lam * (c1 + lam * c2)

    def risk(self, gamma: float) -> float:
        return math.sqrt(max(self.variance(gamma), 0.0))

    def expected_return(self, gamma: float) -> float:
        seg, lam = self._locate(gamma)
        return seg.ret_coef[0] + lam * seg.ret_coef[1]

    def weights(self, gamma: float) -> np.ndarray:
        seg, lam = self._locate(gamma)
        w = np.zeros(self.moments.n_assets)
        w[seg.support] = np.maximum(seg.a + lam * seg.b, 0.0)
        return w / w.sum()

    def point(self, gamma: float) -> FrontierPoint:
        return _point(self.moments, gamma, self.weights(gamma))

    def breakpoints(self) -> np.ndarray:
        """Gamma values where the optimal support changes, descending."""
        return np.array([0.5 / s.lam_lo for s in self.segments[1:]])


def _bisect_log(pred: Callable[[float], bool], lo: float, hi: float, iters: int = 200) -> float:
    """Boundary of a monotone predicate on [lo, hi] in log space.

    ``pred(lo)`` is False and ``pred(hi)`` is True; returns the log of the
    smallest gamma for which ``pred`` holds, to ~1e-14 absolute in log space.
    """
    a, b = math.log(lo), math.log(hi)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if mid <= a or mid >= b or b - a < 1e-14:
            break
        if pred(math.exp(mid)):
            b = mid
        else:
            a = mid
    return 0.5 * (a + b)


def gamma_for_risk(
    m: MomentEstimates,
    target_risk: float,
    *,
    gamma_min: float = GAMMA_MIN,
    gamma_max: float = GAMMA_MAX,
    path: FrontierPath | None = None,
    risk_fn: Callable[[float], float] | None = None,
) -> RiskMatch:
    """Risk aversion whose optimal portfolio has risk ``target_risk``.

    Bisection on ``log(gamma)`` over ``[gamma_min, gamma_max]``. The frontier
    risk is non-increasing in gamma; where it is flat at the target level the
    geometric midpoint of the matching interval is returned. Targets outside
    the attainable range clamp to the nearest bound with ``clamped=True``.

    The risk oracle is ``risk_fn`` if given, else ``path.risk``, else a fresh
    :func:`optimal_portfolio` solve per evaluation.
    """
    if risk_fn is None:
        if path is not None:
            risk_fn = path.risk
        else:
            risk_fn = lambda g: optimal_portfolio(m, g).risk  # noqa: E731
    target = float(target_risk)
    match_tol = 1e-12 * max(target, 1e-12)

    top = risk_fn(gamma_min)
    if target >= top - match_tol:
        return RiskMatch(gamma_min, True)
    bottom = risk_fn(gamma_max)
    if target <= bottom + match_tol:
        return RiskMatch(gamma_max, True)

    left = _bisect_log(lambda g: risk_fn(g) <= target + match_tol, gamma_min, gamma_max)
    right = _bisect_log(lambda g: risk_fn(g) < target - match_tol, gamma_min, gamma_max)
    if right < left:
        right = left
    return RiskMatch(math.exp(0.5 * (left + right)), False)


def geometric_mean(values: Sequence[float]) -> float:
    """Order-independent geometric mean (exactly rounded log sum)."""
    if not values:
        raise ValueError("geometric mean of nothing")
    return math.exp(math.fsum(math.log(v) for v in values) / len(values))


def estimate_user_gamma(
    daily_portfolios: Mapping[dt.date, np.ndarray] | Iterable[tuple[dt.date, np.ndarray]],
    m: MomentEstimates,
    *,
    gamma_min: float = GAMMA_MIN,
    gamma_max: float = GAMMA_MAX,
    path: FrontierPath | None = None,
) -> GammaEstimate:
    """Geometric mean of the per-day risk-matching risk aversions.

    Days whose portfolio is empty are skipped. Weights are renormalized, so raw
    market values may be passed directly.
    """
    items = daily_portfolios.items() if isinstance(daily_portfolios, Mapping) else daily_portfolios
    cache: dict[float, RiskMatch] = {}
    daily: list[tuple[dt.date, float]] = []
    clamped = 0
    for day, w in items:
        w = np.asarray(w, dtype=float)
        if w.shape != (m.n_assets,):
            raise DimensionMismatch(f"portfolio of shape {w.shape} for {m.n_assets} assets")
        total = w.sum()
        if not total > 0:
            continue
        w = w / total
        risk = math.sqrt(max(float(w @ m.sigma @ w), 0.0))
        match = cache.get(risk)
        if match is None:
            match = gamma_for_risk(m, risk, gamma_min=gamma_min, gamma_max=gamma_max, path=path)
            cache[risk] = match
        daily.append((day, match.gamma))
        clamped += match.clamped
    if not daily:
        raise NoValidDays("no day with a non-empty portfolio")
    # exp(mean(log)) may round a hair past a bound when every day sits on it
    gamma = min(max(geometric_mean([g for _, g in daily]), gamma_min), gamma_max)
    return GammaEstimate(gamma, daily, clamped)
