"""Predictive scores, innovation-density estimates and MCMC diagnostics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .kernels import LOG_2PI, mvn_logpdf_batch
from .vmem import MeanParams, mean_recursion

__all__ = [
    "MisfitError",
    "MeanCache",
    "draw_log_densities",
    "predictive_innovation_density",
    "lps",
    "lpml",
    "acf",
    "ess",
    "credible_interval",
    "DensityGrid",
    "marginal_density_grid",
    "joint_density_grid",
    "mixture_marginal_density",
    "l1_distance",
    "FitReport",
    "summarize",
]

logger = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-300


class MisfitError(RuntimeError):
    """Every draw gives zero density at some observation."""


class MeanCache:
    """Log conditional means per draw, keyed on the bytes of ``(eta, mu1)``."""

    def __init__(self, series):
        self.x = np.ascontiguousarray(np.asarray(series, dtype=float))
        self._store: dict = {}

    def __len__(self):
        return len(self._store)

    def logmeans(self, eta: MeanParams, mu1) -> Optional[np.ndarray]:
        mu1 = np.asarray(mu1, dtype=float)
        key = eta.to_vector().tobytes() + mu1.tobytes()
        if key not in self._store:
            rec = mean_recursion(eta, self.x, mu1)
            self._store[key] = None if rec.first_nonpositive is not None else np.log(rec.means)
        return self._store[key]


def _mixture_logpdf_log(y, weights, locations, scales):
    """``log sum_j w_j N(y; m_j, S_j)`` for rows of ``y``."""
    with np.errstate(divide="ignore"):
        lw = np.log(np.asarray(weights, dtype=float))
    return logsumexp(mvn_logpdf_batch(y, locations, scales) + lw[None, :], axis=1)


def draw_log_densities(draws, series, cache: Optional[MeanCache] = None) -> np.ndarray:
    """``(N, T)`` matrix of ``log f(x_t | past, draw n)``.

    Draws whose conditional means turn non-positive get a row of ``-inf``.
    """
    cache = MeanCache(series) if cache is None else cache
    x = cache.x
    logx = np.log(x)
    jac = logx.sum(axis=1)
    out = np.empty((len(draws), x.shape[0]))
    bad = 0
    for n, draw in enumerate(draws):
        logmu = cache.logmeans(draw.eta, draw.mu1)
        if logmu is None:
            out[n] = -np.inf
            bad += 1
            continue
        # log-normal density of x_t / mu_t times the Jacobian prod_h 1/mu_h collapses to
        # the normal density of log x_t - log mu_t divided by prod_h x_h
        out[n] = _mixture_logpdf_log(logx - logmu, draw.weights, draw.locations, draw.scales) - jac
    if bad:
        logger.warning("%d of %d draws give non-positive conditional means", bad, len(draws))
    return out


def predictive_innovation_density(draws, e) -> np.ndarray:
    """Posterior average of the truncated mixture density at positive points ``e``.

    Accepts one point (shape ``(d,)``) or a batch ``(n, d)``.
    """
    e = np.asarray(e, dtype=float)
    single = e.ndim == 1
    pts = np.atleast_2d(e)
    if np.any(pts <= 0):
        raise ValueError("innovation density is supported on the positive orthant")
    loge = np.log(pts)
    acc = np.zeros(pts.shape[0])
    for draw in draws:
        acc += np.exp(_mixture_logpdf_log(loge, draw.weights, draw.locations, draw.scales) - loge.sum(axis=1))
    acc /= len(draws)
    return acc[0] if single else acc


def _fsum_mean(values) -> float:
    values = np.asarray(values, dtype=float)
    return math.fsum(values.tolist()) / values.shape[0]


def lps(draws, series, cache: Optional[MeanCache] = None, log_dens=None) -> float:
    """``-(1/T) sum_t log[(1/N) sum_n f(x_t | draw n)]``; lower is better."""
    L = draw_log_densities(draws, series, cache) if log_dens is None else log_dens
    N = L.shape[0]
    per_t = logsumexp(L, axis=0) - np.log(N)
    if not np.all(np.isfinite(per_t)):
        bad = np.nonzero(~np.isfinite(per_t))[0]
        raise MisfitError(f"all draws give zero density at observations {bad[:10].tolist()}")
    return -_fsum_mean(per_t)


def lpml(draws, series, cache: Optional[MeanCache] = None, log_dens=None) -> float:
    """``-(1/T) sum_t log CPO_t`` with harmonic-mean CPO; lower is better.

    Per-draw densities are floored at ``1e-300`` before inversion.
    """
    L = draw_log_densities(draws, series, cache) if log_dens is None else log_dens
    N = L.shape[0]
    floor = np.log(DENSITY_FLOOR)
    n_floored = int(np.sum(L < floor))
    if n_floored:
        logger.warning("%d per-draw densities floored at %g", n_floored, DENSITY_FLOOR)
    L = np.maximum(L, floor)
    log_cpo = np.log(N) - logsumexp(-L, axis=0)
    return -_fsum_mean(log_cpo)


# -- diagnostics ---------------------------------------------------------------

def _centered(trace):
    x = np.asarray(trace, dtype=float)
    if x.ndim != 1 or x.shape[0] < 10:
        raise ValueError("trace must be one-dimensional with at least 10 values")
    return x - x.mean()


def _autocov(xc, lag):
    n = xc.shape[0]
    return float(np.dot(xc[: n - lag], xc[lag:])) / n


def acf(trace, max_lag: int) -> np.ndarray:
    """Sample autocorrelations at lags ``0..max_lag`` from the direct autocovariance.

    A constant trace has undefined autocorrelation beyond lag 0; those
    entries are NaN.
    """
    xc = _centered(trace)
    max_lag = min(int(max_lag), xc.shape[0] - 1)
    out = np.full(max_lag + 1, np.nan)
    out[0] = 1.0
    c0 = _autocov(xc, 0)
    if c0 == 0:
        return out
    for k in range(1, max_lag + 1):
        out[k] = _autocov(xc, k) / c0
    return out


def ess(trace) -> float:
    """Effective sample size with Geyer's initial positive sequence, capped at ``N``."""
    xc = _centered(trace)
    n = xc.shape[0]
    c0 = _autocov(xc, 0)
    if c0 == 0:
        return float(n)
    tau = -1.0
    k = 0
    while 2 * k + 1 < n:
        pair = (_autocov(xc, 2 * k) + _autocov(xc, 2 * k + 1)) / c0
        if pair <= 0:
            break
        tau += 2.0 * pair
        k += 1
    return float(min(n, n / tau)) if tau > 0 else float(n)


def credible_interval(trace, level: float = 0.95) -> tuple:
    """Equal-tailed interval from linearly interpolated (type-7) quantiles."""
    x = np.asarray(trace, dtype=float)
    tail = 0.5 * (1.0 - level)
    lo, hi = np.quantile(x, [tail, 1.0 - tail], method="linear")
    return float(lo), float(hi)


# -- density grids -------------------------------------------------------------

@dataclass(frozen=True)
class DensityGrid:
    """Density values on a grid; one axis for a marginal, two for a joint grid."""

    name: str
    axes: tuple
    values: np.ndarray

    def __post_init__(self):
        if np.any(self.values < 0):
            raise ValueError("density values must be nonnegative")
        for ax in self.axes:
            if np.any(np.diff(ax) <= 0):
                raise ValueError("grid axes must be strictly increasing")

    def integral(self) -> float:
        if len(self.axes) == 1:
            return float(np.trapezoid(self.values, self.axes[0]))
        return float(np.trapezoid(np.trapezoid(self.values, self.axes[1], axis=1), self.axes[0]))


def default_axis(n: int = 400, lo: float = 1e-3, hi: float = 8.0) -> np.ndarray:
    return np.linspace(lo, hi, n)


def mixture_marginal_density(e, weights, locations, scales, dim: int) -> np.ndarray:
    """Marginal density of coordinate ``dim`` of a log-normal mixture at positive ``e``."""
    e = np.asarray(e, dtype=float)
    w = np.asarray(weights, dtype=float)
    m = np.asarray(locations, dtype=float)[:, dim]
    s2 = np.asarray(scales, dtype=float)[:, dim, dim]
    le = np.log(e)[:, None]
    logk = -0.5 * (LOG_2PI + np.log(s2))[None, :] - 0.5 * (le - m[None, :]) ** 2 / s2[None, :] - le
    return np.exp(logk) @ w


def marginal_density_grid(draws, dim: int, axis=None, name: Optional[str] = None) -> DensityGrid:
    """Posterior-averaged marginal innovation density along one coordinate."""
    axis = default_axis() if axis is None else np.asarray(axis, dtype=float)
    vals = np.zeros_like(axis)
    for draw in draws:
        vals += mixture_marginal_density(axis, draw.weights, draw.locations, draw.scales, dim)
    return DensityGrid(name or f"marginal_{dim + 1}", (axis,), vals / len(draws))


def joint_density_grid(draws, axes=None, dims=(0, 1), name: str = "joint") -> DensityGrid:
    """Posterior-averaged joint density of a coordinate pair on a rectangular grid."""
    if axes is None:
        axes = (default_axis(100), default_axis(100))
    a0, a1 = (np.asarray(a, dtype=float) for a in axes)
    g0, g1 = np.meshgrid(a0, a1, indexing="ij")
    pts = np.column_stack([g0.ravel(), g1.ravel()])
    sel = list(dims)
    vals = np.zeros(pts.shape[0])
    loge = np.log(pts)
    for draw in draws:
        vals += np.exp(
            _mixture_logpdf_log(loge, draw.weights, draw.locations[:, sel], draw.scales[:, sel][:, :, sel])
            - loge.sum(axis=1)
        )
    return DensityGrid(name, (a0, a1), (vals / len(draws)).reshape(g0.shape))


def l1_distance(a: DensityGrid, b: DensityGrid) -> float:
    """Trapezoid-rule L1 distance between two marginal grids on the same axis."""
    if len(a.axes) != 1 or not np.array_equal(a.axes[0], b.axes[0]):
        raise ValueError("grids must be one-dimensional on the same axis")
    return float(np.trapezoid(np.abs(a.values - b.values), a.axes[0]))


# -- report --------------------------------------------------------------------

@dataclass
class FitReport:
    names: list
    posterior_means: np.ndarray
    intervals: np.ndarray
    ess: np.ndarray
    lps: float
    lpml: float
    n_draws: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.intervals[:, 0] > self.intervals[:, 1]):
            raise ValueError("interval lower bound above upper bound")

    def covers(self, truth) -> np.ndarray:
        t = np.asarray(truth, dtype=float)
        return (self.intervals[:, 0] <= t) & (t <= self.intervals[:, 1])

    def rows(self):
        for i, name in enumerate(self.names):
            yield name, self.posterior_means[i], self.intervals[i, 0], self.intervals[i, 1], self.ess[i]


def summarize(draws, series, level: float = 0.95, names: Optional[Sequence[str]] = None) -> FitReport:
    """Posterior means, equal-tailed intervals, ESS and predictive scores of identified draws."""
    eta = np.array([d.eta.to_vector() for d in draws])
    dim = draws[0].eta.dim
    names = list(MeanParams.names(dim) if names is None else names)
    cache = MeanCache(series)
    L = draw_log_densities(draws, series, cache)
    return FitReport(
        names=names,
        posterior_means=eta.mean(axis=0),
        intervals=np.array([credible_interval(col, level) for col in eta.T]),
        ess=np.array([ess(col) if eta.shape[0] >= 10 else float(eta.shape[0]) for col in eta.T]),
        lps=lps(draws, series, log_dens=L),
        lpml=lpml(draws, series, log_dens=L),
        n_draws=len(draws),
    )
