"""Distribution primitives: log-normal kernels, stick-breaking, Normal-Wishart.

All densities are evaluated in log space through Cholesky factors; the
plain-density helpers only exponentiate at the very end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

__all__ = [
    "MixtureComponent",
    "NWHyper",
    "StickState",
    "cholesky_pd",
    "logdet_pd",
    "solve_pd",
    "logn_logpdf",
    "logn_density",
    "logn_sample",
    "mvn_logpdf_batch",
    "stick_break",
    "normal_wishart_sample",
    "normal_wishart_sample_batch",
    "normal_wishart_posterior",
    "beta_sample",
]

LOG_2PI = float(np.log(2.0 * np.pi))
_SYM_TOL = 1e-10


def cholesky_pd(M, name="matrix"):
    """Lower Cholesky factor of the symmetrized matrix.

    A matrix counts as positive definite iff this succeeds; nothing is
    clipped or repaired.
    """
    M = np.asarray(M, dtype=float)
    sym = 0.5 * (M + M.T)
    try:
        return np.linalg.cholesky(sym)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"{name} is not positive definite") from exc


def logdet_pd(M):
    L = cholesky_pd(M)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def solve_pd(M, b):
    L = cholesky_pd(M)
    return cho_solve((L, True), b)


@dataclass(frozen=True)
class MixtureComponent:
    """One log-normal kernel: ``log eps ~ N(location, scale)``."""

    location: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        loc = np.atleast_1d(np.asarray(self.location, dtype=float))
        scale = np.atleast_2d(np.asarray(self.scale, dtype=float))
        d = loc.shape[0]
        if scale.shape != (d, d):
            raise ValueError(f"scale must be {d}x{d}, got {scale.shape}")
        if not np.all(np.isfinite(loc)):
            raise ValueError("location has non-finite entries")
        if np.max(np.abs(scale - scale.T)) > _SYM_TOL:
            raise ValueError("scale is not symmetric")
        cholesky_pd(scale, "scale")
        object.__setattr__(self, "location", loc)
        object.__setattr__(self, "scale", scale)

    @property
    def dim(self) -> int:
        return self.location.shape[0]

    def mean(self) -> np.ndarray:
        """``E[eps] = exp(m + diag(S)/2)``."""
        return np.exp(self.location + 0.5 * np.diag(self.scale))


@dataclass(frozen=True)
class NWHyper:
    """Normal-Wishart hyperparameters.

    ``Sigma^-1 ~ Wishart(degrees, scale_matrix)`` (``scale_matrix`` is the
    Wishart scale, so ``E[Sigma^-1] = degrees * scale_matrix``) and
    ``m | Sigma^-1 ~ N(prior_mean, (prior_precision_scale * Sigma^-1)^-1)``.
    """

    degrees: float
    scale_matrix: np.ndarray
    prior_mean: np.ndarray
    prior_precision_scale: float

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.scale_matrix, dtype=float))
        nu = np.atleast_1d(np.asarray(self.prior_mean, dtype=float))
        d = W.shape[0]
        if W.shape != (d, d) or nu.shape != (d,):
            raise ValueError("inconsistent Normal-Wishart dimensions")
        if self.degrees < d:
            raise ValueError(f"degrees must be >= d={d}, got {self.degrees}")
        if not self.prior_precision_scale > 0:
            raise ValueError("prior_precision_scale must be positive")
        if np.max(np.abs(W - W.T)) > _SYM_TOL:
            raise ValueError("scale_matrix is not symmetric")
        cholesky_pd(W, "scale_matrix")
        object.__setattr__(self, "scale_matrix", W)
        object.__setattr__(self, "prior_mean", nu)
        object.__setattr__(self, "degrees", float(self.degrees))
        object.__setattr__(self, "prior_precision_scale", float(self.prior_precision_scale))

    @property
    def dim(self) -> int:
        return self.prior_mean.shape[0]

    @classmethod
    def default(cls, d: int) -> "NWHyper":
        """``a = 10 + d``, ``W = I``, ``nu = 0``, ``n0 = 1``."""
        return cls(10.0 + d, np.eye(d), np.zeros(d), 1.0)


@dataclass
class StickState:
    sticks: np.ndarray
    concentration: float
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        if not self.concentration > 0:
            raise ValueError("concentration must be positive")
        self.sticks = np.asarray(self.sticks, dtype=float)
        self.weights = stick_break(self.sticks)


def logn_logpdf(x, location, scale):
    """Log-density of the multivariate log-normal at one or many points.

    ``x`` may be a d-vector or an (n, d) array; returns a scalar or an
    n-vector accordingly.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("log-normal density needs strictly positive coordinates")
    logx = np.log(x)
    return mvn_logpdf(logx, location, scale) - np.sum(logx, axis=-1)


def logn_density(x, comp: MixtureComponent):
    return np.exp(logn_logpdf(x, comp.location, comp.scale))


def mvn_logpdf(y, location, scale):
    y = np.asarray(y, dtype=float)
    loc = np.asarray(location, dtype=float)
    L = cholesky_pd(scale, "scale")
    d = loc.shape[0]
    diff = np.atleast_2d(y - loc)
    z = solve_triangular(L, diff.T, lower=True)
    quad = np.sum(z * z, axis=0)
    out = -0.5 * (d * LOG_2PI + quad) - np.sum(np.log(np.diag(L)))
    return out[0] if y.ndim == 1 else out


def mvn_logpdf_batch(y, locations, scales):
    """Normal log-densities of every row of ``y`` under every component.

    Parameters
    ----------
    y : (n, d) array
    locations : (K, d) array
    scales : (K, d, d) array

    Returns
    -------
    (n, K) array
    """
    y = np.asarray(y, dtype=float)
    locations = np.asarray(locations, dtype=float)
    scales = np.asarray(scales, dtype=float)
    d = y.shape[1]
    L = np.linalg.cholesky(0.5 * (scales + np.swapaxes(scales, -1, -2)))
    Linv = np.linalg.inv(L)
    diff = y[None, :, :] - locations[:, None, :]
    z = np.einsum("kij,knj->kni", Linv, diff)
    quad = np.einsum("kni,kni->kn", z, z)
    half_logdet = np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    return (-0.5 * (d * LOG_2PI + quad) - half_logdet[:, None]).T


def logn_sample(comp: MixtureComponent, rng, size=None):
    """Draw ``exp(N(m, S))`` via the Cholesky factor of ``S``."""
    L = cholesky_pd(comp.scale, "scale")
    d = comp.dim
    shape = (d,) if size is None else (size, d)
    z = rng.standard_normal(shape)
    return np.exp(comp.location + z @ L.T)


def stick_break(sticks, count=None):
    """Stick-breaking weights ``w_j = v_j prod_{k<j} (1 - v_k)``."""
    v = np.asarray(sticks, dtype=float)
    if count is not None:
        v = v[:count]
    if np.any((v <= 0) | (v >= 1)):
        raise ValueError("stick proportions must lie in (0, 1)")
    remaining = np.concatenate(([1.0], np.cumprod(1.0 - v)[:-1]))
    return v * remaining


def beta_sample(a, b, rng):
    """Beta draws kept strictly inside (0, 1)."""
    v = rng.beta(a, b)
    tiny = np.finfo(float).tiny
    return np.clip(v, tiny, 1.0 - np.finfo(float).epsneg)


def normal_wishart_sample_batch(degrees, scale_matrices, prior_means, prec_scales, rng):
    """Vectorized Normal-Wishart draws through the Bartlett decomposition.

    With ``W = C C'`` and Bartlett factor ``Z`` the precision is
    ``P = (C Z)(C Z)'``, so ``C Z`` is already the Cholesky factor of ``P``
    and no per-draw inversion of ``P`` is needed.

    Returns
    -------
    locations : (n, d) array
    scales : (n, d, d) array
        Covariance matrices ``P^-1``.
    """
    degrees = np.asarray(degrees, dtype=float)
    W = np.asarray(scale_matrices, dtype=float)
    nu = np.asarray(prior_means, dtype=float)
    n0 = np.asarray(prec_scales, dtype=float)
    n, d = nu.shape
    C = np.linalg.cholesky(0.5 * (W + np.swapaxes(W, -1, -2)))
    Z = np.zeros((n, d, d))
    dof = degrees[:, None] - np.arange(d)[None, :]
    Z[:, np.arange(d), np.arange(d)] = np.sqrt(rng.chisquare(dof))
    rows, cols = np.tril_indices(d, -1)
    if rows.size:
        Z[:, rows, cols] = rng.standard_normal((n, rows.size))
    F = C @ Z
    Finv = np.linalg.inv(F)
    scales = np.swapaxes(Finv, -1, -2) @ Finv
    scales = 0.5 * (scales + np.swapaxes(scales, -1, -2))
    z = rng.standard_normal((n, d))
    # m = nu + F^-T z / sqrt(n0)  has covariance (n0 P)^-1
    locations = nu + np.einsum("nji,nj->ni", Finv, z) / np.sqrt(n0)[:, None]
    return locations, scales


def normal_wishart_sample(hyper: NWHyper, rng) -> MixtureComponent:
    locs, scales = normal_wishart_sample_batch(
        np.array([hyper.degrees]),
        hyper.scale_matrix[None],
        hyper.prior_mean[None],
        np.array([hyper.prior_precision_scale]),
        rng,
    )
    return MixtureComponent(locs[0], scales[0])


def _nw_update(hyper: NWHyper, n, ybar, scatter):
    if n == 0:
        return hyper
    n0 = hyper.prior_precision_scale
    diff = ybar - hyper.prior_mean
    winv = np.linalg.inv(hyper.scale_matrix)
    post_inv = winv + scatter + (n0 * n / (n + n0)) * np.outer(diff, diff)
    post_scale = np.linalg.inv(post_inv)
    post_scale = 0.5 * (post_scale + post_scale.T)
    return NWHyper(
        hyper.degrees + n,
        post_scale,
        (n0 * hyper.prior_mean + n * ybar) / (n0 + n),
        n0 + n,
    )


def normal_wishart_posterior(hyper: NWHyper, data) -> NWHyper:
    """Conjugate update of ``hyper`` given i.i.d. normal observations.

    ``data`` is an (n, d) array (or list of d-vectors); with no data the
    prior is returned unchanged.
    """
    y = np.asarray(data, dtype=float)
    if y.size == 0:
        return hyper
    y = y.reshape(-1, hyper.dim)
    n = y.shape[0]
    ybar = y.mean(axis=0)
    centered = y - ybar
    return _nw_update(hyper, n, ybar, centered.T @ centered)
