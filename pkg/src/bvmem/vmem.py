"""Base vMEM: ``x_t = mu_t * eps_t`` with ``mu_t = omega + B mu_{t-1} + A x_{t-1}``."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import _backend
from .kernels import MixtureComponent, cholesky_pd

__all__ = [
    "MeanParams",
    "SeriesMatrix",
    "InnovationSpec",
    "SimulationError",
    "Recursion",
    "mean_recursion",
    "stationarity_margin",
    "simulate",
    "residuals",
    "log_residuals",
    "default_mu1",
    "reference_design",
]


class SimulationError(RuntimeError):
    """Raised when a conditional mean leaves the positive orthant."""

    def __init__(self, index: int, message: str = ""):
        self.index = index
        super().__init__(message or f"non-positive conditional mean at t={index}")


@dataclass(frozen=True)
class MeanParams:
    """Conditional-mean block ``(omega, B, A)``.

    ``to_vector`` flattens as ``(omega, vec(B), vec(A))`` with column-major
    ``vec``, so the vector has length ``d + 2 d**2``.
    """

    omega: np.ndarray
    B: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        d = omega.shape[0]
        if B.shape != (d, d) or A.shape != (d, d):
            raise ValueError(f"B and A must be {d}x{d}")
        if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(B)) and np.all(np.isfinite(A))):
            raise ValueError("mean parameters must be finite")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "B", np.ascontiguousarray(B))
        object.__setattr__(self, "A", np.ascontiguousarray(A))

    @property
    def dim(self) -> int:
        return self.omega.shape[0]

    @property
    def size(self) -> int:
        d = self.dim
        return d + 2 * d * d

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.omega, self.B.ravel(order="F"), self.A.ravel(order="F")])

    @classmethod
    def from_vector(cls, vec, d: int) -> "MeanParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (d + 2 * d * d,):
            raise ValueError(f"expected a vector of length {d + 2 * d * d}")
        dd = d * d
        return cls(
            vec[:d],
            vec[d : d + dd].reshape((d, d), order="F"),
            vec[d + dd :].reshape((d, d), order="F"),
        )

    @staticmethod
    def names(d: int) -> list[str]:
        """Parameter labels in vector order, e.g. ``omega_1``, ``B_21``."""
        out = [f"omega_{i + 1}" for i in range(d)]
        for block in ("B", "A"):
            out += [f"{block}_{i + 1}{j + 1}" for j in range(d) for i in range(d)]
        return out


@dataclass(frozen=True)
class SeriesMatrix:
    """T x d panel of strictly positive observations, row-major by time."""

    values: np.ndarray
    timestamps: Optional[Sequence[str]] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 2:
            raise ValueError("series needs at least two rows")
        if not np.all(v > 0):
            bad = np.unique(np.nonzero(~(v > 0))[0])
            raise ValueError(f"series must be strictly positive; offending rows {bad.tolist()}")
        if self.timestamps is not None and len(self.timestamps) != v.shape[0]:
            raise ValueError("timestamps length does not match the series")
        object.__setattr__(self, "values", np.ascontiguousarray(v))

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def shape(self):
        return self.values.shape

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class InnovationSpec:
    """Finite mixture of log-normal innovations."""

    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        comps = tuple(self.components)
        if len(comps) != w.shape[0]:
            raise ValueError("one weight per component required")
        if abs(w.sum() - 1.0) > 1e-12 or np.any(w < 0):
            raise ValueError("weights must be a probability vector")
        if len({c.dim for c in comps}) != 1:
            raise ValueError("components have different dimensions")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def mean(self) -> np.ndarray:
        return sum(w * c.mean() for w, c in zip(self.weights, self.components))

    def sample(self, rng, size: int) -> np.ndarray:
        labels = rng.choice(len(self.components), size=size, p=self.weights)
        z = rng.standard_normal((size, self.dim))
        out = np.empty((size, self.dim))
        for k, comp in enumerate(self.components):
            sel = labels == k
            L = cholesky_pd(comp.scale, "scale")
            out[sel] = np.exp(comp.location + z[sel] @ L.T)
        return out

    def logpdf(self, e) -> np.ndarray:
        from .kernels import logn_logpdf
        from scipy.special import logsumexp

        e = np.atleast_2d(e)
        terms = np.stack(
            [np.log(w) + logn_logpdf(e, c.location, c.scale) for w, c in zip(self.weights, self.components)]
        )
        return logsumexp(terms, axis=0)


class Recursion(NamedTuple):
    means: np.ndarray
    first_nonpositive: Optional[int]


def _as_values(series) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(series, dtype=float))


def default_mu1(series) -> np.ndarray:
    """Sample mean of the series, the default first conditional mean."""
    return _as_values(series).mean(axis=0)


def mean_recursion(params: MeanParams, series, mu1=None) -> Recursion:
    """Conditional means for every row of ``series``.

    All rows are returned even when some turn non-positive; the index of
    the first such row is reported in ``first_nonpositive``.
    """
    x = _as_values(series)
    if x.shape[1] != params.dim:
        raise ValueError(f"series has {x.shape[1]} columns, parameters are {params.dim}-dimensional")
    mu1 = default_mu1(x) if mu1 is None else np.asarray(mu1, dtype=float)
    if mu1.shape != (params.dim,):
        raise ValueError("mu1 has the wrong shape")
    out = np.empty_like(x)
    bad = _backend.mean_recursion(params.omega, params.B, params.A, x, mu1, out)
    return Recursion(out, None if bad < 0 else int(bad))


def stationarity_margin(params: MeanParams) -> float:
    """``1 - spectral_radius(B + A)``; positive means the sufficient condition holds."""
    return 1.0 - float(np.max(np.abs(np.linalg.eigvals(params.B + params.A))))


def simulate(params: MeanParams, innov: InnovationSpec, T: int, mu1=None, rng=None,
             return_innovations=False):
    """Draw ``T`` observations from the vMEM with i.i.d. innovations from ``innov``.

    ``mu1`` defaults to the fixed point ``(I - B - A)^-1 omega`` scaled by
    the innovation mean. Raises :class:`SimulationError` if a conditional
    mean becomes non-positive.
    """
    rng = np.random.default_rng(rng)
    d = params.dim
    if innov.dim != d:
        raise ValueError("innovation and parameter dimensions differ")
    if stationarity_margin(params) <= 0:
        warnings.warn("B + A has a root on or outside the unit circle", RuntimeWarning, stacklevel=2)
    if mu1 is None:
        mu1 = np.linalg.solve(np.eye(d) - params.B - params.A * innov.mean()[None, :], params.omega)
    mu1 = np.asarray(mu1, dtype=float)
    if not np.all(mu1 > 0):
        raise SimulationError(0, "mu1 must be strictly positive")
    eps = innov.sample(rng, T)
    x = np.empty((T, d))
    mu = mu1
    for t in range(T):
        if t > 0:
            mu = params.omega + params.B @ mu + params.A @ x[t - 1]
            if not np.all(mu > 0):
                raise SimulationError(t)
        x[t] = mu * eps[t]
    series = SeriesMatrix(x)
    if return_innovations:
        return series, eps, mu1
    return series


def residuals(params: MeanParams, series, mu1=None) -> np.ndarray:
    """``x_t / mu_t``; raises ``ValueError`` carrying the index if a mean is non-positive."""
    x = _as_values(series)
    rec = mean_recursion(params, x, mu1)
    if rec.first_nonpositive is not None:
        err = ValueError(f"non-positive conditional mean at t={rec.first_nonpositive}")
        err.index = rec.first_nonpositive
        raise err
    return x / rec.means


def log_residuals(params: MeanParams, series, mu1=None) -> np.ndarray:
    return np.log(residuals(params, series, mu1))


def reference_design():
    """Trivariate simulation design: mean parameters and the two-component innovation law.

    ``B[1, 0]`` is 0.10. With 0.20 in that slot the spectral radius of
    ``B + A`` is about 1.0097 and the process explodes.
    """
    params = MeanParams(
        omega=[0.35, 0.59, 0.43],
        B=[[0.36, 0.07, 0.18], [0.10, 0.24, 0.14], [0.01, 0.10, 0.41]],
        A=[[0.21, 0.14, 0.04], [0.13, 0.28, 0.09], [0.07, 0.08, 0.30]],
    )
    comp1 = MixtureComponent(
        [-0.200, -0.175, -0.150],
        [[0.40, 0.30, 0.20], [0.30, 0.35, 0.25], [0.20, 0.25, 0.30]],
    )
    comp2 = MixtureComponent(
        [-0.185, -0.195, -0.125],
        [[0.37, 0.15, 0.24], [0.15, 0.39, 0.18], [0.24, 0.18, 0.25]],
    )
    return params, InnovationSpec([0.7, 0.3], (comp1, comp2))
