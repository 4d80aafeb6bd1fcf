"""Truncated mixture mean and the map from expanded-model draws to identified draws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .kernels import MixtureComponent, beta_sample, normal_wishart_sample_batch, stick_break
from .vmem import MeanParams

__all__ = [
    "TruncationReport",
    "IdentifiedDraw",
    "truncation_level",
    "extend_sticks",
    "mixture_mean",
    "identify_eta",
    "identify",
]


BOUNDARY_RTOL = 1e-12


@dataclass(frozen=True)
class TruncationReport:
    K: int
    residual_mass: float


@dataclass(frozen=True)
class IdentifiedDraw:
    """One posterior draw of the unit-mean model.

    ``weights`` are the first ``K`` stick-breaking weights, not
    renormalized; ``mu1`` is the first conditional mean on the identified
    scale.
    """

    eta: MeanParams
    mu1: np.ndarray
    weights: np.ndarray
    locations: np.ndarray
    scales: np.ndarray
    mixture_mean: np.ndarray
    truncation: TruncationReport

    def __post_init__(self):
        d = self.eta.dim
        K = self.weights.shape[0]
        if self.locations.shape != (K, d) or self.scales.shape != (K, d, d):
            raise ValueError("component arrays do not match the weights")
        if self.mu1.shape != (d,) or self.mixture_mean.shape != (d,):
            raise ValueError("mu1 and mixture_mean must be d-vectors")
        if K < 1 or self.truncation.K != K:
            raise ValueError("truncation level must equal the number of retained weights")
        if np.any(self.weights <= 0) or self.weights.sum() > 1 + 1e-12:
            raise ValueError("weights must be positive with total mass at most one")
        if not (np.all(self.mixture_mean > 0) and np.all(self.mu1 > 0)):
            raise ValueError("mixture mean and mu1 must be positive")
        np.linalg.cholesky(self.scales)

    @property
    def components(self):
        return [MixtureComponent(m, S) for m, S in zip(self.locations, self.scales)]

    def innovation_mean(self) -> np.ndarray:
        """Truncated mixture mean of the recentered components."""
        return np.exp(
            logsumexp(
                np.log(self.weights)[:, None] + self.locations + 0.5 * np.diagonal(self.scales, axis1=1, axis2=2),
                axis=0,
            )
        )


def truncation_level(sticks, eps: float) -> TruncationReport | None:
    """Smallest ``K`` with ``1 - sum_{j<=K} w_j < eps``.

    Returns ``None`` when the given sticks are too few to reach the
    tolerance; :func:`extend_sticks` appends prior draws until they are.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    v = np.asarray(sticks, dtype=float)
    # residual after k sticks is prod_{j<=k} (1 - v_j); more stable than 1 - cumsum(w)
    residual = np.cumprod(1.0 - v)
    # residuals within rounding of eps count as equal, so the inequality stays strict
    hit = np.nonzero(residual < eps * (1.0 - BOUNDARY_RTOL))[0]
    if hit.size == 0:
        return None
    K = int(hit[0]) + 1
    return TruncationReport(K, float(residual[K - 1]))


def extend_sticks(sticks, alpha: float, eps: float, rng, chunk: int = 16):
    """Append prior ``Beta(1, alpha)`` sticks until the residual mass is below ``eps``."""
    v = np.asarray(sticks, dtype=float)
    report = truncation_level(v, eps)
    while report is None:
        v = np.concatenate([v, beta_sample(np.ones(chunk), np.full(chunk, alpha), rng)])
        report = truncation_level(v, eps)
    return v, report


def mixture_mean(weights, locations, scales, K=None) -> np.ndarray:
    """``sum_{j<=K} w_j exp(m_j + diag(S_j)/2)`` evaluated with log-sum-exp."""
    w = np.asarray(weights, dtype=float)
    locs = np.asarray(locations, dtype=float)
    scales = np.asarray(scales, dtype=float)
    if K is not None:
        w, locs, scales = w[:K], locs[:K], scales[:K]
    with np.errstate(divide="ignore"):
        terms = np.log(w)[:, None] + locs + 0.5 * np.diagonal(scales, axis1=1, axis2=2)
    with np.errstate(over="ignore"):
        out = np.exp(logsumexp(terms, axis=0))
    if not np.all(np.isfinite(out)):
        j = int(np.argmax(np.max(terms, axis=1)))
        raise FloatingPointError(f"mixture mean overflows; component {j + 1} has a divergent scale")
    return out


def mean_scaling(mbar) -> np.ndarray:
    """Elementwise factors taking an expanded ``eta`` vector to the identified one."""
    mbar = np.asarray(mbar, dtype=float)
    d = mbar.shape[0]
    ratio = mbar[:, None] / mbar[None, :]
    return np.concatenate([mbar, ratio.ravel(order="F"), np.tile(mbar, d)])


def identify_eta(eta: MeanParams, mbar) -> MeanParams:
    """Rescale the conditional means by ``mbar``.

    ``omega -> mbar * omega``, ``A -> diag(mbar) A`` and
    ``B -> diag(mbar) B diag(mbar)^-1``; the last one is what keeps the
    recursion equivalent when ``mbar`` is not a multiple of the unit vector.
    """
    return MeanParams.from_vector(eta.to_vector() * mean_scaling(mbar), eta.dim)


def identify(raw, eps: float = 1e-6, rng=None) -> IdentifiedDraw:
    """Map a raw chain snapshot to the identified model.

    ``raw`` needs ``eta``, ``mu1``, ``sticks``, ``locations``, ``scales``,
    ``alpha`` and ``nw_hyper`` attributes (a ``ChainState`` has them). If
    its sticks do not reach the truncation tolerance, ``rng`` is required
    to extend sticks and components from their priors.
    """
    sticks = np.asarray(raw.sticks, dtype=float)
    locs = np.asarray(raw.locations, dtype=float)
    scales = np.asarray(raw.scales, dtype=float)
    report = truncation_level(sticks, eps)
    if report is None or report.K > locs.shape[0]:
        if rng is None:
            raise ValueError("snapshot does not reach the truncation tolerance; pass rng to extend it")
        sticks, report = extend_sticks(sticks, raw.alpha, eps, rng)
        missing = max(report.K - locs.shape[0], 0)
        if missing:
            h = raw.nw_hyper
            new_locs, new_scales = normal_wishart_sample_batch(
                np.full(missing, h.degrees),
                np.broadcast_to(h.scale_matrix, (missing,) + h.scale_matrix.shape),
                np.broadcast_to(h.prior_mean, (missing, h.dim)),
                np.full(missing, h.prior_precision_scale),
                rng,
            )
            locs = np.concatenate([locs, new_locs])
            scales = np.concatenate([scales, new_scales])
    K = report.K
    weights = stick_break(sticks[:K])
    mbar = mixture_mean(weights, locs[:K], scales[:K])
    assert np.all(mbar > 0)
    return IdentifiedDraw(
        eta=identify_eta(raw.eta, mbar),
        mu1=np.asarray(raw.mu1, dtype=float) * mbar,
        weights=weights,
        locations=locs[:K] - np.log(mbar),
        scales=scales[:K].copy(),
        mixture_mean=mbar,
        truncation=report,
    )
