"""Parameter-expanded slice sampler for the DPM log-normal vMEM.

The chain targets the unconstrained (expanded) model: innovation
components carry free locations, so the mixture mean is not pinned to
one. Each sweep updates slices, sticks, component parameters, labels and
finally the conditional-mean parameters with an adaptive random-walk
Metropolis step. Snapshots are mapped to the identified model by
:func:`bvmem.postprocess.identify`.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np

from . import _backend
from .kernels import (
    MixtureComponent,
    NWHyper,
    StickState,
    beta_sample,
    mvn_logpdf_batch,
    normal_wishart_sample_batch,
    stick_break,
)
from .postprocess import extend_sticks, identify_eta, mean_scaling, mixture_mean
from .vmem import MeanParams, default_mu1, mean_recursion

__all__ = [
    "xi",
    "label_bound",
    "AdaptState",
    "SamplerConfig",
    "ChainState",
    "SliceSampler",
    "update_adaptation",
    "proposal_cov",
    "metropolis_accept",
    "run",
    "DPMFit",
    "initial_values",
    "fit_dpm",
]

ADAPT_JITTER = 1e-6


def xi(k, alpha: float):
    """Deterministic slice sequence ``(1/alpha) (2 alpha / (3 + 3 alpha))**k``."""
    k = np.asarray(k)
    if np.any(k < 1):
        raise ValueError("xi is defined for k >= 1")
    return (2.0 * alpha / (3.0 + 3.0 * alpha)) ** k / alpha


def label_bound(u, alpha: float):
    """Largest label reachable from slice ``u``: ``floor(log_r(alpha u))``."""
    r = 2.0 * alpha / (3.0 + 3.0 * alpha)
    return np.floor(np.log(alpha * np.asarray(u)) / np.log(r)).astype(np.intp)


@dataclass
class AdaptState:
    """Running moments of the identified ``eta`` draws.

    ``prior_cov``/``prior_weight`` optionally seed the empirical covariance
    with ``prior_weight`` pseudo-draws; without them the proposal falls
    back to ``1e-6 I`` until two draws have been seen.
    """

    running_mean: np.ndarray
    running_scatter: np.ndarray
    count: int = 0
    p: float = 0.9
    sigma1: float = 1.0
    sigma2: float = float(np.sqrt(21.0))
    prior_cov: Optional[np.ndarray] = None
    prior_weight: float = 0.0

    @classmethod
    def empty(cls, m: int, **kw) -> "AdaptState":
        return cls(np.zeros(m), np.zeros((m, m)), **kw)

    def empirical_cov(self) -> Optional[np.ndarray]:
        emp = self.running_scatter / (self.count - 1) if self.count >= 2 else None
        if self.prior_cov is None or self.prior_weight <= 0:
            return emp
        if emp is None:
            return self.prior_cov
        w0, n = self.prior_weight, self.count
        return (w0 * self.prior_cov + n * emp) / (w0 + n)


def update_adaptation(adapt: AdaptState, eta_vec) -> AdaptState:
    """Welford update of the running mean and scatter with one identified draw."""
    x = np.asarray(eta_vec, dtype=float)
    n = adapt.count + 1
    delta = x - adapt.running_mean
    mean = adapt.running_mean + delta / n
    scatter = adapt.running_scatter + np.outer(delta, x - mean)
    scatter = 0.5 * (scatter + scatter.T)
    return replace(adapt, running_mean=mean, running_scatter=scatter, count=n)


def proposal_cov(adapt: AdaptState, mbar) -> np.ndarray:
    """``Lambda = Sigma_hat / C + 1e-6 I`` on the expanded scale.

    ``C = c c'`` where ``c`` holds the factors that take an expanded
    ``eta`` vector to the identified one, so dividing by ``C`` moves the
    identified covariance back to the sampler's coordinates.
    """
    cov = adapt.empirical_cov()
    m = adapt.running_mean.shape[0]
    if cov is None:
        return ADAPT_JITTER * np.eye(m)
    c = mean_scaling(mbar)
    return cov / np.outer(c, c) + ADAPT_JITTER * np.eye(m)


def metropolis_accept(log_target_current: float, log_target_proposed: float, rng) -> bool:
    """Accept with probability ``min(1, exp(proposed - current))`` (symmetric proposal)."""
    if not np.isfinite(log_target_proposed):
        return False
    diff = log_target_proposed - log_target_current
    return diff >= 0 or np.log(rng.random()) < diff


@dataclass
class SamplerConfig:
    iterations: int = 30000
    burn_in: int = 5000
    thin: int = 10
    alpha: float = 1.0
    eps_mean_trunc: float = 1e-6
    nw_hyper: Optional[NWHyper] = None
    eta_prior_variance: float = 20.0
    p: float = 0.9
    sigma1: float = 1.0
    sigma2: float = float(np.sqrt(21.0))
    adapt_prior_weight: float = 500.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must be in [0, iterations)")
        if not 0 < self.eps_mean_trunc < 1:
            raise ValueError("eps_mean_trunc must lie in (0, 1)")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not 0 <= self.p <= 1:
            raise ValueError("p must lie in [0, 1]")

    def hyper(self, d: int) -> NWHyper:
        return self.nw_hyper if self.nw_hyper is not None else NWHyper.default(d)

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "nw_hyper"}
        if self.nw_hyper is not None:
            h = self.nw_hyper
            out["nw_hyper"] = {
                "degrees": h.degrees,
                "scale_matrix": h.scale_matrix.tolist(),
                "prior_mean": h.prior_mean.tolist(),
                "prior_precision_scale": h.prior_precision_scale,
            }
        return out


@dataclass
class ChainState:
    """Full state of one chain on the expanded model.

    Labels are 1-based. ``sticks``, ``locations`` and ``scales`` have one
    entry per instantiated component; entries past the largest label are
    prior draws and are discarded at the next stick update.
    """

    eta: MeanParams
    mu1: np.ndarray
    alpha: float
    nw_hyper: NWHyper
    sticks: np.ndarray
    locations: np.ndarray
    scales: np.ndarray
    labels: np.ndarray
    slices: np.ndarray
    adapt: AdaptState
    iteration: int = 0
    mbar: Optional[np.ndarray] = None
    trunc_K: int = 0
    accepted: bool = False
    n_accepted: int = 0

    @property
    def weights(self) -> np.ndarray:
        return stick_break(self.sticks)

    @property
    def stick_state(self) -> StickState:
        return StickState(self.sticks, self.alpha)

    @property
    def components(self) -> list:
        return [MixtureComponent(m, S) for m, S in zip(self.locations, self.scales)]

    @property
    def n_instantiated(self) -> int:
        return self.sticks.shape[0]

    @property
    def n_active(self) -> int:
        return int(np.unique(self.labels).size)

    def snapshot(self) -> "ChainState":
        return copy.deepcopy(self)


class SliceSampler:
    """One chain: owns a :class:`ChainState` and a random generator."""

    def __init__(self, config: SamplerConfig, series, eta_init: MeanParams, mu1=None,
                 initial_cov=None, init_component: Optional[MixtureComponent] = None, rng=None):
        self.config = config
        self.x = np.ascontiguousarray(np.asarray(series, dtype=float))
        self.logx = np.log(self.x)
        T, d = self.x.shape
        self.d = d
        self.m = d + 2 * d * d
        self.rng = np.random.default_rng(config.seed if rng is None else rng)
        self.hyper = config.hyper(d)
        mu1 = default_mu1(self.x) if mu1 is None else np.asarray(mu1, dtype=float)
        rec = mean_recursion(eta_init, self.x, mu1)
        if rec.first_nonpositive is not None:
            raise ValueError(
                f"initial eta gives a non-positive conditional mean at t={rec.first_nonpositive}"
            )
        self.logmu = np.log(rec.means)
        if init_component is None:
            y = self.logx - self.logmu
            scale = np.atleast_2d(np.cov(y, rowvar=False))
            init_component = MixtureComponent(y.mean(axis=0), scale)
        adapt = AdaptState.empty(
            self.m,
            p=config.p,
            sigma1=config.sigma1,
            sigma2=config.sigma2,
            prior_cov=None if initial_cov is None else np.asarray(initial_cov, dtype=float),
            prior_weight=config.adapt_prior_weight if initial_cov is not None else 0.0,
        )
        v1 = beta_sample(1.0 + T, config.alpha, self.rng)
        self.state = ChainState(
            eta=eta_init,
            mu1=mu1,
            alpha=config.alpha,
            nw_hyper=self.hyper,
            sticks=np.array([v1]),
            locations=init_component.location[None].copy(),
            scales=init_component.scale[None].copy(),
            labels=np.ones(T, dtype=np.intp),
            slices=np.zeros(T),
            adapt=adapt,
        )
        self.step_slices()

    # -- helpers -----------------------------------------------------------

    def log_residuals(self) -> np.ndarray:
        return self.logx - self.logmu

    def _prior_components(self, n: int):
        h = self.hyper
        return normal_wishart_sample_batch(
            np.full(n, h.degrees),
            np.broadcast_to(h.scale_matrix, (n, self.d, self.d)),
            np.broadcast_to(h.prior_mean, (n, self.d)),
            np.full(n, h.prior_precision_scale),
            self.rng,
        )

    def _instantiate(self, count: int):
        """Make sure at least ``count`` sticks and components exist."""
        s = self.state
        extra = count - s.sticks.shape[0]
        if extra > 0:
            s.sticks = np.concatenate([s.sticks, beta_sample(np.ones(extra), np.full(extra, s.alpha), self.rng)])
        extra = s.sticks.shape[0] - s.locations.shape[0]
        if extra > 0:
            locs, scales = self._prior_components(extra)
            s.locations = np.concatenate([s.locations, locs])
            s.scales = np.concatenate([s.scales, scales])

    def log_target_eta(self, eta: MeanParams, prec_chol=None) -> float:
        s = self.state
        if prec_chol is None:
            prec_chol = np.linalg.cholesky(np.linalg.inv(s.scales))
        quad = _backend.eta_quadratic(
            eta.omega, eta.B, eta.A, self.x, self.logx, s.mu1,
            s.labels - 1, s.locations, prec_chol,
        )
        if not np.isfinite(quad):
            return -np.inf
        vec = eta.to_vector()
        return -0.5 * quad - 0.5 * float(vec @ vec) / self.config.eta_prior_variance

    # -- Gibbs steps -------------------------------------------------------

    def step_slices(self):
        s = self.state
        U = self.rng.random(s.labels.shape[0])
        U[U == 0.0] = np.nextafter(0.0, 1.0)
        s.slices = U * xi(s.labels, s.alpha)
        return s.slices

    def step_sticks(self):
        """Beta full conditionals up to the largest label; later sticks are dropped."""
        s = self.state
        L = int(s.labels.max())
        counts = np.bincount(s.labels - 1, minlength=L)[:L]
        greater = s.labels.shape[0] - np.cumsum(counts)
        s.sticks = beta_sample(1.0 + counts, s.alpha + greater, self.rng)
        s.locations = s.locations[:L]
        s.scales = s.scales[:L]
        self._instantiate(L)
        return s.sticks

    def step_components(self, log_resid=None):
        """Normal-Wishart full conditionals; empty clusters are drawn from the prior."""
        s = self.state
        y = self.log_residuals() if log_resid is None else np.asarray(log_resid, dtype=float)
        L = s.sticks.shape[0]
        h = self.hyper
        idx = s.labels - 1
        n = np.bincount(idx, minlength=L)[:L].astype(float)
        sums = np.zeros((L, self.d))
        np.add.at(sums, idx, y)
        outer = np.zeros((L, self.d, self.d))
        np.add.at(outer, idx, y[:, :, None] * y[:, None, :])
        safe_n = np.maximum(n, 1.0)
        ybar = sums / safe_n[:, None]
        scatter = outer - safe_n[:, None, None] * ybar[:, :, None] * ybar[:, None, :]
        diff = ybar - h.prior_mean
        n0 = h.prior_precision_scale
        shrink = n0 * n / (n + n0)
        winv = np.linalg.inv(h.scale_matrix)
        post_inv = winv + scatter + shrink[:, None, None] * diff[:, :, None] * diff[:, None, :]
        post_inv[n == 0] = winv
        post_scale = np.linalg.inv(post_inv)
        post_scale = 0.5 * (post_scale + np.swapaxes(post_scale, 1, 2))
        post_mean = (n0 * h.prior_mean + n[:, None] * ybar) / (n0 + n)[:, None]
        try:
            s.locations, s.scales = normal_wishart_sample_batch(h.degrees + n, post_scale, post_mean, n0 + n, self.rng)
        except np.linalg.LinAlgError as exc:
            bad = [j + 1 for j in range(L) if np.any(np.linalg.eigvalsh(post_scale[j]) <= 0)]
            raise np.linalg.LinAlgError(f"component update failed for clusters {bad}") from exc
        return s.locations, s.scales

    def step_labels(self, log_resid=None):
        """Categorical draw over the finite set of labels admitted by each slice."""
        s = self.state
        y = self.log_residuals() if log_resid is None else np.asarray(log_resid, dtype=float)
        bound = label_bound(s.slices, s.alpha)
        kmax = int(bound.max()) + 1
        self._instantiate(kmax)
        ks = np.arange(1, kmax + 1)
        xis = xi(ks, s.alpha)
        w = stick_break(s.sticks[:kmax])
        with np.errstate(divide="ignore"):
            logp = mvn_logpdf_batch(y, s.locations[:kmax], s.scales[:kmax]) + np.log(w / xis)[None, :]
        allowed = xis[None, :] > s.slices[:, None]
        if not np.all(allowed.any(axis=1)):
            raise AssertionError("a slice admits no label; slice invariant violated")
        logp = np.where(allowed, logp, -np.inf)
        logp -= logp.max(axis=1, keepdims=True)
        cdf = np.cumsum(np.exp(logp), axis=1)
        draw = self.rng.random(y.shape[0]) * cdf[:, -1]
        s.labels = (cdf < draw[:, None]).sum(axis=1).astype(np.intp) + 1
        return s.labels

    def refresh_truncation(self):
        """Extend sticks/components to the truncation tolerance and recompute the mixture mean."""
        s = self.state
        s.sticks, report = extend_sticks(s.sticks, s.alpha, self.config.eps_mean_trunc, self.rng)
        self._instantiate(s.sticks.shape[0])
        s.trunc_K = report.K
        s.mbar = mixture_mean(stick_break(s.sticks[: report.K]), s.locations[: report.K], s.scales[: report.K])
        return s.mbar

    def step_eta(self):
        """Adaptive random-walk Metropolis on the conditional-mean parameters."""
        s = self.state
        if s.mbar is None:
            self.refresh_truncation()
        prec_chol = np.linalg.cholesky(np.linalg.inv(s.scales))
        current = self.log_target_eta(s.eta, prec_chol)
        lam = proposal_cov(s.adapt, s.mbar)
        chol = np.linalg.cholesky(lam)
        sigma = s.adapt.sigma1 if self.rng.random() < s.adapt.p else s.adapt.sigma2
        step = (sigma / np.sqrt(self.m)) * (chol @ self.rng.standard_normal(self.m))
        proposal = MeanParams.from_vector(s.eta.to_vector() + step, self.d)
        target = self.log_target_eta(proposal, prec_chol)
        s.accepted = metropolis_accept(current, target, self.rng)
        if s.accepted:
            s.eta = proposal
            s.n_accepted += 1
            self.logmu = np.log(mean_recursion(proposal, self.x, s.mu1).means)
        return s.accepted

    def adapt(self):
        s = self.state
        s.adapt = update_adaptation(s.adapt, identify_eta(s.eta, s.mbar).to_vector())

    def sweep(self):
        self.step_slices()
        self.step_sticks()
        self.step_components()
        self.step_labels()
        self.refresh_truncation()
        self.step_eta()
        self.adapt()
        self.state.iteration += 1
        return self.state


def run(config: SamplerConfig, series, eta_init: MeanParams, mu1=None, initial_cov=None,
        init_component=None, callback=None) -> Iterator[ChainState]:
    """Yield thinned raw snapshots after burn-in; deterministic given ``config.seed``.

    ``callback(state)`` is called after every sweep (burn-in included),
    e.g. to record component counts.
    """
    sampler = SliceSampler(config, series, eta_init, mu1=mu1, initial_cov=initial_cov,
                           init_component=init_component)
    for it in range(config.iterations):
        state = sampler.sweep()
        if callback is not None:
            callback(state)
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            yield state.snapshot()


@dataclass
class DPMFit:
    """Identified draws of one chain plus per-sweep bookkeeping."""

    draws: list
    acceptance_rate: float
    n_instantiated: np.ndarray
    n_active: np.ndarray
    config: SamplerConfig
    mu1: np.ndarray
    eta_init: MeanParams

    def eta_matrix(self) -> np.ndarray:
        """Draws x m matrix of identified ``eta`` vectors."""
        return np.array([d.eta.to_vector() for d in self.draws])


def initial_values(series, config: SamplerConfig, mu1=None, ln1=None):
    """Starting ``eta``, proposal covariance and component from the LN1 MAP fit.

    Falls back to ``omega = 0.1 * mean``, ``B = 0.4 I``, ``A = 0.3 I`` and
    no covariance seed when the MAP search fails.
    """
    from .baseline import FitError, ln1_map

    x = np.asarray(series, dtype=float)
    d = x.shape[1]
    mu1 = default_mu1(x) if mu1 is None else np.asarray(mu1, dtype=float)
    if ln1 is None:
        try:
            ln1 = ln1_map(x, mu1=mu1, eta_prior_variance=config.eta_prior_variance,
                          hyper=config.hyper(d), seed=config.seed)
        except FitError:
            ln1 = None
    if ln1 is not None and mean_recursion(ln1.eta, x, mu1).first_nonpositive is None:
        return ln1.eta, ln1.eta_cov, MixtureComponent(ln1.location, ln1.sigma)
    eta = MeanParams(0.1 * x.mean(axis=0), 0.4 * np.eye(d), 0.3 * np.eye(d))
    return eta, None, None


def fit_dpm(series, config: SamplerConfig, mu1=None, ln1=None) -> DPMFit:
    """Run one chain from LN1-based starting values and identify every retained draw."""
    from .postprocess import identify

    x = np.asarray(series, dtype=float)
    mu1 = default_mu1(x) if mu1 is None else np.asarray(mu1, dtype=float)
    eta0, cov0, comp0 = initial_values(x, config, mu1, ln1)
    inst, active = [], []

    def record(state):
        inst.append(state.n_instantiated)
        active.append(state.n_active)

    draws, n_acc = [], 0
    last = None
    for snap in run(config, x, eta0, mu1=mu1, initial_cov=cov0, init_component=comp0, callback=record):
        draws.append(identify(snap, config.eps_mean_trunc))
        last = snap
    n_acc = last.n_accepted if last is not None else 0
    return DPMFit(
        draws=draws,
        acceptance_rate=n_acc / config.iterations,
        n_instantiated=np.array(inst),
        n_active=np.array(active),
        config=config,
        mu1=mu1,
        eta_init=eta0,
    )
