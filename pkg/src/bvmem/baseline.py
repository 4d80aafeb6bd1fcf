"""Parametric comparator: vMEM with a single unit-mean log-normal innovation, fit by MAP."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.linalg import solve_triangular
from scipy.special import multigammaln
from scipy.stats import wishart

from . import _backend
from .kernels import LOG_2PI, NWHyper, cholesky_pd
from .postprocess import IdentifiedDraw, TruncationReport
from .vmem import MeanParams, default_mu1, mean_recursion

__all__ = ["LN1Fit", "FitError", "ln1_loglik", "ln1_log_posterior", "ln1_map", "ln1_draws", "ln1_lps", "ln1_lpml"]

logger = logging.getLogger(__name__)


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class LN1Fit:
    eta: MeanParams
    sigma: np.ndarray
    log_posterior: float
    std_errors: np.ndarray
    mu1: np.ndarray
    theta: np.ndarray
    theta_cov: np.ndarray

    @property
    def eta_cov(self) -> np.ndarray:
        m = self.eta.size
        return self.theta_cov[:m, :m]

    @property
    def location(self) -> np.ndarray:
        return -0.5 * np.diag(self.sigma)

    def as_draw(self) -> IdentifiedDraw:
        return _as_draw(self.eta, self.sigma, self.mu1)


def _as_draw(eta, sigma, mu1) -> IdentifiedDraw:
    d = eta.dim
    return IdentifiedDraw(
        eta=eta,
        mu1=np.asarray(mu1, dtype=float),
        weights=np.ones(1),
        locations=(-0.5 * np.diag(sigma))[None],
        scales=np.asarray(sigma, dtype=float)[None],
        mixture_mean=np.ones(d),
        truncation=TruncationReport(1, 0.0),
    )


def ln1_loglik(eta: MeanParams, sigma, series, mu1=None, *, _logx=None) -> float:
    """Log-likelihood with ``log eps_t ~ N(-diag(sigma)/2, sigma)``; ``-inf`` off the positive orthant."""
    x = np.ascontiguousarray(np.asarray(series, dtype=float))
    logx = np.log(x) if _logx is None else _logx
    T, d = x.shape
    mu1 = default_mu1(x) if mu1 is None else np.asarray(mu1, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    try:
        L = cholesky_pd(sigma, "sigma")
    except np.linalg.LinAlgError:
        return -np.inf
    Linv = np.linalg.inv(L)
    prec_chol = np.ascontiguousarray(np.linalg.cholesky(Linv.T @ Linv))[None]
    loc = (-0.5 * np.diag(sigma))[None]
    quad = _backend.eta_quadratic(eta.omega, eta.B, eta.A, x, logx, mu1, np.zeros(T, dtype=np.intp), loc, prec_chol)
    if not np.isfinite(quad):
        return -np.inf
    half_logdet = float(np.sum(np.log(np.diag(L))))
    return -0.5 * quad - T * (0.5 * d * LOG_2PI + half_logdet) - float(logx.sum())


def ln1_log_prior(eta: MeanParams, sigma, eta_prior_variance=20.0, hyper: Optional[NWHyper] = None) -> float:
    d = eta.dim
    hyper = NWHyper.default(d) if hyper is None else hyper
    vec = eta.to_vector()
    m = vec.shape[0]
    lp = -0.5 * float(vec @ vec) / eta_prior_variance - 0.5 * m * np.log(2 * np.pi * eta_prior_variance)
    prec = np.linalg.inv(sigma)
    prec = 0.5 * (prec + prec.T)
    lp += float(wishart.logpdf(prec, df=hyper.degrees, scale=hyper.scale_matrix))
    return lp


def ln1_log_posterior(eta, sigma, series, mu1=None, eta_prior_variance=20.0, hyper=None) -> float:
    ll = ln1_loglik(eta, sigma, series, mu1)
    if not np.isfinite(ll):
        return -np.inf
    return ll + ln1_log_prior(eta, sigma, eta_prior_variance, hyper)


# -- parameterization ------------------------------------------------------

def _pack(eta: MeanParams, sigma) -> np.ndarray:
    L = cholesky_pd(sigma, "sigma")
    d = L.shape[0]
    rows, cols = np.tril_indices(d)
    entries = L[rows, cols].copy()
    diag = rows == cols
    entries[diag] = np.log(entries[diag])
    return np.concatenate([eta.to_vector(), entries])


def _unpack(theta, d):
    m = d + 2 * d * d
    eta = MeanParams.from_vector(theta[:m], d)
    rows, cols = np.tril_indices(d)
    vals = np.array(theta[m:], dtype=float)
    diag = rows == cols
    vals[diag] = np.exp(vals[diag])
    L = np.zeros((d, d))
    L[rows, cols] = vals
    return eta, L @ L.T


class _Objective:
    """Negative log-posterior on the packed vector, without per-call validation."""

    def __init__(self, x, mu1, eta_prior_variance, hyper: NWHyper):
        self.x = x
        self.logx = np.log(x)
        self.mu1 = mu1
        T, d = x.shape
        self.d = d
        self.m = d + 2 * d * d
        self.rows, self.cols = np.tril_indices(d)
        self.diag = self.rows == self.cols
        self.out = np.empty_like(x)
        self.v = eta_prior_variance
        a = hyper.degrees
        self.a = a
        self.Winv = np.linalg.inv(hyper.scale_matrix)
        _, logdetW = np.linalg.slogdet(hyper.scale_matrix)
        self.const = (
            -T * (0.5 * d * LOG_2PI) - float(self.logx.sum())
            - 0.5 * self.m * np.log(2 * np.pi * eta_prior_variance)
            - 0.5 * a * d * np.log(2.0) - 0.5 * a * logdetW - multigammaln(0.5 * a, d)
        )

    def __call__(self, theta) -> float:
        d, m = self.d, self.m
        dd = d * d
        omega = theta[:d]
        B = theta[d : d + dd].reshape((d, d), order="F")
        A = theta[d + dd : m].reshape((d, d), order="F")
        if _backend.mean_recursion(np.ascontiguousarray(omega), np.ascontiguousarray(B),
                                   np.ascontiguousarray(A), self.x, self.mu1, self.out) >= 0:
            return np.inf
        vals = np.array(theta[m:])
        vals[self.diag] = np.exp(vals[self.diag])
        L = np.zeros((d, d))
        L[self.rows, self.cols] = vals
        log_diag = float(np.sum(theta[m:][self.diag]))
        r = self.logx - np.log(self.out) + 0.5 * np.sum(L * L, axis=1)
        z = solve_triangular(L, r.T, lower=True, check_finite=False)
        T = self.x.shape[0]
        loglik = -0.5 * float(np.sum(z * z)) - T * log_diag
        Linv = solve_triangular(L, np.eye(d), lower=True, check_finite=False)
        # Wishart density of the precision L^-T L^-1, with log|P| = -2 log|L|
        trace = float(np.sum(Linv * (Linv @ self.Winv)))
        log_prior = -0.5 * float(theta[:m] @ theta[:m]) / self.v + 0.5 * (self.a - d - 1) * (-2 * log_diag) - 0.5 * trace
        val = -(loglik + log_prior + self.const)
        return val if np.isfinite(val) else np.inf


def _moment_start(x, mu1, b=0.6, a=0.3):
    d = x.shape[1]
    B = b * np.eye(d)
    A = a * np.eye(d)
    omega = (np.eye(d) - B - A) @ x.mean(axis=0)
    eta = MeanParams(omega, B, A)
    rec = mean_recursion(eta, x, mu1)
    y = np.log(x / rec.means)
    sigma = np.atleast_2d(np.cov(y, rowvar=False)) + 1e-6 * np.eye(d)
    return eta, sigma


def _hessian(f, theta, rel_step=1e-4, retries=3):
    """Central-difference Hessian; the step shrinks tenfold while a probe is infeasible."""
    for _ in range(retries + 1):
        with np.errstate(invalid="ignore"):
            H = _hessian_at_step(f, theta, rel_step)
        if np.all(np.isfinite(H)):
            return H
        rel_step /= 10.0
    return H


def _hessian_at_step(f, theta, rel_step):
    n = theta.shape[0]
    h = rel_step * np.maximum(1.0, np.abs(theta))
    H = np.empty((n, n))
    f0 = f(theta)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        H[i, i] = (f(theta + ei) - 2 * f0 + f(theta - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(n)
            ej[j] = h[j]
            val = (f(theta + ei + ej) - f(theta + ei - ej) - f(theta - ei + ej) + f(theta - ei - ej)) / (4 * h[i] * h[j])
            H[i, j] = H[j, i] = val
    return H


def _whitener(H):
    """Map ``z -> theta`` offsets with unit curvature; indefinite directions use ``|eigenvalue|``."""
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    w = np.abs(w)
    w = np.maximum(w, 1e-8 * max(w.max(), 1e-300))
    return V / np.sqrt(w)


def _local_search(objective, theta0, tol, max_cycles=10):
    """Powell's method in coordinates whitened by a finite-difference Hessian.

    A short unscaled pass finds the basin; each later cycle recomputes the
    curvature at the current point and searches along its eigen-directions,
    stopping when a cycle improves the objective by less than ``tol``.
    """
    n = theta0.shape[0]
    res = optimize.minimize(objective, theta0, method="Powell",
                            options={"maxfev": 100 * n, "xtol": 1e-6, "ftol": 1e-8})
    best, fbest = (res.x, res.fun) if res.fun <= objective(theta0) else (theta0, objective(theta0))
    for _ in range(max_cycles):
        H = _hessian(objective, best)
        if not np.all(np.isfinite(H)):
            break
        S = _whitener(H)
        res = optimize.minimize(lambda z: objective(best + S @ z), np.zeros(n), method="Powell",
                                options={"maxfev": 200 * n, "xtol": 1e-8, "ftol": 1e-12})
        gain = fbest - res.fun
        if gain > 0:
            best, fbest = best + S @ res.x, res.fun
        if gain < tol:
            break
    return best, fbest


def ln1_map(series, mu1=None, eta_prior_variance=20.0, hyper=None, n_starts=5, seed=0, tol=1e-8,
            start: Optional[MeanParams] = None) -> LN1Fit:
    """MAP fit of the single log-normal vMEM with multi-start derivative-free search.

    The moment-based start sets ``B = 0.6 I``, ``A = 0.3 I`` and matches the
    sample mean; further starts jitter it. The best mode over all starts is
    kept.

    Standard errors come from the inverse of a finite-difference Hessian of
    the negative log-posterior at the mode, in the optimizer's
    parameterization (``eta`` plus the log-Cholesky factor of ``sigma``).
    """
    x = np.ascontiguousarray(np.asarray(series, dtype=float))
    logx = np.log(x)
    d = x.shape[1]
    mu1 = default_mu1(x) if mu1 is None else np.asarray(mu1, dtype=float)
    hyper = NWHyper.default(d) if hyper is None else hyper
    rng = np.random.default_rng(seed)

    objective = _Objective(x, mu1, eta_prior_variance, hyper)

    eta0, sigma0 = _moment_start(x, mu1) if start is None else (start, _moment_start(x, mu1)[1])
    base = _pack(eta0, sigma0)
    starts = [base]
    m = d + 2 * d * d
    attempts = 0
    while len(starts) < n_starts and attempts < 50 * n_starts:
        attempts += 1
        cand = base.copy()
        cand[:m] += rng.normal(scale=0.05, size=m) * np.maximum(np.abs(base[:m]), 0.1)
        cand[m:] += rng.normal(scale=0.05, size=cand.shape[0] - m)
        if np.isfinite(objective(cand)):
            starts.append(cand)

    best_theta, best_val = None, np.inf
    for s in starts:
        if not np.isfinite(objective(s)):
            continue
        with np.errstate(invalid="ignore", over="ignore"):
            theta, val = _local_search(objective, s, tol)
        logger.debug("LN1 start finished at %.8f", -val)
        if val < best_val:
            best_theta, best_val = theta, val
    if best_theta is None:
        raise FitError("no start gives positive conditional means; try a different mu1")

    H = _hessian(objective, best_theta)
    if not np.all(np.isfinite(H)):
        raise FitError("curvature at the mode is not finite; the mode sits on the positivity boundary")
    H = 0.5 * (H + H.T)
    try:
        cov = np.linalg.inv(H)
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # not numerically at a strict mode: fall back to the absolute spectrum
        vals, vecs = np.linalg.eigh(H)
        vals = np.maximum(np.abs(vals), 1e-12)
        cov = (vecs / vals) @ vecs.T
        logger.warning("LN1 Hessian is not positive definite at the returned mode")
    eta, sigma = _unpack(best_theta, d)
    return LN1Fit(
        eta=eta,
        sigma=sigma,
        log_posterior=-best_val,
        std_errors=np.sqrt(np.diag(cov)[:m]),
        mu1=mu1,
        theta=best_theta,
        theta_cov=cov,
    )


def ln1_draws(fit: LN1Fit, n: int, rng=None) -> list:
    """Normal approximation draws around the mode, returned as identified draws."""
    rng = np.random.default_rng(rng)
    d = fit.eta.dim
    L = np.linalg.cholesky(fit.theta_cov)
    out = []
    for z in rng.standard_normal((n, fit.theta.shape[0])):
        eta, sigma = _unpack(fit.theta + L @ z, d)
        out.append(_as_draw(eta, sigma, fit.mu1))
    return out


def ln1_lps(fit: LN1Fit, series) -> float:
    from .evaluation import lps

    return lps([fit.as_draw()], series)


def ln1_lpml(draws, series) -> float:
    from .evaluation import lpml

    return lpml(draws, series)
