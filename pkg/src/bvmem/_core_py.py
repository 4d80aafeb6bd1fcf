"""
Pure Python versions of the recursion kernels. Used when the compiled
extension is unavailable or when BVMEM_NO_BINARY=1 is set, and as the
reference the extension is tested against.
"""

import numpy as np

__all__ = ["mean_recursion", "eta_quadratic"]


def mean_recursion(omega, B, A, x, mu1, out):
    """
    Fill ``out`` with ``mu_t = omega + B mu_{t-1} + A x_{t-1}``.

    Parameters
    ----------
    omega : ndarray, (d,)
    B, A : ndarray, (d, d)
    x : ndarray, (T, d)
        Observations, row-major by time
    mu1 : ndarray, (d,)
        First conditional mean
    out : ndarray, (T, d)
        Output buffer, overwritten

    Returns
    -------
    int
        Index of the first row with a non-positive entry, or -1
    """
    nobs = x.shape[0]
    out[0] = mu1
    first_bad = -1 if np.all(mu1 > 0) else 0
    for t in range(1, nobs):
        out[t] = omega + B @ out[t - 1] + A @ x[t - 1]
        if first_bad < 0 and not np.all(out[t] > 0):
            first_bad = t
    return first_bad


def eta_quadratic(omega, B, A, x, logx, mu1, labels, locs, prec_chol):
    """
    Sum over t of ``(y_t - m_l)' P_l (y_t - m_l)`` with ``y_t = log x_t - log mu_t``.

    ``prec_chol[k]`` is the lower Cholesky factor ``R`` of the precision
    ``P_k = R R'``; ``labels`` are zero-based. Returns ``inf`` as soon as a
    conditional mean leaves the positive orthant.
    """
    nobs, d = x.shape
    mu = np.empty((nobs, d))
    if mean_recursion(omega, B, A, x, mu1, mu) >= 0:
        return np.inf
    resid = logx - np.log(mu) - locs[labels]
    z = np.einsum("tji,tj->ti", prec_chol[labels], resid)
    return float(np.sum(z * z))
