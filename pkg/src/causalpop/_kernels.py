"""Hot numeric kernels with numba and pure-numpy implementations.

The fitting loop spends essentially all of its time in three operations:
evaluating the (n, k) Gaussian log-density matrix, projecting
responsibilities onto the admissibility constraints, and accumulating
weighted moments.  Each has a numba ``@njit`` version and a vectorized
numpy fallback.  Selection happens once at import time:

* if numba is importable and the environment variable
  ``CAUSALPOP_DISABLE_NUMBA`` is unset (or falsy), the jitted kernels are
  used (compiled lazily, cached on disk);
* otherwise the numpy fallbacks are used.

Both variants stay importable (``*_numpy`` / ``*_numba`` names) so
``benchmarks/kernel_bench.py`` and the agreement tests can compare them.

Reduction order: the numba kernels sum sequentially in row order; the
numpy fallbacks use numpy's pairwise summation.  Either way results are
deterministic for a fixed input, and the two paths agree to ~1e-12.
"""

from __future__ import annotations

import os

import numpy as np

_ENV_FLAG = "CAUSALPOP_DISABLE_NUMBA"


def _numba_disabled() -> bool:
    return os.environ.get(_ENV_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag instead
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _numba_disabled()


# ---------------------------------------------------------------------------
# Gaussian log-density matrix
# ---------------------------------------------------------------------------

def log_density_matrix_numpy(x, means, chols, log_norms):
    """(n, k) matrix of log N(x_i | mu_c, L_c L_c^T).

    ``chols`` stacks the lower Cholesky factors (k, d, d); ``log_norms``
    holds -d/2*log(2*pi) - sum(log(diag(L_c))) per component.
    """
    n = x.shape[0]
    k = means.shape[0]
    out = np.empty((n, k))
    for c in range(k):
        diff = x - means[c]
        z = np.linalg.solve(chols[c], diff.T)
        out[:, c] = log_norms[c] - 0.5 * np.einsum("ji,ji->i", z, z)
    return out


def constrain_rows_numpy(q, pairs):
    """Zero the two forbidden entries per row and renormalize the rest.

    ``pairs`` is (n, 2) with the admissible canonical indices in ascending
    order.  Rows whose admissible mass is zero fall back to 1/2 each.
    Forbidden entries of the result are exact zeros by construction.
    """
    n = q.shape[0]
    rows = np.arange(n)
    qa = q[rows, pairs[:, 0]]
    qb = q[rows, pairs[:, 1]]
    s = qa + qb
    ok = s > 0.0
    out = np.zeros_like(q)
    out[rows, pairs[:, 0]] = np.where(ok, np.divide(qa, s, out=np.zeros(n), where=ok), 0.5)
    out[rows, pairs[:, 1]] = np.where(ok, np.divide(qb, s, out=np.zeros(n), where=ok), 0.5)
    return out


def weighted_moments_numpy(x, q):
    """Responsibility-weighted totals, means, and covariances per component.

    Returns ``(nk, means, covs)`` where ``nk[c] = sum_i q[i, c]``; for
    components with ``nk[c] == 0`` the mean and covariance rows are zero
    and the caller decides what to substitute.
    """
    n, d = x.shape
    k = q.shape[1]
    nk = q.sum(axis=0)
    means = np.zeros((k, d))
    covs = np.zeros((k, d, d))
    for c in range(k):
        if nk[c] <= 0.0:
            continue
        w = q[:, c]
        means[c] = w @ x / nk[c]
        diff = x - means[c]
        cov = (w[:, None] * diff).T @ diff / nk[c]
        covs[c] = 0.5 * (cov + cov.T)
    return nk, means, covs


if HAVE_NUMBA:

    @njit(cache=True)
    def log_density_matrix_numba(x, means, chols, log_norms):
        n, d = x.shape
        k = means.shape[0]
        out = np.empty((n, k))
        z = np.empty(d)
        for i in range(n):
            for c in range(k):
                maha = 0.0
                for r in range(d):
                    s = x[i, r] - means[c, r]
                    for j in range(r):
                        s -= chols[c, r, j] * z[j]
                    z[r] = s / chols[c, r, r]
                    maha += z[r] * z[r]
                out[i, c] = log_norms[c] - 0.5 * maha
        return out

    @njit(cache=True)
    def constrain_rows_numba(q, pairs):
        n = q.shape[0]
        out = np.zeros_like(q)
        for i in range(n):
            a = pairs[i, 0]
            b = pairs[i, 1]
            s = q[i, a] + q[i, b]
            if s > 0.0:
                out[i, a] = q[i, a] / s
                out[i, b] = q[i, b] / s
            else:
                out[i, a] = 0.5
                out[i, b] = 0.5
        return out

    @njit(cache=True)
    def weighted_moments_numba(x, q):
        n, d = x.shape
        k = q.shape[1]
        nk = np.zeros(k)
        means = np.zeros((k, d))
        covs = np.zeros((k, d, d))
        for c in range(k):
            s = 0.0
            for i in range(n):
                s += q[i, c]
            nk[c] = s
            if s <= 0.0:
                continue
            for i in range(n):
                w = q[i, c]
                if w != 0.0:
                    for r in range(d):
                        means[c, r] += w * x[i, r]
            for r in range(d):
                means[c, r] /= s
            for i in range(n):
                w = q[i, c]
                if w != 0.0:
                    for r in range(d):
                        dr = x[i, r] - means[c, r]
                        for j in range(r + 1):
                            covs[c, r, j] += w * dr * (x[i, j] - means[c, j])
            for r in range(d):
                for j in range(r + 1):
                    covs[c, r, j] /= s
                    covs[c, j, r] = covs[c, r, j]
        return nk, means, covs


if USE_NUMBA:
    log_density_matrix = log_density_matrix_numba
    constrain_rows = constrain_rows_numba
    weighted_moments = weighted_moments_numba
else:
    log_density_matrix = log_density_matrix_numpy
    constrain_rows = constrain_rows_numpy
    weighted_moments = weighted_moments_numpy


def warm_up() -> None:
    """Trigger jit compilation on tiny inputs (no-op on the numpy path)."""
    x = np.zeros((2, 2))
    means = np.zeros((4, 2))
    chols = np.broadcast_to(np.eye(2), (4, 2, 2)).copy()
    log_norms = np.zeros(4)
    log_density_matrix(x, means, chols, log_norms)
    q = np.full((2, 4), 0.25)
    pairs = np.array([[0, 1], [2, 3]], dtype=np.int64)
    constrain_rows(q, pairs)
    weighted_moments(x, q)
