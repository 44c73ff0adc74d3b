"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and the same semantics; :mod:`hybriddp.kernels` picks one at import time.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln, logsumexp

_BIG = 20.0


def _log_expm1(x: np.ndarray) -> np.ndarray:
    out = np.full(x.shape, -np.inf)
    small = (x > 0) & (x <= _BIG)
    big = x > _BIG
    out[small] = np.log(np.expm1(x[small]))
    out[big] = x[big] + np.log1p(-np.exp(-x[big]))
    return out


def binomial_log_mgf(alpha: int, q: float, x: np.ndarray) -> float:
    """log sum_{v=0}^{alpha} C(alpha, v) q^v (1-q)^(alpha-v) exp(x[v]).

    ``x[0]`` is taken to be zero and every ``x[v]`` must be nonnegative. The
    sum is regrouped as ``1 + sum_v w_v * expm1(x[v])`` so small results keep
    full relative precision.
    """
    if q <= 0.0:
        return 0.0
    if q >= 1.0:
        return float(x[alpha])
    v = np.arange(1, alpha + 1)
    logw = (
        gammaln(alpha + 1) - gammaln(v + 1) - gammaln(alpha - v + 1)
        + v * math.log(q) + (alpha - v) * math.log1p(-q)
    )
    terms = logw + _log_expm1(np.asarray(x[1 : alpha + 1], dtype=float))
    lse = logsumexp(terms) if np.isfinite(terms).any() else -np.inf
    return float(np.logaddexp(0.0, lse))


def subsampled_gaussian_curve(amax: int, q: float, z: float) -> np.ndarray:
    """eps(alpha) for alpha = 2..amax of the 1-D subsampled Gaussian, z = s^2/(2 sigma^2)."""
    out = np.empty(amax - 1)
    v = np.arange(amax + 1, dtype=float)
    x = v * (v - 1.0) * z
    for i, alpha in enumerate(range(2, amax + 1)):
        out[i] = binomial_log_mgf(alpha, q, x) / (alpha - 1)
    return out


def twice_curve(amax: int, q1: float, eps0: np.ndarray) -> np.ndarray:
    """eps(alpha) for alpha = 2..amax of twice sampling; eps0[v] is the inner RDP at order v."""
    out = np.empty(amax - 1)
    v = np.arange(amax + 1, dtype=float)
    x = np.zeros(amax + 1)
    x[2:] = (v[2:] - 1.0) * np.asarray(eps0[2 : amax + 1], dtype=float)
    for i, alpha in enumerate(range(2, amax + 1)):
        out[i] = binomial_log_mgf(alpha, q1, x) / (alpha - 1)
    return out


def max_sign_quadratic(A: np.ndarray) -> tuple[float, np.ndarray]:
    """Max of z^T A z over z in {-1, +1}^d by exhaustive enumeration.

    Only sign patterns with z[0] = +1 are visited (z and -z tie).
    """
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    if d == 1:
        return float(A[0, 0]), np.ones(1, dtype=np.int8)
    best = -np.inf
    best_z = None
    n_free = d - 1
    chunk = 1 << min(n_free, 14)
    bits = np.arange(n_free)
    for start in range(0, 1 << n_free, chunk):
        idx = np.arange(start, min(start + chunk, 1 << n_free))
        Z = np.ones((idx.size, d))
        Z[:, 1:] = 1.0 - 2.0 * ((idx[:, None] >> bits) & 1)
        vals = np.einsum("ij,jk,ik->i", Z, A, Z)
        k = int(np.argmax(vals))
        if vals[k] > best:
            best = float(vals[k])
            best_z = Z[k].astype(np.int8)
    return best, best_z
