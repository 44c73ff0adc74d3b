"""Independent numerical checks for the closed-form bounds.

Nothing here calls into the closed-form RDP code: divergences are integrated
directly from mixture densities, loss suprema are found by visiting every
hypercube vertex, and the two convexity facts behind the optimality results
are tested on random instances.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import NumericError, UnsupportedError, ValidationError
from .noise import LossEval

GL_NODES = 16
MAX_NODES_1D = 1 << 20
MAX_NODES_2D = 1 << 22
WINDOW_SIGMAS = 12.0
# absolute convergence floor: below this, first-order cancellation noise dominates
ABS_TOL = 1e-18
_CHUNK_ELEMS = 1 << 21
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_NODES)


@dataclass(frozen=True)
class GaussianMixture1D:
    """Finite mixture of 1-D Gaussians given as (weight, mean, sigma) triples."""

    components: tuple

    def __post_init__(self):
        comps = []
        for c in self.components:
            w, mu, s = (float(x) for x in c)
            if not (0.0 <= w <= 1.0) or not math.isfinite(mu) or not (s > 0 and math.isfinite(s)):
                raise ValidationError(f"bad mixture component {c}")
            if w > 0:
                comps.append((w, mu, s))
        if not comps:
            raise ValidationError("mixture needs at least one component with positive weight")
        total = math.fsum(w for w, _, _ in comps)
        if abs(total - 1.0) > 1e-12:
            raise ValidationError(f"mixture weights sum to {total!r}, not 1")
        object.__setattr__(self, "components", tuple(comps))

    @classmethod
    def gaussian(cls, mean: float = 0.0, sigma: float = 1.0) -> "GaussianMixture1D":
        return cls(((1.0, mean, sigma),))

    @property
    def weights(self) -> np.ndarray:
        return np.array([c[0] for c in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.array([c[1] for c in self.components])

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([c[2] for c in self.components])

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)[..., None]
        w, mu, s = self.weights, self.means, self.sigmas
        comp = np.log(w) - 0.5 * ((x - mu) / s) ** 2 - np.log(s) - 0.5 * math.log(2 * math.pi)
        return logsumexp(comp, axis=-1)


# ---------------------------------------------------------------- quadrature


def _panel_rule(a: float, b: float, panels: int) -> tuple[np.ndarray, np.ndarray]:
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * _GL_X).ravel()
    w = (half[:, None] * _GL_W).ravel()
    return x, w


def _renyi_integral(logp, logq, alpha: int, pts: np.ndarray, wts: np.ndarray) -> tuple[float, float]:
    """Return (log I, I - 1) for I = integral of q (p/q)^alpha on the given rule.

    The I - 1 form integrates q * expm1(alpha log(p/q)) and keeps precision when
    p and q nearly coincide; log I is used when the integrand is large.
    """
    lp, lq = logp(pts), logq(pts)
    t = alpha * (lp - lq)
    logf = lq + t
    m = float(np.max(logf))
    log_total = m + math.log(float(np.dot(wts, np.exp(logf - m))))
    if m > 600.0:
        return log_total, math.inf
    big = t > 1.0
    excess = np.empty_like(t)
    excess[big] = np.exp(logf[big]) - np.exp(lq[big])
    excess[~big] = np.exp(lq[~big]) * np.expm1(t[~big])
    return log_total, float(np.dot(wts, excess))


def _eps_from(log_total: float, excess: float, alpha: int) -> float:
    if math.isfinite(excess) and abs(excess) < 0.5:
        return max(math.log1p(excess), 0.0) / (alpha - 1)
    return max(log_total, 0.0) / (alpha - 1)


def _tilted_range(P_means, P_sig, Q_means, Q_sig, alpha) -> tuple[float, float, float] | None:
    """Extent of the per-pair tilted Gaussian centers and their smallest width; None if divergent."""
    lam = alpha / P_sig[:, None] ** 2 - (alpha - 1) / Q_sig[None, :] ** 2
    if np.any(lam <= 0):
        return None
    centers = (alpha * (P_means / P_sig**2)[:, None] - (alpha - 1) * (Q_means / Q_sig**2)[None, :]) / lam
    return float(centers.min()), float(centers.max()), float(1.0 / math.sqrt(lam.max()))


def renyi_quadrature_1d(
    P: GaussianMixture1D, Q: GaussianMixture1D, alpha: int, rtol: float = 1e-9
) -> float:
    """D_alpha(P || Q) by composite Gauss-Legendre quadrature with panel doubling.

    The window spans every component mean and every tilted-product center
    (where the integrand actually peaks for large alpha), padded by 12 of the
    widest standard deviations.
    """
    if int(alpha) != alpha or alpha < 2:
        raise ValidationError(f"alpha must be an integer >= 2, got {alpha}")
    alpha = int(alpha)
    tilt = _tilted_range(P.means, P.sigmas, Q.means, Q.sigmas, alpha)
    if tilt is None:
        return math.inf
    t_lo, t_hi, t_width = tilt
    all_means = np.concatenate([P.means, Q.means])
    smax = max(P.sigmas.max(), Q.sigmas.max())
    a = min(all_means.min(), t_lo) - WINDOW_SIGMAS * smax
    b = max(all_means.max(), t_hi) + WINDOW_SIGMAS * smax
    smin = min(P.sigmas.min(), Q.sigmas.min(), t_width)
    panels = max(8, int(math.ceil((b - a) / smin)))
    prev = est = None
    while panels * GL_NODES <= MAX_NODES_1D:
        x, w = _panel_rule(a, b, panels)
        prev, est = est, _eps_from(*_renyi_integral(P.logpdf, Q.logpdf, alpha, x, w), alpha)
        if prev is not None and abs(est - prev) <= rtol * abs(est) + ABS_TOL:
            return est
        panels *= 2
    raise NumericError(f"quadrature did not converge: last estimates {prev!r}, {est!r}")


# ------------------------------------------------ exact twice-sampling mixtures


def row_mask_distribution(d: int, q1: float, q2: float) -> list[tuple[np.ndarray, float]]:
    """(mask, probability) for one row after input-wise then coordinate-wise sampling."""
    out = []
    for bits in itertools.product((0, 1), repeat=d):
        m = np.array(bits, dtype=float)
        k = int(m.sum())
        if k == 0:
            prob = 1.0 - q1 + q1 * (1.0 - q2) ** d
        else:
            prob = q1 * q2**k * (1.0 - q2) ** (d - k)
        if prob > 0:
            out.append((m, prob))
    return out


def sum_mixture(rows: np.ndarray, q1: float, q2: float) -> tuple[np.ndarray, np.ndarray]:
    """Means and weights of the distribution of sum_i mask_i * row_i (before noise).

    Components with the same mean are merged.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    d = rows.shape[1]
    masks = row_mask_distribution(d, q1, q2)
    merged = {(0.0,) * d: 1.0}
    for row in rows:
        nxt: dict = {}
        for mean, w in merged.items():
            for m, p in masks:
                key = tuple(np.round(np.asarray(mean) + m * row, 15))
                nxt[key] = nxt.get(key, 0.0) + w * p
        merged = nxt
    means = np.array(list(merged.keys()), dtype=float).reshape(-1, d)
    weights = np.array(list(merged.values()))
    return means, weights / weights.sum()


def _iso_logpdf(means: np.ndarray, weights: np.ndarray, sigma: float) -> Callable:
    d = means.shape[1]
    logw = np.log(weights)
    const = -d * (math.log(sigma) + 0.5 * math.log(2 * math.pi))

    inv2 = 1.0 / (2 * sigma**2)
    bias = logw - inv2 * np.sum(means**2, axis=1)
    scaled = means.T * (2 * inv2)

    def f(pts: np.ndarray) -> np.ndarray:
        out = np.empty(len(pts))
        step = max(1, _CHUNK_ELEMS // len(means))
        for i in range(0, len(pts), step):
            blk = pts[i : i + step]
            # log w_k - |x - mu_k|^2 / (2 sigma^2), with the |x|^2 term factored out
            z = blk @ scaled + bias
            m = z.max(axis=1)
            out[i : i + step] = m + np.log(np.exp(z - m[:, None]).sum(axis=1)) - inv2 * np.sum(blk**2, axis=1)
        return out + const

    return f


def _divergence_2d(mP, wP, mQ, wQ, sigma: float, alpha: int, rtol: float) -> float:
    logp, logq = _iso_logpdf(mP, wP, sigma), _iso_logpdf(mQ, wQ, sigma)
    lo = np.minimum(mP.min(0), mQ.min(0))
    hi = np.maximum(mP.max(0), mQ.max(0))
    # tilted centers alpha*mu_P - (alpha-1)*mu_Q bound where the integrand can peak
    lo = np.minimum(lo, alpha * mP.min(0) - (alpha - 1) * mQ.max(0)) - WINDOW_SIGMAS * sigma
    hi = np.maximum(hi, alpha * mP.max(0) - (alpha - 1) * mQ.min(0)) + WINDOW_SIGMAS * sigma

    # coarse pass: drop the part of the window where the integrand is negligible
    g = [np.linspace(lo[k], hi[k], 121) for k in range(2)]
    X, Y = np.meshgrid(*g, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    lf = (alpha * logp(pts) - (alpha - 1) * logq(pts)).reshape(X.shape)
    keep = lf > lf.max() - 50.0
    step = (hi - lo) / 120
    for k, axis in enumerate((1, 0)):
        idx = np.flatnonzero(keep.any(axis=axis))
        lo[k], hi[k] = g[k][idx[0]] - 2 * step[k], g[k][idx[-1]] + 2 * step[k]

    panels = np.maximum(4, np.ceil((hi - lo) / (2 * sigma))).astype(int)
    prev = est = None
    while np.prod(panels * GL_NODES) <= MAX_NODES_2D:
        (x0, w0), (x1, w1) = (_panel_rule(lo[k], hi[k], panels[k]) for k in range(2))
        X, Y = np.meshgrid(x0, x1, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        wts = np.outer(w0, w1).ravel()
        prev, est = est, _eps_from(*_renyi_integral(logp, logq, alpha, pts, wts), alpha)
        if prev is not None and abs(est - prev) <= rtol * abs(est) + ABS_TOL:
            return est
        panels = panels * 2
    raise NumericError(f"2-D quadrature did not converge: last estimates {prev!r}, {est!r}")


def exact_twice_mixture_divergence(
    Y, x, q1: float, q2: float, sigma: float, alpha: int, rtol: float = 1e-6
) -> float:
    """Exact Renyi divergence of twice sampling between datasets Y and Y plus row x.

    The released sum is a Gaussian mixture over every input/coordinate
    selection pattern; both directions are integrated and the larger returned.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.size
    Y = np.asarray(Y, dtype=float).reshape(-1, d) if np.size(Y) else np.zeros((0, d))
    n = Y.shape[0]
    if n > 3 or d > 2:
        raise UnsupportedError(f"instance too large for exact enumeration (n={n}, d={d}; need n <= 3, d <= 2)")
    if not (0 <= q1 <= 1 and 0 <= q2 <= 1):
        raise ValidationError("sampling rates must lie in [0, 1]")
    if not sigma > 0:
        raise ValidationError("sigma must be positive")
    if int(alpha) != alpha or alpha < 2:
        raise ValidationError("alpha must be an integer >= 2")
    alpha = int(alpha)
    if q1 == 0 or q2 == 0 or not np.any(x):
        return 0.0
    mQ, wQ = sum_mixture(Y, q1, q2) if n else (np.zeros((1, d)), np.ones(1))
    mP, wP = sum_mixture(np.vstack([Y, x]), q1, q2)
    if d == 1:
        P = GaussianMixture1D(tuple((w, m, sigma) for w, m in zip(wP, mP[:, 0])))
        Q = GaussianMixture1D(tuple((w, m, sigma) for w, m in zip(wQ, mQ[:, 0])))
        rtol1 = min(rtol, 1e-9)
        return max(renyi_quadrature_1d(P, Q, alpha, rtol1), renyi_quadrature_1d(Q, P, alpha, rtol1))
    return max(
        _divergence_2d(mP, wP, mQ, wQ, sigma, alpha, rtol),
        _divergence_2d(mQ, wQ, mP, wP, sigma, alpha, rtol),
    )


# ------------------------------------------------------- brute-force suprema


def vertex_sup_loss(U, sigmas, V) -> LossEval:
    """Maximum of sum_i (s . u_i)^2 / sigma_i^2 over all 2^d vertices s = V * z."""
    V = np.asarray(V, dtype=float)
    d = V.size
    if d > 20:
        raise UnsupportedError(f"vertex enumeration limited to d <= 20, got {d}")
    U = np.eye(d) if U is None else np.asarray(getattr(U, "columns", U), dtype=float)
    sig = np.broadcast_to(np.asarray(sigmas, dtype=float), (d,))
    best, best_s = -math.inf, None
    n = 1 << d
    chunk = 1 << 14
    bits = np.arange(d)
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        S = V * (1.0 - 2.0 * ((idx[:, None] >> bits) & 1))
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.nansum((S @ U) ** 2 / sig**2, axis=1)
        k = int(np.argmax(vals))
        if vals[k] > best:
            best, best_s = float(vals[k]), S[k].copy()
    return LossEval(best, best_s)


# ---------------------------------------------------------- convexity lemmas


def sinkhorn(A, iters: int = 1000, tol: float = 1e-14) -> np.ndarray:
    """Scale a positive matrix to doubly stochastic by alternating normalization."""
    M = np.array(A, dtype=float)
    for _ in range(iters):
        M /= M.sum(axis=1, keepdims=True)
        M /= M.sum(axis=0, keepdims=True)
        if np.max(np.abs(M.sum(axis=1) - 1.0)) < tol:
            break
    return M


def concave_majorization_gap(M, a, f: Callable = np.sqrt) -> float:
    """sum f((M a)_i) - sum f(a_i); nonnegative for doubly stochastic M and concave f."""
    a = np.asarray(a, dtype=float)
    return float(np.sum(f(np.asarray(M) @ a)) - np.sum(f(a)))


def log_sum_midpoint_gap(f1, f2, x0: float, x1: float) -> float:
    """Midpoint convexity gap of log(f1 + f2), given log f1 and log f2 as callables."""
    h = lambda x: np.logaddexp(f1(x), f2(x))
    return float(0.5 * (h(x0) + h(x1)) - h(0.5 * (x0 + x1)))


def check_lemma_properties(rng=None, trials: int = 10_000, d: int = 6, slack: float = 1e-10) -> dict:
    """Random checks of: log(f+g) convex for log-convex f, g; and sum sqrt((Ma)_i) >= sum sqrt(a_i).

    The log-convex pairs are exponential-quadratic forms c + b x + a x^2 with
    a >= 0, the shape of each term of the coordinate-sampling series viewed as
    a function of 1/sigma^2.
    """
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    worst_a, bad_a = 0.0, 0
    for _ in range(trials):
        a1, a2 = gen.exponential(1.0, 2)
        b1, b2, c1, c2 = gen.normal(0.0, 3.0, 4)
        f1 = lambda x, a=a1, b=b1, c=c1: c + b * x + a * x * x
        f2 = lambda x, a=a2, b=b2, c=c2: c + b * x + a * x * x
        x0, x1 = gen.uniform(-3.0, 3.0, 2)
        gap = log_sum_midpoint_gap(f1, f2, x0, x1)
        scale = 1.0 + abs(f1(x0)) + abs(f2(x1))
        if gap < -slack * scale:
            bad_a += 1
        worst_a = min(worst_a, gap / scale)

    worst_b, bad_b = 0.0, 0
    for _ in range(trials):
        M = sinkhorn(gen.exponential(1.0, (d, d)))
        a = np.sort(gen.exponential(1.0, d))
        gap = concave_majorization_gap(M, a)
        if gap < -slack:
            bad_b += 1
        worst_b = min(worst_b, gap)

    return {
        "trials": trials,
        "log_convexity": {"violations": bad_a, "worst_gap": worst_a},
        "majorization": {"violations": bad_b, "worst_gap": worst_b, "d": d},
        "passed": bad_a == 0 and bad_b == 0,
    }


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2)
