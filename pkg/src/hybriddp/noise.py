"""Optimal anisotropic Gaussian noise for structured sensitivity sets.

The privacy loss of noise with covariance U diag(sigma^2) U^T against a
sensitivity set S is sup_{s in S} sum_i (s . u_i)^2 / sigma_i^2. Its
reciprocal is what a given RDP budget buys per unit of noise, so the optimal
profiles below minimize total variance at fixed loss.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .errors import InfeasibleError, UnsupportedError, ValidationError
from .rdp import (
    SIGMA_BRACKET,
    RdpCurve,
    _check_alphas,
    compose_and_convert,
    coordinate_hybrid_curve,
    default_alphas,
    twice_curve,
)
from .sensitivity import (
    Hybrid,
    Hypercube,
    L2Ball,
    LpLinfMix,
    SensitivitySpec,
    SubspaceClip,
    dominating_sensitivity,
    dominating_vector,
)
from .subspace import OrthoBasis

MAX_ENUM_DIM = 20
ALIGN_TOL = 1e-9


def b0(alpha: float, target_eps: float) -> float:
    """Noise multiplier sqrt(alpha / (2 eps)) that turns unit loss into eps at order alpha."""
    if not target_eps > 0:
        raise ValidationError(f"target eps must be positive, got {target_eps}")
    if not alpha > 1:
        raise ValidationError(f"alpha must exceed 1, got {alpha}")
    return math.sqrt(alpha / (2.0 * target_eps))


@dataclass
class NoiseProfile:
    """Per-direction or per-block standard deviations in an orthonormal frame.

    ``basis=None`` means the natural basis, which keeps very large profiles
    cheap. ``block_ranks`` is taken from the basis when one is given.
    """

    sigmas: np.ndarray
    block_ranks: tuple | None = None
    basis: OrthoBasis | None = field(default=None, repr=False)

    def __post_init__(self):
        sig = np.atleast_1d(np.asarray(self.sigmas, dtype=float))
        if sig.ndim != 1 or not np.all(np.isfinite(sig)) or np.any(sig < 0):
            raise ValidationError("sigmas must be a finite nonnegative vector")
        if self.basis is not None:
            self.block_ranks = self.basis.block_ranks
        if self.block_ranks is not None:
            self.block_ranks = tuple(int(r) for r in self.block_ranks)
            if len(sig) not in (len(self.block_ranks), sum(self.block_ranks)):
                raise ValidationError(
                    f"{len(sig)} sigmas match neither {len(self.block_ranks)} blocks "
                    f"nor dimension {sum(self.block_ranks)}"
                )
        self.sigmas = sig

    @property
    def per_block(self) -> bool:
        return self.block_ranks is not None and len(self.sigmas) == len(self.block_ranks) != sum(
            self.block_ranks
        )

    @property
    def d(self) -> int:
        return sum(self.block_ranks) if self.block_ranks is not None else len(self.sigmas)

    def per_direction(self) -> np.ndarray:
        if self.per_block:
            return np.repeat(self.sigmas, self.block_ranks)
        return self.sigmas

    @property
    def total_variance(self) -> float:
        if self.per_block:
            return float(np.dot(self.block_ranks, self.sigmas**2))
        return float(np.sum(self.sigmas**2))

    def to_dict(self) -> dict:
        return {
            "sigmas": self.sigmas.tolist(),
            "block_ranks": list(self.block_ranks) if self.block_ranks is not None else None,
            "per_block": self.per_block,
            "total_variance": self.total_variance,
        }

    def save(self, path) -> Path:
        """Write the profile as JSON; a non-natural basis goes next to it as CSV."""
        path = Path(path)
        obj = self.to_dict()
        if self.basis is not None:
            basis_path = path.with_name(path.stem + "_basis.csv")
            self.basis.save(basis_path)
            obj["basis"] = basis_path.name
        path.write_text(json.dumps(obj, indent=2))
        return path

    @classmethod
    def load(cls, path) -> "NoiseProfile":
        path = Path(path)
        obj = json.loads(path.read_text())
        basis = OrthoBasis.load(path.with_name(obj["basis"])) if obj.get("basis") else None
        return cls(np.asarray(obj["sigmas"]), obj.get("block_ranks"), basis)


@dataclass
class LossEval:
    value: float
    witness: np.ndarray | None = None


# ------------------------------------------------------------ privacy loss


def _frame(U, sigmas) -> tuple[np.ndarray | None, np.ndarray, tuple | None]:
    """Resolve (basis matrix or None, per-direction sigmas, block ranks)."""
    sig = np.atleast_1d(np.asarray(sigmas, dtype=float))
    if not np.all(np.isfinite(sig)) or np.any(sig < 0):
        raise ValidationError("sigmas must be finite and nonnegative")
    ranks = None
    if isinstance(U, OrthoBasis):
        ranks = U.block_ranks
        mat = U.columns
        if len(sig) == len(ranks) and len(sig) != U.d:
            sig = np.repeat(sig, ranks)
    elif U is None:
        mat = None
    else:
        mat = np.asarray(U, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValidationError("U must be a square orthonormal matrix")
        if np.max(np.abs(mat.T @ mat - np.eye(mat.shape[0]))) > 1e-10:
            raise ValidationError("U is not orthonormal")
    if mat is not None and len(sig) != mat.shape[0]:
        raise ValidationError(f"{len(sig)} sigmas for a basis of dimension {mat.shape[0]}")
    return mat, sig, ranks


def _inv_var(sig: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(sig > 0, 1.0 / np.maximum(sig, 1e-300) ** 2, np.inf)


def _ball_loss(c2: float, mat, sig) -> LossEval:
    k = int(np.argmin(sig))
    value = c2**2 * _inv_var(sig)[k] if c2 > 0 else 0.0
    coords = np.zeros(len(sig))
    coords[k] = c2
    return LossEval(float(value), coords if mat is None else mat @ coords)


def _aligned_permutation(M: np.ndarray) -> np.ndarray | None:
    """perm[l] = i when cube axis l coincides with noise direction i (up to sign)."""
    A = np.abs(M)
    perm = np.argmax(A, axis=1)
    if len(set(perm.tolist())) != len(perm):
        return None
    if np.max(np.abs(A[np.arange(len(perm)), perm] - 1.0)) > ALIGN_TOL:
        return None
    return perm


def _hypercube_loss(spec: Hypercube, mat, sig) -> LossEval:
    d = spec.d
    if len(sig) != d:
        raise ValidationError(f"{len(sig)} sigmas for a hypercube of dimension {d}")
    V = np.asarray(spec.V)
    W = np.eye(d) if spec.basis is None else spec.basis
    M = W.T @ (np.eye(d) if mat is None else mat)  # cube axis -> noise coordinates
    inv = _inv_var(sig)
    perm = _aligned_permutation(M)
    if perm is not None:
        contrib = np.where(V > 0, V**2 * inv[perm], 0.0)
        return LossEval(float(np.sum(contrib)), W @ V)
    if d > MAX_ENUM_DIM:
        raise UnsupportedError(
            f"unaligned hypercube in dimension {d} exceeds the enumeration limit {MAX_ENUM_DIM}"
        )
    live = np.any(np.abs(M * V[:, None]) > 0, axis=0)
    if np.any(np.isinf(inv) & live):
        return LossEval(math.inf, W @ V)
    inv = np.where(np.isinf(inv), 0.0, inv)
    B = M * V[:, None]
    A = (B * inv) @ B.T
    value, z = kernels.max_sign_quadratic(A)
    return LossEval(float(value), W @ (V * z))


def _block_knapsack(c2: float, cinf: float, sig: np.ndarray) -> tuple[float, np.ndarray]:
    """sup of sum y_l / sigma_l^2 over y_l = s_l^2 in [0, cinf^2], sum y_l <= c2^2 (greedy)."""
    inv = _inv_var(sig)
    order = np.argsort(-inv, kind="stable")
    budget = c2**2
    coords = np.zeros(len(sig))
    value = 0.0
    for l in order:
        if budget <= 0:
            break
        y = min(cinf**2, budget)
        coords[l] = math.sqrt(y)
        value += y * inv[l]
        budget -= y
    return float(value), coords


def _hybrid_loss(spec: Hybrid, mat, sig, ranks) -> LossEval:
    d = spec.d
    if len(sig) == len(spec.blocks) and len(sig) != d:
        sig = np.repeat(sig, spec.ranks)
    if len(sig) != d:
        raise ValidationError(f"{len(sig)} sigmas for a hybrid set of dimension {d}")
    if ranks is not None and tuple(ranks) != tuple(spec.ranks):
        raise UnsupportedError(f"hybrid blocks {spec.ranks} are not aligned with basis blocks {ranks}")
    coords = np.zeros(d)
    total, start = 0.0, 0
    for b in spec.blocks:
        sl = slice(start, start + b.rank)
        cinf = b.cinf if b.cinf is not None else b.c2
        v, coords[sl] = _block_knapsack(b.c2, cinf, sig[sl])
        total += v
        start += b.rank
    return LossEval(total, coords if mat is None else mat @ coords)


def privacy_loss(U, sigmas, set: SensitivitySpec) -> LossEval:
    """Worst-case whitened squared sensitivity sup_s sum_i (s . u_i)^2 / sigma_i^2.

    ``U`` is an :class:`OrthoBasis`, a d x d orthonormal matrix, or None for the
    natural basis. Per-block sigmas are broadcast over an OrthoBasis's blocks.
    """
    mat, sig, ranks = _frame(U, sigmas)
    if isinstance(set, L2Ball):
        return _ball_loss(set.c2, mat, sig)
    if isinstance(set, LpLinfMix):
        if np.ptp(sig) > 0:
            raise UnsupportedError("l_p + l_inf sets are only supported with isotropic noise")
        d = set.d if set.d is not None else max(len(sig), 1)
        vec = dominating_vector(set.p, set.cp, set.cinf, d)
        value = float(np.dot(vec, vec) * _inv_var(sig)[0])
        return LossEval(value, vec)
    if isinstance(set, Hypercube):
        return _hypercube_loss(set, mat, sig)
    if isinstance(set, Hybrid):
        return _hybrid_loss(set, mat, sig, ranks)
    raise UnsupportedError(f"privacy loss not implemented for {type(set).__name__}")


# ------------------------------------------------------- optimal profiles


def max_l2_lp_linf(p: float, cp: float, cinf: float, d: int) -> float:
    """Largest l2 norm over {||s||_p <= cp, ||s||_inf <= cinf} in dimension d."""
    d0, c_rem = dominating_sensitivity(p, cp, cinf, d)
    return math.sqrt(d0 * min(cinf, cp) ** 2 + c_rem**2)


def optimal_noise_symmetric(d: int, max_l2: float, alpha, target_eps: float) -> NoiseProfile:
    """Isotropic noise b0 * max_l2, optimal for any sign- and permutation-symmetric set."""
    if int(d) != d or d < 1:
        raise ValidationError(f"d must be a positive integer, got {d}")
    if not max_l2 > 0:
        raise ValidationError("max_l2 must be positive")
    return NoiseProfile(np.array([b0(alpha, target_eps) * max_l2]), (int(d),))


def optimal_noise_hypercube(V, alpha, target_eps: float) -> NoiseProfile:
    """sigma_l = b0 * sqrt(V_l * sum V): variance proportional to each half-side."""
    V = np.asarray(V, dtype=float)
    if V.ndim != 1 or V.size == 0 or np.any(V < 0) or not np.all(np.isfinite(V)):
        raise ValidationError("V must be a nonempty finite nonnegative vector")
    total = float(V.sum())
    if total <= 0:
        raise ValidationError("hypercube has all-zero sides")
    return NoiseProfile(b0(alpha, target_eps) * np.sqrt(V * total))


def optimal_noise_hybrid(blocks: Sequence[tuple[int, float]], alpha, target_eps: float) -> NoiseProfile:
    """Isotropic noise within each l2 block, sigma_j = b0 sqrt(c_j S / sqrt(r_j)), S = sum c_l sqrt(r_l)."""
    if not blocks:
        raise ValidationError("at least one block is required")
    r = np.array([int(b[0]) for b in blocks])
    c = np.array([float(b[1]) for b in blocks])
    if np.any(r < 1) or np.any(c <= 0):
        raise ValidationError("block ranks must be >= 1 and budgets positive")
    S = float(np.sum(c * np.sqrt(r)))
    return NoiseProfile(b0(alpha, target_eps) * np.sqrt(c * S / np.sqrt(r)), tuple(r))


# ------------------------------------------------- twice-sampling optimizer


@dataclass
class TwiceNoiseResult:
    sigmas: np.ndarray
    ranks: tuple
    total_variance: float
    alpha_star: int
    achieved_eps: float
    target_eps: float
    baseline_variance: float
    local_min: bool
    evaluations: int

    @property
    def slack(self) -> float:
        return (self.target_eps - self.achieved_eps) / self.target_eps

    def profile(self) -> NoiseProfile:
        return NoiseProfile(self.sigmas, self.ranks)

    def to_dict(self) -> dict:
        return {
            "sigmas": self.sigmas.tolist(),
            "ranks": list(self.ranks),
            "total_variance": self.total_variance,
            "alpha_star": self.alpha_star,
            "achieved_eps": self.achieved_eps,
            "target_eps": self.target_eps,
            "slack": self.slack,
            "baseline_variance": self.baseline_variance,
            "local_min": self.local_min,
            "evaluations": self.evaluations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class _TwiceConstraint:
    """Converted epsilon of twice sampling as a function of per-block sigmas."""

    def __init__(self, q1, q2, blocks, T, delta, alphas):
        self.q1, self.q2, self.T, self.delta = q1, q2, T, delta
        self.alphas = alphas
        self.dominating = []
        for r, c2, d0 in blocks:
            d0, c_rem, cinf = SubspaceClip(int(r), float(c2), d0=int(d0)).dominating()
            self.dominating.append((cinf, d0, c_rem))
        self.calls = 0

    def __call__(self, sigmas) -> tuple[float, int]:
        self.calls += 1
        blocks = [(s, cinf, d0, c_rem) for s, (cinf, d0, c_rem) in zip(sigmas, self.dominating)]
        curve = twice_curve(
            self.alphas, self.q1, lambda orders: coordinate_hybrid_curve(orders, self.q2, blocks)
        )
        return compose_and_convert(RdpCurve.from_arrays(self.alphas, curve), self.T, self.delta)


def _min_scale(g: _TwiceConstraint, w: np.ndarray, target: float) -> float:
    """Smallest k with g(k w) <= target; w is normalized so max(w) = 1."""
    lo, hi = SIGMA_BRACKET
    f = lambda logk: math.log(g(math.exp(logk) * w)[0]) - math.log(target)
    if f(math.log(hi)) > 0:
        raise InfeasibleError(f"target eps {target} unreachable with noise scale up to {hi:g}")
    if f(math.log(lo)) <= 0:
        return lo
    logk = brentq(f, math.log(lo), math.log(hi), xtol=1e-13, rtol=1e-13)
    step = 1e-12
    while f(logk) > 0:
        logk += step
        step *= 2
    return math.exp(logk)


def _golden(fun, a: float, b: float, tol: float) -> tuple[float, float]:
    invphi = (math.sqrt(5) - 1) / 2
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return (c, fc) if fc < fd else (d, fd)


def optimize_noise_twice_hybrid(
    q1: float,
    q2: float,
    blocks: Sequence[tuple[int, float, int]],
    T: int,
    delta: float,
    target_eps_total: float,
    alpha_grid=None,
    tol: float = 1e-6,
    max_cycles: int = 50,
) -> TwiceNoiseResult:
    """Per-block sigmas minimizing sum r_j sigma_j^2 under a twice-sampling budget.

    The constraint is the twice-sampling RDP with per-block coordinate
    sampling inside, composed T times and converted to (eps, delta). Direction
    and scale are split: for a direction w the scale is the smallest feasible
    multiple (root finding), and w is improved by cyclic golden-section search
    on each log w_j. The search starts from the better of isotropic noise and
    the ideal-clipping allocation.
    """
    if not blocks:
        raise ValidationError("at least one block is required")
    if not target_eps_total > 0:
        raise ValidationError("target eps must be positive")
    alphas = _check_alphas(default_alphas() if alpha_grid is None else alpha_grid)
    g = _TwiceConstraint(float(q1), float(q2), blocks, int(T), float(delta), alphas)
    r = np.array([int(b[0]) for b in blocks], dtype=float)
    c = np.array([float(b[1]) for b in blocks])

    def objective(logw: np.ndarray) -> float:
        w = np.exp(logw - logw.max())
        k = _min_scale(g, w, target_eps_total)
        return k * k * float(np.dot(r, w * w))

    iso = np.zeros(len(blocks))
    baseline = objective(iso)
    shaped = 0.5 * np.log(c / np.sqrt(r))
    f_shaped = objective(shaped)
    logw, best = (shaped, f_shaped) if f_shaped < baseline else (iso.copy(), baseline)

    if len(blocks) > 1:
        for _ in range(max_cycles):
            start = best
            for j in range(len(blocks)):
                center = logw[j]
                width = math.log(2.0)
                while True:
                    trial = logw.copy()

                    def along(t):
                        trial[j] = center + t
                        return objective(trial)

                    t, ft = _golden(along, -width, width, 1e-4)
                    if ft < best:
                        logw[j], best = center + t, ft
                    if abs(t) < 0.9 * width:
                        break
                    center = logw[j]
            if start - best <= tol * start:
                break

    w = np.exp(logw - logw.max())
    sigmas = _min_scale(g, w, target_eps_total) * w
    eps, alpha_star = g(sigmas)
    variance = float(np.dot(r, sigmas**2))

    local_min = True
    for j in range(len(blocks)):
        for factor in (0.99, 1.01):
            trial = sigmas.copy()
            trial[j] *= factor
            if g(trial)[0] <= target_eps_total and np.dot(r, trial**2) < variance * (1 - 1e-6):
                local_min = False

    return TwiceNoiseResult(
        sigmas=sigmas,
        ranks=tuple(int(x) for x in r),
        total_variance=variance,
        alpha_star=alpha_star,
        achieved_eps=eps,
        target_eps=float(target_eps_total),
        baseline_variance=baseline,
        local_min=local_min,
        evaluations=g.calls,
    )
