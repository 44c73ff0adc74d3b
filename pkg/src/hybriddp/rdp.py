"""Closed-form Renyi-DP bounds: pure, input-wise, coordinate-wise and twice sampling.

All orders are integers >= 2. Every series is evaluated in a regrouped
log-space form so that tiny and astronomically large results both keep
their relative precision.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import InfeasibleError, NumericError, UnsupportedError, ValidationError
from .sensitivity import (
    Hybrid,
    Hypercube,
    L2Ball,
    LpLinfMix,
    SensitivitySpec,
    dominating_sensitivity,
    spec_from_dict,
    spec_to_dict,
)

DEFAULT_ALPHA_MAX = 256
SIGMA_BRACKET = (1e-3, 1e4)


def alpha_max() -> int:
    """Ceiling of the default order grid; overridable with HYBRIDDP_ALPHA_MAX."""
    raw = os.environ.get("HYBRIDDP_ALPHA_MAX")
    if raw is None:
        return DEFAULT_ALPHA_MAX
    try:
        value = int(raw)
    except ValueError:
        raise ValidationError(f"HYBRIDDP_ALPHA_MAX must be an integer, got {raw!r}") from None
    if value < 2:
        raise ValidationError("HYBRIDDP_ALPHA_MAX must be >= 2")
    return value


def default_alphas() -> list[int]:
    return list(range(2, alpha_max() + 1))


def _check_alpha(alpha) -> int:
    if int(alpha) != alpha or alpha < 2:
        raise ValidationError(f"Renyi order must be an integer >= 2, got {alpha}")
    return int(alpha)


def _check_rate(q, name: str = "q") -> float:
    q = float(q)
    if not (0.0 <= q <= 1.0):
        raise ValidationError(f"{name} must lie in [0, 1], got {q}")
    return q


def _check_sigma(sigma) -> float:
    sigma = float(sigma)
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ValidationError(f"sigma must be positive, got {sigma}")
    return sigma


def _check_alphas(alphas) -> list[int]:
    alphas = sorted({_check_alpha(a) for a in alphas})
    if not alphas:
        raise ValidationError("order grid is empty")
    return alphas


# ------------------------------------------------------------------ types


@dataclass(frozen=True)
class SamplingPlan:
    """Poisson rates: q1 over inputs, q2 over coordinates."""

    q1: float = 1.0
    q2: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "q1", _check_rate(self.q1, "q1"))
        object.__setattr__(self, "q2", _check_rate(self.q2, "q2"))

    @property
    def rate(self) -> float:
        """Marginal per-entry inclusion probability q1 * q2."""
        return self.q1 * self.q2


@dataclass
class RdpCurve:
    """Map from integer order to epsilon (nats)."""

    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for a, e in dict(self.entries).items():
            a = _check_alpha(a)
            e = float(e)
            if math.isnan(e) or e < 0:
                raise ValidationError(f"eps({a}) = {e} is not a nonnegative number")
            clean[a] = e
        if not clean:
            raise ValidationError("an RDP curve needs at least one order")
        self.entries = dict(sorted(clean.items()))

    @classmethod
    def from_arrays(cls, alphas: Sequence[int], eps: Sequence[float]) -> "RdpCurve":
        return cls(dict(zip((int(a) for a in alphas), (float(e) for e in eps))))

    @property
    def alphas(self) -> np.ndarray:
        return np.fromiter(self.entries.keys(), dtype=int)

    @property
    def eps(self) -> np.ndarray:
        return np.fromiter(self.entries.values(), dtype=float)

    def __getitem__(self, alpha: int) -> float:
        return self.entries[alpha]

    def __len__(self) -> int:
        return len(self.entries)

    def items(self):
        return self.entries.items()

    def scaled(self, T: int) -> "RdpCurve":
        return RdpCurve({a: T * e for a, e in self.entries.items()})

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "eps"])
            for a, e in self.entries.items():
                w.writerow([a, repr(e)])

    @classmethod
    def from_csv(cls, path) -> "RdpCurve":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or [c.strip() for c in rows[0]] != ["alpha", "eps"]:
            raise ValidationError(f"{path}: expected header 'alpha,eps'")
        entries = {}
        for lineno, row in enumerate(rows[1:], start=2):
            if len(row) != 2:
                raise ValidationError(f"{path}: row {lineno} has {len(row)} fields, expected 2")
            entries[int(row[0])] = float(row[1])
        return cls(entries)


# ------------------------------------------------------------ primitives


def gaussian_rdp(alpha: int, delta2: float, sigma: float) -> float:
    """RDP of the Gaussian mechanism with l2 sensitivity delta2: alpha*delta2^2/(2 sigma^2)."""
    alpha = _check_alpha(alpha)
    sigma = _check_sigma(sigma)
    if delta2 < 0:
        raise ValidationError("sensitivity must be nonnegative")
    return alpha * float(delta2) ** 2 / (2.0 * sigma**2)


def _log_lead(alpha: int, q: float) -> float:
    """log((1-q)^(alpha-1) * (1 + (alpha-1) q)), accurate when the result is tiny."""
    a = alpha - 1
    if a * q < 0.1:
        # the q^1 terms cancel exactly; sum the rest termwise
        total, k, qk = 0.0, 2, q * q
        while True:
            bound = qk / k * (a + a**k)
            total += qk / k * (-a + (-1) ** (k + 1) * a**k)
            if bound <= 1e-18 * abs(total) or k > 200:
                return total
            k += 1
            qk *= q
    return a * math.log1p(-q) + math.log1p(a * q)


def subsampled_gaussian_rdp_1d(alpha: int, q: float, s: float, sigma: float) -> float:
    """RDP of the 1-D Poisson-subsampled Gaussian with sensitivity s.

    Uses the grouping (1-q)^(a-1)(a q - q + 1) + sum_{v>=2} C(a,v)(1-q)^(a-v) q^v
    exp(v(v-1)s^2/(2 sigma^2)). The coordinate-sampling path evaluates the same
    quantity through :func:`kernels.binomial_log_mgf`; the two are kept separate
    so each can check the other.
    """
    alpha = _check_alpha(alpha)
    q = _check_rate(q)
    sigma = _check_sigma(sigma)
    s = abs(float(s))
    if q == 0.0 or s == 0.0:
        return 0.0
    z = s * s / (2.0 * sigma * sigma)
    if q == 1.0:
        return alpha * z
    lead = _log_lead(alpha, q)
    log1mq, logq = math.log1p(-q), math.log(q)
    log_terms = [
        math.log(math.comb(alpha, v)) + (alpha - v) * log1mq + v * logq + v * (v - 1) * z
        for v in range(2, alpha + 1)
    ]
    if max(log_terms) < 700.0:
        terms = []
        for v, lt in zip(range(2, alpha + 1), log_terms):
            e = (alpha - v) * log1mq + v * (v - 1) * z
            terms.append(math.comb(alpha, v) * q**v * math.exp(e) if e < 700.0 else math.exp(lt))
        excess = math.fsum([math.expm1(lead)] + terms)
        if abs(excess) < 1e-3 * max(terms):
            # heavy cancellation: the lead and the bare binomial weights sum to
            # exactly 1, so only the expm1 parts of the terms remain
            excess = math.fsum(
                math.comb(alpha, v) * q**v * math.exp((alpha - v) * log1mq) * math.expm1(v * (v - 1) * z)
                for v in range(2, alpha + 1)
            )
        return math.log1p(excess) / (alpha - 1)
    m = max(max(log_terms), lead)
    total = math.exp(lead - m) + math.fsum(math.exp(t - m) for t in log_terms)
    return (m + math.log(total)) / (alpha - 1)


def _one_dim(alpha: int, q: float, s: float, sigma: float) -> float:
    """Expm1-regrouped form of the 1-D bound via the shared binomial kernel."""
    if s == 0.0 or q == 0.0:
        return 0.0
    v = np.arange(alpha + 1, dtype=float)
    x = v * (v - 1.0) * (s * s / (2.0 * sigma * sigma))
    return kernels.binomial_log_mgf(alpha, q, x) / (alpha - 1)


def coordinate_sampling_rdp(
    alpha: int, q: float, d0: int, c_rem: float, cinf: float, sigma: float
) -> float:
    """RDP of coordinate-wise Poisson sampling under l_p + l_inf clipping.

    The dominating sensitivity has d0 coordinates at cinf and at most one at
    c_rem, and the bound is additive over independent coordinates.
    """
    alpha = _check_alpha(alpha)
    q = _check_rate(q)
    sigma = _check_sigma(sigma)
    if int(d0) != d0 or d0 < 0:
        raise ValidationError(f"d0 must be a nonnegative integer, got {d0}")
    if cinf <= 0 or c_rem < 0:
        raise ValidationError("cinf must be positive and c_rem nonnegative")
    eps = d0 * _one_dim(alpha, q, float(cinf), sigma)
    if c_rem > 0:
        eps += _one_dim(alpha, q, float(c_rem), sigma)
    return eps


def _normalize_blocks(blocks) -> list[tuple[float, float, int, float]]:
    out = []
    for b in blocks:
        if len(b) == 3:
            sigma, cinf, d0 = b
            c_rem = 0.0
        elif len(b) == 4:
            sigma, cinf, d0, c_rem = b
        else:
            raise ValidationError("hybrid block must be (sigma, cinf, d0[, c_rem])")
        out.append((_check_sigma(sigma), float(cinf), int(d0), float(c_rem)))
    if not out:
        raise ValidationError("hybrid coordinate sampling needs at least one block")
    return out


def coordinate_sampling_rdp_hybrid(alpha: int, q2: float, blocks) -> float:
    """Sum over blocks of the coordinate-sampling bound with block-local noise."""
    return sum(
        coordinate_sampling_rdp(alpha, q2, d0, c_rem, cinf, sigma)
        for sigma, cinf, d0, c_rem in _normalize_blocks(blocks)
    )


def twice_sampling_rdp(alpha: int, q1: float, eps0: Callable[[int], float]) -> float:
    """RDP of (q1, q2) twice sampling given the inner coordinate-sampling curve eps0."""
    alpha = _check_alpha(alpha)
    q1 = _check_rate(q1, "q1")
    if q1 == 0.0:
        return 0.0
    x = np.zeros(alpha + 1)
    for v in range(2, alpha + 1):
        e = float(eps0(v))
        if math.isnan(e) or e < 0:
            raise ValidationError(f"eps0({v}) = {e} must be nonnegative")
        x[v] = (v - 1) * e
    return kernels.binomial_log_mgf(alpha, q1, x) / (alpha - 1)


def asymptotic_coordinate_limit(alpha: int, q: float, tau: float) -> float:
    """Large-d0 limit alpha * q^2 * tau of coordinate-wise sampling."""
    return float(alpha) * float(q) ** 2 * float(tau)


def asymptotic_twice(alpha: int, q1: float, q2: float, tau: float) -> float:
    """Twice-sampling bound with the large-d0 inner curve eps0(v) = v q2^2 tau."""
    alpha = _check_alpha(alpha)
    q1 = _check_rate(q1, "q1")
    q2 = _check_rate(q2, "q2")
    if q1 == 0.0 or q2 == 0.0 or tau == 0.0:
        return 0.0
    v = np.arange(alpha + 1, dtype=float)
    x = v * (v - 1.0) * q2 * q2 * float(tau)
    return kernels.binomial_log_mgf(alpha, q1, x) / (alpha - 1)


# --------------------------------------------------------- curve sweeps


def _grid(alphas) -> tuple[list[int], int]:
    alphas = _check_alphas(default_alphas() if alphas is None else alphas)
    return alphas, alphas[-1]


def subsampled_gaussian_curve(alphas, q: float, s: float, sigma: float) -> np.ndarray:
    """One-dimensional subsampled bound evaluated over a whole order grid."""
    alphas, amax = _grid(alphas)
    q = _check_rate(q)
    sigma = _check_sigma(sigma)
    if q == 0.0 or s == 0.0:
        return np.zeros(len(alphas))
    full = kernels.subsampled_gaussian_curve(amax, q, float(s) ** 2 / (2 * sigma**2))
    return full[np.asarray(alphas) - 2]


def coordinate_curve(alphas, q: float, d0: int, c_rem: float, cinf: float, sigma: float) -> np.ndarray:
    out = d0 * subsampled_gaussian_curve(alphas, q, cinf, sigma)
    if c_rem > 0:
        out = out + subsampled_gaussian_curve(alphas, q, c_rem, sigma)
    return out


def coordinate_hybrid_curve(alphas, q2: float, blocks) -> np.ndarray:
    alphas, _ = _grid(alphas)
    total = np.zeros(len(alphas))
    for sigma, cinf, d0, c_rem in _normalize_blocks(blocks):
        total += coordinate_curve(alphas, q2, d0, c_rem, cinf, sigma)
    return total


def twice_curve(alphas, q1: float, inner: Callable[[list[int]], np.ndarray]) -> np.ndarray:
    """Twice-sampling curve; ``inner(orders)`` returns the inner curve on ``orders``."""
    alphas, amax = _grid(alphas)
    q1 = _check_rate(q1, "q1")
    if q1 == 0.0:
        return np.zeros(len(alphas))
    eps0 = np.zeros(amax + 1)
    eps0[2:] = inner(list(range(2, amax + 1)))
    full = kernels.twice_curve(amax, q1, eps0)
    return full[np.asarray(alphas) - 2]


# -------------------------------------------------- composition/conversion


def compose_and_convert(curve: RdpCurve, T: int, delta: float) -> tuple[float, int]:
    """T-fold composition then RDP -> (eps, delta) conversion.

    Returns min over orders of T*eps(alpha) - log(delta)/(alpha-1) and the
    minimizing order.
    """
    if not (0.0 < delta < 1.0):
        raise ValidationError(f"delta must lie in (0, 1), got {delta}")
    if int(T) != T or T < 1:
        raise ValidationError(f"T must be a positive integer, got {T}")
    if not isinstance(curve, RdpCurve):
        curve = RdpCurve(dict(curve))
    a = curve.alphas
    values = T * curve.eps - math.log(delta) / (a - 1)
    k = int(np.argmin(values))
    return float(values[k]), int(a[k])


# ------------------------------------------------------------- mechanisms

MODES = ("pure", "input", "coordinate", "twice")


@dataclass(frozen=True)
class MechanismSpec:
    """A Gaussian mechanism with optional input-wise/coordinate-wise sampling.

    ``sigma`` is a scalar for isotropic noise or a per-block tuple for
    :class:`Hybrid` sensitivity (per-coordinate for :class:`Hypercube`).
    The input and coordinate modes sample at the marginal rate
    ``plan.q1 * plan.q2``; the twice mode uses both rates.
    """

    mode: str
    sensitivity: SensitivitySpec
    sigma: float | tuple = 1.0
    plan: SamplingPlan = field(default_factory=SamplingPlan)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if isinstance(self.sigma, (list, tuple, np.ndarray)):
            sig = tuple(float(s) for s in self.sigma)
            n = _noise_slots(self.sensitivity)
            if n is None or len(sig) != n:
                raise ValidationError(f"sigma has {len(sig)} entries, sensitivity expects {n or 1}")
            if any(not (s > 0 and math.isfinite(s)) for s in sig):
                raise ValidationError("every sigma must be positive")
            object.__setattr__(self, "sigma", sig)
        else:
            object.__setattr__(self, "sigma", _check_sigma(self.sigma))
        if not isinstance(self.plan, SamplingPlan):
            object.__setattr__(self, "plan", SamplingPlan(**dict(self.plan)))

    def scaled(self, k: float) -> "MechanismSpec":
        if isinstance(self.sigma, tuple):
            return replace(self, sigma=tuple(k * s for s in self.sigma))
        return replace(self, sigma=k * self.sigma)

    def rdp_curve(self, alphas=None) -> RdpCurve:
        alphas, _ = _grid(alphas)
        return RdpCurve.from_arrays(alphas, mechanism_curve(self, alphas))

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "sensitivity": spec_to_dict(self.sensitivity),
            "sigma": list(self.sigma) if isinstance(self.sigma, tuple) else self.sigma,
            "plan": {"q1": self.plan.q1, "q2": self.plan.q2},
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MechanismSpec":
        try:
            return cls(
                mode=obj["mode"],
                sensitivity=spec_from_dict(obj["sensitivity"]),
                sigma=obj.get("sigma", 1.0),
                plan=SamplingPlan(**obj.get("plan", {})),
            )
        except KeyError as exc:
            raise ValidationError(f"mechanism spec is missing {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MechanismSpec":
        return cls.from_dict(json.loads(text))


def _noise_slots(spec) -> int | None:
    if isinstance(spec, Hybrid):
        return len(spec.blocks)
    if isinstance(spec, Hypercube):
        return spec.d
    return None


def _lp_dim(spec: LpLinfMix) -> int:
    if spec.d is not None:
        return int(spec.d)
    # unbounded dimension: large enough never to cap d0
    return int(math.ceil((spec.cp / spec.cinf) ** spec.p)) + 2


def max_l2(spec: SensitivitySpec) -> float:
    """Largest l2 norm in an isotropic-friendly sensitivity set."""
    if isinstance(spec, L2Ball):
        return spec.c2
    if isinstance(spec, LpLinfMix):
        d0, c_rem = dominating_sensitivity(spec.p, spec.cp, spec.cinf, _lp_dim(spec))
        return math.sqrt(d0 * spec.cinf**2 + c_rem**2)
    if isinstance(spec, Hybrid):
        return math.sqrt(sum(b.c2**2 for b in spec.blocks))
    if isinstance(spec, Hypercube):
        return math.sqrt(sum(v * v for v in spec.V))
    raise UnsupportedError(f"unsupported sensitivity {spec!r}")


def coordinate_blocks(mech: MechanismSpec) -> list[tuple[float, float, int, float]]:
    """(sigma, cinf, d0, c_rem) per independently-noised group of coordinates."""
    spec, sig = mech.sensitivity, mech.sigma
    if isinstance(spec, (L2Ball, LpLinfMix)):
        if isinstance(sig, tuple):
            raise ValidationError("isotropic sensitivity needs a scalar sigma")
        if isinstance(spec, L2Ball):
            return [(sig, spec.c2, 1, 0.0)]
        d0, c_rem = dominating_sensitivity(spec.p, spec.cp, spec.cinf, _lp_dim(spec))
        return [(sig, spec.cinf, d0, c_rem)]
    sigmas = sig if isinstance(sig, tuple) else (sig,) * _noise_slots(spec)
    if isinstance(spec, Hybrid):
        out = []
        for b, s in zip(spec.blocks, sigmas):
            d0, c_rem, cinf = b.dominating()
            out.append((s, cinf, d0, c_rem))
        return out
    if isinstance(spec, Hypercube):
        return [(s, v, 1, 0.0) for v, s in zip(spec.V, sigmas) if v > 0]
    raise UnsupportedError(f"unsupported sensitivity {spec!r}")


def whitened_sensitivity(mech: MechanismSpec) -> float:
    """sup over the set of ||Sigma^{-1/2} s||, the effective 1-D sensitivity at unit noise."""
    spec, sig = mech.sensitivity, mech.sigma
    if isinstance(spec, (L2Ball, LpLinfMix)):
        return max_l2(spec) / sig
    total = 0.0
    for s, cinf, d0, c_rem in coordinate_blocks(mech):
        total += (d0 * cinf**2 + c_rem**2) / s**2
    return math.sqrt(total)


def mechanism_curve(mech: MechanismSpec, alphas) -> np.ndarray:
    """RDP of ``mech`` on ``alphas`` (sorted integer orders)."""
    alphas = list(alphas)
    a = np.asarray(alphas, dtype=float)
    if mech.mode == "pure":
        return a * whitened_sensitivity(mech) ** 2 / 2.0
    if mech.mode == "input":
        return subsampled_gaussian_curve(alphas, mech.plan.rate, whitened_sensitivity(mech), 1.0)
    blocks = coordinate_blocks(mech)
    if mech.mode == "coordinate":
        return coordinate_hybrid_curve(alphas, mech.plan.rate, blocks)
    return twice_curve(
        alphas, mech.plan.q1, lambda orders: coordinate_hybrid_curve(orders, mech.plan.q2, blocks)
    )


def converted_epsilon(mech: MechanismSpec, T: int, delta: float, alphas=None) -> tuple[float, int]:
    return compose_and_convert(mech.rdp_curve(alphas), T, delta)


# ------------------------------------------------------------ calibration


def _find_scale(f: Callable[[float], float], target: float, lo: float, hi: float, rtol: float) -> float:
    """Smallest k in [lo, hi] with f(k) <= target for nonincreasing f (geometric bisection)."""
    if f(hi) > target:
        raise InfeasibleError(
            f"target eps {target} unreachable: eps at upper bracket {hi:g} is {f(hi):.6g}"
        )
    if f(lo) <= target:
        return lo
    while hi / lo - 1.0 > rtol:
        mid = math.sqrt(lo * hi)
        if f(mid) <= target:
            hi = mid
        else:
            lo = mid
    return hi


def calibrate_scale(
    template: MechanismSpec,
    T: int,
    delta: float,
    target_eps: float,
    alphas=None,
    bracket: tuple[float, float] = SIGMA_BRACKET,
    rtol: float = 1e-7,
) -> float:
    """Smallest multiplier k of the template noise meeting the converted target."""
    alphas, _ = _grid(alphas)
    lo, hi = bracket
    if target_eps == math.inf:
        return lo
    if not target_eps > 0:
        raise ValidationError(f"target eps must be positive, got {target_eps}")

    def f(k: float) -> float:
        return compose_and_convert(
            RdpCurve.from_arrays(alphas, mechanism_curve(template.scaled(k), alphas)), T, delta
        )[0]

    probe = np.geomspace(lo, hi, 9)
    values = [f(k) for k in probe]
    if any(b > a * (1 + 1e-9) + 1e-12 for a, b in zip(values, values[1:])):
        raise NumericError("converted epsilon is not monotone in the noise scale")
    return _find_scale(f, target_eps, lo, hi, rtol)


def calibrate_sigma(
    template: MechanismSpec,
    T: int,
    delta: float,
    target_eps: float,
    alphas=None,
    bracket: tuple[float, float] = SIGMA_BRACKET,
    rtol: float = 1e-7,
) -> float | tuple:
    """Calibrated noise for ``template``: scalar sigma, or per-block sigmas."""
    k = calibrate_scale(template, T, delta, target_eps, alphas, bracket, rtol)
    return template.scaled(k).sigma
