"""Executable sampling mechanisms: coordinate-wise, twice, and the hybrid pipeline.

Randomness is split per coordinate: a seed sequence spawns one counter-based
(Philox) stream for the row stage and one per output coordinate, so each
coordinate's selection and noise are independent of the order in which
coordinates are processed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .noise import NoiseProfile
from .rdp import MechanismSpec, SamplingPlan, converted_epsilon
from .sensitivity import Hybrid, SensitivitySpec, SubspaceClip, clip_hybrid
from .subspace import OrthoBasis

MIN_REPS = 1000
_CHUNK_ELEMS = 1 << 22


def _matrix(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[None, :]
    if Y.ndim != 2 or Y.shape[0] == 0 or Y.shape[1] == 0:
        raise ValidationError(f"expected a nonempty n x d matrix, got shape {Y.shape}")
    if not np.all(np.isfinite(Y)):
        raise ValidationError("matrix contains non-finite entries")
    return Y


def _rate(q, name) -> float:
    q = float(q)
    if not 0.0 <= q <= 1.0:
        raise ValidationError(f"{name} must lie in [0, 1], got {q}")
    return q


def _sigma_vector(sigma, d: int) -> np.ndarray:
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (d,)) if np.ndim(sigma) == 0 else np.asarray(sigma, dtype=float)
    if sig.shape != (d,):
        raise ValidationError(f"sigma has {sig.size} entries for {d} coordinates")
    if not np.all(np.isfinite(sig)) or np.any(sig < 0):
        raise ValidationError("sigma must be finite and nonnegative")
    return sig


def _seed_sequence(rng) -> tuple[np.random.SeedSequence, int | None]:
    """Seed sequence plus the seed to record (None when drawn from a Generator)."""
    if isinstance(rng, np.random.SeedSequence):
        return rng, rng.entropy
    if isinstance(rng, np.random.Generator):
        return np.random.SeedSequence(int(rng.integers(2**63))), None
    # unseeded calls get fresh OS entropy; it is still recorded for replay
    ss = np.random.SeedSequence(rng)
    return ss, ss.entropy


def _streams(ss: np.random.SeedSequence, d: int) -> tuple[np.random.Generator, list[np.random.Generator]]:
    children = ss.spawn(d + 1)
    gens = [np.random.Generator(np.random.Philox(c)) for c in children]
    return gens[0], gens[1:]


@dataclass
class PrivateRelease:
    output: np.ndarray
    plan: SamplingPlan
    sigmas: np.ndarray
    seed: int | None = None
    mechanism: MechanismSpec | None = None
    block_ranks: tuple | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.output = np.asarray(self.output, dtype=float)
        if not np.all(np.isfinite(self.output)):
            raise ValidationError("release is not finite")

    def meta(self) -> dict:
        return {
            "plan": {"q1": self.plan.q1, "q2": self.plan.q2},
            "sigmas": np.asarray(self.sigmas).tolist(),
            "block_ranks": list(self.block_ranks) if self.block_ranks else None,
            "seed": self.seed,
            "mechanism": self.mechanism.to_dict() if self.mechanism else None,
            **self.extra,
        }

    def epsilon(self, T: int, delta: float, alphas=None) -> tuple[float, int]:
        """Converted epsilon of T such releases, recomputed from the recorded mechanism."""
        if self.mechanism is None:
            raise ValidationError("release carries no sensitivity spec; accounting is undefined")
        return converted_epsilon(self.mechanism, T, delta, alphas)

    def save(self, path) -> tuple[Path, Path]:
        """Write the release as a one-row CSV and its meta as a JSON sidecar."""
        path = Path(path)
        header = ",".join(f"o{k}" for k in range(self.output.size))
        np.savetxt(path, self.output[None, :], delimiter=",", header=header, comments="", fmt="%.17g")
        sidecar = path.with_suffix(".json")
        sidecar.write_text(json.dumps(self.meta(), indent=2))
        return path, sidecar


def _mechanism(mode, sensitivity, sigma, plan) -> MechanismSpec | None:
    if sensitivity is None:
        return None
    return MechanismSpec(mode, sensitivity, sigma, plan)


def _aggregate(Y, q1, q2, sig, ss) -> np.ndarray:
    n, d = Y.shape
    row_gen, coord_gens = _streams(ss, d)
    rows = row_gen.random(n) < q1
    out = np.empty(d)
    for l, gen in enumerate(coord_gens):
        take = rows & (gen.random(n) < q2)
        out[l] = Y[take, l].sum() + sig[l] * gen.standard_normal()
    return out


def coordinate_sample_aggregate(
    Y, q: float, sigma, rng=None, sensitivity: SensitivitySpec | None = None
) -> PrivateRelease:
    """Noisy per-coordinate sums where each coordinate Poisson-samples rows independently.

    Pass ``sensitivity`` (the clipping set the rows satisfy) to attach the
    accounting to the release.
    """
    Y = _matrix(Y)
    q = _rate(q, "q")
    sig = _sigma_vector(sigma, Y.shape[1])
    ss, seed = _seed_sequence(rng)
    plan = SamplingPlan(1.0, q)
    out = _aggregate(Y, 1.0, q, sig, ss)
    return PrivateRelease(out, plan, sig, seed, _mechanism("coordinate", sensitivity, sigma, plan))


def twice_sample_aggregate(
    Y, q1: float, q2: float, sigma, rng=None, sensitivity: SensitivitySpec | None = None
) -> PrivateRelease:
    """Poisson-sample rows at q1, then coordinate-wise at q2 on the retained rows.

    With q1 = 1 this draws exactly what :func:`coordinate_sample_aggregate`
    draws for the same seed.
    """
    Y = _matrix(Y)
    q1, q2 = _rate(q1, "q1"), _rate(q2, "q2")
    sig = _sigma_vector(sigma, Y.shape[1])
    ss, seed = _seed_sequence(rng)
    plan = SamplingPlan(q1, q2)
    out = _aggregate(Y, q1, q2, sig, ss)
    return PrivateRelease(out, plan, sig, seed, _mechanism("twice", sensitivity, sigma, plan))


def _block_sigmas(profile: NoiseProfile, ranks: tuple) -> tuple[float, ...]:
    if profile.per_block:
        return tuple(float(s) for s in profile.sigmas)
    out, start = [], 0
    for r in ranks:
        seg = profile.sigmas[start : start + r]
        if np.ptp(seg) > 1e-12 * max(seg.max(), 1e-300):
            raise ValidationError("hybrid pipeline needs noise that is isotropic within each block")
        out.append(float(seg[0]))
        start += r
    return tuple(out)


def hybrid_pipeline(
    raw,
    basis: OrthoBasis,
    blocks: Sequence[SubspaceClip],
    q1: float,
    q2: float,
    profile: NoiseProfile,
    rng=None,
) -> PrivateRelease:
    """Rotate, clip per block, twice-sample with per-block noise, rotate back."""
    Y = _matrix(raw)
    if not isinstance(basis, OrthoBasis):
        raise ValidationError("hybrid_pipeline needs an OrthoBasis")
    if profile.block_ranks != basis.block_ranks:
        raise ValidationError(
            f"noise profile blocks {profile.block_ranks} do not match basis blocks {basis.block_ranks}"
        )
    if profile.basis is not None and not np.allclose(profile.basis.columns, basis.columns, atol=1e-12):
        raise ValidationError("noise profile basis differs from the clipping basis")
    spec = Hybrid(tuple(blocks))
    if spec.ranks != basis.block_ranks:
        raise ValidationError(f"clipping blocks {spec.ranks} do not match basis blocks {basis.block_ranks}")
    coords = clip_hybrid(Y, basis, blocks).coords
    block_sig = _block_sigmas(profile, basis.block_ranks)
    sig = np.repeat(block_sig, basis.block_ranks)
    q1, q2 = _rate(q1, "q1"), _rate(q2, "q2")
    ss, seed = _seed_sequence(rng)
    plan = SamplingPlan(q1, q2)
    o = _aggregate(coords, q1, q2, sig, ss)
    # zero noise has no finite privacy guarantee, so no accounting is attached
    mech = MechanismSpec("twice", spec, block_sig, plan) if min(block_sig) > 0 else None
    return PrivateRelease(basis.columns @ o, plan, np.asarray(block_sig), seed, mech, basis.block_ranks)


# ------------------------------------------------------------ statistics


@dataclass
class MeanStats:
    """Monte-Carlo statistics of the mean estimator o / (n q)."""

    mu: np.ndarray
    bias: np.ndarray
    variance: np.ndarray
    baseline_bias: np.ndarray
    baseline_variance: np.ndarray
    reps: int

    @property
    def bias_se(self) -> np.ndarray:
        return np.sqrt(self.variance / self.reps)

    @property
    def baseline_bias_se(self) -> np.ndarray:
        return np.sqrt(self.baseline_variance / self.reps)


def estimate_mean_stats(Y, plan: SamplingPlan, reps: int, rng=None, sigma: float = 0.0) -> MeanStats:
    """Bias and per-coordinate variance of o/(nq) under twice sampling at ``plan``.

    The baseline is input-wise Poisson sampling at the same marginal rate
    q = q1 q2, run on an independent stream.
    """
    Y = _matrix(Y)
    if int(reps) != reps or reps < MIN_REPS:
        raise ValidationError(f"reps must be an integer >= {MIN_REPS}, got {reps}")
    reps = int(reps)
    if plan.rate <= 0:
        raise ValidationError("the marginal sampling rate must be positive")
    n, d = Y.shape
    q = plan.rate
    ss, _ = _seed_sequence(rng)
    row_ss, base_ss, *coord_ss = ss.spawn(d + 2)
    row_gen = np.random.Generator(np.random.Philox(row_ss))
    base_gen = np.random.Generator(np.random.Philox(base_ss))
    coord_gens = [np.random.Generator(np.random.Philox(c)) for c in coord_ss]
    chunk = max(1, _CHUNK_ELEMS // n)

    est = np.empty((reps, d))
    base = np.empty((reps, d))
    for start in range(0, reps, chunk):
        k = min(chunk, reps - start)
        rows = row_gen.random((k, n)) < plan.q1
        for l, gen in enumerate(coord_gens):
            take = rows & (gen.random((k, n)) < plan.q2)
            est[start : start + k, l] = take @ Y[:, l] + sigma * gen.standard_normal(k)
        take = base_gen.random((k, n)) < q
        base[start : start + k] = take @ Y + sigma * base_gen.standard_normal((k, d))
    est /= n * q
    base /= n * q
    mu = Y.mean(axis=0)
    return MeanStats(
        mu=mu,
        bias=est.mean(axis=0) - mu,
        variance=est.var(axis=0, ddof=1),
        baseline_bias=base.mean(axis=0) - mu,
        baseline_variance=base.var(axis=0, ddof=1),
        reps=reps,
    )
