"""Sensitivity sets, clipping operators and dominating sensitivity."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import ValidationError

MEMBERSHIP_RTOL = 1e-12


def _finite_vector(v, name: str = "v") -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite components")
    return arr


def _positive(x: float, name: str) -> float:
    x = float(x)
    if not (x > 0 and math.isfinite(x)):
        raise ValidationError(f"{name} must be a positive finite number, got {x}")
    return x


@dataclass(frozen=True)
class L2Ball:
    c2: float
    d: int | None = None

    def __post_init__(self):
        _positive(self.c2, "c2")


@dataclass(frozen=True)
class LpLinfMix:
    """Intersection of an l_p ball of radius cp with an l_inf ball of radius cinf."""

    p: float
    cp: float
    cinf: float
    d: int | None = None

    def __post_init__(self):
        if not (0 < self.p <= 2):
            raise ValidationError(f"p must lie in (0, 2], got {self.p}")
        _positive(self.cp, "cp")
        _positive(self.cinf, "cinf")
        if self.cinf > self.cp:
            # l_inf constraint is vacuous
            object.__setattr__(self, "cinf", float(self.cp))


@dataclass(frozen=True, eq=False)
class Hypercube:
    """Box with half-sides V along the columns of ``basis`` (natural basis if None)."""

    V: tuple
    basis: np.ndarray | None = None

    def __post_init__(self):
        V = tuple(float(x) for x in self.V)
        if not V or any(not math.isfinite(x) or x < 0 for x in V):
            raise ValidationError("hypercube sides must be finite and nonnegative")
        object.__setattr__(self, "V", V)
        if self.basis is not None:
            B = np.asarray(self.basis, dtype=float)
            if B.shape != (len(V), len(V)):
                raise ValidationError("hypercube basis must be d x d")
            object.__setattr__(self, "basis", B)

    @property
    def d(self) -> int:
        return len(self.V)


@dataclass(frozen=True)
class SubspaceClip:
    """Per-block clipping budget: l2 radius c2, optional l_inf radius cinf.

    ``d0`` and ``cinf`` are tied by c2^2 = d0 * cinf^2; giving one derives the
    other. A block with neither is a plain l2 block.
    """

    rank: int
    c2: float
    cinf: float | None = None
    d0: int | None = None

    def __post_init__(self):
        if int(self.rank) != self.rank or self.rank < 1:
            raise ValidationError(f"block rank must be a positive integer, got {self.rank}")
        _positive(self.c2, "c2")
        cinf, d0 = self.cinf, self.d0
        if d0 is not None:
            if int(d0) != d0 or d0 < 1:
                raise ValidationError(f"d0 must be a positive integer, got {d0}")
            if d0 > self.rank:
                raise ValidationError(f"d0={d0} exceeds block rank {self.rank}")
            implied = self.c2 / math.sqrt(d0)
            if cinf is None:
                cinf = implied
            elif not math.isclose(cinf, implied, rel_tol=1e-9):
                raise ValidationError(
                    f"inconsistent block: c2^2 = {self.c2**2} but d0*cinf^2 = {d0 * cinf**2}"
                )
        if cinf is not None:
            _positive(cinf, "cinf")
            if cinf > self.c2 * (1 + 1e-12):
                raise ValidationError(f"cinf={cinf} exceeds c2={self.c2}")
        object.__setattr__(self, "cinf", None if cinf is None else float(cinf))
        object.__setattr__(self, "d0", None if d0 is None else int(d0))

    def dominating(self) -> tuple[int, float, float]:
        """(d0, c_rem, cinf) of the block's worst-case vertex."""
        if self.cinf is None:
            return 1, 0.0, self.c2
        d0, c_rem = dominating_sensitivity(2.0, self.c2, self.cinf, self.rank)
        return d0, c_rem, self.cinf


@dataclass(frozen=True)
class Hybrid:
    blocks: tuple

    def __post_init__(self):
        blocks = tuple(b if isinstance(b, SubspaceClip) else SubspaceClip(**b) for b in self.blocks)
        if not blocks:
            raise ValidationError("hybrid set needs at least one block")
        object.__setattr__(self, "blocks", blocks)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(b.rank for b in self.blocks)

    @property
    def d(self) -> int:
        return sum(self.ranks)


SensitivitySpec = Union[L2Ball, LpLinfMix, Hypercube, Hybrid]


@dataclass
class ClippedVector:
    """A clipped vector, in basis coordinates and in natural coordinates."""

    coords: np.ndarray
    values: np.ndarray
    basis: np.ndarray | None = field(default=None, repr=False)


# ---------------------------------------------------------------- clipping


def clip_l2(v, c2: float) -> np.ndarray:
    """Project ``v`` onto the l2 ball of radius ``c2``: v * min(1, c2/||v||)."""
    v = _finite_vector(v)
    c2 = _positive(c2, "c2")
    norm = float(np.linalg.norm(v))
    # tolerance keeps a second application an exact no-op
    if norm > c2 * (1.0 + MEMBERSHIP_RTOL):
        return v * (c2 / norm)
    return v.copy()


def clip_linf(v, cinf: float) -> np.ndarray:
    v = _finite_vector(v)
    cinf = _positive(cinf, "cinf")
    return np.clip(v, -cinf, cinf)


def _basis_matrix(basis, d: int) -> np.ndarray | None:
    if basis is None:
        return None
    U = getattr(basis, "columns", basis)
    U = np.asarray(U, dtype=float)
    if U.shape != (d, d):
        raise ValidationError(f"basis shape {U.shape} does not match dimension {d}")
    return U


def clip_blocks(coords, blocks: Sequence[SubspaceClip]) -> np.ndarray:
    """Blockwise l2-then-l_inf clipping of basis coordinates along the last axis.

    Works on a single vector or on an (n, d) matrix of rows.
    """
    Y = _finite_vector(coords, "coords")
    d = Y.shape[-1]
    if sum(b.rank for b in blocks) != d:
        raise ValidationError(f"block ranks sum to {sum(b.rank for b in blocks)}, expected {d}")
    out = Y.astype(float, copy=True)
    start = 0
    for b in blocks:
        seg = out[..., start : start + b.rank]
        norms = np.linalg.norm(seg, axis=-1, keepdims=True)
        over = norms > b.c2 * (1.0 + MEMBERSHIP_RTOL)
        scale = np.where(over, b.c2 / np.where(over, norms, 1.0), 1.0)
        seg *= scale
        if b.cinf is not None:
            np.clip(seg, -b.cinf, b.cinf, out=seg)
        start += b.rank
    return out


def clip_hybrid(v, basis, blocks: Sequence[SubspaceClip]) -> ClippedVector:
    """Hybrid clipping: rotate into ``basis``, clip each block, rotate back.

    ``basis`` is an :class:`~hybriddp.subspace.OrthoBasis`, a d x d matrix whose
    columns are the basis vectors, or None for the natural basis. ``v`` may be
    a single vector or an (n, d) matrix of rows.
    """
    v = _finite_vector(v)
    if v.ndim not in (1, 2):
        raise ValidationError("clip_hybrid expects a vector or a matrix of rows")
    blocks = [b if isinstance(b, SubspaceClip) else SubspaceClip(**b) for b in blocks]
    d = v.shape[-1]
    U = _basis_matrix(basis, d)
    ranks = getattr(basis, "block_ranks", None)
    if ranks is not None and tuple(ranks) != tuple(b.rank for b in blocks):
        raise ValidationError(f"basis block ranks {tuple(ranks)} do not match clip blocks")
    coords = v if U is None else v @ U
    clipped = clip_blocks(coords, blocks)
    values = clipped.copy() if U is None else clipped @ U.T
    return ClippedVector(coords=clipped, values=values, basis=U)


# ------------------------------------------------------ dominating vertex


def dominating_sensitivity(p: float, cp: float, cinf: float, d: int) -> tuple[int, float]:
    """Worst-case vertex of {||s||_p <= cp, ||s||_inf <= cinf} in d dimensions.

    Returns (d0, c_rem): the vertex has d0 coordinates equal to cinf, one
    coordinate equal to c_rem, zeros elsewhere.
    """
    if not (0 < p <= 2):
        raise ValidationError(f"p must lie in (0, 2], got {p}")
    cp = _positive(cp, "cp")
    cinf = _positive(cinf, "cinf")
    if int(d) != d or d < 1:
        raise ValidationError(f"d must be a positive integer, got {d}")
    if cinf >= cp:
        return 1, 0.0
    ratio = (cp / cinf) ** p
    d0 = int(math.floor(ratio * (1.0 + 1e-12)))
    if d0 >= d:
        return int(d), 0.0
    rem = cp**p - d0 * cinf**p
    if rem <= cp**p * 1e-12:
        return d0, 0.0
    return d0, float(rem ** (1.0 / p))


def dominating_vector(p: float, cp: float, cinf: float, d: int) -> np.ndarray:
    d0, c_rem = dominating_sensitivity(p, cp, cinf, d)
    s = np.zeros(int(d))
    s[:d0] = min(cinf, cp)
    if c_rem > 0:
        s[d0] = c_rem
    return s


def contains(spec: SensitivitySpec, s, rtol: float = MEMBERSHIP_RTOL) -> bool:
    """Membership test with relative tolerance ``rtol``."""
    s = _finite_vector(s, "s")
    if isinstance(spec, L2Ball):
        return float(np.linalg.norm(s)) <= spec.c2 * (1 + rtol)
    if isinstance(spec, LpLinfMix):
        lp = float(np.sum(np.abs(s) ** spec.p) ** (1.0 / spec.p))
        return lp <= spec.cp * (1 + rtol) and float(np.max(np.abs(s))) <= spec.cinf * (1 + rtol)
    if isinstance(spec, Hypercube):
        coords = s if spec.basis is None else s @ spec.basis
        V = np.asarray(spec.V)
        return bool(np.all(np.abs(coords) <= V * (1 + rtol) + rtol * max(V.max(), 1e-300)))
    if isinstance(spec, Hybrid):
        start = 0
        for b in spec.blocks:
            seg = s[start : start + b.rank]
            if np.linalg.norm(seg) > b.c2 * (1 + rtol):
                return False
            if b.cinf is not None and np.max(np.abs(seg)) > b.cinf * (1 + rtol):
                return False
            start += b.rank
        return True
    raise ValidationError(f"unknown sensitivity spec {spec!r}")


# ---------------------------------------------------------------- JSON


def spec_to_dict(spec: SensitivitySpec) -> dict:
    if isinstance(spec, L2Ball):
        return {"variant": "l2_ball", "c2": spec.c2, "d": spec.d}
    if isinstance(spec, LpLinfMix):
        return {"variant": "lp_linf", "p": spec.p, "cp": spec.cp, "cinf": spec.cinf, "d": spec.d}
    if isinstance(spec, Hypercube):
        out = {"variant": "hypercube", "V": list(spec.V)}
        if spec.basis is not None:
            out["basis"] = spec.basis.tolist()
        return out
    if isinstance(spec, Hybrid):
        return {
            "variant": "hybrid",
            "blocks": [
                {"rank": b.rank, "c2": b.c2, "cinf": b.cinf, "d0": b.d0} for b in spec.blocks
            ],
        }
    raise ValidationError(f"unknown sensitivity spec {spec!r}")


def spec_from_dict(obj: dict) -> SensitivitySpec:
    if not isinstance(obj, dict) or "variant" not in obj:
        raise ValidationError("sensitivity spec needs a 'variant' tag")
    fields = {k: v for k, v in obj.items() if k != "variant"}
    variant = obj["variant"]
    try:
        if variant == "l2_ball":
            return L2Ball(**fields)
        if variant == "lp_linf":
            return LpLinfMix(**fields)
        if variant == "hypercube":
            return Hypercube(V=tuple(fields["V"]), basis=fields.get("basis"))
        if variant == "hybrid":
            return Hybrid(blocks=tuple(SubspaceClip(**b) for b in fields["blocks"]))
    except TypeError as exc:
        raise ValidationError(f"bad fields for {variant}: {exc}") from None
    raise ValidationError(f"unknown sensitivity variant {variant!r}")


def dumps(spec: SensitivitySpec) -> str:
    return json.dumps(spec_to_dict(spec))


def loads(text: str) -> SensitivitySpec:
    return spec_from_dict(json.loads(text))
