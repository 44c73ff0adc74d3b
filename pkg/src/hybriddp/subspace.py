"""Principal-subspace approximation from public samples via the power method."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError

ORTHO_TOL = 1e-10
PIVOT_TOL = 1e-12
DEFAULT_POWER_ITERS = 50


def _rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    # unseeded calls stay reproducible
    return np.random.default_rng(0 if rng is None else rng)


@dataclass(eq=False)
class OrthoBasis:
    """d x d orthonormal matrix (basis vectors are columns) split into blocks."""

    columns: np.ndarray
    block_ranks: tuple

    def __post_init__(self):
        U = np.asarray(self.columns, dtype=float)
        if U.ndim != 2 or U.shape[0] != U.shape[1]:
            raise ValidationError(f"basis must be square, got shape {U.shape}")
        ranks = tuple(int(r) for r in self.block_ranks)
        if any(r < 1 for r in ranks) or sum(ranks) != U.shape[0]:
            raise ValidationError(f"block ranks {ranks} must be positive and sum to {U.shape[0]}")
        err = np.max(np.abs(U.T @ U - np.eye(U.shape[0])))
        if err > ORTHO_TOL:
            raise ValidationError(f"basis columns are not orthonormal (max deviation {err:.3g})")
        self.columns = U
        self.block_ranks = ranks

    @classmethod
    def identity(cls, d: int, block_ranks: Sequence[int] | None = None) -> "OrthoBasis":
        return cls(np.eye(d), tuple(block_ranks) if block_ranks else (d,))

    @property
    def d(self) -> int:
        return self.columns.shape[0]

    def block(self, j: int) -> np.ndarray:
        start = sum(self.block_ranks[:j])
        return self.columns[:, start : start + self.block_ranks[j]]

    def block_slices(self) -> list[slice]:
        out, start = [], 0
        for r in self.block_ranks:
            out.append(slice(start, start + r))
            start += r
        return out

    def save(self, path) -> tuple[Path, Path]:
        """Write columns as CSV (one basis vector per CSV column) plus a JSON sidecar."""
        path = Path(path)
        header = ",".join(f"u{k}" for k in range(self.d))
        np.savetxt(path, self.columns, delimiter=",", header=header, comments="", fmt="%.17g")
        sidecar = path.with_suffix(".json")
        sidecar.write_text(json.dumps({"block_ranks": list(self.block_ranks), "d": self.d}, indent=2))
        return path, sidecar

    @classmethod
    def load(cls, path) -> "OrthoBasis":
        path = Path(path)
        U = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        meta = json.loads(path.with_suffix(".json").read_text())
        return cls(U, tuple(meta["block_ranks"]))


def gram_schmidt(M, rng=None) -> np.ndarray:
    """Orthonormalize the columns of ``M`` (modified Gram-Schmidt, two passes).

    A column whose residual norm falls below the pivot tolerance is replaced by
    a random direction orthogonalized against the earlier columns, so the
    result always has full column rank.
    """
    A = np.array(M, dtype=float, copy=True)
    if A.ndim != 2:
        raise ValidationError("gram_schmidt expects a 2-D matrix")
    d, r = A.shape
    if r > d:
        raise ValidationError(f"cannot orthonormalize {r} columns in dimension {d}")
    gen = None
    Q = np.zeros((d, r))
    for k in range(r):
        v = A[:, k]
        scale = max(np.linalg.norm(v), 1.0)
        for _attempt in range(10):
            for _ in range(2):
                v = v - Q[:, :k] @ (Q[:, :k].T @ v)
            norm = np.linalg.norm(v)
            if norm > PIVOT_TOL * scale:
                break
            gen = gen or _rng(rng)
            v = gen.standard_normal(d)
            scale = np.linalg.norm(v)
        Q[:, k] = v / norm
    return Q


def approx_eigen(M, r: int, t: int = DEFAULT_POWER_ITERS, rng=None) -> np.ndarray:
    """Approximate top-r eigenvectors of M M^T with t rounds of the power method."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValidationError("approx_eigen expects a 2-D matrix")
    d, _ = M.shape
    if int(r) != r or r < 1 or r > d:
        raise ValidationError(f"rank r={r} must be in [1, {d}]")
    if int(t) != t or t < 1:
        raise ValidationError(f"power iterations t={t} must be >= 1")
    gen = _rng(rng)
    U = gen.standard_normal((d, int(r)))
    for _ in range(int(t)):
        U = M @ (M.T @ U)
        # keep magnitudes bounded; span is unaffected
        U /= max(np.max(np.abs(U)), np.finfo(float).tiny)
        U = gram_schmidt(U, gen)
    return U


def complete_basis(U_partial, d: int, rng=None) -> np.ndarray:
    """Extend orthonormal columns to a full d x d orthonormal basis."""
    U_partial = np.asarray(U_partial, dtype=float).reshape(d, -1)
    gen = _rng(rng)
    extra = gen.standard_normal((d, d - U_partial.shape[1]))
    return gram_schmidt(np.hstack([U_partial, extra]), gen)


def generate_basis(
    samples, ranks: Sequence[int], t: int = DEFAULT_POWER_ITERS, rng=None
) -> OrthoBasis:
    """Iteratively extract principal blocks of the given ranks, then complete the basis.

    ``samples`` holds one sample per row (k x d). The last block is the
    residual complement of rank d - sum(ranks).
    """
    Y = np.asarray(samples, dtype=float)
    if Y.ndim != 2 or not np.all(np.isfinite(Y)):
        raise ValidationError("samples must be a finite 2-D matrix")
    d = Y.shape[1]
    ranks = [int(r) for r in ranks]
    if any(r < 1 for r in ranks):
        raise ValidationError("block ranks must be positive")
    if sum(ranks) > d:
        raise ValidationError(f"ranks sum to {sum(ranks)}, more than dimension {d}")
    gen = _rng(rng)
    Yp = Y.T.copy()
    blocks = []
    for r in ranks:
        Ui = approx_eigen(Yp, r, t, gen)
        if blocks:
            # power iterates drift back into earlier blocks through roundoff
            Ui = gram_schmidt(np.hstack(blocks + [Ui]), gen)[:, -r:]
        blocks.append(Ui)
        Yp = Yp - Ui @ (Ui.T @ Yp)
    partial = np.hstack(blocks) if blocks else np.zeros((d, 0))
    U = complete_basis(partial, d, gen)
    rest = d - sum(ranks)
    block_ranks = tuple(ranks) + ((rest,) if rest > 0 else ())
    return OrthoBasis(U, block_ranks)


def subspace_stats(samples, basis: OrthoBasis) -> list[dict]:
    """Per-block mean/std of the projected l2 norm and mean per-coordinate l_inf."""
    Y = np.asarray(samples, dtype=float)
    if Y.ndim == 1:
        Y = Y[None, :]
    if Y.shape[0] == 0:
        raise ValidationError("subspace_stats needs at least one sample")
    if Y.shape[1] != basis.d:
        raise ValidationError(f"samples have dimension {Y.shape[1]}, basis has {basis.d}")
    coords = Y @ basis.columns
    total = float(np.mean(np.sum(coords**2, axis=1))) or 1.0
    out = []
    for j, sl in enumerate(basis.block_slices()):
        seg = coords[:, sl]
        norms = np.linalg.norm(seg, axis=1)
        out.append(
            {
                "block": j,
                "rank": basis.block_ranks[j],
                "mean_l2": float(norms.mean()),
                "std_l2": float(norms.std()),
                "mean_linf": float(np.max(np.abs(seg), axis=1).mean()),
                "power_fraction": float(np.mean(norms**2) / total),
            }
        )
    return out


def principal_angle(A, B) -> float:
    """Largest principal angle (radians) between the column spans of A and B."""
    Qa, _ = np.linalg.qr(np.asarray(A, dtype=float))
    Qb, _ = np.linalg.qr(np.asarray(B, dtype=float))
    s = np.linalg.svd(Qa.T @ Qb, compute_uv=False)
    smin = float(np.clip(s.min(), -1.0, 1.0))
    # arcsin of the residual is accurate for tiny angles
    resid = np.linalg.norm(Qb - Qa @ (Qa.T @ Qb), 2)
    return float(np.arcsin(min(resid, 1.0))) if smin > 0.7 else float(np.arccos(smin))
