"""Dense symmetric kernels: eigen-based pseudoinverse, block-diagonal matrices, quadratic forms."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimError, InvalidMatrix
from .tolerances import PINV_RTOL


@dataclass(frozen=True)
class RankInfo:
    rank: int
    tolerance: float
    eigenvalues: tuple[float, ...]  # descending |lambda|


def as_symmetric(m, name: str = "matrix") -> np.ndarray:
    """Validate ``m`` as a finite square symmetric matrix and return a float copy
    whose stored entries are exactly symmetric."""
    a = np.array(m, dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise InvalidMatrix(f"{name} must be a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidMatrix(f"{name} has non-finite entries")
    scale = max(float(np.max(np.abs(a))), 1.0)
    if np.max(np.abs(a - a.T)) > 1e-12 * scale:
        raise InvalidMatrix(f"{name} is not symmetric")
    return 0.5 * (a + a.T)


def pseudoinverse(m, rel_tol: float | None = None) -> tuple[np.ndarray, RankInfo]:
    """Moore-Penrose pseudoinverse of a symmetric matrix by eigendecomposition.

    Eigenvalues with ``|lambda| <= rel_tol * max|lambda|`` are treated as exactly
    zero. The returned matrix is exactly symmetric.

    >>> p, info = pseudoinverse([[1.0, 1.0], [1.0, 1.0]])
    >>> info.rank, p.round(12).tolist()
    (1, [[0.25, 0.25], [0.25, 0.25]])
    """
    if rel_tol is None:
        rel_tol = PINV_RTOL
    if rel_tol < 0:
        raise ValueError("rel_tol must be nonnegative")
    a = as_symmetric(m)
    lam, vec = np.linalg.eigh(a)
    order = np.argsort(-np.abs(lam), kind="stable")
    lam, vec = lam[order], vec[:, order]
    lam_max = float(np.abs(lam[0])) if lam.size else 0.0
    tol = rel_tol * lam_max
    keep = np.abs(lam) > tol
    if lam_max == 0.0:
        keep[:] = False
    v = vec[:, keep]
    p = (v / lam[keep]) @ v.T
    p = 0.5 * (p + p.T)
    return p, RankInfo(int(keep.sum()), float(tol), tuple(float(x) for x in lam))


def rank_of(m, rel_tol: float | None = None) -> RankInfo:
    return pseudoinverse(m, rel_tol)[1]


@dataclass(frozen=True)
class BlockDiag:
    """Block-diagonal symmetric matrix stored as its dense diagonal blocks."""

    blocks: tuple[np.ndarray, ...]
    offsets: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        blocks = tuple(as_symmetric(b, "block") for b in self.blocks)
        offsets, pos = [], 0
        for b in blocks:
            offsets.append(pos)
            pos += b.shape[0]
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "offsets", tuple(offsets))

    @property
    def dim(self) -> int:
        return sum(b.shape[0] for b in self.blocks)

    def slices(self) -> list[slice]:
        return [slice(o, o + b.shape[0]) for o, b in zip(self.offsets, self.blocks)]

    def dense(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        for s, b in zip(self.slices(), self.blocks):
            out[s, s] = b
        return out

    def apply(self, x) -> np.ndarray:
        """Matrix product ``self @ x`` for a vector or a matrix with ``dim`` rows."""
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.dim:
            raise DimError(f"operand has {x.shape[0]} rows, expected {self.dim}")
        out = np.empty_like(x)
        for s, b in zip(self.slices(), self.blocks):
            out[s] = b @ x[s]
        return out


def blockdiag_pinv(v: BlockDiag, rel_tol: float | None = None) -> BlockDiag:
    """Blockwise pseudoinverse; each block uses its own relative cutoff."""
    return BlockDiag(tuple(pseudoinverse(b, rel_tol)[0] for b in v.blocks))


def blockdiag_rank(v: BlockDiag, rel_tol: float | None = None) -> RankInfo:
    """Rank of a block-diagonal matrix as the sum of per-block ranks.

    ``tolerance`` reports the largest per-block cutoff.
    """
    infos = [rank_of(b, rel_tol) for b in v.blocks]
    lam = sorted((x for i in infos for x in i.eigenvalues), key=lambda x: -abs(x))
    return RankInfo(
        sum(i.rank for i in infos),
        max((i.tolerance for i in infos), default=0.0),
        tuple(lam),
    )


def quad_form(a: Sequence[float], m, b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or a.shape != (m.shape[0],) or b.shape != (m.shape[1],):
        raise DimError(f"cannot form a'Mb with shapes {a.shape}, {m.shape}, {b.shape}")
    return float(a @ m @ b)
