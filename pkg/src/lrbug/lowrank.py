"""Factored low-rank matrices and the rounding algebra built on them.

A :class:`FactoredMatrix` stores ``X = U diag(s) V^T`` with orthonormal
``U``, ``V`` and a nonnegative, nonincreasing core ``s``.  Everything else
in the package passes these around instead of dense ``m1 x m2`` arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np
import scipy.linalg as la

# Largest number of entries to_dense will materialise.
MAX_DENSE_ENTRIES = 2**24


class DenseSizeError(ValueError):
    """Raised when a dense materialisation would exceed the size cap."""


@dataclass(frozen=True)
class FactoredMatrix:
    """Rank-``r`` matrix ``U @ diag(s) @ V.T``.

    Attributes
    ----------
    U : (m1, r) ndarray with orthonormal columns
    s : (r,) ndarray, nonnegative and sorted in decreasing order
    V : (m2, r) ndarray with orthonormal columns
    """

    U: np.ndarray
    s: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        if self.U.ndim != 2 or self.V.ndim != 2 or self.s.ndim != 1:
            raise ValueError("expected U (m1, r), s (r,), V (m2, r)")
        r = self.s.shape[0]
        if self.U.shape[1] != r or self.V.shape[1] != r:
            raise ValueError(
                f"factor widths {self.U.shape[1]}, {self.V.shape[1]} do not match core length {r}"
            )

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.U.shape[0], self.V.shape[0])

    @property
    def rank(self) -> int:
        return self.s.shape[0]

    @classmethod
    def zeros(cls, shape: Tuple[int, int]) -> "FactoredMatrix":
        m1, m2 = shape
        return cls(np.zeros((m1, 0)), np.zeros(0), np.zeros((m2, 0)))

    @classmethod
    def from_dense(cls, A, eps: float = 0.0) -> "FactoredMatrix":
        return truncated_svd(A, eps)

    def scaled(self, c: float) -> "FactoredMatrix":
        """Return ``c * X`` keeping the core nonnegative."""
        if c == 0 or self.rank == 0:
            return FactoredMatrix.zeros(self.shape)
        if c > 0:
            return FactoredMatrix(self.U, self.s * c, self.V)
        return FactoredMatrix(-self.U, self.s * (-c), self.V)

    def truncated(self, eps: float, relative: bool = False) -> "FactoredMatrix":
        return _truncate(self.U, self.s, self.V, eps, relative)

    def transpose(self) -> "FactoredMatrix":
        return FactoredMatrix(self.V, self.s, self.U)

    def to_dense(self) -> np.ndarray:
        return to_dense(self)


# A weighted term list is simply a sequence of (weight, FactoredMatrix) pairs.
WeightedTermList = Sequence[Tuple[float, FactoredMatrix]]


def _keep_rank(s: np.ndarray, eps: float) -> int:
    """Smallest r such that the l2 norm of s[r:] is at most eps."""
    # tails[r] = ||s[r:]||, tails[len(s)] = 0
    tails = np.sqrt(np.cumsum((s**2)[::-1]))[::-1]
    tails = np.append(tails, 0.0)
    return int(np.argmax(tails <= eps))


def _truncate(U, s, V, eps, relative=False) -> FactoredMatrix:
    if relative:
        eps = eps * float(np.linalg.norm(s))
    r = _keep_rank(s, eps)
    return FactoredMatrix(
        np.ascontiguousarray(U[:, :r]), np.array(s[:r]), np.ascontiguousarray(V[:, :r])
    )


def truncated_svd(A, eps: float, relative: bool = False) -> FactoredMatrix:
    """Truncated SVD with absolute Frobenius tail threshold ``eps``.

    Keeps the smallest rank ``r`` with ``sqrt(sum_{j>r} sigma_j^2) <= eps``.
    With ``relative=True`` the threshold is ``eps * ||A||_F``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("truncated_svd expects a 2-D array")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if not np.all(np.isfinite(A)):
        raise ValueError("input contains non-finite entries")
    if A.size == 0:
        return FactoredMatrix.zeros(A.shape)
    u, s, vt = la.svd(A, full_matrices=False, lapack_driver="gesdd")
    return _truncate(u, s, vt.T, eps, relative)


def round_sum(terms: Iterable, eps: float, relative: bool = False) -> FactoredMatrix:
    """Recompress ``sum_j w_j X_j`` to a FactoredMatrix within ``eps``.

    ``terms`` holds ``(weight, FactoredMatrix)`` pairs or bare FactoredMatrix
    objects (weight 1).  Left and right factors are stacked, each stack is
    reduced by column-pivoted QR, and the small core is truncated by SVD.
    """
    terms = [(1.0, t) if isinstance(t, FactoredMatrix) else (float(t[0]), t[1]) for t in terms]
    if not terms:
        raise ValueError("round_sum needs at least one term")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    shape = terms[0][1].shape
    for _, t in terms:
        if t.shape != shape:
            raise ValueError(f"dimension mismatch in round_sum: {t.shape} vs {shape}")
    live = [(t.U, w * t.s, t.V) for w, t in terms if w != 0 and t.rank > 0]
    return round_factors(live, eps, shape, relative)


def round_factors(parts, eps: float, shape, relative: bool = False) -> FactoredMatrix:
    """Round ``sum_j L_j diag(c_j) R_j^T`` for arbitrary (non-orthonormal) factors.

    ``parts`` is a list of ``(L_j, c_j, R_j)``; cores may be negative.
    """
    parts = [p for p in parts if p[1].shape[0] > 0]
    if not parts:
        return FactoredMatrix.zeros(shape)
    U = np.hstack([p[0] for p in parts])
    V = np.hstack([p[2] for p in parts])
    core = np.concatenate([p[1] for p in parts])
    if not (np.all(np.isfinite(core)) and np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
        raise ValueError("non-finite entries in round_sum")

    Q1, R1, p1 = la.qr(U, mode="economic", pivoting=True)
    Q2, R2, p2 = la.qr(V, mode="economic", pivoting=True)
    # U = Q1 R1 P1^T, so undo the column permutation on R before forming the core
    R1u = np.empty_like(R1)
    R1u[:, p1] = R1
    R2u = np.empty_like(R2)
    R2u[:, p2] = R2
    small = (R1u * core) @ R2u.T

    u, s, vt = la.svd(small, full_matrices=False, lapack_driver="gesdd")
    out = _truncate(u, s, vt.T, eps, relative)
    return FactoredMatrix(Q1 @ out.U, out.s, Q2 @ out.V)


def inner(X: FactoredMatrix, Y: FactoredMatrix) -> float:
    """Frobenius inner product computed on the factors."""
    if X.shape != Y.shape:
        raise ValueError(f"dimension mismatch: {X.shape} vs {Y.shape}")
    if X.rank == 0 or Y.rank == 0:
        return 0.0
    M1 = X.U.T @ Y.U
    M2 = X.V.T @ Y.V
    return float(np.sum((X.s[:, None] * M1) * (M2 * Y.s[None, :])))


def norm(X: FactoredMatrix) -> float:
    return float(np.linalg.norm(X.s))


def to_dense(X: FactoredMatrix) -> np.ndarray:
    m1, m2 = X.shape
    if m1 * m2 > MAX_DENSE_ENTRIES:
        raise DenseSizeError(f"{m1}x{m2} exceeds dense cap of {MAX_DENSE_ENTRIES} entries")
    return (X.U * X.s) @ X.V.T


def rank_of(A, eps: float) -> int:
    """Numerical rank of a dense matrix under the absolute tail rule."""
    s = la.svdvals(np.asarray(A, dtype=float))
    return _keep_rank(s, eps)


def outer_sum(left: Sequence[np.ndarray], right: Sequence[np.ndarray], eps: float) -> FactoredMatrix:
    """Round ``sum_k outer(left[k], right[k])`` without forming it densely."""
    shape = (len(left[0]), len(right[0]))
    parts = [(np.asarray(f, float)[:, None], np.ones(1), np.asarray(g, float)[:, None])
             for f, g in zip(left, right)]
    return round_factors(parts, eps, shape)
