"""Multiterm matrix-equation operators ``X -> sum_j C_j X D_j^T``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lowrank import MAX_DENSE_ENTRIES, DenseSizeError, FactoredMatrix, round_factors


class SingularSystemError(RuntimeError):
    """A projected K/L/Galerkin system could not be solved."""


@dataclass(frozen=True)
class OperatorNormEstimate:
    value: float
    sample_count: int
    seed: int


class MultitermOperator:
    """Linear map ``X -> sum_j C_j X D_j^T`` with sparse coefficient pairs.

    Under column-major vectorisation this is ``sum_j kron(D_j, C_j)``.
    """

    def __init__(self, terms: Sequence[Tuple[object, object]]):
        if len(terms) == 0:
            raise ValueError("a multiterm operator needs at least one term")
        pairs = []
        for C, D in terms:
            C = sp.csr_matrix(C, dtype=float)
            D = sp.csr_matrix(D, dtype=float)
            if C.shape[0] != C.shape[1] or D.shape[0] != D.shape[1]:
                raise ValueError("coefficient matrices must be square")
            pairs.append((C, D))
        m1, m2 = pairs[0][0].shape[0], pairs[0][1].shape[0]
        for C, D in pairs:
            if C.shape[0] != m1 or D.shape[0] != m2:
                raise ValueError("inconsistent coefficient sizes across terms")
        self.terms: List[Tuple[sp.csr_matrix, sp.csr_matrix]] = pairs
        self.shape = (m1, m2)

    @property
    def k(self) -> int:
        return len(self.terms)

    @classmethod
    def identity(cls, m1: int, m2: int, scale: float = 1.0) -> "MultitermOperator":
        return cls([(scale * sp.identity(m1, format="csr"), sp.identity(m2, format="csr"))])

    @classmethod
    def shifted(cls, pairs, tau: float) -> "MultitermOperator":
        """``X -> X - tau * sum_j A_j X B_j^T`` for the given ``(A_j, B_j)`` pairs."""
        m1, m2 = pairs[0][0].shape[0], pairs[0][1].shape[0]
        terms = [(sp.identity(m1, format="csr"), sp.identity(m2, format="csr"))]
        terms += [(-tau * sp.csr_matrix(A), sp.csr_matrix(B)) for A, B in pairs]
        return cls(terms)

    def transposed(self) -> "MultitermOperator":
        """The map ``Y -> (A(Y^T))^T``, i.e. terms ``(D_j, C_j)``."""
        return MultitermOperator([(D, C) for C, D in self.terms])

    def vectorized(self) -> sp.csr_matrix:
        return sp.csr_matrix(sum(sp.kron(D, C, format="csr") for C, D in self.terms))

    def __call__(self, X, eps: float = 0.0):
        if isinstance(X, FactoredMatrix):
            return apply_lowrank(self, X, eps)
        return apply_dense(self, X)


def _check_shape(op: MultitermOperator, shape):
    if tuple(shape) != op.shape:
        raise ValueError(f"operator acts on {op.shape} matrices, got {tuple(shape)}")


def apply_lowrank(op: MultitermOperator, X: FactoredMatrix, eps: float) -> FactoredMatrix:
    _check_shape(op, X.shape)
    if X.rank == 0:
        return FactoredMatrix.zeros(op.shape)
    parts = [(C @ X.U, X.s, D @ X.V) for C, D in op.terms]
    return round_factors(parts, eps, op.shape)


def apply_dense(op: MultitermOperator, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    _check_shape(op, X.shape)
    if X.size > MAX_DENSE_ENTRIES:
        raise DenseSizeError(f"{X.shape} exceeds dense cap")
    out = np.zeros(op.shape)
    for C, D in op.terms:
        out += (D @ (C @ X).T).T
    return out


def estimate_norm(op: MultitermOperator, m1: int, m2: int, seed: int = 0,
                  n_normal: int = 10, n_uniform: int = 10) -> OperatorNormEstimate:
    """Sampled lower estimate of ``||A||_2``: max of ``||A w||_F`` over random unit ``w``."""
    _check_shape(op, (m1, m2))
    rng = np.random.default_rng(seed)
    samples = [rng.standard_normal((m1, m2)) for _ in range(n_normal)]
    samples += [rng.uniform(0.0, 1.0, (m1, m2)) for _ in range(n_uniform)]
    best = 0.0
    for w in samples:
        w = w / np.linalg.norm(w)
        best = max(best, float(np.linalg.norm(apply_dense(op, w))))
    return OperatorNormEstimate(best, n_normal + n_uniform, seed)


def _solve_sparse(M, rhs: np.ndarray, method: str, what: str) -> np.ndarray:
    if method == "direct":
        try:
            x = spla.splu(sp.csc_matrix(M)).solve(rhs)
        except RuntimeError as err:
            raise SingularSystemError(f"{what} system of size {M.shape[0]} is singular: {err}") from err
    elif method == "gmres":
        x, info = spla.gmres(M, rhs, rtol=1e-13, atol=0.0, restart=200, maxiter=50)
        if info != 0:
            raise SingularSystemError(f"iterative {what} solve did not converge (info={info})")
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(x)):
        raise SingularSystemError(_diagnose(M, what))
    res = np.linalg.norm(M @ x - rhs)
    scale = np.linalg.norm(rhs)
    if scale > 0 and res > 1e-8 * scale:
        raise SingularSystemError(_diagnose(M, what) + f"; relative residual {res / scale:.2e}")
    return x


def _diagnose(M, what: str) -> str:
    n = M.shape[0]
    if n <= 2000:
        cond = np.linalg.cond(M.toarray() if sp.issparse(M) else M)
        return f"{what} system of size {n} is ill-conditioned (cond ~ {cond:.2e})"
    return f"{what} system of size {n} produced non-finite or inaccurate values"


def solve_k_system(op: MultitermOperator, V: np.ndarray, rhs: np.ndarray,
                   method: str = "direct") -> np.ndarray:
    """Solve ``A(K V^T) V = rhs`` for ``K`` (``m1 x r``).

    Written out, ``sum_j C_j K G_j = rhs`` with ``G_j = V^T D_j^T V``.
    """
    m1, m2 = op.shape
    r = V.shape[1]
    if V.shape[0] != m2 or rhs.shape != (m1, r):
        raise ValueError(f"K-step shapes: V {V.shape}, rhs {rhs.shape}, operator {op.shape}")
    blocks = []
    for C, D in op.terms:
        G = (D @ V).T @ V
        blocks.append(sp.kron(sp.csr_matrix(G.T), C, format="csr"))
    M = sum(blocks)
    x = _solve_sparse(M, rhs.reshape(-1, order="F"), method, "K-step")
    return x.reshape((m1, r), order="F")


def solve_l_system(op: MultitermOperator, U: np.ndarray, rhs: np.ndarray,
                   method: str = "direct") -> np.ndarray:
    """Solve ``A^T(L U^T) U = rhs`` for ``L`` (``m2 x r``).

    Here ``A^T(L U^T) := (A(U L^T))^T``, giving ``sum_j D_j L H_j = rhs``
    with ``H_j = U^T C_j^T U``.
    """
    return solve_k_system(op.transposed(), U, rhs, method)


def solve_galerkin_system(op: MultitermOperator, U: np.ndarray, V: np.ndarray,
                          rhs: np.ndarray) -> np.ndarray:
    """Solve ``U^T A(U S V^T) V = rhs`` for the ``r x r`` core ``S``."""
    r1, r2 = U.shape[1], V.shape[1]
    if rhs.shape != (r1, r2):
        raise ValueError(f"Galerkin rhs has shape {rhs.shape}, expected {(r1, r2)}")
    M = np.zeros((r1 * r2, r1 * r2))
    for C, D in op.terms:
        Cr = U.T @ (C @ U)
        Dr = V.T @ (D @ V)
        M += np.kron(Dr, Cr)
    b = rhs.reshape(-1, order="F")
    try:
        x = np.linalg.solve(M, b)
    except np.linalg.LinAlgError as err:
        raise SingularSystemError(f"Galerkin system is singular (cond ~ {np.linalg.cond(M):.2e})") from err
    if not np.all(np.isfinite(x)):
        raise SingularSystemError(f"Galerkin system is singular (cond ~ {np.linalg.cond(M):.2e})")
    return x.reshape((r1, r2), order="F")
