"""Low-rank preconditioners: BUG, exponential sums, and identity.

Every preconditioner is a callable ``FactoredMatrix -> FactoredMatrix``
with a ``kind`` tag used for solver instrumentation.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .lowrank import FactoredMatrix, round_factors
from .matequation import (MultitermOperator, SingularSystemError, solve_galerkin_system,
                          solve_k_system, solve_l_system)


class PreconditionerBuildError(ValueError):
    pass


class IdentityPreconditioner:
    kind = "identity"

    def __call__(self, b: FactoredMatrix) -> FactoredMatrix:
        return b


@dataclass
class BugPreconditioner:
    """Nonlinear preconditioner anchored at a factored iterate ``U S V^T``.

    Applying it to ``b`` runs one basis-update-and-Galerkin step for
    ``A X = b``: a K-step in the anchor's row basis, an L-step in the fresh
    column basis, then a Galerkin solve in both new bases.  The output has
    the anchor's rank.

    With ``sequential=False`` the L-step uses the anchor's column basis
    instead of the one just computed by the K-step.
    """

    op: MultitermOperator
    anchor: FactoredMatrix
    sequential: bool = True
    method: str = "direct"
    failures: int = 0
    kind = "bug"

    def __post_init__(self):
        if self.anchor.rank < 1:
            raise ValueError("BUG preconditioner needs an anchor of rank >= 1")
        if self.anchor.shape != self.op.shape:
            raise ValueError(f"anchor shape {self.anchor.shape} does not match operator {self.op.shape}")

    @property
    def r(self) -> int:
        return self.anchor.rank

    def __call__(self, b: FactoredMatrix) -> FactoredMatrix:
        try:
            return bug_apply(self, b)
        except SingularSystemError as err:
            self.failures += 1
            warnings.warn(f"BUG preconditioner fell back to identity: {err}", RuntimeWarning)
            return b


def bug_factory(op: MultitermOperator, sequential: bool = True):
    """Build a BUG preconditioner from the current iterate (identity if it is zero)."""

    def make(x: FactoredMatrix):
        if x.rank == 0:
            return IdentityPreconditioner()
        return BugPreconditioner(op, x, sequential=sequential)

    return make


def _orth(K: np.ndarray) -> np.ndarray:
    Q, _ = np.linalg.qr(K)
    return Q


def bug_apply(P: BugPreconditioner, b: FactoredMatrix) -> FactoredMatrix:
    op = P.op
    U0, V0 = P.anchor.U, P.anchor.V
    if b.shape != op.shape:
        raise ValueError(f"rhs shape {b.shape} does not match operator {op.shape}")
    if b.rank == 0:
        return FactoredMatrix.zeros(op.shape)
    Ub, sb, Vb = b.U, b.s, b.V

    # K-step: A(K V^T) V = b V
    K0 = Ub @ (sb[:, None] * (Vb.T @ V0))
    K1 = solve_k_system(op, V0, K0, P.method)
    U = _orth(K1)

    # L-step: A^T(L U^T) U = b^T U
    Ul = U if P.sequential else U0
    L0 = Vb @ (sb[:, None] * (Ub.T @ Ul))
    L1 = solve_l_system(op, Ul, L0, P.method)
    V = _orth(L1)

    # Galerkin: U^T A(U S V^T) V = U^T b V
    S0 = ((U.T @ Ub) * sb) @ (Vb.T @ V)
    S1 = solve_galerkin_system(op, U, V, S0)
    uc, sc, vct = np.linalg.svd(S1)
    return FactoredMatrix(U @ uc, sc, V @ vct.T)


# ---------------------------------------------------------------------------
# exponential sums


def es_coefficients(delta_star: float, T: float) -> Tuple[float, int, int]:
    """Quadrature step and index range for the exponential sum approximating 1/t on [1, T].

    The error budget ``delta_star`` is split evenly between the truncation
    of the quadrature at both ends.
    """
    if not 0 < delta_star < 1:
        raise ValueError("delta_star must lie in (0, 1)")
    if T <= 1:
        raise ValueError("T must exceed 1")
    d0 = eta = delta_star / 2
    alpha = 2 * math.pi / (math.log(3) + abs(math.log(math.cos(1))) + abs(math.log(d0 / 2)))
    m = math.ceil(math.log(abs(math.log(d0 / 2))) / alpha)
    n = math.ceil((abs(math.log(eta / 2)) + math.log(T)) / alpha)
    return alpha, m, n


def es_scalar(t, alpha: float, m: int, n: int):
    """``alpha * sum_{k=-n}^{m} e^{k alpha} exp(-e^{k alpha} t)``."""
    t = np.asarray(t, dtype=float)
    k = np.arange(-n, m + 1)
    s = np.exp(k * alpha)
    return alpha * np.sum(s * np.exp(-np.multiply.outer(t, s)), axis=-1)


def _expm_family(A: np.ndarray, scales: np.ndarray) -> List[np.ndarray]:
    """``exp(-s A)`` for each s; eigendecomposition when A is symmetric."""
    if np.allclose(A, A.T, atol=1e-12 * np.abs(A).max()):
        lam, Q = la.eigh(0.5 * (A + A.T))
        return [(Q * np.exp(-s * lam)) @ Q.T for s in scales]
    return [la.expm(-s * A) for s in scales]


def _min_eig(A: np.ndarray) -> float:
    if np.allclose(A, A.T, atol=1e-12 * np.abs(A).max()):
        return float(la.eigvalsh(0.5 * (A + A.T))[0])
    return float(np.min(np.linalg.eigvals(A).real))


@dataclass
class EsPreconditioner:
    A1: np.ndarray
    A2: np.ndarray
    alpha: float
    m_plus: int
    n_minus: int
    eps: float
    exp_terms: List[Tuple[float, np.ndarray, np.ndarray]] = field(repr=False)
    kind = "es"

    def __call__(self, b: FactoredMatrix) -> FactoredMatrix:
        return es_apply(self, b)

    def dense(self) -> np.ndarray:
        """The preconditioner as an explicit ``(m1 m2) x (m1 m2)`` matrix."""
        return sum(w * np.kron(E2, E1) for w, E1, E2 in self.exp_terms)


def es_build(C_bar, D_bar, tau: float, delta_star: float, T: float, eps: float) -> EsPreconditioner:
    """Exponential-sum approximate inverse of ``I (x) I - tau (I (x) C + D (x) I)``.

    The operator is split as ``A1 = 0.5 I - tau C`` (acting on rows) and
    ``A2 = 0.5 I - tau D`` (acting on columns).
    """
    C_bar = C_bar.toarray() if sp.issparse(C_bar) else np.asarray(C_bar, dtype=float)
    D_bar = D_bar.toarray() if sp.issparse(D_bar) else np.asarray(D_bar, dtype=float)
    alpha, m, n = es_coefficients(delta_star, T)
    A1 = 0.5 * np.eye(C_bar.shape[0]) - tau * C_bar
    A2 = 0.5 * np.eye(D_bar.shape[0]) - tau * D_bar
    l1, l2 = _min_eig(A1), _min_eig(A2)
    if l1 <= 0 or l2 <= 0:
        raise PreconditionerBuildError(f"A1/A2 not positive definite (min eigenvalues {l1:.3g}, {l2:.3g})")
    if l1 + l2 < 0.9:
        raise PreconditionerBuildError(f"spectrum starts at {l1 + l2:.3g}, expected >= 0.9")
    k = np.arange(-n, m + 1)
    scales = np.exp(k * alpha)
    E1 = _expm_family(A1, scales)
    E2 = _expm_family(A2, scales)
    terms = [(alpha * s, e1, e2) for s, e1, e2 in zip(scales, E1, E2)]
    return EsPreconditioner(A1, A2, alpha, m, n, eps, terms)


def es_apply(P: EsPreconditioner, b: FactoredMatrix, eps: float = None) -> FactoredMatrix:
    if b.rank == 0:
        return FactoredMatrix.zeros(b.shape)
    parts = [(E1 @ b.U, w * b.s, E2 @ b.V) for w, E1, E2 in P.exp_terms]
    return round_factors(parts, P.eps if eps is None else eps, b.shape)


def es_parameters_for_problem(tau: float, h: float, contrast_eta: float = 1.0) -> Tuple[float, float]:
    """``(delta_star, T)`` with ``T = 4 tau / (eta^2 h^2)``, floored at 2."""
    if tau < 0 or h <= 0:
        raise ValueError("need tau >= 0 and h > 0")
    if not 0 < contrast_eta <= 1:
        raise ValueError("contrast_eta must lie in (0, 1]")
    T = 4 * tau / (contrast_eta**2 * h**2)
    return 0.2, max(T, 2.0)
