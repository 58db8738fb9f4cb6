"""Dense MGS-GMRES and the low-rank GMRES family.

All low-rank variants keep Krylov vectors as :class:`FactoredMatrix` and
round every sum with :func:`round_sum`.  Stopping uses the normwise backward
error ``eta = ||A x - b|| / (||A||_2 ||x|| + ||b||)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Union

import numpy as np

from .lowrank import FactoredMatrix, inner, norm, round_factors, round_sum
from .matequation import MultitermOperator, OperatorNormEstimate, apply_lowrank, estimate_norm

Preconditioner = Callable[[FactoredMatrix], FactoredMatrix]

BREAKDOWN_TOL = 1e-14


@dataclass(frozen=True)
class GmresConfig:
    eps: float
    delta: float
    m: int = 3
    maxit: int = 30

    def __post_init__(self):
        if self.eps < 0 or self.delta < 0:
            raise ValueError("tolerances must be nonnegative")
        if self.m < 1 or self.maxit < 1:
            raise ValueError("m and maxit must be at least 1")


@dataclass
class SolveReport:
    converged: bool = False
    iterations: int = 0
    max_krylov_rank: int = 0
    eta_history: List[float] = field(default_factory=list)
    restart_cycles: int = 0
    cycle_kinds: List[str] = field(default_factory=list)

    @property
    def eta(self) -> float:
        return self.eta_history[-1] if self.eta_history else float("nan")

    def absorb(self, other: "SolveReport") -> None:
        self.converged = other.converged
        self.iterations += other.iterations
        self.max_krylov_rank = max(self.max_krylov_rank, other.max_krylov_rank)
        self.eta_history.extend(other.eta_history)
        self.restart_cycles += other.restart_cycles
        self.cycle_kinds.extend(other.cycle_kinds)


# ---------------------------------------------------------------------------
# dense reference


def _lstsq_hessenberg(H: np.ndarray, beta: float) -> np.ndarray:
    rhs = np.zeros(H.shape[0])
    rhs[0] = beta
    return np.linalg.lstsq(H, rhs, rcond=None)[0]


def dense_gmres(A, b, x0=None, cfg: GmresConfig = None, norm_A: Optional[float] = None):
    """Restarted MGS-GMRES on a dense vector system.

    ``A`` is a matrix or a callable ``v -> A v``.  Returns ``(x, SolveReport)``.
    """
    b = np.asarray(b, dtype=float).ravel()
    matvec = A if callable(A) else (lambda v: A @ v)
    if norm_A is None:
        if callable(A):
            raise ValueError("norm_A is required when A is given as a callable")
        norm_A = float(np.linalg.norm(np.asarray(A), 2))
    x = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=float).ravel().copy()
    nb = np.linalg.norm(b)
    report = SolveReport()

    def eta(v):
        den = norm_A * np.linalg.norm(v) + nb
        return 0.0 if den == 0 else np.linalg.norm(matvec(v) - b) / den

    e0 = eta(x)
    if e0 <= cfg.delta:
        report.converged = True
        report.eta_history.append(e0)
        return x, report

    for _ in range(cfg.maxit):
        report.restart_cycles += 1
        r0 = b - matvec(x)
        beta = np.linalg.norm(r0)
        if beta == 0:
            report.converged = True
            break
        Vs = [r0 / beta]
        H = np.zeros((cfg.m + 1, cfg.m))
        x_base = x
        for k in range(cfg.m):
            w = matvec(Vs[k])
            for i in range(k + 1):
                H[i, k] = Vs[i] @ w
                w = w - H[i, k] * Vs[i]
            H[k + 1, k] = np.linalg.norm(w)
            y = _lstsq_hessenberg(H[: k + 2, : k + 1], beta)
            x = x_base + np.column_stack(Vs[: k + 1]) @ y
            report.iterations += 1
            e = eta(x)
            report.eta_history.append(e)
            if e <= cfg.delta:
                report.converged = True
                return x, report
            if H[k + 1, k] <= BREAKDOWN_TOL * beta:
                break
            Vs.append(w / H[k + 1, k])
    return x, report


# ---------------------------------------------------------------------------
# low rank


class _Rounder:
    """Rounds at a fixed tolerance and records the largest rank produced."""

    def __init__(self, eps: float):
        self.eps = eps
        self.max_rank = 0

    def _seen(self, X: FactoredMatrix) -> FactoredMatrix:
        self.max_rank = max(self.max_rank, X.rank)
        return X

    def sum(self, terms) -> FactoredMatrix:
        return self._seen(round_sum(terms, self.eps))

    def apply(self, op: MultitermOperator, X: FactoredMatrix) -> FactoredMatrix:
        return self._seen(apply_lowrank(op, X, self.eps))

    def residual(self, op: MultitermOperator, x: FactoredMatrix, b: FactoredMatrix) -> FactoredMatrix:
        """``T(b - A x)`` in a single rounding."""
        parts = [(b.U, b.s, b.V)] if b.rank else []
        if x.rank:
            parts += [(C @ x.U, -x.s, D @ x.V) for C, D in op.terms]
        return self._seen(round_factors(parts, self.eps, op.shape))


def _norm_value(op, norm_est) -> float:
    if norm_est is None:
        return estimate_norm(op, *op.shape).value
    if isinstance(norm_est, OperatorNormEstimate):
        return norm_est.value
    return float(norm_est)


def backward_error(op: MultitermOperator, x: FactoredMatrix, b: FactoredMatrix,
                   norm_A: float, eps: float = 0.0) -> float:
    res = _Rounder(eps).residual(op, x, b)
    den = norm_A * norm(x) + norm(b)
    return 0.0 if den == 0 else norm(res) / den


def _cycle(op, M: Optional[Preconditioner], b, x0, cfg: GmresConfig, norm_A: float):
    """One (preconditioned) lrGMRES cycle of at most ``cfg.m`` iterations."""
    rd = _Rounder(cfg.eps)
    report = SolveReport(restart_cycles=1)
    nb = norm(b)

    def eta_of(x):
        den = norm_A * norm(x) + nb
        return 0.0 if den == 0 else norm(rd.residual(op, x, b)) / den

    r0 = rd.residual(op, x0, b)
    beta = norm(r0)
    x = x0
    if r0.rank == 0 or beta == 0:
        report.converged = True
        report.eta_history.append(eta_of(x0) if x0.rank else 0.0)
        report.max_krylov_rank = rd.max_rank
        return x, report

    Vs = [r0.scaled(1.0 / beta)]
    H = np.zeros((cfg.m + 1, cfg.m))
    for k in range(cfg.m):
        z = Vs[k] if M is None else M(Vs[k])
        w = rd.apply(op, z)
        for i in range(k + 1):
            H[i, k] = inner(Vs[i], w)
            w = rd.sum([(1.0, w), (-H[i, k], Vs[i])])
        w = rd.sum([w])
        H[k + 1, k] = norm(w)
        y = _lstsq_hessenberg(H[: k + 2, : k + 1], beta)
        if M is None:
            x = rd.sum([(1.0, x0)] + [(y[j], Vs[j]) for j in range(k + 1)])
        else:
            e = rd.sum([(y[j], Vs[j]) for j in range(k + 1)])
            Me = rd.sum([M(e)]) if e.rank else e
            x = rd.sum([(1.0, x0), (1.0, Me)])
        report.iterations += 1
        eta = eta_of(x)
        report.eta_history.append(eta)
        if eta <= cfg.delta:
            report.converged = True
            break
        if H[k + 1, k] <= BREAKDOWN_TOL * beta:
            break
        Vs.append(w.scaled(1.0 / H[k + 1, k]))
    report.max_krylov_rank = rd.max_rank
    return x, report


def lr_gmres(op: MultitermOperator, b: FactoredMatrix, x0: FactoredMatrix, cfg: GmresConfig,
             norm_est=None):
    """Unpreconditioned low-rank GMRES, a single cycle of ``cfg.m`` steps."""
    x, rep = _cycle(op, None, b, x0, cfg, _norm_value(op, norm_est))
    rep.cycle_kinds.append("none")
    return x, rep


def plr_gmres(op: MultitermOperator, M: Preconditioner, b: FactoredMatrix, x0: FactoredMatrix,
              cfg: GmresConfig, norm_est=None):
    """Right-preconditioned low-rank GMRES, a single cycle."""
    try:
        x, rep = _cycle(op, M, b, x0, cfg, _norm_value(op, norm_est))
    except Exception as err:
        raise RuntimeError(f"preconditioned lrGMRES failed inside preconditioner {M!r}: {err}") from err
    rep.cycle_kinds.append(getattr(M, "kind", "custom"))
    return x, rep


def restarted_lr_gmres(op, b, x0, cfg: GmresConfig, norm_est=None):
    norm_A = _norm_value(op, norm_est)
    report = SolveReport()
    x = x0
    for _ in range(cfg.maxit):
        x, rep = lr_gmres(op, b, x, cfg, norm_A)
        report.absorb(rep)
        if rep.converged:
            break
    return x, report


def rplr_gmres(op, M: Union[Preconditioner, None], b, x0, cfg: GmresConfig, norm_est=None,
               factory: Optional[Callable[[FactoredMatrix], Preconditioner]] = None):
    """Restarted preconditioned lrGMRES.

    Pass ``factory`` instead of ``M`` for preconditioners that depend on the
    current iterate (BUG); it is called at the start of every cycle.
    """
    if M is None and factory is None:
        return restarted_lr_gmres(op, b, x0, cfg, norm_est)
    norm_A = _norm_value(op, norm_est)
    report = SolveReport()
    x = x0
    for _ in range(cfg.maxit):
        P = factory(x) if factory is not None else M
        x, rep = plr_gmres(op, P, b, x, cfg, norm_A)
        report.absorb(rep)
        if rep.converged:
            break
    return x, report


def hybrid_rplr_gmres(op, M_es: Preconditioner, bug_factory, b, x0, cfg: GmresConfig, norm_est=None):
    """Restarted lrGMRES alternating ES (odd cycles) and BUG (even cycles)."""
    norm_A = _norm_value(op, norm_est)
    report = SolveReport()
    x = x0
    for i in range(1, cfg.maxit + 1):
        P = M_es if i % 2 == 1 else bug_factory(x)
        x, rep = plr_gmres(op, P, b, x, cfg, norm_A)
        report.absorb(rep)
        if rep.converged:
            break
    return x, report
