"""Full-rank reference integrators on the vectorised system.

Used as oracles for the low-rank steppers: same schemes, same forcing,
but every implicit stage is a sparse direct solve of
``(I - tau sum_j kron(B_j, A_j)) vec(X) = vec(rhs)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fdm
from .lowrank import DenseSizeError, FactoredMatrix, rank_of
from .timestep import SchemeSpec, StepHistory, StepRecord, num_steps

DENSE_CAP = 256 * 256


@dataclass(frozen=True)
class DenseState:
    values: np.ndarray
    time: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("dense state has non-finite entries")


def _vec(X: np.ndarray) -> np.ndarray:
    return X.reshape(-1, order="F")


def _unvec(v: np.ndarray, shape) -> np.ndarray:
    return v.reshape(shape, order="F")


class DenseSystem:
    """Vectorised right-hand-side operator with LU factors cached per shift."""

    def __init__(self, pairs, cap: int = DENSE_CAP):
        m1, m2 = pairs[0][0].shape[0], pairs[0][1].shape[0]
        if m1 * m2 > cap:
            raise DenseSizeError(f"{m1}x{m2} state exceeds the dense reference cap {cap}")
        self.shape = (m1, m2)
        self.L = sp.csc_matrix(sum(sp.kron(sp.csr_matrix(B), sp.csr_matrix(A)) for A, B in pairs))
        self._lu: Dict[float, object] = {}

    def apply(self, X: np.ndarray) -> np.ndarray:
        return _unvec(self.L @ _vec(X), self.shape)

    def solve_shifted(self, tau: float, rhs: np.ndarray) -> np.ndarray:
        """Solve ``X - tau L(X) = rhs``."""
        lu = self._lu.get(tau)
        if lu is None:
            n = self.L.shape[0]
            lu = spla.splu(sp.csc_matrix(sp.identity(n) - tau * self.L))
            self._lu[tau] = lu
        return _unvec(lu.solve(_vec(rhs)), self.shape)


def dense_step(system: DenseSystem, scheme: SchemeSpec, states: Sequence[DenseState], dt: float,
               forcing: Callable[[float], np.ndarray]) -> DenseState:
    """Advance one step; ``states[0]`` is the newest (BDF needs ``scheme.steps`` of them)."""
    X, t = states[0].values, states[0].time
    if scheme.kind == "midpoint":
        tau = scheme.theta * dt
        rhs = X + 0.5 * dt * system.apply(X) + dt * forcing(t + 0.5 * dt)
        return DenseState(system.solve_shifted(tau, rhs), t + dt)
    if scheme.kind == "bdf":
        l = scheme.steps
        if len(states) < l:
            raise ValueError(f"BDF{l} needs {l} previous states, got {len(states)}")
        rhs = sum(a * states[j].values for j, a in enumerate(scheme.alphas))
        rhs = rhs + dt * scheme.beta * forcing(t + dt)
        return DenseState(system.solve_shifted(dt * scheme.beta, rhs), t + dt)
    if scheme.kind == "dirk":
        a, b, c = scheme.a, scheme.b, scheme.c
        Fs: List[np.ndarray] = []
        for i in range(scheme.stages):
            Gi = forcing(t + c[i] * dt)
            rhs = X + dt * a[i, i] * Gi
            for j in range(i):
                rhs = rhs + dt * a[i, j] * Fs[j]
            Xi = system.solve_shifted(dt * a[i, i], rhs)
            Fs.append(system.apply(Xi) + Gi)
        return DenseState(X + dt * sum(w * F for w, F in zip(b, Fs)), t + dt)
    raise ValueError(f"unknown scheme kind {scheme.kind!r}")


def rank_profile(state, eps: float) -> int:
    """Numerical rank under the absolute tail-norm rule used by the rounding."""
    values = state.values if isinstance(state, DenseState) else state
    return rank_of(values, eps)


def dense_integration(problem: fdm.ProblemSpec, scheme: SchemeSpec, rank_eps: Optional[float] = None,
                      n_steps: Optional[int] = None, cap: int = DENSE_CAP) -> StepHistory:
    """Full-rank run with the same time grid and startup as the low-rank driver.

    ``solution_rank`` in the records is the rank at ``rank_eps`` (0 if unset);
    iteration and Krylov fields are zero.
    """
    h = problem.h
    nt, dt = num_steps(problem.t_end, h)
    if n_steps is not None:
        nt = min(nt, n_steps)
    system = DenseSystem(fdm.assemble_operator_terms(problem), cap)
    has_exact = problem.exact_solution is not None

    def forcing(t):
        return fdm.forcing_dense(problem, t)

    def record(state: DenseState, n: int):
        err = h * float(np.linalg.norm(state.values - problem.exact(state.time))) if has_exact else float("nan")
        rk = rank_profile(state, rank_eps) if rank_eps is not None else 0
        hist.append(StepRecord(step=n, time=state.time, error=err, eta=0.0, solution_rank=rk,
                               max_krylov_rank=0, iterations=0))

    hist = StepHistory(h=h)
    states = [DenseState(problem.initial_condition().to_dense(), 0.0)]
    first = 1
    if scheme.kind == "bdf":
        if not has_exact:
            raise ValueError("BDF startup requires a manufactured solution")
        for n in range(1, min(scheme.steps - 1, nt) + 1):
            states.insert(0, DenseState(problem.exact(n * dt), n * dt))
            record(states[0], n)
        first = scheme.steps
    for n in range(first, nt + 1):
        new = dense_step(system, scheme, states, dt, forcing)
        new = DenseState(new.values, n * dt)
        states.insert(0, new)
        del states[max(scheme.steps, 1):]
        record(new, n)
    hist.final = FactoredMatrix.from_dense(states[0].values)
    return hist
