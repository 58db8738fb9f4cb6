"""Implicit time integrators driving preconditioned low-rank GMRES.

Each scheme turns ``X' = sum_j A_j X B_j^T + G(t)`` into one or more
shifted systems ``X - tau sum_j A_j X B_j^T = rhs`` per step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from . import fdm
from .gmres import GmresConfig, SolveReport, hybrid_rplr_gmres, rplr_gmres
from .lowrank import FactoredMatrix, round_factors, round_sum, truncated_svd
from .matequation import MultitermOperator, estimate_norm
from .precond import IdentityPreconditioner, bug_factory, es_build, es_parameters_for_problem

PRECONDITIONERS = ("none", "identity", "bug", "es", "hybrid")

BDF_COEFFICIENTS = {
    1: (1.0, (1.0,)),
    2: (2 / 3, (4 / 3, -1 / 3)),
    3: (6 / 11, (18 / 11, -9 / 11, 2 / 11)),
    4: (12 / 25, (48 / 25, -36 / 25, 16 / 25, -3 / 25)),
}


@dataclass(frozen=True)
class SchemeSpec:
    kind: str
    order: int
    theta: float = 0.5
    beta: float = 1.0
    alphas: Tuple[float, ...] = ()
    a: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "midpoint" and not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")
        if self.kind == "dirk":
            a = np.asarray(self.a)
            if np.any(np.triu(a, 1) != 0) or np.any(np.diag(a) <= 0):
                raise ValueError("DIRK tableau must be lower triangular with positive diagonal")

    @property
    def steps(self) -> int:
        return len(self.alphas) if self.kind == "bdf" else 1

    @property
    def stages(self) -> int:
        return len(self.b) if self.kind == "dirk" else 1


def midpoint(theta: float = 0.5) -> SchemeSpec:
    return SchemeSpec("midpoint", 2, theta=theta)


def bdf(l: int) -> SchemeSpec:
    if l not in BDF_COEFFICIENTS:
        raise ValueError(f"BDF order {l} not available")
    beta, alphas = BDF_COEFFICIENTS[l]
    return SchemeSpec("bdf", l, beta=beta, alphas=alphas)


def dirk(a, b, c, order: int) -> SchemeSpec:
    return SchemeSpec("dirk", order, a=np.asarray(a, float), b=np.asarray(b, float), c=np.asarray(c, float))


def crouzeix_dirk4() -> SchemeSpec:
    """Three-stage, fourth-order DIRK of Crouzeix."""
    g = 0.5 + math.cos(math.pi / 18) / math.sqrt(3)
    a = [[g, 0, 0], [0.5 - g, g, 0], [2 * g, 1 - 4 * g, g]]
    w = 1 / (6 * (1 - 2 * g) ** 2)
    return dirk(a, [w, 1 - 2 * w, w], [g, 0.5, 1 - g], 4)


def backward_euler_dirk() -> SchemeSpec:
    return dirk([[1.0]], [1.0], [1.0], 1)


SCHEMES = {"midpoint": midpoint, "bdf4": lambda: bdf(4), "bdf2": lambda: bdf(2),
           "bdf1": lambda: bdf(1), "dirk4": crouzeix_dirk4}


@dataclass(frozen=True)
class TolerancePolicy:
    eps: float
    eps2: float
    delta: float


def tolerance_for(h: float, scheme_order: int, eps_scale: float = 1.0,
                  eps2_scale: float = 1.0) -> TolerancePolicy:
    """Rounding/truncation tolerances matched to the local truncation error."""
    if h <= 0:
        raise ValueError("h must be positive")
    if scheme_order == 2:
        p = 3
    elif scheme_order == 4:
        p = 5
    else:
        raise ValueError(f"no tolerance rule for order {scheme_order}")
    eps = eps_scale * h**p
    return TolerancePolicy(eps=eps, eps2=eps2_scale * h ** (p - 1), delta=eps)


@dataclass
class StepRecord:
    step: int
    time: float
    error: float
    eta: float
    solution_rank: int
    max_krylov_rank: int
    iterations: int
    converged: bool = True


@dataclass
class StepHistory:
    records: List[StepRecord] = field(default_factory=list)
    final: Optional[FactoredMatrix] = None
    h: float = float("nan")

    def append(self, rec: StepRecord):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def final_error(self) -> float:
        return self.records[-1].error if self.records else float("nan")


class ShiftedSolver:
    """Solves ``X - tau sum_j A_j X B_j^T = b`` with a chosen preconditioner.

    Holds the assembled operator, its norm estimate, and (when needed) the
    exponential-sum preconditioner for one value of ``tau``.
    """

    def __init__(self, pairs, tau: float, cfg: GmresConfig, precond: str = "bug", seed: int = 0,
                 es_matrices=None, h: float = None, contrast_eta: float = 1.0,
                 bug_sequential: bool = True):
        if precond not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {precond!r}")
        self.op = MultitermOperator.shifted(pairs, tau)
        self.tau = tau
        self.cfg = cfg
        self.precond = precond
        self.norm_est = estimate_norm(self.op, *self.op.shape, seed=seed)
        self.bug_factory = bug_factory(self.op, sequential=bug_sequential)
        self.es = None
        if precond in ("es", "hybrid"):
            if es_matrices is None or h is None:
                raise ValueError("ES preconditioner needs averaged coefficient matrices and h")
            delta_star, T = es_parameters_for_problem(tau, h, contrast_eta)
            self.es = es_build(es_matrices[0], es_matrices[1], tau, delta_star, T, cfg.eps)

    def solve(self, b: FactoredMatrix, guess: FactoredMatrix) -> Tuple[FactoredMatrix, SolveReport]:
        cfg = self.cfg
        if self.precond == "none":
            return rplr_gmres(self.op, None, b, guess, cfg, self.norm_est)
        if self.precond == "identity":
            return rplr_gmres(self.op, IdentityPreconditioner(), b, guess, cfg, self.norm_est)
        if self.precond == "es":
            return rplr_gmres(self.op, self.es, b, guess, cfg, self.norm_est)
        if self.precond == "bug":
            return rplr_gmres(self.op, None, b, guess, cfg, self.norm_est, factory=self.bug_factory)
        return hybrid_rplr_gmres(self.op, self.es, self.bug_factory, b, guess, cfg, self.norm_est)


def _apply_parts(pairs, X: FactoredMatrix, scale: float):
    if X.rank == 0 or scale == 0:
        return []
    return [(A @ X.U, scale * X.s, B @ X.V) for A, B in pairs]


def _parts(X: FactoredMatrix, scale: float = 1.0):
    if X.rank == 0 or scale == 0:
        return []
    return [(X.U, scale * X.s, X.V)]


def rhs_evaluation(pairs, X: FactoredMatrix, G: FactoredMatrix, eps: float) -> FactoredMatrix:
    """``F(X, t) = sum_j A_j X B_j^T + G`` rounded at ``eps``."""
    return round_factors(_apply_parts(pairs, X, 1.0) + _parts(G), eps, X.shape)


def step_midpoint(X: FactoredMatrix, pairs, G: FactoredMatrix, dt: float, solver: ShiftedSolver,
                  policy: TolerancePolicy, theta: float = 0.5):
    """One implicit-midpoint step; ``G`` is the forcing at the half step."""
    b = round_factors(_parts(X) + _apply_parts(pairs, X, 0.5 * dt) + _parts(G, dt), policy.eps, X.shape)
    Xt, rep = solver.solve(b, X)
    return Xt.truncated(policy.eps2), rep


def step_bdf(states: Sequence[FactoredMatrix], pairs, G: FactoredMatrix, dt: float,
             solver: ShiftedSolver, policy: TolerancePolicy, scheme: SchemeSpec):
    """One BDF step; ``states[0]`` is the newest solution."""
    l = scheme.steps
    if len(states) < l:
        raise ValueError(f"BDF{l} needs {l} previous states, got {len(states)}")
    guess = round_sum([(a, states[j]) for j, a in enumerate(scheme.alphas)], policy.eps)
    b = round_factors(_parts(guess) + _parts(G, dt * scheme.beta), policy.eps, guess.shape)
    Xt, rep = solver.solve(b, guess)
    return Xt.truncated(policy.eps2), rep


def step_dirk(X: FactoredMatrix, stage_memory: Optional[List[FactoredMatrix]], pairs,
              forcing: Callable[[float], FactoredMatrix], t: float, dt: float, solver: ShiftedSolver,
              policy: TolerancePolicy, scheme: SchemeSpec, guess_policy: str = "previous_stage"):
    """One DIRK step.

    Returns ``(X_new, stages, report)``; ``stages`` is the stage memory for
    the next step.  Iterations are summed and Krylov ranks maxed over stages.
    """
    if guess_policy not in ("previous_stage", "current_state"):
        raise ValueError(f"unknown guess policy {guess_policy!r}")
    a, bw, c = scheme.a, scheme.b, scheme.c
    eps = policy.eps
    stages, Fs = [], []
    total = SolveReport()
    all_converged = True
    for i in range(scheme.stages):
        Gi = forcing(t + c[i] * dt)
        parts = _parts(X) + _parts(Gi, dt * a[i, i])
        for j in range(i):
            parts += _parts(Fs[j], dt * a[i, j])
        rhs = round_factors(parts, eps, X.shape)
        if guess_policy == "previous_stage" and stage_memory is not None:
            guess = stage_memory[i]
        else:
            guess = X
        Xi, rep = solver.solve(rhs, guess)
        total.absorb(rep)
        all_converged &= rep.converged
        stages.append(Xi)
        Fs.append(rhs_evaluation(pairs, Xi, Gi, eps))
    total.converged = all_converged
    parts = _parts(X)
    for j in range(scheme.stages):
        parts += _parts(Fs[j], dt * bw[j])
    Xn = round_factors(parts, policy.eps2, X.shape)
    return Xn, stages, total


def es_matrices_for(spec: fdm.ProblemSpec):
    """Averaged diagonal diffusion operators ``(C_bar, D_bar)`` for the ES preconditioner."""
    g = spec.grid
    c = spec.coefficients
    ax = lambda f: float(np.mean(np.asarray(f(g.x), float) * np.ones(g.nx)))  # noqa: E731
    ay = lambda f: float(np.mean(np.asarray(f(g.y), float) * np.ones(g.ny)))  # noqa: E731
    C = ax(c.a1) * ay(c.b1) * fdm.second_derivative(g.nx, g.hx, spec.fd_order)
    D = ax(c.a4) * ay(c.b4) * fdm.second_derivative(g.ny, g.hy, spec.fd_order)
    return C, D


def num_steps(t_end: float, h: float) -> Tuple[int, float]:
    nt = max(1, int(math.floor(t_end / h + 1e-12)))
    return nt, t_end / nt


def run_integration(problem: fdm.ProblemSpec, scheme: SchemeSpec, precond: str = "bug",
                    policy: Optional[TolerancePolicy] = None, m: int = 3, maxit: int = 30,
                    seed: int = 0, guess_policy: str = "previous_stage", n_steps: Optional[int] = None,
                    bdf_startup: str = "exact", bug_sequential: bool = True,
                    callback: Optional[Callable[[StepRecord], None]] = None) -> StepHistory:
    """Integrate ``problem`` to its final time and record per-step diagnostics."""
    h = problem.h
    if policy is None:
        policy = tolerance_for(h, scheme.order)
    nt, dt = num_steps(problem.t_end, h)
    if n_steps is not None:
        nt = min(nt, n_steps)
    pairs = fdm.assemble_operator_terms(problem)
    cfg = GmresConfig(eps=policy.eps, delta=policy.delta, m=m, maxit=maxit)
    if scheme.kind == "midpoint":
        tau = dt * scheme.theta
    elif scheme.kind == "bdf":
        tau = dt * scheme.beta
    else:
        diag = np.diag(scheme.a)
        if not np.allclose(diag, diag[0]):
            raise ValueError("only DIRK tableaus with a constant diagonal are supported")
        tau = dt * diag[0]
    es_mats = es_matrices_for(problem) if precond in ("es", "hybrid") else None
    solver = ShiftedSolver(pairs, tau, cfg, precond, seed=seed, es_matrices=es_mats, h=h,
                           contrast_eta=problem.contrast_eta, bug_sequential=bug_sequential)

    has_exact = problem.exact_solution is not None

    def forcing(t):
        return fdm.assemble_forcing(problem, t, policy.eps)

    def error_at(X, t):
        if not has_exact:
            return float("nan")
        return h * float(np.linalg.norm(X.to_dense() - problem.exact(t)))

    def exact_state(t):
        return truncated_svd(problem.exact(t), policy.eps2)

    hist = StepHistory(h=h)
    X = problem.initial_condition(policy.eps2)

    def record(n, X, rep):
        rec = StepRecord(step=n, time=n * dt, error=error_at(X, n * dt), eta=rep.eta,
                         solution_rank=X.rank, max_krylov_rank=rep.max_krylov_rank,
                         iterations=rep.iterations, converged=rep.converged)
        hist.append(rec)
        if callback is not None:
            callback(rec)

    if scheme.kind == "midpoint":
        for n in range(1, nt + 1):
            t = (n - 1) * dt
            G = forcing(t + 0.5 * dt)
            X, rep = step_midpoint(X, pairs, G, dt, solver, policy, scheme.theta)
            record(n, X, rep)
    elif scheme.kind == "bdf":
        l = scheme.steps
        states = [X]
        for n in range(1, min(l - 1, nt) + 1):
            if bdf_startup == "exact":
                if not has_exact:
                    raise ValueError("exact BDF startup requires a manufactured solution")
                Xs = exact_state(n * dt)
                rep = SolveReport(converged=True)
            elif bdf_startup == "dirk":
                Xs, _, rep = step_dirk(states[0], None, pairs, forcing, (n - 1) * dt, dt,
                                       _startup_solver(pairs, dt, cfg, seed, solver), policy,
                                       crouzeix_dirk4(), "current_state")
            else:
                raise ValueError(f"unknown BDF startup {bdf_startup!r}")
            states.insert(0, Xs)
            record(n, Xs, rep)
        for n in range(l, nt + 1):
            G = forcing(n * dt)
            X, rep = step_bdf(states, pairs, G, dt, solver, policy, scheme)
            states.insert(0, X)
            del states[l:]
            record(n, X, rep)
        X = states[0]
    elif scheme.kind == "dirk":
        memory = None
        for n in range(1, nt + 1):
            t = (n - 1) * dt
            X, memory, rep = step_dirk(X, memory, pairs, forcing, t, dt, solver, policy, scheme,
                                       guess_policy)
            record(n, X, rep)
    else:
        raise ValueError(f"unknown scheme kind {scheme.kind!r}")
    hist.final = X
    return hist


def _startup_solver(pairs, dt, cfg, seed, main: ShiftedSolver) -> ShiftedSolver:
    sch = crouzeix_dirk4()
    return ShiftedSolver(pairs, dt * sch.a[0, 0], cfg, "bug" if main.precond in ("es", "hybrid") else main.precond,
                         seed=seed)
