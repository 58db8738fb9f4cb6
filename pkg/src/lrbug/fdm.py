"""Finite differences for variable-coefficient diffusion on [-1, 1]^2.

The PDE is

    X_t = b1(y) d/dx(a1(x) X_x) + b2(y) d2(a2(x) X)/dxdy
        + a3(x) d2(b3(y) X)/dxdy + a4(x) d/dy(b4(y) X_y) + G(x, y, t)

with zero Dirichlet data.  Grid values are stored as ``X[i, j] ~ X(x_i, y_j)``
so x-derivatives act from the left and y-derivatives from the right, and
the semi-discrete system is ``X' = sum_j A_j X B_j^T + G``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from math import factorial, pi
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .lowrank import FactoredMatrix, outer_sum


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError("need at least 3 interior points per direction")

    @property
    def hx(self) -> float:
        return 2.0 / (self.nx + 1)

    @property
    def hy(self) -> float:
        return 2.0 / (self.ny + 1)

    @property
    def x(self) -> np.ndarray:
        return -1.0 + self.hx * np.arange(1, self.nx + 1)

    @property
    def y(self) -> np.ndarray:
        return -1.0 + self.hy * np.arange(1, self.ny + 1)


# ---------------------------------------------------------------------------
# 1-D stencils


def fd_weights(offsets: Sequence[float], deriv: int) -> np.ndarray:
    """Weights w with sum_k w_k u(x + o_k h) = h^deriv u^(deriv)(x) + O(h^len)."""
    o = np.asarray(offsets, dtype=float)
    p = np.arange(len(o))
    A = o[None, :] ** p[:, None] / np.array([factorial(k) for k in p])[:, None]
    rhs = np.zeros(len(o))
    rhs[deriv] = 1.0
    return np.linalg.solve(A, rhs)


def _stencil_matrix(n: int, h: float, deriv: int, order: int) -> sp.csr_matrix:
    """Dirichlet-closed derivative matrix acting on interior values only.

    The boundary value is zero so boundary columns are dropped; rows whose
    central stencil would reach past the boundary node use a one-sided
    stencil of the same formal order.
    """
    if order not in (2, 4):
        raise ValueError(f"unsupported finite difference order {order}")
    half = order // 2
    central = list(range(-half, half + 1))
    npts = len(central) + (1 if deriv == 2 and order == 4 else 0)
    rows, cols, vals = [], [], []
    for i in range(1, n + 1):  # node index, boundaries at 0 and n+1
        if i - half >= 0 and i + half <= n + 1:
            offs = central
        elif i - half < 0:
            offs = list(range(-i, -i + npts))
        else:
            offs = list(range(n + 1 - i - npts + 1, n + 1 - i + 1))
        w = fd_weights(offs, deriv) / h**deriv
        for o, wk in zip(offs, w):
            j = i + o
            if 1 <= j <= n:
                rows.append(i - 1)
                cols.append(j - 1)
                vals.append(wk)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def first_derivative(n: int, h: float, order: int = 2) -> sp.csr_matrix:
    return _stencil_matrix(n, h, 1, order)


def second_derivative(n: int, h: float, order: int = 2) -> sp.csr_matrix:
    return _stencil_matrix(n, h, 2, order)


def _derivative_of(coef: Callable, x: np.ndarray, step: float = 1e-3) -> np.ndarray:
    return (coef(x - 2 * step) - 8 * coef(x - step) + 8 * coef(x + step) - coef(x + 2 * step)) / (12 * step)


def conservative_second_derivative(coef: Callable, n: int, h: float, order: int = 2) -> sp.csr_matrix:
    """Discretise ``d/dx(a(x) du/dx)`` on the interior nodes of [-1, 1].

    Order 2 uses half-point fluxes and is symmetric.  Order 4 uses the
    expanded form ``a u'' + a' u'`` with fourth order stencils.
    """
    x = -1.0 + h * np.arange(1, n + 1)
    if order == 2:
        ap = np.asarray(coef(x + h / 2), dtype=float) * np.ones(n)
        am = np.asarray(coef(x - h / 2), dtype=float) * np.ones(n)
        main = -(ap + am) / h**2
        return sp.diags([am[1:] / h**2, main, ap[:-1] / h**2], [-1, 0, 1], format="csr")
    if order == 4:
        a = np.asarray(coef(x), dtype=float) * np.ones(n)
        da = np.asarray(_derivative_of(coef, x), dtype=float) * np.ones(n)
        M = sp.diags(a) @ second_derivative(n, h, 4) + sp.diags(da) @ first_derivative(n, h, 4)
        return sp.csr_matrix(M)
    raise ValueError(f"unsupported finite difference order {order}")


# ---------------------------------------------------------------------------
# coefficients and manufactured solutions


def const(c: float) -> Callable:
    return lambda z: np.full_like(np.asarray(z, dtype=float), c)


@dataclass(frozen=True)
class CoefficientSet:
    """The eight scalar coefficient functions; ``a*`` take x, ``b*`` take y."""

    a1: Callable
    b1: Callable
    a2: Callable
    b2: Callable
    a3: Callable
    b3: Callable
    a4: Callable
    b4: Callable
    # analytic derivatives, used only for forcing terms
    da: Tuple[Callable, ...] = ()
    db: Tuple[Callable, ...] = ()

    def derivative(self, name: str) -> Callable:
        idx = int(name[1]) - 1
        table = self.da if name[0] == "a" else self.db
        if table:
            return table[idx]
        f = getattr(self, name)
        return lambda z: _derivative_of(f, np.asarray(z, dtype=float), 1e-4)


@dataclass(frozen=True)
class Factor:
    """A 1-D factor ``f(z, t)`` with its z-derivatives and t-derivative."""

    f: Callable
    dz: Callable
    dzz: Callable
    dt: Callable


@dataclass(frozen=True)
class SeparableTerm:
    fx: Factor
    fy: Factor


def gaussian_factor(width: float, center=lambda t: 0.0, dcenter=lambda t: 0.0,
                    amp=lambda t: 1.0, damp=lambda t: 0.0) -> Factor:
    """``amp(t) * exp(-(z - center(t))^2 / width^2)``."""
    w2 = width**2

    def f(z, t):
        return amp(t) * np.exp(-((z - center(t)) ** 2) / w2)

    def dz(z, t):
        return -2 * (z - center(t)) / w2 * f(z, t)

    def dzz(z, t):
        d = z - center(t)
        return (4 * d**2 / w2**2 - 2 / w2) * f(z, t)

    def dt(z, t):
        d = z - center(t)
        g = np.exp(-(d**2) / w2)
        return damp(t) * g + amp(t) * g * 2 * d * dcenter(t) / w2

    return Factor(f, dz, dzz, dt)


def bubble_exp_factor(amp=lambda t: 1.0, damp=lambda t: 0.0) -> Factor:
    """``amp(t) * (1 - z^2) * exp(z)``."""

    def f(z, t):
        return amp(t) * (1 - z**2) * np.exp(z)

    def dz(z, t):
        return amp(t) * (1 - 2 * z - z**2) * np.exp(z)

    def dzz(z, t):
        return amp(t) * (-1 - 4 * z - z**2) * np.exp(z)

    def dt(z, t):
        return damp(t) * (1 - z**2) * np.exp(z)

    return Factor(f, dz, dzz, dt)


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    coefficients: CoefficientSet
    t_end: float
    fd_order: int = 2
    n: int = 31
    grid_family: Tuple[int, ...] = (31, 63, 127, 255)
    exact_solution: Optional[Tuple[SeparableTerm, ...]] = None
    initial: Optional[Tuple[SeparableTerm, ...]] = None
    with_forcing: bool = True
    contrast_eta: float = 1.0

    @property
    def grid(self) -> Grid:
        return Grid(self.n, self.n)

    @property
    def h(self) -> float:
        return self.grid.hx

    def at(self, n: int) -> "ProblemSpec":
        return dataclasses.replace(self, n=int(n))

    def exact(self, t: float) -> np.ndarray:
        """Manufactured solution sampled on the grid (dense)."""
        if self.exact_solution is None:
            raise ValueError(f"problem {self.name!r} has no exact solution")
        g = self.grid
        return sum(np.outer(term.fx.f(g.x, t), term.fy.f(g.y, t)) for term in self.exact_solution)

    def initial_condition(self, eps: float = 0.0) -> FactoredMatrix:
        terms = self.initial if self.initial is not None else self.exact_solution
        g = self.grid
        if terms is None:
            return FactoredMatrix.zeros((g.nx, g.ny))
        return outer_sum([t.fx.f(g.x, 0.0) for t in terms], [t.fy.f(g.y, 0.0) for t in terms], eps)


def assemble_operator_terms(spec: ProblemSpec) -> List[Tuple[sp.csr_matrix, sp.csr_matrix]]:
    """The four ``(A_j, B_j)`` pairs of the semi-discrete right-hand side."""
    c = spec.coefficients
    g = spec.grid
    order = spec.fd_order
    if order not in (2, 4):
        raise ValueError(f"unsupported finite difference order {order}")
    x, y = g.x, g.y
    Dx = first_derivative(g.nx, g.hx, order)
    Dy = first_derivative(g.ny, g.hy, order)

    def diag(f, z):
        return sp.diags(np.asarray(f(z), dtype=float) * np.ones(len(z)))

    terms = [
        (conservative_second_derivative(c.a1, g.nx, g.hx, order), diag(c.b1, y)),
        (Dx @ diag(c.a2, x), diag(c.b2, y) @ Dy),
        (diag(c.a3, x) @ Dx, Dy @ diag(c.b3, y)),
        (diag(c.a4, x), conservative_second_derivative(c.b4, g.ny, g.hy, order)),
    ]
    out = []
    for A, B in terms:
        A, B = sp.csr_matrix(A), sp.csr_matrix(B)
        A.eliminate_zeros()
        B.eliminate_zeros()
        out.append((A, B))
    return out


def forcing_vectors(spec: ProblemSpec, t: float) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Left/right vectors whose outer-product sum is ``G = X_t - L X`` at time t."""
    if spec.exact_solution is None or not spec.with_forcing:
        return [], []
    c = spec.coefficients
    g = spec.grid
    x, y = g.x, g.y
    da = {k: c.derivative(k) for k in ("a1", "a2")}
    db = {k: c.derivative(k) for k in ("b3", "b4")}
    left, right = [], []
    for term in spec.exact_solution:
        fx, fy = term.fx, term.fy
        f, fz, fzz, ft = fx.f(x, t), fx.dz(x, t), fx.dzz(x, t), fx.dt(x, t)
        h, hz, hzz, ht = fy.f(y, t), fy.dz(y, t), fy.dzz(y, t), fy.dt(y, t)
        left += [ft, f]
        right += [h, ht]
        # minus the four diffusion terms
        left.append(-(da["a1"](x) * fz + c.a1(x) * fzz))
        right.append(c.b1(y) * h)
        left.append(-(da["a2"](x) * f + c.a2(x) * fz))
        right.append(c.b2(y) * hz)
        left.append(-(c.a3(x) * fz))
        right.append(db["b3"](y) * h + c.b3(y) * hz)
        left.append(-(c.a4(x) * f))
        right.append(db["b4"](y) * hz + c.b4(y) * hzz)
    n1, n2 = len(x), len(y)
    left = [np.asarray(v, float) * np.ones(n1) for v in left]
    right = [np.asarray(v, float) * np.ones(n2) for v in right]
    return left, right


def assemble_forcing(spec: ProblemSpec, t: float, eps: float) -> FactoredMatrix:
    left, right = forcing_vectors(spec, t)
    g = spec.grid
    if not left:
        return FactoredMatrix.zeros((g.nx, g.ny))
    return outer_sum(left, right, eps)


def forcing_dense(spec: ProblemSpec, t: float) -> np.ndarray:
    left, right = forcing_vectors(spec, t)
    g = spec.grid
    if not left:
        return np.zeros((g.nx, g.ny))
    return np.asarray(left).T @ np.asarray(right)


# ---------------------------------------------------------------------------
# presets

PRESETS = ("ex51_parameter", "ex54_compare", "ex54_ic", "ex_highcontrast", "ex55_bdf", "ex56_dirk")


def _sin(c0, c1):
    return lambda z: c0 + c1 * np.sin(pi * z)


def _cos(c0, c1):
    return lambda z: c0 + c1 * np.cos(pi * z)


def _dsin(c1):
    return lambda z: c1 * pi * np.cos(pi * z)


def _dcos(c1):
    return lambda z: -c1 * pi * np.sin(pi * z)


def _zero(z):
    return np.zeros_like(np.asarray(z, dtype=float))


def _moving_gaussian_solution() -> Tuple[SeparableTerm, ...]:
    # exp(-(x - 0.1 sin t)^2/0.12^2) exp(-(y + 0.1 cos t)^2/0.12^2) exp(-t)
    fx = gaussian_factor(0.12, center=lambda t: 0.1 * np.sin(t), dcenter=lambda t: 0.1 * np.cos(t),
                         amp=lambda t: np.exp(-t), damp=lambda t: -np.exp(-t))
    fy = gaussian_factor(0.12, center=lambda t: -0.1 * np.cos(t), dcenter=lambda t: 0.1 * np.sin(t))
    return (SeparableTerm(fx, fy),)


def preset(name: str) -> ProblemSpec:
    """Problem definitions for the numerical experiments."""
    if name == "ex51_parameter":
        coef = CoefficientSet(
            a1=_sin(1, 0.1), b1=_cos(1, 0.1),
            a2=_sin(0.15, 0.1), b2=_cos(0.15, 0.1),
            a3=_cos(0.15, 0.1), b3=_sin(0.15, 0.1),
            a4=_sin(1, 0.1), b4=_cos(1, 0.1),
            da=(_dsin(0.1), _dsin(0.1), _dcos(0.1), _dsin(0.1)),
            db=(_dcos(0.1), _dcos(0.1), _dsin(0.1), _dcos(0.1)),
        )
        fx = gaussian_factor(0.15, amp=lambda t: 0.1 * np.exp(-t), damp=lambda t: -0.1 * np.exp(-t))
        fy = gaussian_factor(0.15)
        return ProblemSpec(name, coef, t_end=0.1 * pi, fd_order=2, n=63,
                           grid_family=(31, 63, 127, 255),
                           exact_solution=(SeparableTerm(fx, fy),))
    if name in ("ex54_compare", "ex54_ic"):
        coef = CoefficientSet(
            a1=const(1), b1=const(1), a2=const(0.8), b2=const(1),
            a3=const(1), b3=const(0.8), a4=const(1), b4=const(1),
            da=(_zero,) * 4, db=(_zero,) * 4,
        )
        if name == "ex54_compare":
            return ProblemSpec(name, coef, t_end=0.1 * pi, fd_order=2, n=255,
                               grid_family=(63, 127, 255),
                               exact_solution=_moving_gaussian_solution())
        ic = SeparableTerm(gaussian_factor(0.12), gaussian_factor(0.12, center=lambda t: -0.1))
        return ProblemSpec(name, coef, t_end=0.1 * pi, fd_order=2, n=255,
                           grid_family=(63, 127, 255), initial=(ic,), with_forcing=False)
    if name == "ex_highcontrast":
        eta = 0.1
        coef = CoefficientSet(
            a1=const(1), b1=_sin(1, 0.1),
            a2=const(1), b2=_sin(1 / eta, 0.1 / eta),
            a3=const(1), b3=_sin(1 / eta, 0.1 / eta),
            a4=const(1), b4=_sin(1 / eta**2, 0.1 / eta**2),
            da=(_zero,) * 4,
            db=(_dsin(0.1), _dsin(0.1 / eta), _dsin(0.1 / eta), _dsin(0.1 / eta**2)),
        )
        amp = lambda t: 1 + np.sin(pi * t / 2)  # noqa: E731
        damp = lambda t: pi / 2 * np.cos(pi * t / 2)  # noqa: E731
        sol = SeparableTerm(bubble_exp_factor(amp, damp), bubble_exp_factor())
        return ProblemSpec(name, coef, t_end=0.1 * pi, fd_order=2, n=63,
                           grid_family=(63, 127, 255), exact_solution=(sol,), contrast_eta=eta)
    if name in ("ex55_bdf", "ex56_dirk"):
        coef = CoefficientSet(
            a1=_sin(1, 0.15), b1=_cos(1, 0.1),
            a2=const(0.15), b2=const(1),
            a3=const(1), b3=const(0.15),
            a4=const(1), b4=_cos(1, 0.1),
            da=(_dsin(0.15), _zero, _zero, _zero),
            db=(_dcos(0.1), _zero, _zero, _dcos(0.1)),
        )
        return ProblemSpec(name, coef, t_end=0.4 * pi, fd_order=4, n=31,
                           grid_family=(15, 31, 63, 127),
                           exact_solution=_moving_gaussian_solution())
    raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
