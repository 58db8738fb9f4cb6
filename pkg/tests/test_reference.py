import numpy as np
import pytest
import scipy.sparse as sp

from lrbug import fdm
from lrbug import timestep as ts
from lrbug.gmres import GmresConfig
from lrbug.lowrank import DenseSizeError, FactoredMatrix
from lrbug.reference import DenseState, DenseSystem, dense_integration, dense_step, rank_profile

from conftest import random_factored

N = 16


def heat_pairs(n=N):
    h = 2 / (n + 1)
    L = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], format="csr") / h**2
    I = sp.identity(n, format="csr")
    return [(L, I), (I, L)]


def test_state_rejects_nan():
    with pytest.raises(ValueError):
        DenseState(np.array([[np.nan]]), 0.0)


def test_rank_profile_examples(rng):
    assert rank_profile(np.outer(rng.standard_normal(7), rng.standard_normal(5)), 1e-12) == 1
    assert rank_profile(DenseState(np.zeros((4, 4)), 0.0), 1e-12) == 0
    X = random_factored(rng, 9, 9, 3).to_dense()
    assert rank_profile(DenseState(X, 1.0), 1e-10) == 3


def test_cap():
    with pytest.raises(DenseSizeError):
        DenseSystem(heat_pairs(20), cap=399)
    assert DenseSystem(heat_pairs(20), cap=400).shape == (20, 20)


@pytest.mark.parametrize("name", ["midpoint", "bdf2", "bdf4", "dirk4"])
def test_identity_dynamics_add_forcing(name):
    pairs = [(sp.csr_matrix((5, 5)), sp.identity(5, format="csr"))]
    system = DenseSystem(pairs)
    scheme = ts.SCHEMES[name]()
    X = np.arange(25.0).reshape(5, 5)
    G = np.ones((5, 5))
    # the history lies on the exact linear trajectory X + t G
    states = [DenseState(X - 0.1 * j * G, -0.1 * j) for j in range(scheme.steps)]
    out = dense_step(system, scheme, states, 0.1, lambda t: G)
    np.testing.assert_allclose(out.values, X + 0.1 * G, atol=1e-12)
    assert out.time == pytest.approx(0.1)


def test_stationary_fixed_point(rng):
    pairs = heat_pairs()
    system = DenseSystem(pairs)
    Xs = random_factored(rng, N, N, 2).to_dense()
    G = -system.apply(Xs)
    for name in ("midpoint", "bdf4", "dirk4"):
        scheme = ts.SCHEMES[name]()
        out = dense_step(system, scheme, [DenseState(Xs, 0.0)] * scheme.steps, 0.05, lambda t: G)
        np.testing.assert_allclose(out.values, Xs, atol=1e-10)


def test_bdf_history_check():
    system = DenseSystem(heat_pairs())
    with pytest.raises(ValueError):
        dense_step(system, ts.bdf(4), [DenseState(np.zeros((N, N)), 0.0)], 0.1, lambda t: np.zeros((N, N)))


def test_midpoint_matches_lowrank_step_exactly(rng):
    pairs = heat_pairs()
    system = DenseSystem(pairs)
    X = random_factored(rng, N, N, 3)
    G = random_factored(rng, N, N, 1)
    dt = 0.02
    ref = dense_step(system, ts.midpoint(), [DenseState(X.to_dense(), 0.0)], dt, lambda t: G.to_dense())
    policy = ts.TolerancePolicy(eps=0.0, eps2=0.0, delta=1e-13)
    solver = ts.ShiftedSolver(pairs, dt / 2, GmresConfig(eps=0.0, delta=1e-13, m=20, maxit=10), "none")
    out, rep = ts.step_midpoint(X, pairs, G, dt, solver, policy)
    assert rep.converged
    np.testing.assert_allclose(out.to_dense(), ref.values, atol=1e-10)


def test_factorisation_cached():
    system = DenseSystem(heat_pairs())
    b = np.ones((N, N))
    system.solve_shifted(0.1, b)
    system.solve_shifted(0.1, b)
    system.solve_shifted(0.2, b)
    assert len(system._lu) == 2


@pytest.mark.parametrize("name", ["midpoint", "bdf4", "dirk4"])
def test_integration_converges(name):
    spec = fdm.preset("ex55_bdf" if name != "midpoint" else "ex51_parameter")
    order = 4 if name != "midpoint" else 2
    errs = [dense_integration(spec.at(n), ts.SCHEMES[name]()).final_error for n in (31, 63)]
    assert np.log2(errs[0] / errs[1]) >= order - 0.25


def test_integration_history_shape():
    spec = fdm.preset("ex51_parameter").at(31)
    hist = dense_integration(spec, ts.midpoint(), rank_eps=spec.h**3)
    nt, _ = ts.num_steps(spec.t_end, spec.h)
    assert len(hist) == nt
    assert isinstance(hist.final, FactoredMatrix)
    assert np.all(hist.column("iterations") == 0)
    assert np.all(hist.column("solution_rank") >= 1)
    assert len(dense_integration(spec, ts.midpoint(), n_steps=2)) == 2


def test_unforced_rank_rises_then_falls():
    spec = fdm.preset("ex54_ic").at(63)
    hist = dense_integration(spec, ts.midpoint(), rank_eps=spec.h**3)
    ranks = np.concatenate([[spec.initial_condition().rank], hist.column("solution_rank")])
    peak = int(np.argmax(ranks))
    assert ranks[0] == 1
    assert 0 < peak < len(ranks) - 1
    assert ranks[-1] < ranks[peak]
    assert np.isnan(hist.final_error)


def test_bdf_without_exact_solution():
    with pytest.raises(ValueError):
        dense_integration(fdm.preset("ex54_ic").at(15), ts.bdf(4))
