import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from hjbvi.models import EpsteinZinModel, InvestmentAmbiguityModel
from hjbvi.policy import (ControlGrid, PolicyIterationError, SlantSystem, _solve, argmin_set,
                          assemble_slant, iterate, policy_evaluate, policy_improve)
from hjbvi.scheme import Discretization, SchemeConfig, residual


def test_control_grid_counts():
    assert len(ControlGrid.interval(0.0, 1.0, 0.1)) == 11
    assert np.allclose(ControlGrid.interval(0.0, 1.0, 0.1).samples[:, 0], np.linspace(0, 1, 11))
    simplex = ControlGrid.simplex(1 / 20)
    assert len(simplex) == sum(21 - i for i in range(21)) == 231
    assert np.all(simplex.samples.sum(axis=1) <= 1 + 1e-12) and simplex.samples.min() >= 0
    assert len(ControlGrid.box([0, 0], [1, 1], 0.5)) == 9
    with pytest.raises(ValueError):
        ControlGrid.simplex(0.3)


def test_policy_improve_ties_lowest_index():
    g = np.array([[1.0, 0.0, 2.0], [1.0, -1.0, 2.0], [0.5, -1.0, 2.0]])
    idx, val = policy_improve(g)
    assert list(idx) == [2, 1, 0] and list(val) == [0.5, -1.0, 2.0]
    assert list(argmin_set(g[:, 1])) == [1, 2]


def test_assemble_slant_margin():
    implicit = sp.csr_matrix(np.array([[1.5, -0.5, 0.0], [-0.2, 1.4, -0.2], [0.0, -1.0, 2.0]]))
    s = assemble_slant(implicit, np.array([-1.0, -2.0, -0.5]), 0.1, -0.5)
    dense = s.matrix.toarray()
    assert np.allclose(np.diag(dense), [1.6, 1.6, 2.05])
    assert np.allclose(s.margin, [1.1, 1.2, 1.05])
    assert s.bound == pytest.approx(1.05) and s.min_margin >= s.bound - 1e-12
    with pytest.raises(ValueError, match="diagonally dominant"):
        assemble_slant(sp.csr_matrix(np.array([[1.0, -2.0], [0.0, 1.0]])), np.zeros(2), 0.1, 0.0)


def test_assemble_slant_without_stored_diagonal():
    implicit = sp.csr_matrix(np.array([[0.0, -0.1], [-0.1, 1.0]]))
    implicit.eliminate_zeros()
    s = assemble_slant(implicit, np.array([-20.0, 0.0]), 0.1, 0.0)
    assert s.matrix.toarray()[0, 0] == pytest.approx(2.0)


def _dominant(n, rng, band=None, strength=1.0):
    A = np.zeros((n, n))
    for i in range(n):
        cols = range(n) if band is None else range(max(0, i - band), min(n, i + band + 1))
        for j in cols:
            if j != i and rng.random() < 0.5:
                A[i, j] = -rng.random()
        A[i, i] = strength * (np.abs(A[i]).sum() + 1.0)
    return A


@pytest.mark.parametrize("band,strength", [(2, 1.0), (None, 1.0), (None, 2.0)])
def test_solve_paths_agree_with_dense(rng, band, strength):
    # banded LU / sparse LU / Jacobi depending on bandwidth and contraction
    A = _dominant(60, rng, band, strength)
    b = rng.standard_normal(60)
    x = _solve(sp.csr_matrix(A), b)
    assert np.allclose(x, np.linalg.solve(A, b), atol=1e-12)


def test_policy_evaluate_newton_step():
    L = sp.csr_matrix(np.array([[2.0, -1.0], [-1.0, 2.0]]))
    system = SlantSystem(L, np.ones(2), 1.0)
    u = np.array([1.0, 1.0])
    g = np.array([1.0, -1.0])
    new = policy_evaluate(system, u, g)
    assert np.allclose(L @ (new - u), -g)


@pytest.fixture(scope="module")
def level():
    cfg = SchemeConfig(h=0.05, lam=0.2, theta=0.2, rho=16e3, h_eps=0.1, tol=1e-10)
    disc = Discretization(InvestmentAmbiguityModel().build(cfg), cfg)
    return disc, disc.level(0, disc.initial())


def test_iterate_residual_contract(level):
    disc, state = level
    u, policy, stats = iterate(state, 1e-10, 50)
    assert disc.dt * np.max(np.abs(residual(state, u))) < 10 * 1e-10
    assert stats.iterations <= 10 and stats.min_margin >= stats.margin_bound - 1e-12
    # the final Newton steps shrink faster than linearly
    d = stats.deltas
    if len(d) >= 3 and d[-2] > 0:
        assert d[-1] / d[-2] < d[-2] / d[-3]


def test_iterate_deterministic_and_warm_start(level):
    disc, state = level
    u1, p1, _ = iterate(state, 1e-12, 50)
    u2, p2, _ = iterate(state, 1e-12, 50)
    assert np.array_equal(u1, u2) and np.array_equal(p1, p2)
    u3, p3, _ = iterate(state, 1e-12, 50, u0=u1 + 1e-3)
    assert np.max(np.abs(u3 - u1)) < 1e-11 and np.array_equal(p3, p1)


def test_iterate_raises_with_history(level):
    _, state = level
    with pytest.raises(PolicyIterationError) as exc:
        iterate(state, 1e-300, 2)
    assert len(exc.value.deltas) == 2


def test_semilagrangian_level_margins():
    cfg = SchemeConfig(h=0.025, dt=0.1, h_eps=0.25, tol=1e-10, upper=(0.25, 0.05))
    disc = Discretization(EpsteinZinModel().build(cfg), cfg)
    state = disc.level(0, disc.initial())
    u, policy, stats = iterate(state, 1e-10, 50)
    assert stats.min_margin >= 1 - disc.dt * disc.driver.mu - 1e-12
    assert disc.dt * np.max(np.abs(residual(state, u))) < 1e-9


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 31), dt=st.floats(0.01, 1.0), mu=st.floats(-2.0, 0.0))
def test_slant_margin_bound_random(seed, dt, mu):
    # rows of an M-matrix with unit row sums; slants <= mu keep margin >= 1 - dt mu
    rng = np.random.default_rng(seed)
    n = 12
    off = -rng.random((n, n)) * (rng.random((n, n)) < 0.3)
    np.fill_diagonal(off, 0.0)
    implicit = off + np.diag(1.0 - off.sum(axis=1))
    slant = mu - rng.random(n) * 3
    s = assemble_slant(sp.csr_matrix(implicit), slant, dt, mu)
    assert s.min_margin >= 1 - dt * mu - 1e-12
