import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjbvi.models import EpsteinZinModel, InvestmentAmbiguityModel
from hjbvi.oracle import (fixed_point_solve, probe_apriori, probe_comparison,
                          probe_continuous_dependence, probe_monotonicity, probe_obstacle_shift,
                          probe_slant, summarize, truncate_pi, write_reports)
from hjbvi.policy import iterate
from hjbvi.scheme import Discretization, SchemeConfig, run
from hjbvi.verify import linear_instance, oracle_equivalence, slant_samples, tiny_instances


def test_truncate_pi_examples():
    assert truncate_pi(2.0, 5.0) == 2.0
    assert truncate_pi(2.0, -5.0) == -2.0
    assert truncate_pi(2.0, 1.0) == 1.0
    assert truncate_pi(2.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        truncate_pi(0.0, 1.0)


@settings(max_examples=300, deadline=None)
@given(p=st.floats(0.01, 10), a=st.floats(-100, 100), b=st.floats(-100, 100))
def test_truncate_pi_nonexpansive(p, a, b):
    assert abs(truncate_pi(p, a) - truncate_pi(p, b)) <= abs(a - b) + 1e-12


def test_fixed_point_matches_dense_linear_solve():
    disc = linear_instance()
    state = disc.level(0, disc.initial())
    fp = fixed_point_solve(state, tol=1e-14)
    assert fp.converged
    # single control and linear driver: one Newton step is the exact linear solve
    u, _, stats = iterate(state, 1e-14, 50)
    assert np.max(np.abs(fp.u - u)) < 1e-11
    assert stats.iterations <= 2


def _ambiguity(h, rho=16e3, scenario="worst", **kw):
    cfg = SchemeConfig(h=h, lam=0.2, theta=0.2, rho=rho, h_eps=0.1, tol=1e-12, **kw)
    return Discretization(InvestmentAmbiguityModel(scenario=scenario).build(cfg), cfg)


def test_fixed_point_single_unknown_root():
    # domain (0, 2) with h = 1 leaves a single unknown at x = 1
    disc = _ambiguity(1.0, r=0.5)
    assert disc.n == 1
    state = disc.level(0, disc.initial())
    fp = fixed_point_solve(state, tol=1e-14)
    assert fp.converged
    assert np.all(np.abs(state.residuals(fp.u).min(axis=0)) < 1e-10)


@pytest.mark.parametrize("scenario", ["worst", "best"])
def test_policy_iteration_matches_oracle_21_nodes(scenario):
    rep = oracle_equivalence(_ambiguity(2 / 22, scenario=scenario), levels=3)
    assert rep.passed, rep.summary()


def test_tiny_instances_bounded_and_equivalent():
    insts = tiny_instances()
    assert all(d.n <= 50 for _, d in insts)
    for name, disc in insts:
        rep = oracle_equivalence(disc, levels=2)
        assert rep.passed, (name, rep.violation)


def test_monotonicity_probe_passes_under_cfl():
    rep = probe_monotonicity(_ambiguity(0.1), trials=300, seed=3)
    assert rep.passed, rep.violation


def test_monotonicity_probe_detects_large_step():
    cfg = SchemeConfig(h=0.1, dt=2.0, theta=0.2, rho=16e3, h_eps=0.1, tol=1e-12,
                       allow_uncertified=True)
    disc = Discretization(InvestmentAmbiguityModel().build(cfg), cfg)
    rep = probe_monotonicity(disc, trials=300, seed=3)
    assert not rep.passed and rep.violation > 0


def test_comparison_probe():
    assert probe_comparison(_ambiguity(0.1), trials=10).passed


def test_apriori_probe_on_both_models():
    m = InvestmentAmbiguityModel()
    cfg = SchemeConfig(h=0.1, lam=0.2, theta=0.2, rho=16e3, h_eps=0.1, tol=1e-10)
    assert probe_apriori(run(m.build(cfg), cfg)).passed
    ez = EpsteinZinModel(x_max=0.5)
    cfg = SchemeConfig(h=0.025, dt=0.1, h_eps=0.25, tol=1e-10)
    assert probe_apriori(run(ez.build(cfg), cfg)).passed


def test_continuous_dependence_and_obstacle_shift():
    m = InvestmentAmbiguityModel()
    cfg = SchemeConfig(h=0.1, lam=0.2, theta=0.2, rho=1e3, h_eps=0.1, tol=1e-12, T=0.2)
    rep = probe_continuous_dependence(m, cfg, (1e-1, 1e-2, 1e-3), "sigma")
    assert rep.passed, rep.details
    assert rep.details["diffs"][0] == 0.0
    rep = probe_obstacle_shift(m.build(cfg), cfg, 0.01)
    assert rep.passed and rep.details["diff"] <= 0.01 + 1e-10
    with pytest.raises(ValueError):
        probe_obstacle_shift(m.build(cfg), cfg, -0.1)


@pytest.mark.parametrize("model", [InvestmentAmbiguityModel(scenario="worst"),
                                   InvestmentAmbiguityModel(scenario="best"), EpsteinZinModel()],
                         ids=["worst", "best", "epstein-zin"])
def test_slant_probe(model):
    rep = probe_slant(model.driver(), slant_samples(model))
    assert rep.passed, rep.violation


def test_slant_probe_rejects_wrong_derivative():
    class Bad:
        def value(self, a, t, x, y, z, k, g):
            return y ** 2

        def slant_y(self, a, t, x, y, z, k, g):
            return 0 * y + 1.0
    rep = probe_slant(Bad(), [{"control": [0.0], "y": 1.0, "smooth": True}])
    assert not rep.passed


def test_reports_roundtrip(tmp_path):
    rep = probe_slant(EpsteinZinModel().driver(), slant_samples(EpsteinZinModel()))
    write_reports([rep], tmp_path / "r.csv")
    text = (tmp_path / "r.csv").read_text()
    assert text.splitlines()[0].startswith("property") and "slant" in text
    assert "PASS" in summarize([rep])
