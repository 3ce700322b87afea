"""Oracle suite on small instances (the ``verify`` CLI verb)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .driver import LinearDriver, ObstacleSpec
from .grid import Boundary, UniformGrid
from .models import EpsteinZinModel, InvestmentAmbiguityModel
from .oracle import (OracleReport, fixed_point_solve, probe_apriori, probe_comparison,
                     probe_continuous_dependence, probe_monotonicity, probe_slant, summarize,
                     truncate_pi, write_reports)
from .policy import ControlGrid, iterate
from .scheme import Discretization, Problem, SchemeConfig, run, step

__all__ = ["tiny_instances", "linear_instance", "oracle_equivalence", "slant_samples", "run_suite"]


def linear_instance(h: float = 0.1, dt: float = 0.05, mu: float = -0.5, source: float = 0.3):
    """Single control, constant coefficients, linear driver; exterior data ``g``."""
    grid = UniformGrid.from_spacing([0.0], [1.0], h)
    g = lambda x: np.sin(np.pi * np.asarray(x)[:, 0]) + 0.5
    boundary = Boundary.uniform(grid, "exterior", lambda t, x: g(x))
    problem = Problem(
        name="linear", grid=grid, boundary=boundary, controls=ControlGrid.single(),
        driver=LinearDriver(mu, source), obstacle=ObstacleSpec(g, None), T=1.0,
        sigma=lambda t, x, a: np.full((x.shape[0], 1, 1), 0.4),
        drift=lambda t, x, a: np.full((x.shape[0], 1), 0.2))
    return Discretization(problem, SchemeConfig(h=h, dt=dt, tol=1e-13))


def tiny_instances() -> list[tuple[str, Discretization]]:
    """Fixture suite of instances with at most 50 unknowns."""
    out = []
    for scenario in ("worst", "best"):
        m = InvestmentAmbiguityModel(scenario=scenario)
        for rho in (1e3, 16e3):
            cfg = SchemeConfig(h=0.1, lam=0.2, theta=0.2, rho=rho, h_eps=0.1, tol=1e-12)
            out.append((f"ambiguity-{scenario}-h0.1-rho{rho:g}", Discretization(m.build(cfg), cfg)))
        cfg = SchemeConfig(h=2 / 51, lam=0.2, theta=0.2, rho=16e3, h_eps=0.1, tol=1e-12)
        out.append((f"ambiguity-{scenario}-n50", Discretization(m.build(cfg), cfg)))
    ez = EpsteinZinModel()
    cfg = SchemeConfig(h=0.025, dt=0.1, h_eps=0.25, tol=1e-12, upper=(0.1, 0.05))
    out.append(("epstein-zin-5x3", Discretization(ez.build(cfg), cfg)))
    out.append(("linear", linear_instance()))
    return out


def oracle_equivalence(disc: Discretization, levels: int = 3, tol: float = 1e-8) -> OracleReport:
    """Policy iteration vs the nodal fixed-point oracle on the first ``levels`` steps."""
    u = disc.initial()
    worst = 0.0
    for n in range(min(levels, disc.partition.N)):
        state = disc.level(n, u)
        pi_u, _, _ = iterate(state, 1e-13, 100)
        fp = fixed_point_solve(state, tol=1e-13)
        if not fp.converged:
            return OracleReport("oracle_equivalence", disc.problem.name, False, np.inf, n + 1, tol)
        worst = max(worst, float(np.max(np.abs(pi_u - fp.u))))
        u, *_ = step(disc, n, u)
    return OracleReport("oracle_equivalence", disc.problem.name, worst <= tol, worst, levels, tol)


def slant_samples(model) -> list[dict]:
    """Sample clouds for :func:`probe_slant` covering kinks and smooth points."""
    if isinstance(model, EpsteinZinModel):
        return [{"control": [0.3, c], "x": [xv, 0.02], "y": y, "smooth": True}
                for c in (0.1, 0.5, 1.0) for xv in (0.5, 1.0) for y in (-1.5, -1.0, -0.5)]
    samples = []
    for a in (0.0, 0.5, 1.0):
        for y in (-1.0, 0.0, 0.7):
            samples.append({"control": [a], "x": [1.0], "y": y, "grad": [0.3], "k": 0.1,
                            "smooth": y != 0.0})
    return samples


def run_suite(out: str | Path | None = None, trials: int = 2000, seed: int = 0,
              verbose: bool = True) -> list[OracleReport]:
    """Run every oracle check; writes ``reports.csv`` and ``summary.txt`` to ``out``."""
    reports = []
    for name, disc in tiny_instances():
        r = oracle_equivalence(disc)
        r.instance = name
        reports.append(r)

    m = InvestmentAmbiguityModel()
    cfg = SchemeConfig(h=2 / 51, lam=0.2, theta=0.2, rho=16e3, h_eps=0.1, tol=1e-10)
    disc = Discretization(m.build(cfg), cfg)
    reports.append(probe_monotonicity(disc, trials=trials, seed=seed))
    reports.append(probe_comparison(disc, trials=20, seed=seed))

    cfg = SchemeConfig(h=0.05, lam=0.2, theta=0.2, rho=16e3, h_eps=0.1, tol=1e-10)
    reports.append(probe_apriori(run(m.build(cfg), cfg)))
    ez = EpsteinZinModel(x_max=0.5)
    cfg = SchemeConfig(h=0.025, dt=0.1, h_eps=0.25, tol=1e-10)
    reports.append(probe_apriori(run(ez.build(cfg), cfg)))

    cfg = SchemeConfig(h=0.1, lam=0.2, theta=0.2, rho=1e3, h_eps=0.1, tol=1e-12, T=0.2)
    reports.append(probe_continuous_dependence(m, cfg, (1e-1, 1e-2, 1e-3), "sigma"))

    for model in (InvestmentAmbiguityModel(scenario="worst"), InvestmentAmbiguityModel(scenario="best"),
                  EpsteinZinModel()):
        label = getattr(model, "scenario", model.name)
        reports.append(probe_slant(model.driver(), slant_samples(model), name=label))

    rng = np.random.default_rng(seed)
    a, b, p = rng.normal(size=1000) * 5, rng.normal(size=1000) * 5, 2.0
    excess = float(np.max(np.abs(truncate_pi(p, a) - truncate_pi(p, b)) - np.abs(a - b)))
    reports.append(OracleReport("truncate_pi_nonexpansive", "random pairs", excess <= 0, excess, 1000))

    text = summarize(reports)
    if verbose:
        print(text)
    if out is not None:
        out = Path(out)
        write_reports(reports, out / "reports.csv")
        (out / "summary.txt").write_text(text + "\n")
    return reports
