import numpy as np
import pytest

from hjbvi.config import ConfigError, load_config, parse_config, parse_value
from hjbvi.experiments import (convergence_table, export_policy_heatmap, fmt, increments,
                               load_bundle, penalty_table, run_cell, run_experiment)
from hjbvi.free_boundary import FreeBoundaryParams

SMALL = """
model.name = ambiguity
model.scenario = worst
scheme.lam = 1/5
scheme.theta = 1/5
scheme.h_eps = 1/10
scheme.tol = 1e-10
scheme.T = 0.2
scheme.h = 1/10
probe.point = 1.0
"""


def test_fmt():
    assert fmt(0.72932783123) == "0.729327831"
    assert fmt(None) == "" and fmt(float("nan")) == ""
    assert fmt(3) == "3" and fmt(True) == "1" and fmt("worst") == "worst"


def test_increments_examples():
    inc, ratio = increments([1.0, 1.5, 1.75])
    assert inc == [None, 0.5, 0.25] and ratio == [None, None, 2.0]
    assert increments([0.3]) == ([None], [None])


def test_increments_reproduce_h_ladder_rates():
    # finer-mesh values of the consumption-portfolio table; published rates 2.052, 2.014
    _, ratio = increments([-0.6581355, -0.6580512, -0.6580101, -0.6579897])
    assert ratio[2] == pytest.approx(2.052, abs=2e-3)
    assert ratio[3] == pytest.approx(2.014, abs=2e-3)


def test_increments_reproduce_penalty_rates():
    # published increments of u_* (1e-6 units) and their rates 4.0016, 3.9976
    _, ratio = increments(np.cumsum([0.0, 19.215, 4.802, 1.201]))
    assert ratio[2] == pytest.approx(4.0016, abs=2e-4)
    assert ratio[3] == pytest.approx(3.9976, abs=2e-3)


# ---------------------------------------------------------------------------
# config

def test_parse_value():
    assert parse_value("1/40") == 0.025
    assert parse_value("16e3") == 16000.0
    assert parse_value("true") is True and parse_value("none") is None
    assert parse_value("1, 2,3") == (1, 2, 3)
    assert parse_value("worst") == "worst"


def test_config_roundtrip_and_overrides():
    cfg = parse_config(SMALL + "sweep.rho = 1e3, 4e3\n")
    again = parse_config(cfg.dumps())
    assert again == cfg
    over = cfg.with_overrides(["scheme.h=1/20", "model.scenario=best"])
    assert over.scheme["h"] == 0.05 and over.model_params["scenario"] == "best"
    assert len(cfg.cells()) == 2


@pytest.mark.parametrize("text", [
    "model.name = nope",
    "model.nope = 1",
    "scheme.nope = 1",
    "sweep.h = 1/10, 1/10",
    "sweep.h = 1/10, 1/40, 1/20",
    "sweep.gamma = 1, 2",
    "nosection = 1",
    "output.nope = 1",
    "scheme.h = 1\nscheme.h = 2",
    "just words",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_override_errors():
    with pytest.raises(ConfigError):
        parse_config(SMALL).with_overrides(["scheme.h"])
    with pytest.raises(ConfigError):
        load_config("/nonexistent/file.cfg")


def test_shipped_configs_parse(pytestconfig):
    root = pytestconfig.rootpath / "configs"
    cfgs = {p.stem: load_config(p) for p in root.glob("*.cfg")}
    assert len(cfgs["table2_h_ladder"].cells()) == 10
    assert len(cfgs["table3_penalty"].cells()) == 8
    assert len(cfgs["table6_control_mesh"].cells()) == 4
    assert parse_config(SMALL).cells() == [{}]


# ---------------------------------------------------------------------------
# sweeps and bundles

def test_run_experiment_bundle_is_deterministic(tmp_path):
    cfg = parse_config(SMALL + "sweep.h = 1/5, 1/10, 1/20\n")
    b1 = run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    for name in ["config.txt", "cells.csv", "iterations.csv", "u_000.csv", "u_002.csv"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    loaded = load_bundle(tmp_path / "a")
    assert loaded.config == cfg
    assert [c.value for c in loaded.cells] == pytest.approx([c.value for c in b1.cells], abs=1e-9)
    rows = convergence_table(loaded, "h", tmp_path / "t.csv")
    assert rows[0][-4:] == ["h", "value", "increment", "ratio"] and len(rows) == 4
    assert rows[1][-2:] == ["", ""]


def test_penalty_table_fit(tmp_path):
    cfg = parse_config(SMALL + "sweep.rho = 1e2, 4e2, 16e2\n")
    bundle = run_experiment(cfg, None)
    rows, fits = penalty_table(bundle, tmp_path / "p.csv", tmp_path / "f.csv")
    (fit,) = fits.values()
    assert fit is not None and fit.C0 > 0
    assert (tmp_path / "f.csv").read_text().count("\n") == 2
    with pytest.raises(ValueError):
        convergence_table(bundle, "theta")


def test_bad_probe_point():
    with pytest.raises(ConfigError):
        run_experiment(parse_config(SMALL + "probe.point = 1.05\n"), None)


def test_policy_heatmap(tmp_path):
    cfg = parse_config(SMALL + "scheme.rho = 1e3\n")
    res = run_cell(cfg, 0, {}, keep=True, store_every=1)
    rows = export_policy_heatmap(res.solution, None, tmp_path / "hm.csv")
    assert rows[0] == ["x1", "a1", "stopped"] and len(rows) == 1 + res.solution.disc.n
    huge = export_policy_heatmap(res.solution, 1, None, FreeBoundaryParams(1e9))
    # a band wider than |u - zeta| everywhere marks every unknown that lies below zeta
    sol = res.solution
    zeta = sol.disc.problem.obstacle.zeta(sol.disc.partition[1], sol.disc.x)
    below = sol.history[1][sol.disc.active] <= zeta + 1e-12
    assert [r[-1] == "1" for r in huge[1:]] == list(below)
    with pytest.raises(KeyError):
        export_policy_heatmap(run_cell(cfg, 0, {}, keep=True).solution, 1)

    ez = parse_config("model.name = epstein-zin\nmodel.x_max = 0.5\nscheme.h = 0.025\n"
                      "scheme.dt = 0.1\nscheme.h_eps = 0.25\nscheme.T = 0.2\nprobe.point = 0.25, 0.0\n")
    sol = run_cell(ez, 0, {}, keep=True).solution
    rows = export_policy_heatmap(sol)
    assert rows[0] == ["x1", "x2", "a1", "a2", "stopped"]
    assert all(r[-1] == "0" for r in rows[1:])
