import pytest

from hjbvi.cli import main

SMALL = """model.name = ambiguity
scheme.lam = 1/5
scheme.theta = 1/5
scheme.h_eps = 1/10
scheme.tol = 1e-10
scheme.T = 0.2
scheme.rho = 1e3
sweep.h = 1/5, 1/10, 1/20
probe.point = 1.0
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return str(p)


def test_solve(cfg, tmp_path, capsys):
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert capsys.readouterr().out.startswith("value=0.")
    assert (tmp_path / "o" / "config.txt").exists()


def test_sweep_then_table(cfg, tmp_path, capsys):
    out = str(tmp_path / "o")
    assert main(["sweep", "--config", cfg, "--out", out]) == 0
    capsys.readouterr()
    assert main(["table", "--out", out]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].endswith("h,value,increment,ratio") and len(lines) == 4
    assert (tmp_path / "o" / "table_h.csv").exists()


def test_heatmap_and_cfl_check(cfg, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["heatmap", "--config", cfg, "--out", str(out),
                 "--override", "heatmap.store_every=1"]) == 0
    assert (out / "heatmap.csv").read_text().startswith("x1,a1,stopped")
    assert main(["cfl-check", "--config", cfg]) == 0
    assert capsys.readouterr().out.count("ok") >= 3


def test_exit_codes(cfg, tmp_path, capsys):
    assert main(["cfl-check", "--config", cfg, "--override", "scheme.lam=10"]) == 2
    assert main(["solve", "--config", cfg, "--override", "scheme.lam=10", "--override", "sweep.h=1/20"]) == 2
    assert main(["solve", "--config", cfg, "--override", "scheme.max_iter=1",
                 "--override", "scheme.tol=1e-15"]) == 3
    assert main(["solve", "--config", str(tmp_path / "missing.cfg")]) == 4
    assert main(["solve"]) == 4
    assert main(["solve", "--config", cfg, "--override", "scheme.bogus=1"]) == 4
    assert main(["solve", "--config", cfg, "--override", "probe.point=1.01"]) == 4
    with pytest.raises(SystemExit):
        main(["frobnicate"])
