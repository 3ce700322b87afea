"""Sweep runner, result bundles and table/heatmap CSV emission.

A result bundle is a directory holding

* ``config.txt`` -- the fully resolved configuration,
* ``cells.csv`` -- one row per sweep cell (probe value, iteration counts,
  CFL and a priori margins),
* ``iterations.csv`` -- per time step iteration statistics of every cell,
* ``u_<cell>.csv`` -- final grid function of every cell,
* ``timings.csv`` -- wall-clock seconds (kept apart so the other files are
  byte-identical across reruns).

All CSV files use ``\\n`` line endings, a decimal point and 9 significant
digits.
"""
from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .free_boundary import FreeBoundaryParams, estimate_C0
from .scheme import Discretization, Solution, check_cfl, run

__all__ = [
    "CellResult",
    "ResultBundle",
    "run_cell",
    "run_experiment",
    "load_bundle",
    "increments",
    "convergence_table",
    "penalty_table",
    "export_policy_heatmap",
    "fmt",
]

log = logging.getLogger(__name__)

CELL_COLUMNS = ["cell", "model", "scenario", "h", "rho", "h_eps", "dt", "steps", "value",
                "max_iterations", "mean_iterations", "cfl_ok", "cfl_margin", "apriori_min_gap",
                "min_dominance_margin", "dominance_bound"]
_TEXT_COLUMNS = {"model", "scenario"}
_INT_COLUMNS = {"cell", "steps", "max_iterations", "cfl_ok"}


def fmt(v) -> str:
    """9 significant digits; blank for ``None``/NaN."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else f"{float(v):.9g}"
    return str(v)


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


@dataclass
class CellResult:
    """Summary of one sweep cell (``solution`` only kept for in-process runs)."""

    index: int
    params: dict
    row: dict
    steps: list
    u: np.ndarray
    coords: np.ndarray
    wall: float
    solution: Solution | None = None

    @property
    def value(self) -> float:
        return float(self.row["value"])


@dataclass
class ResultBundle:
    path: Path | None
    config: ExperimentConfig
    cells: list = field(default_factory=list)

    def values(self, axis: str, **fixed) -> tuple[list, list]:
        """Ladder along ``axis`` of the cells matching ``fixed`` (in sweep order)."""
        xs, ys = [], []
        for c in self.cells:
            if all(c.row[k] == v for k, v in fixed.items()):
                xs.append(c.row[axis])
                ys.append(c.value)
        return xs, ys


def _resolve(config: ExperimentConfig, cell: dict):
    overrides = {k: v for k, v in cell.items() if k != "scenario"}
    model_over = {"scenario": cell["scenario"]} if "scenario" in cell else {}
    model = config.model_instance(**model_over)
    scheme = config.scheme_config(**overrides)
    problem = model.build(scheme)
    point = config.probe if config.probe is not None else model.probe()
    try:
        node = problem.grid.node_at(point)
    except ValueError as exc:
        raise ConfigError(f"probe point: {exc}") from exc
    return model, scheme, problem, node


def run_cell(config: ExperimentConfig, index: int, cell: dict, keep: bool = False,
             store_every: int | None = None) -> CellResult:
    """Solve one sweep cell."""
    model, scheme, problem, node = _resolve(config, cell)
    if store_every is not None:
        scheme = scheme.replace(store_every=store_every)
    t0 = time.perf_counter()
    sol = run(problem, scheme)
    wall = time.perf_counter() - t0
    recs = sol.records
    row = {
        "cell": index,
        "model": config.model,
        "scenario": getattr(model, "scenario", ""),
        "h": scheme.h,
        "rho": scheme.rho,
        "h_eps": scheme.h_eps,
        "dt": sol.disc.dt,
        "steps": sol.disc.partition.N,
        "value": float(sol.u[node]),
        "max_iterations": sol.max_iterations,
        "mean_iterations": float(np.mean([r.iterations for r in recs])) if recs else 0.0,
        "cfl_ok": sol.cfl.ok,
        "cfl_margin": sol.cfl.worst_margin,
        "apriori_min_gap": min((r.apriori_margin for r in recs), default=np.nan),
        "min_dominance_margin": min((r.min_margin for r in recs), default=np.nan),
        "dominance_bound": min((r.margin_bound for r in recs), default=np.nan),
    }
    steps = [(r.n, r.iterations, r.final_delta, r.residual) for r in recs]
    return CellResult(index, dict(cell), row, steps, sol.u.copy(), sol.grid.coords, wall,
                      sol if keep else None)


def _run_cell_worker(args):
    text, index, cell = args
    return run_cell(parse_config(text), index, cell)


def run_experiment(config: ExperimentConfig, out: str | Path | None = None, jobs: int | None = None,
                   keep_solutions: bool = False, store_every: int | None = None) -> ResultBundle:
    """Run every sweep cell and write the result bundle to ``out``.

    With ``jobs > 1`` cells run in a process pool (solutions cannot be kept).
    ``out=None`` skips writing files.
    """
    jobs = config.jobs if jobs is None else jobs
    cells = config.cells()
    for cell in cells:                      # fail fast on bad cells before solving anything
        _resolve(config, cell)
    if jobs > 1 and not keep_solutions and len(cells) > 1:
        text = config.dumps()
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_worker, [(text, i, c) for i, c in enumerate(cells)]))
    else:
        results = []
        for i, c in enumerate(cells):
            log.info("cell %d/%d %s", i + 1, len(cells), c)
            results.append(run_cell(config, i, c, keep=keep_solutions, store_every=store_every))
    bundle = ResultBundle(Path(out) if out is not None else None, config, results)
    if out is not None:
        write_bundle(bundle)
    return bundle


def write_bundle(bundle: ResultBundle) -> None:
    path = bundle.path
    path.mkdir(parents=True, exist_ok=True)
    (path / "config.txt").write_text(bundle.config.dumps())
    with open(path / "cells.csv", "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(CELL_COLUMNS)
        for c in bundle.cells:
            w.writerow([fmt(c.row[k]) for k in CELL_COLUMNS])
    with open(path / "iterations.csv", "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["cell", "step", "iterations", "final_delta", "residual"])
        for c in bundle.cells:
            for n, it, delta, res in c.steps:
                w.writerow([c.index, n, it, fmt(delta), fmt(res)])
    for c in bundle.cells:
        with open(path / f"u_{c.index:03d}.csv", "w", newline="") as fh:
            w = _writer(fh)
            d = c.coords.shape[1]
            w.writerow([f"x{l + 1}" for l in range(d)] + ["u"])
            for x, v in zip(c.coords, c.u):
                w.writerow([fmt(xi) for xi in x] + [fmt(v)])
    with open(path / "timings.csv", "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["cell", "wall_seconds"])
        for c in bundle.cells:
            w.writerow([c.index, f"{c.wall:.3f}"])


def load_bundle(path) -> ResultBundle:
    """Read ``config.txt`` and ``cells.csv`` of a bundle directory."""
    path = Path(path)
    config = load_config(path / "config.txt")
    cells = []
    with open(path / "cells.csv", newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {}
            for k, v in rec.items():
                if k in _TEXT_COLUMNS:
                    row[k] = v
                elif k in _INT_COLUMNS:
                    row[k] = int(v)
                else:
                    row[k] = float(v) if v else np.nan
            cells.append(CellResult(int(row["cell"]), {}, row, [], np.zeros(0), np.zeros((0, 1)), 0.0))
    return ResultBundle(path, config, cells)


# ---------------------------------------------------------------------------
# tables

def increments(values) -> tuple[list, list]:
    """``inc_k = v_k - v_{k-1}`` and ``ratio_k = inc_{k-1} / inc_k`` (``None`` where undefined)."""
    v = [float(x) for x in values]
    inc = [None] + [b - a for a, b in zip(v, v[1:])]
    ratio = [None] * len(v)
    for k in range(2, len(v)):
        if inc[k] not in (None, 0.0) and inc[k - 1] is not None:
            ratio[k] = inc[k - 1] / inc[k]
    return inc, ratio


def _groups(bundle: ResultBundle, axis: str):
    others = [a for a in ("scenario", "h", "rho", "h_eps") if a != axis]
    keys = []
    for c in bundle.cells:
        key = tuple(c.row[a] for a in others)
        if key not in keys:
            keys.append(key)
    for key in keys:
        fixed = dict(zip(others, key))
        xs, ys = bundle.values(axis, **fixed)
        yield fixed, xs, ys


def convergence_table(bundle: ResultBundle, axis: str, path=None) -> list[list[str]]:
    """Increment/ratio table along ``axis`` for every combination of the other axes.

    Columns: the fixed parameters, ``parameter``, ``value``, ``increment``,
    ``ratio``.  Returns the rows (as strings) and writes them to ``path``.
    """
    if axis not in ("h", "rho", "h_eps"):
        raise ValueError(f"unknown table axis {axis!r}")
    rows = [["scenario", *[a for a in ("h", "rho", "h_eps") if a != axis],
             axis, "value", "increment", "ratio"]]
    for fixed, xs, ys in _groups(bundle, axis):
        inc, ratio = increments(ys)
        for x, y, i, r in zip(xs, ys, inc, ratio):
            rows.append([fixed.get("scenario", "")] +
                        [fmt(fixed[a]) for a in ("h", "rho", "h_eps") if a != axis] +
                        [fmt(x), fmt(y), fmt(i), fmt(r)])
    if path is not None:
        with open(path, "w", newline="") as fh:
            _writer(fh).writerows(rows)
    return rows


def penalty_table(bundle: ResultBundle, path=None, fit_path=None, rate: float = 1.0):
    """Increment/ratio table along ``rho`` plus the ``C0`` regression per group.

    Returns ``(rows, fits)`` where ``fits`` maps each group to its
    :class:`FreeBoundaryParams` (``None`` for ladders shorter than three).
    """
    rows = convergence_table(bundle, "rho", path)
    fits = {}
    fit_rows = [["scenario", "h", "h_eps", "C0", "rate", "intercept", "max_residual"]]
    for fixed, xs, ys in _groups(bundle, "rho"):
        key = (fixed.get("scenario", ""), fixed["h"], fixed["h_eps"])
        fit = None
        if len(xs) >= 3:
            fit = estimate_C0(xs, ys, rate)
            fit_rows.append([key[0], fmt(key[1]), fmt(key[2]), fmt(fit.C0), fmt(fit.rate),
                             fmt(fit.intercept), fmt(fit.residual)])
        fits[key] = fit
    if fit_path is not None:
        with open(fit_path, "w", newline="") as fh:
            _writer(fh).writerows(fit_rows)
    return rows, fits


# ---------------------------------------------------------------------------
# heatmaps

def export_policy_heatmap(solution: Solution, time_index: int | None = None, path=None,
                          params: FreeBoundaryParams | None = None, atol: float = 1e-12):
    """Feedback control and stopping flag on the unknowns at a stored level.

    Rows are ``x_1..x_d, a_1..a_p, stopped``; ``stopped`` marks membership in
    the band ``zeta - C0 rho^{-rate} <= u <= zeta`` (never set without an
    obstacle or penalty).  ``time_index=None`` uses the final level.
    """
    disc = solution.disc
    N = disc.partition.N
    n = N if time_index is None else int(time_index)
    if n == N and solution.policy is not None:
        u, policy = solution.u, solution.policy
    elif n in solution.policies:
        u, policy = solution.history[n], solution.policies[n]
    else:
        raise KeyError(f"level {n} was not stored (set store_every)")
    t = disc.partition[n]
    x = disc.x
    controls = disc.samples[policy]
    uu = u[disc.active]
    obs = disc.problem.obstacle
    if obs.obstacle is None or disc.rho == 0:
        stopped = np.zeros(len(uu), dtype=bool)
    else:
        zeta = obs.zeta(t, x)
        width = (params or FreeBoundaryParams(1.0)).width(disc.rho)
        stopped = (uu >= zeta - width - atol) & (uu <= zeta + atol)
    rows = [[f"x{l + 1}" for l in range(x.shape[1])] +
            [f"a{l + 1}" for l in range(controls.shape[1])] + ["stopped"]]
    for xi, ai, si in zip(x, controls, stopped):
        rows.append([fmt(v) for v in xi] + [fmt(v) for v in ai] + [str(int(si))])
    if path is not None:
        with open(path, "w", newline="") as fh:
            _writer(fh).writerows(rows)
    return rows


def cfl_report(config: ExperimentConfig) -> list[tuple[dict, object]]:
    """CFL report of every sweep cell (no solves)."""
    out = []
    for cell in config.cells():
        _, scheme, problem, _ = _resolve(config, cell)
        out.append((cell, check_cfl(Discretization(problem, scheme))))
    return out
