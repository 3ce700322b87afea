"""Command-line front end.

Usage::

    python -m hjbvi <verb> --config FILE [--out DIR] [--jobs N] [--override key=value ...]

Verbs
-----
solve      run the first sweep cell and print the probe value
sweep      run every cell and write a result bundle
table      increment/ratio tables from an existing bundle (``--axis``)
heatmap    solve with stored levels and export the feedback-control map
verify     run the oracle suite on small instances
cfl-check  report CFL margins of every cell without solving

Exit codes: 0 success, 1 failed verification or unexpected error,
2 CFL failure, 3 solver non-convergence, 4 configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .experiments import (cfl_report, convergence_table, export_policy_heatmap, fmt,
                          load_bundle, penalty_table, run_cell, run_experiment)
from .free_boundary import FreeBoundaryParams
from .policy import PolicyIterationError
from .scheme import CFLError

EXIT_OK, EXIT_FAIL, EXIT_CFL, EXIT_NONCONVERGED, EXIT_CONFIG = 0, 1, 2, 3, 4

log = logging.getLogger("hjbvi")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hjbvi", description=__doc__.split("\n")[0])
    p.add_argument("verb", choices=["solve", "sweep", "table", "heatmap", "verify", "cfl-check"])
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--out", help="output directory (default: output.dir of the config)")
    p.add_argument("--jobs", type=int, default=None, help="worker processes for sweeps")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--axis", choices=["h", "rho", "h_eps"], help="table axis")
    p.add_argument("--trials", type=int, default=2000, help="monotonicity trials for verify")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args) -> ExperimentConfig:
    if args.config is None:
        if args.verb in ("verify", "table"):
            return ExperimentConfig().with_overrides(args.override)
        raise ConfigError(f"'{args.verb}' needs --config")
    return load_config(args.config).with_overrides(args.override)


def _out(args, config: ExperimentConfig) -> Path:
    return Path(args.out or config.output)


def cmd_solve(args, config) -> int:
    cell = config.cells()[0]
    res = run_cell(config, 0, cell)
    out = _out(args, config)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.dumps())
    print(f"value={fmt(res.value)} max_iterations={res.row['max_iterations']} "
          f"steps={res.row['steps']} cfl_margin={fmt(res.row['cfl_margin'])}")
    return EXIT_OK


def cmd_sweep(args, config) -> int:
    bundle = run_experiment(config, _out(args, config), jobs=args.jobs)
    for c in bundle.cells:
        print(" ".join(f"{k}={fmt(c.row[k])}" for k in ("cell", "scenario", "h", "rho", "h_eps",
                                                      "value", "max_iterations")))
    return EXIT_OK


def cmd_table(args, config) -> int:
    src = _out(args, config)
    bundle = load_bundle(src)
    axis = args.axis or _guess_axis(bundle.config)
    if axis == "rho":
        rows, fits = penalty_table(bundle, src / "table_rho.csv", src / "table_rho_fit.csv")
    else:
        rows = convergence_table(bundle, axis, src / f"table_{axis}.csv")
    for r in rows:
        print(",".join(r))
    return EXIT_OK


def _guess_axis(config: ExperimentConfig) -> str:
    numeric = [a for a in ("h", "rho", "h_eps") if len(config.sweep.get(a, ())) > 1]
    if len(numeric) != 1:
        raise ConfigError("cannot infer the table axis; pass --axis")
    return numeric[0]


def cmd_heatmap(args, config) -> int:
    every = int(config.heatmap.get("store_every", 1))
    res = run_cell(config, 0, config.cells()[0], keep=True, store_every=every)
    idx = config.heatmap.get("time_index")
    c0 = config.heatmap.get("C0")
    params = FreeBoundaryParams(float(c0)) if c0 is not None else None
    out = _out(args, config)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "heatmap.csv"
    export_policy_heatmap(res.solution, None if idx is None else int(idx), path, params)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_verify(args, config) -> int:
    from .verify import run_suite
    out = _out(args, config)
    out.mkdir(parents=True, exist_ok=True)
    reports = run_suite(out, trials=args.trials, seed=config.seed)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_cfl(args, config) -> int:
    ok = True
    for cell, report in cfl_report(config):
        margins = " ".join(f"{k}={fmt(v)}" for k, v in report.margins.items())
        print(f"{cell or 'cell'}: {'ok' if report.ok else 'FAIL'} {margins}")
        ok &= report.ok
    return EXIT_OK if ok else EXIT_CFL


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "table": cmd_table, "heatmap": cmd_heatmap,
            "verify": cmd_verify, "cfl-check": cmd_cfl}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _config(args)
        return COMMANDS[args.verb](args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CFLError as exc:
        print(f"CFL failure: {exc}", file=sys.stderr)
        return EXIT_CFL
    except PolicyIterationError as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
