"""Slow, independent checks of the scheme and the policy-iteration solver.

* :func:`fixed_point_solve` solves one time level node by node (Gauss--Seidel
  sweeps with a scalar root finder per node), without any Newton machinery;
  it is the reference for the policy-iteration results on small instances.
* ``probe_*`` functions run randomized or ladder experiments for the
  structural properties of the scheme (monotonicity, comparison, a priori
  bound, continuous dependence, slant derivatives) and return an
  :class:`OracleReport`.
"""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .driver import ObstacleSpec
from .scheme import Discretization, SchemeConfig, Solution, TimeLevelState, run, step

__all__ = [
    "OracleReport",
    "FixedPointResult",
    "truncate_pi",
    "fixed_point_solve",
    "probe_monotonicity",
    "probe_comparison",
    "probe_apriori",
    "probe_continuous_dependence",
    "probe_obstacle_shift",
    "probe_slant",
    "write_reports",
    "summarize",
]


@dataclass
class OracleReport:
    """Outcome of one property check.

    ``violation`` is the worst signed excess over the property (``<= 0`` when
    the property holds strictly); ``passed`` iff ``violation <= tolerance``.
    """

    name: str
    instance: str
    passed: bool
    violation: float
    samples: int
    tolerance: float = 0.0
    details: dict = field(default_factory=dict)

    def summary(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"{flag} {self.name} [{self.instance}] worst={self.violation:.3e} "
                f"tol={self.tolerance:.1e} n={self.samples}")


def write_reports(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["property", "instance", "passed", "violation", "tolerance", "samples"])
        for r in reports:
            w.writerow([r.name, r.instance, int(r.passed), f"{r.violation:.9g}",
                        f"{r.tolerance:.9g}", r.samples])


def summarize(reports) -> str:
    lines = [r.summary() for r in reports]
    n_fail = sum(not r.passed for r in reports)
    lines.append(f"{len(reports) - n_fail}/{len(reports)} properties passed")
    return "\n".join(lines)


def truncate_pi(p: float, s):
    """``Pi_p(s) = min(p, |s|) s / |s|`` (and ``0`` at ``s = 0``)."""
    if p <= 0:
        raise ValueError("p must be positive")
    return np.clip(s, -p, p)


# ---------------------------------------------------------------------------
# node-by-node reference solver

@dataclass
class FixedPointResult:
    u: np.ndarray
    converged: bool
    sweeps: int
    last_delta: float


def _node_residual(state: TimeLevelState, i: int, rows, u_ext: np.ndarray):
    """Scalar map ``y -> G_i`` with all other unknowns frozen in ``u_ext``."""
    disc = state.disc
    coeffs, row_sum = rows
    s = coeffs @ u_ext                                  # sum_j l_ji u_j, centre excluded
    ctrl = state._ctrl
    x = disc.x[i:i + 1]
    z = state.z[:, i:i + 1]
    k = state.B[:, i:i + 1]
    grad = state.grad[i:i + 1]
    K = state.K[:, i]
    up, visc, zeta = state.u_prev[i], state.visc[i], state.zeta[i]

    def G(y: float) -> float:
        yy = np.array([y])
        f = disc.driver.value(ctrl, state.t, x, yy, z, k, grad)[..., 0]
        g = (y - up) / state.dt - (s - row_sum * y) - K - f - visc
        if disc.rho:
            g = g - disc.rho * max(zeta - y, 0.0)
        return float(np.min(g))

    return G


def _bracket(G, y0: float, width: float = 1.0, max_steps: int = 400):
    """Walk from ``y0`` towards the root of the increasing map ``G``.

    Steps double while ``G`` keeps its sign and halve when ``G`` is
    undefined there (drivers with a restricted domain raise ``ValueError``).
    """
    g0 = G(y0)
    if g0 == 0:
        return y0, y0
    direction = -1.0 if g0 > 0 else 1.0
    a, step = y0, width
    for _ in range(max_steps):
        b = a + direction * step
        try:
            gb = G(b)
        except ValueError:
            step /= 2
            continue
        if (gb >= 0) != (g0 >= 0) or gb == 0:
            return (a, b) if a < b else (b, a)
        a, step = b, 2 * step
    raise RuntimeError("could not bracket the nodal root")


def fixed_point_solve(state: TimeLevelState, tol: float = 1e-12, max_sweeps: int = 10000,
                      u0: np.ndarray | None = None) -> FixedPointResult:
    """Solve one time level by Gauss--Seidel sweeps of exact nodal solves.

    Each unknown solves its own scalar equation ``G_i(y) = 0`` with the other
    unknowns frozen; ``G_i`` is strictly increasing in ``y`` (slope at least
    ``1/dt - mu``), so a bracketing root finder is always applicable, even
    for non-Lipschitz drivers.  Intended for instances of a few dozen nodes.
    """
    disc = state.disc
    if disc.matrix_free:
        raise ValueError("fixed-point oracle needs assembled stencils")
    n, C = disc.n, disc.n_controls
    u = np.array(state.u_prev if u0 is None else u0, dtype=float)
    u_ext = disc.lattice.extend(state.full(u), state.t_next)
    coeffs = disc.A.coeffs
    row_sum = disc.A.row_sum
    per_node = []
    for i in range(n):
        rows = np.arange(C) * n + i
        per_node.append((coeffs[rows], row_sum[rows]))
    act = disc.active
    delta = np.inf
    for sweep in range(1, max_sweeps + 1):
        delta = 0.0
        for i in range(n):
            G = _node_residual(state, i, per_node[i], u_ext)
            lo, hi = _bracket(G, u[i])
            y = lo if lo == hi else brentq(G, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                                           maxiter=500)
            delta = max(delta, abs(y - u[i]))
            u[i] = y
            u_ext[act[i]] = y
        if delta < tol:
            return FixedPointResult(u, True, sweep, delta)
    return FixedPointResult(u, False, max_sweeps, delta)


# ---------------------------------------------------------------------------
# scheme property probes

def _instance(disc: Discretization) -> str:
    return f"{disc.problem.name} n={disc.n} K={disc.n_controls} dt={disc.dt:.3g} h={disc.h:.3g}"


def probe_monotonicity(disc: Discretization, trials: int = 1000, seed: int = 0,
                       scale: float = 0.05, rtol: float = 1e-9) -> OracleReport:
    """Randomized check that the scheme residual is nonincreasing in the
    neighbouring unknowns and in every value of the previous level.

    Trials alternate between nonnegative perturbations of a random subset of
    unknowns (checked on the untouched rows), perturbations of the previous
    level, and single-node bumps of the previous level (the direction the
    CFL condition protects).
    """
    rng = np.random.default_rng(seed)
    base = disc.initial()
    act = disc.active
    worst, level = -np.inf, 0
    for trial in range(trials):
        Un = base.copy()
        Un[act] += scale * rng.standard_normal(disc.n)
        state = disc.level(level, Un)
        u = state.u_prev + scale * rng.standard_normal(disc.n)
        G0 = state.residuals(u).min(axis=0)
        tol = rtol * max(1.0, float(np.max(np.abs(G0))))
        mode = trial % 3
        if mode == 0:
            S = rng.random(disc.n) < 0.3
            du = np.where(S, scale * rng.random(disc.n), 0.0)
            G1 = state.residuals(u + du).min(axis=0)
            excess = (G1 - G0)[~S]
        else:
            dU = np.zeros_like(Un)
            if mode == 1:
                dU[act] = scale * rng.random(disc.n)
            else:
                dU[act[rng.integers(disc.n)]] = scale
            G1 = disc.level(level, Un + dU).residuals(u).min(axis=0)
            excess = G1 - G0
        if excess.size:
            worst = max(worst, float(np.max(excess)) - tol)
    return OracleReport("monotonicity", _instance(disc), worst <= 0.0, worst, trials, 0.0)


def probe_comparison(disc: Discretization, trials: int = 50, seed: int = 0,
                     eps: float = 1e-3, scale: float = 0.05) -> OracleReport:
    """Ordered previous levels give ordered new levels.

    ``U_hi = U_lo + eps * r`` with ``r >= 0`` random; the one-step solutions
    must satisfy ``V_lo <= V_hi`` up to the solver tolerance.
    """
    rng = np.random.default_rng(seed)
    base = disc.initial()
    act = disc.active
    worst = -np.inf
    tol = 10 * disc.config.tol
    for _ in range(trials):
        lo = base.copy()
        lo[act] += scale * rng.standard_normal(disc.n)
        hi = lo.copy()
        hi[act] += eps * rng.random(disc.n)
        v_lo, *_ = step(disc, 0, lo)
        v_hi, *_ = step(disc, 0, hi)
        worst = max(worst, float(np.max(v_lo - v_hi)))
    return OracleReport("comparison", _instance(disc), worst <= tol, worst, trials, tol)


def probe_apriori(solution: Solution) -> OracleReport:
    """Every step respected ``|U^{n+1}| <= max(|zeta^+|, (|U^n| + dt F0)/(1 - dt mu^+))``."""
    gaps = np.array([r.apriori_margin for r in solution.records])
    worst = float(-gaps.min()) if gaps.size else -np.inf
    tol = 10 * solution.config.tol
    return OracleReport("apriori", _instance(solution.disc), worst <= tol, worst, len(gaps), tol,
                        {"min_gap": float(gaps.min()) if gaps.size else np.nan})


def probe_continuous_dependence(model, config: SchemeConfig, deltas=(1e-1, 1e-2, 1e-3),
                                parameter: str = "sigma") -> OracleReport:
    """Perturb a model coefficient by each ``delta`` and compare solutions.

    Passes when the sup-norm differences decrease strictly along the ladder
    (ordered from large to small ``delta``) and vanish for ``delta = 0``
    within twice the solver tolerance.
    """
    ref = run(model.build(config), config).u
    diffs = []
    for d in (0.0,) + tuple(deltas):
        perturbed = dataclasses.replace(model, **{parameter: getattr(model, parameter) + d})
        diffs.append(float(np.max(np.abs(run(perturbed.build(config), config).u - ref))))
    zero, ladder = diffs[0], np.array(diffs[1:])
    decreasing = bool(np.all(np.diff(ladder) < 0))
    violation = max(zero - 2 * config.tol, 0.0 if decreasing else float(np.max(np.diff(ladder))))
    return OracleReport(f"continuous_dependence[{parameter}]", model.name,
                        decreasing and zero <= 2 * config.tol, violation, len(diffs),
                        0.0, {"deltas": (0.0,) + tuple(deltas), "diffs": diffs})


def probe_obstacle_shift(problem, config: SchemeConfig, c: float) -> OracleReport:
    """Lowering the obstacle by ``c >= 0`` moves the solution by at most ``c``."""
    if c < 0:
        raise ValueError("shift must be nonnegative (the obstacle must stay below g)")
    ref = run(problem, config).u
    obs = problem.obstacle
    if obs.obstacle is None:
        raise ValueError("problem has no obstacle")
    shifted = dataclasses.replace(
        problem, obstacle=ObstacleSpec(obs.initial, lambda t, x: obs.obstacle(t, x) - c))
    diff = float(np.max(np.abs(run(shifted, config).u - ref)))
    tol = 10 * config.tol
    return OracleReport("obstacle_shift", problem.name, diff - c <= tol, diff - c, 1, tol,
                        {"shift": c, "diff": diff})


def probe_slant(driver, samples, hs=None, tol: float = 1e-6, min_order: float = 1.0,
                name: str | None = None) -> OracleReport:
    """Check the slant-derivative identity ``|F(y+h) - F(y) - dF(y+h) h| / |h| -> 0``.

    Parameters
    ----------
    samples : list of dicts with keys ``control`` and ``y`` (optional ``x``,
        ``t``, ``z``, ``k``, ``grad``, ``smooth``).  At ``smooth`` samples the
        slant at ``y`` is also compared with central differences and the
        observed order must be at least ``min_order``.
    hs : decreasing step ladder (default ``10^-1 ... 10^-6``)
    """
    hs = np.asarray(hs if hs is not None else 10.0 ** -np.arange(1, 7), dtype=float)
    worst, count, orders = -np.inf, 0, []
    for s in samples:
        ctrl = np.atleast_2d(np.asarray(s["control"], dtype=float))
        x = np.atleast_2d(np.asarray(s.get("x", [1.0]), dtype=float))
        t = s.get("t", 0.0)
        z = np.atleast_2d(np.asarray(s.get("z", [0.0]), dtype=float))
        k = np.atleast_1d(np.asarray(s.get("k", 0.0), dtype=float))
        grad = np.atleast_2d(np.asarray(s.get("grad", np.zeros(x.shape[1])), dtype=float))
        F = lambda y: float(np.ravel(driver.value(ctrl, t, x, np.array([y]), z, k, grad))[0])
        S = lambda y: float(np.ravel(driver.slant_y(ctrl, t, x, np.array([y]), z, k, grad))[0])
        y = float(s["y"])
        for sign in (1.0, -1.0):
            q = np.array([abs(F(y + sign * h) - F(y) - S(y + sign * h) * sign * h) / h for h in hs])
            # must shrink along the ladder and end below tol
            excess = max(float(q[-1]) - tol, float(np.max(np.diff(q))) - 1e-9)
            worst = max(worst, excess)
            count += len(hs)
        if s.get("smooth", False):
            err = np.array([abs(S(y) - (F(y + h) - F(y - h)) / (2 * h)) for h in hs[:3]])
            if err[0] > 1e-13 and err[1] > 1e-13:
                order = float(np.log(err[0] / err[1]) / np.log(hs[0] / hs[1]))
                orders.append(order)
                worst = max(worst, min_order - order)
    label = name or type(driver).__name__
    return OracleReport(f"slant[{label}]", f"{len(samples)} samples", worst <= 0.0, worst,
                        count, tol, {"orders": orders})
