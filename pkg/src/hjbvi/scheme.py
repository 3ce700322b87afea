"""Semi-implicit monotone scheme for penalized nonlocal HJB equations.

With ``t`` the time to maturity, one step from ``U^n`` to ``U^{n+1}`` solves,
at every unknown node ``i``,

    min_a [ (U_i^{n+1} - U_i^n)/dt - A^a U_i^{n+1} - K^a U_i^n
            - f_bar^a(t_n, x_i, U_i^{n+1}, DU_i^n, B^a U_i^n)
            - rho (zeta_i - U_i^{n+1})^+ ] = 0,

where ``A`` is the (implicit) monotone local generator, ``K`` and ``B`` are
the (explicit) interpolation--quadrature jump operators and ``f_bar`` is the
Lax--Friedrichs flux.  The nonlinear system is solved by policy iteration.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .driver import Driver, FluxParams, ObstacleSpec
from .grid import (Boundary, Lattice, TimePartition, UniformGrid, diff_backward,
                   diff_forward)
from .levy import (LevyMeasure, NonlocalKernelSpec, build_stencil, choose_r, gamma1,
                   m_identity, m_negative, m_positive, sigma_r)
from .local_operator import GeneratorStencil, build_semilagrangian, build_upwind
from .policy import ControlGrid, iterate
from ._kernels import jump_terms

__all__ = [
    "Problem",
    "SchemeConfig",
    "Discretization",
    "TimeLevelState",
    "CFLReport",
    "CFLError",
    "AprioriBoundError",
    "StepRecord",
    "Solution",
    "check_cfl",
    "residual",
    "step",
    "run",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SchemeConfig:
    """Discretization parameters.

    Either ``dt`` or ``lam`` (``dt = lam * h``) must be given; the time step
    is then shrunk to ``T / N`` with ``N = ceil(T / dt)``.  ``r = None``
    selects the truncation radius by :func:`hjbvi.levy.choose_r`.  ``T``,
    ``lower`` and ``upper`` override the model's horizon and domain.
    """

    h: float
    dt: float | None = None
    lam: float | None = None
    theta: float = 0.0
    rho: float = 0.0
    r: float | None = None
    h_eps: float = 0.1
    tol: float = 1e-10
    max_iter: int = 50
    T: float | None = None
    lower: tuple | None = None
    upper: tuple | None = None
    allow_uncertified: bool = False
    store_every: int = 0
    cache_mb: float = 768.0

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("h must be positive")
        if (self.dt is None) == (self.lam is None):
            raise ValueError("give exactly one of dt and lam")
        if (self.dt if self.dt is not None else self.lam) <= 0:
            raise ValueError("time step must be positive")
        if self.rho < 0 or self.theta < 0:
            raise ValueError("rho and theta must be nonnegative")
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("need tol > 0 and max_iter >= 1")

    @property
    def step_target(self) -> float:
        return self.dt if self.dt is not None else self.lam * self.h

    def replace(self, **changes) -> "SchemeConfig":
        return dataclasses.replace(self, **changes)


@dataclass(eq=False)
class Problem:
    """Everything the scheme needs about a model on a concrete grid.

    Coefficient callables are row-aligned: ``x`` is ``(n, d)`` and the
    control ``a`` is ``(n, p)`` (one control per row).

    Attributes
    ----------
    sigma : ``sigma(t, x, a) -> (n, d, q)``
    drift : ``drift(t, x, a) -> (n, d)``
    jump_map : ``eta(t, x, e, a) -> (n, Q, d)``; ``None`` without jumps
    jump_weight : ``gamma(t, x, e, a) -> (n, Q)``
    m : nonlinearity inside ``B``, with Lipschitz constant ``m_lipschitz``
    backend : ``"upwind"`` or ``"semilagrangian"``
    time_homogeneous : coefficients do not depend on ``t`` (stencils cached)
    """

    name: str
    grid: UniformGrid
    boundary: Boundary
    controls: ControlGrid
    driver: Driver
    obstacle: ObstacleSpec
    T: float
    sigma: Callable
    drift: Callable
    measure: LevyMeasure | None = None
    jump_map: Callable | None = None
    jump_weight: Callable | None = None
    m: Callable = m_identity
    m_lipschitz: float = 1.0
    backend: str = "upwind"
    time_homogeneous: bool = True
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.backend not in ("upwind", "semilagrangian"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if (self.measure is None) != (self.jump_map is None):
            raise ValueError("jumps need both a measure and a jump map")
        self.obstacle.check(self.grid.coords)

    @property
    def has_jumps(self) -> bool:
        return self.measure is not None

    def kernel(self, a: np.ndarray) -> NonlocalKernelSpec:
        """Jump kernel for row-aligned controls ``a``."""
        weight = self.jump_weight or (lambda t, x, e, a: np.ones((x.shape[0], e.size)))
        return NonlocalKernelSpec(
            eta=lambda t, x, e: self.jump_map(t, x, e, a),
            gamma=lambda t, x, e: weight(t, x, e, a),
            m=self.m, m_lipschitz=self.m_lipschitz)

    def digest(self) -> str:
        blob = json.dumps({"name": self.name, "params": self.params,
                           "grid": [self.grid.lower, self.grid.upper, self.grid.counts]},
                          sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


class CFLError(RuntimeError):
    def __init__(self, report: "CFLReport"):
        super().__init__(f"CFL conditions violated: {', '.join(report.violations)}")
        self.report = report


class AprioriBoundError(RuntimeError):
    pass


@dataclass
class CFLReport:
    """Outcome of the CFL check; margins are ``>= 0`` when satisfied."""

    ok: bool
    margins: dict
    violations: list

    @property
    def worst_margin(self) -> float:
        return min(self.margins.values()) if self.margins else np.inf


class Discretization:
    """Grid, stencils and per-(node, control) data for one problem/config pair.

    Rows are (node, control) pairs ordered control-major: pair ``c * n + i``
    is active node ``i`` under control sample ``c``.
    """

    def __init__(self, problem: Problem, config: SchemeConfig):
        self.problem, self.config = problem, config
        self.grid = problem.grid
        self.boundary = problem.boundary
        self.lattice = Lattice(problem.boundary)
        self.partition = TimePartition.from_step(problem.T, config.step_target)
        self.dt = self.partition.dt
        self.h = self.grid.h
        self.flux = FluxParams(config.theta, self.dt / self.h)
        self.active = self.boundary.active
        self.x = self.grid.coords[self.active]
        self.samples = problem.controls.samples
        self.n = len(self.active)
        self.n_controls = len(self.samples)
        self.r = None
        if problem.has_jumps:
            self.r = config.r if config.r is not None else choose_r(self.h, problem.measure.kappa)
        self.driver = problem.driver
        self.rho = config.rho
        self._built_at = None
        self._pair_nodes = np.tile(self.active, self.n_controls)
        self._pair_ctrl = np.repeat(self.samples, self.n, axis=0)
        self.matrix_free = self._estimate_mb() > config.cache_mb
        if self.matrix_free and (problem.backend != "semilagrangian" or problem.has_jumps):
            raise MemoryError("stencil cache exceeds cache_mb and no matrix-free path applies")

    # -- stencils ---------------------------------------------------------
    def _estimate_mb(self) -> float:
        pairs = self.n * self.n_controls
        d = self.grid.dim
        if self.problem.backend == "upwind":
            local = 2 * d * d
        else:
            q = self.problem.sigma(0.0, self.x[:1], self.samples[:1]).shape[-1]
            local = 2 * q * 2 ** d
        nonlocal_ = 0
        if self.problem.has_jumps:
            nonlocal_ = len(self.problem.measure.nodes(self.r)[0]) * 2 ** d
        # peak bytes per coefficient: local assembly goes through lattice
        # corners, row ids and a COO copy; jump stencils keep (cols, omega)
        return pairs * (64 * local + 24 * nonlocal_) / 2 ** 20

    def local_data(self, t: float, nodes: np.ndarray, a: np.ndarray):
        """``(sigma, sigma_r, compensated drift, nonlocal stencil)`` for row pairs."""
        x = self.grid.coords[nodes]
        sig = np.asarray(self.problem.sigma(t, x, a), dtype=float)
        drift = np.asarray(self.problem.drift(t, x, a), dtype=float).reshape(len(nodes), -1)
        nl = None
        sig_r = sig
        if self.problem.has_jumps:
            kernel = self.problem.kernel(a)
            sig_r = sigma_r(sig, kernel.eta, self.problem.measure, self.r, t, x)
            nl = build_stencil(self.grid, self.lattice, self.problem.measure, kernel,
                               self.r, t, nodes)
            drift = drift - nl.drift
        return sig, sig_r, drift, nl

    def generator(self, t: float, nodes, sig_r, drift) -> GeneratorStencil:
        if self.problem.backend == "upwind":
            return build_upwind(self.grid, self.lattice, sig_r, drift, nodes)
        return build_semilagrangian(self.grid, self.lattice, sig_r, drift, self.dt, nodes)

    def build(self, t: float) -> None:
        """Build (or reuse) all pair stencils for coefficients frozen at ``t``."""
        if self._built_at is not None and (self.problem.time_homogeneous or self._built_at == t):
            return
        if self.matrix_free:
            from ._sl_kernel import MatrixFreeSL
            self.sl = MatrixFreeSL(self, t)
            self.sig = self.sig_r = None
            self.jumps = None
            self._built_at = t
            return
        sig, sig_r, drift, nl = self.local_data(t, self._pair_nodes, self._pair_ctrl)
        gen = self.generator(t, self._pair_nodes, sig_r, drift)
        self.sig, self.sig_r, self.jumps = sig, sig_r, nl
        self.A = gen
        self._newton_pattern(gen)
        self._built_at = t
        if nl is not None:
            self._cgam = np.ascontiguousarray(nl.w[None, :] * nl.gamma)
            self._m_kind = {m_identity: 0, m_positive: 1, m_negative: 2}.get(self.problem.m)

    def _newton_pattern(self, gen: GeneratorStencil) -> None:
        """Generator rows restricted to the unknowns, with a stored diagonal slot."""
        pos = np.full(self.grid.size, -1)
        pos[self.active] = np.arange(self.n)
        coo = gen.coeffs.tocoo()
        keep = pos[coo.col] >= 0
        P = gen.coeffs.shape[0]
        own = pos[gen.nodes]
        rows = np.concatenate([coo.row[keep], np.arange(P)])
        cols = np.concatenate([pos[coo.col[keep]], own])
        vals = np.concatenate([coo.data[keep], np.zeros(P)])
        M = sp.csr_matrix((vals, (rows, cols)), shape=(P, self.n))
        M.sort_indices()
        entry_row = np.repeat(np.arange(P), np.diff(M.indptr))
        dpos = np.flatnonzero(M.indices == own[entry_row])
        self._A_pattern = M
        self._diag_offset = dpos - M.indptr[:-1]

    def sigma_sup(self, t: float = 0.0) -> float:
        """``sup_a |sigma^a|`` (Frobenius) over the unknowns."""
        best = 0.0
        for c in range(0, self.n_controls, max(1, 2 ** 20 // max(self.n, 1))):
            block = self.samples[c:c + max(1, 2 ** 20 // max(self.n, 1))]
            nodes = np.tile(self.active, len(block))
            a = np.repeat(block, self.n, axis=0)
            s = np.asarray(self.problem.sigma(t, self.grid.coords[nodes], a))
            best = max(best, float(np.sqrt((s ** 2).sum(axis=(1, 2))).max()))
        return best

    def f0_sup(self, t: float = 0.0) -> float:
        f0 = self.driver.f0(self.samples[:, None, :], t, self.x)
        return float(np.max(np.abs(f0)))

    # -- levels -----------------------------------------------------------
    def fixed_values(self, t: float):
        return self.boundary.fixed_values(t)

    def initial(self) -> np.ndarray:
        u = np.asarray(self.problem.obstacle.initial(self.grid.coords), dtype=float)
        idx, vals = self.fixed_values(0.0)
        u[idx] = vals
        return u

    def level(self, n: int, u_full: np.ndarray) -> "TimeLevelState":
        t = self.partition[n]
        self.build(t)
        return TimeLevelState(self, n, np.asarray(u_full, dtype=float))


class TimeLevelState:
    """Explicit data of level ``n``: ``K U^n``, ``B U^n`` and differences of ``U^n``."""

    def __init__(self, disc: Discretization, n: int, u_full: np.ndarray):
        self.disc = disc
        self.n_index = n
        self.t = disc.partition[n]
        self.t_next = disc.partition[n + 1] if n < disc.partition.N else self.t
        self.dt = disc.dt
        self.mu = disc.driver.mu
        self.u_full = u_full
        grid, act = disc.grid, disc.active
        self.u_prev = u_full[act].copy()
        C, na = disc.n_controls, disc.n
        u_ext = disc.lattice.extend(u_full, self.t)
        if disc.jumps is not None and disc._m_kind is not None:
            nl = disc.jumps
            K, B = np.empty(C * na), np.empty(C * na)
            jump_terms(u_ext, nl.nodes, nl.cols, nl.omega, nl.w, disc._cgam, disc._m_kind, K, B)
            self.K, self.B = K.reshape(C, na), B.reshape(C, na)
        elif disc.jumps is not None:
            jumps = disc.jumps.jump_differences(u_ext).reshape(C, na, -1)
            self.K = jumps @ disc.jumps.w
            self.B = np.einsum("cnq,cnq->cn", disc.problem.m(jumps), disc._cgam.reshape(C, na, -1))
        else:
            self.K = np.zeros((1, na))
            self.B = np.zeros((1, na))
        fwd = np.stack([diff_forward(grid, u_full, l, act, disc.boundary, self.t)
                        for l in range(grid.dim)], axis=1)
        bwd = np.stack([diff_backward(grid, u_full, l, act, disc.boundary, self.t)
                        for l in range(grid.dim)], axis=1)
        hs = grid.spacing
        self.fwd, self.bwd = fwd, bwd
        self.grad = (fwd + bwd) / (2 * hs)
        self.visc = disc.flux.theta / disc.flux.lam * np.sum((fwd - bwd) / disc.h, axis=1)
        if disc.driver.uses_z and disc.sig_r is not None:
            self.z = np.einsum("cnij,ni->cnj", disc.sig_r.reshape(C, na, grid.dim, -1), self.grad)
        else:
            self.z = np.zeros((1, na, 1))
        self.zeta = disc.problem.obstacle.zeta(self.t, disc.x)
        idx, vals = disc.fixed_values(self.t_next)
        self._fixed_idx, self._fixed_vals = idx, vals
        self._ctrl = disc.samples[:, None, :]

    def full(self, u: np.ndarray) -> np.ndarray:
        """Full grid function at level ``n+1`` from the unknowns."""
        out = np.empty(self.disc.grid.size)
        out[self._fixed_idx] = self._fixed_vals
        out[self.disc.active] = u
        return out

    def generator_apply(self, u: np.ndarray) -> np.ndarray:
        """``A^a u`` for every control, shape ``(K, n)``."""
        disc = self.disc
        u_ext = disc.lattice.extend(self.full(u), self.t_next)
        if disc.matrix_free:
            return disc.sl.apply(u_ext)
        return disc.A.apply(u_ext).reshape(disc.n_controls, disc.n)

    def residuals(self, u: np.ndarray, controls: np.ndarray | None = None) -> np.ndarray:
        """Per-control residuals ``G^a[u]``, shape ``(K, n)``; with ``controls``
        (an ``(n,)`` policy) the residual of that assignment, shape ``(n,)``."""
        disc = self.disc
        Au = self.generator_apply(u)
        f = disc.driver.value(self._ctrl, self.t, disc.x, u, self.z, self.B, self.grad)
        g = (u - self.u_prev) / self.dt - Au - self.K - f - self.visc
        if disc.rho:
            g = g - disc.rho * np.maximum(self.zeta - u, 0.0)
        if controls is not None:
            return g[np.asarray(controls), np.arange(disc.n)]
        return g

    def _pick(self, arr, policy):
        if arr.shape[0] == 1:
            return arr[0]
        return arr[policy, np.arange(self.disc.n)]

    def newton_rows(self, policy: np.ndarray, u: np.ndarray):
        """``(I - dt A^{policy})`` on the unknowns and the penalized slant per row."""
        disc = self.disc
        na, dt = disc.n, self.dt
        if disc.matrix_free:
            implicit = disc.sl.implicit_rows(policy, dt)
        else:
            rows = policy * na + np.arange(na)
            M = disc._A_pattern[rows]
            implicit = sp.csr_matrix((-dt * M.data, M.indices, M.indptr), shape=M.shape)
            implicit.data[M.indptr[:-1] + disc._diag_offset[rows]] = 1.0 + dt * disc.A.row_sum[rows]
        a = disc.samples[policy]
        s = disc.driver.slant_y(a, self.t, disc.x, u, self._pick(self.z, policy),
                                self._pick(self.B, policy), self.grad)
        if disc.rho:
            s = s - disc.rho * (self.zeta - u > 0)
        return implicit, s


def check_cfl(disc: Discretization, t: float = 0.0) -> CFLReport:
    """Evaluate the Gamma_1-based condition, the flux condition and, when
    jump stencils are available, the sharper per-row condition."""
    d, theta, dt = disc.grid.dim, disc.config.theta, disc.dt
    margins, violations = {}, []
    g1 = gamma1(disc.problem.measure, disc.r) if disc.problem.has_jumps else 0.0
    margins["gamma1"] = 1.0 - dt * g1 - 2 * d * theta
    need = disc.driver.lipschitz * disc.sigma_sup(t) * disc.flux.lam
    margins["flux"] = theta - need
    flux_ok = disc.flux.satisfied(disc.driver.lipschitz, disc.sigma_sup(t))
    if not flux_ok:
        violations.append("flux: theta <= C_f sup|sigma| lambda")
    sharp_ok = None
    if disc.problem.has_jumps:
        disc.build(t)
        nl = disc.jumps
        c = disc.driver.k_lipschitz * disc.problem.m_lipschitz
        margins["sharp"] = float(np.min(1.0 - dt * (nl.k_sum + c * nl.b_sum) - 2 * d * theta))
        sharp_ok = margins["sharp"] >= 0
    if margins["gamma1"] < 0 and not sharp_ok:
        violations.append("gamma1: 1 - dt Gamma_1 - 2 d theta < 0")
    return CFLReport(ok=not violations, margins=margins, violations=violations)


def residual(state: TimeLevelState, u: np.ndarray, policy: np.ndarray | None = None) -> np.ndarray:
    """Scheme residual at candidate unknowns ``u``: the min over controls, or
    the residual of the assignment ``policy``."""
    if policy is not None:
        return state.residuals(u, policy)
    return state.residuals(u).min(axis=0)


@dataclass
class StepRecord:
    n: int
    iterations: int
    final_delta: float
    residual: float
    deltas: list
    apriori_margin: float
    min_margin: float
    margin_bound: float


def step(disc: Discretization, n: int, u_full: np.ndarray):
    """Advance level ``n`` to ``n + 1``; returns ``(U^{n+1}, policy, StepRecord)``."""
    cfg = disc.config
    state = disc.level(n, u_full)
    u, policy, stats = iterate(state, cfg.tol, cfg.max_iter)
    new = state.full(u)
    if not np.all(np.isfinite(new)):
        raise FloatingPointError("non-finite values in the new level")
    bound = apriori_bound(disc, state)
    gap = bound - float(np.max(np.abs(new)))
    if gap < -(10 * cfg.tol + 1e-12 * max(1.0, bound)):
        raise AprioriBoundError(f"a priori bound violated at step {n + 1} by {-gap:.3e}")
    rec = StepRecord(n + 1, stats.iterations, stats.deltas[-1], stats.residual,
                     list(stats.deltas), gap, stats.min_margin, stats.margin_bound)
    return new, policy, rec


def apriori_bound(disc: Discretization, state: TimeLevelState) -> float:
    """``max(|zeta^+|, (|U^n| + dt F0) / (1 - dt mu^+))``.

    For ``mu <= 0`` this is the classical one-step estimate; the denominator
    extends it to drivers that are only one-sided Lipschitz with ``mu > 0``.
    """
    if not hasattr(disc, "_f0"):
        disc._f0 = disc.f0_sup(state.t)
    zeta = disc.problem.obstacle.zeta(state.t, disc.grid.coords)
    zplus = float(np.max(np.maximum(zeta, 0.0))) if disc.problem.obstacle.obstacle else 0.0
    grow = (np.max(np.abs(state.u_full)) + disc.dt * disc._f0) / (1.0 - disc.dt * max(disc.driver.mu, 0.0))
    return max(zplus, float(grow))


@dataclass(eq=False)
class Solution:
    """Result of :func:`run`."""

    problem: Problem
    config: SchemeConfig
    disc: Discretization
    u: np.ndarray
    policy: np.ndarray | None
    records: list
    cfl: CFLReport
    certified: bool
    history: dict = field(default_factory=dict)
    policies: dict = field(default_factory=dict)

    @property
    def grid(self) -> UniformGrid:
        return self.disc.grid

    def value_at(self, point) -> float:
        return float(self.u[self.grid.node_at(point)])

    @property
    def max_iterations(self) -> int:
        return max((r.iterations for r in self.records), default=0)


def run(problem: Problem, config: SchemeConfig, progress: Callable | None = None) -> Solution:
    """March from ``U^0 = g`` over all time steps."""
    disc = Discretization(problem, config)
    report = check_cfl(disc)
    if not report.ok and not config.allow_uncertified:
        raise CFLError(report)
    u = disc.initial()
    sol = Solution(problem, config, disc, u, None, [], report, report.ok)
    every = config.store_every
    if every:
        sol.history[0] = u.copy()
    for n in range(disc.partition.N):
        u, policy, rec = step(disc, n, u)
        sol.records.append(rec)
        if every and (n + 1) % every == 0:
            sol.history[n + 1] = u.copy()
            sol.policies[n + 1] = policy.copy()
        sol.policy = policy
        if progress is not None:
            progress(n + 1, disc.partition.N, rec)
    sol.u = u
    return sol
