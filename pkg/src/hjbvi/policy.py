"""Policy iteration (Howard's algorithm) as a semismooth Newton method.

One time step of the scheme is the finite-dimensional problem
``G[u]_i = min_a G^a[u]_i = 0``.  Starting from the previous level, each
iteration

1. picks per node the control sample minimizing ``G^a[u]_i`` (lowest index
   on ties), and
2. solves the slanting system ``L (u_new - u) = -dt G[u]`` where row ``i`` of
   ``L`` is ``(I - dt A^{a_i})_i - dt (d_y f^{a_i} - rho 1{zeta_i - u_i > 0})``.

The level object passed to :func:`iterate` supplies the residual and the
Newton rows; see :class:`hjbvi.scheme.TimeLevelState`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import solve_banded

__all__ = [
    "ControlGrid",
    "SlantSystem",
    "IterationStats",
    "PolicyIterationError",
    "policy_improve",
    "assemble_slant",
    "policy_evaluate",
    "iterate",
    "argmin_set",
]


@dataclass(frozen=True, eq=False)
class ControlGrid:
    """Enumerated samples of a compact control set.

    Attributes
    ----------
    samples : (K, p) array
    mesh : float
        Sample spacing ``h_eps``.
    kind : str
        ``"box"`` or ``"simplex"``.
    """

    samples: np.ndarray
    mesh: float
    kind: str = "box"

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if s.shape[0] == 0:
            raise ValueError("control grid is empty")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @staticmethod
    def _axis(lo: float, hi: float, h_eps: float) -> np.ndarray:
        if hi < lo or h_eps <= 0:
            raise ValueError("need lo <= hi and a positive mesh")
        n = int(np.ceil((hi - lo) / h_eps - 1e-9))
        return np.linspace(lo, hi, n + 1) if n > 0 else np.array([lo])

    @classmethod
    def single(cls, control=(0.0,)) -> "ControlGrid":
        return cls(np.atleast_2d(np.asarray(control, dtype=float)), 0.0)

    @classmethod
    def interval(cls, lo: float, hi: float, h_eps: float) -> "ControlGrid":
        return cls(cls._axis(lo, hi, h_eps)[:, None], h_eps)

    @classmethod
    def box(cls, lows, highs, h_eps: float) -> "ControlGrid":
        axes = [cls._axis(a, b, h_eps) for a, b in zip(lows, highs)]
        return cls(np.array(list(itertools.product(*axes))), h_eps)

    @classmethod
    def simplex(cls, h_eps: float, dim: int = 2) -> "ControlGrid":
        """Lattice points of ``{a >= 0, sum(a) <= 1}`` with spacing ``h_eps = 1/n``."""
        n = int(round(1.0 / h_eps))
        if abs(n * h_eps - 1.0) > 1e-9:
            raise ValueError("simplex mesh must be 1/n")
        pts = [c for c in itertools.product(range(n + 1), repeat=dim) if sum(c) <= n]
        return cls(np.array(pts, dtype=float) / n, h_eps, kind="simplex")


@dataclass(eq=False)
class SlantSystem:
    """Newton matrix with its diagonal-dominance certificate.

    ``margin[i] = L_ii - sum_{j != i} |L_ij|`` and ``bound = 1 - dt * mu``.
    """

    matrix: sp.csr_matrix
    margin: np.ndarray
    bound: float

    @property
    def min_margin(self) -> float:
        return float(self.margin.min()) if self.margin.size else np.inf


@dataclass
class IterationStats:
    iterations: int = 0
    deltas: list = field(default_factory=list)
    residual: float = np.nan
    min_margin: float = np.inf
    margin_bound: float = np.nan


class PolicyIterationError(RuntimeError):
    """Policy iteration exhausted its iteration budget."""

    def __init__(self, message, deltas):
        super().__init__(message)
        self.deltas = list(deltas)


def policy_improve(residuals: np.ndarray):
    """Per-node argmin over controls (lowest index on ties).

    Parameters
    ----------
    residuals : (K, n) per-control residuals

    Returns
    -------
    policy : (n,) int array
    value : (n,) minimal residuals
    """
    g = np.atleast_2d(residuals)
    idx = np.argmin(g, axis=0)
    return idx, g[idx, np.arange(g.shape[1])]


def assemble_slant(implicit: sp.spmatrix, slant: np.ndarray, dt: float, mu: float,
                   check: bool = True) -> SlantSystem:
    """``L = (I - dt A) - dt diag(slant)`` with its dominance certificate.

    Parameters
    ----------
    implicit : square ``I - dt A`` restricted to the unknowns (rows follow the policy)
    slant : (n,) slant derivative of the penalized driver per row
    """
    n = implicit.shape[0]
    L = sp.csr_matrix(implicit, copy=True)
    dpos = _diagonal_positions(L)
    if dpos is None:
        L = (L - sp.diags(dt * np.asarray(slant), format="csr")).tocsr()
        dpos = _diagonal_positions(L)
    else:
        L.data[dpos] -= dt * np.asarray(slant)
    if n == 0:
        return SlantSystem(L, np.zeros(0), 1.0 - dt * mu)
    absrow = np.add.reduceat(np.abs(L.data), L.indptr[:-1])
    margin = 2 * L.data[dpos] - absrow
    if check and n and margin.min() <= 0:
        i = int(np.argmin(margin))
        raise ValueError(f"slanting matrix not diagonally dominant at row {i} "
                         f"(margin {margin[i]:.3e})")
    return SlantSystem(L, margin, 1.0 - dt * mu)


def _diagonal_positions(L: sp.csr_matrix):
    """Positions of the diagonal in ``L.data`` if every row stores exactly one."""
    L.sort_indices()
    rows = np.repeat(np.arange(L.shape[0]), np.diff(L.indptr))
    pos = np.flatnonzero(L.indices == rows)
    return pos if len(pos) == L.shape[0] else None


def _solve(L: sp.csr_matrix, rhs: np.ndarray, max_band: int = 8,
           max_contraction: float = 0.75, rtol: float = 1e-14) -> np.ndarray:
    """Solve ``L x = rhs``.

    Banded LU for small bandwidths; Jacobi iteration when ``L`` is so strongly
    diagonally dominant that the iteration contracts by ``max_contraction``
    per sweep (stopped by the a posteriori bound ``q/(1-q) |dx| <= rtol |x|``);
    sparse LU otherwise.
    """
    n = L.shape[0]
    rows = np.repeat(np.arange(n), np.diff(L.indptr))
    off = L.indices - rows
    lo, up = (max(-int(off.min()), 0), max(int(off.max()), 0)) if off.size else (0, 0)
    if lo + up <= max_band:
        ab = np.zeros((lo + up + 1, n))
        ab[up - off, L.indices] = L.data
        return solve_banded((lo, up), ab, rhs, check_finite=False)
    diag = L.diagonal()
    offdiag = np.add.reduceat(np.abs(L.data), L.indptr[:-1]) - np.abs(diag)
    q = float(np.max(offdiag / diag)) if np.all(diag > 0) else np.inf
    if q <= max_contraction:
        O = L - sp.diags(diag, format="csr")
        x = rhs / diag
        for _ in range(500):
            x_new = (rhs - O @ x) / diag
            dx = np.max(np.abs(x_new - x))
            x = x_new
            if q / (1 - q) * dx <= rtol * max(1.0, np.max(np.abs(x))):
                return x
    return spla.spsolve(L.tocsc(), rhs)


def policy_evaluate(system: SlantSystem, u: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Solve ``g + L (u_new - u) = 0`` for ``u_new``."""
    rhs = -np.asarray(g, dtype=float)
    step = np.atleast_1d(_solve(system.matrix, rhs))
    if not np.all(np.isfinite(step)):
        raise np.linalg.LinAlgError("policy evaluation produced non-finite values")
    return np.asarray(u, dtype=float) + step


def iterate(level, tol: float, max_iter: int, u0: np.ndarray | None = None):
    """Run policy iteration on one time level.

    Parameters
    ----------
    level
        Object with ``u_prev`` (initial guess), ``dt``, ``mu``,
        ``residuals(u) -> (K, n)`` and ``newton_rows(policy, u) ->
        (implicit, slant)``.
    tol : float
        Stop when ``max|u_{k+1} - u_k| < tol``.

    Returns
    -------
    u, policy, IterationStats
    """
    u = np.array(level.u_prev if u0 is None else u0, dtype=float)
    stats = IterationStats(margin_bound=1.0 - level.dt * level.mu)
    for _ in range(max_iter):
        policy, g = policy_improve(level.residuals(u))
        implicit, slant = level.newton_rows(policy, u)
        system = assemble_slant(implicit, slant, level.dt, level.mu)
        stats.min_margin = min(stats.min_margin, system.min_margin)
        u_new = policy_evaluate(system, u, level.dt * g)
        delta = float(np.max(np.abs(u_new - u))) if u.size else 0.0
        stats.iterations += 1
        stats.deltas.append(delta)
        u = u_new
        if delta < tol:
            final_policy, gmin = policy_improve(level.residuals(u))
            # reported in solution units so it compares directly with ``tol``
            stats.residual = level.dt * float(np.max(np.abs(gmin))) if gmin.size else 0.0
            return u, final_policy, stats
    raise PolicyIterationError(
        f"policy iteration did not converge in {max_iter} iterations "
        f"(last delta {stats.deltas[-1]:.3e})", stats.deltas)


def argmin_set(residuals: np.ndarray, slack: float = 0.0) -> np.ndarray:
    """Indices of samples within ``slack`` of the minimal residual at one node."""
    g = np.asarray(residuals, dtype=float).ravel()
    return np.flatnonzero(g <= g.min() + slack)
