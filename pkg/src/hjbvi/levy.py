"""Lévy measures, jump truncation and interpolation--quadrature stencils.

The nonlocal operators are discretized as

    K U_i = sum_q w_q (I U(x_i + eta_q) - U_i),
    B U_i = sum_q w_q gamma_q m(I U(x_i + eta_q) - U_i),

where ``(e_q, w_q)`` is a midpoint rule on the truncated jump set
``{r < |e| < R}`` (weights already include the density) and ``I`` is
multilinear interpolation on the grid lattice.  Jumps with ``|e| < r`` are
replaced by extra diffusion (:func:`sigma_r`) and the compensator of the
remaining jumps is moved into the drift (:func:`compensation_drift`).
"""
from __future__ import annotations

import functools
import itertools
import math
import struct
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy import integrate

from .grid import Lattice, UniformGrid

__all__ = [
    "LevyMeasure",
    "NonlocalKernelSpec",
    "NonlocalStencil",
    "variance_gamma",
    "gamma1",
    "gamma2",
    "choose_r",
    "sigma_r",
    "compensation_drift",
    "interp_weights",
    "multilinear",
    "build_stencil",
    "apply_K",
    "apply_B",
    "write_stencil",
    "m_identity",
    "m_positive",
    "m_negative",
    "read_stencil",
]

_TAIL_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class LevyMeasure:
    """A Lévy measure on ``R \\ {0}`` given by a density.

    Parameters
    ----------
    density : callable
        ``k(e)``, vectorized over a 1-D array of (signed) jump sizes.
    kappa : float
        Singularity order, ``k(e) <= c_nu |e|^{-1-kappa}`` near the origin.
    c_nu : float
        Constant of the density bound.
    panels_per_octave : int
        Resolution of the log-spaced midpoint rule.
    cutoff : float, optional
        Outer radius of the quadrature.  By default the smallest ``2**(k/4)``,
        ``k >= 0``, whose tail mass is below ``1e-10`` of the mass outside 1/2.

    Notes
    -----
    Panels are geometric with ratio ``2**(1/panels_per_octave)`` and anchored
    at ``|e| = 1``, so the rule for a smaller truncation radius extends the
    rule for a larger one; the panel touching ``r`` is shortened to end at
    ``r``.  Only one-dimensional jump spaces are supported.
    """

    density: Callable[[np.ndarray], np.ndarray]
    kappa: float = 0.0
    c_nu: float = 1.0
    panels_per_octave: int = 16
    cutoff: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.kappa < 2.0:
            raise ValueError("kappa must lie in [0, 2)")
        if self.panels_per_octave < 1:
            raise ValueError("need at least one panel per octave")

    @functools.cached_property
    def outer_radius(self) -> float:
        if self.cutoff is not None:
            return float(self.cutoff)
        k = self.density

        def mass_beyond(a):
            with warnings.catch_warnings():
                warnings.simplefilter("error", integrate.IntegrationWarning)
                try:
                    return sum(integrate.quad(lambda s, sg=sg: k(np.array([sg * s]))[0], a, np.inf,
                                              limit=200)[0] for sg in (-1.0, 1.0))
                except integrate.IntegrationWarning as exc:
                    raise ValueError(f"Lévy density is not integrable away from the origin "
                                     f"({exc})") from None

        mass = mass_beyond(0.5)
        if not np.isfinite(mass):
            raise ValueError("Lévy density is not integrable away from the origin")
        R = 1.0
        while R < 2.0 ** 30:
            if mass_beyond(R) <= _TAIL_RTOL * max(mass, 1e-300):
                return R
            R *= 2.0 ** 0.25
        raise ValueError("Lévy tail mass does not vanish; density is not integrable")

    def radial_rule(self, r: float) -> tuple[np.ndarray, np.ndarray]:
        """Midpoints ``s`` and log-widths ``ds`` of the panels covering ``(r, R)``.

        ``integral f(|e|) d|e| ~ sum f(s) s ds``.
        """
        if not 0.0 < r < 1.0:
            raise ValueError("truncation radius must lie in (0, 1)")
        step = math.log(2.0) / self.panels_per_octave
        lo = math.log(r)
        hi = math.log(self.outer_radius)
        n_below = math.ceil(-lo / step - 1e-12)
        n_above = math.ceil(hi / step - 1e-12)
        edges = np.arange(-n_below, n_above + 1) * step
        edges[0] = lo
        widths = np.diff(edges)
        keep = widths > 0
        mids = 0.5 * (edges[:-1] + edges[1:])
        return np.exp(mids[keep]), widths[keep]

    def nodes(self, r: float) -> tuple[np.ndarray, np.ndarray]:
        """Signed jump nodes ``e_q`` and weights ``w_q = ds * |e_q| * k(e_q)``."""
        s, ds = self.radial_rule(r)
        e = np.concatenate([-s[::-1], s])
        w = np.concatenate([(s * ds)[::-1], s * ds]) * self.density(e)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("Lévy density must be finite and nonnegative")
        small = np.abs(e) < 1
        bound = self.c_nu * np.abs(e[small]) ** (-1.0 - self.kappa)
        if np.any(self.density(e[small]) > bound * (1 + 1e-12)):
            raise ValueError("density violates the bound c_nu |e|^(-1-kappa)")
        return e, w

    def small_jump_nodes(self, r: float, octaves: int = 48, order: int = 8):
        """Gauss--Legendre nodes on ``{0 < |e| < r}`` (log-spaced octaves)."""
        x, wg = np.polynomial.legendre.leggauss(order)
        edges = math.log(r) - math.log(2.0) * np.arange(octaves + 1)
        a, b = edges[1:], edges[:-1]
        t = (0.5 * (b - a))[:, None] * x[None, :] + (0.5 * (a + b))[:, None]
        s = np.exp(t).ravel()
        ds = ((0.5 * (b - a))[:, None] * wg[None, :]).ravel()
        e = np.concatenate([-s, s])
        w = np.concatenate([s * ds, s * ds]) * self.density(e)
        return e, w


def variance_gamma(mu: float = 6.0, **kwargs) -> LevyMeasure:
    """Symmetric Variance-Gamma measure ``exp(-mu|e|)/|e| de``."""
    def density(e):
        a = np.abs(np.asarray(e, dtype=float))
        return np.exp(-mu * a) / a
    return LevyMeasure(density, kappa=0.0, c_nu=1.0, **kwargs)


def m_identity(s):
    return s


def m_positive(s):
    """``m(s) = s^+``."""
    return np.maximum(s, 0.0)


def m_negative(s):
    """``m(s) = -s^- = min(s, 0)``."""
    return np.minimum(s, 0.0)


@dataclass(frozen=True)
class NonlocalKernelSpec:
    """Jump map, jump weight and the B-nonlinearity.

    ``eta(t, x, e)`` returns shape ``(n, Q, d)`` for ``x`` of shape ``(n, d)``;
    ``gamma(t, x, e)`` returns ``(n, Q)``; ``m`` is applied elementwise.
    """

    eta: Callable
    gamma: Callable
    m: Callable[[np.ndarray], np.ndarray] = m_identity
    m_lipschitz: float = 1.0


def gamma1(measure: LevyMeasure, r: float) -> float:
    """Mass of the measure outside ``B(0, r)`` under the configured quadrature."""
    return float(measure.nodes(r)[1].sum())


def gamma2(measure: LevyMeasure, r: float) -> float:
    """``integral_{|e|>r} min(1, |e|) nu(de)`` under the configured quadrature."""
    e, w = measure.nodes(r)
    return float(np.sum(w * np.minimum(1.0, np.abs(e))))


def choose_r(h: float, kappa: float) -> float:
    """Truncation radius ``max(h**(1/kappa), h)``; ``h`` when ``kappa == 0``."""
    if h <= 0:
        raise ValueError("h must be positive")
    if kappa == 0:
        return h
    return max(h ** (1.0 / kappa), h)


def sigma_r(sigma: np.ndarray, eta: Callable, measure: LevyMeasure, r: float,
            t: float, x: np.ndarray) -> np.ndarray:
    """Diffusion augmented by the truncated small jumps.

    Diagonal entry ``i`` becomes ``sqrt(sigma_ii**2 + int_{|e|<r} eta_i**2 dnu)``;
    off-diagonal entries are copied.  ``sigma`` has shape ``(n, d, d)``.
    """
    out = np.array(sigma, dtype=float, copy=True)
    e, w = measure.small_jump_nodes(r)
    extra = np.einsum("nqd,q->nd", np.asarray(eta(t, x, e)) ** 2, w)
    d = out.shape[-1]
    idx = np.arange(d)
    out[:, idx, idx] = np.sqrt(out[:, idx, idx] ** 2 + extra)
    return out


def compensation_drift(eta: Callable, measure: LevyMeasure, r: float,
                       t: float, x: np.ndarray) -> np.ndarray:
    """``int_{|e|>r} eta dnu`` with the stencil quadrature, shape ``(n, d)``."""
    e, w = measure.nodes(r)
    return np.einsum("nqd,q->nd", np.asarray(eta(t, x, e)), w)


def multilinear(points: np.ndarray):
    """Multilinear interpolation data for points in lattice units.

    Parameters
    ----------
    points : array, shape (P, d)
        Positions divided by the spacing (relative to the grid origin).

    Returns
    -------
    base : int array (P, d)
    offsets : int array (2**d, d)
    weights : array (P, 2**d)
    """
    pts = np.asarray(points, dtype=float)
    base = np.floor(pts)
    frac = pts - base
    # snap round-off so on-node points get a single unit weight
    near = frac > 1 - 1e-12
    base[near] += 1
    frac[near] = 0.0
    frac[frac < 1e-12] = 0.0
    d = pts.shape[-1]
    offsets = np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.int64)
    wts = np.ones(pts.shape[:-1] + (len(offsets),))
    for c, off in enumerate(offsets):
        for l in range(d):
            wts[..., c] *= frac[..., l] if off[l] else 1.0 - frac[..., l]
    return base.astype(np.int64), offsets, wts


def interp_weights(displacement, h) -> list[tuple[tuple[int, ...], float]]:
    """Nonzero multilinear weights ``(shift, omega)`` for a displacement from a node."""
    disp = np.atleast_1d(np.asarray(displacement, dtype=float))
    hs = np.broadcast_to(np.asarray(h, dtype=float), disp.shape)
    base, offsets, w = multilinear((disp / hs)[None, :])
    out = []
    for off, wt in zip(offsets, w[0]):
        if wt > 0:
            out.append((tuple(int(v) for v in base[0] + off), float(wt)))
    return out


@dataclass(eq=False)
class NonlocalStencil:
    """Quadrature records for all active nodes at one (control, time).

    Attributes
    ----------
    nodes : (n,) flat indices of the nodes the rows belong to
    e, w : (Q,) jump nodes and density-weighted quadrature weights
    cols : (n, Q, C) extended indices of interpolation corners
    omega : (n, Q, C) interpolation weights
    gamma : (n, Q) jump weights
    drift : (n, d) compensator ``int_{|e|>r} eta dnu``
    """

    nodes: np.ndarray
    e: np.ndarray
    w: np.ndarray
    cols: np.ndarray
    omega: np.ndarray
    gamma: np.ndarray
    drift: np.ndarray
    n_ext: int

    @functools.cached_property
    def interp(self) -> sp.csr_matrix:
        """Sparse ``(n*Q, n_ext)`` map from an extended vector to ``I U(x_i + eta_q)``."""
        n, Q, C = self.cols.shape
        indptr = np.arange(0, n * Q * C + 1, C)
        return sp.csr_matrix((self.omega.ravel(), self.cols.ravel(), indptr),
                             shape=(n * Q, self.n_ext))

    def _coefficients(self, scale: np.ndarray) -> sp.csr_matrix:
        n, Q, C = self.cols.shape
        rows = np.repeat(np.arange(n), Q * C)
        vals = self.omega * scale[:, :, None]
        # shift-0 convention: the centre carries no coefficient
        vals = np.where(self.cols == self.nodes[:, None, None], 0.0, vals).ravel()
        mat = sp.csr_matrix((vals, (rows, self.cols.ravel())), shape=(n, self.n_ext))
        mat.sum_duplicates()
        mat.eliminate_zeros()
        return mat

    @functools.cached_property
    def k_coefficients(self) -> sp.csr_matrix:
        """``k_{j,i} = sum_q w_q omega_{j,q}`` (row i, extended column j), centre removed."""
        return self._coefficients(np.broadcast_to(self.w, self.gamma.shape))

    @functools.cached_property
    def b_coefficients(self) -> sp.csr_matrix:
        """``b_{j,i} = sum_q w_q gamma_q omega_{j,q}``, centre removed."""
        return self._coefficients(self.w[None, :] * self.gamma)

    @property
    def k_sum(self) -> np.ndarray:
        return np.asarray(self.k_coefficients.sum(axis=1)).ravel()

    @property
    def b_sum(self) -> np.ndarray:
        return np.asarray(self.b_coefficients.sum(axis=1)).ravel()

    def jump_differences(self, u_ext: np.ndarray) -> np.ndarray:
        """``I U(x_i + eta_q) - U_i``, shape ``(n, Q)``."""
        n, Q, _ = self.cols.shape
        return (self.interp @ u_ext).reshape(n, Q) - u_ext[self.nodes][:, None]


def build_stencil(grid: UniformGrid, lattice: Lattice, measure: LevyMeasure,
                  kernel: NonlocalKernelSpec, r: float, t: float,
                  nodes: np.ndarray | None = None) -> NonlocalStencil:
    """Interpolation--quadrature stencil of ``K`` and ``B`` at the given nodes.

    Quadrature nodes with ``|e| <= r`` never occur: the rule starts at ``r``.
    Nodes whose jump map and jump weight coincide on every row (e.g. ``e`` and
    ``-e`` for a jump size depending on ``|e|`` only) are merged by adding
    their weights, which leaves both operators unchanged.
    """
    nodes = np.arange(grid.size) if nodes is None else np.asarray(nodes)
    x = grid.coords[nodes]
    e, w = measure.nodes(r)
    eta = np.asarray(kernel.eta(t, x, e), dtype=float)
    gam = np.asarray(kernel.gamma(t, x, e), dtype=float)
    if np.any(gam < 0):
        raise ValueError("jump weight gamma must be nonnegative")
    e, w, eta, gam = _merge_nodes(e, w, eta, gam)
    hs = grid.spacing
    lat0 = grid.lattice_index(nodes)
    pts = lat0[:, None, :] + eta / hs
    base, offsets, omega = multilinear(pts)
    corners = base[:, :, None, :] + offsets[None, None, :, :]
    cols = lattice.resolve(corners)
    if lattice.size < 2 ** 31:
        cols = cols.astype(np.int32)   # halves index traffic in the jump kernels
    drift = np.einsum("nqd,q->nd", eta, w)
    return NonlocalStencil(nodes=nodes, e=e, w=w, cols=cols, omega=omega, gamma=gam,
                           drift=drift, n_ext=lattice.size)


def _merge_nodes(e, w, eta, gam):
    groups: dict[bytes, int] = {}
    keep, target = [], np.empty(len(e), dtype=np.int64)
    for q in range(len(e)):
        key = eta[:, q, :].tobytes() + gam[:, q].tobytes()
        slot = groups.setdefault(key, len(keep))
        if slot == len(keep):
            keep.append(q)
        target[q] = slot
    if len(keep) == len(e):
        return e, w, eta, gam
    keep = np.asarray(keep)
    w_new = np.bincount(target, weights=w, minlength=len(keep))
    return e[keep], w_new, eta[:, keep, :], gam[:, keep]


def apply_K(stencil: NonlocalStencil, u_ext: np.ndarray) -> np.ndarray:
    """``sum_q w_q (I U(x_i + eta_q) - U_i)`` at the stencil nodes."""
    return stencil.jump_differences(u_ext) @ stencil.w


def apply_B(stencil: NonlocalStencil, u_ext: np.ndarray,
            m: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """``sum_q w_q gamma_q m(I U(x_i + eta_q) - U_i)`` at the stencil nodes."""
    d = stencil.jump_differences(u_ext)
    return np.sum(m(d) * stencil.gamma * stencil.w[None, :], axis=1)


# ---------------------------------------------------------------------------
# on-disk cache: little-endian flat records
#   header: b"NLST", u64 n_nodes, u64 Q, u64 C, u64 d, u64 n_ext
#   per node: u64 node id, u64 Q, u64 C, then f64 payload
#     [drift (d), then per q: e, w, gamma, C cols (as f64), C omegas]

_MAGIC = b"NLST"


def write_stencil(path, stencil: NonlocalStencil) -> None:
    n, Q, C = stencil.cols.shape
    d = stencil.drift.shape[1]
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<5Q", n, Q, C, d, stencil.n_ext))
        per_q = np.concatenate([
            np.broadcast_to(stencil.e, (n, Q))[..., None],
            np.broadcast_to(stencil.w, (n, Q))[..., None],
            stencil.gamma[..., None],
            stencil.cols.astype("<f8"),
            stencil.omega,
        ], axis=2).reshape(n, -1)
        payload = np.concatenate([stencil.drift, per_q], axis=1).astype("<f8")
        for i in range(n):
            fh.write(struct.pack("<3Q", int(stencil.nodes[i]), Q, C))
            fh.write(payload[i].tobytes())


def read_stencil(path) -> NonlocalStencil:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a stencil cache file")
        n, Q, C, d, n_ext = struct.unpack("<5Q", fh.read(40))
        width = d + Q * (3 + 2 * C)
        nodes = np.empty(n, dtype=np.int64)
        payload = np.empty((n, width))
        for i in range(n):
            node, q, c = struct.unpack("<3Q", fh.read(24))
            if (q, c) != (Q, C):
                raise ValueError("inconsistent record counts")
            nodes[i] = node
            payload[i] = np.frombuffer(fh.read(8 * width), dtype="<f8")
    drift = payload[:, :d]
    per_q = payload[:, d:].reshape(n, Q, 3 + 2 * C)
    return NonlocalStencil(
        nodes=nodes, e=per_q[0, :, 0].copy(), w=per_q[0, :, 1].copy(),
        cols=per_q[:, :, 3:3 + C].astype(np.int64), omega=per_q[:, :, 3 + C:].copy(),
        gamma=per_q[:, :, 2].copy(), drift=drift.copy(), n_ext=int(n_ext))
