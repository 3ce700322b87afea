"""Monotone discretizations of the local generator.

Both backends produce a :class:`GeneratorStencil`, i.e. the positive-coefficient
form ``A U_i = sum_{j != i} l_{j,i} (U_j - U_i)`` with ``l >= 0``.

* :func:`build_upwind` -- central second differences, seven-point positive
  splitting of cross derivatives, one-sided drift in the direction of ``b``.
* :func:`build_semilagrangian` -- linear-interpolation semi-Lagrangian
  stencil with feet ``x + b dt +- sigma_k sqrt(p dt)``.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import Lattice, UniformGrid
from .levy import multilinear

__all__ = ["GeneratorStencil", "build_upwind", "build_semilagrangian", "assemble_implicit"]


@dataclass(eq=False)
class GeneratorStencil:
    """Off-diagonal generator coefficients for a set of nodes.

    Attributes
    ----------
    nodes : (n,) flat indices of the rows
    coeffs : (n, n_ext) sparse nonnegative coefficients ``l_{j,i}``; the
        centre column of each row is empty and the diagonal is implied.
    """

    nodes: np.ndarray
    coeffs: sp.csr_matrix

    def __post_init__(self):
        if self.coeffs.nnz and self.coeffs.data.min() < 0:
            raise ValueError("generator coefficients must be nonnegative")

    @functools.cached_property
    def row_sum(self) -> np.ndarray:
        return np.asarray(self.coeffs.sum(axis=1)).ravel()

    @property
    def diagonal(self) -> np.ndarray:
        return -self.row_sum

    @property
    def n_ext(self) -> int:
        return self.coeffs.shape[1]

    def apply(self, u_ext: np.ndarray) -> np.ndarray:
        """``A U`` at the stencil nodes."""
        return self.coeffs @ u_ext - self.row_sum * u_ext[self.nodes]

    def neighbours(self, row: int) -> dict[int, float]:
        """``{extended column: coefficient}`` of one row."""
        lo, hi = self.coeffs.indptr[row], self.coeffs.indptr[row + 1]
        return dict(zip(self.coeffs.indices[lo:hi].tolist(), self.coeffs.data[lo:hi].tolist()))


def _assemble(lattice: Lattice, nodes, rows, lat, vals) -> GeneratorStencil:
    keep = vals > 0
    rows, lat, vals = rows[keep], lat[keep], vals[keep]
    cols = lattice.resolve(lat) if len(vals) else np.zeros(0, dtype=np.int64)
    # coefficients that land back on the centre (reflection) carry no weight
    centre = cols == nodes[rows]
    mat = sp.csr_matrix((vals[~centre], (rows[~centre], cols[~centre])),
                        shape=(len(nodes), lattice.size))
    mat.sum_duplicates()
    return GeneratorStencil(np.asarray(nodes), mat)


def build_upwind(grid: UniformGrid, lattice: Lattice, sigma: np.ndarray, drift: np.ndarray,
                 nodes: np.ndarray | None = None, rtol: float = 1e-12) -> GeneratorStencil:
    """Upwind/central stencil of ``b . Du + 1/2 tr(sigma sigma^T D^2 u)``.

    Parameters
    ----------
    sigma : (n, d, d) diffusion (already truncation-modified)
    drift : (n, d) drift (already compensated)

    Raises
    ------
    ValueError
        If ``sigma sigma^T`` is not diagonally dominant (scaled by the
        spacings), in which case the semi-Lagrangian backend must be used.
    """
    nodes = np.arange(grid.size) if nodes is None else np.asarray(nodes)
    n, d = len(nodes), grid.dim
    sigma = np.asarray(sigma, dtype=float).reshape(n, d, -1)
    drift = np.asarray(drift, dtype=float).reshape(n, d)
    a = np.einsum("nik,njk->nij", sigma, sigma)
    hs = grid.spacing
    lat0 = grid.lattice_index(nodes)
    rows, shifts, vals = [], [], []

    def add(shift, coef):
        rows.append(np.arange(n))
        shifts.append(np.broadcast_to(np.asarray(shift, dtype=np.int64), (n, d)))
        vals.append(coef)

    for l in range(d):
        el = np.eye(d, dtype=np.int64)[l]
        axial = 0.5 * a[:, l, l] / hs[l] ** 2
        for m in range(d):
            if m != l:
                axial = axial - 0.5 * np.abs(a[:, l, m]) / (hs[l] * hs[m])
        if np.any(axial < -rtol * (np.abs(a).max() / hs.min() ** 2 + 1e-300)):
            raise ValueError("diffusion is not diagonally dominant; "
                             "use the semi-Lagrangian backend")
        axial = np.maximum(axial, 0.0)
        add(el, axial + np.maximum(drift[:, l], 0.0) / hs[l])
        add(-el, axial + np.maximum(-drift[:, l], 0.0) / hs[l])
        for m in range(l + 1, d):
            em = np.eye(d, dtype=np.int64)[m]
            c = a[:, l, m] / (2 * hs[l] * hs[m])
            add(el + em, np.maximum(c, 0.0))
            add(-el - em, np.maximum(c, 0.0))
            add(el - em, np.maximum(-c, 0.0))
            add(-el + em, np.maximum(-c, 0.0))
    rows = np.concatenate(rows)
    lat = np.concatenate([lat0 + s for s in shifts])
    return _assemble(lattice, nodes, rows, lat, np.concatenate(vals))


def build_semilagrangian(grid: UniformGrid, lattice: Lattice, sigma: np.ndarray,
                         drift: np.ndarray, dt: float,
                         nodes: np.ndarray | None = None) -> GeneratorStencil:
    """Linear-interpolation semi-Lagrangian stencil.

    ``dt A U_i = sum_k (I U(x_i + b dt + s_k) + I U(x_i + b dt - s_k)) / (2p) - U_i``
    with ``s_k = sigma[:, k] sqrt(p dt)`` over the ``p`` columns of ``sigma``.
    Feet leaving through Neumann faces are reflected; leaving through an
    equation face is an error.
    """
    nodes = np.arange(grid.size) if nodes is None else np.asarray(nodes)
    n, d = len(nodes), grid.dim
    sigma = np.asarray(sigma, dtype=float).reshape(n, d, -1)
    p = sigma.shape[2]
    drift = np.asarray(drift, dtype=float).reshape(n, d)
    hs = grid.spacing
    lat0 = grid.lattice_index(nodes).astype(float)
    centre = lat0 + drift * dt / hs
    spread = sigma * np.sqrt(p * dt) / hs[None, :, None]            # (n, d, p)
    feet = np.concatenate([centre[:, None, :] + spread.transpose(0, 2, 1),
                           centre[:, None, :] - spread.transpose(0, 2, 1)], axis=1)
    base, offsets, w = multilinear(feet)                           # (n, 2p, d), (C, d), (n, 2p, C)
    corners = base[:, :, None, :] + offsets[None, None, :, :]
    # zero-weight corners may sit outside the box; park them on the base corner
    corners = np.where((w > 0)[..., None], corners, base[:, :, None, :])
    rows = np.repeat(np.arange(n), 2 * p * len(offsets))
    vals = w.ravel() / (2 * p * dt)
    return _assemble(lattice, nodes, rows, corners.reshape(-1, d), vals)


def assemble_implicit(stencil: GeneratorStencil, dt: float,
                      columns: np.ndarray | None = None) -> sp.csr_matrix:
    """``I - dt A`` for the stencil rows.

    With ``columns=None`` the result is ``(n, n_ext)`` and keeps boundary and
    ghost columns (row sums are exactly 1).  Otherwise ``columns`` lists the
    extended indices of the unknowns and the square block on them is returned.
    """
    n = len(stencil.nodes)
    diag = sp.csr_matrix((1.0 + dt * stencil.row_sum, (np.arange(n), stencil.nodes)),
                         shape=(n, stencil.n_ext))
    full = (diag - dt * stencil.coeffs).tocsr()
    if columns is None:
        return full
    return full[:, np.asarray(columns)].tocsr()
