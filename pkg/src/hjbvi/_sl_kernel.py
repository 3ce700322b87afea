"""Matrix-free semi-Lagrangian generator for large control sets.

Storing the interpolation stencil of every (node, control) pair costs
``2 p 2^d`` coefficients per pair, which is prohibitive for fine grids with
hundreds of control samples.  Here only the feet (in lattice units) are kept,
chunk by chunk within a memory budget, and ``A^a u`` is evaluated by the
compiled kernel.  Chunks beyond the budget are recomputed on every call.
"""
from __future__ import annotations

import numpy as np

from ._kernels import sl_apply, sl_apply_2d
from .grid import EQUATION, NEUMANN
from .local_operator import assemble_implicit, build_semilagrangian

__all__ = ["MatrixFreeSL"]

_CHUNK_PAIRS = 2 ** 21


class MatrixFreeSL:
    """Per-control semi-Lagrangian ``A^a u`` without assembled stencils.

    Only boxes whose faces are all Neumann or equation faces are supported;
    feet are reflected at Neumann faces and must not cross equation faces.
    """

    def __init__(self, disc, t: float):
        grid, boundary = disc.grid, disc.boundary
        for l in range(grid.dim):
            for side in (0, 1):
                if boundary.kind(l, side) not in (NEUMANN, EQUATION):
                    raise ValueError("matrix-free path needs Neumann or equation faces only")
        self.disc, self.t = disc, t
        self.grid = grid
        self.counts = np.asarray(grid.counts, dtype=np.int64)
        self.strides = np.array([int(np.prod(grid.counts[l + 1:])) for l in range(grid.dim)],
                                dtype=np.int64)
        self.nodes_lat = grid.lattice_index(disc.active).astype(np.int64)
        self.x = disc.x
        n = disc.n
        per = max(1, _CHUNK_PAIRS // max(n, 1))
        self.chunks = [(c, min(c + per, disc.n_controls)) for c in range(0, disc.n_controls, per)]
        budget = disc.config.cache_mb * 2 ** 20
        self._cache = {}
        for c0, c1 in self.chunks:
            feet = self._feet(c0, c1)
            size = feet[0].nbytes + feet[1].nbytes
            if size <= budget:
                self._cache[c0] = feet
                budget -= size

    def _feet(self, c0: int, c1: int):
        disc = self.disc
        n, k = disc.n, c1 - c0
        x = np.tile(self.x, (k, 1))
        a = np.repeat(disc.samples[c0:c1], n, axis=0)
        sig = np.asarray(disc.problem.sigma(self.t, x, a), dtype=float).reshape(n * k, self.grid.dim, -1)
        drift = np.asarray(disc.problem.drift(self.t, x, a), dtype=float).reshape(n * k, -1)
        hs = self.grid.spacing
        p = sig.shape[2]
        lat0 = np.tile(self.nodes_lat, (k, 1)).astype(float)
        centre = lat0 + drift * disc.dt / hs
        spread = sig * np.sqrt(p * disc.dt) / hs[None, :, None]
        reach = np.abs(spread).max(axis=2)
        for l in range(self.grid.dim):
            lo = centre[:, l] - reach[:, l]
            hi = centre[:, l] + reach[:, l]
            if disc.boundary.kind(l, 0) == EQUATION and lo.min() < -1e-9:
                raise ValueError(f"semi-Lagrangian foot leaves through equation face (axis {l}, side 0)")
            if disc.boundary.kind(l, 1) == EQUATION and hi.max() > self.counts[l] - 1 + 1e-9:
                raise ValueError(f"semi-Lagrangian foot leaves through equation face (axis {l}, side 1)")
        return np.ascontiguousarray(centre), np.ascontiguousarray(spread)

    def apply(self, u_ext: np.ndarray) -> np.ndarray:
        """``A^a u`` for every control, shape ``(K, n)``."""
        disc = self.disc
        n = disc.n
        out = np.empty(disc.n_controls * n)
        u = np.ascontiguousarray(u_ext, dtype=float)
        kernel = sl_apply_2d if self.grid.dim == 2 else sl_apply
        for c0, c1 in self.chunks:
            centre, spread = self._cache.get(c0) or self._feet(c0, c1)
            lat = np.tile(self.nodes_lat, (c1 - c0, 1))
            kernel(u, lat, self.counts, self.strides, centre, spread, disc.dt,
                   out[c0 * n:c1 * n])
        return out.reshape(disc.n_controls, n)

    def implicit_rows(self, policy: np.ndarray, dt: float):
        """``I - dt A^{policy}`` on the unknowns (assembled for one control per node)."""
        disc = self.disc
        a = disc.samples[policy]
        sig = disc.problem.sigma(self.t, self.x, a)
        drift = disc.problem.drift(self.t, self.x, a)
        gen = build_semilagrangian(self.grid, disc.lattice, sig, drift, dt, disc.active)
        return assemble_implicit(gen, dt, columns=disc.active)
