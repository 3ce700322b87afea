"""Uniform tensor grids, time partitions and boundary handling.

Grid functions are plain ``float64`` arrays of length ``grid.size`` in C
(row-major) node order.  Off-grid lattice points needed by wide stencils are
resolved through a :class:`Lattice`, which applies the boundary rules and
hands out *extended* indices: ``0 .. size-1`` address grid nodes, larger
indices address ghost points whose values come from an exterior function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "UniformGrid",
    "TimePartition",
    "BoundaryRule",
    "Boundary",
    "Lattice",
    "as_field",
    "diff_forward",
    "diff_backward",
    "central_diff_vector",
]

EXTERIOR = "exterior"
NEUMANN = "neumann"
EQUATION = "equation"
_KINDS = (EXTERIOR, NEUMANN, EQUATION)


@dataclass(frozen=True)
class UniformGrid:
    """Cell-vertex tensor grid on a box.

    Parameters
    ----------
    lower, upper : sequence of float
        Box corners.
    counts : sequence of int
        Number of nodes per axis (endpoints included), each at least 3.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        up = tuple(float(v) for v in self.upper)
        n = tuple(int(v) for v in self.counts)
        if not (len(lo) == len(up) == len(n)) or not lo:
            raise ValueError("lower, upper and counts must have equal positive length")
        for a, b, m in zip(lo, up, n):
            if not b > a:
                raise ValueError(f"empty axis [{a}, {b}]")
            if m < 3:
                raise ValueError("every axis needs at least 3 nodes")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)
        object.__setattr__(self, "counts", n)

    @classmethod
    def from_spacing(cls, lower, upper, h) -> "UniformGrid":
        """Grid with spacing ``h`` (scalar or per axis); extents must be multiples of h."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        hs = np.broadcast_to(np.asarray(h, dtype=float), lower.shape)
        counts = []
        for a, b, hh in zip(lower, upper, hs):
            m = (b - a) / hh
            k = int(round(m))
            if abs(m - k) > 1e-9 * max(1.0, m):
                raise ValueError(f"extent {b - a} is not a multiple of h={hh}")
            counts.append(k + 1)
        return cls(tuple(lower), tuple(upper), tuple(counts))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def spacing(self) -> np.ndarray:
        lo, up, n = map(np.asarray, (self.lower, self.upper, self.counts))
        return (up - lo) / (n - 1)

    @property
    def h(self) -> float:
        """Largest spacing over the axes."""
        return float(self.spacing.max())

    def axis_coords(self, axis: int) -> np.ndarray:
        return np.linspace(self.lower[axis], self.upper[axis], self.counts[axis])

    @property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(size, dim)``."""
        mesh = np.meshgrid(*[self.axis_coords(l) for l in range(self.dim)], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def lattice_index(self, flat) -> np.ndarray:
        """Lattice coordinates of flat indices, shape ``(..., dim)``."""
        return np.stack(np.unravel_index(np.asarray(flat), self.counts), axis=-1)

    def flat_index(self, lattice) -> np.ndarray:
        lattice = np.asarray(lattice)
        return np.ravel_multi_index(tuple(np.moveaxis(lattice, -1, 0)), self.counts)

    def lattice_coords(self, lattice) -> np.ndarray:
        """Physical coordinates of (possibly off-grid) lattice points."""
        return np.asarray(self.lower) + np.asarray(lattice) * self.spacing

    def node_at(self, point, atol: float = 1e-9) -> int:
        """Flat index of the node at ``point``; raises if the point is off-grid."""
        p = np.atleast_1d(np.asarray(point, dtype=float))
        if p.shape != (self.dim,):
            raise ValueError(f"point must have {self.dim} coordinates")
        m = (p - np.asarray(self.lower)) / self.spacing
        k = np.rint(m).astype(int)
        if np.any(np.abs(m - k) > atol) or np.any(k < 0) or np.any(k >= np.asarray(self.counts)):
            raise ValueError(f"point {tuple(p)} is not a grid node")
        return int(self.flat_index(k))


@dataclass(frozen=True)
class TimePartition:
    """Uniform partition of ``[0, T]`` into ``N`` steps."""

    T: float
    N: int

    def __post_init__(self):
        if self.T < 0 or self.N < 0 or (self.N == 0 and self.T > 0):
            raise ValueError("need T >= 0 and N >= 1 when T > 0")

    @classmethod
    def from_step(cls, T: float, dt: float) -> "TimePartition":
        """Smallest uniform partition whose step does not exceed ``dt``."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        return cls(float(T), int(math.ceil(T / dt - 1e-9)))

    @property
    def dt(self) -> float:
        return self.T / self.N if self.N else 0.0

    def __getitem__(self, n: int) -> float:
        return n * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dt


@dataclass(frozen=True)
class BoundaryRule:
    """How one face ``(axis, side)`` of the box is treated.

    ``kind`` is ``"exterior"`` (values outside the domain come from an
    exterior function; nodes on the face are fixed), ``"neumann"``
    (homogeneous Neumann by mirror reflection) or ``"equation"`` (the
    equation itself holds on the face; stencils must not leave it).
    """

    kind: str
    axis: int
    side: int  # 0 = lower face, 1 = upper face

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.side not in (0, 1):
            raise ValueError("side must be 0 (lower) or 1 (upper)")


class Boundary:
    """A complete set of face rules for a grid.

    Parameters
    ----------
    grid : UniformGrid
    rules : sequence of BoundaryRule
        Exactly one rule per face.
    exterior : callable, optional
        ``exterior(t, x)`` with ``x`` of shape ``(n, d)``; required when any
        face is of exterior kind.
    """

    def __init__(self, grid: UniformGrid, rules: Sequence[BoundaryRule],
                 exterior: Callable[[float, np.ndarray], np.ndarray] | None = None):
        table: dict[tuple[int, int], str] = {}
        for rule in rules:
            key = (rule.axis, rule.side)
            if not 0 <= rule.axis < grid.dim:
                raise ValueError(f"rule axis {rule.axis} out of range")
            if key in table:
                raise ValueError(f"face {key} covered twice")
            table[key] = rule.kind
        missing = [(l, s) for l in range(grid.dim) for s in (0, 1) if (l, s) not in table]
        if missing:
            raise ValueError(f"faces without a boundary rule: {missing}")
        if exterior is None and EXTERIOR in table.values():
            raise ValueError("exterior rule needs an exterior function")
        self.grid = grid
        self.rules = tuple(rules)
        self.kinds = table
        self.exterior = exterior

    @classmethod
    def uniform(cls, grid: UniformGrid, kind: str, exterior=None) -> "Boundary":
        rules = [BoundaryRule(kind, l, s) for l in range(grid.dim) for s in (0, 1)]
        return cls(grid, rules, exterior)

    def kind(self, axis: int, side: int) -> str:
        return self.kinds[(axis, side)]

    @property
    def fixed_mask(self) -> np.ndarray:
        """Nodes lying on exterior faces; their values are prescribed."""
        lat = self.grid.lattice_index(np.arange(self.grid.size))
        mask = np.zeros(self.grid.size, dtype=bool)
        for (l, s), kind in self.kinds.items():
            if kind == EXTERIOR:
                edge = 0 if s == 0 else self.grid.counts[l] - 1
                mask |= lat[:, l] == edge
        return mask

    @property
    def active(self) -> np.ndarray:
        """Flat indices of the unknowns."""
        return np.flatnonzero(~self.fixed_mask)

    def fixed_values(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        idx = np.flatnonzero(self.fixed_mask)
        if idx.size == 0:
            return idx, np.zeros(0)
        return idx, np.asarray(self.exterior(t, self.grid.coords[idx]), dtype=float)


class Lattice:
    """Resolves lattice points to extended indices under a :class:`Boundary`.

    Ghost points (lattice points outside an exterior face) are registered on
    first use and numbered after the grid nodes, so a single extended vector
    ``concat(U, ghost_values(t))`` serves every stencil built from the same
    lattice.  Not thread-safe while stencils are being built.
    """

    def __init__(self, boundary: Boundary):
        self.boundary = boundary
        self.grid = boundary.grid
        self._ghost_ids: dict[tuple[int, ...], int] = {}
        self._ghost_points: list[tuple[int, ...]] = []

    @property
    def n_ghost(self) -> int:
        return len(self._ghost_points)

    @property
    def size(self) -> int:
        return self.grid.size + self.n_ghost

    @property
    def ghost_lattice(self) -> np.ndarray:
        return np.asarray(self._ghost_points, dtype=np.int64).reshape(-1, self.grid.dim)

    def ghost_values(self, t: float) -> np.ndarray:
        if not self._ghost_points:
            return np.zeros(0)
        x = self.grid.lattice_coords(self.ghost_lattice)
        return np.asarray(self.boundary.exterior(t, x), dtype=float)

    def extend(self, values: np.ndarray, t: float) -> np.ndarray:
        """Extended vector for a full grid function at time ``t``."""
        return np.concatenate([values, self.ghost_values(t)])

    def resolve(self, lattice) -> np.ndarray:
        """Extended indices of lattice points, shape ``lattice.shape[:-1]``.

        Neumann faces mirror about the face node; points outside an exterior
        face become ghosts; points outside an equation face raise.
        """
        lat = np.array(lattice, dtype=np.int64, copy=True)
        shape = lat.shape[:-1]
        lat = lat.reshape(-1, self.grid.dim)
        outside = np.zeros(lat.shape[0], dtype=bool)
        for l, m in enumerate(self.grid.counts):
            col = lat[:, l]
            for side in (0, 1):
                bad = col < 0 if side == 0 else col > m - 1
                if not bad.any():
                    continue
                kind = self.boundary.kind(l, side)
                if kind == NEUMANN:
                    # repeated reflection keeps very long jumps inside the box
                    period = 2 * (m - 1)
                    c = np.mod(col, period)
                    col[:] = np.where(c > m - 1, period - c, c)
                elif kind == EXTERIOR:
                    outside |= bad
                else:
                    raise ValueError(
                        f"stencil leaves the domain through equation face (axis {l}, side {side})")
        out = np.empty(lat.shape[0], dtype=np.int64)
        inside = ~outside
        if inside.any():
            out[inside] = self.grid.flat_index(lat[inside])
        for k in np.flatnonzero(outside):
            key = tuple(int(v) for v in lat[k])
            gid = self._ghost_ids.get(key)
            if gid is None:
                gid = self.grid.size + len(self._ghost_points)
                self._ghost_ids[key] = gid
                self._ghost_points.append(key)
            out[k] = gid
        return out.reshape(shape)


def as_field(grid: UniformGrid, values) -> np.ndarray:
    """Validate a grid function: finite, one value per node."""
    u = np.asarray(values, dtype=float)
    if u.shape != (grid.size,):
        raise ValueError(f"field must have shape ({grid.size},), got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("field has non-finite values")
    return u


def _neighbour_values(grid, boundary, values, axis, step, nodes, t):
    lat = grid.lattice_index(nodes)
    lat[:, axis] += step
    m = grid.counts[axis]
    out_of_range = (lat[:, axis] < 0) | (lat[:, axis] > m - 1)
    vals = np.empty(lat.shape[0])
    inside = ~out_of_range
    vals[inside] = values[grid.flat_index(lat[inside])]
    if out_of_range.any():
        if boundary is None:
            raise ValueError("missing neighbour and no boundary rule")
        side = 0 if step < 0 else 1
        kind = boundary.kind(axis, side)
        sel = np.flatnonzero(out_of_range)
        if kind == NEUMANN:
            mirror = lat[sel].copy()
            mirror[:, axis] -= 2 * step
            vals[sel] = values[grid.flat_index(mirror)]
        elif kind == EXTERIOR:
            vals[sel] = boundary.exterior(t, grid.lattice_coords(lat[sel]))
        else:
            # one-sided: reuse the difference on the inward side
            inward = lat[sel].copy()
            inward[:, axis] -= 2 * step
            centre = values[np.asarray(nodes)[sel]]
            vals[sel] = 2 * centre - values[grid.flat_index(inward)]
    return vals


def _nodes(grid, node):
    return np.arange(grid.size) if node is None else np.atleast_1d(np.asarray(node))


def diff_forward(grid: UniformGrid, values, axis: int, node=None,
                 boundary: Boundary | None = None, t: float = 0.0) -> np.ndarray:
    """``U[i + e_axis] - U[i]`` at the given nodes (all nodes by default)."""
    nodes = _nodes(grid, node)
    u = np.asarray(values, dtype=float)
    return _neighbour_values(grid, boundary, u, axis, +1, nodes, t) - u[nodes]


def diff_backward(grid: UniformGrid, values, axis: int, node=None,
                  boundary: Boundary | None = None, t: float = 0.0) -> np.ndarray:
    """``U[i] - U[i - e_axis]`` at the given nodes."""
    nodes = _nodes(grid, node)
    u = np.asarray(values, dtype=float)
    return u[nodes] - _neighbour_values(grid, boundary, u, axis, -1, nodes, t)


def central_diff_vector(grid: UniformGrid, values, node=None,
                        boundary: Boundary | None = None, t: float = 0.0) -> np.ndarray:
    """Per-axis ``forward + backward`` difference (``2h`` times the central slope).

    Returns shape ``(n_nodes, dim)``.
    """
    return np.stack([
        diff_forward(grid, values, l, node, boundary, t)
        + diff_backward(grid, values, l, node, boundary, t)
        for l in range(grid.dim)
    ], axis=1)
