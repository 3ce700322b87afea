"""Free-boundary bands of penalized solutions and Hausdorff distances.

For a penalized solution ``u^rho`` with ``0 <= u - u^rho <= C0 rho^{-mu}``,
the band

    Gamma_rho = {(t, x) : zeta - C0 rho^{-mu} <= u^rho <= zeta}

contains the contact set ``{u = zeta}`` and shrinks onto it as ``rho``
grows.  ``C0`` is estimated by regressing values (at a probe point, or
nodewise for a sup-norm constant) on ``rho^{-mu}``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "FreeBoundaryParams",
    "NodeSet",
    "estimate_C0",
    "gamma_rho",
    "contact_set",
    "hausdorff",
    "one_sided_hausdorff",
]


@dataclass(frozen=True)
class FreeBoundaryParams:
    """Penalty error constant ``C0`` and rate exponent (1 for smooth obstacles).

    ``intercept`` and ``residual`` record the regression that produced ``C0``
    (``nan`` when it was set by hand).
    """

    C0: float
    rate: float = 1.0
    intercept: float = float("nan")
    residual: float = float("nan")

    def __post_init__(self):
        if not self.C0 > 0:
            raise ValueError("C0 must be positive")
        if not 0 < self.rate <= 1:
            raise ValueError("rate exponent must lie in (0, 1]")

    def width(self, rho: float) -> float:
        """Band width ``C0 rho^{-rate}``."""
        return self.C0 * float(rho) ** (-self.rate)


def estimate_C0(rhos, values, rate: float = 1.0) -> FreeBoundaryParams:
    """Least-squares fit ``U_rho = u - C0 rho^{-rate}``.

    Parameters
    ----------
    rhos : sequence of at least 3 distinct positive penalties
    values : ``(R,)`` probe values, or ``(R, ...)`` grid functions (one per
        ``rho``).  For grid functions every entry is fitted separately and
        the largest ``|slope|`` is returned, i.e. a sup-norm constant as
        required for the band to contain the contact set.

    Returns
    -------
    FreeBoundaryParams
        ``C0 = |slope|``; ``intercept`` is the extrapolated ``u`` (``nan``
        for grid functions).
    """
    rhos = np.asarray(rhos, dtype=float)
    values = np.asarray(values, dtype=float)
    if rhos.ndim != 1 or values.ndim < 1 or values.shape[0] != len(rhos):
        raise ValueError("need one value (or grid function) per penalty parameter")
    if len(rhos) < 3:
        raise ValueError("need at least three ladder points")
    if len(np.unique(rhos)) != len(rhos):
        raise ValueError("penalty ladder has repeated values (rank deficient fit)")
    if np.any(rhos <= 0):
        raise ValueError("penalty parameters must be positive")
    X = np.column_stack([np.ones_like(rhos), rhos ** (-rate)])
    Y = values.reshape(len(rhos), -1)
    coef, *_ = np.linalg.lstsq(X, Y, rcond=None)
    resid = float(np.max(np.abs(X @ coef - Y)))
    slopes = np.abs(coef[1])
    if values.ndim == 1:
        return FreeBoundaryParams(C0=float(slopes[0]), rate=rate, intercept=float(coef[0, 0]),
                                  residual=resid)
    return FreeBoundaryParams(C0=float(np.max(slopes)), rate=rate, residual=resid)


@dataclass(eq=False)
class NodeSet:
    """Subset of a space-time node array, stored as a mask.

    Attributes
    ----------
    times : (L,) time of each stored level
    coords : (n, d) node coordinates
    mask : (L, n) membership flags
    """

    times: np.ndarray
    coords: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.coords = np.asarray(self.coords, dtype=float).reshape(len(self.coords), -1)
        self.mask = np.asarray(self.mask, dtype=bool).reshape(len(self.times), len(self.coords))

    def __len__(self) -> int:
        return int(self.mask.sum())

    @property
    def members(self) -> np.ndarray:
        """``(m, 2)`` array of ``(time index, node index)`` pairs."""
        return np.argwhere(self.mask)

    @property
    def points(self) -> np.ndarray:
        """Space-time coordinates ``(t, x_1, ..., x_d)`` of the members."""
        idx = self.members
        return np.column_stack([self.times[idx[:, 0]], self.coords[idx[:, 1]]])

    def restrict(self, keep) -> "NodeSet":
        """Intersect with a node mask ``(n,)`` or a space-time mask ``(L, n)``."""
        keep = np.asarray(keep, dtype=bool)
        return NodeSet(self.times, self.coords, self.mask & np.broadcast_to(keep, self.mask.shape))

    def interior(self, lower, upper, margin: float) -> "NodeSet":
        """Drop nodes within ``margin`` of the box ``[lower, upper]``."""
        lo = np.asarray(lower, dtype=float) + margin
        hi = np.asarray(upper, dtype=float) - margin
        inside = np.all((self.coords >= lo - 1e-12) & (self.coords <= hi + 1e-12), axis=1)
        return self.restrict(inside)

    def to_csv(self, path) -> None:
        """Rows ``t, x_1..x_d, in_band`` for every stored node."""
        d = self.coords.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"x{l + 1}" for l in range(d)] + ["in_band"])
            for k, t in enumerate(self.times):
                for i, x in enumerate(self.coords):
                    w.writerow([f"{t:.9g}"] + [f"{v:.9g}" for v in x] + [int(self.mask[k, i])])


def _levels(history):
    if isinstance(history, dict):
        keys = sorted(history)
        return np.asarray(keys), np.stack([np.asarray(history[k], dtype=float) for k in keys])
    arr = np.atleast_2d(np.asarray(history, dtype=float))
    return np.arange(arr.shape[0]), arr


def gamma_rho(history, times, coords, zeta, params: FreeBoundaryParams, rho: float,
              atol: float = 1e-12) -> NodeSet:
    """Band ``zeta - C0 rho^{-rate} <= u <= zeta`` over stored levels.

    Parameters
    ----------
    history : ``{level: values}`` or ``(L, n)`` array of grid functions
    times : ``(L,)`` times of the stored levels, or a callable ``level -> t``
    coords : ``(n, d)`` node coordinates
    zeta : ``(n,)`` / ``(L, n)`` obstacle values or callable ``zeta(t, coords)``
    """
    keys, u = _levels(history)
    t = np.array([times(k) for k in keys]) if callable(times) else np.asarray(times, dtype=float)
    if callable(zeta):
        z = np.stack([np.asarray(zeta(tk, coords), dtype=float) for tk in t])
    else:
        z = np.broadcast_to(np.asarray(zeta, dtype=float), u.shape)
    width = params.width(rho)
    mask = (u >= z - width - atol) & (u <= z + atol)
    return NodeSet(t, coords, mask)


def contact_set(history, times, coords, zeta, tol: float) -> NodeSet:
    """Proxy for the contact set: ``|u - zeta| <= tol``."""
    keys, u = _levels(history)
    t = np.array([times(k) for k in keys]) if callable(times) else np.asarray(times, dtype=float)
    if callable(zeta):
        z = np.stack([np.asarray(zeta(tk, coords), dtype=float) for tk in t])
    else:
        z = np.broadcast_to(np.asarray(zeta, dtype=float), u.shape)
    return NodeSet(t, coords, np.abs(u - z) <= tol)


def _as_points(A) -> np.ndarray:
    pts = A.points if isinstance(A, NodeSet) else np.asarray(A, dtype=float)
    pts = pts.reshape(len(pts), -1)
    if len(pts) == 0:
        raise ValueError("Hausdorff distance of an empty set is undefined")
    return pts


def one_sided_hausdorff(A, B, metric: str = "euclidean") -> float:
    """``sup_{a in A} inf_{b in B} d(a, b)``."""
    a, b = _as_points(A), _as_points(B)
    if metric == "euclidean":
        dist, _ = cKDTree(b).query(a)
        return float(np.max(dist))
    if metric == "discrete":
        # distance 0 for identical points, 1 otherwise
        _, idx = cKDTree(b).query(a)
        return float(np.any(np.any(a != b[idx], axis=1)))
    raise ValueError(f"unknown metric {metric!r}")


def hausdorff(A, B, metric: str = "euclidean") -> float:
    """Symmetric Hausdorff distance between nonempty finite sets.

    ``A``/``B`` are :class:`NodeSet` instances (space-time points) or point
    arrays ``(m, d)``.  ``metric`` is ``"euclidean"`` or ``"discrete"``.
    """
    return max(one_sided_hausdorff(A, B, metric), one_sided_hausdorff(B, A, metric))
