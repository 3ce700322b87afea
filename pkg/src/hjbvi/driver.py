"""Drivers, the Lax--Friedrichs numerical flux and the penalty term.

A driver is the nonlinearity ``f(a, t, x, y, z, k)`` of the control problem.
All evaluations broadcast: ``control`` has shape ``(..., p)`` and is matched
against per-node arrays ``x (n, d)``, ``y (n,)``, ``z (n, q)``, ``k (n,)``.
Besides ``z = sigma^T Du`` the drivers also receive the raw central slope
``grad (n, d)`` so that models whose gradient term is not naturally a
function of ``sigma^T Du`` (e.g. when ``sigma`` vanishes for some controls)
can use it directly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "Driver",
    "LinearDriver",
    "CallableDriver",
    "ObstacleSpec",
    "FluxParams",
    "lf_flux",
    "penalty",
    "penalized_driver",
    "slant_y",
]


class Driver:
    """Base class for monotone drivers.

    Attributes
    ----------
    mu : float
        Monotonicity constant: ``slant_y <= mu`` everywhere.
    lipschitz : float
        Lipschitz constant ``C_f`` in ``(z, k)`` (used for the flux and CFL).
    k_lipschitz : float
        Lipschitz constant in ``k`` alone.
    uses_z : bool
        Whether the value depends on ``z``/``grad``; lets the scheme skip
        gradient data for zero-order drivers.
    """

    mu: float = 0.0
    lipschitz: float = 0.0
    k_lipschitz: float = 0.0
    uses_z: bool = True

    def value(self, control, t, x, y, z, k, grad):
        raise NotImplementedError

    def slant_y(self, control, t, x, y, z, k, grad):
        """A slant derivative in ``y`` (right limit at kinks)."""
        raise NotImplementedError

    def f0(self, control, t, x):
        """``f(a, t, x, 0, 0, 0)``."""
        n = np.shape(x)[0]
        zero = np.zeros(n)
        return self.value(control, t, x, zero, np.zeros((n, 1)), zero, np.zeros(np.shape(x)))

    def growth(self, s):
        """Growth function ``phi`` with ``|f| <= |f0| + phi(|y|) + C(|z| + |k|)``."""
        return abs(self.mu) * np.asarray(s)


class LinearDriver(Driver):
    """``f = mu * y + source``; the simplest monotone driver."""

    uses_z = False

    def __init__(self, mu: float, source: float = 0.0):
        self.mu = float(mu)
        self.source = float(source)

    def value(self, control, t, x, y, z, k, grad):
        return self.mu * np.asarray(y) + self.source + 0.0 * np.asarray(control)[..., 0]

    def slant_y(self, control, t, x, y, z, k, grad):
        return np.full(np.broadcast_shapes(np.shape(y), np.shape(control)[:-1]), self.mu)


class CallableDriver(Driver):
    """Driver assembled from plain callables ``value(...)`` and ``slant(...)``."""

    def __init__(self, value: Callable, slant: Callable, mu: float, lipschitz: float = 0.0,
                 k_lipschitz: float = 0.0, uses_z: bool = True):
        self._value, self._slant = value, slant
        self.mu, self.lipschitz, self.k_lipschitz = float(mu), float(lipschitz), float(k_lipschitz)
        self.uses_z = uses_z

    def value(self, control, t, x, y, z, k, grad):
        return self._value(control, t, x, y, z, k, grad)

    def slant_y(self, control, t, x, y, z, k, grad):
        return self._slant(control, t, x, y, z, k, grad)


@dataclass(frozen=True)
class ObstacleSpec:
    """Initial condition ``g(x)`` and obstacle ``zeta(t, x)`` (``None``: no obstacle)."""

    initial: Callable[[np.ndarray], np.ndarray]
    obstacle: Callable[[float, np.ndarray], np.ndarray] | None = None

    def zeta(self, t: float, x: np.ndarray) -> np.ndarray:
        if self.obstacle is None:
            return np.full(np.shape(x)[0], -np.inf)
        return np.asarray(self.obstacle(t, x), dtype=float)

    def check(self, x: np.ndarray, atol: float = 1e-12) -> None:
        """Require ``g >= zeta(0, .)`` at the given points."""
        if self.obstacle is None:
            return
        gap = np.asarray(self.initial(x)) - self.zeta(0.0, x)
        if np.any(gap < -atol):
            raise ValueError(f"initial condition below obstacle (min gap {gap.min():.3e})")


@dataclass(frozen=True)
class FluxParams:
    """Lax--Friedrichs parameters ``theta`` and ``lam = dt / h``."""

    theta: float
    lam: float

    def satisfied(self, c_f: float, sigma_sup: float) -> bool:
        """``theta > c_f sup|sigma| lam``; ``theta = 0`` is admissible when ``c_f = 0``."""
        need = c_f * sigma_sup * self.lam
        return self.theta > need or (need == 0.0 and self.theta >= 0.0)


def lf_flux(driver: Driver, control, t, x, y, fwd, bwd, k, sigma_r, flux: FluxParams, h):
    """Lax--Friedrichs flux ``f(a, t, x, y, sigma_r^T DU/(2h), k) + theta/lam sum (D+ - D-)/h``.

    ``fwd``/``bwd`` are the one-sided differences, shape ``(n, d)``;
    ``sigma_r`` has shape ``(..., n, d, q)``.
    """
    fwd, bwd = np.asarray(fwd, dtype=float), np.asarray(bwd, dtype=float)
    delta = fwd + bwd
    grad = delta / (2 * h)
    z = np.einsum("...ij,...i->...j", np.asarray(sigma_r, dtype=float), grad)
    visc = flux.theta / flux.lam * np.sum(fwd - bwd, axis=-1) / h
    return driver.value(control, t, x, y, z, k, grad) + visc


def penalty(y, zeta, rho):
    """``rho (zeta - y)^+``."""
    if rho == 0:
        return np.zeros(np.shape(y))
    return rho * np.maximum(np.asarray(zeta) - np.asarray(y), 0.0)


def penalized_driver(driver, control, t, x, y, fwd, bwd, k, sigma_r, flux, h, zeta, rho):
    """Flux plus penalty, ``f_bar + rho (zeta - y)^+``."""
    return lf_flux(driver, control, t, x, y, fwd, bwd, k, sigma_r, flux, h) + penalty(y, zeta, rho)


def slant_y(driver: Driver, control, t, x, y, z, k, grad, rho: float = 0.0, zeta=None):
    """Slant derivative of the penalized driver: ``d_y f - rho 1{zeta - y > 0}``."""
    s = driver.slant_y(control, t, x, y, z, k, grad)
    if rho and zeta is not None:
        s = s - rho * (np.asarray(zeta) - np.asarray(y) > 0)
    return s
