"""The two reference models.

* :class:`InvestmentAmbiguityModel` -- optimal investment with early stopping
  under drift and jump ambiguity; a one-dimensional HJB variational inequality
  with a Variance-Gamma jump part and a piecewise-linear driver.
* :class:`EpsteinZinModel` -- consumption--portfolio choice with recursive
  utility in a stochastic-volatility market; a two-dimensional HJB equation
  with a monotone but non-Lipschitz driver and no jumps.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .driver import Driver, ObstacleSpec
from .grid import Boundary, BoundaryRule, UniformGrid
from .levy import m_negative, m_positive, variance_gamma
from .policy import ControlGrid
from .scheme import Problem, SchemeConfig

__all__ = [
    "AmbiguityDriver",
    "EpsteinZinDriver",
    "InvestmentAmbiguityModel",
    "EpsteinZinModel",
    "DriverDomainError",
    "build_problem",
    "MODELS",
]


class DriverDomainError(ValueError):
    """The driver was evaluated outside its domain of definition."""


# ---------------------------------------------------------------------------
# optimal investment under ambiguity

class AmbiguityDriver(Driver):
    """Driver of the ambiguity model.

    best case:  ``R y^- - r y^+ + k1 a sigma x |u_x| + k2 k``
    worst case: ``r y^- - R y^+ - k1 a sigma x |u_x| + k2 k``

    ``u_x`` is the central slope handed over by the flux (``grad``).
    """

    def __init__(self, scenario: str, r: float, R: float, kappa1: float, kappa2: float,
                 sigma: float, x_max: float = 2.0):
        if scenario not in ("best", "worst"):
            raise ValueError("scenario must be 'best' or 'worst'")
        self.scenario = scenario
        self.r, self.R, self.kappa1, self.kappa2, self.sig = r, R, kappa1, kappa2, sigma
        self.lo, self.hi = (r, R) if scenario == "best" else (R, r)
        # slope is -lo for y >= 0 and -hi for y < 0 (best: -r / -R, worst: -R / -r)
        self.mu = -min(r, R)
        self.lipschitz = max(kappa1, kappa2)
        self.k_lipschitz = kappa2
        self.sign = 1.0 if scenario == "best" else -1.0
        self.x_max = x_max

    def value(self, control, t, x, y, z, k, grad):
        a = np.asarray(control)[..., 0]
        y = np.asarray(y)
        ypos, yneg = np.maximum(y, 0.0), np.maximum(-y, 0.0)
        drift_amb = self.kappa1 * a * self.sig * np.asarray(x)[:, 0] * np.abs(np.asarray(grad)[:, 0])
        return self.hi * yneg - self.lo * ypos + self.sign * drift_amb + self.kappa2 * np.asarray(k)

    def slant_y(self, control, t, x, y, z, k, grad):
        y = np.asarray(y)
        shape = np.broadcast_shapes(y.shape, np.shape(control)[:-1])
        return np.broadcast_to(np.where(y >= 0, -self.lo, -self.hi), shape).copy()

    def f0(self, control, t, x):
        return np.zeros(np.broadcast_shapes(np.shape(control)[:-1], (np.shape(x)[0],)))

    def growth(self, s):
        return max(self.r, self.R) * np.asarray(s)


@dataclass(frozen=True)
class InvestmentAmbiguityModel:
    """Parameters of the ambiguity model (defaults are the reference values).

    ``jumps="positive"`` uses the jump size ``a x min(1, |e|)`` for both signs
    of ``e``; ``jumps="symmetric"`` uses ``a x sign(e) min(1, |e|)``.
    """

    scenario: str = "worst"
    b: float = 0.1
    sigma: float = 0.2
    mu_vg: float = 6.0
    r: float = 0.02
    R: float = 0.04
    kappa1: float = 0.2
    kappa2: float = 0.5
    T: float = 1.0
    x0: float = 1.0
    lower: float = 0.0
    upper: float = 2.0
    jumps: str = "positive"
    panels_per_octave: int = 16

    name = "ambiguity"

    def g(self, x):
        return 1.0 - 2.0 * np.exp(-2.0 * np.asarray(x)[:, 0])

    def probe(self) -> tuple:
        return (self.x0,)

    def driver(self) -> AmbiguityDriver:
        return AmbiguityDriver(self.scenario, self.r, self.R, self.kappa1, self.kappa2,
                               self.sigma, self.upper)

    def build(self, config: SchemeConfig) -> Problem:
        lower = config.lower[0] if config.lower else self.lower
        upper = config.upper[0] if config.upper else self.upper
        grid = UniformGrid.from_spacing([lower], [upper], config.h)
        exterior = lambda t, x: self.g(x)
        boundary = Boundary.uniform(grid, "exterior", exterior)
        if self.jumps not in ("positive", "symmetric"):
            raise ValueError("jumps must be 'positive' or 'symmetric'")
        signed = self.jumps == "symmetric"
        sig, b = self.sigma, self.b

        def sigma_fn(t, x, a):
            return (a[:, 0] * sig * x[:, 0])[:, None, None]

        def drift_fn(t, x, a):
            return (a[:, 0] * b * x[:, 0])[:, None]

        def eta_fn(t, x, e, a):
            size = np.minimum(1.0, np.abs(e))
            if signed:
                size = np.sign(e) * size
            return ((a[:, 0] * x[:, 0])[:, None] * size[None, :])[..., None]

        def gamma_fn(t, x, e, a):
            return np.broadcast_to(np.minimum(1.0, np.abs(e))[None, :], (x.shape[0], e.size))

        m = m_positive if self.scenario == "best" else m_negative
        T = config.T if config.T is not None else self.T
        return Problem(
            name=f"{self.name}-{self.scenario}", grid=grid, boundary=boundary,
            controls=ControlGrid.interval(0.0, 1.0, config.h_eps), driver=self.driver(),
            obstacle=ObstacleSpec(self.g, lambda t, x: self.g(x)), T=T,
            sigma=sigma_fn, drift=drift_fn,
            measure=variance_gamma(self.mu_vg, panels_per_octave=self.panels_per_octave),
            jump_map=eta_fn, jump_weight=gamma_fn, m=m, m_lipschitz=1.0, backend="upwind",
            params=dataclasses.asdict(self))


# ---------------------------------------------------------------------------
# Epstein--Zin consumption--portfolio

class EpsteinZinDriver(Driver):
    """``f(c x, y) = A (1-gamma) y [ (c x / ((1-gamma) y)^{1/(1-gamma)})^q - 1 ]``

    with ``A = delta / (1 - 1/psi)`` and ``q = 1 - 1/psi``; defined for
    ``(1 - gamma) y > 0``.
    """

    uses_z = False

    def __init__(self, gamma: float, psi: float, delta: float):
        self.gamma, self.psi, self.delta = gamma, psi, delta
        self.q = 1.0 - 1.0 / psi
        self.A = delta / self.q
        self.s = 1.0 - gamma
        # d_y f = A s [(1 - q/s) P - 1] with P = (c x)^q w^{-q/s} ranging over [0, inf)
        coef = self.A * self.s * (1.0 - self.q / self.s)
        if coef > 0:
            raise ValueError("driver is not one-sided Lipschitz for these parameters")
        self.mu = -self.A * self.s
        self.lipschitz = 0.0
        self.k_lipschitz = 0.0

    def _parts(self, control, x, y):
        cx = np.asarray(control)[..., 1] * np.asarray(x)[:, 0]
        w = self.s * np.asarray(y)
        if np.any(w <= 0):
            raise DriverDomainError("Epstein-Zin driver needs (1 - gamma) y > 0")
        P = cx ** self.q * w ** (-self.q / self.s)
        return w, P

    def value(self, control, t, x, y, z, k, grad):
        w, P = self._parts(control, x, y)
        return self.A * w * (P - 1.0)

    def slant_y(self, control, t, x, y, z, k, grad):
        w, P = self._parts(control, x, y)
        return self.A * self.s * ((1.0 - self.q / self.s) * P - 1.0)

    def f0(self, control, t, x):
        # limit y -> 0 inside the admissible range
        return np.zeros(np.broadcast_shapes(np.shape(control)[:-1], (np.shape(x)[0],)))

    def growth(self, s, cx_max: float = 2.0):
        s = np.asarray(s, dtype=float)
        return self.A * abs(self.s) * s * (1.0 + (cx_max * abs(self.s) * s) ** self.q)


@dataclass(frozen=True)
class EpsteinZinModel:
    """Parameters of the Epstein--Zin model (defaults are the reference values).

    ``rho_corr`` is the Brownian correlation; the scheme's penalty is unrelated.
    """

    gamma: float = 2.0
    psi: float = 1.5
    delta: float = 0.08
    r: float = 0.05
    rho_corr: float = -0.5
    lam: float = 0.5
    beta: float = 0.25
    kappa: float = 5.0
    vartheta: float = 0.1125
    x0: float = 1.0
    v0: float = 0.02
    T: float = 0.5
    x_max: float = 2.0
    v_max: float = 0.05

    name = "epstein-zin"

    def g(self, x):
        return -np.exp(-0.5 * np.asarray(x)[:, 0])

    def probe(self) -> tuple:
        return (self.x0, self.v0)

    def driver(self) -> EpsteinZinDriver:
        return EpsteinZinDriver(self.gamma, self.psi, self.delta)

    def build(self, config: SchemeConfig) -> Problem:
        lower = tuple(config.lower) if config.lower else (0.0, 0.0)
        upper = tuple(config.upper) if config.upper else (self.x_max, self.v_max)
        grid = UniformGrid.from_spacing(lower, upper, config.h)
        boundary = Boundary(grid, [
            BoundaryRule("equation", 0, 0), BoundaryRule("neumann", 0, 1),
            BoundaryRule("equation", 1, 0), BoundaryRule("neumann", 1, 1)])
        rc, beta, lam, r = self.rho_corr, self.beta, self.lam, self.r
        kap, vth = self.kappa, self.vartheta

        def sigma_fn(t, x, a):
            sv = np.sqrt(np.maximum(x[:, 1], 0.0))
            out = np.zeros((x.shape[0], 2, 2))
            out[:, 0, 0] = a[:, 0] * x[:, 0] * sv
            out[:, 1, 0] = beta * rc * sv
            out[:, 1, 1] = beta * np.sqrt(1.0 - rc ** 2) * sv
            return out

        def drift_fn(t, x, a):
            pi, c = a[:, 0], a[:, 1]
            return np.stack([x[:, 0] * (r + pi * lam * x[:, 1] - (1.0 + r) * c),
                             vth - kap * x[:, 1]], axis=1)

        T = config.T if config.T is not None else self.T
        return Problem(
            name=self.name, grid=grid, boundary=boundary,
            controls=ControlGrid.simplex(config.h_eps, 2), driver=self.driver(),
            obstacle=ObstacleSpec(self.g, None), T=T, sigma=sigma_fn, drift=drift_fn,
            backend="semilagrangian", params=dataclasses.asdict(self))


MODELS = {"ambiguity": InvestmentAmbiguityModel, "epstein-zin": EpsteinZinModel}


def build_problem(model, config: SchemeConfig) -> Problem:
    """Assemble the problem bundle of ``model`` on the grid described by ``config``."""
    return model.build(config)
