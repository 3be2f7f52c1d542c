"""Built-in problems with reference solutions, and a classical RK4 oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate, optimize, special

from .codes import AUTONOMOUS, CUSTOM, SINGLE_TREE, Branch, Code, MechanismTable, autonomize
from .densities import LifetimeDensity
from .expr import RhsSystem, parse, var


@dataclass
class Problem:
    name: str
    system: RhsSystem
    mode: str
    density: LifetimeDensity
    window: tuple[float, float]
    grid_per_patch: int = 10
    patches: int = 1
    N: int = 1_000_000
    exact: Callable[[float], np.ndarray] | None = None
    validity_end: float | None = None  # declared end of the trusted window
    description: str = ""
    clip: str = "off"
    custom_entries: dict | None = field(default=None, repr=False)

    def mechanism(self) -> MechanismTable:
        if self.mode == CUSTOM:
            return MechanismTable.custom(self.system.dimension, self.custom_entries)
        if self.mode == SINGLE_TREE:
            return MechanismTable.single_tree(self.system.time_axis or 0)
        return MechanismTable.autonomous(self.system.dimension)

    def exact_at(self, t: float) -> np.ndarray | None:
        return None if self.exact is None else np.asarray(self.exact(float(t)), dtype=float)

    def with_mode(self, mode: str) -> "Problem":
        if mode == SINGLE_TREE and self.system.time_axis is None:
            raise ValueError(f"{self.name} has no time axis; the single-tree mechanism does not apply")
        return replace(self, mode=mode)


def _quadratic_exact(t, y0=1.0):
    return np.array([y0 / (1.0 - y0 * t)])


def _cosine_exact(t, y0=1.0):
    return np.array([2.0 * math.atan(math.tanh((t + 2.0 * math.atanh(math.tan(y0 / 2.0))) / 2.0))])


def _ode201a_exact(t):
    return np.array([t, t + math.sqrt(1.0 + 2.0 * t * t)])


def ode316e_point(t: float) -> float:
    """y(t) for y' = (y - t)/(y + t), y(0) = 1, from the parametric solution
    t = u sin(log u), y = u cos(log u)."""
    if t == 0:
        return 1.0
    # t(u) increases on [1, e^{3 pi/4})
    u = optimize.brentq(lambda u: u * math.sin(math.log(u)) - t, 1.0, math.exp(0.75 * math.pi), xtol=1e-15, rtol=1e-15)
    return u * math.cos(math.log(u))


def _ode316e_exact(t):
    return np.array([t, ode316e_point(t)])


def integral_exp_half_square(t: float) -> float:
    """int_0^t exp(s^2/2) ds by adaptive quadrature."""
    val, _ = integrate.quad(lambda s: math.exp(0.5 * s * s), 0.0, t, epsabs=0.0, epsrel=1e-13, limit=200)
    return val


def integral_exp_half_square_erfi(t: float) -> float:
    return math.sqrt(math.pi / 2.0) * float(special.erfi(t / math.sqrt(2.0)))


def _ode223a_exact(t):
    return np.array([t, math.exp(0.5 * t * t) / (2.0 - integral_exp_half_square(t))])


def _system316f_exact(t):
    return np.array([t * math.sin(math.log(t)), t * math.cos(math.log(t))])


def _exponential_exact(t):
    return np.array([math.exp(t)])


def exponential_entries() -> dict:
    """Code set {Id} with Id -> (Id): H is deterministic."""
    return {Code.identity(0): [Branch((Code.identity(0),))]}


def _build(name: str) -> Problem:
    exp1 = LifetimeDensity.exponential(1.0)
    gam = LifetimeDensity.gamma_half()
    if name == "exponential":
        sys = RhsSystem([var(0)], [1.0], name=name)
        return Problem(name, sys, CUSTOM, exp1, (0.0, 2.0), 4, 1, 10_000, _exponential_exact, None,
                       "y' = y with the single-code mechanism Id -> (Id); every sample is y0 e^t",
                       custom_entries=exponential_entries())
    if name == "quadratic":
        sys = RhsSystem([parse("y0^2", 1)], [1.0], name=name)
        return Problem(name, sys, AUTONOMOUS, exp1, (0.0, 0.45), 9, 1, 1_000_000, _quadratic_exact, 0.5,
                       "y' = y^2, y(0) = 1")
    if name == "cosine":
        sys = RhsSystem([parse("cos(y0)", 1)], [1.0], name=name)
        return Problem(name, sys, AUTONOMOUS, exp1, (0.0, 0.9), 9, 1, 1_000_000, _cosine_exact, 1.0,
                       "y' = cos(y), y(0) = 1")
    if name == "ode201a":
        sys = autonomize(parse("(y1 + y0)/(y1 - y0)", 2), 1.0, 0.0, name=name)
        return Problem(name, sys, AUTONOMOUS, exp1, (0.0, 0.25), 5, 1, 1_000_000, _ode201a_exact, 0.25,
                       "y' = (y + t)/(y - t), y(0) = 1")
    if name == "ode316e":
        sys = autonomize(parse("(y1 - y0)/(y1 + y0)", 2), 1.0, 0.0, name=name)
        return Problem(name, sys, AUTONOMOUS, gam, (0.0, 0.25), 5, 1, 1_000_000, _ode316e_exact, 0.25,
                       "y' = (y - t)/(y + t), y(0) = 1 (parametric solution)")
    if name == "ode223a":
        sys = autonomize(parse("y0*y1 + y1^2", 2), 0.5, 0.0, name=name)
        return Problem(name, sys, AUTONOMOUS, gam, (0.0, 1.0), 5, 2, 1_000_000, _ode223a_exact, 1.0,
                       "y' = t y + y^2, y(0) = 1/2, patched twice")
    if name == "system316f":
        comps = [parse("(y0 + y1)/sqrt(y0^2 + y1^2)", 2), parse("(y1 - y0)/sqrt(y0^2 + y1^2)", 2)]
        sys = RhsSystem(comps, [0.0, 1.0], t0=1.0, name=name)
        return Problem(name, sys, AUTONOMOUS, exp1, (1.0, 4.0), 2, 6, 1_000_000, _system316f_exact, 4.0,
                       "2D system with solution (t sin log t, t cos log t), patched 6 times on [1, 4]")
    raise KeyError(f"unknown problem {name!r}; known: {', '.join(PROBLEMS)}")


PROBLEMS = ("exponential", "quadratic", "cosine", "ode201a", "ode316e", "ode223a", "system316f")
NONAUTONOMOUS = ("ode201a", "ode316e", "ode223a")


def builtin_problem(name: str) -> Problem:
    return _build(name)


def rk_oracle(sys: RhsSystem, t: float, h: float) -> np.ndarray:
    """Classical RK4 from (sys.t0, sys.y0) to absolute time t with step <= h."""
    if not h > 0:
        raise ValueError("step must be positive")
    span = float(t) - sys.t0
    y = np.array(sys.y0, dtype=float)
    if span == 0:
        return y
    n = max(1, math.ceil(abs(span) / h - 1e-9))
    dt = span / n
    f = sys.rhs
    for _ in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y
