"""Branch lifetime densities and their tails."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import _rng

EXPONENTIAL = 0
GAMMA_HALF = 1

_SQRT_PI = math.sqrt(math.pi)
_TWO_PI = 2.0 * math.pi

# variate slots inside a particle's key: 0 is the branch choice
BRANCH_DRAW = 0
LIFETIME_DRAW = 1


@dataclass(frozen=True)
class LifetimeDensity:
    kind: int = EXPONENTIAL
    rate: float = 1.0

    def __post_init__(self):
        if self.kind not in (EXPONENTIAL, GAMMA_HALF):
            raise ValueError(f"unknown density kind {self.kind}")
        if self.kind == EXPONENTIAL and not self.rate > 0:
            raise ValueError("exponential rate must be positive")

    @classmethod
    def exponential(cls, rate: float = 1.0):
        return cls(EXPONENTIAL, float(rate))

    @classmethod
    def gamma_half(cls):
        return cls(GAMMA_HALF, 1.0)

    @classmethod
    def parse(cls, text: str) -> "LifetimeDensity":
        """``exponential``, ``exponential:2.5`` or ``gamma_half``."""
        name, _, arg = text.strip().lower().partition(":")
        if name in ("exponential", "exp"):
            return cls.exponential(float(arg) if arg else 1.0)
        if name in ("gamma_half", "gamma", "gammahalf"):
            return cls.gamma_half()
        raise ValueError(f"unknown density {text!r}")

    @property
    def mean(self) -> float:
        return 1.0 / self.rate if self.kind == EXPONENTIAL else 0.5

    def __str__(self):
        return f"exponential:{self.rate:g}" if self.kind == EXPONENTIAL else "gamma_half"


def density_at(d: LifetimeDensity, t):
    if d.kind == EXPONENTIAL:
        return d.rate * np.exp(-d.rate * np.asarray(t, dtype=float))
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("gamma-1/2 density is infinite at t = 0")
    return np.exp(-t) / (np.sqrt(t) * _SQRT_PI)


def tail_at(d: LifetimeDensity, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("tail is defined for t >= 0")
    if d.kind == EXPONENTIAL:
        return np.exp(-d.rate * t)
    return special.erfc(np.sqrt(t))


def sample_lifetime(d: LifetimeDensity, rng: np.random.Generator, size=None):
    """Draw lifetimes with a numpy Generator (inverse transform / squared normal)."""
    if d.kind == EXPONENTIAL:
        u = 1.0 - rng.random(size)
        return -np.log(u) / d.rate
    z = rng.standard_normal(size)
    tau = 0.5 * z * z
    if size is None:
        while tau == 0.0:
            z = rng.standard_normal()
            tau = 0.5 * z * z
        return float(tau)
    bad = tau == 0.0
    while bad.any():
        z = rng.standard_normal(int(bad.sum()))
        tau[bad] = 0.5 * z * z
        bad = tau == 0.0
    return tau


# scalar helpers mirrored exactly by the compiled kernels


def lifetime_from_key(kind: int, rate: float, key: int) -> float:
    if kind == EXPONENTIAL:
        return -math.log(_rng.uniform(key, LIFETIME_DRAW)) / rate
    j = LIFETIME_DRAW
    while True:
        u1 = _rng.uniform(key, j)
        c = math.cos(_TWO_PI * _rng.uniform(key, j + 1))
        tau = -math.log(u1) * (c * c)
        if tau > 0.0:
            return tau
        j += 2


def inv_density_scalar(kind: int, rate: float, tau: float) -> float:
    """1 / rho(tau)."""
    if kind == EXPONENTIAL:
        return math.exp(rate * tau) / rate
    return math.sqrt(tau) * _SQRT_PI * math.exp(tau)


def tail_scalar(kind: int, rate: float, t: float) -> float:
    if kind == EXPONENTIAL:
        return math.exp(-rate * t)
    return math.erfc(math.sqrt(t))
