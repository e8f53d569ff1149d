"""Closed-form scenarios used as oracles for the integrator and observables."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import PGState
from .errors import ConfigError, ScenarioRangeError
from .rational import RationalMap

SCENARIOS = ("CardioidUnivalent", "CardioidPG", "CardioidLK", "Sakai", "GrowingDisk")


@dataclass(frozen=True)
class ScenarioTag:
    """Name of a closed-form scenario plus its parameters (``a`` for Sakai and GrowingDisk)."""

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.name!r}")

    @property
    def a(self) -> float:
        return float(self.params.get("a", 1.0))


def lk_coefficients(t: float) -> dict:
    """Coefficients of the continued cardioid after its boundary transition at t=0.

    The map is ``f = -(b1 z + b2 z^2 + b3 z^3) / (z - zeta1)`` with ``b1 = e^t``.
    """
    if t < 0:
        raise ScenarioRangeError("continued cardioid is defined for t >= 0")
    e = math.exp
    b1 = e(t)
    rad = 1 + 2 * e(t) - e(-2 * t)
    zeta1 = math.sqrt(0.5 * rad)
    b2 = -(1 + 2 * e(t) + 3 * e(-2 * t)) * math.sqrt(rad) / (4 * math.sqrt(2))
    b3 = 0.25 * (2 * e(-t) + e(-2 * t) - e(-4 * t))
    Q = (4 * e(2 * t) + 2 * e(t) - 12 + e(-2 * t) + 6 * e(-3 * t) + 2 * e(-4 * t) - 3 * e(-6 * t)) / 16
    q = (4 * e(2 * t) + e(t) - e(-2 * t) - 9 * e(-3 * t) - 4 * e(-4 * t) + 9 * e(-6 * t)) / 8
    return {"b1": b1, "b2": b2, "b3": b3, "zeta1": zeta1, "Q": Q, "q": q}


def _stable_quadratic_roots(p: complex, c: complex) -> tuple[complex, complex]:
    """Roots of ``z^2 + p z + c`` without cancellation."""
    disc = np.sqrt(complex(p * p - 4 * c))
    s = -0.5 * (p + (disc if (np.conj(p) * disc).real >= 0 else -disc))
    r1 = s
    r2 = c / s
    return complex(r1), complex(r2)


def rate(tag: ScenarioTag, t: float) -> float:
    """Injection rate ``q(t)`` of the scenario."""
    e = math.exp
    a = tag.a
    if tag.name == "CardioidUnivalent":
        return e(2 * t) - e(-4 * t)
    if tag.name == "CardioidPG":
        return e(4 * t) - e(-2 * t)
    if tag.name == "CardioidLK":
        return lk_coefficients(max(t, 0.0))["q"]
    if tag.name in ("Sakai", "GrowingDisk"):
        if tag.params.get("smooth_rate") and t < 1:
            return 3 * a * a * t ** 5
        return a * a * t if t < 1 else a * a * t * (4 * t * t - 1)
    raise ConfigError(tag.name)


def injected(tag: ScenarioTag, t: float) -> float:
    """Accumulated injection ``Q(t)`` measured from ``t = 0``."""
    e = math.exp
    a = tag.a
    if tag.name == "CardioidUnivalent":
        return (e(2 * t) - 1) / 2 + (e(-4 * t) - 1) / 4
    if tag.name == "CardioidPG":
        return (e(4 * t) - 1) / 4 + (e(-2 * t) - 1) / 2
    if tag.name == "CardioidLK":
        return lk_coefficients(t)["Q"]
    if t < 1:
        return a * a * t ** 6 / 2 if tag.params.get("smooth_rate") else a * a * t * t / 2
    return a * a / 2 + a * a * (t ** 4 - t * t / 2 - 0.5)


def reference_state(tag: ScenarioTag, t: float) -> tuple[PGState, float]:
    """Closed-form state and injection rate of a scenario at time ``t``."""
    e = math.exp
    a = tag.a
    name = tag.name
    if name == "CardioidUnivalent":
        g = RationalMap(-e(-2 * t), [e(3 * t)])
    elif name == "CardioidPG":
        g = RationalMap(-e(2 * t), [e(-3 * t)])
    elif name == "CardioidLK":
        if t < 0:
            raise ScenarioRangeError("continued cardioid is defined for t >= 0")
        if t == 0:
            g = RationalMap(-1.0, [1.0, 1.0, 1.0], [(1.0, 2)], reduce=False)
        else:
            c = lk_coefficients(t)
            b1, zeta1 = c["b1"], c["zeta1"]
            w2, w3 = _stable_quadratic_roots(-0.5 * (b1 * b1 + 3) * zeta1, b1 ** 3)
            g = RationalMap(-2 * c["b3"], [1 / zeta1, w2, w3], [(zeta1, 2)])
    elif name in ("Sakai", "GrowingDisk"):
        if t <= 0:
            raise ScenarioRangeError("scenario defined for t > 0")
        if t < 1 or (name == "GrowingDisk" and t == 1):
            if name == "Sakai":
                raise ScenarioRangeError("Sakai map is defined for t > 1")
            lead = a * t ** 3 if tag.params.get("smooth_rate") else a * t
            g = RationalMap(lead)
        else:
            g = RationalMap(a * t ** 3, [1 / t, 2 * t - 1 / t], [(t, 2)])
    else:
        raise ConfigError(name)
    return PGState(t=t, g=g, Q=injected(tag, t)), rate(tag, t)


def reference_map(tag: ScenarioTag, t: float, zeta):
    """Closed-form conformal map ``f(zeta, t)`` where one is available."""
    e = math.exp
    z = np.asarray(zeta, dtype=complex)
    a = tag.a
    if tag.name == "CardioidUnivalent":
        return e(t) * z - 0.5 * e(-2 * t) * z * z
    if tag.name == "CardioidPG":
        return e(-t) * z - 0.5 * e(2 * t) * z * z
    if tag.name == "CardioidLK":
        c = lk_coefficients(t)
        return -(c["b1"] * z + c["b2"] * z * z + c["b3"] * z ** 3) / (z - c["zeta1"])
    if t < 1:
        return (a * t ** 3 if tag.params.get("smooth_rate") else a * t) * z
    return a * z * (t ** 3 * z - 2 * t * t + 1) / (z - t)


def reference_schedule(tag: ScenarioTag):
    """``q`` as a callable of time."""
    return lambda t: rate(tag, t)


def reference_coefficients_lk(t: float) -> tuple[float, float, float, float, float, float]:
    """``(zeta1, b1, b2, b3, Q, q)`` of the continued cardioid at time ``t``."""
    c = lk_coefficients(t)
    return c["zeta1"], c["b1"], c["b2"], c["b3"], c["Q"], c["q"]
