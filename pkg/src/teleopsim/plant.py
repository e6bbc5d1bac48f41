"""Combined human hand + surgeon-side manipulandum as a 1-DOF mass.

Sign convention used throughout the package: ``F_feedback`` is the force
displayed to the hand and opposes positive displacement, so the plant obeys
``F_c - F_feedback = m * xdd``. The same convention defines port power
``F_feedback * xd`` in the passivity observer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .trajectory import DesiredState


class DivergenceError(RuntimeError):
    """Raised when a state leaves the finite or configured bounds."""


@dataclass(frozen=True)
class HumanSsmParams:
    m: float = 0.750
    b: float = 6.45
    k: float = 135.0
    k_v: float = 20.0

    def __post_init__(self):
        for name in ("m", "b", "k", "k_v"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def natural_frequency(self) -> float:
        """Undamped natural frequency in rad/s for a hold (no k_v)."""
        return math.sqrt(self.k / self.m)

    @property
    def damping_ratio(self) -> float:
        return self.b / (2.0 * math.sqrt(self.k * self.m))

    @property
    def damped_frequency_hz(self) -> float:
        z = self.damping_ratio
        return self.natural_frequency * math.sqrt(1.0 - z * z) / (2.0 * math.pi)


@dataclass(frozen=True)
class PlantState:
    x: float = 0.0
    xd: float = 0.0


def tracking_force(state: PlantState, des: DesiredState, p: HumanSsmParams) -> float:
    """Human tracking force; the velocity-tracking term only acts while moving."""
    f = -p.b * state.xd + p.k * (des.x_des - state.x)
    if des.moving:
        f += p.k_v * (des.xd_des - state.xd)
    return f


def step(state: PlantState, F_c: float, F_feedback_total: float, dt: float,
         p: HumanSsmParams) -> PlantState:
    """One semi-implicit Euler step: velocity first, then position."""
    xd = state.xd + dt * (F_c - F_feedback_total) / p.m
    x = state.x + dt * xd
    if not (math.isfinite(x) and math.isfinite(xd)):
        raise DivergenceError(f"non-finite plant state x={x}, xd={xd}")
    return PlantState(x, xd)
