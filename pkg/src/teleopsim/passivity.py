"""Windowed passivity observer and variable-damping passivity controller.

Port energy increments are ``F_feedback * xd * dt``; a positive window sum
means the environment side absorbed energy. When the window goes negative
the controller adds a damping force ``alpha * xd`` that dissipates exactly
the observed deficit, with ``alpha`` clamped to ``d_max``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass


@dataclass(frozen=True)
class PoPcConfig:
    d_max: float = 250.0
    v_epsilon: float = 1e-6
    rate: float = 1000.0
    window: int = 10

    def __post_init__(self):
        if not self.d_max > 0 or not self.v_epsilon > 0:
            raise ValueError("d_max and v_epsilon must be positive")
        if self.window < 1:
            raise ValueError("window must hold at least one sample")


class PassivityWindow:
    """Ring buffer of the last ``k`` energy increments."""

    def __init__(self, k: int = 10):
        self.k = k
        self._buf: deque[float] = deque(maxlen=k)

    def __len__(self):
        return len(self._buf)

    @property
    def energy(self) -> float:
        return sum(self._buf)

    def reset(self):
        self._buf.clear()


def observe(w: PassivityWindow, F_feedback: float, xd: float, dt: float) -> float:
    w._buf.append(F_feedback * xd * dt)
    return w.energy


def damping(E_win: float, xd: float, dt: float, cfg: PoPcConfig) -> float:
    """Clamped variable damping ``alpha`` (0 when the port is passive)."""
    if E_win >= 0.0 or abs(xd) < cfg.v_epsilon:
        return 0.0
    return min(-E_win / (xd * xd * dt), cfg.d_max)


def control(E_win: float, xd: float, dt: float, cfg: PoPcConfig) -> float:
    return xd * damping(E_win, xd, dt, cfg)


class PassivityModule:
    """Observer + controller pair owned by one run."""

    def __init__(self, cfg: PoPcConfig):
        self.cfg = cfg
        self.window = PassivityWindow(cfg.window)
        self.dt = 1.0 / cfg.rate
        self.E_win = 0.0
        self.alpha = 0.0
        self.F_passive = 0.0

    def update(self, F_feedback: float, xd: float) -> float:
        self.E_win = observe(self.window, F_feedback, xd, self.dt)
        self.alpha = damping(self.E_win, xd, self.dt, self.cfg)
        self.F_passive = xd * self.alpha
        return self.F_passive
