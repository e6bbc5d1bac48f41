"""Force-estimation methods and the low-pass filter they use.

Each method is described by an immutable spec and instantiated once per run
as a stateful :class:`Estimator`. The engine pushes the follower/plant state
to the estimator after every environment update and asks for a new estimate
only on the estimator's own ticks; between ticks the last estimate is held.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Any, Union

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class LowPass2:
    """Causal second-order Butterworth low-pass (bilinear, pre-warped)."""

    def __init__(self, cutoff: float, sample_rate: float):
        if not 0 < cutoff < sample_rate / 2:
            raise ConfigError(
                f"cutoff {cutoff} Hz must lie in (0, {sample_rate / 2}) for rate {sample_rate} Hz")
        self.cutoff = cutoff
        self.sample_rate = sample_rate
        K = math.tan(math.pi * cutoff / sample_rate)
        norm = 1.0 / (1.0 + math.sqrt(2.0) * K + K * K)
        b0 = K * K * norm
        self.b = (b0, 2.0 * b0, b0)
        self.a = (1.0, 2.0 * (K * K - 1.0) * norm, (1.0 - math.sqrt(2.0) * K + K * K) * norm)
        self.z1 = 0.0
        self.z2 = 0.0

    def reset(self, value: float = 0.0):
        """Put the filter at steady state for a constant input ``value``."""
        b0, b1, b2 = self.b
        _, a1, a2 = self.a
        self.z1 = value * (1.0 - b0)
        self.z2 = value * (b2 - a2)

    def step(self, u: float) -> float:
        b0, b1, b2 = self.b
        _, a1, a2 = self.a
        y = b0 * u + self.z1
        self.z1 = b1 * u - a1 * y + self.z2
        self.z2 = b2 * u - a2 * y
        return y

    def filter(self, u) -> np.ndarray:
        return np.array([self.step(float(v)) for v in np.asarray(u, dtype=float)])


def lowpass_step(f: LowPass2, u: float) -> float:
    return f.step(u)


def lowpass(u, cutoff: float, sample_rate: float) -> np.ndarray:
    """Filter a whole series from rest."""
    return LowPass2(cutoff, sample_rate).filter(u)


@dataclass(frozen=True)
class GroundTruth:
    noise_sd: float = 0.0
    rate: float = 1000.0
    name: str = "fs"


@dataclass(frozen=True)
class DynamicSurrogate:
    cutoff: float = 1.0
    bias: float = 0.0
    torque_noise_sd: float = 0.0
    rate: float = 400.0
    name: str = "d"

    def __post_init__(self):
        if not self.rate > 0:
            raise ConfigError("estimator rate must be positive")
        if not 0 < self.cutoff < self.rate / 2:
            raise ConfigError("cutoff must lie strictly between 0 and the Nyquist frequency")
        if self.torque_noise_sd < 0:
            raise ConfigError("torque_noise_sd must be non-negative")


@dataclass(frozen=True)
class Behavioral:
    gain: float = 1.0
    bias: float = 0.0
    latency: float = 0.0
    saturation_force: float = math.inf
    velocity_overshoot_gain: float = 0.0
    hysteresis_offset: float = 0.0
    noise_sd: float = 0.0
    rate: float = 60.0
    name: str = "behavioral"

    def __post_init__(self):
        if not self.gain > 0:
            raise ConfigError("behavioral gain must be positive")
        if self.latency < 0:
            raise ConfigError("latency must be non-negative")
        if not self.rate > 0:
            raise ConfigError("estimator rate must be positive")


@dataclass(frozen=True)
class Neural:
    model: Any = None
    features: tuple[str, ...] = ("psm_position", "psm_velocity")
    latency: float = 0.03
    rate: float = 60.0
    name: str = "neural"


EstimatorSpec = Union[GroundTruth, DynamicSurrogate, Behavioral, Neural]

# Signals a neural estimator may consume. Everything except ``F_true``.
FEATURE_NAMES = ("psm_position", "psm_velocity", "master_force", "master_position",
                 "master_velocity", "prev_estimate")


@dataclass(frozen=True)
class EstimatorInputs:
    t: float
    psm_position: float
    psm_velocity: float
    displacement: float
    F_true: float
    master_force: float
    master_position: float
    master_velocity: float


class Estimator:
    """Runtime state for one estimator spec within one run."""

    def __init__(self, spec: EstimatorSpec, rng: np.random.Generator | None = None):
        validate_rate(spec.rate)
        self.spec = spec
        self.rate = spec.rate
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.latency = getattr(spec, "latency", 0.0)
        self._hist: deque[EstimatorInputs] = deque()
        self.last = 0.0
        self._lp = None
        if isinstance(spec, DynamicSurrogate):
            self._lp = LowPass2(spec.cutoff, spec.rate)
        if isinstance(spec, Neural):
            if spec.model is None:
                raise ConfigError("neural estimator has no trained model loaded")
            if len(spec.features) != spec.model.n_inputs:
                raise ConfigError(
                    f"model expects {spec.model.n_inputs} features, spec lists {len(spec.features)}")
            unknown = set(spec.features) - set(FEATURE_NAMES)
            if unknown:
                raise ConfigError(f"unknown neural features {sorted(unknown)}")

    def push(self, inputs: EstimatorInputs):
        """Record the latest environment state (called after every follower update)."""
        self._hist.append(inputs)
        horizon = inputs.t - self.latency - 1e-9
        # keep the newest sample at or before the delayed time, drop older ones
        while len(self._hist) > 1 and self._hist[1].t <= horizon:
            self._hist.popleft()

    def _delayed(self, t: float) -> EstimatorInputs:
        if not self._hist:
            raise RuntimeError("estimator queried before any state was pushed")
        if self.latency <= 0.0:
            return self._hist[-1]
        target = t - self.latency + 1e-9
        best = self._hist[0]
        for s in self._hist:
            if s.t <= target:
                best = s
            else:
                break
        return best

    def estimate(self, t: float) -> float:
        spec = self.spec
        cur = self._hist[-1] if self._hist else None
        if cur is None:
            raise RuntimeError("estimator queried before any state was pushed")
        if isinstance(spec, GroundTruth):
            F = cur.F_true
            if spec.noise_sd > 0:
                F += spec.noise_sd * self.rng.standard_normal()
        elif isinstance(spec, DynamicSurrogate):
            raw = cur.F_true
            if spec.torque_noise_sd > 0:
                raw += spec.torque_noise_sd * self.rng.standard_normal()
            F = self._lp.step(raw) + spec.bias
        elif isinstance(spec, Behavioral):
            F = behavioral_force(spec, self._delayed(t), cur)
            if spec.noise_sd > 0:
                F += spec.noise_sd * self.rng.standard_normal()
        elif isinstance(spec, Neural):
            s = self._delayed(t)
            row = [self.last if name == "prev_estimate" else getattr(s, name)
                   for name in spec.features]
            F = float(spec.model.predict(np.asarray(row, dtype=float)[None, :])[0])
        else:
            raise TypeError(f"unsupported estimator spec {type(spec).__name__}")
        self.last = F
        return F


def behavioral_force(spec: Behavioral, delayed: EstimatorInputs, cur: EstimatorInputs) -> float:
    """Distorted copy of the true force.

    ``gain * F_true(t - latency) + bias + overshoot * psm_velocity``, clamped to
    the saturation force, then pushed further from zero while unloading.
    """
    F = spec.gain * delayed.F_true
    if spec.bias:
        F += spec.bias
    if spec.velocity_overshoot_gain:
        F += spec.velocity_overshoot_gain * cur.psm_velocity
    if F > spec.saturation_force:
        F = spec.saturation_force
    elif F < -spec.saturation_force:
        F = -spec.saturation_force
    if spec.hysteresis_offset and cur.displacement * cur.psm_velocity < 0:
        F += math.copysign(spec.hysteresis_offset, cur.displacement)
    return F


def estimate(est: Estimator, inputs: EstimatorInputs) -> float:
    """Push ``inputs`` and return a fresh estimate at ``inputs.t``."""
    est.push(inputs)
    return est.estimate(inputs.t)


def validate_rate(rate: float):
    if not rate > 0:
        raise ConfigError(f"estimator rate must be positive, got {rate}")


# Desk-scale analogs of the five methods compared in the study, plus a
# deliberately destabilising preset used for the instability checks.
PRESETS: dict[str, EstimatorSpec] = {
    "fs": GroundTruth(noise_sd=0.0, rate=1000.0, name="fs"),
    "d": DynamicSurrogate(cutoff=1.0, bias=0.0, torque_noise_sd=0.3, rate=400.0, name="d"),
    "v": Behavioral(gain=0.9, bias=0.15, latency=0.033, saturation_force=2.0,
                    hysteresis_offset=0.1, rate=60.0, name="v"),
    "s": Behavioral(gain=1.15, latency=0.004, velocity_overshoot_gain=4.0, rate=500.0, name="s"),
    "vs": Behavioral(gain=1.05, bias=-0.1, latency=0.04, velocity_overshoot_gain=2.0,
                     rate=60.0, name="vs"),
    "unstable": Behavioral(gain=1.1, latency=0.045, velocity_overshoot_gain=2.0,
                           saturation_force=4.0, rate=60.0, name="unstable"),
}


def preset(name: str) -> EstimatorSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown estimator preset {name!r}; known: {sorted(PRESETS)}") from None


def spec_from_dict(d: dict) -> EstimatorSpec:
    """Build a spec from a config entry ``{"type": ..., **params}``."""
    d = dict(d)
    kind = d.pop("type")
    classes = {"ground_truth": GroundTruth, "dynamic": DynamicSurrogate,
               "behavioral": Behavioral}
    if kind not in classes:
        raise ConfigError(f"unknown estimator type {kind!r}")
    if "saturation_force" in d and d["saturation_force"] is None:
        d["saturation_force"] = math.inf
    return classes[kind](**d)


def spec_to_dict(spec: EstimatorSpec) -> dict:
    names = {GroundTruth: "ground_truth", DynamicSurrogate: "dynamic", Behavioral: "behavioral",
             Neural: "neural"}
    out: dict = {"type": names[type(spec)]}
    for k, v in spec.__dict__.items():
        if k == "model":
            continue
        if isinstance(v, float) and math.isinf(v):
            v = None
        out[k] = list(v) if isinstance(v, tuple) else v
    return out
