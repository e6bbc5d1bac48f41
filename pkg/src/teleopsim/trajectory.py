"""Minimum-jerk segments and the movement protocols built from them.

A protocol is an ordered, time-contiguous list of segments. Holds are
segments whose start and end positions coincide. Closed-loop protocols are
expressed on the master (hand) side; open-loop protocols are expressed
directly as PSM tissue displacement.
"""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

AXES = ("x", "y", "z")
OPEN_LOOP_KINDS = ("palpation", "retraction")


@dataclass(frozen=True)
class MinJerkSegment:
    x0: float
    xf: float
    T: float
    t_start: float = 0.0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"segment duration must be positive, got {self.T}")
        if not (np.isfinite(self.x0) and np.isfinite(self.xf)):
            raise ValueError("segment endpoints must be finite")

    @property
    def t_end(self) -> float:
        return self.t_start + self.T

    @property
    def is_hold(self) -> bool:
        return self.xf == self.x0


@dataclass(frozen=True)
class DesiredState:
    x_des: float
    xd_des: float
    moving: bool


@dataclass(frozen=True)
class TrajectoryProtocol:
    """Ordered segments plus the metadata the environment needs.

    ``frame`` is ``"master"`` for protocols commanded to the human-SSM model
    and ``"psm"`` for open-loop protocols commanded straight to the follower.
    ``pretension`` is the z pre-tension in newtons applied before x/y
    closed-loop manipulations.
    """

    segments: tuple[MinJerkSegment, ...]
    kind: str
    axis: str = "z"
    pretension: float = 0.0
    frame: str = "master"
    cycle_period: float | None = None
    _starts: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.segments:
            raise ValueError("protocol needs at least one segment")
        for a, b in zip(self.segments, self.segments[1:]):
            if abs(a.t_end - b.t_start) > 1e-12:
                raise ValueError("segments must be contiguous in time")
            if a.xf != b.x0:
                raise ValueError("segments must be contiguous in position")
        object.__setattr__(self, "_starts", tuple(s.t_start for s in self.segments))

    @property
    def duration(self) -> float:
        return self.segments[-1].t_end

    @property
    def start_position(self) -> float:
        return self.segments[0].x0

    @property
    def peak_velocity(self) -> float:
        """Largest commanded speed over the protocol (at segment midpoints)."""
        return max(1.875 * abs(s.xf - s.x0) / s.T for s in self.segments)

    def commanded_holds(self) -> list[tuple[float, float]]:
        """Hold segments bounded by movements on both sides."""
        out = []
        segs = self.segments
        for i, s in enumerate(segs):
            if s.is_hold and 0 < i < len(segs) - 1:
                out.append((s.t_start, s.t_end))
        return out


def _chain(levels_and_durations: Iterable[tuple[float, float]], x_start: float = 0.0,
           t_start: float = 0.0) -> tuple[MinJerkSegment, ...]:
    segs = []
    x, t = x_start, t_start
    for xf, T in levels_and_durations:
        segs.append(MinJerkSegment(x, xf, T, t))
        x, t = xf, t + T
    return tuple(segs)


def min_jerk_eval(seg: MinJerkSegment, t: float) -> tuple[float, float]:
    """Position and velocity of a minimum-jerk segment at time ``t``.

    Times outside ``[t_start, t_start + T]`` are clamped to the nearest
    endpoint, so the returned velocity there is zero.
    """
    tau = (t - seg.t_start) / seg.T
    if tau <= 0.0:
        return seg.x0, 0.0
    if tau >= 1.0:
        return seg.xf, 0.0
    dx = seg.xf - seg.x0
    t2 = tau * tau
    t3 = t2 * tau
    pos = seg.x0 + dx * t3 * (10.0 - 15.0 * tau + 6.0 * t2)
    vel = dx / seg.T * 30.0 * t2 * (1.0 - tau) ** 2
    return pos, vel


def build_open_loop(kind: str, cycles: int = 3, move_time: float = 1.0,
                    peak_hold: float = 1.0, settle: float = 2.0) -> TrajectoryProtocol:
    """PSM-frame palpation or retraction protocol.

    Each cycle loads for ``move_time``, holds the peak, unloads and then
    settles at the neutral position. Palpation compresses to -10 mm,
    retraction pulls to +15 mm.
    """
    if kind == "palpation":
        peak = -0.010
    elif kind == "retraction":
        peak = 0.015
    else:
        raise ValueError(f"unknown open-loop kind {kind!r}; expected one of {OPEN_LOOP_KINDS}")
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    plan = []
    for _ in range(cycles):
        plan += [(peak, move_time), (peak, peak_hold), (0.0, move_time), (0.0, settle)]
    return TrajectoryProtocol(
        segments=_chain(plan), kind=kind, axis="z", frame="psm",
        cycle_period=2 * move_time + peak_hold + settle,
    )


def build_closed_loop(axis: str, amplitude: float = 0.075, hold: float = 2.0,
                      lead_in: float = 0.5, tail: float = 2.0,
                      pretension: float = 1.0) -> TrajectoryProtocol:
    """Master-side closed-loop manipulation sequence for one Cartesian axis.

    Moves +A in 1 s, -2A in 2 s, +2A in 2 s, -2A in 2 s and +A in 1 s back to
    the start, holding ``hold`` seconds between moves. ``lead_in`` and
    ``tail`` are stationary pre- and post-roll around the sequence. The x and
    y axes carry ``pretension`` as metadata; z carries none.
    """
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis!r}")
    a = amplitude
    moves = [(a, 1.0), (-a, 2.0), (a, 2.0), (-a, 2.0), (0.0, 1.0)]
    plan = []
    if lead_in > 0:
        plan.append((0.0, lead_in))
    for i, (xf, T) in enumerate(moves):
        plan.append((xf, T))
        if i < len(moves) - 1:
            plan.append((xf, hold))
    if tail > 0:
        plan.append((0.0, tail))
    return TrajectoryProtocol(
        segments=_chain(plan), kind=f"closed_loop_{axis}", axis=axis,
        pretension=pretension if axis in ("x", "y") else 0.0,
    )


def build_demo_protocol(duration: float = 35.0) -> TrajectoryProtocol:
    """Scripted stand-in for a free teleoperation demo.

    A mix of slow movements with holds and brief fast palpations and
    retractions, master side, total length ``duration``.
    """
    plan = [
        (0.0, 0.5),
        (-0.050, 0.6), (0.0, 0.6), (0.0, 1.3),      # fast palpation
        (0.060, 2.0), (0.060, 2.5), (0.0, 2.0), (0.0, 1.5),   # slow retraction + hold
        (-0.060, 2.0), (-0.060, 2.5), (0.0, 2.0), (0.0, 1.5),  # slow palpation + hold
        (0.050, 0.5), (0.0, 0.5), (0.0, 1.0),        # fast retraction
        (-0.040, 0.5), (0.0, 0.5), (0.0, 1.0),       # fast palpation
        (0.075, 2.5), (0.075, 3.0), (0.0, 2.5),      # slow, large retraction
    ]
    used = sum(T for _, T in plan)
    if duration <= used:
        raise ValueError(f"demo script needs more than {used} s")
    plan.append((0.0, duration - used))
    return TrajectoryProtocol(segments=_chain(plan), kind="demo", axis="z")


def build_brief_protocol(axis: str = "z", scale: float = 1.0) -> TrajectoryProtocol:
    """Brief palpations and retractions without long holds (master side, 14.5 s).

    Used to collect the original training data for the neural estimator.
    ``scale`` multiplies every target so repetitions can differ in amplitude.
    """
    plan = [
        (0.0, 0.5), (-0.050, 0.8), (0.0, 0.8), (0.0, 0.4),
        (0.060, 0.8), (0.0, 0.8), (0.0, 0.4),
        (-0.075, 1.0), (-0.075, 0.5), (0.0, 1.0), (0.0, 0.4),
        (0.075, 1.0), (0.075, 0.5), (0.0, 1.0), (0.0, 0.5),
        (-0.030, 0.5), (0.0, 0.5), (0.030, 0.5), (0.0, 0.5), (0.0, 0.5),
    ]
    plan = [(scale * x, T) for x, T in plan]
    return TrajectoryProtocol(segments=_chain(plan), kind="brief", axis=axis)


def custom_protocol(moves: Sequence[tuple[float, float]], kind: str = "custom",
                    axis: str = "z", frame: str = "master", pretension: float = 0.0,
                    x_start: float = 0.0) -> TrajectoryProtocol:
    """Protocol from a list of ``(target, duration)`` pairs."""
    return TrajectoryProtocol(segments=_chain(moves, x_start), kind=kind, axis=axis,
                              frame=frame, pretension=pretension)


def sample(protocol: TrajectoryProtocol, t: float) -> DesiredState:
    if t < 0:
        raise ValueError("t must be >= 0")
    segs = protocol.segments
    if t >= protocol.duration:
        return DesiredState(segs[-1].xf, 0.0, False)
    i = max(bisect.bisect_right(protocol._starts, t) - 1, 0)
    seg = segs[i]
    pos, vel = min_jerk_eval(seg, t)
    return DesiredState(pos, vel, not seg.is_hold)


def sample_array(protocol: TrajectoryProtocol, t: np.ndarray):
    """Array form of :func:`sample`: returns ``(x_des, xd_des, moving)`` arrays."""
    states = [sample(protocol, float(ti)) for ti in np.asarray(t)]
    return (np.array([s.x_des for s in states]), np.array([s.xd_des for s in states]),
            np.array([s.moving for s in states]))


def export_csv(protocol: TrajectoryProtocol, path, rate: float = 500.0) -> Path:
    """Write ``t, x_des, xd_des, moving`` sampled at ``rate`` Hz."""
    path = Path(path)
    n = int(round(protocol.duration * rate)) + 1
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x_des", "xd_des", "moving"])
        for i in range(n):
            t = i / rate
            s = sample(protocol, t)
            w.writerow([repr(t), repr(s.x_des), repr(s.xd_des), int(s.moving)])
    return path
