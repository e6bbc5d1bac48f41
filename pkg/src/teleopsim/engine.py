"""Deterministic multi-rate simulation of one experiment run.

A single master clock (default 6000 Hz, the least common multiple of the
loop rates) drives every task. Within a tick the order is fixed::

    trajectory sample -> plant step -> follower/tissue update
    -> estimator update -> passivity observer/controller -> log

Tasks fire on tick 0 and then every ``master_rate / rate`` ticks. Only ticks
on which something fires are visited, which keeps the pure-Python loop fast.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import environment as env
from .estimation import ConfigError, Estimator, EstimatorInputs, EstimatorSpec, spec_to_dict
from .passivity import PassivityModule, PoPcConfig
from .plant import DivergenceError, HumanSsmParams, PlantState, step, tracking_force
from .runlog import RunLog
from .trajectory import TrajectoryProtocol, sample

TASKS = ("plant", "estimator", "popc", "log")


@dataclass(frozen=True)
class SimConfig:
    master_rate: int = 6000
    plant_rate: int = 500
    popc_rate: int = 1000
    log_rate: int = 1000
    estimator_rate: float | None = None  # None: use the estimator spec's own rate
    scale: float = 0.2
    seed: int = 0
    popc_enabled: bool = False
    feedback_enabled: bool = True
    duration: float | None = None  # None: protocol duration
    human: HumanSsmParams = field(default_factory=HumanSsmParams)
    popc: PoPcConfig = field(default_factory=PoPcConfig)
    psm_lag_tau: float = 0.0
    x_bound: float = 1.0
    v_bound: float = 20.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigError("scale must be positive")
        if self.duration is not None and not self.duration > 0:
            raise ConfigError("duration must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TickPlan:
    """Firing period, in master ticks, of every scheduled task."""

    master_rate: int
    periods: dict

    def due(self, tick: int) -> tuple[str, ...]:
        return tuple(name for name in TASKS if tick % self.periods[name] == 0)

    def firing_ticks(self, n_ticks: int) -> np.ndarray:
        """Sorted master ticks in ``[0, n_ticks)`` on which any task fires."""
        ticks = [np.arange(0, n_ticks, p) for p in self.periods.values()]
        return np.unique(np.concatenate(ticks))

    def count(self, name: str, n_ticks: int) -> int:
        p = self.periods[name]
        return (n_ticks + p - 1) // p


def _period(master_rate: int, name: str, rate: float) -> int:
    if not rate > 0:
        raise ConfigError(f"{name} rate must be positive")
    q = master_rate / rate
    if abs(q - round(q)) > 1e-9:
        raise ConfigError(
            f"{name} rate {rate} Hz does not divide master rate {master_rate} Hz")
    return int(round(q))


def make_schedule(config: SimConfig, estimator_rate: float | None = None) -> TickPlan:
    est_rate = config.estimator_rate or estimator_rate
    if est_rate is None:
        raise ConfigError("no estimator rate given")
    m = config.master_rate
    periods = {
        "plant": _period(m, "plant", config.plant_rate),
        "estimator": _period(m, "estimator", est_rate),
        "popc": _period(m, "popc", config.popc_rate),
        "log": _period(m, "log", config.log_rate),
    }
    return TickPlan(m, periods)


def _seed_rng(seed: int, stream: str) -> np.random.Generator:
    key = int.from_bytes(hashlib.sha256(stream.encode()).digest()[:4], "little")
    return np.random.default_rng(np.random.SeedSequence([seed, key]))


def run(config: SimConfig, protocol: TrajectoryProtocol, estimator: EstimatorSpec,
        tissue: env.TissueParams, metadata: dict | None = None,
        raise_on_divergence: bool = True) -> RunLog:
    """Simulate one run and return its log.

    Open-loop protocols (``frame == "psm"``) bypass the human model: the
    follower tracks the commanded displacement directly and the estimate is
    logged but never displayed. Closed-loop protocols drive the human-SSM
    plant, whose position is scaled onto the follower.

    On divergence a :class:`plant.DivergenceError` is raised carrying the
    partial log as ``err.log``; with ``raise_on_divergence=False`` the
    partial log is returned with ``log.meta["diverged"]`` set.
    """
    duration = config.duration if config.duration is not None else protocol.duration
    if protocol.duration > duration + 1e-12:
        raise ConfigError(f"protocol lasts {protocol.duration} s but run is {duration} s")
    plan = make_schedule(config, estimator.rate)
    if config.estimator_rate is not None:
        estimator = replace(estimator, rate=config.estimator_rate)
    P = plan.periods
    M = config.master_rate
    n_ticks = int(round(duration * M))
    ticks = plan.firing_ticks(n_ticks)

    open_loop = protocol.frame == "psm"
    scale = 1.0 if open_loop else config.scale
    feedback_on = config.feedback_enabled and not open_loop
    popc_on = config.popc_enabled and not open_loop

    hp = config.human
    dt_plant = 1.0 / config.plant_rate
    psm, tis = env.initialize_grasp(protocol, tissue, config.scale, config.psm_lag_tau)
    rest = tis.rest_position
    est = Estimator(estimator, _seed_rng(config.seed, "estimator"))
    po = PassivityModule(replace(config.popc, rate=config.popc_rate))

    state = PlantState(protocol.start_position, 0.0)
    F_c = 0.0
    F_applied = 0.0
    F_est = 0.0
    F_fb = 0.0
    F_true = 0.0
    des = sample(protocol, 0.0)

    log = RunLog.empty()
    log.meta.update({
        "config_hash": config.digest(), "estimator": estimator.name,
        "estimator_spec": spec_to_dict(estimator), "material": tissue.material_id,
        "protocol": protocol.kind, "axis": protocol.axis, "seed": config.seed,
        "popc": popc_on, "feedback": feedback_on, "open_loop": open_loop,
        "grasp_offset": psm.grasp_offset, "log_rate": config.log_rate,
        "k1_effective": tis.k1,
    })
    if metadata:
        log.meta.update(metadata)
    rows = log.rows

    try:
        for tick in ticks.tolist():
            t = tick / M
            des = sample(protocol, t)
            if tick % P["plant"] == 0:
                if open_loop:
                    state = PlantState(des.x_des, des.xd_des)
                    F_c = 0.0
                    F_applied = 0.0
                else:
                    F_c = tracking_force(state, des, hp)
                    F_applied = F_fb + po.F_passive
                    state = step(state, F_c, F_applied, dt_plant, hp)
                    if abs(state.x) > config.x_bound or abs(state.xd) > config.v_bound:
                        raise DivergenceError(
                            f"state out of bounds at t={t:.4f}s: x={state.x:.4g}, xd={state.xd:.4g}")
                psm = env.psm_follow(psm, state.x, scale, dt_plant, state.xd)
                d = psm.position - rest
                F_true = env.tissue_force(tis, d, psm.velocity)
                est.push(EstimatorInputs(t, psm.position, psm.velocity, d, F_true, F_c,
                                         state.x, state.xd))
            if tick % P["estimator"] == 0:
                F_est = est.estimate(t)
                F_fb = F_est if feedback_on else 0.0
            if popc_on and tick % P["popc"] == 0:
                po.update(F_fb, state.xd)
            if tick % P["log"] == 0:
                rows.append((t, des.x_des, des.xd_des, float(des.moving), state.x, state.xd,
                             F_c, F_applied, F_est, F_fb, po.F_passive, po.E_win, po.alpha,
                             psm.position, psm.velocity, F_true))
    except DivergenceError as err:
        log.meta["diverged"] = True
        log.meta["diagnostic"] = str(err)
        log.freeze()
        if raise_on_divergence:
            err.log = log
            raise
        return log
    log.meta["diverged"] = False
    log.freeze()
    return log


def replay_plant(log: RunLog, config: SimConfig, x0: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Re-integrate the plant from logged forces at the plant ticks.

    Returns ``(x, xd)`` at the log rows on which the plant stepped.
    """
    stride = int(round(config.log_rate / config.plant_rate))
    if stride < 1 or abs(config.log_rate / config.plant_rate - stride) > 1e-9:
        raise ConfigError("replay needs log_rate to be a multiple of plant_rate")
    Fc = log["F_c"][::stride]
    Fa = log["F_applied"][::stride]
    s = PlantState(x0, 0.0)
    xs, vs = [], []
    for fc, fa in zip(Fc.tolist(), Fa.tolist()):
        s = step(s, fc, fa, 1.0 / config.plant_rate, config.human)
        xs.append(s.x)
        vs.append(s.xd)
    return np.array(xs), np.array(vs)
