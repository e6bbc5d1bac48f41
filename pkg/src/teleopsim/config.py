"""Experiment configuration: a versioned JSON document.

``default_config()`` returns the full document; a user file only needs the
keys it changes and is deep-merged over the defaults. Unknown top-level keys
are rejected so typos fail loudly. Schema (version 1)::

    schema_version   int, must be 1
    seed             int, base seed for every study
    sim              SimConfig fields; "human" -> HumanSsmParams,
                     "popc" -> PoPcConfig (d_max, v_epsilon, window)
    tissue           {"x"|"y"|"z": TissueParams fields}, nominal per axis
    materials        {"count", "jitter"}: seeded log-normal samples
    repetitions      int >= 1
    randomize_order  bool, shuffle cell execution order with the seed
    estimators       {name: {"type": ground_truth|dynamic|behavioral, ...}}
    analysis         hold thresholds (fractions of peak command velocity),
                     min_hold, settle_margin, spectrum grid, hann flag
    open_loop        estimators, movements, tissue (TissueParams fields for
                     the vertical open-loop specimens)
    closed_loop      estimators, axes, popc ("on"|"off"|"both")
    refit            neural estimator and training settings
    demo             duration, rate, axis, material index
"""

from __future__ import annotations

import copy
import json
from dataclasses import fields, replace
from pathlib import Path

from .engine import SimConfig
from .environment import TissueParams, make_materials
from .estimation import PRESETS, ConfigError, EstimatorSpec, spec_from_dict, spec_to_dict
from .neural import TrainConfig
from .passivity import PoPcConfig
from .plant import HumanSsmParams

SCHEMA_VERSION = 1

# Nominal tissue per axis. All three are overdamped around the hold
# operating points so ideal feedback never rings back into the hand.
_TISSUE = {
    "x": {"k1": 90.0, "k3": 0.8e6, "b_env": 110.0},
    "y": {"k1": 110.0, "k3": 1.2e6, "b_env": 130.0},
    "z": {"k1": 100.0, "k3": 1.0e6, "b_env": 120.0},
}

# Open-loop runs never involve the hand, so their specimens can be
# spring-dominated; heavy damping would swamp any estimator's own hysteresis.
_OPEN_LOOP_TISSUE = {"k1": 100.0, "k3": 1.0e6, "b_env": 10.0}

STUDY_ESTIMATORS = ("fs", "d", "v", "s", "vs")


def default_config() -> dict:
    sim = SimConfig()
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": 0,
        "sim": {
            "master_rate": sim.master_rate, "plant_rate": sim.plant_rate,
            "popc_rate": sim.popc_rate, "log_rate": sim.log_rate, "scale": sim.scale,
            "psm_lag_tau": sim.psm_lag_tau, "x_bound": sim.x_bound, "v_bound": sim.v_bound,
            "human": {"m": 0.75, "b": 6.45, "k": 135.0, "k_v": 20.0},
            "popc": {"d_max": 250.0, "v_epsilon": 1e-6, "window": 10},
        },
        "tissue": {ax: dict(p, tension_asymmetry=1.0, pretension_factor=1.5)
                   for ax, p in _TISSUE.items()},
        "materials": {"count": 3, "jitter": 0.1},
        "repetitions": 3,
        "randomize_order": True,
        "estimators": {name: spec_to_dict(spec) for name, spec in PRESETS.items()},
        "analysis": {"on_fraction": 0.05, "off_fraction": 0.02, "min_hold": 0.5,
                     "settle_margin": 0.25, "fmax": 50.0, "df": 0.25, "hann": False,
                     "n_bins": 20},
        "open_loop": {"estimators": list(STUDY_ESTIMATORS),
                      "movements": ["palpation", "retraction"],
                      "tissue": dict(_OPEN_LOOP_TISSUE, tension_asymmetry=1.0)},
        "closed_loop": {"estimators": list(STUDY_ESTIMATORS), "axes": ["x", "y", "z"],
                        "popc": "both"},
        "refit": {
            "features": ["psm_position", "psm_velocity"],
            "hidden": [32, 32],
            "latency": 0.03,
            "rate": 60.0,
            "train_fraction": 2.0 / 3.0,
            "original": {"stiffness_scale": 1.5, "repetitions": 4, "axis": "z"},
            "axes": ["x", "y", "z"],
            "train": {"epochs": 50, "learning_rate": 0.001, "l1": 0.001, "batch_size": 32},
        },
        "demo": {"duration": 35.0, "rate": 60.0, "axis": "z", "material": 0},
    }


def merge(base: dict, override: dict) -> dict:
    """Deep merge; ``override`` wins. Neither input is modified."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "estimators":
            out[k] = merge(out[k], v)
        elif k == "estimators" and isinstance(v, dict):
            est = dict(out.get(k, {}))
            est.update(copy.deepcopy(v))
            out[k] = est
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(cfg: dict) -> dict:
    known = set(default_config())
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"config schema_version must be {SCHEMA_VERSION}, "
                          f"got {cfg.get('schema_version')!r}")
    if int(cfg["repetitions"]) < 1:
        raise ConfigError("repetitions must be >= 1")
    if int(cfg["materials"]["count"]) < 1:
        raise ConfigError("materials.count must be >= 1")
    for ax in cfg["closed_loop"]["axes"]:
        if ax not in cfg["tissue"]:
            raise ConfigError(f"no tissue parameters for axis {ax!r}")
    for name in set(cfg["open_loop"]["estimators"]) | set(cfg["closed_loop"]["estimators"]):
        if name not in cfg["estimators"]:
            raise ConfigError(f"estimator {name!r} is not defined in the config")
    if cfg["closed_loop"]["popc"] not in ("on", "off", "both"):
        raise ConfigError("closed_loop.popc must be on, off or both")
    # constructing the typed objects runs their own checks
    sim_config(cfg)
    for name in cfg["estimators"]:
        estimator(cfg, name)
    for ax in list(cfg["tissue"]) + ["open_loop"]:
        tissue(cfg, ax)
    train_config(cfg)
    return cfg


def load(path=None, overrides: dict | None = None) -> dict:
    cfg = default_config()
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = merge(cfg, user)
    if overrides:
        cfg = merge(cfg, overrides)
    return validate(cfg)


def dump(cfg: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg, sort_keys=True, indent=2) + "\n")
    return path


def _pick(cls, d: dict, skip=()):
    names = {f.name for f in fields(cls)} - set(skip)
    extra = set(d) - names - set(skip)
    if extra:
        raise ConfigError(f"unknown {cls.__name__} fields {sorted(extra)}")
    return {k: v for k, v in d.items() if k in names}


def sim_config(cfg: dict, **changes) -> SimConfig:
    s = dict(cfg["sim"])
    human = HumanSsmParams(**_pick(HumanSsmParams, s.pop("human", {})))
    popc = PoPcConfig(**_pick(PoPcConfig, s.pop("popc", {})))
    base = SimConfig(human=human, popc=popc, seed=int(cfg["seed"]),
                     **_pick(SimConfig, s, skip=("human", "popc", "seed")))
    return replace(base, **changes) if changes else base


def tissue(cfg: dict, axis: str) -> TissueParams:
    """Nominal tissue for a closed-loop axis, or ``"open_loop"`` for the open-loop specimens."""
    try:
        d = cfg["open_loop"]["tissue"] if axis == "open_loop" else cfg["tissue"][axis]
    except KeyError:
        raise ConfigError(f"no tissue parameters for axis {axis!r}") from None
    return TissueParams(axis="z" if axis == "open_loop" else axis,
                        **_pick(TissueParams, d, skip=("axis",)))


def materials(cfg: dict, axis: str, scale: float = 1.0, seed: int | None = None) -> list[TissueParams]:
    """The configured material samples for one axis (or ``"open_loop"``).

    Sample ``i`` carries the same jitter on every axis, so ``m0`` is one
    physical specimen probed in three directions.
    """
    nominal = tissue(cfg, axis)
    if scale != 1.0:
        nominal = replace(nominal, k1=nominal.k1 * scale, k3=nominal.k3 * scale,
                          b_env=nominal.b_env * scale)
    m = cfg["materials"]
    return make_materials(nominal, int(m["count"]), float(m["jitter"]),
                          int(cfg["seed"]) if seed is None else seed)


def estimator(cfg: dict, name: str) -> EstimatorSpec:
    try:
        d = dict(cfg["estimators"][name])
    except KeyError:
        raise ConfigError(f"estimator {name!r} is not defined in the config") from None
    d.setdefault("name", name)
    if d.get("type") == "neural":
        raise ConfigError("neural estimators are built from checkpoints, not the config")
    return spec_from_dict(d)


def train_config(cfg: dict, seed: int | None = None) -> TrainConfig:
    t = cfg["refit"]["train"]
    return TrainConfig(seed=int(cfg["seed"]) if seed is None else seed,
                       **_pick(TrainConfig, t, skip=("seed",)))
