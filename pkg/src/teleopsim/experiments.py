"""The four studies: open-loop stiffness, closed-loop stability, refitting and demo replay.

Every study expands into independent cells. A cell's seed is derived from
its key, never from its position in the run order, so the seeded shuffle of
execution order (and ``parallel``) cannot change any output. Results are
always collected and written in canonical cell order.

Output layout under ``out``::

    open_loop/   plan.json, runs/<cell>.csv(+.json), stiffness.csv, stiffness.svg
    closed_loop/ plan.json, holds.csv, runs/<cell>.csv(+.json), metrics.csv,
                 summary.csv, spectra.csv, metrics.svg, spectra.svg
    refit/       datasets/{orig,nf,fs,ef}.csv, models/{base,nf,fs,ef}.json,
                 validation.csv, comparison.csv, closed_loop/...
    demo/        run.csv(+.json), trace.csv, trace.svg
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import analysis as an
from . import config as cf
from . import engine, neural, plotting
from . import trajectory as tr
from .estimation import ConfigError, EstimatorSpec, Neural, preset
from .runlog import RunLog

log = logging.getLogger(__name__)

STUDIES = ("open_loop", "closed_loop", "refit", "demo_replay")
REFIT_CONDITIONS = ("nf", "fs", "ef")


def cell_seed(seed: int, key: str) -> int:
    h = hashlib.sha256(f"{seed}:{key}".encode()).digest()
    return int.from_bytes(h[:4], "little")


@dataclass(frozen=True)
class Cell:
    study: str
    estimator: str
    variant: str          # movement for open loop, axis for closed loop
    material: int
    repetition: int
    popc: bool = False

    @property
    def key(self) -> str:
        k = f"{self.estimator}_{self.variant}_m{self.material}_r{self.repetition}"
        if self.study == "closed_loop":
            k += "_popc-" + ("on" if self.popc else "off")
        return k


@dataclass
class ExperimentPlan:
    study: str
    estimators: Sequence[str]
    variants: Sequence[str]
    materials: int = 3
    repetitions: int = 3
    popc: Sequence[bool] = (False,)
    randomize: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ConfigError(f"unknown study {self.study!r}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")

    def cells(self) -> list[Cell]:
        return [Cell(self.study, e, v, m, r, p)
                for e in self.estimators for v in self.variants
                for m in range(self.materials) for r in range(self.repetitions)
                for p in self.popc]

    def execution_order(self) -> list[Cell]:
        cells = self.cells()
        if not self.randomize:
            return cells
        perm = np.random.default_rng(cell_seed(self.seed, f"order:{self.study}")).permutation(len(cells))
        return [cells[i] for i in perm]

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        order = [{"key": c.key, "seed": cell_seed(self.seed, c.key)} for c in self.execution_order()]
        path.write_text(json.dumps({"study": self.study, "seed": self.seed,
                                    "n_cells": len(order), "order": order}, indent=2) + "\n")
        return path


@dataclass
class StudyResult:
    study: str
    out: Path
    n_runs: int = 0
    diverged: list = field(default_factory=list)
    files: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.diverged


def _map(fn: Callable, jobs: list, parallel: int = 1) -> list:
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _run_in_order(plan: ExperimentPlan, fn: Callable, make_job: Callable, parallel: int) -> dict:
    """Execute cells in the plan's (seeded) order; return results keyed by cell."""
    order = plan.execution_order()
    results = _map(fn, [make_job(c) for c in order], parallel)
    return dict(zip(order, results))


def _write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _popc_conditions(value: str) -> tuple[bool, ...]:
    return {"off": (False,), "on": (True,), "both": (False, True)}[value]


# -- open loop -------------------------------------------------------------

def _open_loop_job(job):
    cfg, cell, spec = job
    mats = cf.materials(cfg, "open_loop")
    sim = cf.sim_config(cfg, seed=cell_seed(cfg["seed"], cell.key))
    protocol = tr.build_open_loop(cell.variant)
    lg = engine.run(sim, protocol, spec, mats[cell.material],
                    metadata={"repetition": cell.repetition, "cell": cell.key,
                              "cycle_period": protocol.cycle_period},
                    raise_on_divergence=False)
    return lg


def cmd_open_loop(cfg: dict, out, estimators: Sequence[str] | None = None,
                  parallel: int = 1) -> StudyResult:
    """Open-loop palpation/retraction runs and the averaged stiffness curves."""
    out = Path(out) / "open_loop"
    names = list(estimators or cfg["open_loop"]["estimators"])
    specs = {n: cf.estimator(cfg, n) for n in names}
    plan = ExperimentPlan("open_loop", names, cfg["open_loop"]["movements"],
                          int(cfg["materials"]["count"]), int(cfg["repetitions"]),
                          (False,), bool(cfg["randomize_order"]), int(cfg["seed"]))
    res = StudyResult("open_loop", out)
    res.files.append(plan.write(out / "plan.json"))
    logs = _run_in_order(plan, _open_loop_job, lambda c: (cfg, c, specs[c.estimator]), parallel)

    curves = {}
    rows = []
    for est in names:
        for mv in plan.variants:
            cells = [c for c in plan.cells() if c.estimator == est and c.variant == mv]
            group = [logs[c] for c in cells]
            for c, lg in zip(cells, group):
                res.files.append(lg.write(out / "runs" / f"{c.key}.csv"))
                if lg.meta.get("diverged"):
                    res.diverged.append(c.key)
            res.n_runs += len(group)
            good = [lg for lg in group if not lg.meta.get("diverged")]
            if not good:
                continue
            peak = tr.build_open_loop(mv).segments[0].xf
            curve = an.stiffness_curve(good, n_bins=int(cfg["analysis"]["n_bins"]), peak=peak)
            curves[(est, mv)] = curve
            for i, d in enumerate(curve.grid):
                rows.append((est, mv, d, curve.loading[i], curve.loading_sd[i],
                             curve.unloading[i], curve.unloading_sd[i]))
    res.files.append(_write_csv(out / "stiffness.csv",
                                ("estimator", "movement", "displacement", "loading_mean",
                                 "loading_sd", "unloading_mean", "unloading_sd"), rows))
    res.files.append(plotting.stiffness_figure(curves, out / "stiffness.svg"))
    res.extra["curves"] = curves
    return res


# -- closed loop ------------------------------------------------------------

def reference_holds(cfg: dict, axis: str, material: int) -> list:
    """Hold windows from the FS, PO/PC-off run of the closed-loop protocol."""
    a = cfg["analysis"]
    protocol = tr.build_closed_loop(axis)
    lg = engine.run(cf.sim_config(cfg), protocol, preset("fs"),
                    cf.materials(cfg, axis)[material], raise_on_divergence=False)
    if lg.meta["diverged"]:
        # fall back to the scripted holds so the remaining cells still run
        log.warning("reference run %s/m%d diverged; using commanded holds", axis, material)
        m = a["settle_margin"]
        return [(t0 + m, t1 - m) for t0, t1 in protocol.commanded_holds() if t1 - t0 > 2 * m]
    on, off = an.default_thresholds(protocol.peak_velocity, a["on_fraction"], a["off_fraction"])
    return an.detect_holds(lg["t"], lg["xd"], on, off, a["min_hold"], a["settle_margin"])


def _closed_loop_job(job):
    cfg, cell, spec, holds = job
    a = cfg["analysis"]
    sim = cf.sim_config(cfg, seed=cell_seed(cfg["seed"], cell.key), popc_enabled=cell.popc)
    lg = engine.run(sim, tr.build_closed_loop(cell.variant), spec,
                    cf.materials(cfg, cell.variant)[cell.material],
                    metadata={"repetition": cell.repetition, "cell": cell.key},
                    raise_on_divergence=False)
    report = None
    if not lg.meta["diverged"]:
        report = an.closed_loop_metrics(lg, holds, an.default_grid(a["fmax"], a["df"]),
                                        bool(a["hann"]))
    return lg, report


METRIC_NAMES = ("rmse", "rms_effort", "rms_velocity", "oscillation_power", "peak_frequency")


def run_closed_loop(cfg: dict, out, specs: dict, axes: Sequence[str],
                    popc: Sequence[bool], repetitions: int | None = None,
                    parallel: int = 1, write_runs: bool = True) -> StudyResult:
    """Closed-loop cells for arbitrary estimator specs (presets or neural)."""
    out = Path(out)
    n_mat = int(cfg["materials"]["count"])
    reps = int(cfg["repetitions"] if repetitions is None else repetitions)
    plan = ExperimentPlan("closed_loop", list(specs), list(axes), n_mat, reps, tuple(popc),
                          bool(cfg["randomize_order"]), int(cfg["seed"]))
    res = StudyResult("closed_loop", out)
    res.files.append(plan.write(out / "plan.json"))

    holds = {(ax, m): reference_holds(cfg, ax, m) for ax in axes for m in range(n_mat)}
    res.files.append(_write_csv(out / "holds.csv", ("axis", "material", "t_start", "t_end"),
                                [(ax, f"m{m}", a, b) for (ax, m), hs in holds.items()
                                 for a, b in hs]))
    results = _run_in_order(
        plan, _closed_loop_job,
        lambda c: (cfg, c, specs[c.estimator], holds[(c.variant, c.material)]), parallel)

    rows = []
    spectra_acc: dict = {}
    for c in plan.cells():
        lg, rep = results[c]
        res.n_runs += 1
        if write_runs:
            res.files.append(lg.write(out / "runs" / f"{c.key}.csv"))
        pc = "on" if c.popc else "off"
        if rep is None:
            res.diverged.append(c.key)
            log.warning("cell %s diverged: %s", c.key, lg.meta.get("diagnostic"))
            rows.append((c.estimator, c.variant, f"m{c.material}", c.repetition, pc, 1)
                        + (math.nan,) * len(METRIC_NAMES))
            continue
        rows.append((c.estimator, c.variant, f"m{c.material}", c.repetition, pc, 0,
                     rep.rmse, rep.rms_effort, rep.rms_velocity, rep.oscillation_power,
                     rep.peak_frequency))
        spectra_acc.setdefault((c.estimator, c.variant, pc), []).append((rep.freqs, rep.spectrum))

    header = ("estimator", "axis", "material", "repetition", "popc", "diverged") + METRIC_NAMES
    res.files.append(_write_csv(out / "metrics.csv", header, rows))

    summary = []
    for est in specs:
        for ax in axes:
            for p in popc:
                pc = "on" if p else "off"
                sel = [r for r in rows if r[0] == est and r[1] == ax and r[4] == pc]
                entry = {"estimator": est, "axis": ax, "popc": pc, "n": len(sel),
                         "n_diverged": sum(r[5] for r in sel)}
                for j, name in enumerate(METRIC_NAMES):
                    mean, sd = an.aggregate(r[6 + j] for r in sel)
                    entry[f"{name}_mean"] = mean
                    entry[f"{name}_sd"] = sd
                summary.append(entry)
    keys = list(summary[0]) if summary else []
    res.files.append(_write_csv(out / "summary.csv", keys, [[e[k] for k in keys] for e in summary]))

    spectra = {}
    srows = []
    for key in sorted(spectra_acc):
        f = spectra_acc[key][0][0]
        mean = np.mean([s for _, s in spectra_acc[key]], axis=0)
        spectra[key] = (f, mean)
        srows += [key + (fi, mi) for fi, mi in zip(f.tolist(), mean.tolist())]
    res.files.append(_write_csv(out / "spectra.csv",
                                ("estimator", "axis", "popc", "frequency", "amplitude"), srows))
    res.files.append(plotting.metrics_figure(summary, out / "metrics.svg"))
    res.files.append(plotting.spectra_figure(spectra, out / "spectra.svg"))
    res.extra.update(summary=summary, rows=rows, spectra=spectra, holds=holds)
    return res


def cmd_closed_loop(cfg: dict, out, estimators: Sequence[str] | None = None,
                    axes: Sequence[str] | None = None, popc: str | None = None,
                    parallel: int = 1) -> StudyResult:
    names = list(estimators or cfg["closed_loop"]["estimators"])
    specs = {n: cf.estimator(cfg, n) for n in names}
    return run_closed_loop(cfg, Path(out) / "closed_loop", specs,
                           list(axes or cfg["closed_loop"]["axes"]),
                           _popc_conditions(popc or cfg["closed_loop"]["popc"]),
                           parallel=parallel)


# -- refit -----------------------------------------------------------------

def neural_spec(cfg: dict, model: neural.Mlp, name: str, rate: float | None = None) -> Neural:
    r = cfg["refit"]
    return Neural(model=model, features=tuple(model.features), latency=float(r["latency"]),
                  rate=float(r["rate"] if rate is None else rate), name=name)


def _data_job(job):
    cfg, protocol, spec, tissue, feedback, seed, meta = job
    sim = cf.sim_config(cfg, seed=seed, feedback_enabled=feedback)
    return engine.run(sim, protocol, spec, tissue, metadata=meta, raise_on_divergence=False)


def original_logs(cfg: dict, seed: int, parallel: int = 1) -> list[RunLog]:
    """No-feedback brief manipulations on the shifted original tissue population."""
    o = cfg["refit"]["original"]
    reps = int(o["repetitions"])
    mats = cf.materials(cfg, o["axis"], scale=float(o["stiffness_scale"]),
                        seed=cell_seed(seed, "original-materials"))
    jobs = []
    for m in mats:
        for r in range(reps):
            amp = 1.0 if reps == 1 else 0.8 + 0.4 * r / (reps - 1)
            key = f"orig_{m.material_id}_r{r}"
            jobs.append((cfg, tr.build_brief_protocol(o["axis"], amp), preset("fs"), m, False,
                         cell_seed(seed, key), {"cell": key, "repetition": r}))
    return _map(_data_job, jobs, parallel)


def condition_logs(cfg: dict, condition: str, seed: int, base: neural.Mlp | None = None,
                   parallel: int = 1) -> list[RunLog]:
    """Closed-loop data runs under one feedback condition (nf, fs or ef)."""
    if condition == "nf":
        spec, feedback = preset("fs"), False
    elif condition == "fs":
        spec, feedback = preset("fs"), True
    elif condition == "ef":
        if base is None:
            raise ConfigError("EF data collection needs a trained base model")
        spec, feedback = neural_spec(cfg, base, "base"), True
    else:
        raise ConfigError(f"unknown refit condition {condition!r}")
    jobs = []
    for ax in cfg["refit"]["axes"]:
        for m in cf.materials(cfg, ax):
            key = f"{condition}_{ax}_{m.material_id}"
            jobs.append((cfg, tr.build_closed_loop(ax), spec, m, feedback, cell_seed(seed, key),
                         {"cell": key, "condition": condition}))
    return _map(_data_job, jobs, parallel)


def _dataset(cfg, logs, condition, seed) -> neural.Dataset:
    r = cfg["refit"]
    good = [lg for lg in logs if not lg.meta.get("diverged")]
    return neural.generate_dataset(good, condition.upper(), r["features"], float(r["rate"]),
                                   float(r["train_fraction"]), cell_seed(seed, f"split:{condition}"))


@dataclass
class RefitOutcome:
    seed: int
    models: dict             # name -> Mlp (base, nf, fs, ef)
    datasets: dict           # name -> Dataset (orig, nf, fs, ef)
    validation: dict         # (model, dataset) -> RMSE
    closed_loop: dict        # (model, popc) -> mean metrics over axes x materials
    n_diverged: dict         # (model, popc) -> count
    result: StudyResult | None = None


def refit_study(cfg: dict, seed: int | None = None, out=None, base: neural.Mlp | None = None,
                popc: Sequence[bool] = (False,), parallel: int = 1,
                evaluate: bool = True) -> RefitOutcome:
    """Train (or reuse) a base network, collect NF/FS/EF data, refit and compare."""
    seed = int(cfg["seed"] if seed is None else seed)
    cfg = cf.merge(cfg, {"seed": seed})
    r = cfg["refit"]
    tc = cf.train_config(cfg)
    feats = tuple(r["features"])
    orig = _dataset(cfg, original_logs(cfg, seed, parallel), "orig", seed)
    if base is None:
        sizes = [len(feats), *[int(h) for h in r["hidden"]], 1]
        base = neural.train(neural.Mlp.init(sizes, seed=seed, features=feats), orig, tc)
    elif tuple(base.features) != feats:
        raise ConfigError(f"base model features {base.features} differ from config {feats}")
    models = {"base": base}
    datasets = {"orig": orig}
    for cond in REFIT_CONDITIONS:
        datasets[cond] = _dataset(cfg, condition_logs(cfg, cond, seed, base, parallel), cond, seed)
        models[cond] = neural.refit(base, orig, datasets[cond], tc)
    validation = {(mn, dn): neural.validation_rmse(m, d)
                  for mn, m in models.items() for dn, d in datasets.items()}

    outcome = RefitOutcome(seed, models, datasets, validation, {}, {})
    if not evaluate:
        return outcome
    specs = {name: neural_spec(cfg, m, name) for name, m in models.items()}
    if out is not None:
        res = run_closed_loop(cfg, Path(out) / "closed_loop", specs, list(r["axes"]),
                              tuple(popc), repetitions=1, parallel=parallel)
    else:
        res = _closed_loop_in_memory(cfg, specs, list(r["axes"]), tuple(popc), parallel)
    rows = res.extra["rows"]
    for name in models:
        for p in popc:
            pc = "on" if p else "off"
            sel = [row for row in rows if row[0] == name and row[4] == pc]
            outcome.n_diverged[(name, p)] = sum(row[5] for row in sel)
            outcome.closed_loop[(name, p)] = {
                m: an.aggregate(row[6 + j] for row in sel)[0] for j, m in enumerate(METRIC_NAMES)}
    outcome.result = res
    return outcome


def _closed_loop_in_memory(cfg, specs, axes, popc, parallel) -> StudyResult:
    with tempfile.TemporaryDirectory() as tmp:
        return run_closed_loop(cfg, tmp, specs, axes, popc, repetitions=1,
                               parallel=parallel, write_runs=False)


def cmd_refit(cfg: dict, out, popc: str | None = None, base_path=None,
              parallel: int = 1) -> StudyResult:
    out = Path(out) / "refit"
    base = neural.Mlp.load(base_path) if base_path else None
    conds = _popc_conditions(popc or cfg["closed_loop"]["popc"])
    oc = refit_study(cfg, out=out, base=base, popc=conds, parallel=parallel)
    res = oc.result
    res.study = "refit"
    res.out = out
    for name, ds in oc.datasets.items():
        res.files.append(ds.write_csv(out / "datasets" / f"{name}.csv"))
    for name, m in oc.models.items():
        res.files.append(m.save(out / "models" / f"{name}.json"))
    names = list(oc.datasets)
    res.files.append(_write_csv(
        out / "validation.csv", ["model"] + [f"val_rmse_{d}" for d in names] + ["n_train"],
        [[m] + [oc.validation[(m, d)] for d in names]
         + [oc.datasets["orig"].n_train if m == "base" else neural.balance(
             oc.datasets["orig"], oc.datasets[m], oc.seed).n_train]
         for m in oc.models]))
    rows = []
    for m in oc.models:
        for p in conds:
            cl = oc.closed_loop[(m, p)]
            rows.append([m, "on" if p else "off", oc.validation[(m, "ef")]]
                        + [cl[k] for k in METRIC_NAMES] + [oc.n_diverged[(m, p)]])
    res.files.append(_write_csv(out / "comparison.csv",
                                ["model", "popc", "val_rmse_ef"] + list(METRIC_NAMES)
                                + ["n_diverged"], rows))
    res.extra["outcome"] = oc
    return res


# -- demo replay -----------------------------------------------------------

def cmd_demo_replay(cfg: dict, out, checkpoint=None) -> StudyResult:
    """Scripted mixed-speed manipulation with the refit network at the demo rate."""
    out = Path(out)
    checkpoint = Path(checkpoint) if checkpoint else out / "refit" / "models" / "ef.json"
    if not checkpoint.exists():
        raise FileNotFoundError(f"refit checkpoint {checkpoint} not found; run 'refit' first")
    model = neural.Mlp.load(checkpoint)
    d = cfg["demo"]
    out = out / "demo"
    spec = neural_spec(cfg, model, "ef", rate=float(d["rate"]))
    protocol = tr.build_demo_protocol(float(d["duration"]))
    tissue = cf.materials(cfg, d["axis"])[int(d["material"])]
    sim = cf.sim_config(cfg, seed=cell_seed(cfg["seed"], "demo"))
    lg = engine.run(sim, protocol, spec, tissue, metadata={"checkpoint": checkpoint.name},
                    raise_on_divergence=False)
    res = StudyResult("demo_replay", out, n_runs=1)
    if lg.meta["diverged"]:
        res.diverged.append("demo")
    res.files.append(lg.write(out / "run.csv"))
    res.files.append(_write_csv(out / "trace.csv", ("t", "F_feedback", "F_ground_truth"),
                                zip(lg["t"].tolist(), lg["F_feedback"].tolist(),
                                    lg["F_ground_truth"].tolist())))
    res.files.append(plotting.trace_figure(lg["t"], lg["F_feedback"], lg["F_ground_truth"],
                                           out / "trace.svg", x=lg["x"]))
    res.extra["log"] = lg
    return res
