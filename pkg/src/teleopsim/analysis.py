"""Post-hoc metrics computed from run logs.

All functions take plain arrays (or :class:`RunLog` objects) and are pure.
Hold windows are ``(t_start, t_end)`` pairs, treated as half-open intervals.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .estimation import lowpass
from .runlog import RunLog

log = logging.getLogger(__name__)

HoldWindows = list  # list[tuple[float, float]]


def rmse(estimate, truth) -> float:
    a = np.asarray(estimate, dtype=float)
    b = np.asarray(truth, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("rmse of an empty series")
    if a.shape != b.shape:
        raise ValueError(f"series shapes differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def default_thresholds(peak_velocity: float, on_frac: float = 0.05,
                       off_frac: float = 0.02) -> tuple[float, float]:
    return on_frac * peak_velocity, off_frac * peak_velocity


def detect_holds(t, v, theta_on: float, theta_off: float, min_hold: float = 0.5,
                 settle_margin: float = 0.25) -> HoldWindows:
    """Hold windows from a velocity trace.

    A movement starts when ``|v|`` rises above ``theta_on`` and ends at the
    first sample of a stretch that stays below ``theta_off`` for at least
    ``min_hold`` seconds. Holds are the stretches between a movement's end
    and the next movement's start, shrunk by ``settle_margin`` at both ends.
    Stationary lead-in and tail stretches are not holds. A trace that never
    moves is one hold spanning the whole run.
    """
    t = np.asarray(t, dtype=float)
    speed = np.abs(np.asarray(v, dtype=float))
    if t.size == 0:
        return []
    moving = bool(speed[0] > theta_on)
    ever_moved = moving
    offset = None
    quiet_start = None
    raw = []
    for i in range(t.size):
        s = speed[i]
        if moving:
            if s < theta_off:
                if quiet_start is None:
                    quiet_start = i
                if t[i] - t[quiet_start] >= min_hold:
                    moving = False
                    offset = t[quiet_start]
                    quiet_start = None
            else:
                quiet_start = None
        elif s > theta_on:
            moving = ever_moved = True
            if offset is not None:
                raw.append((offset, t[i]))
            offset = None
    if not ever_moved:
        return [(float(t[0]), float(t[-1]))]
    out = []
    for a, b in raw:
        a, b = a + settle_margin, b - settle_margin
        if b > a:
            out.append((float(a), float(b)))
    if not out:
        log.warning("no hold windows detected")
    return out


def hold_mask(t, holds: Iterable[tuple[float, float]]) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    mask = np.zeros(t.shape, dtype=bool)
    for a, b in holds:
        mask |= (t >= a) & (t < b)
    return mask


def hold_rms(t, series, holds) -> float:
    """RMS of ``series`` over the union of hold windows."""
    mask = hold_mask(t, holds)
    if not mask.any():
        raise ValueError("no samples inside the hold windows")
    x = np.asarray(series, dtype=float)[mask]
    return float(np.sqrt(np.mean(x * x)))


def rms_effort(t, F_passive, holds, rate: float = 1000.0, cutoff: float = 100.0) -> float:
    """RMS passivating force over holds after a causal 100 Hz low-pass."""
    if not holds:
        raise ValueError("rms_effort needs at least one hold window")
    filtered = lowpass(F_passive, cutoff, rate)
    return hold_rms(t, filtered, holds)


def detrend(t, x) -> np.ndarray:
    """Remove the least-squares line."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if t.size < 2:
        raise ValueError("detrending needs at least two samples")
    A = np.column_stack([t - t.mean(), np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(A, x, rcond=None)
    return x - A @ coef


def amplitude_spectrum(x, rate: float, hann: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Single-sided amplitude spectrum: a unit sine on a bin has magnitude 1."""
    x = np.asarray(x, dtype=float)
    n = x.size
    w = np.hanning(n) if hann else np.ones(n)
    X = np.abs(np.fft.rfft(x * w)) / w.sum()
    X[1:] *= 2.0
    if n % 2 == 0:
        X[-1] /= 2.0
    return np.fft.rfftfreq(n, 1.0 / rate), X


def default_grid(fmax: float = 50.0, df: float = 0.25) -> np.ndarray:
    return np.arange(0.0, fmax + df / 2, df)


def segment_spectra(t, force, holds, rate: float = 1000.0, grid=None,
                    hann: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Per-hold detrended spectra interpolated onto ``grid``; shape (n_holds, n_grid)."""
    t = np.asarray(t, dtype=float)
    force = np.asarray(force, dtype=float)
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    rows = []
    for a, b in holds:
        m = (t >= a) & (t < b)
        if m.sum() < 2:
            raise ValueError(f"hold ({a}, {b}) has fewer than two samples")
        f, X = amplitude_spectrum(detrend(t[m], force[m]), rate, hann)
        rows.append(np.interp(grid, f, X, right=0.0))
    return grid, np.array(rows).reshape(len(rows), grid.size)


def detrend_spectrum(t, force, holds, rate: float = 1000.0, grid=None,
                     hann: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Mean detrended amplitude spectrum across hold segments."""
    if not holds:
        raise ValueError("spectrum needs at least one hold")
    grid, S = segment_spectra(t, force, holds, rate, grid, hann)
    return grid, S.mean(axis=0)


def dominant_frequency(freqs, mags, fmin: float = 0.5) -> float:
    freqs = np.asarray(freqs)
    mags = np.asarray(mags)
    keep = freqs >= fmin
    return float(freqs[keep][np.argmax(mags[keep])])


def oscillation_power(t, series, holds) -> float:
    """Mean squared detrended ``series`` over hold segments (sample-weighted)."""
    t = np.asarray(t, dtype=float)
    series = np.asarray(series, dtype=float)
    acc, n = 0.0, 0
    for a, b in holds:
        m = (t >= a) & (t < b)
        if m.sum() < 2:
            continue
        r = detrend(t[m], series[m])
        acc += float(r @ r)
        n += r.size
    if n == 0:
        raise ValueError("no hold samples")
    return acc / n


def hysteresis_area(d, F) -> float:
    """Signed area of a closed force-displacement loop (positive = dissipative)."""
    d = np.asarray(d, dtype=float)
    F = np.asarray(F, dtype=float)
    return float(np.sum(0.5 * (F[1:] + F[:-1]) * np.diff(d)))


@dataclass
class StiffnessCurve:
    grid: np.ndarray                 # bin centres, m
    loading: np.ndarray              # mean force, N
    unloading: np.ndarray
    loading_sd: np.ndarray
    unloading_sd: np.ndarray
    per_material: dict = field(default_factory=dict)

    def at(self, d: float) -> tuple[float, float]:
        """Loading and unloading force interpolated at displacement ``d``."""
        order = np.argsort(self.grid)
        g = self.grid[order]
        return (float(np.interp(d, g, self.loading[order])),
                float(np.interp(d, g, self.unloading[order])))


def _branch_means(d, v, F, moving, edges):
    idx = np.digitize(d, edges) - 1
    nb = len(edges) - 1
    out = {}
    for name, sel in (("loading", d * v > 0), ("unloading", d * v < 0)):
        sel = sel & moving & (idx >= 0) & (idx < nb)
        sums = np.bincount(idx[sel], weights=F[sel], minlength=nb)
        counts = np.bincount(idx[sel], minlength=nb)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[name] = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return out["loading"], out["unloading"]


def stiffness_curve(logs: Sequence[RunLog], n_bins: int = 20, peak: float | None = None,
                    cycle_period: float | None = None, force: str = "F_estimate",
                    min_cycles: int = 1) -> StiffnessCurve:
    """Average force-displacement curves for one open-loop movement type.

    Forces are binned against follower displacement, split into loading and
    unloading by the sign of ``d * v``. Bins are averaged per cycle, cycles
    per material, then materials with a standard deviation band.
    """
    if not logs:
        raise ValueError("no logs")
    if peak is None:
        d_all = np.concatenate([lg["psm_position"] - lg["psm_position"][0] for lg in logs])
        peak = float(d_all[np.argmax(np.abs(d_all))])
    edges = np.linspace(0.0, peak, n_bins + 1)
    if peak < 0:
        edges = edges[::-1]
    centres = 0.5 * (edges[1:] + edges[:-1])

    by_material: dict = {}
    logs = sorted(logs, key=lambda lg: (str(lg.meta.get("material", "")),
                                        int(lg.meta.get("repetition", 0)),
                                        int(lg.meta.get("seed", 0))))
    for lg in logs:
        t = lg["t"]
        d = lg["psm_position"] - lg["psm_position"][0]
        v = lg["psm_velocity"]
        F = lg[force]
        moving = lg["moving"] > 0.5
        period = cycle_period or lg.meta.get("cycle_period") or (t[-1] + t[1] - t[0])
        n_cyc = int(round((t[-1] + (t[1] - t[0])) / period))
        if n_cyc < min_cycles:
            raise ValueError(f"log has {n_cyc} cycles, need {min_cycles}")
        cyc = np.minimum((t // period).astype(int), n_cyc - 1)
        for c in range(n_cyc):
            m = cyc == c
            lo, un = _branch_means(d[m], v[m], F[m], moving[m], edges)
            by_material.setdefault(lg.meta.get("material", "?"), []).append((lo, un))

    per_mat = {}
    for mat, curves in sorted(by_material.items()):
        lo = np.nanmean(np.array([c[0] for c in curves]), axis=0)
        un = np.nanmean(np.array([c[1] for c in curves]), axis=0)
        per_mat[mat] = (lo, un)
    L = np.array([v[0] for v in per_mat.values()])
    U = np.array([v[1] for v in per_mat.values()])
    return StiffnessCurve(
        grid=centres, loading=np.nanmean(L, axis=0), unloading=np.nanmean(U, axis=0),
        loading_sd=np.nanstd(L, axis=0), unloading_sd=np.nanstd(U, axis=0),
        per_material=per_mat,
    )


@dataclass
class MetricsReport:
    rmse: float
    rms_effort: float
    rms_velocity: float
    oscillation_power: float
    freqs: np.ndarray
    spectrum: np.ndarray

    @property
    def peak_frequency(self) -> float:
        return dominant_frequency(self.freqs, self.spectrum)


def closed_loop_metrics(lg: RunLog, holds, grid=None, hann: bool = False) -> MetricsReport:
    """RMSE over the run plus hold-period effort, velocity and spectra."""
    t = lg["t"]
    rate = lg.meta.get("log_rate", 1.0 / (t[1] - t[0]))
    if holds:
        freqs, spec = detrend_spectrum(t, lg["F_feedback"], holds, rate, grid, hann)
        eff = rms_effort(t, lg["F_passive"], holds, rate)
        vel = hold_rms(t, lg["xd"], holds)
        pw = oscillation_power(t, lg["F_feedback"], holds)
    else:
        freqs = default_grid() if grid is None else np.asarray(grid)
        spec = np.full(freqs.shape, math.nan)
        eff = vel = pw = math.nan
    return MetricsReport(rmse(lg["F_estimate"], lg["F_ground_truth"]), eff, vel, pw, freqs, spec)


def aggregate(values) -> tuple[float, float]:
    """Mean and population standard deviation, ignoring NaNs."""
    a = np.sort(np.asarray(list(values), dtype=float))
    a = a[np.isfinite(a)]
    if a.size == 0:
        return math.nan, math.nan
    return float(a.mean()), float(a.std())
