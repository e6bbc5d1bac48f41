"""SVG figures for the study outputs.

Figures are written with a fixed SVG hash salt and no date stamp so that
reruns produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "teleopsim", "svg.fonttype": "none", "font.size": 9}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def stiffness_figure(curves: dict, path) -> Path:
    """``curves[(estimator, movement)] -> StiffnessCurve``; one panel per movement."""
    movements = sorted({m for _, m in curves})
    estimators = sorted({e for e, _ in curves})
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(movements), figsize=(4.5 * len(movements), 3.5),
                                 squeeze=False)
        for ax, mv in zip(axes[0], movements):
            for i, est in enumerate(estimators):
                c = curves.get((est, mv))
                if c is None:
                    continue
                colour = f"C{i}"
                d = c.grid * 1000.0
                ax.plot(d, c.loading, color=colour, label=f"{est} loading")
                ax.plot(d, c.unloading, color=colour, linestyle="--", label=f"{est} unloading")
                ax.fill_between(d, c.loading - c.loading_sd, c.loading + c.loading_sd,
                                color=colour, alpha=0.15, linewidth=0)
            ax.set_title(mv)
            ax.set_xlabel("displacement (mm)")
            ax.set_ylabel("force (N)")
            ax.grid(alpha=0.3)
        axes[0][-1].legend(fontsize=7, loc="best")
        fig.tight_layout()
        return _save(fig, path)


def metrics_figure(summary: list[dict], path) -> Path:
    """Bar charts of RMSE and RMS passivating effort per estimator and axis."""
    estimators = sorted({r["estimator"] for r in summary})
    axes_ = sorted({r["axis"] for r in summary})
    popcs = sorted({r["popc"] for r in summary})
    with plt.rc_context(_RC):
        fig, panels = plt.subplots(1, 2, figsize=(9, 3.5))
        width = 0.8 / max(len(axes_) * len(popcs), 1)
        x = np.arange(len(estimators))
        for p, (metric, label) in zip(panels, (("rmse", "RMSE (N)"),
                                               ("rms_effort", "RMS passivating effort (N)"))):
            k = 0
            for ax_name in axes_:
                for pc in popcs:
                    vals, sds = [], []
                    for est in estimators:
                        row = next((r for r in summary if r["estimator"] == est
                                    and r["axis"] == ax_name and r["popc"] == pc), None)
                        vals.append(row[f"{metric}_mean"] if row else np.nan)
                        sds.append(row[f"{metric}_sd"] if row else np.nan)
                    p.bar(x + (k - (len(axes_) * len(popcs) - 1) / 2) * width, vals, width,
                          yerr=sds, label=f"{ax_name} popc {pc}", capsize=2)
                    k += 1
            p.set_xticks(x)
            p.set_xticklabels(estimators)
            p.set_ylabel(label)
            p.grid(axis="y", alpha=0.3)
        panels[1].legend(fontsize=7)
        fig.tight_layout()
        return _save(fig, path)


def spectra_figure(spectra: dict, path, fmax: float = 20.0) -> Path:
    """``spectra[(estimator, axis, popc)] -> (freqs, mags)``."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for i, (key, (f, m)) in enumerate(sorted(spectra.items())):
            keep = f <= fmax
            ax.plot(f[keep], m[keep], label=" ".join(str(k) for k in key), linewidth=0.8)
        ax.set_xlabel("frequency (Hz)")
        ax.set_ylabel("amplitude (N)")
        ax.grid(alpha=0.3)
        if spectra:
            ax.legend(fontsize=6, ncol=2)
        fig.tight_layout()
        return _save(fig, path)


def trace_figure(t, F_feedback, F_truth, path, x=None) -> Path:
    """Displayed force against ground truth, with optional hand position."""
    with plt.rc_context(_RC):
        rows = 2 if x is not None else 1
        fig, axes = plt.subplots(rows, 1, figsize=(8, 2.5 * rows), sharex=True, squeeze=False)
        ax = axes[0][0]
        ax.plot(t, F_truth, color="k", linewidth=0.8, label="ground truth")
        ax.plot(t, F_feedback, color="C3", linewidth=0.8, label="feedback")
        ax.set_ylabel("force (N)")
        ax.legend(fontsize=7)
        ax.grid(alpha=0.3)
        if x is not None:
            axes[1][0].plot(t, np.asarray(x) * 1000.0, color="C0", linewidth=0.8)
            axes[1][0].set_ylabel("hand position (mm)")
            axes[1][0].grid(alpha=0.3)
        axes[-1][0].set_xlabel("time (s)")
        fig.tight_layout()
        return _save(fig, path)
