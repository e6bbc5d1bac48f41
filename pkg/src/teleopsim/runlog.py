"""Run records and their CSV + JSON sidecar serialisation.

Column order is fixed (see ``COLUMNS``). Floats are written with ``repr`` so a
log read back from disk is bit-identical to the one written.

=================  =====  ====================================================
column             unit   meaning
=================  =====  ====================================================
t                  s      log timestamp (k / log_rate)
x_des, xd_des      m, m/s commanded master position / velocity
moving             0/1    1 while the active segment is a movement
x, xd              m, m/s human-SSM state after the latest plant step
F_c                N      tracking force used at the latest plant step
F_applied          N      total feedback (displayed + passivating) at that step
F_estimate         N      latest estimator output (held between updates)
F_feedback         N      force displayed to the hand (0 without feedback)
F_passive          N      latest passivity-controller force
E_win              J      latest windowed port energy
alpha              N s/m  latest variable damping
psm_position       m      follower position
psm_velocity       m/s    follower velocity
F_ground_truth     N      tissue force at the follower state
=================  =====  ====================================================
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

COLUMNS = ("t", "x_des", "xd_des", "moving", "x", "xd", "F_c", "F_applied", "F_estimate",
           "F_feedback", "F_passive", "E_win", "alpha", "psm_position", "psm_velocity",
           "F_ground_truth")
_INDEX = {c: i for i, c in enumerate(COLUMNS)}


class RunLog:
    def __init__(self, data: np.ndarray | None = None, meta: dict | None = None):
        self.rows: list = []
        self.data = data if data is not None else np.empty((0, len(COLUMNS)))
        self.meta = dict(meta or {})

    @classmethod
    def empty(cls) -> "RunLog":
        return cls()

    def freeze(self):
        if self.rows:
            new = np.asarray(self.rows, dtype=float).reshape(-1, len(COLUMNS))
            self.data = np.vstack([self.data, new]) if len(self.data) else new
            self.rows = []
        return self

    def __len__(self):
        return len(self.data)

    def __getitem__(self, col: str) -> np.ndarray:
        return self.data[:, _INDEX[col]]

    def column(self, col: str) -> np.ndarray:
        return self[col]

    def window(self, t0: float, t1: float) -> "RunLog":
        t = self["t"]
        keep = (t >= t0) & (t < t1)
        return RunLog(self.data[keep], self.meta)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def write(self, path) -> Path:
        """Write ``<path>`` (CSV) and ``<path>.json`` (metadata)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for row in self.data.tolist():
                w.writerow([repr(v) for v in row])
        Path(str(path) + ".json").write_text(json.dumps(self.meta, sort_keys=True, indent=2) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunLog":
        path = Path(path)
        with path.open(newline="") as fh:
            r = csv.reader(fh)
            header = tuple(next(r))
            if header != COLUMNS:
                raise ValueError(f"unexpected RunLog columns in {path}")
            data = np.array([[float(v) for v in row] for row in r], dtype=float)
        meta_path = Path(str(path) + ".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(data.reshape(-1, len(COLUMNS)), meta)
