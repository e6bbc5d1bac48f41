"""Small feedforward force estimator trained with Adam and L1 regularisation.

The network maps standardised state features to a force in newtons. Input
standardisation (mean, sd per feature) is fit on the training split only and
stored with the weights. Loss is the mean squared force error plus
``l1 * sum(|w|)`` over weight matrices (biases are not penalised).

Checkpoints are JSON documents::

    {"format": "teleopsim-mlp", "version": 1, "sizes": [...],
     "activation": "tanh", "features": [...], "x_mean": [...], "x_sd": [...],
     "weights": [[[...]]], "biases": [[...]], "history": {...}}

Floats are stored with full round-trip precision.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .runlog import RunLog

CHECKPOINT_FORMAT = "teleopsim-mlp"
CHECKPOINT_VERSION = 1
CONDITIONS = ("NF", "FS", "EF", "ORIG")

# RunLog column backing each neural feature name.
FEATURE_COLUMNS = {
    "psm_position": "psm_position",
    "psm_velocity": "psm_velocity",
    "master_force": "F_c",
    "master_position": "x",
    "master_velocity": "xd",
}


class TrainingError(RuntimeError):
    pass


class Mlp:
    """Fully connected tanh network with a linear scalar output."""

    def __init__(self, sizes: Sequence[int], weights, biases, features: Sequence[str] = (),
                 x_mean=None, x_sd=None, activation: str = "tanh"):
        self.sizes = [int(s) for s in sizes]
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.features = tuple(features)
        n = self.sizes[0]
        self.x_mean = np.zeros(n) if x_mean is None else np.asarray(x_mean, dtype=float)
        self.x_sd = np.ones(n) if x_sd is None else np.asarray(x_sd, dtype=float)
        if activation not in ("tanh", "identity"):
            raise ValueError(f"unsupported activation {activation!r}")
        self.activation = activation
        self.history: dict = {}

    @classmethod
    def init(cls, sizes: Sequence[int], seed: int = 0, features: Sequence[str] = (),
             activation: str = "tanh") -> "Mlp":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            lim = math.sqrt(6.0 / (a + b))
            ws.append(rng.uniform(-lim, lim, size=(a, b)))
            bs.append(np.zeros(b))
        return cls(sizes, ws, bs, features, activation=activation)

    @property
    def n_inputs(self) -> int:
        return self.sizes[0]

    def copy(self) -> "Mlp":
        m = Mlp(self.sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                self.features, self.x_mean.copy(), self.x_sd.copy(), self.activation)
        m.history = json.loads(json.dumps(self.history))
        return m

    # -- normalisation -------------------------------------------------
    def fit_normalization(self, X: np.ndarray):
        X = np.asarray(X, dtype=float)
        self.x_mean = X.mean(axis=0)
        sd = X.std(axis=0)
        self.x_sd = np.where(sd > 0, sd, 1.0)

    def normalize(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_sd

    def denormalize(self, Xn) -> np.ndarray:
        return np.asarray(Xn, dtype=float) * self.x_sd + self.x_mean

    # -- forward / backward ---------------------------------------------
    def _act(self, z):
        return np.tanh(z) if self.activation == "tanh" else z

    def _forward(self, Xn):
        acts = [Xn]
        h = Xn
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = z if i == last else self._act(z)
            acts.append(h)
        return acts

    def forward(self, features) -> np.ndarray:
        """Force estimate for raw (unnormalised) feature rows."""
        X = np.atleast_2d(np.asarray(features, dtype=float))
        if X.shape[1] != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} features, got {X.shape[1]}")
        return self._forward(self.normalize(X))[-1][:, 0]

    predict = forward

    def loss_and_grad(self, Xn: np.ndarray, y: np.ndarray, l1: float = 0.0):
        """Loss and gradients w.r.t. (weights, biases) for normalised inputs."""
        acts = self._forward(Xn)
        n = Xn.shape[0]
        err = acts[-1][:, 0] - y
        loss = float(err @ err) / n
        if l1:
            loss += l1 * sum(float(np.abs(W).sum()) for W in self.weights)
        delta = (2.0 / n) * err[:, None]
        gW = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            gW[i] = acts[i].T @ delta
            gb[i] = delta.sum(axis=0)
            if l1:
                gW[i] = gW[i] + l1 * np.sign(self.weights[i])
            if i > 0:
                delta = delta @ self.weights[i].T
                if self.activation == "tanh":
                    delta = delta * (1.0 - acts[i] ** 2)
        return loss, gW, gb

    def params(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    # -- serialisation ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
            "sizes": self.sizes, "activation": self.activation, "features": list(self.features),
            "x_mean": self.x_mean.tolist(), "x_sd": self.x_sd.tolist(),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a teleopsim MLP checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')}")
        sizes = d["sizes"]
        ws = [np.asarray(w, dtype=float).reshape(a, b)
              for w, a, b in zip(d["weights"], sizes[:-1], sizes[1:])]
        m = cls(sizes, ws, d["biases"], d["features"], d["x_mean"], d["x_sd"], d["activation"])
        m.history = d.get("history", {})
        return m

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "Mlp":
        return cls.from_dict(json.loads(Path(path).read_text()))


def forward(m: Mlp, features) -> np.ndarray:
    return m.forward(features)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.001
    l1: float = 0.001
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0 or self.l1 < 0:
            raise ValueError("learning_rate must be positive and l1 non-negative")


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    is_train: np.ndarray
    features: tuple
    condition: str = "NF"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, len(self.features))
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        self.is_train = np.asarray(self.is_train, dtype=bool).reshape(-1)
        if not (len(self.X) == len(self.y) == len(self.is_train)):
            raise ValueError("dataset arrays have mismatched lengths")

    def __len__(self):
        return len(self.y)

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.X[self.is_train], self.y[self.is_train]

    @property
    def validation(self) -> tuple[np.ndarray, np.ndarray]:
        return self.X[~self.is_train], self.y[~self.is_train]

    @property
    def n_train(self) -> int:
        return int(self.is_train.sum())

    @property
    def n_validation(self) -> int:
        return int((~self.is_train).sum())

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx], self.is_train[idx], self.features, self.condition)

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(self.features) + ["target", "condition", "split"])
            for row, y, tr in zip(self.X.tolist(), self.y.tolist(), self.is_train.tolist()):
                w.writerow([repr(v) for v in row] + [repr(y), self.condition,
                                                     "train" if tr else "validation"])
        return path

    @classmethod
    def read_csv(cls, path) -> "Dataset":
        with Path(path).open(newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            rows = list(r)
        feats = tuple(header[:-3])
        X = np.array([[float(v) for v in row[:-3]] for row in rows]).reshape(-1, len(feats))
        y = np.array([float(row[-3]) for row in rows])
        cond = rows[0][-2] if rows else "NF"
        tr = np.array([row[-1] == "train" for row in rows], dtype=bool)
        return cls(X, y, tr, feats, cond)


def concat(parts: Sequence[Dataset], condition: str | None = None) -> Dataset:
    parts = [p for p in parts if len(p)]
    if not parts:
        raise ValueError("nothing to concatenate")
    feats = parts[0].features
    if any(p.features != feats for p in parts):
        raise ValueError("feature lists differ")
    return Dataset(np.vstack([p.X for p in parts]), np.concatenate([p.y for p in parts]),
                   np.concatenate([p.is_train for p in parts]), feats,
                   condition or parts[0].condition)


def log_features(lg: RunLog, features: Sequence[str], rows=None) -> np.ndarray:
    """Feature matrix from log rows; ``prev_estimate`` is the logged estimate one row earlier."""
    cols = []
    for name in features:
        if name == "prev_estimate":
            est = lg["F_estimate"]
            prev = np.concatenate([[0.0], est[:-1]])
            cols.append(prev)
        else:
            try:
                cols.append(lg[FEATURE_COLUMNS[name]])
            except KeyError:
                raise ValueError(f"unknown feature {name!r}") from None
    X = np.column_stack(cols) if cols else np.empty((len(lg), 0))
    return X if rows is None else X[rows]


def generate_dataset(logs: Sequence[RunLog], condition: str, features: Sequence[str],
                     rate: float = 60.0, train_fraction: float = 2.0 / 3.0,
                     seed: int = 0) -> Dataset:
    """Rows sampled at ``rate`` from each log; target is the ground-truth force.

    Rows are split at random (seeded) into training and validation parts in
    the ratio ``train_fraction : 1 - train_fraction``.
    """
    if not logs:
        raise ValueError("generate_dataset needs at least one log")
    Xs, ys = [], []
    for lg in logs:
        t = lg["t"]
        log_rate = lg.meta.get("log_rate") or 1.0 / (t[1] - t[0])
        duration = t[-1] + 1.0 / log_rate
        n = int(math.floor(duration * rate + 1e-9))
        idx = np.round(np.arange(n) * log_rate / rate).astype(int)
        idx = idx[idx < len(lg)]
        Xs.append(log_features(lg, features, idx))
        ys.append(lg["F_ground_truth"][idx])
    X = np.vstack(Xs)
    y = np.concatenate(ys)
    n = len(y)
    order = np.random.default_rng(seed).permutation(n)
    is_train = np.zeros(n, dtype=bool)
    is_train[order[: int(round(train_fraction * n))]] = True
    return Dataset(X, y, is_train, tuple(features), condition)


def _mse(model: Mlp, X, y) -> float:
    if len(y) == 0:
        return math.nan
    e = model.forward(X) - y
    return float(e @ e) / len(y)


def train(m: Mlp, d: Dataset, cfg: TrainConfig) -> Mlp:
    """Adam on minibatches, starting from ``m``'s weights; returns a new model.

    Input standardisation is refit on the training split. Per-epoch training
    loss (regularised, averaged over batches) and validation MSE are stored
    in ``model.history``.
    """
    Xtr, ytr = d.train
    if len(ytr) == 0:
        raise TrainingError("training split is empty")
    model = m.copy()
    model.features = tuple(d.features)
    model.fit_normalization(Xtr)
    Xn = model.normalize(Xtr)
    Xva, yva = d.validation
    rng = np.random.default_rng(cfg.seed)
    params = model.params()
    mom = [np.zeros_like(p) for p in params]
    vel = [np.zeros_like(p) for p in params]
    nW = len(model.weights)
    step = 0
    hist = {"train_loss": [], "val_mse": []}
    n = len(ytr)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total, batches = 0.0, 0
        for s in range(0, n, cfg.batch_size):
            b = order[s:s + cfg.batch_size]
            loss, gW, gb = model.loss_and_grad(Xn[b], ytr[b], cfg.l1)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, step {step}: {loss}; "
                    f"max |w| = {max(float(np.abs(w).max()) for w in model.weights):.3g}")
            step += 1
            c1 = 1.0 - cfg.beta1 ** step
            c2 = 1.0 - cfg.beta2 ** step
            for i, g in enumerate(gW + gb):
                mom[i] = cfg.beta1 * mom[i] + (1.0 - cfg.beta1) * g
                vel[i] = cfg.beta2 * vel[i] + (1.0 - cfg.beta2) * g * g
                params[i] -= cfg.learning_rate * (mom[i] / c1) / (np.sqrt(vel[i] / c2) + cfg.eps)
            total += loss
            batches += 1
        hist["train_loss"].append(total / batches)
        hist["val_mse"].append(_mse(model, Xva, yva))
    model.weights = params[:nW]
    model.biases = params[nW:]
    model.history = hist
    return model


def balance(original: Dataset, new: Dataset, seed: int = 0) -> Dataset:
    """Concatenate with the larger training split subsampled to the smaller's size."""
    n = min(original.n_train, new.n_train)
    rng = np.random.default_rng(seed)
    parts = []
    for ds in (original, new):
        tr = np.flatnonzero(ds.is_train)
        va = np.flatnonzero(~ds.is_train)
        if len(tr) > n:
            tr = np.sort(rng.choice(tr, size=n, replace=False))
        parts.append(ds.subset(np.concatenate([tr, va])))
    return concat(parts, condition=new.condition)


def refit(base: Mlp, original: Dataset, new_data: Dataset | None, cfg: TrainConfig) -> Mlp:
    """Retrain ``base``'s architecture from a fresh initialisation on original + new data."""
    fresh = Mlp.init(base.sizes, seed=cfg.seed, features=base.features,
                     activation=base.activation)
    if new_data is None or len(new_data) == 0:
        return train(fresh, original, cfg)
    if len(original) == 0:
        raise ValueError("original dataset is empty")
    return train(fresh, balance(original, new_data, cfg.seed), cfg)


def validation_rmse(model: Mlp, d: Dataset) -> float:
    X, y = d.validation
    return math.sqrt(_mse(model, X, y))


def flat_params(m: Mlp) -> np.ndarray:
    return np.concatenate([p.ravel() for p in m.params()])


def set_flat_params(m: Mlp, theta: np.ndarray):
    k = 0
    for p in m.params():
        p[...] = theta[k:k + p.size].reshape(p.shape)
        k += p.size
