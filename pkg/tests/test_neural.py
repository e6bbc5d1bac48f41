import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from teleopsim import engine, neural
from teleopsim import trajectory as tr
from teleopsim.environment import TissueParams
from teleopsim.estimation import preset


def _fd_check(m, X, y, l1, h=1e-6):
    loss, gW, gb = m.loss_and_grad(X, y, l1)
    analytic = np.concatenate([g.ravel() for g in gW + gb])
    theta = neural.flat_params(m).copy()
    num = np.empty_like(theta)
    for i in range(theta.size):
        for sgn in (1, -1):
            t = theta.copy()
            t[i] += sgn * h
            neural.set_flat_params(m, t)
            val = m.loss_and_grad(X, y, l1)[0]
            num[i] = val if sgn == 1 else (num[i] - val) / (2 * h)
    neural.set_flat_params(m, theta)
    return np.linalg.norm(analytic - num) / np.linalg.norm(num)


@pytest.mark.parametrize("activation,sizes", [("tanh", [3, 5, 4, 1]), ("tanh", [2, 6, 1]),
                                              ("identity", [3, 1])])
@pytest.mark.parametrize("l1", [0.0, 0.01])
def test_gradient_matches_central_differences(activation, sizes, l1):
    rng = np.random.default_rng(1)
    m = neural.Mlp.init(sizes, seed=2, activation=activation)
    for b in m.biases:
        b[:] = rng.normal(0, 0.3, b.shape)
    X = rng.normal(size=(40, sizes[0]))
    y = rng.normal(size=40)
    assert _fd_check(m, X, y, l1) < 1e-5


def test_forward_trivial_cases():
    m = neural.Mlp([2, 3, 1], [np.zeros((2, 3)), np.zeros((3, 1))], [np.zeros(3), np.array([0.7])])
    assert np.all(m.forward(np.random.default_rng(0).normal(size=(5, 2))) == 0.7)
    lin = neural.Mlp([1, 1], [np.array([[2.0]])], [np.zeros(1)], activation="identity")
    assert lin.forward([[3.0]])[0] == 6.0
    with pytest.raises(ValueError):
        lin.forward([[1.0, 2.0]])


def _linear_dataset(n=600, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 2, n)
    is_train = np.arange(n) % 3 != 0
    return neural.Dataset(x[:, None], 3.0 * x, is_train, ("psm_position",))


def test_linear_target_slope_recovered():
    d = _linear_dataset()
    Xtr, ytr = d.train
    A = np.column_stack([Xtr[:, 0], np.ones(len(ytr))])
    ls_slope = np.linalg.lstsq(A, ytr, rcond=None)[0][0]
    m = neural.train(neural.Mlp.init([1, 1], seed=0, activation="identity"), d,
                     neural.TrainConfig(epochs=300, learning_rate=0.01, l1=0.0, seed=0))
    slope = float(m.forward([[1.0]])[0] - m.forward([[0.0]])[0])
    assert abs(slope - ls_slope) < 1e-3
    assert abs(slope - 3.0) < 1e-3


def test_strong_l1_drives_weights_to_zero():
    d = _linear_dataset()
    m = neural.train(neural.Mlp.init([1, 8, 1], seed=0), d,
                     neural.TrainConfig(epochs=60, learning_rate=0.01, l1=10.0))
    assert max(float(np.abs(W).max()) for W in m.weights) < 0.05
    out = m.forward(np.linspace(-2, 2, 9)[:, None])
    assert np.ptp(out) < 0.1 * np.ptp(3.0 * np.linspace(-2, 2, 9))


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=30))
def test_normalization_round_trip(vals):
    X = np.array(vals).reshape(-1, 1)
    m = neural.Mlp.init([1, 1])
    m.fit_normalization(X)
    assert np.allclose(m.denormalize(m.normalize(X)), X, rtol=0, atol=1e-12 * max(1.0, np.abs(X).max()))


def test_normalization_uses_training_split_only():
    d = _linear_dataset()
    d.X[~d.is_train] += 100.0
    m = neural.train(neural.Mlp.init([1, 1], activation="identity"), d,
                     neural.TrainConfig(epochs=1))
    assert m.x_mean[0] == pytest.approx(d.train[0].mean())


def test_training_loss_mostly_monotone():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(300, 2))
    y = X @ np.array([1.5, -0.5]) + 0.2
    d = neural.Dataset(X, y, np.ones(300, bool), ("psm_position", "psm_velocity"))
    m = neural.train(neural.Mlp.init([2, 8, 1], seed=1), d,
                     neural.TrainConfig(epochs=40, learning_rate=1e-3, l1=0.0))
    loss = np.array(m.history["train_loss"])
    assert np.mean(np.diff(loss) <= 0) >= 0.9
    assert loss[-1] < loss[0]


def test_training_is_deterministic_and_rejects_nan():
    d = _linear_dataset()
    cfg = neural.TrainConfig(epochs=3, seed=4)
    a = neural.train(neural.Mlp.init([1, 4, 1], seed=1), d, cfg)
    b = neural.train(neural.Mlp.init([1, 4, 1], seed=1), d, cfg)
    assert np.array_equal(neural.flat_params(a), neural.flat_params(b))
    bad = neural.Dataset(d.X, np.full(len(d), np.nan), d.is_train, d.features)
    with pytest.raises(neural.TrainingError):
        neural.train(neural.Mlp.init([1, 4, 1]), bad, cfg)
    empty = neural.Dataset(d.X, d.y, np.zeros(len(d), bool), d.features)
    with pytest.raises(neural.TrainingError):
        neural.train(neural.Mlp.init([1, 4, 1]), empty, cfg)


def test_checkpoint_round_trip(tmp_path):
    m = neural.train(neural.Mlp.init([1, 4, 1], seed=3), _linear_dataset(),
                     neural.TrainConfig(epochs=2))
    path = m.save(tmp_path / "m.json")
    back = neural.Mlp.load(path)
    X = np.linspace(-2, 2, 11)[:, None]
    assert np.array_equal(back.forward(X), m.forward(X))
    assert back.features == m.features and back.history == m.history
    doc = m.to_dict()
    assert doc["format"] == "teleopsim-mlp" and doc["version"] == 1
    with pytest.raises(ValueError):
        neural.Mlp.from_dict(dict(doc, version=99))
    with pytest.raises(ValueError):
        neural.Mlp.from_dict(dict(doc, format="other"))


@pytest.fixture(scope="module")
def twenty_second_log():
    proto = tr.custom_protocol([(0.05, 5.0), (0.05, 5.0), (0.0, 5.0), (0.0, 5.0)])
    return engine.run(engine.SimConfig(), proto, preset("fs"), TissueParams())


def test_dataset_rows_and_split(twenty_second_log):
    d = neural.generate_dataset([twenty_second_log], "NF", ["psm_position", "psm_velocity"],
                                rate=60.0, seed=1)
    assert len(d) == 1200
    assert d.n_train == 800 and d.n_validation == 400
    again = neural.generate_dataset([twenty_second_log], "NF", ["psm_position", "psm_velocity"],
                                    rate=60.0, seed=1)
    assert np.array_equal(d.is_train, again.is_train)
    assert np.all(np.isfinite(d.X)) and np.all(np.isfinite(d.y))
    with pytest.raises(ValueError):
        neural.generate_dataset([], "NF", ["psm_position"])
    with pytest.raises(ValueError):
        neural.generate_dataset([twenty_second_log], "NF", ["F_true"])


def test_dataset_csv_round_trip(tmp_path, twenty_second_log):
    d = neural.generate_dataset([twenty_second_log], "EF", ["psm_position", "master_force"])
    back = neural.Dataset.read_csv(d.write_csv(tmp_path / "d.csv"))
    assert np.array_equal(back.X, d.X) and np.array_equal(back.y, d.y)
    assert np.array_equal(back.is_train, d.is_train)
    assert back.condition == "EF" and back.features == d.features


def test_refit_balance_and_degenerate_case():
    orig = _linear_dataset(900, seed=1)
    new = _linear_dataset(300, seed=2)
    bal = neural.balance(orig, new, seed=0)
    n_o = sum(1 for i in range(len(bal)) if bal.is_train[i]) - new.n_train
    assert abs(n_o - new.n_train) / max(n_o, new.n_train) <= 0.05
    cfg = neural.TrainConfig(epochs=2, seed=5)
    base = neural.Mlp.init([1, 4, 1], seed=0, features=("psm_position",))
    plain = neural.train(neural.Mlp.init([1, 4, 1], seed=5, features=("psm_position",)), orig, cfg)
    empty = orig.subset(np.array([], dtype=int))
    assert np.array_equal(neural.flat_params(neural.refit(base, orig, empty, cfg)),
                          neural.flat_params(plain))
    assert np.array_equal(neural.flat_params(neural.refit(base, orig, None, cfg)),
                          neural.flat_params(plain))


def test_refit_starts_from_scratch():
    orig = _linear_dataset(300, seed=1)
    new = _linear_dataset(300, seed=2)
    cfg = neural.TrainConfig(epochs=2, seed=0)
    b1 = neural.train(neural.Mlp.init([1, 4, 1], seed=0), orig, cfg)
    b2 = neural.train(neural.Mlp.init([1, 4, 1], seed=9), orig, cfg)
    r1 = neural.refit(b1, orig, new, cfg)
    r2 = neural.refit(b2, orig, new, cfg)
    assert np.array_equal(neural.flat_params(r1), neural.flat_params(r2))


def test_default_split_matches_reported_proportions():
    # 14020 training and 7036 validation examples for the original model
    reported = 14020 / (14020 + 7036)
    assert abs(reported - 2 / 3) < 0.002
    d = neural.generate_dataset([engine.run(engine.SimConfig(), tr.custom_protocol([(0.0, 1.0)]),
                                            preset("fs"), TissueParams())], "FS", ["psm_position"])
    assert d.n_train / len(d) == pytest.approx(reported, abs=0.01)
