import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from teleopsim.plant import DivergenceError, HumanSsmParams, PlantState, step, tracking_force
from teleopsim.trajectory import DesiredState

P = HumanSsmParams()
DT = 1.0 / 500.0
# omega_n = sqrt(k/m), zeta = b / (2 sqrt(k m)), f_d = omega_n sqrt(1 - zeta^2) / (2 pi)
F_D = 2.022645814896541


def free_response(x0, n, dt=DT, p=P):
    s = PlantState(x0, 0.0)
    hold = DesiredState(0.0, 0.0, False)
    xs = [s.x]
    for _ in range(n):
        s = step(s, tracking_force(s, hold, p), 0.0, dt, p)
        xs.append(s.x)
    return np.array(xs)


def test_defaults():
    assert (P.m, P.b, P.k, P.k_v) == (0.75, 6.45, 135.0, 20.0)
    assert P.damped_frequency_hz == pytest.approx(F_D, rel=1e-12)


def test_tracking_force_examples():
    eq = PlantState(0.0, 0.0)
    assert tracking_force(eq, DesiredState(0.0, 0.0, False), P) == 0.0
    assert tracking_force(eq, DesiredState(0.01, 0.0, False), P) == pytest.approx(1.35)
    assert tracking_force(eq, DesiredState(0.0, 0.1, True), P) == pytest.approx(2.0)
    # the velocity term is dropped while holding
    assert tracking_force(eq, DesiredState(0.0, 0.1, False), P) == 0.0


def test_balanced_forces_keep_velocity():
    s = step(PlantState(0.01, 0.3), 2.5, 2.5, DT, P)
    assert s.xd == 0.3
    assert s.x == pytest.approx(0.01 + DT * 0.3)


def _zero_crossing_frequency(x, dt):
    sgn = np.signbit(x)
    idx = np.flatnonzero(sgn[1:] != sgn[:-1])
    # linear interpolation of crossing instants
    tc = (idx + x[idx] / (x[idx] - x[idx + 1])) * dt
    return 1.0 / (2.0 * np.mean(np.diff(tc)))


def test_damped_frequency_matches_analytic():
    x = free_response(0.01, 2000)
    f = _zero_crossing_frequency(x, DT)
    assert abs(f - F_D) / F_D < 0.02


def test_energy_decreases_every_100_steps():
    hold = DesiredState(0.0, 0.0, False)
    s = PlantState(0.01, 0.0)
    energies = []
    for i in range(1001):
        if i % 100 == 0:
            energies.append(0.5 * P.m * s.xd ** 2 + 0.5 * P.k * s.x ** 2)
        s = step(s, tracking_force(s, hold, P), 0.0, DT, P)
    assert all(b < a for a, b in zip(energies, energies[1:]))


def test_static_balance_against_feedback():
    hold = DesiredState(0.02, 0.0, False)
    s = PlantState(0.02, 0.0)
    for _ in range(5000):
        s = step(s, tracking_force(s, hold, P), 1.0, DT, P)
    assert s.x == pytest.approx(0.02 - 1.0 / 135.0, abs=1e-9)


def test_integrator_convergence_in_rate():
    hold = DesiredState(0.02, 0.0, False)

    def settle(rate):
        s = PlantState(0.0, 0.0)
        for _ in range(int(20 * rate)):
            s = step(s, tracking_force(s, hold, P), 0.5, 1.0 / rate, P)
        return s.x

    assert abs(settle(500) - settle(1000)) < 1e-6


def test_divergence_error():
    with pytest.raises(DivergenceError):
        step(PlantState(0.0, 0.0), math.inf, 0.0, DT, P)


def test_invalid_params():
    with pytest.raises(ValueError):
        HumanSsmParams(m=0.0)


@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(-10, 10), st.floats(-10, 10))
def test_step_is_semi_implicit_euler(x, v, fc, ff):
    s = step(PlantState(x, v), fc, ff, DT, P)
    v1 = v + DT * (fc - ff) / P.m
    assert s.xd == v1
    assert s.x == x + DT * v1
