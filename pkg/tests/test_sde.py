import numpy as np
import pytest

from zakai_lab.errors import DivergenceError
from zakai_lab.model import MatrixField, SystemCorrelatedNoise, SystemCorrelatedSensor, VectorField, h_map, system_from_config
from zakai_lab.paths import StreamKey, TimeGrid, cumulate
from zakai_lab.scenarios import bounded_cn, bounded_cs
from zakai_lab.sde import (DriverPath, GaussianInitial, PointInitial, extract_vtilde, extract_wtilde,
                           load_trajectory_csv, log_weight_increment, propagate_particle_cn,
                           propagate_particle_cs, residual_noise, save_trajectory_csv, simulate_truth_cn,
                           simulate_truth_cs)


def cn(b1=None, s0=0.0, s1=0.0, b2=None, s2=1.0, n=1, m=1, d=1):
    return SystemCorrelatedNoise(n, m, d, b1 or VectorField(n, m), MatrixField(n, m, d, S0=np.full((n, d), s0)),
                                 MatrixField(n, m, m, S0=np.full((n, m), s1)), b2 or VectorField(n, m),
                                 np.eye(m) * s2)


def cs(s2, s3, b1=None, s1=0.0, b2=None):
    return SystemCorrelatedSensor(1, 1, 1, b1 or VectorField(1, 1), MatrixField(1, 1, 1, S0=[[s1]]),
                                  b2 or VectorField(1, 1), s2, s3)


BOUNDED_CN = system_from_config(bounded_cn()["system"])
BOUNDED_CS = system_from_config(bounded_cs()["system"])
GRID = TimeGrid(1.0, 200)


def test_frozen_signal():
    tr = simulate_truth_cn(cn(), GRID, StreamKey(1), PointInitial([0.4]))
    assert np.all(tr.X == 0.4)
    assert tr.Y[0, 0] == 0.0 and tr.X.shape == (201, 1)


def test_pure_noise_observation():
    tr = simulate_truth_cn(cn(s0=1.0), GRID, StreamKey(2), PointInitial([0.0]))
    assert np.array_equal(tr.increments, tr.noises["W"].increments)


def test_ou_terminal_variance():
    sys = cn(b1=VectorField(1, 1, A=[[-1.0]]), s0=1.0)
    grid = TimeGrid(1.0, 100)
    xs = np.array([simulate_truth_cn(sys, grid, StreamKey(3).child("run", i), PointInitial([0.0])).X[-1, 0]
                   for i in range(10_000)])
    target = (1 - np.exp(-2.0)) / 2
    se = np.sqrt(2.0 / (len(xs) - 1)) * target
    # Euler bias at dt=0.01 is about 1% of the variance, well inside 3 se
    assert abs(xs.var(ddof=1) - target) < 3 * se


def test_divergence_names_step():
    sys = cn(b1=lambda t, x: 1e200 * (1 + x * x))
    with pytest.raises(DivergenceError) as err, np.errstate(over="ignore", invalid="ignore"):
        simulate_truth_cn(sys, GRID, StreamKey(0), PointInitial([1.0]))
    assert err.value.step >= 1


def test_sensor_examples():
    th = 0.4
    tr = simulate_truth_cs(cs(0.0, 1.0, s1=1.0), GRID, StreamKey(4), PointInitial([0.0]))
    # with sigma2c = 0 the observation only sees B
    assert np.array_equal(tr.increments, tr.noises["B"].increments)
    still = simulate_truth_cs(cs(np.cos(th), np.sin(th)), GRID, StreamKey(5), PointInitial([2.0]))
    assert np.all(still.X == 2.0)


def test_sensor_observation_covariance():
    th = 0.9
    grid = TimeGrid(1.0, 100_000)
    tr = simulate_truth_cs(cs(np.cos(th), np.sin(th), s1=1.0), grid, StreamKey(6), PointInitial([0.0]))
    dY = tr.increments[:, 0]
    se = np.sqrt(2.0 / (grid.steps - 1)) * grid.dt
    assert abs(np.mean(dY * dY) - grid.dt) < 3 * se


def test_extract_wtilde_examples():
    sys = cn(s2=2.0)
    Y = np.array([[0.0], [0.2], [-0.2]])
    assert np.allclose(extract_wtilde(sys, Y, 0.1).increments[:, 0], [0.1, -0.2])
    tr = simulate_truth_cn(cn(s0=1.0, s1=0.5), GRID, StreamKey(7), PointInitial([0.0]))
    assert np.array_equal(extract_wtilde(cn(s0=1.0, s1=0.5), tr, GRID.dt).increments, tr.noises["W"].increments)


def test_wtilde_identity_on_general_run():
    tr = simulate_truth_cn(BOUNDED_CN, GRID, StreamKey(8), GaussianInitial([0.2], [[0.25]]))
    wt = extract_wtilde(BOUNDED_CN, tr, GRID.dt).increments
    h = np.array([h_map(BOUNDED_CN, j * GRID.dt, tr.X[j]) for j in range(GRID.steps)])
    assert np.max(np.abs(wt - tr.noises["W"].increments - h * GRID.dt)) < 1e-14


def test_extract_vtilde():
    tr = simulate_truth_cs(BOUNDED_CS, GRID, StreamKey(9), GaussianInitial([0.2], [[0.25]]))
    assert np.array_equal(extract_vtilde(BOUNDED_CS, tr, GRID.dt).increments, tr.increments)
    sys = cs(0.6, 0.8, s1=0.5)
    tr = simulate_truth_cs(sys, GRID, StreamKey(10), PointInitial([0.0]))
    V = 0.6 * tr.noises["W"].increments + 0.8 * tr.noises["B"].increments
    assert np.max(np.abs(extract_vtilde(sys, tr, GRID.dt).increments - V)) < 1e-15
    assert np.all(extract_vtilde(sys, np.zeros((5, 1)), 0.1).increments == 0)


def test_log_weight_examples():
    assert log_weight_increment(np.zeros(1), np.array([0.3]), 0.01) == 0.0
    rng = np.random.default_rng(0)
    dW = rng.normal(scale=0.1, size=100)
    c, dt = 0.7, 0.01
    logw = sum(log_weight_increment(np.array([c]), np.array([w]), dt) for w in dW)
    assert logw == pytest.approx(c * cumulate(dW[:, None])[-1, 0] - 0.5 * c * c * 1.0, abs=1e-12)


def test_weight_is_mean_one():
    rng = np.random.default_rng(1)
    dt, steps, c = 0.01, 100, 0.8
    dW = rng.normal(scale=np.sqrt(dt), size=(10_000, steps, 1))
    w = np.exp(log_weight_increment(np.full((1,), c), dW, dt).sum(axis=1))
    assert abs(w.mean() - 1.0) < 3 * w.std(ddof=1) / np.sqrt(len(w))
    assert np.all(w > 0) and np.all(np.isfinite(w))


def test_propagate_cn_examples():
    x, dt = np.array([0.5]), 0.01
    sys = cn(b1=VectorField(1, 1, A=[[-1.0]]), s0=1.0)
    assert np.array_equal(propagate_particle_cn(sys, 0.0, x, np.array([0.2]), np.array([0.1]), dt),
                          x + sys.b1(0.0, x) * dt + 0.1)
    assert propagate_particle_cn(cn(s1=1.0), 0.0, np.array([1.0]), np.array([0.3]), np.zeros(1), dt) == \
        pytest.approx([1.3])


def test_reference_dynamics_replay_truth():
    tr = simulate_truth_cn(BOUNDED_CN, GRID, StreamKey(11), GaussianInitial([0.2], [[0.25]]))
    wt = extract_wtilde(BOUNDED_CN, tr, GRID.dt).increments
    dB = tr.noises["B"].increments
    x = tr.X[0]
    for j in range(GRID.steps):
        x = propagate_particle_cn(BOUNDED_CN, j * GRID.dt, x, wt[j], dB[j], GRID.dt)
        assert np.all(np.abs(x - tr.X[j + 1]) <= 1e-12 * np.maximum(1.0, np.abs(tr.X[j + 1])))


def test_propagate_cs_limits():
    dt = 0.01
    indep = cs(0.0, 1.0, s1=1.0)
    assert np.allclose(residual_noise(indep, np.array([1.0]), dt), [0.1])
    full = cs(1.0, 0.0, s1=1.0)
    assert np.all(residual_noise(full, np.array([3.0]), dt) == 0)
    x = propagate_particle_cs(full, 0.0, np.array([0.0]), np.array([0.25]), np.zeros(1), dt)
    assert x == pytest.approx([0.25])


def test_residual_decomposition_covariance():
    sys = SystemCorrelatedSensor(1, 2, 2, VectorField(1, 1), MatrixField(1, 1, 2), VectorField(1, 2),
                                 np.array([[0.6, 0.0], [0.0, 0.3]]), np.diag([0.8, np.sqrt(0.91)]))
    rng = np.random.default_rng(2)
    dt, K = 0.01, 100_000
    dV = rng.normal(scale=np.sqrt(dt), size=(K, 2))
    dR = residual_noise(sys, rng.normal(size=(K, 2)), dt)
    dW = dV @ sys.sigma2c + dR
    cov = dW.T @ dW / K
    assert np.allclose(cov, np.eye(2) * dt, atol=4 * dt * np.sqrt(2 / K))


def test_trajectory_csv_roundtrip(tmp_path):
    tr = simulate_truth_cn(BOUNDED_CN, TimeGrid(1.0, 10), StreamKey(12), PointInitial([0.1]))
    save_trajectory_csv(tr, tmp_path / "t.csv")
    back = load_trajectory_csv(tmp_path / "t.csv")
    assert np.array_equal(back.X, tr.X) and np.array_equal(back.Y, tr.Y)


def test_driver_roles():
    with pytest.raises(ValueError):
        DriverPath(np.zeros((2, 1)), "W", 0.1)
