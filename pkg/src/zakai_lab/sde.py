"""Euler-Maruyama simulation of both systems and the change of measure.

All coefficients are frozen at the left end point of each step.  Under the
reference measure the observation-derived process (``Wtilde`` for the
correlated-noise system, ``Vtilde`` for the sensor system) is a Brownian
motion, and a signal particle carries the log-likelihood weight
``rho . dDriver - |rho|^2 dt / 2`` per step.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError
from .model import psd_sqrt, h_map, matvec_b
from .paths import cumulate, sample_brownian


class GaussianInitial:
    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, float))
        self.cov = np.asarray(cov, float).reshape(len(self.mean), len(self.mean))
        self._factor = psd_sqrt(self.cov)

    @property
    def n(self):
        return len(self.mean)

    def sample(self, gen, size):
        z = gen.standard_normal((size, self.n))
        return self.mean + (z[:, None, :] * self._factor).sum(axis=-1)


class UniformInitial:
    def __init__(self, low, high):
        self.low = np.atleast_1d(np.asarray(low, float))
        self.high = np.atleast_1d(np.asarray(high, float))

    @property
    def n(self):
        return len(self.low)

    def sample(self, gen, size):
        return self.low + (self.high - self.low) * gen.random((size, self.n))


class PointInitial:
    def __init__(self, x):
        self.x = np.atleast_1d(np.asarray(x, float))

    @property
    def n(self):
        return len(self.x)

    def sample(self, gen, size):
        return np.broadcast_to(self.x, (size, self.n)).copy()


def initial_from_config(cfg, n, where="initial"):
    kind = cfg.get("kind", "gaussian")
    try:
        if kind == "gaussian":
            law = GaussianInitial(cfg["mean"], cfg["cov"])
        elif kind == "uniform":
            law = UniformInitial(cfg["low"], cfg["high"])
        elif kind == "point":
            law = PointInitial(cfg["x"])
        else:
            raise ConfigError(f"{where}.kind", f"unknown initial law {kind!r}")
    except KeyError as exc:
        raise ConfigError(f"{where}.{exc.args[0]}", "missing field") from None
    if law.n != n:
        raise ConfigError(where, f"dimension {law.n} does not match n={n}")
    return law


@dataclass(frozen=True, eq=False)
class TruthTrajectory:
    X: np.ndarray
    Y: np.ndarray
    dt: float
    noises: dict = field(default_factory=dict)
    increments: np.ndarray = None

    def __post_init__(self):
        # observation increments as simulated; differencing Y would round
        if self.increments is None:
            object.__setattr__(self, "increments", np.diff(self.Y, axis=0))

    @property
    def times(self):
        return np.arange(self.X.shape[0]) * self.dt


@dataclass(frozen=True, eq=False)
class DriverPath:
    increments: np.ndarray
    role: str
    dt: float

    def __post_init__(self):
        if self.role not in ("Wtilde", "Vtilde"):
            raise ValueError(f"unknown driver role {self.role!r}")
        inc = np.asarray(self.increments, float)
        if not np.all(np.isfinite(inc)):
            raise ValueError("driver increments must be finite")
        object.__setattr__(self, "increments", inc)

    @property
    def steps(self):
        return self.increments.shape[0]

    @classmethod
    def from_brownian(cls, path, role):
        return cls(path.increments, role, path.dt)


def _check_finite(arr, step):
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(step)


def simulate_truth_cn(sys, grid, key, x0_sampler):
    """Simulate the correlated-noise system under the physical measure.

    Streams: ``key/x0``, ``key/B`` (d-dim), ``key/W`` (m-dim).
    """
    dB = sample_brownian(grid, sys.d, key.child("B"))
    dW = sample_brownian(grid, sys.m, key.child("W"))
    x = x0_sampler.sample(key.child("x0").generator(), 1)[0]
    dt = grid.dt
    X = np.empty((grid.steps + 1, sys.n))
    dY = np.empty((grid.steps, sys.m))
    X[0] = x
    for j in range(grid.steps):
        t = j * dt
        db, dw = dB.increments[j], dW.increments[j]
        X[j + 1] = (X[j] + sys.b1(t, X[j]) * dt + matvec_b(sys.sigma0(t, X[j]), db)
                    + matvec_b(sys.sigma1(t, X[j]), dw))
        dY[j] = sys.b2(t, X[j]) * dt + matvec_b(np.asarray(sys.sigma2(t)), dw)
        _check_finite(X[j + 1], j + 1)
    return TruthTrajectory(X, cumulate(dY), dt, {"B": dB, "W": dW}, dY)


def simulate_truth_cs(sys, grid, key, x0_sampler):
    """Simulate the correlated-sensor system under the physical measure."""
    dB = sample_brownian(grid, sys.d, key.child("B"))
    dW = sample_brownian(grid, sys.m, key.child("W"))
    x = x0_sampler.sample(key.child("x0").generator(), 1)[0]
    dt = grid.dt
    X = np.empty((grid.steps + 1, sys.n))
    dY = np.empty((grid.steps, sys.m))
    X[0] = x
    for j in range(grid.steps):
        t = j * dt
        db, dw = dB.increments[j], dW.increments[j]
        X[j + 1] = X[j] + sys.b1c(t, X[j]) * dt + matvec_b(sys.sigma1c(t, X[j]), dw)
        dY[j] = sys.b2c(t, X[j]) * dt + matvec_b(sys.sigma2c, dw) + matvec_b(sys.sigma3c, db)
        _check_finite(X[j + 1], j + 1)
    return TruthTrajectory(X, cumulate(dY), dt, {"B": dB, "W": dW}, dY)


def _increments(Y):
    if isinstance(Y, TruthTrajectory):
        return Y.increments
    return np.diff(np.asarray(Y, float), axis=0)


def extract_wtilde(sys, Y, dt):
    """Observation-derived Brownian increments ``sigma2(t_j)^{-1} dY_j``."""
    dY = _increments(Y)
    out = np.empty_like(dY)
    for j in range(dY.shape[0]):
        out[j] = sys.sigma2_inverse(j * dt) @ dY[j]
    return DriverPath(out, "Wtilde", dt)


def extract_vtilde(sys, Ycheck, dt):
    return DriverPath(_increments(Ycheck), "Vtilde", dt)


def log_weight_increment(rho, d_driver, dt):
    """Euler increment of the log likelihood weight, vectorized over leading axes."""
    rho = np.asarray(rho, float)
    return (rho * d_driver).sum(axis=-1) - 0.5 * (rho * rho).sum(axis=-1) * dt


def propagate_particle_cn(sys, t, x, d_wtilde, dB, dt, h=None):
    """One Euler step of the signal under the reference measure.

    ``dX = (b1 - sigma1 h) dt + sigma0 dB + sigma1 dWtilde``; ``h`` may be
    passed in when the caller already evaluated it.
    """
    s1 = sys.sigma1(t, x)
    if h is None:
        h = h_map(sys, t, x)
    drift = sys.b1(t, x) - matvec_b(s1, h)
    out = x + drift * dt + matvec_b(sys.sigma0(t, x), dB) + matvec_b(s1, d_wtilde)
    if not np.all(np.isfinite(out)):
        raise DivergenceError(int(round(t / dt)), "particle")
    return out


def propagate_particle_cs(sys, t, x, d_vtilde, dR, dt, b2=None):
    """One Euler step of the sensor-system signal under the reference measure.

    The signal noise splits as ``W = sigma2c^T V + R`` with ``R``
    independent of ``V`` and ``Cov(dR) = (I - sigma2c^T sigma2c) dt``;
    ``dR`` is supplied by the caller.
    """
    s1 = sys.sigma1c(t, x)
    if b2 is None:
        b2 = sys.b2c(t, x)
    coupled = (np.asarray(d_vtilde)[..., None, :] * sys.sigma2c.T).sum(axis=-1)
    shift = (np.asarray(b2)[..., None, :] * sys.sigma2c.T).sum(axis=-1)
    out = x + (sys.b1c(t, x) - matvec_b(s1, shift)) * dt + matvec_b(s1, coupled + dR)
    if not np.all(np.isfinite(out)):
        raise DivergenceError(int(round(t / dt)), "particle")
    return out


def residual_noise(sys, xi, dt):
    """Map standard normals ``xi`` (..., m) to ``dR`` with covariance
    ``(I - sigma2c^T sigma2c) dt``."""
    return np.sqrt(dt) * matvec_b(sys.residual_factor, xi)


def save_trajectory_csv(traj, filename):
    n, m = traj.X.shape[1], traj.Y.shape[1]
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"X{i + 1}" for i in range(n)] + [f"Y{i + 1}" for i in range(m)])
        for t, x, y in zip(traj.times, traj.X, traj.Y):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(v)) for v in y])


def load_trajectory_csv(filename):
    with open(filename, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    n = sum(1 for h in header if h.startswith("X"))
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    dt = float(data[1, 0] - data[0, 0]) if len(data) > 1 else 0.0
    return TruthTrajectory(data[:, 1:1 + n], data[:, 1 + n:], dt)
