"""Reference computations that do not share arithmetic with the solvers.

* :func:`kalman_bucy` - exact filter for linear-Gaussian systems with
  correlated signal/observation noise.
* :func:`moment_ode_oracle` - mean and covariance ODEs of a linear signal.
* :func:`lderiv_fd` - pushforward difference quotient for L-derivatives.
* :func:`reference_independent_filter` - the textbook weighted particle
  filter, valid only when signal and observation noises are independent.
* :func:`w2_bruteforce` - optimal matching by enumerating permutations.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .calculus import eval_G
from .errors import RiccatiBlowupError, UnsupportedInputError
from .measure import WeightedCloud, _check_uniform_pair, assignment_cost, cost_matrix
from .model import MatrixField, SystemCorrelatedNoise, VectorField, psd_sqrt
from .sde import DriverPath


@dataclass(frozen=True, eq=False)
class LinearGaussianSpec:
    """``dX = A X dt + sigma0 dB + sigma1 dW``, ``dY = C X dt + sigma2 dW``."""
    A: np.ndarray
    C: np.ndarray
    sigma0: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    m0: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, float))
        n = A.shape[0]
        C = np.asarray(self.C, float).reshape(-1, n)
        m = C.shape[0]
        s0 = np.asarray(self.sigma0, float).reshape(n, -1)
        s1 = np.asarray(self.sigma1, float).reshape(n, m)
        s2 = np.asarray(self.sigma2, float).reshape(m, m)
        if A.shape != (n, n):
            raise ValueError("A must be square")
        if np.linalg.cond(s2) > 1e12:
            raise ValueError("sigma2 must be invertible")
        for name, v in (("A", A), ("C", C), ("sigma0", s0), ("sigma1", s1), ("sigma2", s2)):
            object.__setattr__(self, name, v)
        object.__setattr__(self, "m0", np.asarray(self.m0, float).reshape(n))
        object.__setattr__(self, "P0", np.asarray(self.P0, float).reshape(n, n))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.C.shape[0]

    @property
    def d(self):
        return self.sigma0.shape[1]

    def to_system(self):
        n, m, d = self.n, self.m, self.d
        return SystemCorrelatedNoise(
            n, m, d,
            b1=VectorField(n, n, A=self.A),
            sigma0=MatrixField(n, n, d, S0=self.sigma0),
            sigma1=MatrixField(n, n, m, S0=self.sigma1),
            b2=VectorField(n, m, A=self.C),
            sigma2=self.sigma2,
        )

    @classmethod
    def from_sensor(cls, A, C, sigma1c, sigma2c, sigma3c, m0, P0):
        """Equivalent spec for a linear correlated-sensor system.

        The observation noise ``sigma2c W + sigma3c B`` is a standard
        Brownian motion ``V``; the signal noise splits into the part along
        ``V`` (``sigma1c sigma2c^T``) and an independent remainder.
        """
        s1c = np.atleast_2d(np.asarray(sigma1c, float))
        s2c = np.atleast_2d(np.asarray(sigma2c, float))
        m = s2c.shape[0]
        rest = s1c @ psd_sqrt(np.eye(m) - s2c.T @ s2c)
        return cls(A, C, rest, s1c @ s2c.T, np.eye(m), m0, P0)


def kalman_bucy(spec, Y, grid):
    """Euler-discretized Kalman-Bucy filter with correlated noise.

    Gain ``K = (P C^T + sigma1 sigma2^T)(sigma2 sigma2^T)^{-1}``; the
    covariance is symmetrized after each step.  Returns ``(means, covs)``
    of shapes ``(steps+1, n)`` and ``(steps+1, n, n)``.
    """
    Y = np.asarray(Y, float).reshape(grid.steps + 1, -1)
    A, C = spec.A, spec.C
    Q = spec.sigma0 @ spec.sigma0.T + spec.sigma1 @ spec.sigma1.T
    S = spec.sigma1 @ spec.sigma2.T
    Rinv = np.linalg.inv(spec.sigma2 @ spec.sigma2.T)
    R = spec.sigma2 @ spec.sigma2.T
    dt = grid.dt
    means = np.empty((grid.steps + 1, spec.n))
    covs = np.empty((grid.steps + 1, spec.n, spec.n))
    mean, P = spec.m0.copy(), spec.P0.copy()
    means[0], covs[0] = mean, P
    for j in range(grid.steps):
        K = (P @ C.T + S) @ Rinv
        dY = Y[j + 1] - Y[j]
        mean = mean + A @ mean * dt + K @ (dY - C @ mean * dt)
        P = P + (A @ P + P @ A.T + Q - K @ R @ K.T) * dt
        P = 0.5 * (P + P.T)
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(mean))) or np.abs(P).max() > 1e12:
            raise RiccatiBlowupError(j + 1)
        means[j + 1], covs[j + 1] = mean, P
    return means, covs


def moment_ode_oracle(spec, grid):
    """Mean and covariance of the signal law when ``C = 0`` (classical RK4)."""
    if np.any(spec.C != 0):
        raise UnsupportedInputError("moment oracle needs a zero observation drift")
    A = spec.A
    Q = spec.sigma0 @ spec.sigma0.T + spec.sigma1 @ spec.sigma1.T

    def f(mean, S):
        return A @ mean, A @ S + S @ A.T + Q

    dt = grid.dt
    means = np.empty((grid.steps + 1, spec.n))
    covs = np.empty((grid.steps + 1, spec.n, spec.n))
    mean, S = spec.m0.copy(), spec.P0.copy()
    means[0], covs[0] = mean, S
    for j in range(grid.steps):
        k1 = f(mean, S)
        k2 = f(mean + 0.5 * dt * k1[0], S + 0.5 * dt * k1[1])
        k3 = f(mean + 0.5 * dt * k2[0], S + 0.5 * dt * k2[1])
        k4 = f(mean + dt * k3[0], S + dt * k3[1])
        mean = mean + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        S = S + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        means[j + 1], covs[j + 1] = mean, S
    return means, covs


def lderiv_fd(G, mu, v, eps, t=0.0):
    """Forward difference quotient of ``G`` along the pushforward ``x -> x + eps v(x)``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    moved = WeightedCloud(mu.atoms + eps * np.asarray(v(t, mu.atoms), float), mu.weights)
    return (eval_G(G, moved) - eval_G(G, mu)) / eps


def reference_independent_filter(sys, driver, grid, N, key, mu0_sampler):
    """Classical weighted particle filter for uncorrelated noise.

    Particles follow the signal dynamics with their own noise only; weights
    accumulate the usual likelihood.  Draws from the same streams as the
    main solver (``x0`` and ``idio`` children of ``key``) so the two can be
    compared path by path.  Returns a ``ZakaiPath``.
    """
    from .zakai import ZakaiPath

    dt = grid.dt
    x = mu0_sampler.sample(key.child("x0").generator(), N)
    gen = key.child("idio").generator()
    logw = np.zeros(N)
    atoms = [x]
    logws = [logw]
    inc = driver.increments
    if sys.kind == "cn":
        if driver.role != "Wtilde":
            raise UnsupportedInputError("expected a Wtilde driver")
        for j in range(grid.steps):
            t = j * dt
            if np.any(sys.sigma1(t, x) != 0):
                raise UnsupportedInputError("signal and observation noise are correlated (sigma1 != 0)")
            dB = np.sqrt(dt) * gen.standard_normal((N, sys.d))
            h = np.linalg.solve(np.asarray(sys.sigma2(t), float), sys.b2(t, x).T).T
            logw = logw + h @ inc[j] - 0.5 * np.einsum("ij,ij->i", h, h) * dt
            x = x + sys.b1(t, x) * dt + np.einsum("nij,nj->ni", sys.sigma0(t, x), dB)
            atoms.append(x)
            logws.append(logw)
    else:
        if driver.role != "Vtilde":
            raise UnsupportedInputError("expected a Vtilde driver")
        if np.any(sys.sigma2c != 0):
            raise UnsupportedInputError("sensor noise is correlated with the signal (sigma2c != 0)")
        for j in range(grid.steps):
            t = j * dt
            dW = np.sqrt(dt) * gen.standard_normal((N, sys.m))
            b2 = sys.b2c(t, x)
            logw = logw + b2 @ inc[j] - 0.5 * np.einsum("ij,ij->i", b2, b2) * dt
            x = x + sys.b1c(t, x) * dt + np.einsum("nij,nj->ni", sys.sigma1c(t, x), dW)
            atoms.append(x)
            logws.append(logw)
    return ZakaiPath(np.stack(atoms), np.stack(logws), DriverPath(inc, driver.role, dt), grid)


def w2_bruteforce(mu, nu):
    """Exhaustive search over permutations (N <= 8)."""
    _check_uniform_pair(mu, nu)
    if mu.N > 8:
        raise UnsupportedInputError("brute force is limited to N <= 8")
    cost = cost_matrix(mu, nu)
    best = min(assignment_cost(cost, np.array(p)) for p in itertools.permutations(range(mu.N)))
    return float(np.sqrt(best))
