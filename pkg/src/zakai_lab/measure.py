"""Weighted empirical measures ``mu = (1/N) sum_i w_i delta_{x_i}``."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import UnsupportedInputError, ZeroMassError


@dataclass(frozen=True, eq=False)
class WeightedCloud:
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        w = np.asarray(self.weights, float).reshape(-1)
        if atoms.ndim != 2 or atoms.shape[0] != w.shape[0]:
            raise ValueError("atoms must be (N, n) and weights (N,)")
        if w.shape[0] < 1:
            raise ValueError("a cloud needs at least one atom")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, atoms):
        atoms = np.asarray(atoms, float)
        return cls(atoms, np.ones(atoms.shape[0]))

    @property
    def N(self):
        return self.atoms.shape[0]

    @property
    def n(self):
        return self.atoms.shape[1]

    @property
    def mass(self):
        return float(self.weights.sum() / self.N)

    def ess(self):
        """Effective sample size of the weights."""
        s = self.weights.sum()
        return float(s * s / np.square(self.weights).sum()) if s > 0 else 0.0


def pair_values(weights, values):
    """``(1/N) sum_i w_i f_i`` along the last axis; works on batches."""
    return (weights * values).sum(axis=-1) / weights.shape[-1]


def pair(mu, f):
    """Integral of ``f`` against the cloud.

    ``f`` maps an ``(N, n)`` array of atoms to ``(N,)`` values.
    """
    vals = np.asarray(f(mu.atoms), float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("test function is not finite on the atoms")
    return float(pair_values(mu.weights, vals))


def normalize(mu):
    m = mu.mass
    if not m > 0:
        raise ZeroMassError("cannot normalize a cloud with zero mass")
    return WeightedCloud(mu.atoms, mu.weights / m)


def _check_uniform_pair(mu, nu):
    if mu.N != nu.N or mu.n != nu.n:
        raise UnsupportedInputError("wasserstein2 needs clouds of equal size and dimension")
    if not (np.all(mu.weights == 1.0) and np.all(nu.weights == 1.0)):
        raise UnsupportedInputError("wasserstein2 supports unit weights only")
    if mu.N > 256:
        raise UnsupportedInputError("wasserstein2 is a diagnostic for N <= 256")


def cost_matrix(mu, nu):
    diff = mu.atoms[:, None, :] - nu.atoms[None, :, :]
    return (diff * diff).sum(axis=-1)


def assignment_cost(cost, perm):
    """Mean cost of ``i -> perm[i]``; shared by the solver and its oracle.

    The matched costs are summed in sorted order so the result does not
    depend on how the atoms are labelled (this makes W2 exactly symmetric).
    """
    picked = np.sort(cost[np.arange(cost.shape[0]), perm])
    return float(picked.sum() / cost.shape[0])


def wasserstein2(mu, nu):
    _check_uniform_pair(mu, nu)
    cost = cost_matrix(mu, nu)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(mu.N, dtype=int)
    perm[rows] = cols
    return float(np.sqrt(assignment_cost(cost, perm)))


def save_cloud_csv(mu, filename):
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(mu.n)] + ["weight"])
        for x, wt in zip(mu.atoms, mu.weights):
            w.writerow([repr(float(v)) for v in x] + [repr(float(wt))])


def load_cloud_csv(filename):
    with open(filename, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(rows[0]))
    return WeightedCloud(data[:, :-1], data[:, -1])
