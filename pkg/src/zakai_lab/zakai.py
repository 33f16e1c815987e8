"""Weighted particle solutions of the two Zakai equations.

Each run carries ``N`` particles that share the observation-derived driver
(``Wtilde`` or ``Vtilde``) and receive independent idiosyncratic noise.
Weights live in the log domain and are never resampled, so the cloud
``(1/N) sum_i exp(logw_i) delta_{x_i}`` is the unnormalized filter.

:func:`run_particles` is the batched engine behind every solver and
ensemble in the package.  Runs are processed in fixed-size chunks; worker
threads only decide which chunk is computed when, so results do not depend
on the thread count.

Streams per run key: ``x0`` (initial atoms), ``idio`` (per-step
idiosyncratic normals, shape ``(N, d)`` or ``(N, m)``) and ``driver`` (only
when the driver is drawn as a Brownian motion rather than supplied).
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .calculus import lift_from_stats, noise_from_stats, pairing_stats
from .errors import DivergenceError, MissingArtifactError, UnsupportedInputError
from .measure import WeightedCloud, pair_values, save_cloud_csv, load_cloud_csv
from .model import h_map, matvec_b, outer_self
from .paths import TimeGrid, normal_increments
from .sde import DriverPath, log_weight_increment, propagate_particle_cn, propagate_particle_cs

CHUNK_RUNS = 16


def _driver_role(sys):
    return "Wtilde" if sys.kind == "cn" else "Vtilde"


def _idio_dim(sys):
    return sys.d if sys.kind == "cn" else sys.m


def _step(sys, t, X, logw, d_driver, d_idio, dt):
    """Advance a batch of clouds ``X`` (..., N, n) by one Euler step in place of a copy."""
    dD = d_driver[..., None, :]
    if sys.kind == "cn":
        h = h_map(sys, t, X)
        Xn = propagate_particle_cn(sys, t, X, dD, d_idio, dt, h=h)
        return Xn, logw + log_weight_increment(h, dD, dt)
    b2 = sys.b2c(t, X)
    dR = matvec_b(sys.residual_factor, d_idio)
    Xn = propagate_particle_cs(sys, t, X, dD, dR, dt, b2=b2)
    return Xn, logw + log_weight_increment(b2, dD, dt)


def run_particles(sys, grid, run_keys, initial, N, drivers=None, observers=(), substeps=1,
                  threads=1, chunk=CHUNK_RUNS):
    """Run ``len(run_keys)`` independent particle clouds over ``grid``.

    ``drivers`` is ``None`` (each run draws its own Brownian driver from its
    ``driver`` stream) or an array ``(M, steps, m)`` of supplied increments.
    ``observers`` are callables ``obs(j, t, X, logw, runs)`` invoked at every
    grid index ``j = 0..steps`` with the chunk's state; ``runs`` is the
    slice of run indices the chunk covers.  ``substeps`` aggregates finer
    increments per step from the same streams (coupling across grids).
    Returns the drivers used, ``(M, steps, m)``.
    """
    M = len(run_keys)
    if N < 1:
        raise ValueError("N must be >= 1")
    if M < 1:
        raise ValueError("need at least one run")
    dt, S, m, q = grid.dt, grid.steps, sys.m, _idio_dim(sys)
    used = np.empty((M, S, m))
    if drivers is not None:
        drivers = np.asarray(drivers, float)
        if drivers.shape != (M, S, m):
            raise ValueError(f"drivers must have shape {(M, S, m)}, got {drivers.shape}")
        used[:] = drivers
    if sys.kind == "cn":
        sys.check_grid(grid.times)

    def work(lo):
        hi = min(lo + chunk, M)
        runs = slice(lo, hi)
        keys = run_keys[lo:hi]
        X = np.stack([initial.sample(k.child("x0").generator(), N) for k in keys])
        logw = np.zeros(X.shape[:-1])
        g_idio = [k.child("idio").generator() for k in keys]
        g_drv = None if drivers is not None else [k.child("driver").generator() for k in keys]
        for j in range(S + 1):
            t = j * dt
            for obs in observers:
                obs(j, t, X, logw, runs)
            if j == S:
                break
            if g_drv is not None:
                used[lo:hi, j] = np.stack([normal_increments(g, (m,), dt, substeps) for g in g_drv])
            d_idio = np.stack([normal_increments(g, (N, q), dt, substeps) for g in g_idio])
            X, logw = _step(sys, t, X, logw, used[lo:hi, j], d_idio, dt)
            if not (np.all(np.isfinite(X)) and np.all(np.isfinite(logw))):
                raise DivergenceError(j + 1, "particle")

    starts = range(0, M, chunk)
    if threads <= 1:
        for lo in starts:
            work(lo)
    else:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            list(pool.map(work, starts))
    return used


@dataclass(frozen=True, eq=False)
class ZakaiPath:
    """Particle path: atoms ``(steps+1, N, n)``, log weights ``(steps+1, N)``."""
    atoms: np.ndarray
    logw: np.ndarray
    driver: DriverPath
    grid: TimeGrid

    @property
    def N(self):
        return self.atoms.shape[1]

    @property
    def weights(self):
        return np.exp(self.logw)

    def cloud(self, j):
        return WeightedCloud(self.atoms[j], np.exp(self.logw[j]))

    @property
    def clouds(self):
        return [self.cloud(j) for j in range(self.atoms.shape[0])]

    def mass(self):
        return pair_values(self.weights, np.ones_like(self.logw))

    def ess(self):
        w = self.weights
        return w.sum(axis=-1) ** 2 / (w * w).sum(axis=-1)


class _Recorder:
    def __init__(self, shape):
        self.atoms = np.empty(shape)
        self.logw = np.empty(shape[:-1])

    def __call__(self, j, t, X, logw, runs):
        self.atoms[j] = X[0]
        self.logw[j] = logw[0]


def _solve(sys, driver, grid, N, key, mu0_sampler, substeps=1):
    if driver.role != _driver_role(sys):
        raise UnsupportedInputError(f"{sys.kind} solver needs a {_driver_role(sys)} driver")
    if driver.steps != grid.steps:
        raise ValueError("driver length does not match the grid")
    rec = _Recorder((grid.steps + 1, N, sys.n))
    run_particles(sys, grid, [key], mu0_sampler, N, drivers=driver.increments[None],
                  observers=(rec,), substeps=substeps)
    return ZakaiPath(rec.atoms, rec.logw, driver, grid)


def solve_zakai_cn(sys, driver, grid, N, key, mu0_sampler):
    """Particle solution of the correlated-noise Zakai equation.

    Particles move under the reference-measure dynamics with the common
    ``Wtilde`` increments and their own ``B`` increments; log weights gain
    ``h . dWtilde - |h|^2 dt / 2``.
    """
    if sys.kind != "cn":
        raise UnsupportedInputError("solve_zakai_cn needs a correlated-noise system")
    return _solve(sys, driver, grid, N, key, mu0_sampler)


def solve_zakai_cs(sys, driver, grid, N, key, mu0_sampler):
    if sys.kind != "cs":
        raise UnsupportedInputError("solve_zakai_cs needs a correlated-sensor system")
    return _solve(sys, driver, grid, N, key, mu0_sampler)


def path_stats(path, sys, phis):
    """Pairings ``z, beta, c`` at every grid time of a path."""
    times = path.grid.times
    out = [pairing_stats(sys, t, path.atoms[j], path.weights[j], phis) for j, t in enumerate(times)]
    return tuple(np.stack(a) for a in zip(*out))


def ito_residual_from_stats(g, z, beta, c, d_driver, dt):
    """``r_j = G_j - G_0 - sum_{i<j} (LG_i dt + d_u g c_u^l dD_i^l)`` along the last-but-one axis."""
    G = g(z)
    drift = lift_from_stats(g, z, beta, c)[..., :-1] * dt
    noise = (noise_from_stats(g, z, c)[..., :-1, :] * d_driver).sum(axis=-1)
    incr = drift + noise
    acc = np.zeros(G.shape)
    acc[..., 1:] = np.cumsum(incr, axis=-1)
    return G - G[..., :1] - acc


def pathwise_ito_residual(path, sys, G, variant=None):
    """Weak-form Ito residual of ``G`` along one particle path.

    Zero under exact Ito calculus; here it measures discretization error.
    """
    if variant is not None and variant != sys.kind:
        raise UnsupportedInputError(f"variant {variant!r} does not match system {sys.kind!r}")
    z, beta, c = path_stats(path, sys, G.phis)
    return ito_residual_from_stats(G.g, z, beta, c, path.driver.increments, path.grid.dt)


def audit_integrand(sys, t, X, w):
    """Pairing of the integrability integrand with the cloud(s).

    cn: ``|b1| + |h|^2 + |sigma1|^2 + |sigma0 sigma0^T|``;
    cs: ``|b1c| + |sigma1c|^2 + |b2c|^2`` (Euclidean / Frobenius norms).
    """
    if sys.kind == "cn":
        b1 = sys.b1(t, X)
        h = h_map(sys, t, X)
        s1 = sys.sigma1(t, X)
        a0 = outer_self(sys.sigma0(t, X))
        f = (np.sqrt((b1 * b1).sum(axis=-1)) + (h * h).sum(axis=-1) + (s1 * s1).sum(axis=(-2, -1))
             + np.sqrt((a0 * a0).sum(axis=(-2, -1))))
    else:
        b1 = sys.b1c(t, X)
        s1 = sys.sigma1c(t, X)
        b2 = sys.b2c(t, X)
        f = np.sqrt((b1 * b1).sum(axis=-1)) + (s1 * s1).sum(axis=(-2, -1)) + (b2 * b2).sum(axis=-1)
    return pair_values(w, f)


def trapezoid(values, dt, axis=-1):
    """Cumulative trapezoid integral starting at 0."""
    v = np.moveaxis(np.asarray(values, float), axis, -1)
    out = np.zeros(v.shape)
    out[..., 1:] = np.cumsum(0.5 * (v[..., 1:] + v[..., :-1]) * dt, axis=-1)
    return np.moveaxis(out, -1, axis)


@dataclass(frozen=True)
class AuditReport:
    value: float
    ceiling: float
    flagged: bool

    def to_dict(self):
        return {"value": self.value, "ceiling": self.ceiling, "flagged": self.flagged}


def integrability_audit_path(path, sys, variant=None, ceiling=1e6):
    if variant is not None and variant != sys.kind:
        raise UnsupportedInputError(f"variant {variant!r} does not match system {sys.kind!r}")
    vals = np.array([audit_integrand(sys, t, path.atoms[j], path.weights[j])
                     for j, t in enumerate(path.grid.times)])
    value = float(trapezoid(vals, path.grid.dt)[-1])
    return AuditReport(value, float(ceiling), bool(not np.isfinite(value) or value > ceiling))


# -- persistence ---------------------------------------------------------------

def system_fingerprint(obj):
    """Short stable hash of a JSON-compatible description."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_zakai_path(path, directory, manifest=None):
    """Write one cloud CSV per snapshot, the driver increments and ``manifest.json``."""
    os.makedirs(directory, exist_ok=True)
    width = max(5, len(str(path.atoms.shape[0] - 1)))
    files = []
    for j in range(path.atoms.shape[0]):
        name = f"cloud_{j:0{width}d}.csv"
        save_cloud_csv(WeightedCloud(path.atoms[j], np.exp(path.logw[j])), os.path.join(directory, name))
        files.append(name)
    with open(os.path.join(directory, "driver.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [f"d{i + 1}" for i in range(path.driver.increments.shape[1])])
        for j, row in enumerate(path.driver.increments):
            w.writerow([j] + [repr(float(v)) for v in row])
    info = dict(manifest or {})
    info.update({"T": path.grid.T, "steps": path.grid.steps, "N": path.N, "n": path.atoms.shape[2],
                 "driver_role": path.driver.role, "snapshots": files})
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_zakai_path(directory):
    mpath = os.path.join(directory, "manifest.json")
    if not os.path.exists(mpath):
        raise MissingArtifactError(f"no manifest.json in {directory}")
    with open(mpath) as fh:
        info = json.load(fh)
    grid = TimeGrid(info["T"], info["steps"])
    clouds = [load_cloud_csv(os.path.join(directory, f)) for f in info["snapshots"]]
    atoms = np.stack([c.atoms for c in clouds])
    with np.errstate(divide="ignore"):
        logw = np.log(np.stack([c.weights for c in clouds]))
    with open(os.path.join(directory, "driver.csv"), newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    inc = np.array([[float(v) for v in r[1:]] for r in rows]).reshape(grid.steps, -1)
    return ZakaiPath(atoms, logw, DriverPath(inc, info["driver_role"], grid.dt), grid), info
