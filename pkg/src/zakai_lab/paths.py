"""Time grids, keyed random streams and Brownian increments.

Every random draw in the package comes from a :class:`StreamKey`: a seed
plus a lineage of ``(role, index)`` tags.  The key is turned into a
Philox counter-based generator through ``numpy.random.SeedSequence``, so
two keys with different lineages give independent streams and the same key
always gives the same stream, no matter which thread asks for it.
"""
from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    T: float
    steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        if int(self.steps) < 1:
            raise ValueError("steps must be a positive integer")
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "T", float(self.T))

    @property
    def dt(self):
        return self.T / self.steps

    @property
    def times(self):
        return np.arange(self.steps + 1) * self.dt

    def refine(self, factor):
        return TimeGrid(self.T, self.steps * int(factor))

    def index(self, t, tol=1e-9):
        """Grid index of time ``t``; raises if ``t`` is not a grid time."""
        j = int(round(t / self.dt))
        if j < 0 or j > self.steps or abs(j * self.dt - t) > tol * max(1.0, self.T):
            raise ValueError(f"t={t} is not on the grid (dt={self.dt})")
        return j


def _tag_code(tag):
    return zlib.crc32(str(tag).encode("utf-8"))


@dataclass(frozen=True)
class StreamKey:
    seed: int
    lineage: tuple = ()

    def __post_init__(self):
        seed = int(self.seed)
        if not 0 <= seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "seed", seed)
        object.__setattr__(self, "lineage", tuple((str(r), int(i)) for r, i in self.lineage))

    def child(self, role, index=0):
        return StreamKey(self.seed, self.lineage + ((role, index),))

    def spawn_key(self):
        out = []
        for role, idx in self.lineage:
            out.extend((_tag_code(role), idx))
        return tuple(out)

    def generator(self):
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.spawn_key())
        return np.random.Generator(np.random.Philox(ss))


def normal_increments(gen, shape, dt, substeps=1):
    """Brownian increments over one step of length ``dt``.

    With ``substeps > 1`` the step is built from ``substeps`` finer
    increments drawn in stream order, so a coarse grid driven by the same
    stream sees the aggregated fine path.
    """
    if substeps == 1:
        return np.sqrt(dt) * gen.standard_normal(shape)
    z = gen.standard_normal((substeps,) + tuple(shape))
    return np.sqrt(dt / substeps) * z.sum(axis=0)


@dataclass(frozen=True, eq=False)
class BrownianPath:
    dim: int
    dt: float
    increments: np.ndarray

    def __post_init__(self):
        inc = np.asarray(self.increments, float)
        if inc.ndim != 2 or inc.shape[1] != self.dim:
            raise ValueError(f"increments must have shape (steps, {self.dim})")
        if not np.all(np.isfinite(inc)):
            raise ValueError("increments must be finite")
        object.__setattr__(self, "increments", inc)

    @property
    def steps(self):
        return self.increments.shape[0]


def sample_brownian(grid, dim, key, substeps=1):
    if dim < 1:
        raise ValueError("dim must be >= 1")
    gen = key.generator()
    if substeps == 1:
        inc = np.sqrt(grid.dt) * gen.standard_normal((grid.steps, dim))
    else:
        z = gen.standard_normal((grid.steps, substeps, dim))
        inc = np.sqrt(grid.dt / substeps) * z.sum(axis=1)
    return BrownianPath(dim, grid.dt, inc)


def cumulate(path):
    inc = path.increments if isinstance(path, BrownianPath) else np.asarray(path, float)
    out = np.zeros((inc.shape[0] + 1,) + inc.shape[1:])
    np.cumsum(inc, axis=0, out=out[1:])
    return out


def save_path_csv(path, filename):
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [f"d{i + 1}" for i in range(path.dim)])
        for j, row in enumerate(path.increments):
            w.writerow([j] + [repr(float(v)) for v in row])


def load_path_csv(filename, dt):
    with open(filename, newline="") as fh:
        rows = list(csv.reader(fh))
    inc = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return BrownianPath(len(rows[0]) - 1, dt, inc.reshape(-1, len(rows[0]) - 1))
