"""Signal-observation systems and their coefficient families.

Two systems are supported. The correlated-noise system::

    dX = b1(t,X) dt + sigma0(t,X) dB + sigma1(t,X) dW
    dY = b2(t,X) dt + sigma2(t) dW

and the correlated-sensor system::

    dX = b1c(t,X) dt + sigma1c(t,X) dW
    dY = b2c(t,X) dt + sigma2c dW + sigma3c dB

Coefficients are callables ``f(t, x)`` broadcasting over leading axes of
``x`` (shape ``(..., n)``).  The families below cover what scenario files
can describe; any callable with the same contract is accepted in code.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import CoefficientSingularityError, ConfigError, FactorizationError

COND_MAX = 1e12


def _time_factor(table, t):
    if table is None:
        return 1.0
    times, factors = table
    return float(np.interp(t, times, factors))


def matmul_b(a, b):
    """Batched matrix product by broadcasting (no BLAS; results do not
    depend on batch size)."""
    return (a[..., :, :, None] * b[..., None, :, :]).sum(axis=-2)


def matvec_b(a, v):
    return (a * v[..., None, :]).sum(axis=-1)


def outer_self(s):
    """s s^T for a batch of (p, q) matrices."""
    return (s[..., :, None, :] * s[..., None, :, :]).sum(axis=-1)


class VectorField:
    """``f(t, x) = factor(t) * (A x + c + amp * tanh(K x + offset))``.

    Unused parts are left as ``None``.  ``table`` is an optional pair
    ``(times, factors)`` interpolated linearly in time.
    """

    def __init__(self, n, p, A=None, c=None, amp=None, K=None, offset=None, table=None):
        self.n, self.p = int(n), int(p)
        self.A = None if A is None else np.asarray(A, float).reshape(self.p, self.n)
        self.c = np.zeros(self.p) if c is None else np.asarray(c, float).reshape(self.p)
        if amp is not None:
            self.amp = np.asarray(amp, float).reshape(self.p)
            self.K = np.asarray(K, float).reshape(self.p, self.n)
            self.offset = np.zeros(self.p) if offset is None else np.asarray(offset, float).reshape(self.p)
        else:
            self.amp = self.K = self.offset = None
        self.table = None if table is None else (np.asarray(table[0], float), np.asarray(table[1], float))

    def __call__(self, t, x):
        x = np.asarray(x, float)
        out = np.broadcast_to(self.c, x.shape[:-1] + (self.p,)).copy()
        if self.A is not None:
            out += (x[..., None, :] * self.A).sum(axis=-1)
        if self.amp is not None:
            out += self.amp * np.tanh((x[..., None, :] * self.K).sum(axis=-1) + self.offset)
        if self.table is not None:
            out *= _time_factor(self.table, t)
        return out


class MatrixField:
    """``S(t, x) = factor(t) * (S0 + sum_k x_k S1[k] + tanh(w.x + w0) S2)``."""

    def __init__(self, n, p, q, S0=None, S1=None, S2=None, w=None, w0=0.0, table=None):
        self.n, self.p, self.q = int(n), int(p), int(q)
        self.S0 = np.zeros((self.p, self.q)) if S0 is None else np.asarray(S0, float).reshape(self.p, self.q)
        self.S1 = None if S1 is None else np.asarray(S1, float).reshape(self.n, self.p, self.q)
        if S2 is not None:
            self.S2 = np.asarray(S2, float).reshape(self.p, self.q)
            self.w = np.asarray(w, float).reshape(self.n)
            self.w0 = float(w0)
        else:
            self.S2 = self.w = None
            self.w0 = 0.0
        self.table = None if table is None else (np.asarray(table[0], float), np.asarray(table[1], float))

    def __call__(self, t, x):
        x = np.asarray(x, float)
        out = np.broadcast_to(self.S0, x.shape[:-1] + (self.p, self.q)).copy()
        if self.S1 is not None:
            out += (x[..., :, None, None] * self.S1).sum(axis=-3)
        if self.S2 is not None:
            s = np.tanh((x * self.w).sum(axis=-1) + self.w0)
            out += s[..., None, None] * self.S2
        if self.table is not None:
            out *= _time_factor(self.table, t)
        return out


class TimeMatrix:
    """Matrix-valued function of time only, piecewise linear between knots."""

    def __init__(self, values, times=None):
        values = np.asarray(values, float)
        if values.ndim == 2:
            values = values[None]
        self.values = values
        self.times = np.zeros(1) if times is None else np.asarray(times, float)
        if len(self.times) != len(self.values):
            raise ValueError("times and values must have the same length")

    def __call__(self, t):
        if len(self.times) == 1:
            return self.values[0]
        j = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
        t0, t1 = self.times[j], self.times[j + 1]
        lam = float(np.clip((t - t0) / (t1 - t0), 0.0, 1.0))
        return (1.0 - lam) * self.values[j] + lam * self.values[j + 1]


def _table(cfg):
    tab = cfg.get("table")
    if tab is None:
        return None
    return (tab["times"], tab["factors"])


def vector_field_from_config(cfg, n, p, where="field"):
    kind = cfg.get("kind", "affine")
    try:
        if kind == "constant":
            return VectorField(n, p, c=cfg["value"], table=_table(cfg))
        if kind == "affine":
            return VectorField(n, p, A=cfg.get("A"), c=cfg.get("c"), table=_table(cfg))
        if kind == "affine_tanh":
            return VectorField(n, p, A=cfg.get("A"), c=cfg.get("c"), amp=cfg["amp"], K=cfg["K"],
                               offset=cfg.get("offset"), table=_table(cfg))
    except (KeyError, ValueError) as exc:
        raise ConfigError(where, f"bad {kind} coefficient: {exc}") from None
    raise ConfigError(f"{where}.kind", f"unknown vector family {kind!r}")


def matrix_field_from_config(cfg, n, p, q, where="field"):
    kind = cfg.get("kind", "constant")
    try:
        if kind == "constant":
            return MatrixField(n, p, q, S0=cfg["value"], table=_table(cfg))
        if kind == "affine":
            return MatrixField(n, p, q, S0=cfg.get("S0"), S1=cfg.get("S1"), table=_table(cfg))
        if kind == "affine_tanh":
            return MatrixField(n, p, q, S0=cfg.get("S0"), S1=cfg.get("S1"), S2=cfg["S2"],
                               w=cfg["w"], w0=cfg.get("w0", 0.0), table=_table(cfg))
    except (KeyError, ValueError) as exc:
        raise ConfigError(where, f"bad {kind} coefficient: {exc}") from None
    raise ConfigError(f"{where}.kind", f"unknown matrix family {kind!r}")


def time_matrix_from_config(cfg, m, where="sigma2"):
    kind = cfg.get("kind", "constant")
    try:
        if kind == "constant":
            return TimeMatrix(np.asarray(cfg["value"], float).reshape(m, m))
        if kind == "table":
            vals = np.asarray(cfg["values"], float).reshape(-1, m, m)
            return TimeMatrix(vals, cfg["times"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(where, f"bad {kind} matrix: {exc}") from None
    raise ConfigError(f"{where}.kind", f"unknown time-matrix family {kind!r}")


class LocalCoefficients(NamedTuple):
    """Coefficients of the unnormalized filter at a batch of points.

    ``drift`` (..., n) and ``diffusion`` (..., n, n) define the signal
    generator; ``rho`` (..., m) is the likelihood rate multiplying
    ``phi`` in the noise term and ``tau`` (..., n, m) the transport
    coupling multiplying ``grad phi``.
    """
    drift: np.ndarray
    diffusion: np.ndarray
    rho: np.ndarray
    tau: np.ndarray


def _as_time_matrix(s):
    if callable(s):
        return s
    return TimeMatrix(s)


@dataclass(frozen=True, eq=False)
class SystemCorrelatedNoise:
    n: int
    m: int
    d: int
    b1: Callable
    sigma0: Callable
    sigma1: Callable
    b2: Callable
    sigma2: Callable
    kind: str = field(default="cn", init=False)

    def __post_init__(self):
        object.__setattr__(self, "sigma2", _as_time_matrix(self.sigma2))
        x = np.zeros(self.n)
        shapes = {
            "b1": (self.b1(0.0, x), (self.n,)),
            "sigma0": (self.sigma0(0.0, x), (self.n, self.d)),
            "sigma1": (self.sigma1(0.0, x), (self.n, self.m)),
            "b2": (self.b2(0.0, x), (self.m,)),
            "sigma2": (self.sigma2(0.0), (self.m, self.m)),
        }
        for name, (val, shape) in shapes.items():
            if np.shape(val) != shape:
                raise ValueError(f"{name} has shape {np.shape(val)}, expected {shape}")

    def sigma2_inverse(self, t):
        s2 = np.asarray(self.sigma2(t), float)
        cond = np.linalg.cond(s2)
        if not np.isfinite(cond) or cond > COND_MAX:
            raise CoefficientSingularityError(t, cond)
        return np.linalg.inv(s2)

    def check_grid(self, times, cond_max=COND_MAX):
        for t in times:
            cond = np.linalg.cond(np.asarray(self.sigma2(t), float))
            if not np.isfinite(cond) or cond > cond_max:
                raise CoefficientSingularityError(t, cond)

    def local(self, t, x):
        s0 = self.sigma0(t, x)
        s1 = self.sigma1(t, x)
        return LocalCoefficients(
            drift=self.b1(t, x),
            diffusion=outer_self(s0) + outer_self(s1),
            rho=h_map(self, t, x),
            tau=s1,
        )


def psd_sqrt(mat, tol=1e-12):
    mat = 0.5 * (mat + mat.T)
    vals, vecs = np.linalg.eigh(mat)
    if vals.min() < -tol:
        raise FactorizationError(f"matrix is not positive semidefinite (min eigenvalue {vals.min():.3e})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


@dataclass(frozen=True, eq=False)
class SystemCorrelatedSensor:
    n: int
    m: int
    d: int
    b1c: Callable
    sigma1c: Callable
    b2c: Callable
    sigma2c: np.ndarray
    sigma3c: np.ndarray
    kind: str = field(default="cs", init=False)

    def __post_init__(self):
        s2 = np.asarray(self.sigma2c, float).reshape(self.m, self.m)
        s3 = np.asarray(self.sigma3c, float).reshape(self.m, self.d)
        object.__setattr__(self, "sigma2c", s2)
        object.__setattr__(self, "sigma3c", s3)
        x = np.zeros(self.n)
        if np.shape(self.b1c(0.0, x)) != (self.n,):
            raise ValueError("b1c has the wrong shape")
        if np.shape(self.sigma1c(0.0, x)) != (self.n, self.m):
            raise ValueError("sigma1c has the wrong shape")
        if np.shape(self.b2c(0.0, x)) != (self.m,):
            raise ValueError("b2c has the wrong shape")

    @property
    def residual_factor(self):
        """Symmetric square root of I - sigma2c^T sigma2c."""
        cached = self.__dict__.get("_residual_factor")
        if cached is None:
            cached = psd_sqrt(np.eye(self.m) - self.sigma2c.T @ self.sigma2c)
            object.__setattr__(self, "_residual_factor", cached)
        return cached

    def local(self, t, x):
        s1 = self.sigma1c(t, x)
        return LocalCoefficients(
            drift=self.b1c(t, x),
            diffusion=outer_self(s1),
            rho=self.b2c(t, x),
            tau=(s1[..., :, None, :] * self.sigma2c[:, :]).sum(axis=-1),
        )


def h_map(sys, t, x):
    """Observation drift normalized by sigma2: ``sigma2(t)^{-1} b2(t, x)``."""
    inv = sys.sigma2_inverse(t)
    b2 = np.asarray(sys.b2(t, x), float)
    return (b2[..., None, :] * inv).sum(axis=-1)


def _const_fn(v):
    if callable(v):
        return v
    v = float(v)
    return lambda *_: v


@dataclass(frozen=True, eq=False)
class AssumptionProfile:
    """Constants of the standing assumptions on the correlated-noise system.

    ``L1`` and ``K1`` may be floats or nondecreasing functions of time;
    ``kappa`` holds the three moduli (default: constant 1, i.e. plain
    Lipschitz).  The small-argument log condition on the moduli is not
    checked numerically.
    """
    L1: Callable = 1.0
    K1: Callable = 1.0
    K2: float = 1.0
    kappa: Sequence[Callable] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not self.K2 > 0:
            raise ValueError("K2 must be positive")
        if len(self.kappa) != 3:
            raise ValueError("kappa needs three moduli")
        object.__setattr__(self, "L1", _const_fn(self.L1))
        object.__setattr__(self, "K1", _const_fn(self.K1))
        object.__setattr__(self, "kappa", tuple(_const_fn(k) for k in self.kappa))

    def check_monotone(self, times):
        l1 = np.array([self.L1(t) for t in times])
        k1 = np.array([self.K1(t) for t in times])
        return bool(np.all(np.diff(l1) >= 0) and np.all(np.diff(k1) >= 0) and l1.min() > 0 and k1.min() > 0)


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    worst_ratio: float
    passed: bool
    worst_sample: int | None = None


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {"passed": self.passed,
                "checks": [dict(name=c.name, worst_ratio=c.worst_ratio, passed=c.passed,
                                worst_sample=c.worst_sample) for c in self.checks]}


def _hs(a):
    return float(np.sqrt(np.sum(np.square(a))))


def _collect(name, ratios, tol=1e-12):
    if not ratios:
        return AssumptionCheck(name, 0.0, True, None)
    arr = np.array([r for r, _ in ratios])
    k = int(np.argmax(arr))
    worst = float(arr[k])
    return AssumptionCheck(name, worst, bool(np.isfinite(worst) and worst <= 1.0 + tol), ratios[k][1])


def _modulus_checks(b1, sigmas, profile, sample_pairs, prefix="H1"):
    ratios = {f"{prefix}.b1": [], **{f"{prefix}.{nm}": [] for nm, _ in sigmas}}
    growth = []
    for idx, (t, x1, x2) in enumerate(sample_pairs):
        x1 = np.atleast_1d(np.asarray(x1, float))
        x2 = np.atleast_1d(np.asarray(x2, float))
        dist = float(np.linalg.norm(x1 - x2))
        L = profile.L1(t)
        if dist > 0:
            k1 = profile.kappa[0](dist)
            ratios[f"{prefix}.b1"].append((_hs(b1(t, x1) - b1(t, x2)) / (L * dist * k1), idx))
            for j, (nm, sig) in enumerate(sigmas):
                kj = profile.kappa[1 + j](dist)
                lhs = _hs(sig(t, x1) - sig(t, x2)) ** 2
                ratios[f"{prefix}.{nm}"].append((lhs / (L * dist ** 2 * kj), idx))
        for x in (x1, x2):
            lhs = _hs(b1(t, x)) ** 2 + sum(_hs(sig(t, x)) ** 2 for _, sig in sigmas)
            growth.append((lhs / (profile.K1(t) * (1.0 + np.linalg.norm(x)) ** 2), idx))
    checks = [_collect(k, v) for k, v in ratios.items()]
    checks.append(_collect("H2.growth", growth))
    return checks


def validate_correlated_noise(sys, profile, sample_pairs, cond_max=COND_MAX):
    """Check the standing assumptions on sampled pairs ``(t, x1, x2)``.

    Violations are report entries.  Ratios are lhs/rhs of each inequality,
    so a check passes when its worst ratio is at most 1.
    """
    checks = _modulus_checks(sys.b1, [("sigma0", sys.sigma0), ("sigma1", sys.sigma1)],
                             profile, sample_pairs)
    hb, cond = [], []
    for idx, (t, x1, x2) in enumerate(sample_pairs):
        c = float(np.linalg.cond(np.asarray(sys.sigma2(t), float)))
        cond.append((c / cond_max if np.isfinite(c) else np.inf, idx))
        if not np.isfinite(c) or c > cond_max:
            continue
        for x in (x1, x2):
            h = h_map(sys, t, np.atleast_1d(np.asarray(x, float)))
            hb.append((float(np.linalg.norm(h)) / profile.K2, idx))
    checks.append(_collect("Hb2.invertible", cond))
    checks.append(_collect("Hb2.bound", hb))
    return ValidationReport(tuple(checks))


def identity_defect(sys):
    """sigma2c sigma2c^T + sigma3c sigma3c^T - I (symmetric by construction)."""
    return sys.sigma2c @ sys.sigma2c.T + sys.sigma3c @ sys.sigma3c.T - np.eye(sys.m)


def validate_correlated_sensor(sys, samples=None, b2_bound=None, profile=None, tol=1e-12):
    """Check the correlated-sensor hypotheses.

    ``samples`` is a list of ``(t, x)`` points for the boundedness of b2c
    (and, with ``profile``, a list of ``(t, x1, x2)`` pairs for the
    modulus and growth conditions on b1c, sigma1c).
    """
    defect = float(np.linalg.norm(identity_defect(sys)))
    checks = [AssumptionCheck("identity", defect, defect <= tol, None)]
    if samples:
        vals = [(float(np.linalg.norm(sys.b2c(t, np.atleast_1d(np.asarray(x, float))))), i)
                for i, (t, x, *_) in enumerate(samples)]
        worst = max(vals)
        if b2_bound is None:
            checks.append(AssumptionCheck("b2.bounded", worst[0], bool(np.isfinite(worst[0])), worst[1]))
        else:
            checks.append(AssumptionCheck("b2.bounded", worst[0] / b2_bound,
                                          bool(worst[0] <= b2_bound), worst[1]))
    if profile is not None and samples:
        pairs = [s for s in samples if len(s) == 3]
        checks.extend(_modulus_checks(sys.b1c, [("sigma1", sys.sigma1c)], profile, pairs))
    return ValidationReport(tuple(checks))


def system_from_config(cfg, where="system"):
    """Build either system from a scenario ``system`` block."""
    variant = cfg.get("variant")
    try:
        n, m, d = int(cfg["n"]), int(cfg["m"]), int(cfg["d"])
    except KeyError as exc:
        raise ConfigError(f"{where}.{exc.args[0]}", "missing dimension") from None
    for name, v in (("n", n), ("m", m), ("d", d)):
        if v < 1:
            raise ConfigError(f"{where}.{name}", "must be positive")
    if variant == "cn":
        try:
            return SystemCorrelatedNoise(
                n, m, d,
                b1=vector_field_from_config(cfg["b1"], n, n, f"{where}.b1"),
                sigma0=matrix_field_from_config(cfg["sigma0"], n, n, d, f"{where}.sigma0"),
                sigma1=matrix_field_from_config(cfg["sigma1"], n, n, m, f"{where}.sigma1"),
                b2=vector_field_from_config(cfg["b2"], n, m, f"{where}.b2"),
                sigma2=time_matrix_from_config(cfg["sigma2"], m, f"{where}.sigma2"),
            )
        except KeyError as exc:
            raise ConfigError(f"{where}.{exc.args[0]}", "missing coefficient") from None
    if variant == "cs":
        try:
            return SystemCorrelatedSensor(
                n, m, d,
                b1c=vector_field_from_config(cfg["b1"], n, n, f"{where}.b1"),
                sigma1c=matrix_field_from_config(cfg["sigma1"], n, n, m, f"{where}.sigma1"),
                b2c=vector_field_from_config(cfg["b2"], n, m, f"{where}.b2"),
                sigma2c=np.asarray(cfg["sigma2"], float).reshape(m, m),
                sigma3c=np.asarray(cfg["sigma3"], float).reshape(m, d),
            )
        except KeyError as exc:
            raise ConfigError(f"{where}.{exc.args[0]}", "missing coefficient") from None
        except ValueError as exc:
            raise ConfigError(where, str(exc)) from None
    raise ConfigError(f"{where}.variant", f"must be 'cn' or 'cs', got {variant!r}")
