"""Ensemble-level residuals for the measure-valued Fokker-Planck equation
and for the martingale problem on finite truncations of ``R^infinity``.

An :class:`EnsembleLaw` is ``M`` independent particle solutions on a shared
grid.  While the runs are computed, an observer records for every run and
grid time the pairings ``z``, ``beta`` and ``c`` of a fixed family of test
functions (see :func:`zakai_lab.calculus.pairing_stats`), the mass, the
normalized moments and the integrability integrand.  Every residual below
is assembled from those traces.

Time integrals use the trapezoid rule on the simulation grid.  A residual
passes when ``|r| <= sigma_mult * stderr + allowance``; the allowance is a
discretization budget ``C dt`` calibrated by rerunning on the grid with
twice the step, coupled through the same streams (:func:`calibrate_allowance`).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .calculus import generator_rinf, gram, lderiv, lift_from_stats, pairing_stats
from .errors import UnsupportedInputError
from .measure import WeightedCloud, pair_values
from .model import VectorField
from .oracle import lderiv_fd
from .paths import StreamKey
from .sde import extract_vtilde, extract_wtilde, simulate_truth_cn, simulate_truth_cs
from .zakai import ZakaiPath, audit_integrand, run_particles, trapezoid


@dataclass(eq=False)
class EnsembleLaw:
    """Traces of ``M`` independent particle runs; arrays are indexed ``[run, step, ...]``."""
    sys: object
    grid: object
    phis: tuple
    N: int
    z: np.ndarray
    beta: np.ndarray
    c: np.ndarray
    mass: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    audit: np.ndarray
    drivers: np.ndarray
    seed: int
    substeps: int = 1
    truths: list = field(default_factory=list)
    paths: list = field(default_factory=list)

    @property
    def M(self):
        return self.z.shape[0]

    def phi_index(self, phis):
        try:
            return [self.phis.index(p) for p in phis]
        except ValueError:
            raise UnsupportedInputError("test function was not tracked by this ensemble") from None


class _Tracker:
    def __init__(self, sys, phis, M, S, keep_paths, N):
        k, m, n = len(phis), sys.m, sys.n
        self.sys, self.phis = sys, tuple(phis)
        self.z = np.zeros((M, S + 1, k))
        self.beta = np.zeros((M, S + 1, k))
        self.c = np.zeros((M, S + 1, k, m))
        self.mass = np.zeros((M, S + 1))
        self.mean = np.zeros((M, S + 1, n))
        self.cov = np.zeros((M, S + 1, n, n))
        self.audit = np.zeros((M, S + 1))
        self.atoms = np.zeros((M, S + 1, N, n)) if keep_paths else None
        self.logw = np.zeros((M, S + 1, N)) if keep_paths else None

    def __call__(self, j, t, X, logw, runs):
        w = np.exp(logw)
        if self.phis:
            z, beta, c = pairing_stats(self.sys, t, X, w, self.phis)
            self.z[runs, j], self.beta[runs, j], self.c[runs, j] = z, beta, c
        wsum = w.sum(axis=-1)
        self.mass[runs, j] = wsum / w.shape[-1]
        wn = w / wsum[:, None]
        mean = (wn[..., None] * X).sum(axis=-2)
        dx = X - mean[:, None, :]
        self.mean[runs, j] = mean
        self.cov[runs, j] = (wn[..., None, None] * dx[..., :, None] * dx[..., None, :]).sum(axis=-3)
        self.audit[runs, j] = audit_integrand(self.sys, t, X, w)
        if self.atoms is not None:
            self.atoms[runs, j] = X
            self.logw[runs, j] = logw


def build_ensemble(sys, grid, initial, N, M, seed, phis=(), driver_mode="brownian",
                   substeps=1, threads=1, keep_paths=False, truth_initial=None):
    """Run ``M`` independent particle clouds and record their traces.

    ``driver_mode="brownian"`` draws each run's driver as a Brownian motion,
    which is its law under the reference measure; this is the ensemble
    whose law the Fokker-Planck equation describes.  ``"truth"`` simulates
    a signal/observation pair per run (streams ``run/truth``) and filters
    its observations, as needed for comparisons with a filter oracle.
    Run ``i`` uses stream key ``StreamKey(seed).child("run", i)``.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    keys = [StreamKey(seed).child("run", i) for i in range(M)]
    truths = []
    drivers = None
    if driver_mode == "truth":
        sim = simulate_truth_cn if sys.kind == "cn" else simulate_truth_cs
        x0 = initial if truth_initial is None else truth_initial
        drivers = np.empty((M, grid.steps, sys.m))
        for i, k in enumerate(keys):
            traj = sim(sys, grid, k.child("truth"), x0)
            truths.append(traj)
            drv = extract_wtilde(sys, traj, grid.dt) if sys.kind == "cn" else extract_vtilde(sys, traj, grid.dt)
            drivers[i] = drv.increments
    elif driver_mode != "brownian":
        raise ValueError(f"unknown driver mode {driver_mode!r}")
    tr = _Tracker(sys, phis, M, grid.steps, keep_paths, N)
    used = run_particles(sys, grid, keys, initial, N, drivers=drivers, observers=(tr,),
                         substeps=substeps, threads=threads)
    paths = []
    if keep_paths:
        from .sde import DriverPath
        role = "Wtilde" if sys.kind == "cn" else "Vtilde"
        paths = [ZakaiPath(tr.atoms[i], tr.logw[i], DriverPath(used[i], role, grid.dt), grid)
                 for i in range(M)]
    return EnsembleLaw(sys, grid, tuple(phis), N, tr.z, tr.beta, tr.c, tr.mass, tr.mean, tr.cov,
                       tr.audit, used, int(seed), int(substeps), truths, paths)


@dataclass(frozen=True)
class ResidualReport:
    suite: str
    label: str
    residual: float
    stderr: float
    allowance: float = 0.0
    sigma_mult: float = 3.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.stderr >= 0:
            raise ValueError("stderr must be nonnegative")

    @property
    def bound(self):
        return self.sigma_mult * self.stderr + self.allowance

    @property
    def passed(self):
        return bool(np.isfinite(self.residual) and abs(self.residual) <= self.bound)

    def with_allowance(self, allowance):
        return ResidualReport(self.suite, self.label, self.residual, self.stderr, float(allowance),
                              self.sigma_mult, self.metadata)

    def to_dict(self):
        return {"suite": self.suite, "label": self.label, "residual": self.residual,
                "stderr": self.stderr, "allowance": self.allowance, "sigma_mult": self.sigma_mult,
                "verdict": "pass" if self.passed else "fail", "metadata": self.metadata}


def _mean_and_stderr(samples):
    samples = np.asarray(samples, float)
    M = samples.shape[0]
    mean = float(samples.mean())
    se = float(samples.std(ddof=1) / np.sqrt(M)) if M > 1 else float("inf")
    return mean, se


def fpe_samples(ens, G, t):
    """Per-run ``G(mu_t) - G(mu_0) - int_0^t LG(mu_r) dr``."""
    idx = ens.phi_index(G.phis)
    j = ens.grid.index(t)
    z = ens.z[:, :j + 1, idx]
    beta = ens.beta[:, :j + 1, idx]
    c = ens.c[:, :j + 1][:, :, idx]
    LG = lift_from_stats(G.g, z, beta, c)
    integral = trapezoid(LG, ens.grid.dt)[:, -1]
    return G.g(z[:, -1]) - G.g(z[:, 0]) - integral


def fpe_residual(ens, sys, G, t, variant=None, allowance=0.0, sigma_mult=3.0, label=None):
    """Weak-form residual ``E G(mu_t) - E G(mu_0) - int_0^t E LG(mu_r) dr``."""
    if variant is not None and variant != sys.kind:
        raise UnsupportedInputError(f"variant {variant!r} does not match system {sys.kind!r}")
    if sys is not ens.sys:
        raise UnsupportedInputError("ensemble was built for a different system")
    r, se = _mean_and_stderr(fpe_samples(ens, G, t))
    meta = {"t": float(t), "M": ens.M, "N": ens.N, "dt": ens.grid.dt, "variant": sys.kind,
            "G": G.describe()}
    return ResidualReport("fpe", label or f"fpe t={t:g}", r, se, float(allowance), sigma_mult, meta)


class TestMartFunctional:
    """``chi_s(w) = prod_j tanh(scale_j * w^{coord_j}_{time_j})`` with all times <= s."""

    __test__ = False

    def __init__(self, times, coords, scale=None):
        self.times = tuple(float(t) for t in times)
        self.coords = tuple(int(c) for c in coords)
        if len(self.times) != len(self.coords) or not self.times:
            raise ValueError("times and coords must be non-empty and of equal length")
        self.scale = (1.0,) * len(self.times) if scale is None else tuple(float(s) for s in scale)
        if len(self.scale) != len(self.times):
            raise ValueError("scale must match times")

    def check(self, s, k):
        if max(self.times) > s + 1e-12:
            raise ValueError(f"chi uses information after s={s}")
        if max(self.coords) >= k:
            raise ValueError(f"chi reads coordinate {max(self.coords)} beyond truncation k={k}")

    def __call__(self, w, grid):
        """``w`` is a projected path (..., steps+1, k)."""
        out = 1.0
        for t, cidx, sc in zip(self.times, self.coords, self.scale):
            out = out * np.tanh(sc * w[..., grid.index(t), cidx])
        return out


def martingale_samples(ens, Phi, s, t, chi=None):
    k = Phi.k
    if k > len(ens.phis):
        raise UnsupportedInputError(f"ensemble tracks {len(ens.phis)} coordinates, need {k}")
    js, jt = ens.grid.index(s), ens.grid.index(t)
    if not js < jt:
        raise ValueError("need s < t")
    w = ens.z[..., :k]
    alpha = gram(ens.c[:, js:jt + 1, :k])
    beta = ens.beta[:, js:jt + 1, :k]
    gen = generator_rinf(Phi, w[:, js:jt + 1], alpha, beta)
    integral = trapezoid(gen, ens.grid.dt)[:, -1]
    incr = Phi.value(w[:, jt]) - Phi.value(w[:, js]) - integral
    if chi is not None:
        chi.check(s, k)
        incr = incr * chi(w, ens.grid)
    min_eig = float(np.linalg.eigvalsh(alpha).min())
    asym = float(np.abs(alpha - np.swapaxes(alpha, -1, -2)).max())
    return incr, min_eig, asym


def martingale_residual(ens, sys, Phi, s, t, chi=None, allowance=0.0, sigma_mult=3.0, label=None):
    """``E[(Phi(w_t) - Phi(w_s) - int_s^t L(alpha, beta) Phi(w_r) dr) chi_s(w)]``.

    ``w`` is the run's cloud path projected on the first ``k`` tracked test
    functions; ``alpha``, ``beta`` are evaluated on the run's cloud.  The
    smallest eigenvalue of every ``alpha`` used is kept in the metadata.
    """
    if sys is not ens.sys:
        raise UnsupportedInputError("ensemble was built for a different system")
    samples, min_eig, asym = martingale_samples(ens, Phi, s, t, chi)
    r, se = _mean_and_stderr(samples)
    meta = {"s": float(s), "t": float(t), "k": Phi.k, "M": ens.M, "N": ens.N, "dt": ens.grid.dt,
            "alpha_min_eig": min_eig, "alpha_asymmetry": asym,
            "chi": None if chi is None else {"times": chi.times, "coords": chi.coords, "scale": chi.scale}}
    return ResidualReport("martingale", label or f"martingale s={s:g} t={t:g}", r, se,
                          float(allowance), sigma_mult, meta)


def mass_report(ens, t=None, sigma_mult=3.0):
    """``E <mu_t, 1> - 1`` (the mass is a martingale under the reference measure)."""
    j = ens.grid.steps if t is None else ens.grid.index(t)
    r, se = _mean_and_stderr(ens.mass[:, j] - 1.0)
    return ResidualReport("mass", f"mass t={j * ens.grid.dt:g}", r, se, 0.0, sigma_mult,
                          {"M": ens.M, "N": ens.N})


@dataclass(frozen=True)
class IntegrabilityReport:
    value: float
    per_run: np.ndarray
    ceiling: float

    @property
    def passed(self):
        return bool(np.isfinite(self.value) and self.value <= self.ceiling)

    def to_dict(self):
        return {"suite": "audit", "label": "integrability", "residual": self.value, "stderr": 0.0,
                "allowance": self.ceiling, "verdict": "pass" if self.passed else "fail",
                "metadata": {"ceiling": self.ceiling, "runs": int(len(self.per_run))}}


def fpe_integrability_audit(ens, sys, variant=None, ceiling=1e6):
    """Ensemble-and-time average of the integrability integrand up to ``T``."""
    if variant is not None and variant != sys.kind:
        raise UnsupportedInputError(f"variant {variant!r} does not match system {sys.kind!r}")
    per_run = trapezoid(ens.audit, ens.grid.dt)[:, -1]
    return IntegrabilityReport(float(per_run.mean()), per_run, float(ceiling))


def calibrate_allowance(fine, coarse, battery, times):
    """Per-entry discretization budget from a coupled run with twice the step.

    With weak order one the residual bias is ``C dt`` on the fine grid and
    ``2 C dt`` on the coarse one, so the coupled difference of the two
    residuals estimates the fine-grid bias.  Returns ``{(g, t): allowance}``
    keyed by battery position and time.
    """
    out = {}
    for gi, G in enumerate(battery):
        for t in times:
            rf = fpe_samples(fine, G, t).mean()
            rc = fpe_samples(coarse, G, t).mean()
            out[(gi, float(t))] = float(abs(rc - rf))
    return out


def calibrate_martingale_allowance(fine, coarse, Phi, s, t, chi):
    rf = martingale_samples(fine, Phi, s, t, chi)[0].mean()
    rc = martingale_samples(coarse, Phi, s, t, chi)[0].mean()
    return float(abs(rc - rf))


def write_jsonl(reports, filename):
    with open(filename, "w") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_dict(), sort_keys=True, default=_jsonable) + "\n")


def write_summary_csv(reports, filename):
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["suite", "label", "residual", "stderr", "allowance", "verdict"])
        for r in reports:
            d = r.to_dict()
            w.writerow([d["suite"], d["label"], repr(float(d["residual"])), repr(float(d["stderr"])),
                        repr(float(d["allowance"])), d["verdict"]])


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def random_lderiv_triple(rng, battery, initial, n, N=64):
    """A random functional from ``battery``, weighted cloud and smooth vector field."""
    G = battery[int(rng.integers(len(battery)))]
    mu = WeightedCloud(initial.sample(rng, N), rng.uniform(0.5, 1.5, N))
    v = VectorField(n, n, A=rng.uniform(-0.5, 0.5, (n, n)), c=rng.uniform(-0.5, 0.5, n),
                    amp=rng.uniform(-0.5, 0.5, n), K=rng.uniform(-1.0, 1.0, (n, n)))
    return G, mu, v


def lderiv_check(G, mu, v, eps, t=0.0):
    """Compare ``<mu, d_mu G(mu) . v>`` with difference quotients at ``eps`` and ``eps/10``."""
    vals = np.asarray(v(t, mu.atoms), float)
    analytic = float(pair_values(mu.weights, (lderiv(G, mu, mu.atoms) * vals).sum(axis=-1)))
    fd = lderiv_fd(G, mu, v, eps, t)
    fd_small = lderiv_fd(G, mu, v, eps / 10.0, t)
    scale = abs(analytic)
    e1 = abs(fd - analytic) / scale if scale > 0 else abs(fd - analytic)
    e2 = abs(fd_small - analytic) / scale if scale > 0 else abs(fd_small - analytic)
    order = float(np.log10(e1 / e2)) if e1 > 0 and e2 > 0 else float("nan")
    return {"analytic": analytic, "fd": fd, "fd_small": fd_small, "rel_error": e1,
            "rel_error_small": e2, "order": order}
