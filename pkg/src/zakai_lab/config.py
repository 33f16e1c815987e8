"""Scenario documents: loading, validation and derived objects.

A scenario is a JSON tree (see :mod:`zakai_lab.scenarios` for complete
examples).  Top-level fields::

    schema_version, name, system, initial, grid {T, steps}, particles,
    ensemble, dictionary, battery, martingale, check_times, seed,
    tolerances, output

Validation errors are :class:`~zakai_lab.errors.ConfigError` carrying the
dotted path of the offending field.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import numpy as np

from .calculus import CylinderFunctionRInf, CylindricalFunctional, Dictionary, OuterFunction
from .errors import ConfigError
from .model import system_from_config
from .paths import TimeGrid
from .scenarios import SCHEMA_VERSION
from .sde import initial_from_config
from .verify import TestMartFunctional
from .zakai import system_fingerprint

DEFAULT_TOLERANCES = {
    "sigma_mult": 3.0,
    "pass_fraction": 0.95,
    "audit_ceiling": 1e6,
    "lderiv_rel": 1e-4,
    "lderiv_eps": 1e-4,
    "lderiv_triples": 100,
    "kalman_mean": 0.02,
    "kalman_var_rel": 0.10,
    "reduction": 1e-10,
}


def _positive_int(cfg, key, where):
    if key not in cfg:
        raise ConfigError(f"{where}{key}", "missing")
    try:
        v = int(cfg[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{where}{key}", "must be an integer") from None
    if v < 1 or v != cfg[key]:
        raise ConfigError(f"{where}{key}", "must be a positive integer")
    return v


def outer_from_config(cfg, k, where):
    form = cfg.get("form")
    try:
        if form == "linear":
            return OuterFunction("linear", k, a=cfg.get("a"))
        if form == "bilinear":
            return OuterFunction("bilinear", k, pair=cfg.get("pair", (0, 0)), scale=cfg.get("scale", 1.0))
        if form == "tanh":
            return OuterFunction("tanh", k, a=cfg.get("a"), b=cfg.get("b", 0.0))
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None
    raise ConfigError(f"{where}.form", f"unknown form {form!r}")


@dataclass(eq=False)
class Scenario:
    raw: dict
    system: object
    initial: object
    grid: TimeGrid
    N: int
    M: int
    dictionary: Dictionary
    battery: list
    martingale_phis: list
    martingale_chis: list
    martingale_k: int
    s: float
    t: float
    check_times: list
    seed: int
    tolerances: dict
    output: str

    @property
    def name(self):
        return self.raw.get("name", "scenario")

    @property
    def fingerprint(self):
        """Hash of the effective configuration (output location excluded)."""
        body = {k: v for k, v in self.raw.items() if k != "output"}
        return system_fingerprint(body)

    @property
    def tracked_phis(self):
        """Test functions whose pairings every ensemble records."""
        k = max([self.martingale_k] + [1 + max(b["phis"]) for b in self.raw.get("battery", [])])
        return self.dictionary.phis[:k]


def parse_scenario(raw, seed=None, dt_override=None, particles_override=None):
    raw = copy.deepcopy(raw)
    if seed is not None:
        raw["seed"] = int(seed)
    if particles_override is not None:
        raw["particles"] = int(particles_override)
    grid_cfg = raw.get("grid")
    if not isinstance(grid_cfg, dict):
        raise ConfigError("grid", "missing")
    if dt_override is not None:
        T = float(grid_cfg.get("T", 1.0))
        steps = int(round(T / float(dt_override)))
        if steps < 1 or abs(steps * float(dt_override) - T) > 1e-9 * T:
            raise ConfigError("grid.dt", f"dt={dt_override} does not divide T={T}")
        raw["grid"] = dict(grid_cfg, steps=steps)
        grid_cfg = raw["grid"]

    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
    if "system" not in raw:
        raise ConfigError("system", "missing")
    system = system_from_config(raw["system"])
    initial = initial_from_config(raw.get("initial", {}), system.n)
    try:
        T = float(grid_cfg["T"])
    except KeyError:
        raise ConfigError("grid.T", "missing") from None
    if not T > 0:
        raise ConfigError("grid.T", "must be positive")
    grid = TimeGrid(T, _positive_int(grid_cfg, "steps", "grid."))
    N = _positive_int(raw, "particles", "")
    M = _positive_int(raw, "ensemble", "")
    dictionary = Dictionary.from_config(raw.get("dictionary"), system.n)

    battery = []
    for i, b in enumerate(raw.get("battery", [])):
        where = f"battery[{i}]"
        idx = b.get("phis")
        if not idx:
            raise ConfigError(f"{where}.phis", "must list dictionary indices")
        for u in idx:
            if not 0 <= int(u) < len(dictionary):
                raise ConfigError(f"{where}.phis", f"index {u} outside dictionary of size {len(dictionary)}")
        g = outer_from_config(b, len(idx), where)
        battery.append(CylindricalFunctional(g, tuple(dictionary[int(u)] for u in idx)))

    mcfg = raw.get("martingale", {})
    k = int(mcfg.get("k", 3))
    if not 1 <= k <= len(dictionary):
        raise ConfigError("martingale.k", f"must be in 1..{len(dictionary)}")
    s = float(mcfg.get("s", T / 2))
    t = float(mcfg.get("t", T))
    for name, v in (("s", s), ("t", t)):
        try:
            grid.index(v)
        except ValueError as exc:
            raise ConfigError(f"martingale.{name}", str(exc)) from None
    if not 0 <= s < t:
        raise ConfigError("martingale.s", "need 0 <= s < t")
    phis = [CylinderFunctionRInf(k, outer_from_config(p, k, f"martingale.Phi[{i}]"))
            for i, p in enumerate(mcfg.get("Phi", []))]
    chis = []
    for i, c in enumerate(mcfg.get("chi", [])):
        where = f"martingale.chi[{i}]"
        fr = c.get("s_fractions")
        times = [f * s for f in fr] if fr is not None else c.get("times")
        try:
            times = [grid.times[grid.index(tt)] for tt in times]
            chi = TestMartFunctional(times, c["coords"], c.get("scale"))
            chi.check(s, k)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(where, str(exc)) from None
        chis.append(chi)

    check_times = [float(x) for x in raw.get("check_times", [T])]
    for x in check_times:
        try:
            grid.index(x)
        except ValueError as exc:
            raise ConfigError("check_times", str(exc)) from None
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(raw.get("tolerances", {}))
    seed_v = raw.get("seed", 0)
    if not isinstance(seed_v, int) or seed_v < 0:
        raise ConfigError("seed", "must be a nonnegative integer")
    return Scenario(raw, system, initial, grid, N, M, dictionary, battery, phis, chis, k, s, t,
                    check_times, seed_v, tol, str(raw.get("output", "out")))


def load_scenario(path, **overrides):
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<document>", f"invalid JSON: {exc}") from None
    return parse_scenario(raw, **overrides)


def linear_gaussian_from_scenario(sc):
    """Extract a linear-Gaussian spec when the scenario describes one."""
    from .oracle import LinearGaussianSpec
    cfg = sc.raw["system"]
    sys = sc.system
    if sys.kind != "cn":
        raise ConfigError("system.variant", "the Kalman suite needs a correlated-noise system")
    for key, kinds in (("b1", ("affine",)), ("b2", ("affine",)), ("sigma0", ("constant",)),
                       ("sigma1", ("constant",)), ("sigma2", ("constant",))):
        if cfg[key].get("kind", "affine" if key in ("b1", "b2") else "constant") not in kinds:
            raise ConfigError(f"system.{key}", "the Kalman suite needs affine drifts and constant noise")
    for key in ("b1", "b2"):
        if np.any(np.asarray(cfg[key].get("c", 0.0)) != 0) or "table" in cfg[key]:
            raise ConfigError(f"system.{key}", "the Kalman suite needs linear drifts")
    init = sc.raw.get("initial", {})
    if init.get("kind", "gaussian") != "gaussian":
        raise ConfigError("initial.kind", "the Kalman suite needs a Gaussian initial law")
    return LinearGaussianSpec(A=cfg["b1"]["A"], C=cfg["b2"]["A"], sigma0=cfg["sigma0"]["value"],
                              sigma1=cfg["sigma1"]["value"], sigma2=cfg["sigma2"]["value"],
                              m0=init["mean"], P0=init["cov"])
