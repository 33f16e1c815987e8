"""Cylindrical functionals of measures and the operators acting on them.

A test function is ``phi(x) = p(x) * chi(x)`` with ``p`` one of ``1``,
``x_i`` or ``x_i x_j`` and ``chi`` a smooth flat-top bump: ``chi = 1`` on
``|x - c| <= R/2`` and ``chi = 0`` on ``|x - c| >= R``.  A cylindrical
functional is ``G(mu) = g(<mu, phi_1>, ..., <mu, phi_k>)``.

Everything that involves the system goes through :func:`pairing_stats`,
which returns for each ``phi_u``

* ``z_u    = <mu, phi_u>``
* ``beta_u = <mu, L phi_u>`` (signal generator)
* ``c_u^l  = <mu, phi_u rho^l + grad phi_u . tau^{:, l}>`` (noise coefficient)

with ``rho, tau`` taken from ``sys.local``.  The lifted generator is then
``1/2 d_uv g sum_l c_u^l c_v^l + d_u g beta_u``.  The L-derivative route
(:func:`lift_via_lderiv`) reads the raw coefficient fields instead and is
kept separate on purpose so the two can be compared.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UnsupportedInputError
from .measure import WeightedCloud, pair_values
from .model import outer_self

_EDGE = 1e-6


def _step_profile(u):
    """Smooth step S(u): 0 for u <= 0, 1 for u >= 1, with S', S''.

    ``S(u) = logistic(1/(1-u) - 1/u)`` on (0, 1).  Inputs are clipped away
    from the end points, where S is flat to working precision anyway.
    """
    u = np.asarray(u, float)
    v = np.clip(u, _EDGE, 1.0 - _EDGE)
    ia = 1.0 / (1.0 - v)
    ib = 1.0 / v
    q = ia - ib
    q1 = ia * ia + ib * ib
    q2 = 2.0 * (ia * ia * ia - ib * ib * ib)
    # |q| > 600 only where S is flat to far below double precision; the cap
    # keeps exp away from its slow underflow path
    qc = np.clip(q, -600.0, 600.0)
    L = 1.0 / (1.0 + np.exp(-qc))
    e = np.exp(-np.abs(qc))
    LL = e / ((1.0 + e) * (1.0 + e))
    mid = ((u > _EDGE) & (u < 1.0 - _EDGE)).astype(float)
    val = mid * L + (u >= 1.0 - _EDGE)
    d1 = mid * LL * q1
    d2 = mid * LL * ((1.0 - 2.0 * L) * q1 * q1 + q2)
    return val, d1, d2


@dataclass(frozen=True)
class TestFunction:
    """``phi(x) = p(x) chi_R(x - center)``; ``poly`` holds 0, 1 or 2 coordinate indices."""
    center: tuple
    radius: float
    poly: tuple = ()

    __test__ = False  # not a pytest class

    def __post_init__(self):
        center = tuple(float(c) for c in np.atleast_1d(self.center))
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "poly", tuple(int(i) for i in self.poly))
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if len(self.poly) > 2 or any(not 0 <= i < len(center) for i in self.poly):
            raise ValueError(f"bad polynomial indices {self.poly} for n={len(center)}")

    @property
    def n(self):
        return len(self.center)

    def _bump(self, x):
        c = np.asarray(self.center)
        r2 = self.radius ** 2
        dx = x - c
        s = (dx * dx).sum(axis=-1) / r2
        S, S1, S2 = _step_profile((1.0 - s) / 0.75)
        ds_du = -4.0 / 3.0
        ds = 2.0 * dx / r2                      # d s / d x_i
        g = (S1 * ds_du)[..., None] * ds
        eye = np.eye(self.n)
        h = ((S2 * ds_du * ds_du)[..., None, None] * ds[..., :, None] * ds[..., None, :]
             + (S1 * ds_du)[..., None, None] * (2.0 / r2) * eye)
        return S, g, h

    def _poly(self, x):
        shape = x.shape[:-1]
        n = self.n
        val = np.ones(shape)
        grad = np.zeros(shape + (n,))
        hess = np.zeros(shape + (n, n))
        if len(self.poly) == 1:
            (i,) = self.poly
            val = x[..., i].copy()
            grad[..., i] = 1.0
        elif len(self.poly) == 2:
            i, j = self.poly
            val = x[..., i] * x[..., j]
            grad[..., i] += x[..., j]
            grad[..., j] += x[..., i]
            hess[..., i, j] += 1.0
            hess[..., j, i] += 1.0
        return val, grad, hess

    def value(self, x):
        x = np.asarray(x, float)
        chi = self._bump(x)[0]
        return self._poly(x)[0] * chi

    def grad(self, x):
        return self.evaluate(x)[1]

    def hess(self, x):
        return self.evaluate(x)[2]

    def evaluate(self, x, bump=None):
        """Value (...,), gradient (..., n) and Hessian (..., n, n) in one pass.

        ``bump`` may carry a precomputed ``_bump(x)`` shared by test
        functions with the same center and radius.
        """
        x = np.asarray(x, float)
        chi, dchi, hchi = self._bump(x) if bump is None else bump
        if not self.poly:
            return chi, dchi, hchi
        if len(self.poly) == 1:
            (i,) = self.poly
            p = x[..., i]
            grad = p[..., None] * dchi
            grad[..., i] += chi
            hess = p[..., None, None] * hchi
            hess[..., i, :] += dchi
            hess[..., :, i] += dchi
            return p * chi, grad, hess
        p, dp, hp = self._poly(x)
        val = p * chi
        grad = chi[..., None] * dp + p[..., None] * dchi
        hess = (p[..., None, None] * hchi + dp[..., :, None] * dchi[..., None, :]
                + dchi[..., :, None] * dp[..., None, :] + chi[..., None, None] * hp)
        return val, grad, hess

    def __call__(self, x):
        return self.value(x)


def evaluate_family(phis, x):
    """``phi.evaluate(x)`` for each test function, sharing bump evaluations."""
    x = np.asarray(x, float)
    bumps = {}
    out = []
    for phi in phis:
        key = (phi.center, phi.radius)
        if key not in bumps:
            bumps[key] = phi._bump(x)
        out.append(phi.evaluate(x, bumps[key]))
    return out


class OuterFunction:
    """Outer function ``g`` of a cylindrical functional.

    ``linear``: ``a . z``; ``bilinear``: ``scale * z_u z_v``;
    ``tanh``: ``tanh(a . z + b)``.  Arguments are batched ``(..., k)``.
    """

    FORMS = ("linear", "bilinear", "tanh")

    def __init__(self, form, k, a=None, b=0.0, pair=(0, 0), scale=1.0):
        if form not in self.FORMS:
            raise ValueError(f"unknown outer form {form!r}")
        self.form, self.k = form, int(k)
        self.a = np.ones(self.k) if a is None else np.asarray(a, float).reshape(self.k)
        self.b = float(b)
        self.pair = tuple(int(i) for i in pair)
        self.scale = float(scale)
        if form == "bilinear" and not all(0 <= i < self.k for i in self.pair):
            raise ValueError(f"bilinear indices {self.pair} out of range for k={self.k}")

    @classmethod
    def linear(cls, a):
        a = np.atleast_1d(np.asarray(a, float))
        return cls("linear", len(a), a=a)

    @classmethod
    def bilinear(cls, k, u, v, scale=1.0):
        return cls("bilinear", k, pair=(u, v), scale=scale)

    @classmethod
    def tanh(cls, a, b=0.0):
        a = np.atleast_1d(np.asarray(a, float))
        return cls("tanh", len(a), a=a, b=b)

    def __repr__(self):
        if self.form == "bilinear":
            return f"OuterFunction(bilinear, k={self.k}, pair={self.pair}, scale={self.scale})"
        return f"OuterFunction({self.form}, a={self.a.tolist()}, b={self.b})"

    def derivatives(self, z):
        """Value, gradient and Hessian at ``z`` of shape (..., k)."""
        z = np.asarray(z, float)
        shape = z.shape[:-1]
        k = self.k
        if self.form == "linear":
            val = (z * self.a).sum(axis=-1)
            grad = np.broadcast_to(self.a, shape + (k,)).copy()
            hess = np.zeros(shape + (k, k))
        elif self.form == "bilinear":
            u, v = self.pair
            val = self.scale * z[..., u] * z[..., v]
            grad = np.zeros(shape + (k,))
            grad[..., u] += self.scale * z[..., v]
            grad[..., v] += self.scale * z[..., u]
            hess = np.zeros(shape + (k, k))
            hess[..., u, v] += self.scale
            hess[..., v, u] += self.scale
        else:
            arg = (z * self.a).sum(axis=-1) + self.b
            th = np.tanh(arg)
            sech2 = 1.0 - th * th
            val = th
            grad = sech2[..., None] * self.a
            hess = (-2.0 * th * sech2)[..., None, None] * self.a[:, None] * self.a[None, :]
        return val, grad, hess

    def __call__(self, z):
        return self.derivatives(z)[0]

    def grad(self, z):
        return self.derivatives(z)[1]

    def hess(self, z):
        return self.derivatives(z)[2]


@dataclass(frozen=True, eq=False)
class CylindricalFunctional:
    g: OuterFunction
    phis: tuple

    def __post_init__(self):
        phis = tuple(self.phis)
        if len(phis) < 1 or len(phis) != self.g.k:
            raise ValueError(f"g takes {self.g.k} arguments but {len(phis)} test functions were given")
        object.__setattr__(self, "phis", phis)

    @property
    def k(self):
        return len(self.phis)

    def pairings(self, mu):
        return np.array([pair_values(mu.weights, phi.value(mu.atoms)) for phi in self.phis])

    def __call__(self, mu):
        return eval_G(self, mu)

    def describe(self):
        return {"g": repr(self.g), "phis": [dict(center=list(p.center), radius=p.radius, poly=list(p.poly))
                                            for p in self.phis]}


def eval_G(G, mu):
    return float(G.g(G.pairings(mu)))


# -- signal generators -------------------------------------------------------

def _apply_generator(drift, diffusion, phi, x):
    _, grad, hess = phi.evaluate(x)
    return (drift * grad).sum(axis=-1) + 0.5 * (diffusion * hess).sum(axis=(-2, -1))


def generator_L(sys, t, phi):
    """``x -> b1 . grad phi + 1/2 tr((sigma0 sigma0^T + sigma1 sigma1^T) Hess phi)``."""
    def L_phi(x):
        x = np.asarray(x, float)
        a = outer_self(sys.sigma0(t, x)) + outer_self(sys.sigma1(t, x))
        return _apply_generator(sys.b1(t, x), a, phi, x)
    return L_phi


def generator_Lcheck(sys, t, phi):
    def L_phi(x):
        x = np.asarray(x, float)
        return _apply_generator(sys.b1c(t, x), outer_self(sys.sigma1c(t, x)), phi, x)
    return L_phi


def generator_for(sys):
    return generator_L if sys.kind == "cn" else generator_Lcheck


# -- L-derivatives of cylindrical functionals --------------------------------

def _outer_at(G, mu):
    return G.g.derivatives(G.pairings(mu))


def lderiv(G, mu, y):
    """``d_mu G(mu)(y) = d_u g * grad phi_u(y)``; ``y`` may be batched (..., n)."""
    _, dg, _ = _outer_at(G, mu)
    y = np.asarray(y, float)
    return sum(dg[u] * phi.grad(y) for u, phi in enumerate(G.phis))


def lderiv_y(G, mu, y):
    _, dg, _ = _outer_at(G, mu)
    y = np.asarray(y, float)
    return sum(dg[u] * phi.hess(y) for u, phi in enumerate(G.phis))


def lderiv2(G, mu, y, y2):
    """``d_uv g * grad phi_u(y) grad phi_v(y2)^T``; batched over matching leading axes."""
    _, _, hg = _outer_at(G, mu)
    y, y2 = np.asarray(y, float), np.asarray(y2, float)
    g1 = [phi.grad(y) for phi in G.phis]
    g2 = [phi.grad(y2) for phi in G.phis]
    out = 0.0
    for u in range(G.k):
        for v in range(G.k):
            if hg[u, v] != 0.0:
                out = out + hg[u, v] * g1[u][..., :, None] * g2[v][..., None, :]
    return out + np.zeros(np.broadcast_shapes(y.shape, y2.shape) + (y.shape[-1],))


# -- pairing statistics and lifted operators ---------------------------------

def pairing_stats(sys, t, atoms, weights, phis):
    """Pairings ``z``, ``beta`` and ``c`` of a (batch of) weighted clouds.

    ``atoms`` (..., N, n), ``weights`` (..., N).  Returns ``z`` (..., k),
    ``beta`` (..., k) and ``c`` (..., k, m).  Sums over atoms always run over
    the last, contiguous axis so results do not depend on the batch size.
    """
    atoms = np.asarray(atoms, float)
    weights = np.asarray(weights, float)
    loc = sys.local(t, atoms)
    m = loc.rho.shape[-1]
    k = len(phis)
    lead = weights.shape[:-1]
    z = np.empty(lead + (k,))
    beta = np.empty(lead + (k,))
    c = np.empty(lead + (k, m))
    for u, (val, grad, hess) in enumerate(evaluate_family(phis, atoms)):
        Lphi = (loc.drift * grad).sum(axis=-1) + 0.5 * (loc.diffusion * hess).sum(axis=(-2, -1))
        z[..., u] = pair_values(weights, val)
        beta[..., u] = pair_values(weights, Lphi)
        for l in range(m):
            integrand = val * loc.rho[..., l] + (grad * loc.tau[..., :, l]).sum(axis=-1)
            c[..., u, l] = pair_values(weights, integrand)
    return z, beta, c


def gram(c):
    """``alpha^{uv} = sum_l c_u^l c_v^l``."""
    return (c[..., :, None, :] * c[..., None, :, :]).sum(axis=-1)


def lift_from_stats(g, z, beta, c):
    _, dg, hg = g.derivatives(z)
    return 0.5 * (hg * gram(c)).sum(axis=(-2, -1)) + (dg * beta).sum(axis=-1)


def noise_from_stats(g, z, c):
    """Coefficient of ``dDriver^l`` in ``dG``: ``d_u g c_u^l`` (..., m)."""
    _, dg, _ = g.derivatives(z)
    return (dg[..., :, None] * c).sum(axis=-2)


def lift_L(sys, t, G, mu):
    """Lifted generator on cylindrical functionals, correlated-noise system."""
    if sys.kind != "cn":
        raise UnsupportedInputError("lift_L needs a correlated-noise system")
    z, beta, c = pairing_stats(sys, t, mu.atoms, mu.weights, G.phis)
    return float(lift_from_stats(G.g, z, beta, c))


def lift_Lcheck(sys, t, G, mu):
    if sys.kind != "cs":
        raise UnsupportedInputError("lift_Lcheck needs a correlated-sensor system")
    z, beta, c = pairing_stats(sys, t, mu.atoms, mu.weights, G.phis)
    return float(lift_from_stats(G.g, z, beta, c))


def lift(sys, t, G, mu):
    return lift_L(sys, t, G, mu) if sys.kind == "cn" else lift_Lcheck(sys, t, G, mu)


def lift_via_lderiv(sys, t, G, mu):
    """Lifted generator written through L-derivatives (zero observation drift).

    ``1/2 iint tr(d2_mu G(y, y') K(y, y')) + 1/2 int tr(d_y d_mu G(y) a(y))
    + int d_mu G(y) . b(y)``, where ``K(y, y')`` is the cross kernel of the
    common noise and ``a`` the full diffusion, all rebuilt here from the raw
    coefficient fields.  Costs O(N^2); meant for checks on small clouds.
    """
    x, w = mu.atoms, mu.weights
    N = mu.N
    if sys.kind == "cn":
        s1 = sys.sigma1(t, x)
        s0 = sys.sigma0(t, x)
        a = np.einsum("nik,njk->nij", s0, s0) + np.einsum("nik,njk->nij", s1, s1)
        b = sys.b1(t, x)
        left = s1
        right = s1
        mid = np.eye(sys.m)
    else:
        s1 = sys.sigma1c(t, x)
        a = np.einsum("nik,njk->nij", s1, s1)
        b = sys.b1c(t, x)
        left = right = s1
        mid = sys.sigma2c.T @ sys.sigma2c
    kernel = np.einsum("aik,kl,bjl->abij", left, mid, right)      # (N, N, n, n)
    d2 = lderiv2(G, mu, x[:, None, :], x[None, :, :])              # (N, N, n, n)
    ww = np.outer(w, w) / (N * N)
    term2 = 0.5 * float(np.sum(ww * np.einsum("abij,abij->ab", d2, kernel)))
    dy = lderiv_y(G, mu, x)
    term_a = 0.5 * float(np.sum(w * np.einsum("nij,nij->n", dy, a)) / N)
    dmu = lderiv(G, mu, x)
    term_b = float(np.sum(w * np.einsum("ni,ni->n", dmu, b)) / N)
    return term2 + term_a + term_b


# -- dictionary and the R^infinity side --------------------------------------

class Dictionary:
    """Ordered family of test functions ``phi_1, phi_2, ...``."""

    def __init__(self, phis):
        self.phis = tuple(phis)
        if not self.phis:
            raise ValueError("empty dictionary")

    def __len__(self):
        return len(self.phis)

    def __getitem__(self, u):
        return self.phis[u]

    @classmethod
    def default(cls, n, radii=(4.0,), center=None, pairwise=True):
        """Bumps at each radius with polynomial parts 1, x_i and, optionally, x_i x_j."""
        center = np.zeros(n) if center is None else np.asarray(center, float)
        polys = [()] + [(i,) for i in range(n)]
        if pairwise:
            polys += [(i, j) for i in range(n) for j in range(i, n)]
        return cls([TestFunction(center, r, p) for r in radii for p in polys])

    @classmethod
    def from_config(cls, cfg, n, where="dictionary"):
        if cfg is None:
            return cls.default(n)
        if "entries" in cfg:
            try:
                return cls([TestFunction(e["center"], e["radius"], e.get("poly", ())) for e in cfg["entries"]])
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"{where}.entries", str(exc)) from None
        try:
            d = cls.default(n, radii=cfg.get("radii", (4.0,)), center=cfg.get("center"),
                            pairwise=cfg.get("pairwise", True))
        except ValueError as exc:
            raise ConfigError(where, str(exc)) from None
        count = cfg.get("count")
        if count is not None:
            if not 1 <= int(count) <= len(d):
                raise ConfigError(f"{where}.count", f"must be in 1..{len(d)}")
            d = cls(d.phis[:int(count)])
        return d


def project_T(mu, dictionary, k):
    if not 1 <= k <= len(dictionary):
        raise ValueError(f"k={k} outside 1..{len(dictionary)}")
    return np.array([pair_values(mu.weights, dictionary[u].value(mu.atoms)) for u in range(k)])


def coeff_beta(sys, t, mu, dictionary, u):
    _, beta, _ = pairing_stats(sys, t, mu.atoms, mu.weights, (dictionary[u],))
    return float(beta[0])


def coeff_alpha(sys, t, mu, dictionary, u, v):
    _, _, c = pairing_stats(sys, t, mu.atoms, mu.weights, (dictionary[u], dictionary[v]))
    return float(np.sum(c[0] * c[1]))


def coeff_matrices(sys, t, mu, dictionary, k):
    """``(beta, alpha)`` for the first ``k`` dictionary entries in one pass."""
    _, beta, c = pairing_stats(sys, t, mu.atoms, mu.weights, dictionary.phis[:k])
    return beta, gram(c)


class CylinderFunctionRInf:
    """``Phi(w) = base(w^1, ..., w^k)`` on sequences; coordinates past ``k`` are ignored."""

    def __init__(self, k, base):
        if base.k != k:
            raise ValueError("base function arity must equal k")
        self.k, self.base = int(k), base

    def value(self, w):
        w = np.asarray(w, float)
        return self.base(w[..., :self.k])

    def grad(self, w):
        w = np.asarray(w, float)
        out = np.zeros(w.shape)
        out[..., :self.k] = self.base.grad(w[..., :self.k])
        return out

    def hess(self, w):
        w = np.asarray(w, float)
        out = np.zeros(w.shape + (w.shape[-1],))
        out[..., :self.k, :self.k] = self.base.hess(w[..., :self.k])
        return out

    def __call__(self, w):
        return self.value(w)


def generator_rinf(Phi, w, alpha, beta):
    """``1/2 alpha^{uv} d_uv Phi + beta^u d_u Phi`` at truncation ``k``."""
    k = Phi.k
    _, dphi, hphi = Phi.base.derivatives(np.asarray(w, float)[..., :k])
    return (0.5 * (np.asarray(alpha)[..., :k, :k] * hphi).sum(axis=(-2, -1))
            + (np.asarray(beta)[..., :k] * dphi).sum(axis=-1))


def pushforward(mu, v, eps, t=0.0):
    """Move every atom by ``eps * v(t, x)``; weights are kept."""
    return WeightedCloud(mu.atoms + eps * np.asarray(v(t, mu.atoms), float), mu.weights)
