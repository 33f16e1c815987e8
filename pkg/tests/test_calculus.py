import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zakai_lab.calculus import (CylinderFunctionRInf, CylindricalFunctional, Dictionary, OuterFunction,
                                TestFunction, coeff_alpha, coeff_beta, coeff_matrices, eval_G, generator_L,
                                generator_Lcheck, generator_rinf, lderiv, lderiv2, lderiv_y, lift, lift_L,
                                lift_Lcheck, lift_via_lderiv, project_T)
from zakai_lab.errors import UnsupportedInputError
from zakai_lab.measure import WeightedCloud, pair
from zakai_lab.model import MatrixField, SystemCorrelatedNoise, SystemCorrelatedSensor, VectorField, system_from_config
from zakai_lab.scenarios import bounded_cn, bounded_cs

R = 4.0
ONE = TestFunction([0.0], R)
X1 = TestFunction([0.0], R, (0,))
X11 = TestFunction([0.0], R, (0, 0))


def cn1(b1=None, s0=0.0, s1=0.0, b2=None):
    return SystemCorrelatedNoise(1, 1, 1, b1 or VectorField(1, 1), MatrixField(1, 1, 1, S0=[[s0]]),
                                 MatrixField(1, 1, 1, S0=[[s1]]), b2 or VectorField(1, 1), np.eye(1))


def cs1(b1=None, s1=0.0, b2=None, s2=0.0):
    return SystemCorrelatedSensor(1, 1, 1, b1 or VectorField(1, 1), MatrixField(1, 1, 1, S0=[[s1]]),
                                  b2 or VectorField(1, 1), s2, np.sqrt(1 - s2 * s2))


def near_zero_cloud(N=5, seed=0):
    return WeightedCloud.uniform(np.random.default_rng(seed).uniform(-0.5, 0.5, (N, 1)))


# -- test functions ----------------------------------------------------------

def test_bump_flat_top_and_support():
    phi = TestFunction([1.0, -1.0], 2.0, ())
    assert phi.value(np.array([1.0, -1.0])) == 1.0
    assert phi.value(np.array([1.99, -1.0])) == 1.0
    assert 0.0 < phi.value(np.array([2.5, -1.0])) < 1.0
    pts = np.array([[3.0, -1.0], [1.0, 1.0], [5.0, 5.0]])
    v, g, h = phi.evaluate(pts)
    assert np.all(v == 0) and np.all(g == 0) and np.all(h == 0)
    inner = np.array([[1.5, -0.5], [0.5, -1.2]])
    v, g, h = phi.evaluate(inner)
    assert np.all(v == 1) and np.all(g == 0) and np.all(h == 0)


def _fd_check(phi, pts, step=1e-5):
    n = phi.n
    v, g, h = phi.evaluate(pts)
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        fd_g = (phi.value(pts + e) - phi.value(pts - e)) / (2 * step)
        fd_h = (phi.grad(pts + e) - phi.grad(pts - e)) / (2 * step)
        assert np.all(np.abs(fd_g - g[:, i]) <= 1e-6 * np.maximum(1.0, np.abs(g[:, i])))
        assert np.all(np.abs(fd_h - h[:, :, i]) <= 1e-6 * np.maximum(1.0, np.abs(h[:, :, i])))


@pytest.mark.parametrize("poly", [(), (0,), (1,), (0, 1), (1, 1)])
def test_test_function_derivatives_match_central_differences(poly):
    rng = np.random.default_rng(len(poly) * 7 + sum(poly))
    phi = TestFunction([0.3, -0.2], 2.5, poly)
    _fd_check(phi, rng.uniform(-3, 3, (1000, 2)))


def test_test_function_rejects_bad_indices():
    with pytest.raises(ValueError):
        TestFunction([0.0], 1.0, (1,))
    with pytest.raises(ValueError):
        TestFunction([0.0], 0.0)


# -- outer functions ---------------------------------------------------------

@pytest.mark.parametrize("g", [OuterFunction.linear([0.5, -1.0, 2.0]), OuterFunction.bilinear(3, 0, 2, 1.5),
                               OuterFunction.bilinear(3, 1, 1), OuterFunction.tanh([0.3, 1.0, -0.5], 0.1)])
def test_outer_derivatives(g):
    rng = np.random.default_rng(1)
    z = rng.normal(size=(50, 3))
    _, grad, hess = g.derivatives(z)
    step = 1e-6
    for u in range(3):
        e = np.zeros(3)
        e[u] = step
        assert np.allclose((g(z + e) - g(z - e)) / (2 * step), grad[:, u], atol=1e-8)
        assert np.allclose((g.grad(z + e) - g.grad(z - e)) / (2 * step), hess[:, :, u], atol=1e-8)
    assert np.array_equal(hess, np.swapaxes(hess, -1, -2))


# -- generators --------------------------------------------------------------

def test_generator_examples():
    x0 = np.zeros((1, 1))
    assert generator_L(cn1(s0=1.0), 0.0, X11)(x0)[0] == pytest.approx(1.0)
    xs = np.array([[0.3], [-0.7]])
    assert np.allclose(generator_L(cn1(b1=VectorField(1, 1, A=[[-1.0]])), 0.0, X1)(xs), -xs[:, 0])
    assert generator_L(cn1(s0=1.0, s1=1.0), 0.0, X11)(x0)[0] == pytest.approx(2.0)
    assert generator_Lcheck(cs1(s1=1.0), 0.0, X11)(x0)[0] == pytest.approx(1.0)
    assert np.allclose(generator_Lcheck(cs1(b1=VectorField(1, 1, A=[[-1.0]])), 0.0, X1)(xs), -xs[:, 0])
    assert generator_Lcheck(cs1(s1=np.sqrt(2.0)), 0.0, X11)(x0)[0] == pytest.approx(2.0)


# -- cylindrical functionals -------------------------------------------------

def test_eval_G_examples():
    mu = WeightedCloud(np.array([[0.1], [0.4]]), [1.0, 3.0])
    assert eval_G(CylindricalFunctional(OuterFunction.linear([1.0]), (ONE,)), mu) == mu.mass
    half = WeightedCloud(np.array([[0.0], [1.0]]), [1.0, 1.0])
    assert eval_G(CylindricalFunctional(OuterFunction.bilinear(1, 0, 0), (X1,)), half) == 0.25
    far = WeightedCloud(np.array([[10.0], [-12.0]]), [1.0, 1.0])
    G = CylindricalFunctional(OuterFunction.tanh([1.0, 2.0], 0.3), (ONE, X1))
    assert eval_G(G, far) == pytest.approx(np.tanh(0.3))


def test_lderiv_examples():
    mu = near_zero_cloud()
    y = np.array([[0.1], [2.5], [3.9]])
    lin = CylindricalFunctional(OuterFunction.linear([1.0]), (X11,))
    assert np.allclose(lderiv(lin, mu, y), X11.grad(y))
    assert np.all(lderiv2(lin, mu, y, y) == 0)
    sq = CylindricalFunctional(OuterFunction.bilinear(1, 0, 0), (X11,))
    z = pair(mu, X11)
    assert np.allclose(lderiv(sq, mu, y), 2 * z * X11.grad(y))
    assert np.allclose(lderiv_y(sq, mu, y), 2 * z * X11.hess(y))
    assert np.allclose(lderiv2(sq, mu, y, y[::-1]), 2 * X11.grad(y)[:, :, None] * X11.grad(y[::-1])[:, None, :])


# -- lifted generators -------------------------------------------------------

def test_lift_linear_zero_observation_drift():
    sys = system_from_config(bounded_cn()["system"])
    sys0 = SystemCorrelatedNoise(1, 1, 1, sys.b1, sys.sigma0, sys.sigma1, VectorField(1, 1), np.eye(1))
    mu = near_zero_cloud(20, 4)
    G = CylindricalFunctional(OuterFunction.linear([1.0]), (X11,))
    assert lift_L(sys0, 0.0, G, mu) == pytest.approx(pair(mu, generator_L(sys0, 0.0, X11)), abs=1e-14)
    cs = system_from_config(bounded_cs()["system"])
    cs0 = SystemCorrelatedSensor(1, 1, 1, cs.b1c, cs.sigma1c, VectorField(1, 1), cs.sigma2c, cs.sigma3c)
    assert lift_Lcheck(cs0, 0.0, G, mu) == pytest.approx(pair(mu, generator_Lcheck(cs0, 0.0, X11)), abs=1e-14)


def test_lift_zero_coefficients():
    mu = near_zero_cloud()
    G = CylindricalFunctional(OuterFunction.tanh([1.0, -2.0], 0.4), (ONE, X11))
    assert lift_L(cn1(), 0.0, G, mu) == 0.0
    zero_cs = SystemCorrelatedSensor(1, 1, 1, VectorField(1, 1), MatrixField(1, 1, 1), VectorField(1, 1), 0.0, 1.0)
    assert lift_Lcheck(zero_cs, 0.0, G, mu) == 0.0


def test_lift_quadratic_hand_expansion():
    # g = z^2, phi = 1 on the cloud, only a constant h = c: the lift is
    # 1/2 * 2 * <mu, c>^2 = c^2 * mass^2
    c = 0.7
    sys = cn1(b2=VectorField(1, 1, c=[c]))
    mu = WeightedCloud(np.array([[0.2], [-0.3], [0.5]]), [1.0, 2.0, 0.5])
    G = CylindricalFunctional(OuterFunction.bilinear(1, 0, 0), (ONE,))
    assert lift_L(sys, 0.0, G, mu) == pytest.approx(c * c * mu.mass ** 2, rel=1e-14)
    cs = cs1(b2=VectorField(1, 1, c=[c]), s2=0.6)
    assert lift_Lcheck(cs, 0.0, G, mu) == pytest.approx(c * c * mu.mass ** 2, rel=1e-14)


def test_lift_quadratic_with_noise_coupling():
    # phi = x near the cloud, sigma1 = s, h = 0, no drift: c = <mu, s>, beta = 0
    # (Hess phi = 0), so the lift is s^2 mass^2; sigma0 does not enter
    s = 0.4
    mu = WeightedCloud(np.array([[0.2], [-0.3]]), [1.0, 2.0])
    G = CylindricalFunctional(OuterFunction.bilinear(1, 0, 0), (X1,))
    assert lift_L(cn1(s0=3.0, s1=s), 0.0, G, mu) == pytest.approx(s * s * mu.mass ** 2, rel=1e-14)
    # sensor variant: tau = sigma1c sigma2c
    assert lift_Lcheck(cs1(s1=s, s2=0.6), 0.0, G, mu) == pytest.approx((s * 0.6 * mu.mass) ** 2, rel=1e-14)


def test_lift_variant_mismatch():
    mu = near_zero_cloud()
    G = CylindricalFunctional(OuterFunction.linear([1.0]), (ONE,))
    with pytest.raises(UnsupportedInputError):
        lift_L(cs1(), 0.0, G, mu)
    with pytest.raises(UnsupportedInputError):
        lift_Lcheck(cn1(), 0.0, G, mu)


def _two_dim_systems():
    b1 = VectorField(2, 2, A=[[-1.0, 0.3], [0.0, -0.5]], amp=[0.4, -0.2], K=[[1.0, 0.5], [0.0, 1.0]])
    s0 = MatrixField(2, 2, 2, S0=[[0.5, 0.1], [0.0, 0.3]], S1=[[[0.1, 0.0], [0.0, 0.2]], [[0.0, 0.1], [0.0, 0.0]]])
    s1 = MatrixField(2, 2, 2, S0=[[0.3, -0.2], [0.1, 0.4]], S2=[[0.1, 0.0], [0.05, 0.1]], w=[0.5, 1.0])
    zero = VectorField(2, 2)
    th = 0.5
    s2c = np.array([[0.6 * np.cos(th), 0.6 * np.sin(th)], [-0.2, 0.3]])
    s3c = np.linalg.cholesky(np.eye(2) - s2c @ s2c.T)
    return (SystemCorrelatedNoise(2, 2, 2, b1, s0, s1, zero, np.eye(2)),
            SystemCorrelatedSensor(2, 2, 2, b1, s1, zero, s2c, s3c))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_lift_agrees_with_lderiv_form(seed):
    rng = np.random.default_rng(seed)
    d = Dictionary.default(2, radii=(3.0,))
    mu = WeightedCloud.uniform(rng.normal(scale=1.0, size=(12, 2)))
    Gs = [CylindricalFunctional(OuterFunction.tanh(rng.normal(size=3), rng.normal()), d.phis[1:4]),
          CylindricalFunctional(OuterFunction.bilinear(2, 0, 1, 0.7), (d[2], d[5]))]
    for sys in _two_dim_systems():
        for G in Gs:
            a, b = lift(sys, 0.2, G, mu), lift_via_lderiv(sys, 0.2, G, mu)
            assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


# -- projection and coefficients ---------------------------------------------

def test_project_T_examples():
    d = Dictionary.default(1)
    x0 = np.array([[0.3]])
    assert np.allclose(project_T(WeightedCloud(x0, [1.0]), d, 3), [1.0, 0.3, 0.09])
    assert np.all(project_T(WeightedCloud(x0, [0.0]), d, 3) == 0)
    mu = near_zero_cloud(6, 1)
    assert np.allclose(project_T(WeightedCloud(mu.atoms, 2.5 * mu.weights), d, 3), 2.5 * project_T(mu, d, 3))
    with pytest.raises(ValueError):
        project_T(mu, d, 4)


def test_coefficients():
    sys = system_from_config(bounded_cn()["system"])
    d = Dictionary.default(1)
    mu = WeightedCloud(np.random.default_rng(2).normal(size=(40, 1)), np.random.default_rng(3).uniform(0, 2, 40))
    for u in range(3):
        for v in range(3):
            assert coeff_alpha(sys, 0.1, mu, d, u, v) == coeff_alpha(sys, 0.1, mu, d, v, u)
    beta, alpha = coeff_matrices(sys, 0.1, mu, d, 3)
    assert np.linalg.eigvalsh(alpha).min() >= -1e-10
    assert beta[1] == pytest.approx(coeff_beta(sys, 0.1, mu, d, 1), abs=1e-15)
    G = CylindricalFunctional(OuterFunction.linear([1.0]), (d[2],))
    assert lift_L(sys, 0.1, G, mu) == pytest.approx(coeff_beta(sys, 0.1, mu, d, 2), abs=1e-14)
    _, alpha0 = coeff_matrices(cn1(s0=1.0, b1=VectorField(1, 1, A=[[-1.0]])), 0.0, mu, d, 3)
    assert np.all(alpha0 == 0)


def test_cylinder_function_ignores_tail():
    Phi = CylinderFunctionRInf(2, OuterFunction.tanh([1.0, -0.5], 0.2))
    w = np.random.default_rng(0).normal(size=(30, 6))
    assert np.all(Phi.grad(w)[:, 2:] == 0)
    assert np.all(Phi.hess(w)[:, 2:, :] == 0) and np.all(Phi.hess(w)[:, :, 2:] == 0)
    w2 = w.copy()
    w2[:, 2:] = 99.0
    assert np.array_equal(Phi(w), Phi(w2))
    alpha = np.eye(6)
    beta = np.ones(6)
    expected = 0.5 * np.trace(Phi.hess(w[0])) + Phi.grad(w[0]).sum()
    assert generator_rinf(Phi, w[0], alpha, beta) == pytest.approx(expected, abs=1e-14)
