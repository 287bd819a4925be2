import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm
from scipy.optimize import minimize

from robustavg.differentiation import (GRAD_STEP, QuadraticModel, fd_gradient, fd_hessian,
                                       fidelity_and_gradient, fidelity_gradient, fidelity_hessian,
                                       fidelity_model, robustness_gradient, robustness_hessian,
                                       robustness_model)
from robustavg.propagation import ControlProblem, nominal_fidelity, propagate_nominal
from robustavg.uncertainty import ConstantParam, PWCNoise

from conftest import I2, X, Z, fig1_problem, random_problem

seeds = st.integers(0, 2**31 - 1)


def single_pulse():
    return ControlProblem(np.zeros((2, 2)), X[None], expm(-1j * X), 1.0, 1, 1)


def F_of(p):
    return lambda x: nominal_fidelity(propagate_nominal(p, x), p.target)


@pytest.mark.parametrize("v", [-0.4, 0.3, 1.0, 1.7])
def test_single_pulse_closed_form(v):
    p = single_pulse()
    F, g, _ = fidelity_and_gradient(p, [v])
    assert F == pytest.approx(np.cos(1 - v) ** 2, abs=1e-14)
    assert g[0] == pytest.approx(np.sin(2 * (1 - v)), abs=1e-10)
    H = fidelity_hessian(p, [v])
    assert H[0, 0] == pytest.approx(-2 * np.cos(2 * (1 - v)), abs=1e-8)


def test_gradient_vanishes_at_optimum():
    assert abs(fidelity_gradient(single_pulse(), [1.0])[0]) < 1e-15
    assert fidelity_hessian(single_pulse(), [1.0])[0, 0] == pytest.approx(-2.0, abs=1e-8)


def test_empty_control_vector():
    p = ControlProblem(Z, np.zeros((0, 2, 2)), I2, 1.0, 1, 1)
    F, g, _ = fidelity_and_gradient(p, np.zeros(0))
    assert g.shape == (0,)


@given(seeds)
def test_gradient_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 3))
    N = int(rng.integers(1, 7))
    p = random_problem(rng, n=2, m=m, N=N, M=N * int(rng.integers(1, 4)))
    v = rng.uniform(-2, 2, p.n_params)
    g = fidelity_gradient(p, v)
    assert np.abs(g - fd_gradient(F_of(p), v, GRAD_STEP)).max() <= 1e-6


def test_gradient_with_actuator_filter(rng):
    p = ControlProblem(Z, X[None], I2, 1.0, 3, 9, actuator=0.5 ** np.arange(9))
    v = rng.standard_normal(3)
    assert np.allclose(fidelity_gradient(p, v), fd_gradient(F_of(p), v), atol=1e-8)


def test_hessian_symmetry(rng):
    p = random_problem(rng, m=2, N=3, M=6)
    v = rng.standard_normal(p.n_params)
    H, raw = fidelity_hessian(p, v, return_raw=True)
    assert np.abs(raw - raw.T).max() <= 1e-5
    assert np.array_equal(H, H.T)


def test_hessian_near_top_is_negative_semidefinite():
    p = fig1_problem()

    def obj(x):
        F, g, _ = fidelity_and_gradient(p, x)
        return 1 - F, -g

    res = minimize(obj, np.full(5, 3.0), jac=True, method="BFGS", options={"gtol": 1e-12})
    assert 1 - obj(res.x)[0] >= 1 - 1e-8
    assert np.linalg.eigvalsh(fidelity_hessian(p, res.x)).max() <= 1e-6


@given(seeds)
def test_quadratic_model_cubic_error(seed):
    rng = np.random.default_rng(seed)
    p = random_problem(rng, m=1, N=3, M=6)
    v = rng.uniform(-1, 1, 3)
    model = fidelity_model(p, v)
    F = F_of(p)
    d = rng.standard_normal(3)
    d /= np.linalg.norm(d)
    for r in (1e-2, 1e-3):
        assert abs(model(r * d) - F(v + r * d)) <= 10 * r**3


def test_quadratic_model_call():
    m = QuadraticModel(1.0, np.array([1.0, 0.0]), np.diag([2.0, 4.0]))
    assert m([1.0, 1.0]) == pytest.approx(1 + 1 + 0.5 * 6)


def test_fd_hessian_of_quadratic(rng):
    A = rng.standard_normal((3, 3))
    A = A + A.T
    H = fd_hessian(lambda x: 0.5 * x @ A @ x + x.sum(), rng.standard_normal(3))
    assert np.allclose(H, A, atol=1e-7)


def test_robustness_derivatives_empty_and_scaling():
    p = fig1_problem()
    v = np.full(5, 3.0)
    assert not np.any(robustness_gradient(p, v, []))
    assert not np.any(robustness_hessian(p, v, []))
    g1 = robustness_gradient(p, v, [ConstantParam(operators=(Z,), delta=1.0)])
    g3 = robustness_gradient(p, v, [ConstantParam(operators=(Z,), delta=3.0)])
    assert np.allclose(g3, 3 * g1, rtol=1e-8, atol=1e-12)
    H = robustness_hessian(p, v, [PWCNoise(operator=Z, intervals=2)])
    assert np.array_equal(H, H.T)


def test_robustness_gradient_fro_sq_closed_form():
    # N = 1, M = 2, H = Z + v X, J = ||A sqrt(C)||_F^2 with C = 1 and A = (G_1 + G_2) / 2
    # gives J(v) = 1 + cos(phi) + (1 - cos(phi)) / w^2, w = sqrt(1 + v^2), phi = 2 w dt
    dt = 0.5
    p = ControlProblem(Z, X[None], I2, 2 * dt, 1, 2)
    spec = ConstantParam(operators=(Z,), bound="covariance", covariance=np.eye(1))
    for v in (0.3, -0.8, 1.5):
        w = np.hypot(1, v)
        phi = 2 * w * dt
        c, s = np.cos(phi), np.sin(phi)
        J = 1 + c + (1 - c) / w**2
        dphi = 2 * dt * v / w
        dJ = -s * dphi + s * dphi / w**2 - 2 * v * (1 - c) / w**4
        model = robustness_model(p, [v], [spec])
        assert model.value == pytest.approx(J, abs=1e-13)
        assert model.gradient[0] == pytest.approx(dJ, abs=1e-8)
