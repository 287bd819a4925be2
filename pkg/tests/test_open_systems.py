import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import I2, X, Z, identity_trajectory, random_hermitian, random_unitary
from robustavg.linalg import vec
from robustavg.open_systems import (Bipartite, BipartiteProblem, Lindblad, bipartite_avg_measure,
                                    bipartite_fidelity, lifted_fidelity, lifted_interaction,
                                    lindblad_assembly, lindblad_lift, lindblad_measure,
                                    lindblad_propagate)
from robustavg.propagation import (ControlProblem, nominal_fidelity, propagate_hamiltonians,
                                   propagate_nominal)
from robustavg.uncertainty import VARIANTS, robustness_value

SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)


def unvec(x, n):
    return x.reshape(n, n, order="F")


def const_traj(H, M, T):
    return propagate_hamiltonians(np.broadcast_to(H, (M,) + H.shape), T / M)


# -------------------------------------------------------------------- bipartite

def test_bipartite_trivial_bath_reduces(rng):
    for _ in range(5):
        U, W = random_unitary(rng, 3), random_unitary(rng, 3)
        F = abs(np.trace(W.conj().T @ U) / 3) ** 2
        assert bipartite_fidelity(U, W, 3, 1) == pytest.approx(F, abs=1e-14)


def test_bipartite_perfect_gate_any_bath(rng):
    W, UB = random_unitary(rng, 2), random_unitary(rng, 3)
    assert bipartite_fidelity(np.kron(W, UB), W, 2, 3) == pytest.approx(1.0, abs=1e-13)


def test_bipartite_matches_block_svd(rng):
    nS, nB = 2, 2
    U, W = random_unitary(rng, 4), random_unitary(rng, 2)
    V = np.kron(W.conj().T, np.eye(nB)) @ U
    gamma = sum(V[i * nB:(i + 1) * nB, i * nB:(i + 1) * nB] for i in range(nS))
    F = (np.linalg.svd(gamma / 4, compute_uv=False).sum()) ** 2
    assert bipartite_fidelity(U, W, nS, nB) == pytest.approx(F, abs=1e-14)


def test_bipartite_fidelity_range():
    rng = np.random.default_rng(9)
    for _ in range(1000):
        F = bipartite_fidelity(random_unitary(rng, 4), random_unitary(rng, 2), 2, 2)
        assert 0.0 <= F <= 1.0


def test_bipartite_dimension_mismatch(rng):
    with pytest.raises(ValueError, match="expected"):
        bipartite_fidelity(random_unitary(rng, 4), random_unitary(rng, 2), 2, 3)


def test_bipartite_avg_measure_trivial(rng):
    tS, tB = identity_trajectory(2, 10, 0.1), identity_trajectory(2, 10, 0.1)
    assert bipartite_avg_measure(tS, tB, np.zeros((4, 4))) == 0.0
    H = random_hermitian(rng, 4)
    assert bipartite_avg_measure(tS, tB, H) == pytest.approx(np.linalg.norm(H, 2), rel=1e-13)
    # the worst realization wins
    assert bipartite_avg_measure(tS, tB, np.stack([0.5 * H[None], H[None]])) == \
        pytest.approx(np.linalg.norm(H, 2), rel=1e-13)


def test_bipartite_avg_measure_converges(rng):
    HS, HB, HSB = random_hermitian(rng, 2), random_hermitian(rng, 2), random_hermitian(rng, 4)
    T = 1.5
    E, P = np.linalg.eigh(np.kron(HS, I2) + np.kron(I2, HB))
    dE = E[:, None] - E[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        kern = np.where(np.abs(dE) > 1e-12, (np.exp(1j * dE * T) - 1) / (1j * dE * T), 1.0)
    exact = np.linalg.norm(P @ ((P.conj().T @ HSB @ P) * kern) @ P.conj().T, 2)
    errs = []
    for M in (100, 1000, 10000):
        errs.append(abs(bipartite_avg_measure(const_traj(HS, M, T), const_traj(HB, M, T), HSB)
                        - exact))
    assert errs[1] < errs[0] / 5 and errs[2] < errs[1] / 5 and errs[2] < 1e-3


def test_bipartite_avg_measure_length_mismatch():
    with pytest.raises(ValueError, match="differ"):
        bipartite_avg_measure(identity_trajectory(2, 4), identity_trajectory(2, 5), np.eye(4))


def test_bipartite_problem_joint_hamiltonian(rng):
    M = 3
    hs = np.array([random_hermitian(rng, 2) for _ in range(M)])
    hb = np.array([random_hermitian(rng, 3) for _ in range(M)])
    hsb = np.array([random_hermitian(rng, 6) for _ in range(M)])
    bp = BipartiteProblem(2, 3, hs, hb, hsb, X)
    for t in range(M):
        expect = np.kron(hs[t], np.eye(3)) + np.kron(np.eye(2), hb[t]) + hsb[t]
        np.testing.assert_allclose(bp.joint_hams[t], expect, atol=1e-14)
    with pytest.raises(ValueError):
        BipartiteProblem(2, 3, hs, hb, hsb[:, :4, :4], X)


def test_bipartite_spec_registered():
    assert VARIANTS["bipartite"] is Bipartite and VARIANTS["lindblad"] is Lindblad
    p = ControlProblem(Z, X[None], X, 1.0, 2, 10)
    v = np.array([0.3, -0.2])
    HSB = np.kron(Z, Z)
    spec = Bipartite(bath_dim=2, bath_hams=(np.zeros((2, 2)),), couplings=(HSB,), delta=0.5)
    traj = propagate_nominal(p, v)
    expect = 0.5 * bipartite_avg_measure(traj, identity_trajectory(2, 10, p.dt), HSB)
    assert robustness_value(p, v, [spec]) == pytest.approx(expect, rel=1e-13)


# --------------------------------------------------------------------- lindblad

def test_lift_identity_is_zero():
    np.testing.assert_array_equal(lindblad_lift([np.eye(3)])[0], np.zeros((9, 9)))


def test_lift_lowering_operator():
    B = lindblad_lift([SIGMA_MINUS])[0]
    hand = np.zeros((4, 4))
    hand[0, 3] = 2.0
    hand -= np.diag([0.0, 1.0, 1.0, 2.0])
    np.testing.assert_array_equal(B, hand)


@given(st.integers(0, 2**31 - 1), st.integers(2, 4))
def test_lift_matches_dissipator(seed, n):
    rng = np.random.default_rng(seed)
    L = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    rho = random_hermitian(rng, n)
    out = unvec(lindblad_lift([L])[0] @ vec(rho), n)
    LL = L.conj().T @ L
    direct = 2 * L @ rho @ L.conj().T - LL @ rho - rho @ LL
    np.testing.assert_allclose(out, direct, atol=1e-12)
    assert abs(np.trace(out)) < 1e-12


def test_lift_unital_kills_identity():
    B = lindblad_lift([Z])[0]
    np.testing.assert_allclose(B @ vec(np.eye(2)), 0, atol=1e-15)


def test_lift_rejects_nonsquare():
    with pytest.raises(ValueError, match="square"):
        lindblad_lift([np.ones((2, 3))])


def test_lindblad_measure_trivial_cases(rng):
    traj = const_traj(random_hermitian(rng, 2), 20, 1.0)
    assert lindblad_measure(traj, [np.eye(2), np.eye(2)], 0.3) == 0.0
    assert lindblad_measure(traj, [SIGMA_MINUS], 0.0) == 0.0


def test_lindblad_measure_identity_motion():
    T, M, delta = 2.0, 16, 0.1
    traj = identity_trajectory(2, M, T / M)
    B = lindblad_lift([SIGMA_MINUS])[0]
    J = lindblad_measure(traj, [SIGMA_MINUS], delta)
    assert J == pytest.approx(delta * T * np.linalg.norm(vec(B)), rel=1e-13)


def test_lindblad_measure_dimension_guard():
    with pytest.raises(ValueError, match="exceeds"):
        lindblad_measure(identity_trajectory(9, 2), [np.eye(9)], 1.0)
    with pytest.raises(ValueError):
        lindblad_measure(identity_trajectory(2, 2), [], 1.0)


def test_lindblad_column_is_first_order_generator(rng):
    # small rates: the lifted interaction propagator is I + theta Gamma to first order
    M, T, theta = 400, 1.0, 1e-5
    hams = np.array([random_hermitian(rng, 2) for _ in range(8)]).repeat(M // 8, axis=0)
    traj = propagate_hamiltonians(hams, T / M)
    Lop = SIGMA_MINUS + 0.3 * Z
    gamma = lindblad_assembly(traj, [Lop], 1.0).A[:, 0].reshape(4, 4, order="F")
    R = lifted_interaction(traj, lindblad_propagate(hams, T / M, [Lop], theta))
    np.testing.assert_allclose((R - np.eye(4)) / theta, gamma, atol=2e-2 * np.abs(gamma).max())


def test_lifted_fidelity(rng):
    W = random_unitary(rng, 3)
    assert lifted_fidelity(W, np.eye(9), W) == pytest.approx(1.0, abs=1e-13)
    U = random_unitary(rng, 3)
    assert lifted_fidelity(U, np.eye(9), W) == pytest.approx(nominal_fidelity(U, W), abs=1e-14)
    R = random_unitary(rng, 9)
    direct = abs(np.trace(np.kron(W.conj(), W).conj().T @ np.kron(U.conj(), U) @ R)) / 9
    assert lifted_fidelity(U, R, W) == pytest.approx(direct, abs=1e-12)
    with pytest.raises(ValueError, match="mismatch"):
        lifted_fidelity(U, np.eye(4), W)


def test_lindblad_spec_value():
    p = ControlProblem(Z, X[None], X, 1.0, 2, 10)
    v = np.array([0.3, -0.2])
    spec = Lindblad(jump_ops=(np.eye(2),), delta=1.0)
    assert robustness_value(p, v, [spec]) == 0.0
    spec = Lindblad(jump_ops=(SIGMA_MINUS,), delta=0.2)
    traj = propagate_nominal(p, v)
    assert robustness_value(p, v, [spec]) == pytest.approx(
        lindblad_measure(traj, [SIGMA_MINUS], 0.2), rel=1e-14)
