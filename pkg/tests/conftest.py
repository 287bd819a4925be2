import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from robustavg.linalg import PAULI
from robustavg.propagation import ControlProblem, Trajectory

settings.register_profile("repo", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

X, Y, Z, I2 = PAULI["X"], PAULI["Y"], PAULI["Z"], PAULI["I"]


def random_hermitian(rng, n, scale=1.0):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * (a + a.conj().T) / 2


def random_unitary(rng, n):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def identity_trajectory(n, M, dt=1.0):
    return Trajectory(np.broadcast_to(np.eye(n, dtype=complex), (M + 1, n, n)).copy(), dt)


def random_trajectory(rng, n, M, dt=1.0):
    u = [np.eye(n, dtype=complex)] + [random_unitary(rng, n) for _ in range(M)]
    return Trajectory(np.array(u), dt)


def random_problem(rng, n=2, m=2, N=4, M=8, T=1.0, target=None):
    ctrls = np.stack([random_hermitian(rng, n) for _ in range(m)]) if m else np.zeros((0, n, n))
    W = random_unitary(rng, n) if target is None else target
    return ControlProblem(random_hermitian(rng, n), ctrls, W, T, N, M)


def fig1_problem(M=50):
    return ControlProblem(Z, X[None], I2, 1.0, 5, M)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
