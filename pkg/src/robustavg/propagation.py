"""Piecewise-constant propagation, fidelities and time-averaged Hamiltonians.

Controls are ``N`` pulses of width ``T/N`` for each of ``m`` control
Hamiltonians, flattened pulse-major: ``v[p * m + j]`` is the amplitude of
control ``j`` during pulse ``p``. Propagation runs on the finer averaging
grid of ``M`` steps of width ``T/M`` (``M`` a multiple of ``N``); grid step
``t`` (1-based) sits in pulse ``ceil(t N / M)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import check_hermitian, dag, expm_herm, is_unitary, lower_toeplitz


@dataclass(frozen=True)
class ControlProblem:
    """Drift + linear controls, a target gate and the time discretization.

    Parameters
    ----------
    drift : (n, n) Hermitian
    controls : (m, n, n) Hermitian, possibly ``m == 0``
    target : (n, n) unitary
    T : horizon
    N : number of control pulses
    M : number of averaging / simulation steps, ``M % N == 0``
    bounds : optional ``(lo, hi)`` box applied to every amplitude
    actuator : optional length-``M`` impulse response; when given the
        commanded pulses are passed through this causal filter before they
        reach the Hamiltonian.
    """

    drift: np.ndarray
    controls: np.ndarray
    target: np.ndarray
    T: float
    N: int
    M: int
    bounds: tuple[float, float] | None = None
    actuator: np.ndarray | None = None

    def __post_init__(self):
        drift = check_hermitian(self.drift, "drift")
        n = drift.shape[0]
        controls = np.asarray(self.controls, dtype=complex)
        if controls.size == 0:
            controls = np.zeros((0, n, n), dtype=complex)
        if controls.ndim != 3 or controls.shape[1:] != (n, n):
            raise ValueError(f"controls must have shape (m, {n}, {n}), got {controls.shape}")
        check_hermitian(controls, "control Hamiltonian")
        target = np.asarray(self.target, dtype=complex)
        if target.shape != (n, n):
            raise ValueError(f"target must be {n}x{n}, got {target.shape}")
        if not is_unitary(target):
            raise ValueError("target is not unitary")
        if int(self.N) < 1 or int(self.M) < 1:
            raise ValueError("N and M must be positive")
        if self.M % self.N:
            raise ValueError(f"M={self.M} is not a multiple of N={self.N}")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.bounds is not None:
            lo, hi = map(float, self.bounds)
            if not lo < hi:
                raise ValueError(f"empty control bounds {self.bounds}")
            object.__setattr__(self, "bounds", (lo, hi))
        if self.actuator is not None:
            act = np.asarray(self.actuator, dtype=float)
            if act.shape != (self.M,):
                raise ValueError(f"actuator impulse response must have length M={self.M}")
            act.setflags(write=False)
            object.__setattr__(self, "actuator", act)
        for name, arr in (("drift", drift), ("controls", controls), ("target", target)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "M", int(self.M))

    @property
    def n(self) -> int:
        return self.drift.shape[0]

    @property
    def m(self) -> int:
        return self.controls.shape[0]

    @property
    def n_params(self) -> int:
        return self.m * self.N

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def substeps(self) -> int:
        return self.M // self.N

    def with_target(self, target) -> "ControlProblem":
        return ControlProblem(self.drift, self.controls, target, self.T, self.N,
                              self.M, self.bounds, self.actuator)

    def check_controls(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n_params,):
            raise ValueError(f"control vector must have length m*N={self.n_params}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite control amplitude")
        if self.bounds is not None:
            lo, hi = self.bounds
            if np.any(v < lo - 1e-12) or np.any(v > hi + 1e-12):
                raise ValueError("control vector violates bounds")
        return v

    def clip(self, v) -> np.ndarray:
        if self.bounds is None:
            return np.asarray(v, dtype=float)
        return np.clip(v, *self.bounds)

    def grid_amplitudes(self, v) -> np.ndarray:
        """Amplitudes seen by the Hamiltonian on the ``T/M`` grid, shape ``(M, m)``."""
        u = np.repeat(np.asarray(v, dtype=float).reshape(self.N, self.m), self.substeps, axis=0)
        if self.actuator is not None:
            u = lower_toeplitz(self.actuator) @ u
        return u

    def grid_to_pulse_gradient(self, g: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`grid_amplitudes`: maps ``(M, m)`` sensitivities to ``(mN,)``."""
        if self.actuator is not None:
            g = lower_toeplitz(self.actuator).T @ g
        return g.reshape(self.N, self.substeps, self.m).sum(axis=1).ravel()

    def step_hamiltonians(self, v) -> np.ndarray:
        u = self.grid_amplitudes(v)
        return self.drift + np.einsum("tj,jab->tab", u, self.controls)


@dataclass(frozen=True)
class Trajectory:
    """Unitaries ``U_0 = I, U_1, ..., U_M`` on the averaging grid."""

    samples: np.ndarray
    dt: float = field(default=1.0)

    def __post_init__(self):
        self.samples.setflags(write=False)

    @property
    def M(self) -> int:
        return self.samples.shape[0] - 1

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    @property
    def final(self) -> np.ndarray:
        return self.samples[-1]

    @property
    def T(self) -> float:
        return self.dt * self.M


def _propagate_steps(steps: np.ndarray) -> np.ndarray:
    m, n, _ = steps.shape
    out = np.empty((m + 1, n, n), dtype=complex)
    out[0] = np.eye(n)
    for t in range(m):
        out[t + 1] = steps[t] @ out[t]
    return out


def propagate_hamiltonians(hams: np.ndarray, dt: float) -> Trajectory:
    """PWC propagation of an explicit ``(M, n, n)`` Hamiltonian schedule."""
    hams = np.asarray(hams, dtype=complex)
    return Trajectory(_propagate_steps(expm_herm(hams, dt)), dt)


def propagate_nominal(problem: ControlProblem, v) -> Trajectory:
    v = problem.check_controls(v)
    return propagate_hamiltonians(problem.step_hamiltonians(v), problem.dt)


def nominal_fidelity(traj: Trajectory | np.ndarray, target: np.ndarray) -> float:
    """``|Tr(W^dag U(T)) / n|^2`` for a trajectory or a final unitary."""
    u = traj.final if isinstance(traj, Trajectory) else np.asarray(traj)
    target = np.asarray(target)
    if u.shape != target.shape:
        raise ValueError(f"dimension mismatch {u.shape} vs {target.shape}")
    n = u.shape[0]
    z = np.vdot(target, u) / n  # vdot conjugates: sum(conj(W) * U) = Tr(W^dag U)
    return float(min(abs(z) ** 2, 1.0))


def perturbed_fidelity(problem: ControlProblem, v, perturbation) -> float:
    """Fidelity after propagating ``H_bar_t + H_tilde_t`` on the ``T/M`` grid."""
    v = problem.check_controls(v)
    pert = np.asarray(perturbation, dtype=complex)
    if pert.shape != (problem.M, problem.n, problem.n):
        raise ValueError(f"perturbation must have shape (M, n, n) = "
                         f"{(problem.M, problem.n, problem.n)}, got {pert.shape}")
    check_hermitian(pert, "perturbation sample")
    traj = propagate_hamiltonians(problem.step_hamiltonians(v) + pert, problem.dt)
    return nominal_fidelity(traj, problem.target)


def conjugated(traj: Trajectory, ops) -> np.ndarray:
    """``U_t^dag B_t U_t`` for ``t = 1..M``; ``ops`` is one operator or ``M`` of them."""
    ops = np.asarray(ops, dtype=complex)
    u = traj.samples[1:]
    if ops.ndim == 2:
        return dag(u) @ ops @ u
    if ops.shape[0] != traj.M:
        raise ValueError(f"expected {traj.M} operator samples, got {ops.shape[0]}")
    return dag(u) @ ops @ u


def time_averaged_hamiltonian(traj: Trajectory, ops) -> np.ndarray:
    """``(1/M) sum_t U_t^dag B_t U_t`` over the ``M`` grid samples."""
    ops = np.asarray(ops, dtype=complex)
    if ops.ndim != 3 or ops.shape[0] != traj.M:
        raise ValueError(f"expected {traj.M} operator samples, got shape {ops.shape}")
    g = conjugated(traj, ops).mean(axis=0)
    return 0.5 * (g + dag(g))


def infidelity_distance(F: float, n: int) -> float:
    """Phase-optimal squared Frobenius distance ``2 n (1 - sqrt(F))``."""
    if not 0.0 <= F <= 1.0:
        raise ValueError(f"fidelity {F} outside [0, 1]")
    return 2.0 * n * (1.0 - np.sqrt(F))
