"""Derivatives of the nominal fidelity and the robustness measure.

The fidelity gradient is exact: each step exponential is differentiated in
the eigenbasis of its Hamiltonian and combined with the forward/backward
partial products read off the stored trajectory. Everything else uses
central finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .linalg import dag, expm_frechet_kernel
from .propagation import ControlProblem, Trajectory, _propagate_steps, nominal_fidelity
from .uncertainty import Uncertainty, robustness_value

GRAD_STEP = 1e-5
HESS_STEP = 1e-3


@dataclass(frozen=True)
class QuadraticModel:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray

    def __call__(self, dv) -> float:
        dv = np.asarray(dv)
        return float(self.value + self.gradient @ dv + 0.5 * dv @ self.hessian @ dv)


def fidelity_and_gradient(problem: ControlProblem, v) -> tuple[float, np.ndarray, Trajectory]:
    """Nominal fidelity, its exact gradient w.r.t. ``v`` and the trajectory."""
    v = problem.check_controls(v)
    n, dt = problem.n, problem.dt
    hams = problem.step_hamiltonians(v)
    w, V = np.linalg.eigh(hams)
    steps = (V * np.exp(-1j * dt * w)[:, None, :]) @ dag(V)
    samples = _propagate_steps(steps)
    traj = Trajectory(samples, dt)
    if problem.m == 0:
        return nominal_fidelity(traj, problem.target), np.zeros(0), traj

    W = problem.target
    UT = samples[-1]
    z = np.vdot(W, UT) / n
    # d z / d u_tj = Tr(X_t dE_t) / n with X_t = U_{t-1} W^dag U_M U_t^dag
    X = samples[:-1] @ (dag(W) @ UT) @ dag(samples[1:])
    Xe = dag(V) @ X @ V
    Ke = dag(V)[:, None] @ problem.controls[None] @ V[:, None]  # (M, m, n, n)
    phi = expm_frechet_kernel(w, dt)
    # Tr(X V (phi * K') V^dag) = sum_kl Xe_lk phi_kl K'_kl
    dz = np.einsum("tlk,tkl,tjkl->tj", Xe, phi, Ke) / n
    g_grid = 2.0 * np.real(np.conj(z) * dz)
    F = float(min(abs(z) ** 2, 1.0))
    return F, problem.grid_to_pulse_gradient(g_grid), traj


def fidelity_gradient(problem: ControlProblem, v) -> np.ndarray:
    return fidelity_and_gradient(problem, v)[1]


def _step(x, rel):
    return rel * max(1.0, abs(x))


def fd_gradient(f: Callable[[np.ndarray], float], v, rel: float = GRAD_STEP) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    g = np.zeros_like(v)
    for k in range(v.size):
        h = _step(v[k], rel)
        vp, vm = v.copy(), v.copy()
        vp[k] += h
        vm[k] -= h
        g[k] = (f(vp) - f(vm)) / (2 * h)
    return g


def fd_hessian(f: Callable[[np.ndarray], float], v, rel: float = HESS_STEP,
               f0: float | None = None) -> np.ndarray:
    """Central second differences of a scalar function, symmetrized."""
    v = np.asarray(v, dtype=float)
    d = v.size
    h = np.array([_step(x, rel) for x in v])
    f0 = f(v) if f0 is None else f0
    H = np.zeros((d, d))

    def shifted(*pairs):
        x = v.copy()
        for k, s in pairs:
            x[k] += s * h[k]
        return f(x)

    for i in range(d):
        H[i, i] = (shifted((i, 1)) - 2 * f0 + shifted((i, -1))) / h[i] ** 2
        for j in range(i):
            H[i, j] = H[j, i] = (shifted((i, 1), (j, 1)) - shifted((i, 1), (j, -1))
                                 - shifted((i, -1), (j, 1)) + shifted((i, -1), (j, -1))) / (
                4 * h[i] * h[j])
    if not np.all(np.isfinite(H)):
        raise FloatingPointError("non-finite finite-difference Hessian")
    return H


def fidelity_hessian(problem: ControlProblem, v, rel: float = GRAD_STEP,
                     return_raw: bool = False):
    """Central differences of the analytic gradient, symmetrized ``(H + H^T) / 2``."""
    v = problem.check_controls(v)
    d = v.size
    H = np.zeros((d, d))
    for k in range(d):
        h = _step(v[k], rel)
        if h < 1e-300:
            raise FloatingPointError("finite-difference step underflow")
        vp, vm = v.copy(), v.copy()
        vp[k] += h
        vm[k] -= h
        H[:, k] = (fidelity_and_gradient(problem, vp)[1]
                   - fidelity_and_gradient(problem, vm)[1]) / (2 * h)
    sym = 0.5 * (H + H.T)
    return (sym, H) if return_raw else sym


def _robustness_fn(problem, specs, combine, smoothing):
    def J(x):
        val = robustness_value(problem, x, specs, combine=combine, smoothing=smoothing)
        if not np.isfinite(val):
            raise FloatingPointError("non-finite robustness measure at probe point")
        return val
    return J


def robustness_gradient(problem: ControlProblem, v, specs: Sequence[Uncertainty],
                        combine: str = "sum", smoothing: float | None = None) -> np.ndarray:
    v = problem.check_controls(v)
    if not specs:
        return np.zeros_like(v)
    return fd_gradient(_robustness_fn(problem, specs, combine, smoothing), v)


def robustness_hessian(problem: ControlProblem, v, specs: Sequence[Uncertainty],
                       combine: str = "sum", smoothing: float | None = None,
                       J0: float | None = None) -> np.ndarray:
    v = problem.check_controls(v)
    if not specs:
        return np.zeros((v.size, v.size))
    return fd_hessian(_robustness_fn(problem, specs, combine, smoothing), v, f0=J0)


def fidelity_model(problem: ControlProblem, v) -> QuadraticModel:
    F, g, _ = fidelity_and_gradient(problem, v)
    return QuadraticModel(F, g, fidelity_hessian(problem, v))


def robustness_model(problem: ControlProblem, v, specs, combine="sum",
                     smoothing=None) -> QuadraticModel:
    J = robustness_value(problem, v, specs, combine=combine, smoothing=smoothing)
    return QuadraticModel(J, robustness_gradient(problem, v, specs, combine, smoothing),
                          robustness_hessian(problem, v, specs, combine, smoothing, J0=J))
