"""System-bath and Lindblad extensions of the averaging measure.

The Lindblad dissipator is lifted to the column-stacked density matrix,
``vec(L rho L^dag) = (conj(L) (x) L) vec(rho)``, so that the nominal
closed-system evolution acts as ``conj(U) (x) U``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar, Sequence

import numpy as np
from scipy.linalg import expm

from .linalg import check_hermitian, dag, is_unitary, vec
from .propagation import Trajectory
from .uncertainty import RobustnessAssembly, Uncertainty, measure, register

MAX_LIFT_DIM = 8


@dataclass(frozen=True)
class BipartiteProblem:
    """System ``n_S`` coupled to a bath ``n_B``: ``H_S (x) I + I (x) H_B + H_SB``."""

    n_S: int
    n_B: int
    system_hams: np.ndarray       # (M, n_S, n_S)
    bath_hams: np.ndarray         # (M, n_B, n_B)
    interaction: np.ndarray       # (M, n, n)
    target: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        n = self.n_S * self.n_B
        for name, arr, d in (("system", self.system_hams, self.n_S),
                             ("bath", self.bath_hams, self.n_B),
                             ("interaction", self.interaction, n)):
            a = check_hermitian(arr, f"{name} Hamiltonian")
            if a.ndim != 3 or a.shape[1:] != (d, d):
                raise ValueError(f"{name} Hamiltonians must have shape (M, {d}, {d})")
        if not (len(self.system_hams) == len(self.bath_hams) == len(self.interaction)):
            raise ValueError("Hamiltonian schedules differ in length")
        if np.shape(self.target) != (self.n_S, self.n_S) or not is_unitary(self.target):
            raise ValueError("target must be an n_S x n_S unitary")

    @property
    def joint_hams(self) -> np.ndarray:
        eS, eB = np.eye(self.n_S), np.eye(self.n_B)
        return (np.einsum("tab,cd->tacbd", self.system_hams, eB).reshape(self.interaction.shape)
                + np.einsum("ab,tcd->tacbd", eS, self.bath_hams).reshape(self.interaction.shape)
                + self.interaction)


def bipartite_fidelity(U, W_S, n_S: int, n_B: int) -> float:
    """``(||Gamma||_nuc / n)^2`` with ``Gamma`` the sum of the diagonal bath blocks of ``(W_S (x) I)^dag U``."""
    U = np.asarray(U, dtype=complex)
    W_S = np.asarray(W_S, dtype=complex)
    n = n_S * n_B
    if U.shape != (n, n) or W_S.shape != (n_S, n_S):
        raise ValueError(f"expected U {(n, n)} and W_S {(n_S, n_S)}, got {U.shape}, {W_S.shape}")
    V = np.kron(dag(W_S), np.eye(n_B)) @ U
    gamma = np.einsum("iaib->ab", V.reshape(n_S, n_B, n_S, n_B))
    nuc = np.linalg.svd(gamma, compute_uv=False).sum()
    return float(min((nuc / n) ** 2, 1.0))


def bipartite_avg_measure(traj_S: Trajectory, traj_B: Trajectory, interactions) -> float:
    """Largest spectral norm of the averaged conjugated coupling over the realizations.

    ``interactions`` is one coupling (``(n, n)`` or ``(M, n, n)``) or a stack
    of realizations ``(R, M, n, n)``.
    """
    if traj_S.M != traj_B.M:
        raise ValueError(f"trajectory lengths differ: {traj_S.M} vs {traj_B.M}")
    n = traj_S.n * traj_B.n
    H = np.asarray(interactions, dtype=complex)
    if H.ndim == 2:
        H = H[None, None]
    elif H.ndim == 3:
        H = H[None]
    if H.shape[-2:] != (n, n) or H.shape[1] not in (1, traj_S.M):
        raise ValueError(f"coupling samples have shape {H.shape}, expected (R, M, {n}, {n})")
    u = np.einsum("tab,tcd->tacbd", traj_S.samples[1:], traj_B.samples[1:]).reshape(-1, n, n)
    best = 0.0
    for h in H:
        g = (dag(u) @ h @ u).mean(axis=0)
        best = max(best, float(np.linalg.norm(g, 2)))
    return best


def lindblad_lift(jump_ops: Sequence) -> list[np.ndarray]:
    """``B_k = 2 conj(L) (x) L - (I (x) L^dag L + (L^dag L)^T (x) I)`` for each jump operator."""
    out = []
    for L in jump_ops:
        L = np.asarray(L, dtype=complex)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise ValueError(f"jump operator must be square, got {L.shape}")
        n = L.shape[0]
        LL = dag(L) @ L
        eye = np.eye(n)
        out.append(2 * np.kron(L.conj(), L) - np.kron(eye, LL) - np.kron(LL.T, eye))
    return out


def _lifted_samples(traj: Trajectory) -> np.ndarray:
    u = traj.samples[1:]
    n = traj.n
    return np.einsum("tab,tcd->tacbd", u.conj(), u).reshape(-1, n * n, n * n)


def lindblad_assembly(traj: Trajectory, jump_ops: Sequence, delta: float,
                      norm: str = "two") -> RobustnessAssembly:
    """Columns ``vec Gamma_k``, ``Gamma_k = (T/M) sum_t Vbar_t^dag B_k Vbar_t``."""
    if traj.n > MAX_LIFT_DIM:
        raise ValueError(f"lifted Lindblad measure needs n^4 rows; n={traj.n} exceeds "
                         f"the limit {MAX_LIFT_DIM}")
    if len(jump_ops) < 1:
        raise ValueError("at least one jump operator is required")
    V = _lifted_samples(traj)
    cols = [vec(traj.dt * (dag(V) @ B @ V).sum(axis=0)) for B in lindblad_lift(jump_ops)]
    return RobustnessAssembly(np.stack(cols, axis=1), np.eye(len(cols)), norm, delta)


def lindblad_measure(traj: Trajectory, jump_ops: Sequence, delta: float,
                     norm: str = "two") -> float:
    return measure(lindblad_assembly(traj, jump_ops, delta, norm))


def lifted_fidelity(traj: Trajectory | np.ndarray, R, W) -> float:
    """``|Tr((W* (x) W)^dag (U* (x) U) R) / n^2|``; with ``R = I`` this is the closed-system fidelity."""
    U = traj.final if isinstance(traj, Trajectory) else np.asarray(traj, dtype=complex)
    W = np.asarray(W, dtype=complex)
    n = U.shape[0]
    R = np.asarray(R, dtype=complex)
    if W.shape != U.shape or R.shape != (n * n, n * n):
        raise ValueError("dimension mismatch in lifted fidelity")
    Wl = np.kron(W.conj(), W)
    Ul = np.kron(U.conj(), U)
    return float(abs(np.vdot(Wl, Ul @ R)) / n**2)


def lindblad_propagate(hams, dt: float, jump_ops: Sequence, rates) -> np.ndarray:
    """Lifted open-system propagator: product of ``exp((-i A_t + sum_k theta_k B_k) dt)``.

    ``A_t = I (x) H_t - H_t^T (x) I``. Used to validate the measure, not for synthesis.
    """
    hams = check_hermitian(hams, "Hamiltonian")
    n = hams.shape[-1]
    eye = np.eye(n)
    rates = np.broadcast_to(np.asarray(rates, dtype=float), (len(jump_ops),))
    D = sum(r * B for r, B in zip(rates, lindblad_lift(jump_ops))) if len(jump_ops) else 0
    X = np.eye(n * n, dtype=complex)
    for h in hams:
        A = np.kron(eye, h) - np.kron(h.T, eye)
        X = expm((-1j * A + D) * dt) @ X
    return X


def lifted_interaction(traj: Trajectory, X) -> np.ndarray:
    """``R = (conj(U) (x) U)^-1 X`` at the final time."""
    U = traj.final
    return np.kron(U.conj(), U).conj().T @ np.asarray(X)


@register
@dataclass(frozen=True)
class Lindblad(Uncertainty):
    """Uncertain dissipation rates ``theta_k`` on fixed jump operators, ``||theta|| <= delta``."""

    variant: ClassVar[str] = "lindblad"
    jump_ops: tuple = ()
    delta: float = 1.0
    norm: str = "two"

    def assemblies(self, problem, v, traj):
        return [lindblad_assembly(traj, self.jump_ops, self.delta, self.norm)]


@register
@dataclass(frozen=True)
class Bipartite(Uncertainty):
    """Unknown constant bath ``H_B`` and coupling ``H_SB`` drawn from a finite realization set.

    The control problem describes the system alone; each realization is a
    pair ``(H_B, H_SB)`` of constant operators.
    """

    variant: ClassVar[str] = "bipartite"
    bath_dim: int = 2
    bath_hams: tuple = ()
    couplings: tuple = ()
    delta: float = 1.0

    def assemblies(self, problem, v, traj):
        # one Frobenius column per realization; value() uses the spectral norm instead
        n = traj.n * self.bath_dim
        cols = []
        for HB, HSB in zip(self.bath_hams, self.couplings):
            tB = Trajectory(_powers(HB, traj), traj.dt)
            u = np.einsum("tab,tcd->tacbd", traj.samples[1:], tB.samples[1:]).reshape(-1, n, n)
            cols.append(vec((dag(u) @ np.asarray(HSB, complex) @ u).mean(axis=0)))
        return [RobustnessAssembly(c[:, None], np.ones((1, 1)), "fro", self.delta) for c in cols]

    def value(self, problem, v, traj, smoothing=None):
        if len(self.bath_hams) != len(self.couplings) or not self.couplings:
            raise ValueError("bipartite spec needs matching, nonempty bath/coupling lists")
        vals = []
        for HB, HSB in zip(self.bath_hams, self.couplings):
            tB = Trajectory(_powers(HB, traj), traj.dt)
            vals.append(bipartite_avg_measure(traj, tB, HSB))
        return float(self.delta * max(vals))


def _powers(HB, traj: Trajectory) -> np.ndarray:
    """Bath trajectory ``exp(-i t dt H_B)``, ``t = 0..M``."""
    HB = check_hermitian(HB, "bath Hamiltonian")
    w, V = np.linalg.eigh(HB)
    t = traj.dt * np.arange(traj.M + 1)
    return (V[None] * np.exp(-1j * np.outer(t, w))[:, None, :]) @ dag(V)[None]
