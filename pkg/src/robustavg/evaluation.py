"""Post-synthesis validation: Monte-Carlo sweeps, averaging bounds, filter functions."""
from __future__ import annotations

import csv
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .linalg import check_hermitian, dag, expm_herm
from .propagation import (ControlProblem, Trajectory, conjugated, perturbed_fidelity,
                          propagate_hamiltonians)
from .uncertainty import Uncertainty, sample_perturbation

SWEEP_COLUMNS = ("magnitude", "n_samples", "fid_mean", "fid_min", "fid_max", "label")


def fmt(x) -> str:
    """Round-trip float formatting used in every CSV artifact."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) for x in r])


@dataclass(frozen=True)
class SweepReport:
    magnitudes: np.ndarray
    n_samples: np.ndarray
    fid_mean: np.ndarray
    fid_min: np.ndarray
    fid_max: np.ndarray
    label: str = ""

    def rows(self):
        for k in range(len(self.magnitudes)):
            yield (float(self.magnitudes[k]), int(self.n_samples[k]), float(self.fid_mean[k]),
                   float(self.fid_min[k]), float(self.fid_max[k]), self.label)

    def infidelity(self, which: str = "mean") -> np.ndarray:
        return 1.0 - {"mean": self.fid_mean, "min": self.fid_min, "max": self.fid_max}[which]


def write_sweep_csv(path, reports: Sequence[SweepReport]):
    write_csv(path, SWEEP_COLUMNS, (r for rep in reports for r in rep.rows()))


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("ROBUSTAVG_THREADS", "1")))
    except ValueError:
        return 1


def monte_carlo_sweep(problem: ControlProblem, v, spec: Uncertainty | Sequence[Uncertainty],
                      magnitudes, samples_per_point: int = 100, seed: int = 0,
                      label: str = "", threads: int | None = None) -> SweepReport:
    """Sampled fidelity statistics at each uncertainty magnitude.

    Every sample has its own child seed (spawned from ``seed`` by magnitude
    index, then by sample index) and the statistics are reduced in sample
    order, so the report does not depend on ``threads``.
    """
    v = problem.check_controls(v)
    mags = np.sort(np.asarray(magnitudes, dtype=float).ravel())
    if samples_per_point < 1:
        raise ValueError("samples_per_point must be positive")
    specs = [spec] if isinstance(spec, Uncertainty) else list(spec)
    for s in specs:
        d = getattr(s, "delta", None)
        scaled = np.abs(mags) * s.sample_scale
        if isinstance(d, (int, float)) and d > 0 and np.any(scaled > d * (1 + 1e-12)):
            warnings.warn(f"sweep magnitude exceeds the {s.variant} bound {d}")
    threads = _default_threads() if threads is None else max(1, int(threads))
    children = np.random.SeedSequence(seed).spawn(len(mags))

    def one(args):
        mag, ss = args
        pert = sample_perturbation(specs, problem, v, mag, np.random.default_rng(ss))
        return perturbed_fidelity(problem, v, pert)

    stats = np.empty((len(mags), 3))
    with ThreadPoolExecutor(threads) as pool:
        for k, (mag, child) in enumerate(zip(mags, children)):
            jobs = [(mag, ss) for ss in child.spawn(samples_per_point)]
            fids = np.fromiter(pool.map(one, jobs) if threads > 1 else map(one, jobs), float)
            stats[k] = fids.mean(), fids.min(), fids.max()
    # guard the min <= mean <= max invariant against rounding in the mean
    stats[:, 0] = np.clip(stats[:, 0], stats[:, 1], stats[:, 2])
    return SweepReport(mags, np.full(len(mags), samples_per_point), stats[:, 0], stats[:, 1],
                       stats[:, 2], label)


# ------------------------------------------------------------- interaction frame

@dataclass(frozen=True)
class InteractionResult:
    R: np.ndarray          # (M + 1, n, n), R_0 = I
    R_bar: np.ndarray      # exp(-i T mean G)
    G: np.ndarray          # (M, n, n) interaction Hamiltonians
    residual: float        # ||U_M - U_bar_M R_M||_F against the perturbed propagation


def interaction_unitary(traj: Trajectory, perturbation, nominal_hams=None) -> InteractionResult:
    """Interaction-frame propagator ``R`` with ``U ~ U_bar R``.

    ``G_t = U_bar_t^dag H_tilde_t U_bar_t`` is held constant on each grid step
    and ``R`` is the product of ``exp(-i dt G_t)``. If the nominal step
    Hamiltonians are supplied the first-order consistency residual against
    the fully perturbed propagation is reported, otherwise it is NaN.
    """
    pert = check_hermitian(perturbation, "perturbation sample")
    if pert.shape != (traj.M, traj.n, traj.n):
        raise ValueError(f"perturbation must have shape {(traj.M, traj.n, traj.n)}, "
                         f"got {pert.shape}")
    G = conjugated(traj, pert)
    G = 0.5 * (G + dag(G))
    R = propagate_hamiltonians(G, traj.dt).samples
    R_bar = expm_herm(G.mean(axis=0), traj.T)
    residual = float("nan")
    if nominal_hams is not None:
        U = propagate_hamiltonians(np.asarray(nominal_hams) + pert, traj.dt).final
        residual = float(np.linalg.norm(U - traj.final @ R[-1]))
    return InteractionResult(R, R_bar, G, residual)


@dataclass(frozen=True)
class BoundCheck:
    gamma_bar: float
    gamma_tilde: float
    delta: float
    T: float
    avg_dev: float        # ||R_bar(T) - I||
    avg_bound: float      # exp(gamma_bar delta T) - 1
    fluct_dev: float      # ||R(T) - R_bar(T)||
    fluct_bound: float    # exp(gamma_tilde (delta T)^2) - 1

    @property
    def ok(self) -> bool:
        tol = 1e-12
        return (self.avg_dev <= self.avg_bound + tol) and (self.fluct_dev <= self.fluct_bound + tol)

    @property
    def ratios(self) -> tuple[float, float]:
        def r(a, b):
            return a / b if b > 0 else (0.0 if a == 0 else np.inf)
        return r(self.avg_dev, self.avg_bound), r(self.fluct_dev, self.fluct_bound)


class BoundViolation(AssertionError):
    pass


def check_averaging_bounds(traj: Trajectory, perturbation, delta: float,
                           strict: bool = True) -> BoundCheck:
    """Evaluate both interaction-frame averaging inequalities (spectral norm).

    The perturbation is written ``H_tilde_t = delta B_t``; ``A_t`` is the
    conjugated ``B_t``. ``delta`` must dominate ``max_t ||H_tilde_t||_2``.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    res = interaction_unitary(traj, perturbation)
    n = traj.n
    if delta == 0:
        if np.any(res.G):
            raise ValueError("delta = 0 with a nonzero perturbation")
        A = np.zeros_like(res.G)
    else:
        A = res.G / delta
        peak = max(np.linalg.norm(a, 2) for a in A)
        if peak > 1 + 1e-9:
            raise ValueError(f"perturbation exceeds delta: max ||H_tilde_t|| / delta = {peak:.6g}")
    EA = A.mean(axis=0)
    gbar = float(np.linalg.norm(EA, 2))
    gtil = float(max(np.linalg.norm(a - EA, 2) for a in A))
    T = traj.T
    eye = np.eye(n)
    out = BoundCheck(gbar, gtil, float(delta), T,
                     float(np.linalg.norm(res.R_bar - eye, 2)), float(np.expm1(gbar * delta * T)),
                     float(np.linalg.norm(res.R[-1] - res.R_bar, 2)),
                     float(np.expm1(gtil * (delta * T) ** 2)))
    if strict and not out.ok:
        raise BoundViolation(f"averaging bound violated: {out}")
    return out


# --------------------------------------------------------------- filter function

def default_omega_grid(T: float, M: int, points: int = 512) -> np.ndarray:
    """Symmetric grid reaching the Nyquist frequency of the ``T/M`` sampling."""
    w = np.pi / (T / M)
    return np.linspace(-w, w, points)


def filter_function(traj: Trajectory, B, omega) -> np.ndarray:
    """``A(w) = (1/pi) int_0^T (T - tau) e^{i w tau} c(tau) dtau`` (trapezoid in ``tau``).

    ``c(tau) = Tr(U(tau)^dag B U(tau) B)`` uses the trajectory samples as
    ``U(tau)``; the lag form is exact when the nominal Hamiltonian is
    time independent.
    """
    B = np.asarray(B, dtype=complex)
    if B.ndim != 2:
        raise ValueError("filter-function measure needs one constant operator B; "
                         "time-dependent B is not supported")
    check_hermitian(B, "B")
    u = traj.samples
    c = np.real(np.einsum("tba,bc,tcd,da->t", u.conj(), B, u, B))
    tau = traj.dt * np.arange(traj.M + 1)
    wts = np.full(traj.M + 1, traj.dt)
    wts[[0, -1]] *= 0.5
    omega = np.asarray(omega, dtype=float)
    phase = np.exp(1j * np.outer(omega, tau))
    return (phase @ (wts * (traj.T - tau) * c)) / np.pi


def filter_function_measure(traj: Trajectory, B, spectrum: Callable[[np.ndarray], np.ndarray],
                            omega=None) -> float:
    """``int A(w) S(w) dw`` by the trapezoid rule on ``omega``."""
    omega = default_omega_grid(traj.T, traj.M) if omega is None else np.asarray(omega, float)
    A = filter_function(traj, B, omega)
    S = np.broadcast_to(np.asarray(spectrum(omega), dtype=float), omega.shape)
    return float(np.real(np.trapezoid(A * S, omega)))


def time_domain_variance(traj: Trajectory, B, autocorr: Callable[[np.ndarray], np.ndarray]) -> float:
    """``int int s(t - t') c(t, t') dt' dt`` on the grid, the direct counterpart of the above."""
    B = np.asarray(B, dtype=complex)
    u = traj.samples
    A = dag(u) @ B @ u
    c = np.real(np.einsum("sab,tba->st", A, A))
    t = traj.dt * np.arange(traj.M + 1)
    w = np.full(traj.M + 1, traj.dt)
    w[[0, -1]] *= 0.5
    s = autocorr(t[:, None] - t[None, :])
    return float(w @ (s * c) @ w)
