"""Uncertainty sets, their robustness assemblies, and perturbation samplers.

Every uncertainty model reduces to one or more assemblies ``(A, S, mu,
delta)`` whose measure is ``delta * ||A S||_mu``. ``A`` has one column per
uncertain parameter (or per time sample); column ``k`` is ``vec`` of the
averaged conjugated operator the parameter multiplies, so that
``vec(G_avg) = A theta``. All conjugations use the nominal trajectory
samples ``U_1..U_M`` and carry the ``1/M`` averaging factor.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import ClassVar, Sequence

import numpy as np
from scipy.special import logsumexp

from .linalg import (dag, kron_factor, lower_toeplitz, pauli_basis,
                     psd_sqrt, vec)
from .propagation import ControlProblem, Trajectory, conjugated

NORMS = ("inf", "two", "fro", "fro_sq")


class UnnormalizedOperatorWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RobustnessAssembly:
    A: np.ndarray
    S: np.ndarray
    mu: str
    delta: float = 1.0

    def __post_init__(self):
        if self.mu not in NORMS:
            raise ValueError(f"unknown norm tag {self.mu!r}; expected one of {NORMS}")
        if self.A.ndim != 2 or self.S.ndim != 2 or self.A.shape[1] != self.S.shape[0]:
            raise ValueError(f"incompatible shapes A{self.A.shape}, S{self.S.shape}")
        if not self.delta >= 0:
            raise ValueError("delta must be nonnegative")

    @property
    def AS(self) -> np.ndarray:
        return self.A @ self.S

    @property
    def value(self) -> float:
        return measure(self)


def matrix_norm(c: np.ndarray, mu: str, smoothing: float | None = None) -> float:
    if c.size == 0:
        return 0.0
    if mu == "inf":
        rows = np.abs(c).sum(axis=1)
        if smoothing:
            return float(smoothing * logsumexp(rows / smoothing))
        return float(rows.max())
    if mu == "two":
        return float(np.linalg.norm(c, 2))
    if mu == "fro":
        return float(np.linalg.norm(c))
    if mu == "fro_sq":
        return float(np.linalg.norm(c) ** 2)
    raise ValueError(f"unknown norm tag {mu!r}")


def measure(assembly: RobustnessAssembly, smoothing: float | None = None) -> float:
    """``delta * ||A S||_mu``.

    ``inf`` is the max-row-sum of complex moduli over the ``n^2`` rows.
    ``smoothing`` replaces the row max by a log-sum-exp with that temperature.
    """
    if assembly.delta == 0:
        return 0.0
    return assembly.delta * matrix_norm(assembly.AS, assembly.mu, smoothing)


# --------------------------------------------------------------------- filters

@dataclass(frozen=True)
class NoiseFilter:
    """Causal ``M x M`` noise-shaping matrix, ``theta = K w``."""

    K: np.ndarray
    toeplitz: bool = False

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ValueError(f"filter must be square, got {K.shape}")
        if np.any(np.triu(K, 1) != 0):
            raise ValueError("noise filter must be lower-triangular (causal)")
        if self.toeplitz and not np.allclose(K, lower_toeplitz(K[:, 0]), atol=1e-14):
            raise ValueError("filter flagged Toeplitz does not have constant diagonals")
        K.setflags(write=False)
        object.__setattr__(self, "K", K)

    @property
    def M(self) -> int:
        return self.K.shape[0]


def toeplitz_from_impulse(h) -> NoiseFilter:
    return NoiseFilter(lower_toeplitz(np.asarray(h, dtype=float)), toeplitz=True)


def first_order_filter(beta: float, T: float, M: int) -> NoiseFilter:
    """Zero-order-hold discretization of ``1 / (beta s + 1)`` at step ``T/M``."""
    if not beta > 0:
        raise ValueError("time constant must be positive")
    a = np.exp(-(T / M) / beta)
    return toeplitz_from_impulse((1 - a) * a ** np.arange(M))


def first_order_gain(beta: float, T: float, M: int, omega) -> np.ndarray:
    """Frequency-response magnitude bound of :func:`first_order_filter` (unit input)."""
    a = np.exp(-(T / M) / beta)
    return (1 - a) / np.sqrt(2 * (1 - np.cos(np.asarray(omega) * T / M)) + a**2)


def block_ones(M: int, L: int) -> np.ndarray:
    """``blk_diag(1_{M/L}, ..., 1_{M/L})``, shape ``(M, L)``."""
    if L < 1 or M % L:
        raise ValueError(f"number of intervals L={L} must divide M={M}")
    return np.kron(np.eye(L), np.ones((M // L, 1)))


# ------------------------------------------------------------------ assemblies

def _ops_stack(ops, M: int) -> np.ndarray:
    """Normalize one operator or an ``M``-sequence to shape ``(M, n, n)``."""
    ops = np.asarray(ops, dtype=complex)
    if ops.ndim == 2:
        return np.broadcast_to(ops, (M,) + ops.shape)
    if ops.ndim != 3 or ops.shape[0] != M:
        raise ValueError(f"expected an operator or {M} operator samples, got {ops.shape}")
    return ops


def _check_normalized(ops: np.ndarray, strict: bool = False):
    norms = np.linalg.norm(ops, 2, axis=(-2, -1)) if ops.size else np.zeros(0)
    if np.any(norms > 1 + 1e-9):
        msg = f"perturbation operator has spectral norm {norms.max():.4g} > 1"
        if strict:
            raise ValueError(msg)
        warnings.warn(msg, UnnormalizedOperatorWarning, stacklevel=3)


def sample_columns(traj: Trajectory, ops, weight=None) -> np.ndarray:
    """``n^2 x M`` matrix with columns ``w_t vec(U_t^dag B_t U_t) / M``."""
    M = traj.M
    c = vec(conjugated(traj, _ops_stack(ops, M))).T / M
    if weight is not None:
        c = c * np.asarray(weight, dtype=float)[None, :]
    return c


def assemble_constant_param(traj: Trajectory, ops: Sequence, bound: str = "peak",
                            delta: float = 1.0, covariance=None,
                            strict: bool = False) -> RobustnessAssembly:
    """Constant parameters ``theta_l`` multiplying known ``B_l`` (constant or sequences).

    ``bound`` is ``"peak"`` (``||theta||_inf <= delta``), ``"energy"``
    (``||theta||_2 <= delta``) or ``"covariance"`` (zero mean, ``cov = C``;
    measure is the squared Frobenius norm ``||A sqrt(C)||^2``).
    """
    M = traj.M
    cols = []
    for op in ops:
        stack = _ops_stack(op, M)
        _check_normalized(stack, strict)
        cols.append(vec(conjugated(traj, stack).mean(axis=0)))
    L = len(cols)
    A = np.stack(cols, axis=1) if cols else np.zeros((traj.n**2, 0), dtype=complex)
    if bound == "peak":
        return RobustnessAssembly(A, np.eye(L), "inf", delta)
    if bound == "energy":
        return RobustnessAssembly(A, np.eye(L), "two", delta)
    if bound == "covariance":
        if covariance is None:
            raise ValueError("covariance bound needs a covariance matrix")
        C = np.asarray(covariance, dtype=float)
        if C.shape != (L, L):
            raise ValueError(f"covariance must be {L}x{L}")
        return RobustnessAssembly(A, psd_sqrt(C), "fro_sq", 1.0)
    raise ValueError(f"unknown bound kind {bound!r}")


def assemble_energy_bounded(traj: Trajectory, delta: float, basis=None) -> RobustnessAssembly:
    """Arbitrary constant perturbation with ``||H_tilde||_F <= delta``."""
    n = traj.n
    basis = pauli_basis(n) if basis is None else [np.asarray(b, dtype=complex) for b in basis]
    G = np.stack([vec(b) for b in basis], axis=1)
    if G.shape != (n * n, n * n) or not np.allclose(dag(G) @ G, np.eye(n * n), atol=1e-10):
        raise ValueError("basis must be n^2 orthonormal matrices")
    A = np.stack([vec(conjugated(traj, b).mean(axis=0)) for b in basis], axis=1)
    return RobustnessAssembly(A, np.eye(n * n), "two", delta)


def drift_profile(M: int) -> np.ndarray:
    """Rows ``h_t = [M - t, t - 1] / (M - 1)`` for ``t = 1..M``."""
    if M < 2:
        raise ValueError("bias/drift model needs M >= 2")
    t = np.arange(1, M + 1)
    return np.stack([M - t, t - 1], axis=1) / (M - 1)


def assemble_bias_drift(traj: Trajectory, ops: Sequence, deltas, norm: str = "inf",
                        strict: bool = False) -> list[RobustnessAssembly]:
    """Linearly drifting parameters ``theta_{l,t} = h_t^T [a_l, b_l]``, one assembly each."""
    h = drift_profile(traj.M)
    deltas = np.broadcast_to(np.asarray(deltas, dtype=float), (len(ops),))
    out = []
    for op, d in zip(ops, deltas):
        stack = _ops_stack(op, traj.M)
        _check_normalized(stack, strict)
        A = sample_columns(traj, stack) @ h
        out.append(RobustnessAssembly(A, np.eye(2), norm, float(d)))
    return out


def assemble_time_varying(traj: Trajectory, ops, filt: NoiseFilter, weight=None,
                          delta: float = 1.0, squared: bool = False) -> RobustnessAssembly:
    """Band-limited noise ``theta = delta K w / ||K||_F`` with unit-covariance ``w``."""
    if filt.M != traj.M:
        raise ValueError(f"filter is {filt.M}x{filt.M}, trajectory has M={traj.M}")
    A = sample_columns(traj, ops, weight)
    fro = np.linalg.norm(filt.K)
    S = filt.K / fro if fro > 0 else filt.K
    return RobustnessAssembly(A, S, "fro_sq" if squared else "fro", delta)


def assemble_pwc_noise(traj: Trajectory, ops, intervals: int, delta: float,
                       kind: str = "deterministic_inf", weight=None) -> RobustnessAssembly:
    """Parameter constant on each of ``intervals`` equal blocks of the horizon."""
    S = block_ones(traj.M, intervals)
    A = sample_columns(traj, ops, weight)
    if kind == "deterministic_inf":
        return RobustnessAssembly(A, S, "inf", delta)
    if kind == "probabilistic":
        return RobustnessAssembly(A, S, "fro", delta)
    raise ValueError(f"unknown PWC noise kind {kind!r}")


def assemble_actuator(traj: Trajectory, problem: ControlProblem, v, weight_impulse,
                      delta: float) -> list[RobustnessAssembly]:
    """Multiplicative actuator-dynamics error, one assembly per control.

    The commanded pulses filtered by the nominal actuator are the grid
    amplitudes of ``problem``; ``weight_impulse`` is the normalized
    error-weighting filter ``Q``.
    """
    q = np.asarray(weight_impulse, dtype=float)
    if q.shape != (traj.M,):
        raise ValueError(f"weighting impulse response must have length M={traj.M}")
    u = problem.grid_amplitudes(v)
    shaped = lower_toeplitz(q) @ u
    out = []
    for j in range(problem.m):
        A = sample_columns(traj, problem.controls[j])
        s_j = float(np.linalg.norm(shaped[:, j]))
        out.append(RobustnessAssembly(A, np.eye(traj.M), "two", delta * s_j))
    return out


def assemble_cross_coupling(traj1: Trajectory, traj2: Trajectory, ops1, ops2, ops_int,
                            deltas=(1.0, 1.0, 1.0), bound: str = "peak"):
    """Local and interaction assemblies for two channels run in parallel.

    Returns ``(assemblies, combine)`` where ``combine`` maps the list of
    three measure values to the overall one (worst case over channels).
    """
    n1, n2 = traj1.n, traj2.n
    if traj1.M != traj2.M:
        raise ValueError("channel trajectories have different lengths")
    ops_int = np.asarray(ops_int, dtype=complex)
    if ops_int.shape[-1] != n1 * n2:
        raise ValueError(f"interaction operator must act on dimension {n1 * n2}")
    joint = Trajectory(np.einsum("tab,tcd->tacbd", traj1.samples, traj2.samples)
                       .reshape(traj1.M + 1, n1 * n2, n1 * n2), traj1.dt)
    d1, d2, d12 = deltas
    asm = [
        assemble_constant_param(joint, [ops_int], bound, d12),
        assemble_constant_param(traj1, [ops1], bound, d1),
        assemble_constant_param(traj2, [ops2], bound, d2),
    ]
    return asm, max


def split_product_trajectory(traj: Trajectory, n1: int, n2: int) -> tuple[Trajectory, Trajectory]:
    """Recover channel trajectories from a product-form joint trajectory."""
    a, b = zip(*(kron_factor(u, n1, n2) for u in traj.samples))
    return Trajectory(np.array(a), traj.dt), Trajectory(np.array(b), traj.dt)


# -------------------------------------------------------------- uncertainty specs

VARIANTS: dict[str, type["Uncertainty"]] = {}


def register(cls):
    VARIANTS[cls.variant] = cls
    return cls


@dataclass(frozen=True)
class Uncertainty:
    """Base class of the uncertainty-set variants.

    Subclasses build their assemblies from the nominal trajectory and draw
    concrete perturbation schedules ``(M, n, n)`` for evaluation.
    ``sample_scale`` multiplies the magnitude handed to :meth:`sample`, so
    one sweep magnitude can drive several sources of different size.
    """

    sample_scale: float = 1.0
    variant: ClassVar[str] = ""
    combine: ClassVar[str] = "sum"

    def assemblies(self, problem: ControlProblem, v, traj: Trajectory) -> list[RobustnessAssembly]:
        raise NotImplementedError

    def value(self, problem: ControlProblem, v, traj: Trajectory,
              smoothing: float | None = None) -> float:
        vals = [measure(a, smoothing) for a in self.assemblies(problem, v, traj)]
        if not vals:
            return 0.0
        return float(max(vals) if self.combine == "max" else sum(vals))

    def sample(self, problem: ControlProblem, v, magnitude: float,
               rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError(f"sampling is not supported for variant {self.variant!r}")


def _shaping_sample(rng, M, magnitude, filt, intervals, dist="uniform"):
    """One realization of a shaped scalar noise sequence of length ``M``."""
    if intervals is not None:
        return block_ones(M, intervals) @ rng.uniform(-magnitude, magnitude, intervals)
    fro = np.linalg.norm(filt.K)
    if dist == "normal":
        w = rng.standard_normal(M)
    else:
        w = rng.uniform(-np.sqrt(3), np.sqrt(3), M)  # unit variance
    return magnitude * (filt.K @ w) / (fro if fro > 0 else 1.0)


@register
@dataclass(frozen=True)
class ConstantParam(Uncertainty):
    """``H_tilde_t = sum_l theta_l B_{l,t}`` with constant uncertain ``theta``.

    ``sampling="fixed"`` evaluates every parameter exactly at the requested
    (signed) magnitude, giving a deterministic fidelity-vs-parameter curve.
    """

    variant: ClassVar[str] = "constant_param"
    operators: tuple = ()
    bound: str = "peak"
    delta: float = 1.0
    covariance: np.ndarray | None = None
    sampling: str = "uniform"

    def assemblies(self, problem, v, traj):
        return [assemble_constant_param(traj, self.operators, self.bound, self.delta,
                                        self.covariance)]

    def sample(self, problem, v, magnitude, rng):
        L = len(self.operators)
        if self.sampling == "fixed":
            theta = np.full(L, float(magnitude))
        elif self.bound == "peak":
            theta = rng.uniform(-magnitude, magnitude, L)
        elif self.bound == "energy":
            d = rng.standard_normal(L)
            theta = magnitude * rng.uniform() ** (1 / L) * d / np.linalg.norm(d)
        else:
            theta = magnitude * psd_sqrt(np.asarray(self.covariance, float)) @ rng.standard_normal(L)
        ops = np.stack([_ops_stack(op, problem.M) for op in self.operators]) if L else None
        if ops is None:
            return np.zeros((problem.M, problem.n, problem.n), dtype=complex)
        return np.einsum("l,ltab->tab", theta, ops)


@register
@dataclass(frozen=True)
class EnergyBounded(Uncertainty):
    """Arbitrary constant perturbation, ``||H_tilde||_F <= delta``."""

    variant: ClassVar[str] = "energy_bounded"
    delta: float = 1.0

    def assemblies(self, problem, v, traj):
        return [assemble_energy_bounded(traj, self.delta)]

    def sample(self, problem, v, magnitude, rng):
        basis = np.stack(pauli_basis(problem.n))
        d = rng.standard_normal(len(basis))
        theta = magnitude * rng.uniform() ** (1 / len(d)) * d / np.linalg.norm(d)
        h = np.einsum("i,iab->ab", theta, basis)
        return np.broadcast_to(h, (problem.M,) + h.shape).copy()


@register
@dataclass(frozen=True)
class BiasDrift(Uncertainty):
    """Parameters drifting linearly from ``a_l`` to ``b_l`` within each run."""

    variant: ClassVar[str] = "bias_drift"
    operators: tuple = ()
    deltas: tuple = ()
    norm: str = "inf"

    def assemblies(self, problem, v, traj):
        return assemble_bias_drift(traj, self.operators, self.deltas or 1.0, self.norm)

    def sample(self, problem, v, magnitude, rng):
        h = drift_profile(problem.M)
        out = np.zeros((problem.M, problem.n, problem.n), dtype=complex)
        for op in self.operators:
            theta = h @ rng.uniform(-magnitude, magnitude, 2)
            out += theta[:, None, None] * _ops_stack(op, problem.M)
        return out


@register
@dataclass(frozen=True)
class TimeVarying(Uncertainty):
    """``H_tilde_t = theta_t B_t`` with ``theta = delta K w / ||K||_F``."""

    variant: ClassVar[str] = "time_varying"
    operator: np.ndarray | None = None
    filter: NoiseFilter | None = None
    delta: float = 1.0
    squared: bool = False
    dist: str = "normal"

    def _filter(self, M):
        return self.filter if self.filter is not None else NoiseFilter(np.eye(M), True)

    def assemblies(self, problem, v, traj):
        return [assemble_time_varying(traj, self.operator, self._filter(problem.M),
                                      delta=self.delta, squared=self.squared)]

    def sample(self, problem, v, magnitude, rng):
        theta = _shaping_sample(rng, problem.M, magnitude, self._filter(problem.M), None, self.dist)
        return theta[:, None, None] * _ops_stack(self.operator, problem.M)


@register
@dataclass(frozen=True)
class PWCNoise(Uncertainty):
    """Parameter constant on each of ``intervals`` blocks, independently bounded."""

    variant: ClassVar[str] = "pwc_noise"
    operator: np.ndarray | None = None
    intervals: int = 1
    delta: float = 1.0
    kind: str = "deterministic_inf"

    def assemblies(self, problem, v, traj):
        return [assemble_pwc_noise(traj, self.operator, self.intervals, self.delta, self.kind)]

    def sample(self, problem, v, magnitude, rng):
        theta = _shaping_sample(rng, problem.M, magnitude, None, self.intervals)
        return theta[:, None, None] * _ops_stack(self.operator, problem.M)


@dataclass(frozen=True)
class _ControlNoise(Uncertainty):
    """Shared machinery of additive / multiplicative control noise.

    Shaping is either a noise filter (Frobenius measure) or a number of
    PWC ``intervals`` (``kind`` picks the deterministic or probabilistic
    measure). ``controls`` selects the affected control indices.
    """

    controls: tuple | None = None
    filter: NoiseFilter | None = None
    intervals: int | None = None
    delta: float = 1.0
    kind: str = "deterministic_inf"
    dist: str = "normal"

    def _indices(self, problem):
        return range(problem.m) if self.controls is None else self.controls

    def _assemble(self, traj, ops, weight, M):
        if self.intervals is not None:
            return assemble_pwc_noise(traj, ops, self.intervals, self.delta, self.kind, weight)
        filt = self.filter if self.filter is not None else NoiseFilter(np.eye(M), True)
        return assemble_time_varying(traj, ops, filt, weight, self.delta)

    def _theta(self, problem, magnitude, rng):
        filt = self.filter if self.filter is not None else NoiseFilter(np.eye(problem.M), True)
        return _shaping_sample(rng, problem.M, magnitude, filt, self.intervals, self.dist)


@register
@dataclass(frozen=True)
class AdditiveControlNoise(_ControlNoise):
    variant: ClassVar[str] = "additive_ctrl"

    def assemblies(self, problem, v, traj):
        return [self._assemble(traj, problem.controls[j], None, problem.M)
                for j in self._indices(problem)]

    def sample(self, problem, v, magnitude, rng):
        out = np.zeros((problem.M, problem.n, problem.n), dtype=complex)
        for j in self._indices(problem):
            out += self._theta(problem, magnitude, rng)[:, None, None] * problem.controls[j]
        return out


@register
@dataclass(frozen=True)
class MultiplicativeControlNoise(_ControlNoise):
    """``(1 + theta_jt) v_jt`` scaling of the controls.

    ``operators`` overrides the operator each control amplitude multiplies
    in the perturbation (defaults to the control Hamiltonians); with
    ``shared=True`` one noise sequence scales all selected controls.
    """

    variant: ClassVar[str] = "multiplicative_ctrl"
    operators: np.ndarray | None = None
    shared: bool = False

    def _ops(self, problem):
        return problem.controls if self.operators is None else np.asarray(self.operators, complex)

    def assemblies(self, problem, v, traj):
        u = problem.grid_amplitudes(v)
        ops = self._ops(problem)
        idx = list(self._indices(problem))
        if self.shared:
            seq = np.einsum("tj,jab->tab", u[:, idx], ops[idx])
            return [self._assemble(traj, seq, None, problem.M)]
        return [self._assemble(traj, ops[j], u[:, j], problem.M) for j in idx]

    def sample(self, problem, v, magnitude, rng):
        u = problem.grid_amplitudes(v)
        ops = self._ops(problem)
        idx = list(self._indices(problem))
        if self.shared:
            theta = self._theta(problem, magnitude, rng)
            return theta[:, None, None] * np.einsum("tj,jab->tab", u[:, idx], ops[idx])
        out = np.zeros((problem.M, problem.n, problem.n), dtype=complex)
        for j in idx:
            out += (self._theta(problem, magnitude, rng) * u[:, j])[:, None, None] * ops[j]
        return out


@register
@dataclass(frozen=True)
class ActuatorDynamics(Uncertainty):
    """Multiplicative transfer-function error ``(1 + Delta Q) D_bar``, ``||Delta||_inf <= delta``.

    The nominal actuator ``D_bar`` lives on the problem (``problem.actuator``).
    """

    variant: ClassVar[str] = "actuator"
    weight: np.ndarray | None = None
    delta: float = 1.0
    taps: int = 4

    def _q(self, M):
        if self.weight is None:
            return np.eye(M)[0]
        return np.asarray(self.weight, dtype=float)

    def assemblies(self, problem, v, traj):
        return assemble_actuator(traj, problem, v, self._q(problem.M), self.delta)

    def sample(self, problem, v, magnitude, rng):
        M = problem.M
        h = np.zeros(M)
        k = min(self.taps, M)
        raw = rng.standard_normal(k)
        h[:k] = magnitude * rng.uniform() * raw / np.abs(raw).sum()  # ||T(h)||_2 <= sum|h|
        theta = lower_toeplitz(h) @ lower_toeplitz(self._q(M)) @ problem.grid_amplitudes(v)
        return np.einsum("tj,jab->tab", theta, problem.controls)


@register
@dataclass(frozen=True)
class CrossCoupling(Uncertainty):
    """Two parallel channels with local and interaction parameter uncertainty.

    The problem is the joint system; its Hamiltonians must be local, so the
    nominal trajectory factors as ``U1 (x) U2``.
    """

    variant: ClassVar[str] = "cross_coupling"
    combine: ClassVar[str] = "max"
    dims: tuple = (2, 2)
    local1: np.ndarray | None = None
    local2: np.ndarray | None = None
    interaction: np.ndarray | None = None
    deltas: tuple = (1.0, 1.0, 1.0)
    bound: str = "peak"
    mode: str = "max"

    def assemblies(self, problem, v, traj):
        n1, n2 = self.dims
        t1, t2 = split_product_trajectory(traj, n1, n2)
        asm, _ = assemble_cross_coupling(t1, t2, self.local1, self.local2, self.interaction,
                                         self.deltas, self.bound)
        return asm

    def value(self, problem, v, traj, smoothing=None):
        vals = [measure(a, smoothing) for a in self.assemblies(problem, v, traj)]
        return float(max(vals) if self.mode == "max" else sum(vals))

    def sample(self, problem, v, magnitude, rng):
        n1, n2 = self.dims
        th1, th2, th12 = rng.uniform(-magnitude, magnitude, 3)
        h = (th1 * np.kron(self.local1, np.eye(n2)) + th2 * np.kron(np.eye(n1), self.local2)
             + th12 * np.asarray(self.interaction))
        return np.broadcast_to(h, (problem.M,) + h.shape).copy()


# ------------------------------------------------------------------ public helpers

def robustness_value(problem: ControlProblem, v, specs: Sequence[Uncertainty],
                     traj: Trajectory | None = None, combine: str = "sum",
                     smoothing: float | None = None) -> float:
    """Total robustness measure of ``v`` over several uncertainty sources."""
    if not specs:
        return 0.0
    if traj is None:
        from .propagation import propagate_nominal
        traj = propagate_nominal(problem, v)
    vals = [s.value(problem, v, traj, smoothing) for s in specs]
    return float(max(vals) if combine == "max" else sum(vals))


def sample_perturbation(spec: Uncertainty | Sequence[Uncertainty], problem: ControlProblem, v,
                        magnitude: float, rng_seed) -> np.ndarray:
    """Draw one perturbation schedule ``(M, n, n)``; deterministic per seed.

    ``rng_seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    Several specs are sampled in order and summed.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    specs = [spec] if isinstance(spec, Uncertainty) else list(spec)
    out = np.zeros((problem.M, problem.n, problem.n), dtype=complex)
    if magnitude == 0:
        return out
    for s in specs:
        out = out + s.sample(problem, v, magnitude * s.sample_scale, rng)
    return 0.5 * (out + dag(out))
