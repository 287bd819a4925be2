"""Two-stage robust synthesis.

Stage 1 climbs the nominal fidelity until it reaches the threshold ``f0``.
Stage 2 then lowers the robustness measure while holding the fidelity at
the threshold: both objectives are replaced by quadratic models in the
increment ``dv`` and the resulting (possibly nonconvex) QCQP

    minimize    dv'(I + a HJ)dv + 2a gJ'dv
    subject to  dv'HF dv + 2 gF'dv + 2(F - f0) >= 0

is solved through its two-variable dual. For fixed ``lam >= 0`` the LMI
constraint reduces, by a Schur complement, to ``M(lam) = I - lam HF + a HJ``
positive definite and ``gamma <= -2 lam (F - f0) - q' M^-1 q`` with
``q = a gJ - lam gF``; the dual is then a concave scalar problem in ``lam``.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .differentiation import (QuadraticModel, fidelity_and_gradient, fidelity_hessian,
                              robustness_gradient, robustness_hessian)
from .propagation import ControlProblem, nominal_fidelity, propagate_nominal
from .uncertainty import Uncertainty, robustness_value

log = logging.getLogger(__name__)

INV_PHI = (math.sqrt(5) - 1) / 2


class DualInfeasible(ValueError):
    """No ``lam >= 0`` makes ``I - lam HF + a HJ`` positive definite."""


@dataclass(frozen=True)
class OptimizerConfig:
    f0: float = 1 - 1e-6
    alpha: float = 5.0
    beta: float = 1.0
    max_iters: int = 500
    max_iters_stage1: int = 5000
    tol: float = 1e-8
    window: int = 10
    ridge: float = 1e-10
    growth: float = 10.0
    slack_factor: float = 10.0
    max_halvings: int = 10
    f0_schedule: tuple = ()
    combine: str = "sum"
    smoothing: float | None = None
    convexify: bool = True

    def __post_init__(self):
        if not 0 < self.f0 < 1:
            raise ValueError("f0 must lie in (0, 1)")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        for _, f in self.f0_schedule:
            if not 0 < f < 1:
                raise ValueError("scheduled f0 must lie in (0, 1)")


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    stage: int
    F_nom: float
    J_rbst: float
    step_norm: float
    lam: float = float("nan")
    gamma: float = float("nan")
    f0: float = float("nan")
    note: str = ""


@dataclass
class OptimizationTrace:
    records: list = field(default_factory=list)

    def append(self, rec: IterationRecord):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def switch_iter(self) -> int | None:
        """First iteration taken in Stage 2, if any."""
        for r in self.records:
            if r.stage == 2:
                return r.iter
        return None


@dataclass(frozen=True)
class DualSolution:
    lam: float
    gamma: float
    dv: np.ndarray


@dataclass
class RunResult:
    v_final: np.ndarray
    trace: OptimizationTrace
    status: str
    v_init: np.ndarray
    v_switch: np.ndarray | None = None
    F_final: float = float("nan")
    J_final: float = float("nan")
    # lowest-J iterate meeting the threshold in force when it was visited
    v_best: np.ndarray | None = None
    F_best: float = float("nan")
    J_best: float = float("nan")

    @property
    def v_robust(self) -> np.ndarray:
        """Delivered control: the best feasible iterate, else the last one."""
        return self.v_final if self.v_best is None else self.v_best


# --------------------------------------------------------------- scalar search

def golden_section_max(f: Callable[[float], float], a: float, b: float,
                       rtol: float = 1e-10, max_iter: int = 500) -> tuple[float, float]:
    """Maximize a unimodal ``f`` on ``[a, b]``; returns ``(x, f(x))``."""
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= rtol * max(1.0, abs(a) + abs(b)):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def _min_eig(P, Q, lam):
    return np.linalg.eigvalsh(P - lam * Q)[0]


def _feasible_interval(P, Q, ridge, growth, cap=1e12):
    """Interval of ``lam >= 0`` with ``lambda_min(P - lam Q) >= ridge``.

    ``lambda_min`` is concave in ``lam`` so the set is an interval.
    """
    phi = lambda lam: _min_eig(P, Q, lam)
    if phi(0.0) >= ridge:
        lo = 0.0
    else:
        # maximize the concave phi to find any feasible point
        prev, x = 0.0, 1.0
        fprev = phi(0.0)
        while x < cap:
            fx = phi(x)
            if fx < fprev:
                break
            prev, fprev, x = x, fx, x * growth
        left = prev / growth if prev > 0 else 0.0
        xs, fs = golden_section_max(phi, left, min(x, cap), rtol=1e-12)
        if fs < ridge:
            raise DualInfeasible(f"I - lam*HF + alpha*HJ is not positive definite for any "
                                 f"lam >= 0 (best min eigenvalue {fs:.3e})")
        a, b = 0.0, xs
        for _ in range(200):
            mid = 0.5 * (a + b)
            if phi(mid) >= ridge:
                b = mid
            else:
                a = mid
        lo = b
    # right end
    x = max(lo, 1.0)
    while x < cap and phi(x) >= ridge:
        x *= growth
    if x >= cap:
        return lo, cap
    a, b = max(lo, x / growth), x
    if phi(a) < ridge:
        a = lo
    for _ in range(200):
        mid = 0.5 * (a + b)
        if phi(mid) >= ridge:
            a = mid
        else:
            b = mid
    return lo, a


def solve_dual(gradF, hessF, gradJ, hessJ, F_nom: float, f0: float, alpha: float,
               ridge: float = 1e-10, growth: float = 10.0, rtol: float = 1e-10) -> DualSolution:
    """Maximize the dual ``gamma(lam)`` over the feasible ``lam >= 0``.

    Returns the maximizing ``lam``, the dual value ``gamma`` and the primal
    increment ``dv = -M(lam)^-1 (a gJ - lam gF)``.
    """
    gF = np.asarray(gradF, float)
    gJ = np.asarray(gradJ, float)
    HF = np.asarray(hessF, float)
    HJ = np.asarray(hessJ, float)
    arrays = (gF, gJ, HF, HJ, np.array([F_nom, f0, alpha]))
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise ValueError("non-finite input to the dual solve")
    if F_nom < f0:
        raise ValueError(f"dual step needs F_nom >= f0 (got {F_nom} < {f0})")
    d = gF.size
    if d == 0:
        return DualSolution(0.0, 0.0, np.zeros(0))
    P = np.eye(d) + alpha * 0.5 * (HJ + HJ.T)
    Q = 0.5 * (HF + HF.T)
    slack = F_nom - f0
    lo, hi = _feasible_interval(P, Q, ridge, growth)

    def solve(lam):
        q = alpha * gJ - lam * gF
        Mlam = P - lam * Q
        try:
            c = np.linalg.cholesky(Mlam)
            y = np.linalg.solve(c, q)
            x = np.linalg.solve(c.T, y)
            return -2 * lam * slack - y @ y, -x
        except np.linalg.LinAlgError:
            return -np.inf, None

    gamma = lambda lam: solve(lam)[0]

    # geometric bracket: walk right until gamma decreases
    pts = [lo]
    vals = [gamma(lo)]
    x = lo + 1.0 if lo == 0 else lo * growth
    while True:
        x = min(x, hi)
        fx = gamma(x)
        pts.append(x)
        vals.append(fx)
        if fx < vals[-2] or x >= hi:
            break
        x = lo + (x - lo) * growth
    k = len(pts) - 1
    a = pts[max(k - 2, 0)]
    b = pts[k]
    lam, g = golden_section_max(gamma, a, b, rtol=rtol)
    for cand, val in zip(pts, vals):
        if val > g:
            lam, g = cand, val

    # Golden section only sees gamma values, which flatten to rounding noise
    # near the top. Sharpen an interior maximizer by bisecting on the exact
    # slope gamma'(lam) = -c(dv(lam)), c being the model constraint.
    def slope(lam):
        x = solve(lam)[1]
        if x is None:
            return np.inf
        return -(x @ Q @ x + 2 * gF @ x + 2 * slack)

    w = 1e-8 * max(1.0, lam)
    lo_b, hi_b = max(a, lam - w), min(b, lam + w)
    for _ in range(60):
        if slope(lo_b) > 0 > slope(hi_b) or (lo_b == a and hi_b == b):
            break
        w *= 4
        lo_b, hi_b = max(a, lam - w), min(b, lam + w)
    if lo_b < hi_b and slope(lo_b) > 0 > slope(hi_b):
        for _ in range(200):
            mid = 0.5 * (lo_b + hi_b)
            if not lo_b < mid < hi_b:
                break
            if slope(mid) > 0:
                lo_b = mid
            else:
                hi_b = mid
        cand = 0.5 * (lo_b + hi_b)
        gc = gamma(cand)
        # near the top gamma is mostly rounding noise (relative cond(M) * eps),
        # so trust the slope root unless gamma is clearly worse
        if gc >= g - 1e-6 * max(1.0, abs(g)):
            lam, g = cand, gc
    g_at, dv = solve(lam)
    return DualSolution(float(lam), float(g_at), dv)


# ---------------------------------------------------------------------- stages

def _fidelity(problem, v):
    return nominal_fidelity(propagate_nominal(problem, v), problem.target)


def stage1_step(problem: ControlProblem, v, config: OptimizerConfig,
                step_hint: float | None = None, min_step: float = 1e-16):
    """Projected gradient ascent on ``F_nom`` with Armijo backtracking.

    Returns ``(v_new, info)``; ``info["stalled"]`` flags a failed line
    search and ``info["step"]`` the accepted step size for warm starts.
    """
    F, g, _ = fidelity_and_gradient(problem, v)
    gn = float(np.linalg.norm(g))
    if gn == 0.0:
        return np.array(v, dtype=float), {"F": F, "step": 0.0, "stalled": False, "dv": 0.0}
    s = config.beta / gn
    if step_hint:
        s = min(s, 4 * step_hint)
    while s * gn >= min_step:
        cand = problem.clip(v + s * g)
        dv = cand - v
        Fc = _fidelity(problem, cand)
        if Fc > F + 1e-4 * float(g @ dv) and Fc > F:
            return cand, {"F": Fc, "step": s, "stalled": False, "dv": float(np.linalg.norm(dv))}
        s *= 0.5
    return np.array(v, dtype=float), {"F": F, "step": 0.0, "stalled": True, "dv": 0.0}


def stage2_step(problem: ControlProblem, v, specs: Sequence[Uncertainty],
                config: OptimizerConfig, f0: float | None = None):
    """One dual-based robustness step on the high-fidelity level set."""
    f0 = config.f0 if f0 is None else f0
    F, gF, _ = fidelity_and_gradient(problem, v)
    HF = fidelity_hessian(problem, v)
    J = robustness_value(problem, v, specs, combine=config.combine, smoothing=config.smoothing)
    gJ = robustness_gradient(problem, v, specs, config.combine, config.smoothing)
    HJ = robustness_hessian(problem, v, specs, config.combine, config.smoothing, J0=J)
    note = ""
    try:
        sol = solve_dual(gF, HF, gJ, HJ, F, f0, config.alpha, config.ridge, config.growth)
    except DualInfeasible:
        if not config.convexify:
            raise
        w, V = np.linalg.eigh(0.5 * (HJ + HJ.T))
        HJ = (V * np.clip(w, 0, None)) @ V.T
        sol = solve_dual(gF, HF, gJ, HJ, F, f0, config.alpha, config.ridge, config.growth)
        note = "convexified"
    info = {"F": F, "J": J, "lam": sol.lam, "gamma": sol.gamma, "stalled": False,
            "dv": 0.0, "note": note,
            "F_model": QuadraticModel(F, gF, HF), "J_model": QuadraticModel(J, gJ, HJ)}
    dv = sol.dv
    if not np.any(dv):
        return np.array(v, dtype=float), info
    floor = f0 - config.slack_factor * (1 - f0)
    for _ in range(config.max_halvings + 1):
        cand = problem.clip(v + dv)
        Fc = _fidelity(problem, cand)
        if Fc >= floor:
            info.update(F=Fc, dv=float(np.linalg.norm(cand - v)))
            return cand, info
        dv = 0.5 * dv
    info.update(stalled=True, note=(note + " retry-exhausted").strip())
    return np.array(v, dtype=float), info


def run_two_stage(problem: ControlProblem, specs: Sequence[Uncertainty],
                  config: OptimizerConfig, v_init,
                  callback: Callable[[IterationRecord], None] | None = None) -> RunResult:
    """Alternate Stage 1 / Stage 2 by the threshold rule until convergence.

    Status is ``"converged"`` (robustness settled, or nothing left to do),
    ``"max_iters"`` or ``"stall"`` (a line search or fidelity retry failed).
    """
    v = problem.check_controls(problem.clip(np.asarray(v_init, dtype=float)))
    v0 = v.copy()
    trace = OptimizationTrace()
    schedule = sorted(config.f0_schedule)
    f0 = config.f0
    hint = None
    v_switch = None
    J_hist: list[float] = []
    status = "max_iters"
    stage1_count = 0
    best = None  # (J, F, v)

    def J_of(x):
        return robustness_value(problem, x, specs, combine=config.combine,
                                smoothing=config.smoothing)

    F = _fidelity(problem, v)
    for it in range(1, config.max_iters + 1):
        while schedule and schedule[0][0] <= it:
            f0 = schedule.pop(0)[1]
            J_hist.clear()
            best = None
        if F < f0:
            stage1_count += 1
            v_new, info = stage1_step(problem, v, config, hint)
            hint = info["step"] or hint
            rec = IterationRecord(it, 1, info["F"], J_of(v_new), info["dv"], f0=f0,
                                  note="stalled" if info["stalled"] else "")
            v, F = v_new, info["F"]
            trace.append(rec)
            if callback:
                callback(rec)
            if info["stalled"] or stage1_count >= config.max_iters_stage1:
                status = "stall"
                break
            continue
        if v_switch is None:
            v_switch = v.copy()
        if not specs:
            warnings.warn("no uncertainty sources: stopping at the fidelity threshold")
            status = "converged"
            break
        v_new, info = stage2_step(problem, v, specs, config, f0)
        J_new = J_of(v_new)
        rec = IterationRecord(it, 2, info["F"], J_new, info["dv"], info["lam"],
                              info["gamma"], f0, info["note"])
        v, F = v_new, info["F"]
        trace.append(rec)
        if callback:
            callback(rec)
        if info["stalled"]:
            status = "stall"
            break
        J_hist.append(J_new)
        if F >= f0 and (best is None or J_new < best[0]):
            best = (J_new, F, v.copy())
        settled = info["dv"] == 0.0 or (
            len(J_hist) > config.window
            and abs(J_hist[-1] - J_hist[-1 - config.window]) < config.tol)
        if settled:
            if schedule:
                f0 = schedule.pop(0)[1]
                J_hist.clear()
                best = None
                continue
            status = "converged"
            break
    log.info("two-stage run finished: %s after %d iterations", status, len(trace))
    out = RunResult(v, trace, status, v0, v_switch, F, J_of(v))
    if best is not None:
        out.J_best, out.F_best, out.v_best = best
    return out
