"""Command-line driver: ``robustavg {synthesize,sweep,check,info} PROBLEM.json``.

Exit codes: 0 success (converged or iteration budget spent), 1 error,
2 optimizer stall, 3 averaging-bound violation (``check``).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import (check_averaging_bounds, fmt, monte_carlo_sweep, write_csv,
                         write_sweep_csv)
from .optimizer import IterationRecord, run_two_stage
from .problem_file import ProblemFile, ProblemFileError, load
from .propagation import nominal_fidelity, propagate_nominal
from .uncertainty import robustness_value, sample_perturbation

log = logging.getLogger("robustavg")

TRACE_COLUMNS = ("iter", "stage", "F_nom", "J_rbst", "step_norm", "lambda", "gamma")
EXIT_OK, EXIT_ERROR, EXIT_STALL, EXIT_VIOLATION = 0, 1, 2, 3


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    try:
        return max(1, int(os.environ.get("ROBUSTAVG_THREADS", "1")))
    except ValueError:
        return 1


def _seeds(pf: ProblemFile, override):
    opt = pf.doc.get("optimizer", {}).get("seed", 0)
    ev = pf.evaluation()["seed"]
    return (opt, ev) if override is None else (override, override)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_controls(path, problem, columns: dict):
    m = problem.m
    labels = list(columns)
    rows = []
    for p in range(problem.N):
        for j in range(m):
            rows.append([p, j] + [float(columns[k][p * m + j]) for k in labels])
    write_csv(path, ["pulse", "control"] + labels, rows)


def read_controls(path, problem) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ProblemFileError(f"{path}: no control rows")
    labels = [c for c in rows[0] if c not in ("pulse", "control")]
    m = problem.m
    out = {k: np.full(problem.n_params, np.nan) for k in labels}
    for r in rows:
        p, j = int(r["pulse"]), int(r["control"])
        if not (0 <= p < problem.N and 0 <= j < m):
            raise ProblemFileError(f"{path}: pulse/control index ({p}, {j}) outside the "
                                   f"problem's {problem.N} x {m} grid")
        for k in labels:
            out[k][p * m + j] = float(r[k])
    for k, v in out.items():
        if np.isnan(v).any():
            raise ProblemFileError(f"{path}: column {k!r} does not cover all "
                                   f"{problem.n_params} amplitudes")
    return out


# ----------------------------------------------------------------- subcommands

def cmd_synthesize(args) -> int:
    pf = load(args.problem, strict=args.strict)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = pf.build_problem()
    specs = pf.build_specs(problem)
    cfg = pf.build_config()
    opt_seed, ev_seed = _seeds(pf, args.seed)
    v0 = pf.initial_controls(problem, opt_seed)

    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        fh.flush()

        def sink(rec: IterationRecord):
            w.writerow([fmt(x) for x in (rec.iter, rec.stage, rec.F_nom, rec.J_rbst,
                                         rec.step_norm, rec.lam, rec.gamma)])
            fh.flush()
            log.debug("iter %d stage %d F=%.12g J=%.6g", rec.iter, rec.stage, rec.F_nom, rec.J_rbst)

        res = run_two_stage(problem, specs, cfg, v0, callback=sink)

    v1 = res.v_switch if res.v_switch is not None else res.v_final
    v2 = res.v_robust
    write_controls(out / "controls.csv", problem,
                   {"initial": res.v_init, "stage1": v1, "robust": v2, "last": res.v_final})
    ev = pf.evaluation()
    eval_specs = pf.build_eval_specs(problem)
    reports = []
    if eval_specs:
        for label, v in (("stage1", v1), ("robust", v2)):
            reports.append(monte_carlo_sweep(problem, v, eval_specs, ev["magnitudes"],
                                             ev["samples"], ev_seed, label, _threads(args)))
    write_sweep_csv(out / "sweep.csv", reports)

    def FJ(v):
        return (nominal_fidelity(propagate_nominal(problem, v), problem.target),
                robustness_value(problem, v, specs, combine=cfg.combine, smoothing=cfg.smoothing))

    F0, J0 = FJ(res.v_init)
    F1, J1 = FJ(v1)
    F2, J2 = FJ(v2)
    summary = {
        "name": pf.name, "status": res.status, "iterations": len(res.trace),
        "switch_iter": res.trace.switch_iter,
        "F_initial": F0, "J_initial": J0, "F_stage1": F1, "J_stage1": J1,
        "F_final": F2, "J_final": J2, "F_last": res.F_final, "J_last": res.J_final,
        "worst_infidelity": {r.label: float(r.infidelity("min").max()) for r in reports},
        "mean_infidelity": {r.label: float(r.infidelity("mean").max()) for r in reports},
        "seed": {"optimizer": opt_seed, "evaluation": ev_seed},
        "version": __version__, "config": pf.doc,
    }
    _write_json(out / "summary.json", summary)
    print(f"{pf.name or args.problem}: {res.status} after {len(res.trace)} iterations, "
          f"F_nom={F2:.12g}, J_rbst={J2:.6g}")
    return EXIT_STALL if res.status == "stall" else EXIT_OK


def _labels(available, requested):
    if requested:
        missing = [k for k in requested if k not in available]
        if missing:
            raise ProblemFileError(f"controls file has no column(s) {missing}")
        return list(requested)
    preferred = [k for k in ("stage1", "robust") if k in available]
    return preferred or list(available)


def cmd_sweep(args) -> int:
    pf = load(args.problem, strict=args.strict)
    problem = pf.build_problem()
    controls = read_controls(args.controls, problem)
    specs = pf.build_eval_specs(problem)
    if not specs:
        raise ProblemFileError("no uncertainty models to sample")
    ev = pf.evaluation()
    _, seed = _seeds(pf, args.seed)
    reports = [monte_carlo_sweep(problem, controls[k], specs, ev["magnitudes"], ev["samples"],
                                 seed, k, _threads(args))
               for k in _labels(controls, args.labels)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(out / "sweep.csv", reports)
    for r in reports:
        print(f"{r.label}: worst infidelity {r.infidelity('min').max():.6g}, "
              f"largest mean infidelity {r.infidelity('mean').max():.6g}")
    return EXIT_OK


def cmd_check(args) -> int:
    pf = load(args.problem, strict=args.strict)
    problem = pf.build_problem()
    controls = read_controls(args.controls, problem)
    specs = pf.build_eval_specs(problem)
    ev = pf.evaluation()
    _, seed = _seeds(pf, args.seed)
    mag = args.magnitude if args.magnitude is not None else max(abs(x) for x in ev["magnitudes"])
    rows, bad = [], 0
    labels = _labels(controls, args.labels)
    children = np.random.SeedSequence(seed).spawn(len(labels))
    for label, ss in zip(labels, children):
        v = controls[label]
        traj = propagate_nominal(problem, v)
        for k, s in enumerate(ss.spawn(args.samples)):
            pert = sample_perturbation(specs, problem, v, mag, s) if specs else \
                np.zeros((problem.M, problem.n, problem.n), complex)
            delta = max(float(np.linalg.norm(h, 2)) for h in pert)
            bc = check_averaging_bounds(traj, pert, delta, strict=False)
            bad += not bc.ok
            rows.append([label, k, bc.delta, bc.gamma_bar, bc.gamma_tilde, bc.avg_dev,
                         bc.avg_bound, bc.fluct_dev, bc.fluct_bound, int(bc.ok)])
    header = ["label", "sample", "delta", "gamma_bar", "gamma_tilde", "avg_dev", "avg_bound",
              "fluct_dev", "fluct_bound", "ok"]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "check.csv", header, rows)
    for label in labels:
        r = [x for x in rows if x[0] == label]
        ratio1 = max(x[5] / x[6] if x[6] > 0 else 0.0 for x in r)
        ratio2 = max(x[7] / x[8] if x[8] > 0 else 0.0 for x in r)
        print(f"{label}: {len(r)} realizations, max measured/bound ratios "
              f"{ratio1:.4g} (average), {ratio2:.4g} (fluctuation)")
    if bad:
        print(f"averaging bound violated in {bad} realization(s)", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_info(args) -> int:
    pf = load(args.problem, strict=args.strict)
    problem = pf.build_problem()
    specs = pf.build_specs(problem)
    cfg = pf.build_config()
    opt_seed, _ = _seeds(pf, args.seed)
    v0 = pf.initial_controls(problem, opt_seed)
    F = nominal_fidelity(propagate_nominal(problem, v0), problem.target)
    J = robustness_value(problem, v0, specs, combine=cfg.combine, smoothing=cfg.smoothing)
    print(f"name:        {pf.name}")
    print(f"dimension:   {problem.n}  controls: {problem.m}  pulses N={problem.N}  "
          f"grid M={problem.M}  T={problem.T:g}")
    print(f"parameters:  {problem.n_params}")
    print(f"uncertainty: {', '.join(s.variant for s in specs) or 'none'}")
    print(f"threshold:   f0={cfg.f0:.12g}  alpha={cfg.alpha:g}  max_iters={cfg.max_iters}")
    print(f"initial:     F_nom={F:.12g}  J_rbst={J:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robustavg",
                                description="Robust control synthesis by time-averaged Hamiltonians.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, controls=False):
        sp.add_argument("problem", help="JSON problem file")
        if controls:
            sp.add_argument("controls", help="controls.csv from a synthesize run")
        sp.add_argument("--seed", type=int, default=None, help="override every seed in the file")
        sp.add_argument("--threads", type=int, default=None,
                        help="sampling threads (default: $ROBUSTAVG_THREADS or 1)")
        sp.add_argument("--strict", action="store_true", help="reject unknown keys")
        sp.add_argument("-v", "--verbose", action="store_true")

    s = sub.add_parser("synthesize", help="run the two-stage optimizer and write artifacts")
    common(s)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("sweep", help="Monte-Carlo fidelity sweep of saved controls")
    common(s, controls=True)
    s.add_argument("--out", required=True)
    s.add_argument("--labels", nargs="+", default=None)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("check", help="verify the averaging bounds on sampled perturbations")
    common(s, controls=True)
    s.add_argument("--out", default=None)
    s.add_argument("--labels", nargs="+", default=None)
    s.add_argument("--samples", type=int, default=20)
    s.add_argument("--magnitude", type=float, default=None)
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("info", help="describe a problem file")
    common(s)
    s.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ProblemFileError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
