"""JSON problem files: parsing, validation, canonical serialization and builders.

Operators are written as a Pauli string (``"Z"``, ``"XX"``; the leftmost
character is the first tensor factor), a Pauli sum ``{"Z": 1.0, "XY": [0,
0.5]}`` with real or ``[re, im]`` coefficients, or a dense matrix whose
entries are numbers or ``[re, im]`` pairs. Targets may also be named gates.

Layout::

    {"name": ..., "system": {...}, "target": ..., "uncertainty": [...],
     "optimizer": {...}, "evaluation": {...}}
"""
from __future__ import annotations

import copy
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import pauli_string
from .optimizer import OptimizerConfig
from .propagation import ControlProblem
from .uncertainty import (VARIANTS, NoiseFilter, Uncertainty, first_order_filter,
                          toeplitz_from_impulse)


class ProblemFileError(ValueError):
    """Invalid problem file; the message names the offending field."""


NAMED_GATES = {
    "I": np.eye(2),
    "X": pauli_string("X"),
    "Y": pauli_string("Y"),
    "Z": pauli_string("Z"),
    "H": np.array([[1, 1], [1, -1]]) / np.sqrt(2),
    "CNOT": np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]]),
}

TOP_KEYS = {"name", "system", "target", "uncertainty", "optimizer", "evaluation"}
SYSTEM_KEYS = {"n", "T", "N", "M", "drift", "controls", "bounds", "actuator"}
OPTIMIZER_KEYS = {"f0", "alpha", "beta", "max_iters", "max_iters_stage1", "tol", "window",
                  "ridge", "growth", "slack_factor", "max_halvings", "f0_schedule", "combine",
                  "smoothing", "seed", "init"}
EVALUATION_KEYS = {"magnitudes", "samples", "seed", "uncertainty"}

# variant -> {file key: kind}
VARIANT_KEYS = {
    "constant_param": {"operators": "ops", "bound": "str", "delta": "float",
                       "covariance": "real_matrix", "sampling": "str"},
    "energy_bounded": {"delta": "float"},
    "bias_drift": {"operators": "ops", "deltas": "floats", "norm": "str"},
    "time_varying": {"operator": "op", "filter": "filter", "delta": "float",
                     "squared": "bool", "dist": "str"},
    "pwc_noise": {"operator": "op", "intervals": "int", "delta": "float", "kind": "str"},
    "additive_ctrl": {"controls": "ints", "filter": "filter", "intervals": "int",
                      "delta": "float", "kind": "str", "dist": "str"},
    "multiplicative_ctrl": {"controls": "ints", "filter": "filter", "intervals": "int",
                            "delta": "float", "kind": "str", "dist": "str", "operators": "ops",
                            "shared": "bool"},
    "actuator": {"weight": "floats", "delta": "float", "taps": "int"},
    "cross_coupling": {"dims": "ints", "local1": "op", "local2": "op", "interaction": "op",
                       "deltas": "floats", "bound": "str", "mode": "str"},
    "lindblad": {"jump_ops": "ops", "delta": "float", "norm": "str"},
    "bipartite": {"bath_dim": "int", "bath_hams": "ops", "couplings": "ops", "delta": "float"},
}
COMMON_SPEC_KEYS = {"sample_scale": "float"}


def _fail(path, msg):
    raise ProblemFileError(f"{path}: {msg}")


def _check_keys(obj, allowed, path, strict):
    if not isinstance(obj, dict):
        _fail(path, f"expected an object, got {type(obj).__name__}")
    extra = sorted(set(obj) - set(allowed))
    if extra:
        if strict:
            _fail(path, f"unknown key(s) {extra}")
        warnings.warn(f"{path}: ignoring unknown key(s) {extra}")
        for k in extra:
            del obj[k]


def _complex(x, path):
    if isinstance(x, bool):
        _fail(path, "expected a number")
    if isinstance(x, (int, float)):
        return complex(x)
    if isinstance(x, list) and len(x) == 2 and all(isinstance(c, (int, float)) for c in x):
        return complex(x[0], x[1])
    _fail(path, f"expected a number or [re, im] pair, got {x!r}")


def _float(x, path):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        _fail(path, f"expected a number, got {x!r}")
    return float(x)


def _int(x, path):
    if isinstance(x, bool) or not isinstance(x, int):
        _fail(path, f"expected an integer, got {x!r}")
    return x


def parse_operator(spec, n: int | None, path: str = "operator") -> np.ndarray:
    """Decode one operator encoding into a dense complex matrix."""
    if isinstance(spec, str):
        try:
            op = pauli_string(spec)
        except ValueError as exc:
            _fail(path, str(exc))
    elif isinstance(spec, dict):
        if not spec:
            _fail(path, "empty Pauli sum")
        lengths = {len(k) for k in spec}
        if len(lengths) != 1:
            _fail(path, "Pauli strings in a sum must have equal length")
        op = 0
        for label, coef in spec.items():
            try:
                p = pauli_string(label)
            except ValueError as exc:
                _fail(path, str(exc))
            op = op + _complex(coef, f"{path}.{label}") * p
    elif isinstance(spec, list):
        rows = [[_complex(x, f"{path}[{i}][{j}]") for j, x in enumerate(row)]
                if isinstance(row, list) else _fail(path, "matrix rows must be lists")
                for i, row in enumerate(spec)]
        if not rows or any(len(r) != len(rows) for r in rows):
            _fail(path, "matrix must be square")
        op = np.array(rows, dtype=complex)
    else:
        _fail(path, f"cannot decode operator {spec!r}")
    op = np.asarray(op, dtype=complex)
    if n is not None and op.shape != (n, n):
        _fail(path, f"operator has dimension {op.shape[0]}, expected {n}")
    return op


def encode_matrix(a) -> list:
    """Dense ``[re, im]`` encoding used when serializing computed matrices."""
    a = np.asarray(a, dtype=complex)
    return [[[float(x.real), float(x.imag)] for x in row] for row in a]


def _parse_filter(spec, path):
    if not isinstance(spec, dict) or "type" not in spec:
        _fail(path, "filter must be an object with a 'type'")
    kind = spec["type"]
    allowed = {"first_order": {"type", "beta"}, "impulse": {"type", "h"},
               "identity": {"type"}}
    if kind not in allowed:
        _fail(path, f"unknown filter type {kind!r}")
    _check_keys(spec, allowed[kind], path, True)
    if kind == "first_order":
        b = _float(spec.get("beta"), f"{path}.beta")
        if b <= 0:
            _fail(f"{path}.beta", "time constant must be positive")
    elif kind == "impulse":
        if not isinstance(spec.get("h"), list) or not spec["h"]:
            _fail(f"{path}.h", "expected a nonempty list")
        for i, x in enumerate(spec["h"]):
            _float(x, f"{path}.h[{i}]")


def _build_filter(spec, T, M) -> NoiseFilter:
    if spec["type"] == "first_order":
        return first_order_filter(float(spec["beta"]), T, M)
    if spec["type"] == "impulse":
        h = np.zeros(M)
        src = np.asarray(spec["h"], float)[:M]
        h[:len(src)] = src
        return toeplitz_from_impulse(h)
    return NoiseFilter(np.eye(M), True)


@dataclass
class ProblemFile:
    """A validated problem document (kept in its JSON form) plus builders."""

    doc: dict

    @property
    def name(self) -> str:
        return self.doc.get("name", "")

    @property
    def n(self) -> int:
        return self.doc["system"]["n"]

    def __eq__(self, other):
        return isinstance(other, ProblemFile) and self.doc == other.doc

    # ---------------------------------------------------------------- builders

    def build_problem(self) -> ControlProblem:
        s = self.doc["system"]
        n = s["n"]
        drift = parse_operator(s["drift"], n, "system.drift") if s.get("drift") is not None \
            else np.zeros((n, n), complex)
        ctrls = [parse_operator(c, n, f"system.controls[{i}]") for i, c in enumerate(s["controls"])]
        controls = np.stack(ctrls) if ctrls else np.zeros((0, n, n), complex)
        t = self.doc["target"]
        target = np.asarray(NAMED_GATES[t], complex) if isinstance(t, str) else \
            parse_operator(t, n, "target")
        act = s.get("actuator")
        try:
            return ControlProblem(drift, controls, target, s["T"], s["N"], s["M"],
                                  tuple(s["bounds"]) if s.get("bounds") else None,
                                  np.asarray(act, float) if act is not None else None)
        except ValueError as exc:
            raise ProblemFileError(f"system: {exc}") from None

    def build_specs(self, problem: ControlProblem | None = None) -> list[Uncertainty]:
        """Uncertainty models driving the robustness measure."""
        problem = problem or self.build_problem()
        return [self._build_spec(e, problem, f"uncertainty[{i}]")
                for i, e in enumerate(self.doc.get("uncertainty", []))]

    def build_eval_specs(self, problem: ControlProblem | None = None) -> list[Uncertainty]:
        """Models sampled by sweeps; defaults to the synthesis models."""
        problem = problem or self.build_problem()
        entries = self.doc.get("evaluation", {}).get("uncertainty")
        if entries is None:
            return self.build_specs(problem)
        return [self._build_spec(e, problem, f"evaluation.uncertainty[{i}]")
                for i, e in enumerate(entries)]

    def _build_spec(self, entry, problem, path) -> Uncertainty:
        variant = entry["variant"]
        kinds = {**VARIANT_KEYS[variant], **COMMON_SPEC_KEYS}
        n = problem.n
        if variant == "cross_coupling":
            n1, n2 = entry.get("dims", [2, 2])
            dims_of = {"local1": n1, "local2": n2, "interaction": n}
        elif variant == "bipartite":
            nb = entry.get("bath_dim", 2)
            dims_of = {"bath_hams": nb, "couplings": n * nb}
        else:
            dims_of = {}
        kw = {}
        for k, val in entry.items():
            if k == "variant":
                continue
            kind = kinds[k]
            d = dims_of.get(k, n)
            if kind == "op":
                kw[k] = parse_operator(val, d, f"{path}.{k}")
            elif kind == "ops":
                ops = tuple(parse_operator(o, d, f"{path}.{k}[{i}]") for i, o in enumerate(val))
                kw[k] = np.stack(ops) if k == "operators" and variant == "multiplicative_ctrl" \
                    else ops
            elif kind == "filter":
                kw[k] = _build_filter(val, problem.T, problem.M)
            elif kind == "real_matrix":
                kw[k] = np.asarray(val, float)
            elif kind in ("floats", "ints"):
                kw[k] = tuple(val) if k != "weight" else np.asarray(val, float)
            else:
                kw[k] = val
        try:
            return VARIANTS[variant](**kw)
        except (TypeError, ValueError) as exc:
            raise ProblemFileError(f"{path}: {exc}") from None

    def build_config(self) -> OptimizerConfig:
        o = {k: v for k, v in self.doc.get("optimizer", {}).items() if k not in ("seed", "init")}
        if "f0_schedule" in o:
            o["f0_schedule"] = tuple((int(i), float(f)) for i, f in o["f0_schedule"])
        try:
            return OptimizerConfig(**o)
        except ValueError as exc:
            raise ProblemFileError(f"optimizer: {exc}") from None

    def initial_controls(self, problem: ControlProblem | None = None,
                         seed: int | None = None) -> np.ndarray:
        problem = problem or self.build_problem()
        o = self.doc.get("optimizer", {})
        init = o.get("init", 0.0)
        seed = o.get("seed", 0) if seed is None else seed
        if isinstance(init, (int, float)):
            v = np.full(problem.n_params, float(init))
        elif isinstance(init, list):
            v = np.asarray(init, float)
            if v.shape != (problem.n_params,):
                raise ProblemFileError(f"optimizer.init: expected {problem.n_params} values, "
                                       f"got {v.size}")
        elif "uniform" in init:
            lo, hi = init["uniform"]
            v = np.random.default_rng(seed).uniform(lo, hi, problem.n_params)
        else:
            lo, hi = init["linspace"]
            v = np.linspace(lo, hi, problem.n_params)
        return problem.clip(v)

    def evaluation(self) -> dict:
        e = self.doc.get("evaluation", {})
        return {"magnitudes": list(e.get("magnitudes", [0.0])), "samples": e.get("samples", 100),
                "seed": e.get("seed", 0)}


def _validate_specs(entries, path, strict):
    if not isinstance(entries, list):
        _fail(path, "expected a list")
    for i, e in enumerate(entries):
        p = f"{path}[{i}]"
        if not isinstance(e, dict) or "variant" not in e:
            _fail(p, "each uncertainty needs a 'variant'")
        if e["variant"] not in VARIANT_KEYS:
            _fail(f"{p}.variant", f"unknown variant {e['variant']!r}; "
                                  f"expected one of {sorted(VARIANT_KEYS)}")
        kinds = {**VARIANT_KEYS[e["variant"]], **COMMON_SPEC_KEYS}
        _check_keys(e, set(kinds) | {"variant"}, p, strict)
        for k, val in e.items():
            kind = kinds.get(k)
            q = f"{p}.{k}"
            if kind in ("float",):
                _float(val, q)
            elif kind == "int":
                _int(val, q)
            elif kind == "bool" and not isinstance(val, bool):
                _fail(q, "expected true/false")
            elif kind == "str" and not isinstance(val, str):
                _fail(q, "expected a string")
            elif kind in ("floats", "ints", "ops") and not isinstance(val, list):
                _fail(q, "expected a list")
            elif kind == "floats":
                for j, x in enumerate(val):
                    _float(x, f"{q}[{j}]")
            elif kind == "ints":
                for j, x in enumerate(val):
                    _int(x, f"{q}[{j}]")
            elif kind == "ops":
                for j, x in enumerate(val):
                    parse_operator(x, None, f"{q}[{j}]")
            elif kind == "op":
                parse_operator(val, None, q)
            elif kind == "filter":
                _parse_filter(val, q)
            elif kind == "real_matrix":
                arr = np.asarray(val, dtype=float) if isinstance(val, list) else None
                if arr is None or arr.ndim != 2:
                    _fail(q, "expected a real matrix")


def validate(doc: dict, strict: bool = False) -> ProblemFile:
    """Check structure and types; returns a :class:`ProblemFile` owning a copy of ``doc``."""
    doc = copy.deepcopy(doc)
    _check_keys(doc, TOP_KEYS, "<root>", strict)
    for req in ("system", "target"):
        if req not in doc:
            _fail("<root>", f"missing section {req!r}")
    if "name" in doc and not isinstance(doc["name"], str):
        _fail("name", "expected a string")
    s = doc["system"]
    _check_keys(s, SYSTEM_KEYS, "system", strict)
    for k in ("n", "N", "M"):
        if k not in s:
            _fail("system", f"missing {k!r}")
        if _int(s[k], f"system.{k}") < 1:
            _fail(f"system.{k}", "must be positive")
    if "T" not in s:
        _fail("system", "missing 'T'")
    if _float(s["T"], "system.T") <= 0:
        _fail("system.T", "must be positive")
    if s["M"] % s["N"]:
        _fail("system.M", f"M={s['M']} is not a multiple of N={s['N']}")
    if s.get("drift") is not None:
        parse_operator(s["drift"], s["n"], "system.drift")
    ctrls = s.setdefault("controls", [])
    if not isinstance(ctrls, list):
        _fail("system.controls", "expected a list")
    for i, c in enumerate(ctrls):
        parse_operator(c, s["n"], f"system.controls[{i}]")
    if s.get("bounds") is not None:
        b = s["bounds"]
        if not (isinstance(b, list) and len(b) == 2):
            _fail("system.bounds", "expected [lo, hi]")
        if _float(b[0], "system.bounds[0]") >= _float(b[1], "system.bounds[1]"):
            _fail("system.bounds", "empty interval")
    if s.get("actuator") is not None:
        a = s["actuator"]
        if not isinstance(a, list) or len(a) != s["M"]:
            _fail("system.actuator", f"expected {s['M']} impulse-response values")
        for i, x in enumerate(a):
            _float(x, f"system.actuator[{i}]")
    t = doc["target"]
    if isinstance(t, str):
        if t not in NAMED_GATES:
            _fail("target", f"unknown gate {t!r}; expected one of {sorted(NAMED_GATES)}")
        if NAMED_GATES[t].shape[0] != s["n"]:
            _fail("target", f"gate {t} has dimension {NAMED_GATES[t].shape[0]}, "
                            f"system has {s['n']}")
    else:
        parse_operator(t, s["n"], "target")
    _validate_specs(doc.setdefault("uncertainty", []), "uncertainty", strict)
    o = doc.setdefault("optimizer", {})
    _check_keys(o, OPTIMIZER_KEYS, "optimizer", strict)
    for k in ("f0", "alpha", "beta", "tol", "ridge", "growth", "slack_factor"):
        if k in o:
            _float(o[k], f"optimizer.{k}")
    for k in ("max_iters", "max_iters_stage1", "window", "max_halvings", "seed"):
        if k in o:
            _int(o[k], f"optimizer.{k}")
    if o.get("smoothing") is not None:
        _float(o["smoothing"], "optimizer.smoothing")
    if "combine" in o and o["combine"] not in ("sum", "max"):
        _fail("optimizer.combine", "expected 'sum' or 'max'")
    for i, item in enumerate(o.get("f0_schedule", [])):
        if not (isinstance(item, list) and len(item) == 2):
            _fail(f"optimizer.f0_schedule[{i}]", "expected [iteration, f0]")
        _int(item[0], f"optimizer.f0_schedule[{i}][0]")
        _float(item[1], f"optimizer.f0_schedule[{i}][1]")
    init = o.get("init", 0.0)
    if isinstance(init, dict):
        _check_keys(init, {"uniform", "linspace"}, "optimizer.init", True)
        if len(init) != 1:
            _fail("optimizer.init", "give exactly one of 'uniform', 'linspace'")
        (k, val), = init.items()
        if not (isinstance(val, list) and len(val) == 2):
            _fail(f"optimizer.init.{k}", "expected [lo, hi]")
        for j, x in enumerate(val):
            _float(x, f"optimizer.init.{k}[{j}]")
    elif isinstance(init, list):
        for j, x in enumerate(init):
            _float(x, f"optimizer.init[{j}]")
    else:
        _float(init, "optimizer.init")
    e = doc.setdefault("evaluation", {})
    _check_keys(e, EVALUATION_KEYS, "evaluation", strict)
    if "magnitudes" in e:
        if not isinstance(e["magnitudes"], list) or not e["magnitudes"]:
            _fail("evaluation.magnitudes", "expected a nonempty list")
        for j, x in enumerate(e["magnitudes"]):
            _float(x, f"evaluation.magnitudes[{j}]")
    for k in ("samples", "seed"):
        if k in e:
            _int(e[k], f"evaluation.{k}")
    if "samples" in e and e["samples"] < 1:
        _fail("evaluation.samples", "must be positive")
    if "uncertainty" in e:
        _validate_specs(e["uncertainty"], "evaluation.uncertainty", strict)
    pf = ProblemFile(doc)
    problem = pf.build_problem()
    pf.build_config()
    pf.build_eval_specs(problem)
    pf.build_specs(problem)
    return pf


def loads(text: str, strict: bool = False) -> ProblemFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return validate(doc, strict)


def load(path, strict: bool = False) -> ProblemFile:
    return loads(Path(path).read_text(), strict)


def dumps(pf: ProblemFile) -> str:
    return json.dumps(pf.doc, indent=2) + "\n"
