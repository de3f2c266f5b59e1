"""Problem files and run reports: the JSON surface of the command line.

A problem file is one JSON object with up to five sections — ``subsystems``,
``interconnection``, ``global_objective``, ``allocations``, ``options`` —
and a report is a JSON object with exactly ``command``, ``status``,
``problem``, ``results``.  Matrices are nested row arrays with explicit
dimensions, so fixtures stay hand-editable and reports diff cleanly.
Unknown keys are rejected everywhere; format violations raise ParseError
with a location, while well-formed matrices that do not fit together raise
DimensionMismatch naming the offender.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    NotSymmetric,
    ParseError,
)
from .interconnect import Interconnection
from .lti import StateSpace
from .multipliers import (
    Multiplier,
    QuadMultiplier,
    constant_quad,
    l2gain_quad,
    passivity,
)

__all__ = [
    "ProblemFile",
    "Report",
    "load_problem",
    "load_report",
    "parse_problem",
    "resolve_objective",
    "matrix_payload",
    "multiplier_payload",
    "quad_payload",
    "problem_payload",
]

_PROBLEM_KEYS = {"subsystems", "interconnection", "global_objective",
                 "allocations", "options"}
_SUBSYSTEM_KEYS = {"name", "a", "b1", "c1", "d11", "b2", "c2", "d12", "d21"}
_ICN_KEYS = {"m11", "m12", "m21", "m22", "in_dims", "out_dims"}
_MULT_KEYS = {"x11", "x12", "x22"}
_QUAD_KEYS = {"x1", "x2", "x3"}
_OPTION_KEYS = {"tol", "gamma_lo", "gamma_hi", "max_iter", "seed", "grid",
                "mode", "rho", "sweeps_per_gamma", "bisect_tol", "res_tol",
                "ng", "nbar"}
_REPORT_KEYS = {"command", "status", "problem", "results"}
_PRESETS = ("l2gain", "passivity")


@dataclass(frozen=True)
class ProblemFile:
    """Parsed problem: named plants, routing, objective, options.

    ``objective`` is either a QuadMultiplier (explicit blocks) or a preset
    name that still needs port sizes; use :func:`resolve_objective`.
    """

    subsystems: tuple
    icn: Interconnection
    objective: object
    allocations: tuple
    options: dict
    source: str


@dataclass(frozen=True)
class Report:
    """One command's machine-readable outcome, echoing its problem."""

    command: str
    status: str
    problem: dict
    results: dict

    def to_json(self):
        payload = {"command": self.command, "status": self.status,
                   "problem": self.problem, "results": self.results}
        return json.dumps(payload, indent=2, sort_keys=True)


def _reject_unknown(data, allowed, where):
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ParseError(f"{where}: unknown key(s) {', '.join(unknown)}")


def _require_object(value, where):
    if not isinstance(value, dict):
        raise ParseError(f"{where}: expected an object, got "
                         f"{type(value).__name__}")
    return value


def _matrix(data, key, where, required=True):
    if key not in data:
        if required:
            raise ParseError(f"{where}: missing matrix {key!r}")
        return None
    rows = data[key]
    spot = f"{where}.{key}"
    if not isinstance(rows, list) or not rows or \
            not all(isinstance(r, list) for r in rows):
        raise ParseError(f"{spot}: a matrix is a non-empty list of rows")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"{spot}: row {i} has {len(row)} entries, "
                             f"expected {width}")
        for j, entry in enumerate(row):
            if isinstance(entry, bool) or not isinstance(entry, (int, float)):
                raise ParseError(f"{spot}: entry ({i},{j}) is not a number")
    return np.array(rows, dtype=float)


def _int_list(data, key, where):
    if key not in data:
        raise ParseError(f"{where}: missing {key!r}")
    values = data[key]
    if not isinstance(values, list) or not values or \
            any(isinstance(v, bool) or not isinstance(v, int) or v < 1
                for v in values):
        raise ParseError(f"{where}.{key}: expected a list of positive "
                         f"integers")
    return tuple(values)


def _subsystem(data, idx):
    where = f"subsystems[{idx}]"
    data = _require_object(data, where)
    _reject_unknown(data, _SUBSYSTEM_KEYS, where)
    name = data.get("name", f"sub{idx}")
    if not isinstance(name, str):
        raise ParseError(f"{where}.name: expected a string")
    a = _matrix(data, "a", where)
    b1 = _matrix(data, "b1", where)
    c1 = _matrix(data, "c1", where)
    d11 = _matrix(data, "d11", where)
    b2 = _matrix(data, "b2", where, required=False)
    c2 = _matrix(data, "c2", where, required=False)
    if (b2 is None) != (c2 is None):
        raise ParseError(f"{where}: control channels need both b2 and c2")
    try:
        if b2 is None:
            if "d12" in data or "d21" in data:
                raise ParseError(f"{where}: d12/d21 only make sense next "
                                 f"to b2 and c2")
            sys = StateSpace.plant(a, b1, c1, d11)
        else:
            d12 = _matrix(data, "d12", where, required=False)
            d21 = _matrix(data, "d21", where, required=False)
            if d12 is None:
                d12 = np.zeros((c1.shape[0], b2.shape[1]))
            if d21 is None:
                d21 = np.zeros((c2.shape[0], b1.shape[1]))
            sys = StateSpace(a, b1, b2, c1, d11, d12, c2, d21)
    except DimensionMismatch as exc:
        raise DimensionMismatch(f"{where} ({name}): {exc}") from exc
    return name, sys


def _multiplier(data, where):
    data = _require_object(data, where)
    _reject_unknown(data, _MULT_KEYS, where)
    blocks = {key: _matrix(data, key, where) for key in ("x11", "x12", "x22")}
    try:
        return Multiplier(**blocks)
    except NotSymmetric as exc:
        raise ParseError(f"{where}: {exc}") from exc
    except DimensionMismatch as exc:
        raise DimensionMismatch(f"{where}: {exc}") from exc


def _quad(data, where):
    data = _require_object(data, where)
    _reject_unknown(data, _QUAD_KEYS, where)
    parts = {}
    for key in ("x1", "x2", "x3"):
        if key not in data:
            raise ParseError(f"{where}: missing level {key!r}")
        parts[key] = _multiplier(data[key], f"{where}.{key}")
    try:
        return QuadMultiplier(**parts)
    except DimensionMismatch as exc:
        raise DimensionMismatch(f"{where}: {exc}") from exc


def _interconnection(data):
    where = "interconnection"
    data = _require_object(data, where)
    _reject_unknown(data, _ICN_KEYS, where)
    blocks = {key: _matrix(data, key, where)
              for key in ("m11", "m12", "m21", "m22")}
    in_dims = _int_list(data, "in_dims", where)
    out_dims = _int_list(data, "out_dims", where)
    try:
        return Interconnection(in_dims=in_dims, out_dims=out_dims, **blocks)
    except DimensionMismatch as exc:
        raise DimensionMismatch(f"{where}: {exc}") from exc


def _objective(data):
    where = "global_objective"
    if isinstance(data, str):
        if data not in _PRESETS:
            raise ParseError(f"{where}: unknown preset {data!r}; expected "
                             f"one of {', '.join(_PRESETS)}")
        return data
    return _quad(data, where)


def _options(data):
    where = "options"
    data = _require_object(data, where)
    _reject_unknown(data, _OPTION_KEYS, where)
    out = {}
    for key, value in data.items():
        if key == "mode":
            if value not in ("blockdiag", "fullblock"):
                raise ParseError(f"{where}.mode: expected 'blockdiag' or "
                                 f"'fullblock'")
            out[key] = value
            continue
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(f"{where}.{key}: expected a number")
        if key in ("max_iter", "seed", "grid", "sweeps_per_gamma",
                   "ng", "nbar"):
            if value != int(value):
                raise ParseError(f"{where}.{key}: expected an integer")
            out[key] = int(value)
        else:
            out[key] = float(value)
    return out


def resolve_objective(objective, n_in, n_out):
    """Turn a preset name into a sized family, or size-check given blocks."""
    if objective == "l2gain":
        return l2gain_quad(n_in, n_out)
    if objective == "passivity":
        if n_in != n_out:
            raise DimensionMismatch(
                f"passivity pairs ports one-to-one, got ({n_in}, {n_out})")
        return constant_quad(passivity(n_in))
    if not isinstance(objective, QuadMultiplier):
        raise ParseError("the problem carries no usable global_objective")
    if (objective.n_in, objective.n_out) != (n_in, n_out):
        raise DimensionMismatch(
            f"global_objective is ({objective.n_in}, {objective.n_out}) "
            f"but the ports are ({n_in}, {n_out})")
    return objective


def parse_problem(data, source="<memory>"):
    """Validate one decoded problem object into a ProblemFile."""
    data = _require_object(data, source)
    _reject_unknown(data, _PROBLEM_KEYS, source)

    subsystems = ()
    if "subsystems" in data:
        if not isinstance(data["subsystems"], list) or not data["subsystems"]:
            raise ParseError("subsystems: expected a non-empty list")
        subsystems = tuple(_subsystem(entry, i)
                           for i, entry in enumerate(data["subsystems"]))
        names = [name for name, _ in subsystems]
        if len(set(names)) != len(names):
            raise ParseError("subsystems: names must be unique")

    icn = _interconnection(data["interconnection"]) \
        if "interconnection" in data else None
    objective = _objective(data["global_objective"]) \
        if "global_objective" in data else None
    allocations = ()
    if "allocations" in data:
        if not isinstance(data["allocations"], list) or not data["allocations"]:
            raise ParseError("allocations: expected a non-empty list")
        allocations = tuple(_quad(entry, f"allocations[{i}]")
                            for i, entry in enumerate(data["allocations"]))
    options = _options(data["options"]) if "options" in data else {}

    if icn is not None:
        if subsystems and len(subsystems) != icn.n_sub:
            raise DimensionMismatch(
                f"{len(subsystems)} subsystems for an interconnection of "
                f"{icn.n_sub}")
        for i, (name, sys) in enumerate(subsystems):
            if (sys.n_v, sys.n_y) != (icn.in_dims[i], icn.out_dims[i]):
                raise DimensionMismatch(
                    f"subsystems[{i}] ({name}) has ports "
                    f"({sys.n_v}, {sys.n_y}) but the partition expects "
                    f"({icn.in_dims[i]}, {icn.out_dims[i]})")
        if isinstance(objective, QuadMultiplier):
            resolve_objective(objective, icn.n_w, icn.n_z)
        if allocations:
            if len(allocations) != icn.n_sub:
                raise DimensionMismatch(
                    f"{len(allocations)} allocations for {icn.n_sub} "
                    f"subsystems")
            for i, quad in enumerate(allocations):
                if (quad.n_in, quad.n_out) != (icn.in_dims[i],
                                               icn.out_dims[i]):
                    raise DimensionMismatch(
                        f"allocations[{i}] is ({quad.n_in}, {quad.n_out}) "
                        f"but the partition expects ({icn.in_dims[i]}, "
                        f"{icn.out_dims[i]})")
    elif allocations:
        raise ParseError("allocations need an interconnection to attach to")

    return ProblemFile(subsystems=subsystems, icn=icn, objective=objective,
                       allocations=allocations, options=options,
                       source=source)


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def load_problem(path):
    """Read and validate a JSON problem file."""
    return parse_problem(_load_json(path), source=str(path))


def load_report(path):
    """Read a previously emitted report back into a Report."""
    data = _load_json(path)
    data = _require_object(data, str(path))
    _reject_unknown(data, _REPORT_KEYS, str(path))
    for key in _REPORT_KEYS:
        if key not in data:
            raise ParseError(f"{path}: missing report key {key!r}")
    if not isinstance(data["command"], str) or \
            not isinstance(data["status"], str):
        raise ParseError(f"{path}: command and status must be strings")
    problem = _require_object(data["problem"], f"{path}.problem")
    results = _require_object(data["results"], f"{path}.results")
    return Report(command=data["command"], status=data["status"],
                  problem=problem, results=results)


def matrix_payload(mat):
    return np.asarray(mat, dtype=float).tolist()


def multiplier_payload(mult):
    return {"x11": matrix_payload(mult.x11),
            "x12": matrix_payload(mult.x12),
            "x22": matrix_payload(mult.x22)}


def quad_payload(quad):
    return {"x1": multiplier_payload(quad.x1),
            "x2": multiplier_payload(quad.x2),
            "x3": multiplier_payload(quad.x3)}


def _subsystem_payload(name, sys):
    out = {"name": name, "a": matrix_payload(sys.a),
           "b1": matrix_payload(sys.b1), "c1": matrix_payload(sys.c1),
           "d11": matrix_payload(sys.d11)}
    if sys.has_control:
        out.update({"b2": matrix_payload(sys.b2),
                    "c2": matrix_payload(sys.c2),
                    "d12": matrix_payload(sys.d12),
                    "d21": matrix_payload(sys.d21)})
    return out


def problem_payload(problem):
    """Re-encode a ProblemFile as a round-trippable problem object."""
    out = {}
    if problem.subsystems:
        out["subsystems"] = [_subsystem_payload(name, sys)
                             for name, sys in problem.subsystems]
    if problem.icn is not None:
        icn = problem.icn
        out["interconnection"] = {
            "m11": matrix_payload(icn.m11), "m12": matrix_payload(icn.m12),
            "m21": matrix_payload(icn.m21), "m22": matrix_payload(icn.m22),
            "in_dims": list(icn.in_dims), "out_dims": list(icn.out_dims)}
    if problem.objective is not None:
        out["global_objective"] = problem.objective \
            if isinstance(problem.objective, str) \
            else quad_payload(problem.objective)
    if problem.allocations:
        out["allocations"] = [quad_payload(q) for q in problem.allocations]
    if problem.options:
        out["options"] = dict(problem.options)
    return out
