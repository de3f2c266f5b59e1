"""Command-line front end: run one certification command on a problem file.

Commands: analyze, synthesize, admissible, localize, group, admm, validate.
Each reads a JSON problem file (validate reads a previously emitted report),
prints a JSON report to stdout or --output, and exits 0 on a positive
verdict, 2 on a negative-but-valid verdict (infeasible / inadmissible /
invalid), 1 on errors.  No plotting, no service mode.
"""

import argparse
import sys

import numpy as np

from .analysis import (
    StorageCertificate,
    dissipation_residual,
    iqc_analysis,
    l2_gain_bisect,
)
from .admm import admm_solve
from .conic import FEAS_TOL
from .errors import (
    Infeasible,
    InfeasibleAtHi,
    IqcAllocError,
    NotALocalization,
    ParseError,
    SeedInfeasible,
)
from .grouping import GroupMatrix, group_localize, hadamard_blocks, \
    membership_from_P
from .interconnect import gac_matrix, gac_quadratic
from .localization import _merge_ports, closest_localization, \
    localization_distance
from .lti import probe_signal
from .multipliers import Multiplier, QuadMultiplier
from .problem_io import (
    Report,
    load_problem,
    load_report,
    matrix_payload,
    multiplier_payload,
    parse_problem,
    problem_payload,
    quad_payload,
    resolve_objective,
)
from .synthesis import synthesize

__all__ = ["run", "main", "exit_code"]

COMMANDS = ("analyze", "synthesize", "admissible", "localize", "group",
            "admm", "validate")

_NEGATIVE = ("infeasible", "inadmissible", "invalid")

# probe used when replaying certificates against trajectories
_PROBE_DT = 0.002
_PROBE_DURATION = 20.0
_REPLAY_TOL = 1e-4


def _merged_options(problem, flags):
    opts = dict(problem.options)
    for key, value in flags.items():
        if value is not None:
            opts[key] = value
    return opts


def _need(problem, what, command):
    value = {"subsystems": problem.subsystems,
             "interconnection": problem.icn,
             "global_objective": problem.objective,
             "allocations": problem.allocations}[what]
    if value is None or (isinstance(value, tuple) and not value):
        raise ValueError(f"{command} needs a {what!r} section in "
                         f"{problem.source}")
    return value


def _quad_from_payload(data, where):
    parts = {k: Multiplier(**{b: np.array(data[k][b], dtype=float)
                              for b in ("x11", "x12", "x22")})
             for k in ("x1", "x2", "x3")}
    try:
        return QuadMultiplier(**parts)
    except KeyError as exc:
        raise ParseError(f"{where}: missing block {exc}") from exc


def _cmd_analyze(problem, opts):
    subsystems = _need(problem, "subsystems", "analyze")
    entries = []
    worst = None
    for name, sys in subsystems:
        quad = resolve_objective(problem.objective or "l2gain",
                                 sys.n_v, sys.n_y)
        try:
            gamma = l2_gain_bisect(sys, quad, lo=opts.get("gamma_lo", 0.0),
                                   hi=opts.get("gamma_hi"),
                                   tol=opts.get("tol", 1e-3))
        except InfeasibleAtHi as exc:
            entries.append({"name": name, "status": "infeasible",
                            "detail": str(exc)})
            continue
        cert = iqc_analysis(sys, quad.eval(gamma))
        worst = gamma if worst is None else max(worst, gamma)
        entries.append({"name": name, "status": "feasible", "gamma": gamma,
                        "feas_residual": cert.feas_residual,
                        "storage": matrix_payload(cert.p),
                        "multiplier": multiplier_payload(cert.multiplier)})
    status = "feasible" if all(e["status"] == "feasible" for e in entries) \
        else "infeasible"
    results = {"subsystems": entries, "replay_tol": _REPLAY_TOL}
    if worst is not None:
        results["gamma"] = worst
    return Report(command="analyze", status=status,
                  problem=problem_payload(problem), results=results)


def _cmd_synthesize(problem, opts):
    subsystems = _need(problem, "subsystems", "synthesize")
    entries = []
    worst = None
    for name, sys in subsystems:
        quad = resolve_objective(problem.objective or "l2gain",
                                 sys.n_v, sys.n_y)
        try:
            if sys.has_control:
                res = synthesize(sys, quad, lo=opts.get("gamma_lo", 0.0),
                                 hi=opts.get("gamma_hi"),
                                 tol=opts.get("tol", 1e-3))
                gamma, gamma_run = res.gamma, res.gamma_run
                cert, loop = res.cert, res.closed_loop
                ctrl = {"a": matrix_payload(res.controller.a),
                        "b": matrix_payload(res.controller.b),
                        "c": matrix_payload(res.controller.c),
                        "d": matrix_payload(res.controller.d)}
            else:
                # nothing to design: the plant itself is the closed loop
                gamma = l2_gain_bisect(sys, quad,
                                       lo=opts.get("gamma_lo", 0.0),
                                       hi=opts.get("gamma_hi"),
                                       tol=opts.get("tol", 1e-3))
                gamma_run = 1.05 * gamma
                cert, loop, ctrl = iqc_analysis(
                    sys, quad.eval(gamma_run)), sys, None
        except (InfeasibleAtHi, Infeasible) as exc:
            entries.append({"name": name, "status": "infeasible",
                            "detail": str(exc)})
            continue
        worst = gamma if worst is None else max(worst, gamma)
        entries.append({
            "name": name, "status": "feasible", "gamma": gamma,
            "gamma_run": gamma_run, "controller": ctrl,
            "closed_loop": {"a": matrix_payload(loop.a),
                            "b1": matrix_payload(loop.b1),
                            "c1": matrix_payload(loop.c1),
                            "d11": matrix_payload(loop.d11)},
            "feas_residual": cert.feas_residual,
            "storage": matrix_payload(cert.p),
            "multiplier": multiplier_payload(cert.multiplier)})
    status = "feasible" if all(e["status"] == "feasible" for e in entries) \
        else "infeasible"
    results = {"subsystems": entries, "replay_tol": _REPLAY_TOL}
    if worst is not None:
        results["gamma"] = worst
    return Report(command="synthesize", status=status,
                  problem=problem_payload(problem), results=results)


def _cmd_admissible(problem, opts):
    icn = _need(problem, "interconnection", "admissible")
    allocations = _need(problem, "allocations", "admissible")
    wq = resolve_objective(problem.objective or "l2gain", icn.n_w, icn.n_z)
    gac = gac_quadratic(icn, list(allocations), wq)
    top = float(np.linalg.eigvalsh(gac)[-1])
    try:
        distance = localization_distance(icn, list(allocations), wq)
        status, results = "admissible", {"distance": distance,
                                         "max_violation": top}
    except NotALocalization:
        status, results = "inadmissible", {"max_violation": top}
    return Report(command="admissible", status=status,
                  problem=problem_payload(problem), results=results)


def _cmd_localize(problem, opts):
    icn = _need(problem, "interconnection", "localize")
    wq = resolve_objective(problem.objective or "l2gain", icn.n_w, icn.n_z)
    try:
        loc = closest_localization(icn, wq,
                                   structure=opts.get("mode", "blockdiag"))
    except Infeasible as exc:
        return Report(command="localize", status="infeasible",
                      problem=problem_payload(problem),
                      results={"detail": str(exc)})
    payloads = [quad_payload(q) for q in loc.multipliers.multipliers]
    echo = problem_payload(problem)
    echo["allocations"] = payloads
    results = {"distance": loc.distance, "exact": loc.exact,
               "t_star": loc.t_star, "allocations": payloads}
    return Report(command="localize", status="feasible", problem=echo,
                  results=results)


def _cmd_group(problem, opts):
    icn = _need(problem, "interconnection", "group")
    wq = resolve_objective(problem.objective or "l2gain", icn.n_w, icn.n_z)
    if "ng" not in opts or "nbar" not in opts:
        raise ValueError("group needs options.ng and options.nbar "
                         "(group count and capacity)")
    try:
        res = group_localize(icn, wq, ng=opts["ng"], nbar=opts["nbar"],
                             tol=opts.get("tol", 1e-5),
                             max_outer=opts.get("max_iter", 100))
    except Infeasible as exc:
        return Report(command="group", status="infeasible",
                      problem=problem_payload(problem),
                      results={"detail": str(exc)})
    results = {"groups": [list(g) for g in res.groups],
               "distance": res.distance,
               "iterations": res.iterations,
               "group_matrix": matrix_payload(res.group_matrix.p),
               "joint_family": quad_payload(res.multipliers),
               "trace": [[tag, val] for tag, val in res.d_history]}
    return Report(command="group", status="feasible",
                  problem=problem_payload(problem), results=results)


def _cmd_admm(problem, opts):
    icn = _need(problem, "interconnection", "admm")
    subsystems = _need(problem, "subsystems", "admm")
    wq = resolve_objective(problem.objective or "l2gain", icn.n_w, icn.n_z)
    plants = [sys for _, sys in subsystems]
    try:
        local_set, gamma, state = admm_solve(
            icn, wq, plants,
            max_iter=opts.get("max_iter", 500),
            res_tol=opts.get("res_tol", 1e-4),
            rho=opts.get("rho", 1.0),
            gamma_lo=opts.get("gamma_lo", 0.0),
            gamma_hi=opts.get("gamma_hi", 10.0),
            sweeps_per_gamma=opts.get("sweeps_per_gamma", 10),
            bisect_tol=opts.get("bisect_tol", 1e-3))
    except SeedInfeasible as exc:
        return Report(command="admm", status="infeasible",
                      problem=problem_payload(problem),
                      results={"detail": str(exc)})
    payloads = [quad_payload(q) for q in local_set.multipliers]
    echo = problem_payload(problem)
    echo["allocations"] = payloads
    # the consensus side certifies admissibility; the per-subsystem side
    # certifies dissipativity — both are needed to replay the verdict
    results = {"gamma": gamma, "iterations": state.iters,
               "primal_residual": state.primal_res,
               "dual_residual": state.dual_res,
               "allocations": payloads,
               "local_multipliers": [multiplier_payload(x) for x in state.x],
               "replay_tol": _REPLAY_TOL,
               "trace": [list(row) for row in state.trace]}
    return Report(command="admm", status="converged", problem=echo,
                  results=results)


def _check(checks, name, value, bound):
    checks.append({"name": name, "value": float(value),
                   "bound": float(bound), "ok": bool(value <= bound)})


def _replay_allocations(problem, gammas, checks):
    """Admissibility of echoed allocations: family matrix plus a gamma grid."""
    icn = problem.icn
    wq = resolve_objective(problem.objective or "l2gain", icn.n_w, icn.n_z)
    allocs = list(problem.allocations)
    gac = gac_quadratic(icn, allocs, wq)
    _check(checks, "family_admissibility", np.linalg.eigvalsh(gac)[-1],
           10.0 * FEAS_TOL)
    worst = -np.inf
    for gamma in gammas:
        evaluated = gac_matrix(icn, [q.eval(gamma) for q in allocs],
                               wq.eval(gamma))
        worst = max(worst, float(np.linalg.eigvalsh(evaluated)[-1]))
    _check(checks, "level_sampled_admissibility", worst, 10.0 * FEAS_TOL)
    return wq, allocs


def _replay_certificate(entry, where, rng, checks, replay_tol):
    sys_payload = entry.get("closed_loop")
    if sys_payload is None:
        raise ParseError(f"{where}: nothing to replay")
    from .lti import StateSpace

    sys = StateSpace.plant(np.array(sys_payload["a"]),
                           np.array(sys_payload["b1"]),
                           np.array(sys_payload["c1"]),
                           np.array(sys_payload["d11"]))
    mult = Multiplier(**{k: np.array(v) for k, v in
                         entry["multiplier"].items()})
    cert = StorageCertificate(p=np.array(entry["storage"]), multiplier=mult,
                              feas_residual=float(entry["feas_residual"]))
    probe = probe_signal(rng, sys.n_v, _PROBE_DT, _PROBE_DURATION)
    residual = dissipation_residual(sys, cert, probe)
    _check(checks, f"{where}_dissipation_replay", residual, replay_tol)


def _cmd_validate(path, opts):
    report = load_report(path)
    problem = parse_problem(report.problem, source=f"{path}#problem")
    rng = np.random.default_rng(opts.get("seed", 0))
    grid = max(2, opts.get("grid", 21))
    lo = opts.get("gamma_lo", 0.0)
    hi = opts.get("gamma_hi", 10.0)
    gammas = np.linspace(lo, hi, grid)
    checks = []
    replay_tol = float(report.results.get("replay_tol", _REPLAY_TOL))

    if report.command in ("localize", "admissible"):
        _replay_allocations(problem, gammas, checks)
        stated = report.results.get("distance")
        if stated is not None:
            wq = resolve_objective(problem.objective or "l2gain",
                                   problem.icn.n_w, problem.icn.n_z)
            actual = localization_distance(problem.icn,
                                           list(problem.allocations), wq)
            _check(checks, "stated_distance_drift", abs(actual - stated),
                   1e-6 * (1.0 + abs(stated)))
    elif report.command == "admm":
        # consensus multipliers are level-specific: replay the negotiated
        # level only, not the whole family
        wq = resolve_objective(problem.objective or "l2gain",
                               problem.icn.n_w, problem.icn.n_z)
        allocs = list(problem.allocations)
        gamma = float(report.results["gamma"])
        evaluated = gac_matrix(problem.icn, [q.eval(gamma) for q in allocs],
                               wq.eval(gamma))
        _check(checks, "negotiated_level_admissibility",
               np.linalg.eigvalsh(evaluated)[-1], 10.0 * FEAS_TOL)
        local_mults = [Multiplier(**{k: np.array(v) for k, v in blk.items()})
                       for blk in report.results["local_multipliers"]]
        for (name, sys), mult in zip(problem.subsystems, local_mults):
            cert = iqc_analysis(sys, mult)
            probe = probe_signal(rng, sys.n_v, _PROBE_DT, _PROBE_DURATION)
            residual = dissipation_residual(sys, cert, probe)
            _check(checks, f"{name}_dissipation_replay", residual,
                   replay_tol)
    elif report.command in ("analyze", "synthesize"):
        for entry in report.results["subsystems"]:
            if entry.get("status") != "feasible":
                continue
            if report.command == "analyze":
                entry = dict(entry)
                entry["closed_loop"] = next(
                    s for s in report.problem["subsystems"]
                    if s["name"] == entry["name"])
                entry["closed_loop"] = {
                    "a": entry["closed_loop"]["a"],
                    "b1": entry["closed_loop"]["b1"],
                    "c1": entry["closed_loop"]["c1"],
                    "d11": entry["closed_loop"]["d11"]}
            _replay_certificate(entry, entry["name"], rng, checks,
                                replay_tol)
    elif report.command == "group":
        icn = problem.icn
        wq = resolve_objective(problem.objective or "l2gain",
                               icn.n_w, icn.n_z)
        pmat = np.array(report.results["group_matrix"], dtype=float)
        groups = [tuple(g) for g in report.results["groups"]]
        gm = GroupMatrix(pmat, ng=len(groups), nbar=max(map(len, groups)))
        ok = gm.rounded and membership_from_P(gm) == sorted(groups)
        checks.append({"name": "partition_consistency", "value": 0.0,
                       "bound": 0.0, "ok": bool(ok)})
        joint = _quad_from_payload(report.results["joint_family"],
                                   "joint_family")
        masked = hadamard_blocks(pmat, joint, icn.in_dims, icn.out_dims)
        gac = gac_quadratic(_merge_ports(icn), [masked], wq)
        _check(checks, "grouped_admissibility",
               np.linalg.eigvalsh(gac)[-1], 10.0 * FEAS_TOL)
        stated = float(report.results["distance"])
        actual = float(np.abs(np.linalg.eigvalsh(gac)).max())
        _check(checks, "stated_distance_drift", abs(actual - stated),
               1e-6 * (1.0 + abs(stated)))
    else:
        raise ParseError(f"{path}: no replay defined for command "
                         f"{report.command!r}")

    status = "valid" if checks and all(c["ok"] for c in checks) else "invalid"
    return Report(command="validate", status=status, problem=report.problem,
                  results={"validated_command": report.command,
                           "checks": checks})


def run(command, problem_path, **flags):
    """Execute one command against a problem (or report) file."""
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}; expected one of "
                         f"{', '.join(COMMANDS)}")
    if command == "validate":
        opts = {k: v for k, v in flags.items() if v is not None}
        return _cmd_validate(problem_path, opts)
    problem = load_problem(problem_path)
    opts = _merged_options(problem, flags)
    handler = {"analyze": _cmd_analyze, "synthesize": _cmd_synthesize,
               "admissible": _cmd_admissible, "localize": _cmd_localize,
               "group": _cmd_group, "admm": _cmd_admm}[command]
    return handler(problem, opts)


def exit_code(report):
    return 2 if report.status in _NEGATIVE else 0


def _parser():
    parser = argparse.ArgumentParser(
        prog="iqcalloc",
        description="Certify and allocate performance for interconnected "
                    "LTI systems from a JSON problem file.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("problem", help="problem file (report file for "
                                        "'validate')")
    parser.add_argument("--tol", type=float, default=None,
                        help="bisection / alternation tolerance")
    parser.add_argument("--gamma-lo", dest="gamma_lo", type=float,
                        default=None, help="lower end of the level interval")
    parser.add_argument("--gamma-hi", dest="gamma_hi", type=float,
                        default=None, help="upper end of the level interval")
    parser.add_argument("--max-iter", dest="max_iter", type=int,
                        default=None, help="iteration budget")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed for randomized validation probes")
    parser.add_argument("--grid", type=int, default=None,
                        help="level samples for validation sweeps")
    parser.add_argument("--mode", choices=("blockdiag", "fullblock"),
                        default=None, help="allocation structure")
    parser.add_argument("--output", default=None,
                        help="write the report here instead of stdout")
    return parser


def main(argv=None):
    args = _parser().parse_args(argv)
    flags = {key: getattr(args, key) for key in
             ("tol", "gamma_lo", "gamma_hi", "max_iter", "seed", "grid",
              "mode")}
    try:
        report = run(args.command, args.problem, **flags)
    except (IqcAllocError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    text = report.to_json()
    if args.output:
        with open(args.output, "w", encoding="utf-8") as handle:
            handle.write(text + "\n")
    else:
        print(text)
    return exit_code(report)


if __name__ == "__main__":
    sys.exit(main())
