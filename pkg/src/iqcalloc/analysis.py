"""Dissipativity analysis of a fixed LTI system against a static supply rate.

The central object is the dissipation LMI in (x, v) coordinates,

    [[A'P + PA - C'X22C,  PB - C'X12' - C'X22D],
     [sym,               -(X11 + X12D + D'X12' + D'X22D)]]  <=  0,

which is the quadratic form of  d/dt(x'Px) - s(v, y)  along trajectories.
Feasibility with P >= 0 certifies that the system satisfies the integral
constraint of the supply rate; the same matrix evaluated numerically is a
trajectory-independent replay check.
"""

from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from . import conic, lti
from .errors import Infeasible, InfeasibleAtHi
from .linalg import symmetrize
from .multipliers import Multiplier, StabilityCertificate, check_stability_multiplier

__all__ = [
    "StorageCertificate",
    "dissipation_lmi",
    "iqc_analysis",
    "reachability_certificate",
    "dissipation_residual",
    "l2_gain_bisect",
    "certify_stability",
]

VAL_TOL = 1e-5


@dataclass(frozen=True)
class StorageCertificate:
    """Quadratic storage x'Px plus the supply rate it dissipates against."""

    p: np.ndarray
    multiplier: Multiplier
    feas_residual: float


def _lmi_blocks(sys, p, mult):
    """Blocks of the dissipation LMI; works for numeric or cvxpy storage."""
    a, b, c, d = sys.a, sys.b1, sys.c1, sys.d11
    x11, x12, x22 = mult.x11, mult.x12, mult.x22
    bl11 = a.T @ p + p @ a - c.T @ x22 @ c
    bl12 = p @ b - c.T @ x12.T - c.T @ x22 @ d
    bl22 = -(x11 + x12 @ d + d.T @ x12.T + d.T @ x22 @ d)
    return bl11, bl12, bl22


def dissipation_lmi(sys, p, mult):
    """Numeric dissipation LMI matrix at a concrete storage P."""
    p = symmetrize(p)
    bl11, bl12, bl22 = _lmi_blocks(sys, p, mult)
    return np.block([[bl11, bl12], [bl12.T, bl22]])


def iqc_analysis(sys, mult, output_beta=None):
    """Search a storage certifying the system against a static supply rate.

    Parameters
    ----------
    sys : StateSpace
        Must have empty control channels (close the loop first).
    mult : Multiplier
        Partition (n_v, n_y) of the disturbance/performance ports.
    output_beta : float, optional
        When given, additionally requires C'C <= beta^2 P, a crude bound
        tying the output norm to the storage level.  Heuristic knob; it is
        not part of the certificate semantics.

    Returns
    -------
    StorageCertificate

    Raises
    ------
    Infeasible
        No PSD storage satisfies the dissipation LMI.
    """
    if sys.has_control:
        raise Infeasible("analysis needs a closed system; found open channels")
    if mult.n_in != sys.n_v or mult.n_out != sys.n_y:
        raise Infeasible(
            f"multiplier partition ({mult.n_in},{mult.n_out}) does not match "
            f"system ports ({sys.n_v},{sys.n_y})")
    if sys.n == 0:
        # Static system: the LMI degenerates to a constant sign check.
        resid = float(np.linalg.eigvalsh(
            dissipation_lmi(sys, np.zeros((0, 0)), mult))[-1]) \
            if sys.n_v else 0.0
        if resid > conic.FEAS_TOL:
            raise Infeasible("static supply-rate inequality fails")
        return StorageCertificate(np.zeros((0, 0)), mult, resid)

    prog = conic.LmiProgram("iqc_analysis")
    p = prog.symmetric("P", sys.n)
    bl11, bl12, bl22 = _lmi_blocks(sys, p, mult)
    prog.require_nsd(cp.bmat([[bl11, bl12], [bl12.T, bl22]]), "dissipation")
    prog.require_psd(p, "storage")
    if output_beta is not None:
        prog.require_nsd(sys.c1.T @ sys.c1 - float(output_beta) ** 2 * p,
                         "output_norm")
    report = conic.solve(prog)
    if not report.is_feasible:
        raise Infeasible("no storage satisfies the dissipation LMI")
    return StorageCertificate(symmetrize(report.assignments["P"]), mult,
                              report.residual)


def reachability_certificate(sys, beta):
    """Storage bounding reachable energy: V(x(T)) <= 2 beta on ||w|| <= beta.

    Solves  [[A'P + PA, PB], [B'P, -I]] <= 0  with P strictly positive.
    The certified invariant level is 2 * beta for trajectories from rest.
    Returns a StorageCertificate whose supply rate is w'w (so residual
    replay uses the same machinery as the dissipation checks).
    """
    if beta <= 0.0:
        raise ValueError("beta must be positive")
    prog = conic.LmiProgram("reachability")
    p = prog.symmetric("P", sys.n)
    a, b = sys.a, sys.b1
    if sys.n_v:
        lmi = cp.bmat([[a.T @ p + p @ a, p @ b],
                       [b.T @ p, -np.eye(sys.n_v)]])
    else:
        lmi = a.T @ p + p @ a
    prog.require_nsd(lmi, "reach")
    prog.require_psd(p - 1e-6 * np.eye(sys.n), "positive_storage")
    report = conic.solve(prog)
    if not report.is_feasible:
        raise Infeasible("no positive storage bounds the reachable set")
    supply = Multiplier(np.eye(sys.n_v), np.zeros((sys.n_v, sys.n_y)),
                        np.zeros((sys.n_y, sys.n_y)))
    return StorageCertificate(symmetrize(report.assignments["P"]), supply,
                              report.residual)


def dissipation_residual(sys, cert, signal):
    """Worst trajectory violation of  d/dt(x'Px) - s(v, y) <= 0.

    The storage derivative uses the exact ODE right-hand side at the
    simulated samples, not finite differences, so the residual isolates
    certificate quality from integrator noise.
    """
    states, outputs = lti.simulate(sys, signal)
    v = signal.samples
    rhs = states @ sys.a.T + v @ sys.b1.T
    vdot = 2.0 * np.einsum("ti,ij,tj->t", states, cert.p, rhs)
    supplied = cert.multiplier.supply(v, outputs)
    return float(np.max(vdot - np.atleast_1d(supplied)))


def l2_gain_bisect(sys, quad=None, lo=0.0, hi=None, tol=1e-3):
    """Smallest certified gain level by bisection over the dissipation LMI.

    ``quad`` defaults to the L2-gain family.  The parametric program is
    compiled once and re-solved at each level, so the loop stays cheap.
    ``hi`` defaults to 10x the frequency-sweep peak (InfeasibleAtHi if that
    level cannot be certified, which for this family cannot happen on a
    Hurwitz system).
    """
    from .multipliers import l2gain_quad

    if quad is None:
        quad = l2gain_quad(sys.n_v, sys.n_y)
    if hi is None:
        hi = 10.0 * max(lti.freq_gain_oracle(sys), 1e-6)
    hi = float(hi)
    lo = float(lo)

    prog = conic.LmiProgram("gain_bisect")
    p = prog.symmetric("P", sys.n) if sys.n else None
    gamma_par = prog.parameter("gamma", ())
    g2_par = prog.parameter("gamma_sq", ())
    # X(gamma) = g^2 X1 + 2 g X2 + X3 is parameter-affine, so the program
    # compiles once and re-solves cheaply at every bisection level.
    x1, x2, x3 = quad.coefficients()

    def solve_at(gamma):
        if sys.n == 0:
            top = np.linalg.eigvalsh(
                dissipation_lmi(sys, np.zeros((0, 0)), quad.eval(gamma)))[-1]
            return top <= conic.FEAS_TOL
        x11 = g2_par * x1.x11 + 2.0 * gamma_par * x2.x11 + x3.x11
        x12 = g2_par * x1.x12 + 2.0 * gamma_par * x2.x12 + x3.x12
        x22 = g2_par * x1.x22 + 2.0 * gamma_par * x2.x22 + x3.x22
        a, b, c, d = sys.a, sys.b1, sys.c1, sys.d11
        bl11 = a.T @ p + p @ a - c.T @ x22 @ c
        bl12 = p @ b - c.T @ x12.T - c.T @ x22 @ d
        bl22 = -(x11 + x12 @ d + d.T @ x12.T + d.T @ x22 @ d)
        if not prog._nsd:
            prog.require_nsd(cp.bmat([[bl11, bl12], [bl12.T, bl22]]), "kyp")
            prog.require_psd(p, "storage")
        report = conic.solve(
            prog, params={"gamma": gamma, "gamma_sq": gamma * gamma})
        return report.is_feasible

    if not solve_at(hi):
        raise InfeasibleAtHi(f"level {hi} is not certifiable")
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if solve_at(mid):
            hi = mid
        else:
            lo = mid
    return hi


def certify_stability(sys, mult):
    """Bundle: analysis certificate plus the BIBO bound of the supply rate.

    Returns (StorageCertificate, StabilityCertificate).
    """
    cert = iqc_analysis(sys, mult)
    bound = check_stability_multiplier(mult)
    return cert, bound
