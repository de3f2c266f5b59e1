"""Output-feedback synthesis against a static supply rate.

Controller existence is decided without the controller variables: a pair of
storage blocks (Q1, Q2) must satisfy

  * the coupling condition [Q1 I; I Q2] >= 0,
  * the open-loop dissipation LMI with storage Q1, restricted to the
    annihilator of the measurement data [C2 D21],
  * the adjoint-data dissipation LMI with storage Q2 and the *dual* supply
    rate, restricted to the annihilator of the actuation data [B2' D12'].

The dual supply rate of X is  Y = [[-W22, W12'], [W12, -W11]]  built from
the blocks of W = inv(X); with that convention the no-control case reduces
exactly to open-loop analysis on both sides (Q2 tracks inv(Q1)), which is
what pins the sign/block arrangement.

From a feasible pair, a closed-loop storage is completed by solving a
linear system, and the controller follows from one more LMI that is affine
in its realization once the storage is fixed.
"""

from dataclasses import dataclass

import cvxpy as cp
import numpy as np
import scipy.linalg

from . import conic, lti
from .analysis import StorageCertificate, _lmi_blocks, iqc_analysis
from .errors import (
    Infeasible,
    InfeasibleAtHi,
    NonMonotone,
    SingularCoupling,
    SingularMultiplier,
    Unstable,
)
from .linalg import RANK_TOL, is_psd, sigma_max, symmetrize
from .lti import Controller, StateSpace, close_loop
from .multipliers import Multiplier, l2gain_quad

__all__ = [
    "SynthesisResult",
    "dual_multiplier",
    "synthesis_feasible",
    "reconstruct_storage",
    "recover_controller",
    "bisect_gamma",
    "synthesize",
]


def _regularize(mult):
    """Nudge X22 if the full supply-rate matrix is numerically singular.

    The dual condition needs inv(X); making X22 slightly more negative is a
    conservative perturbation (it strengthens the requirement on the
    system), so a certificate at the perturbed rate is still a certificate.
    """
    full = mult.full()
    smax = sigma_max(full)
    if smax == 0.0:
        raise SingularMultiplier("zero supply rate cannot be inverted")
    svals = np.linalg.svd(full, compute_uv=False)
    if svals[-1] >= 1e-8 * smax:
        return mult
    delta = 1e-6 * smax
    nudged = Multiplier(mult.x11, mult.x12,
                        mult.x22 - delta * np.eye(mult.n_out))
    svals = np.linalg.svd(nudged.full(), compute_uv=False)
    if svals[-1] < 1e-8 * svals[0]:
        raise SingularMultiplier("supply rate is singular even after nudging")
    return nudged


def dual_multiplier(mult):
    """Supply rate governing the adjoint system in the synthesis dual.

    With W = inv(X) partitioned conformally, returns
    [[-W22, W12'], [W12, -W11]] on the swapped (n_out, n_in) port pair.
    """
    mult = _regularize(mult)
    w = np.linalg.inv(mult.full())
    n_in = mult.n_in
    w11 = w[:n_in, :n_in]
    w12 = w[:n_in, n_in:]
    w22 = w[n_in:, n_in:]
    return Multiplier(-symmetrize(w22, tol=1e-6), w12.T,
                      -symmetrize(w11, tol=1e-6)), mult


def _null_basis(mat, cols):
    """Columns spanning null(mat); identity when there is nothing to kill."""
    if mat.shape[0] == 0 or not np.any(mat):
        return np.eye(cols)
    return scipy.linalg.null_space(mat, rcond=RANK_TOL)


def _adjoint_data(plant):
    return StateSpace.plant(plant.a.T, plant.c1.T, plant.b1.T, plant.d11.T)


def synthesis_feasible(plant, mult, coupling_margin=0.0):
    """Decide controller existence; return the storage blocks (Q1, Q2).

    Q1 plays the open-loop storage role on the plant data (measurement
    directions annihilated), Q2 the inverse-storage role on the adjoint
    data (actuation directions annihilated).  Raises ``Infeasible`` when no
    such pair exists.
    """
    dual, mult = dual_multiplier(mult)
    n = plant.n
    u_ann = _null_basis(np.hstack([plant.c2, plant.d21]), n + plant.n_v)
    v_ann = _null_basis(np.hstack([plant.b2.T, plant.d12.T]), n + plant.n_y)

    prog = conic.LmiProgram("synthesis_feasible")
    q1 = prog.symmetric("Q1", n)
    q2 = prog.symmetric("Q2", n)
    prog.require_psd(
        cp.bmat([[q1, np.eye(n)], [np.eye(n), q2]])
        - coupling_margin * np.eye(2 * n), "coupling")

    if u_ann.shape[1]:
        bl11, bl12, bl22 = _lmi_blocks(plant, q1, mult)
        primal = cp.bmat([[bl11, bl12], [bl12.T, bl22]])
        prog.require_nsd(u_ann.T @ primal @ u_ann, "primal")
    if v_ann.shape[1]:
        bl11, bl12, bl22 = _lmi_blocks(_adjoint_data(plant), q2, dual)
        dual_lmi = cp.bmat([[bl11, bl12], [bl12.T, bl22]])
        prog.require_nsd(v_ann.T @ dual_lmi @ v_ann, "dual")

    report = conic.solve(prog)
    if not report.is_feasible:
        raise Infeasible("no storage pair satisfies the synthesis conditions")
    return (symmetrize(report.assignments["Q1"], tol=1e-6),
            symmetrize(report.assignments["Q2"], tol=1e-6))


def reconstruct_storage(q1, q2):
    """Complete a feasible block pair into a full storage matrix.

    Factors I - Q2 @ Q1 = R1 @ R2' (LU-style, R2 absorbing the sign) and
    solves  [[Q1, R2], [I, 0]] P = [[I, 0], [Q2, R1]].  The x-block of the
    result equals Q2 and the x-block of its inverse equals Q1.  Raises
    ``SingularCoupling`` when I - Q2 @ Q1 is numerically singular.
    """
    q1 = symmetrize(q1, tol=1e-6)
    q2 = symmetrize(q2, tol=1e-6)
    n = q1.shape[0]
    gap = np.eye(n) - q2 @ q1
    svals = np.linalg.svd(gap, compute_uv=False)
    if svals[-1] <= 1e-9 * max(1.0, svals[0]):
        raise SingularCoupling("I - Q2 Q1 is singular; storage completion fails")
    perm, low, up = scipy.linalg.lu(gap)
    r1 = perm @ low
    r2 = up.T
    lhs = np.block([[q1, r2], [np.eye(n), np.zeros((n, n))]])
    rhs = np.block([[np.eye(n), np.zeros((n, n))], [q2, r1]])
    p = np.linalg.solve(lhs, rhs)
    return symmetrize(p, tol=1e-6)


def _sqrt_psd(mat):
    vals, vecs = np.linalg.eigh(symmetrize(mat, tol=1e-7))
    vals = np.clip(vals, 0.0, None)
    return np.diag(np.sqrt(vals)) @ vecs.T


def recover_controller(plant, mult, storage):
    """Find a full-order controller once the closed-loop storage is fixed.

    The closed-loop dissipation LMI is quadratic in the realization only
    through the -X22 >= 0 term, so a Schur complement restores affinity:

        [[Phi_aff(K), Ccl(K)' L'], [L Ccl(K), -I]] <= 0,  L'L = -X22.

    Minimizing ||K||_F^2 keeps the returned realization moderate.
    """
    n, n_v, n_u, n_m = plant.n, plant.n_v, plant.n_u, plant.n_m
    nc = n
    p = symmetrize(storage, tol=1e-6)
    if p.shape[0] != n + nc:
        raise Infeasible("storage size does not match a full-order controller")
    if not is_psd(p, tol=1e-7):
        # the recovery LMI alone would accept an indefinite P, but the
        # dissipation argument needs V(x) = x'Px >= 0 to mean anything
        raise Infeasible("storage is not positive semidefinite")

    a, b1, b2 = plant.a, plant.b1, plant.b2
    c1, d11, d12 = plant.c1, plant.d11, plant.d12
    c2, d21 = plant.c2, plant.d21
    sqrt_damp = _sqrt_psd(-mult.x22)
    x11, x12 = mult.x11, mult.x12

    def assemble(prog):
        ak = prog.matrix("Ak", nc, nc)
        bk = prog.matrix("Bk", nc, n_m) if n_m else np.zeros((nc, 0))
        ck = prog.matrix("Ck", n_u, nc) if n_u else np.zeros((0, nc))
        if n_u and n_m:
            dk = prog.matrix("Dk", n_u, n_m)
        else:
            dk = np.zeros((n_u, n_m))

        acl = cp.bmat([[a + b2 @ dk @ c2, b2 @ ck], [bk @ c2, ak]])
        bcl = cp.vstack([b1 + b2 @ dk @ d21, bk @ d21])
        ccl = cp.hstack([c1 + d12 @ dk @ c2, d12 @ ck])
        dcl = d11 + d12 @ dk @ d21

        phi11 = acl.T @ p + p @ acl
        phi12 = p @ bcl - ccl.T @ x12.T
        phi22 = -(x11 + x12 @ dcl + dcl.T @ x12.T)
        rows = [cp.hstack([phi11, phi12, ccl.T @ sqrt_damp.T]),
                cp.hstack([phi12.T, phi22, dcl.T @ sqrt_damp.T]),
                cp.hstack([sqrt_damp @ ccl, sqrt_damp @ dcl,
                           -np.eye(sqrt_damp.shape[0])])]
        return cp.vstack(rows), (ak, bk, ck, dk)

    prog = conic.LmiProgram("recover_controller")
    lmi, blocks = assemble(prog)
    prog.require_nsd(lmi, "closed_loop")
    size = 0
    for blk in blocks:
        if isinstance(blk, cp.Expression):
            size = size + cp.sum_squares(blk)
    prog.minimize(size)
    report = conic.solve(prog)

    if not report.is_feasible:
        # An ill-conditioned completed storage can pin the LMI to a sliver
        # thinner than the solver's feasibility tolerance at this scale.
        # Re-pose with an explicit slack to decide whether the sliver
        # exists at all, and only then give up on the storage.
        slack_prog = conic.LmiProgram("recover_controller_slack")
        lmi, blocks = assemble(slack_prog)
        margin = slack_prog.scalar("margin")
        slack_prog.require_nsd(
            lmi - margin * np.eye(lmi.shape[0]), "closed_loop")
        slack_prog.minimize(margin)
        report = conic.solve(slack_prog)
        accept = 1e-9 * max(1.0, sigma_max(p))
        if not report.is_feasible or report.assignments["margin"] > accept:
            raise Infeasible("no controller is consistent with this storage")

    to_np = lambda blk: (np.asarray(blk.value, dtype=float)
                         if isinstance(blk, cp.Expression) else blk)
    ak, bk, ck, dk = blocks
    return Controller(a=to_np(ak), b=to_np(bk), c=to_np(ck), d=to_np(dk))


def bisect_gamma(plant, quad=None, lo=0.0, hi=None, tol=1e-3, grid_points=5):
    """Smallest synthesizable performance level by bisection.

    Feasibility is first sampled on a coarse grid; a non-monotone pattern
    (feasible below an infeasible level) aborts with ``NonMonotone`` since
    bisection verdicts would then be meaningless for the family at hand.
    """
    if quad is None:
        quad = l2gain_quad(plant.n_v, plant.n_y)
    if hi is None:
        try:
            open_gain = lti.freq_gain_oracle(
                StateSpace.plant(plant.a, plant.b1, plant.c1, plant.d11))
            hi = 10.0 * max(open_gain, 1e-6)
        except Unstable:
            hi = 1e4
    hi, lo = float(hi), float(lo)

    def feas(gamma):
        try:
            synthesis_feasible(plant, quad.eval(gamma))
            return True
        except Infeasible:
            return False

    if not feas(hi):
        raise InfeasibleAtHi(f"synthesis infeasible at the top level {hi}")
    if grid_points >= 2:
        levels = np.linspace(lo + (hi - lo) / grid_points, hi, grid_points)
        pattern = [feas(g) for g in levels[:-1]] + [True]
        if any(a and not b for a, b in zip(pattern, pattern[1:])):
            raise NonMonotone("feasibility is not monotone on the grid")
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if feas(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class SynthesisResult:
    gamma: float
    gamma_run: float
    controller: Controller
    closed_loop: StateSpace
    cert: StorageCertificate


def synthesize(plant, quad=None, lo=0.0, hi=None, tol=1e-3, slack=0.05):
    """Bisect the level, recover a controller, and re-certify the loop.

    The controller is recovered at ``gamma* (1 + slack)`` so the storage
    completion has margin.  Note the role flip in the completion: the
    closed-loop storage must carry the *plant-side* block Q1 in its x-block,
    and the printed completion places its first argument in the inverse, so
    it is called with (Q2, Q1).
    """
    if quad is None:
        quad = l2gain_quad(plant.n_v, plant.n_y)
    gamma = bisect_gamma(plant, quad, lo=lo, hi=hi, tol=tol)
    gamma_run = gamma * (1.0 + slack)
    mult = quad.eval(gamma_run)
    q1, q2 = synthesis_feasible(plant, mult, coupling_margin=1e-6)
    storage = reconstruct_storage(q2, q1)
    ctrl = recover_controller(plant, mult, storage)
    closed = close_loop(plant, ctrl)
    cert = iqc_analysis(closed, mult)
    return SynthesisResult(gamma=gamma, gamma_run=gamma_run, controller=ctrl,
                           closed_loop=closed, cert=cert)
