"""Consensus negotiation of per-subsystem supply rates.

The relaxed network problem asks for one static supply rate per subsystem
such that the set is admissible against the global family at level gamma
and every subsystem actually dissipates its own rate.  The two constraint
families touch different data — admissibility sees only the routing,
dissipation sees only the local realization — so they are split: a
consensus copy Z carries admissibility, local copies X carry dissipation,
and scaled duals V reconcile them through alternating projections
(Gauss-Seidel style: Z-update, X-updates, dual ascent).

The performance level is not a consensus variable.  Every K sweeps the
driver adjusts gamma by bisection: a converged window certifies the
current level and halves downward, an exhausted window abandons the level
as too aggressive.  Both projections are compiled once with parameters
for the sweep targets, so a run is a sequence of small re-solves.
"""

from dataclasses import dataclass
from types import SimpleNamespace

import cvxpy as cp
import numpy as np

from . import conic
from .analysis import _lmi_blocks
from .conic import LmiProgram
from .errors import DimensionMismatch, MaxIterReached, SeedInfeasible
from .multipliers import Multiplier, constant_quad
from .interconnect import LocalProblemSet

__all__ = ["AdmmState", "admm_solve"]


@dataclass(frozen=True)
class AdmmState:
    """One sweep's iterates: consensus, local copies, duals, residuals."""

    z: tuple
    x: tuple
    v: tuple
    gamma: float
    iters: int
    primal_res: float
    dual_res: float
    trace: tuple  # (iter, gamma, primal_res, dual_res) per sweep


def _zero_like(dims):
    return Multiplier(np.zeros((dims[0], dims[0])), np.zeros(dims),
                      np.zeros((dims[1], dims[1])))


def _full_expr(x11, x12, x22):
    return cp.bmat([[x11, x12], [x12.T, x22]])


def _fro_gap(a, b):
    return float(np.linalg.norm(a.full() - b.full(), "fro"))


class _ConsensusStep:
    """Projection of the targets onto the admissible-and-signed Z set."""

    def __init__(self, icn, rho):
        self.icn = icn
        prog = LmiProgram("admm-consensus")
        dims = list(zip(icn.in_dims, icn.out_dims))
        self.blocks = []
        penalty = 0.0
        for i, (di, do) in enumerate(dims):
            z11 = prog.symmetric(f"z11_{i}", di)
            z12 = prog.matrix(f"z12_{i}", di, do)
            z22 = prog.symmetric(f"z22_{i}", do)
            t11 = prog.parameter(f"t11_{i}", (di, di), symmetric=True)
            t12 = prog.parameter(f"t12_{i}", (di, do))
            t22 = prog.parameter(f"t22_{i}", (do, do), symmetric=True)
            prog.require_psd(z11, f"input_psd_{i}")
            prog.require_nsd(z22, f"output_nsd_{i}")
            gap = _full_expr(z11 - t11, z12 - t12, z22 - t22)
            penalty = penalty + cp.sum_squares(gap)
            self.blocks.append((z11, z12, z22))
        n_w, n_z = icn.n_w, icn.n_z
        w11 = prog.parameter("w11", (n_w, n_w), symmetric=True)
        w12 = prog.parameter("w12", (n_w, n_z))
        w22 = prog.parameter("w22", (n_z, n_z), symmetric=True)
        mid = cp.bmat([
            [self._grid(0, 0, dims), self._zeros(icn.n_v, n_z),
             self._grid(0, 1, dims), self._zeros(icn.n_v, n_w)],
            [self._zeros(n_z, icn.n_v), -w22,
             self._zeros(n_z, icn.n_y), -w12.T],
            [self._grid(1, 0, dims), self._zeros(icn.n_y, n_z),
             self._grid(1, 1, dims), self._zeros(icn.n_y, n_w)],
            [self._zeros(n_w, icn.n_v), -w12,
             self._zeros(n_w, icn.n_y), -w11],
        ])
        stack = np.vstack([icn.full(), np.eye(icn.n_y + n_w)])
        prog.require_nsd(stack.T @ mid @ stack, "admissible")
        prog.minimize(rho * penalty)
        self.prog = prog

    def _zeros(self, rows, cols):
        return np.zeros((rows, cols))

    def _grid(self, row, col, dims):
        """Stacked block-diagonal quadrant of the Z supply rates."""
        rows = []
        for i, (di, do) in enumerate(dims):
            dr = di if row == 0 else do
            entries = []
            for j, (dj, doj) in enumerate(dims):
                dc = dj if col == 0 else doj
                if i != j:
                    entries.append(np.zeros((dr, dc)))
                elif row == 0 and col == 0:
                    entries.append(self.blocks[i][0])
                elif row == 0 and col == 1:
                    entries.append(self.blocks[i][1])
                elif row == 1 and col == 0:
                    entries.append(self.blocks[i][1].T)
                else:
                    entries.append(self.blocks[i][2])
            rows.append(entries)
        return cp.bmat(rows)

    def solve(self, targets, w_gamma):
        params = {"w11": w_gamma.x11, "w12": w_gamma.x12, "w22": w_gamma.x22}
        for i, t in enumerate(targets):
            params[f"t11_{i}"] = t.x11
            params[f"t12_{i}"] = t.x12
            params[f"t22_{i}"] = t.x22
        report = conic.solve(self.prog, params=params)
        if not report.is_feasible:
            return None
        return tuple(Multiplier(z11.value, z12.value, z22.value)
                     for z11, z12, z22 in self.blocks)


class _DissipationStep:
    """Projection of one target onto subsystem i's dissipativity cone."""

    def __init__(self, sys, index):
        di, do = sys.n_v, sys.n_y
        prog = LmiProgram(f"admm-local-{index}")
        x11 = prog.symmetric("x11", di)
        x12 = prog.matrix("x12", di, do)
        x22 = prog.symmetric("x22", do)
        p = prog.symmetric("p", sys.n)
        t11 = prog.parameter("t11", (di, di), symmetric=True)
        t12 = prog.parameter("t12", (di, do))
        t22 = prog.parameter("t22", (do, do), symmetric=True)
        prog.require_psd(p, "storage")
        bl11, bl12, bl22 = _lmi_blocks(
            sys, p, SimpleNamespace(x11=x11, x12=x12, x22=x22))
        prog.require_nsd(cp.bmat([[bl11, bl12], [bl12.T, bl22]]),
                         "dissipation")
        gap = _full_expr(x11 - t11, x12 - t12, x22 - t22)
        prog.minimize(cp.sum_squares(gap))
        self.prog = prog
        self.vars = (x11, x12, x22)

    def solve(self, target):
        report = conic.solve(self.prog, params={
            "t11": target.x11, "t12": target.x12, "t22": target.x22})
        if not report.is_feasible:
            return None
        x11, x12, x22 = self.vars
        return Multiplier(x11.value, x12.value, x22.value)


def _check_problem(icn, wq, plants):
    if len(plants) != icn.n_sub:
        raise DimensionMismatch(
            f"{len(plants)} subsystems for {icn.n_sub} routing slots")
    for i, (sys, di, do) in enumerate(zip(plants, icn.in_dims, icn.out_dims)):
        if sys.has_control:
            raise DimensionMismatch(
                f"subsystem {i} still has open control channels")
        if sys.n_v != di or sys.n_y != do:
            raise DimensionMismatch(
                f"subsystem {i} ports ({sys.n_v},{sys.n_y}) do not match "
                f"the routing partition ({di},{do})")
    if wq.n_in != icn.n_w or wq.n_out != icn.n_z:
        raise DimensionMismatch("global family does not match (w, z) ports")


def admm_solve(icn, wq, plants, *, max_iter=500, res_tol=1e-4, rho=1.0,
               gamma_lo=0.0, gamma_hi=10.0, sweeps_per_gamma=10,
               bisect_tol=1e-3):
    """Negotiate per-subsystem supply rates and the performance level.

    Returns (constant per-subsystem families, certified gamma, final
    state).  Raises SeedInfeasible when no admissible consensus exists at
    ``gamma_hi``, and MaxIterReached (carrying the state) when the sweep
    budget runs out before any level converges.
    """
    _check_problem(icn, wq, plants)
    consensus = _ConsensusStep(icn, rho)
    locals_ = [_DissipationStep(sys, i) for i, sys in enumerate(plants)]
    dims = list(zip(icn.in_dims, icn.out_dims))

    x = tuple(_zero_like(d) for d in dims)
    v = tuple(_zero_like(d) for d in dims)
    z = consensus.solve(x, wq.eval(gamma_hi))
    if z is None:
        raise SeedInfeasible(
            f"no admissible consensus at gamma_hi={gamma_hi}")
    for i, (step, zi) in enumerate(zip(locals_, z)):
        if step.solve(zi) is None:
            raise SeedInfeasible(
                f"subsystem {i} cannot dissipate any supply rate")

    lo, hi = float(gamma_lo), float(gamma_hi)
    gamma = hi
    best = None
    trace = []
    it = 0
    state = None
    while it < max_iter:
        converged = False
        for _ in range(sweeps_per_gamma):
            if it >= max_iter:
                break
            it += 1
            w_gamma = wq.eval(gamma)
            z_prev = z
            z_new = consensus.solve(
                tuple(Multiplier(xi.x11 + vi.x11, xi.x12 + vi.x12,
                                 xi.x22 + vi.x22)
                      for xi, vi in zip(x, v)), w_gamma)
            if z_new is None:
                # the level is not admissible at all; poison this window
                trace.append((it, gamma, float("inf"), float("inf")))
                break
            z = z_new
            x = tuple(
                step.solve(Multiplier(zi.x11 - vi.x11, zi.x12 - vi.x12,
                                      zi.x22 - vi.x22)) or xi
                for step, zi, vi, xi in zip(locals_, z, v, x))
            v = tuple(
                Multiplier(vi.x11 + xi.x11 - zi.x11,
                           vi.x12 + xi.x12 - zi.x12,
                           vi.x22 + xi.x22 - zi.x22)
                for vi, xi, zi in zip(v, x, z))
            primal = sum(_fro_gap(xi, zi) for xi, zi in zip(x, z))
            dual = sum(_fro_gap(zi, zp) for zi, zp in zip(z, z_prev))
            z_scale = np.sqrt(sum(
                np.linalg.norm(zi.full(), "fro") ** 2 for zi in z))
            trace.append((it, gamma, primal, dual))
            state = AdmmState(z, x, v, gamma, it, primal, dual,
                              tuple(trace))
            if primal <= res_tol * (1.0 + z_scale) and dual <= res_tol:
                converged = True
                break
        if converged:
            best = state
            hi = gamma
            if hi - lo <= bisect_tol * max(1.0, hi):
                break
            gamma = 0.5 * (lo + hi)
            # the duals encode the old level's geometry; drop them so the
            # fresh window is not spent unwinding a stale disagreement
            v = tuple(_zero_like(d) for d in dims)
        elif best is not None:
            # window exhausted below an already-certified level
            lo = gamma
            if hi - lo <= bisect_tol * max(1.0, hi):
                break
            gamma = 0.5 * (lo + hi)
            v = tuple(_zero_like(d) for d in dims)
        # with no certified level yet, keep sweeping at gamma_hi

    if best is None:
        raise MaxIterReached(
            f"no level converged within {max_iter} sweeps "
            f"(primal {state.primal_res:.3e}, dual {state.dual_res:.3e})",
            state=state)
    final = AdmmState(best.z, best.x, best.v, best.gamma, it,
                      best.primal_res, best.dual_res, tuple(trace))
    local_set = LocalProblemSet(tuple(constant_quad(zi) for zi in best.z))
    return local_set, best.gamma, final
