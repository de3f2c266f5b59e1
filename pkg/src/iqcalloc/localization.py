"""Allocating a global supply-rate family across subsystems.

A localization is a per-subsystem family of supply rates that is globally
admissible for a routing and a global family.  Its distance is the
spectral norm of the admissibility matrix: how far the local supplies sit
from using up the global one along the worst direction.  Distance zero
means the allocation splits the global supply exactly.

The closest-localization program is solved in two phases.  Phase one is
the printed push-up program: maximize t with t I below the conjugated
local stack, subject to admissibility and the allocation sign pattern.
That objective leaves a degenerate face — many allocations share the
optimal t — so phase two pins t near its optimum and minimizes the actual
distance over that face.
"""

from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from . import conic
from .conic import FEAS_TOL, OBJ_TOL, LmiProgram
from .errors import Infeasible, NegativeGapSquared, NotALocalization
from .interconnect import (
    LocalProblemSet,
    global_level_stack,
    level_stack,
    gac_quadratic,
    quad_outer_maps,
)
from .linalg import is_nsd, sigma_max, symmetrize
from .multipliers import Multiplier, QuadMultiplier

__all__ = [
    "EXACT_TOL",
    "Localization",
    "closest_localization",
    "dominates",
    "localization_distance",
    "localization_gap",
    "masked_localization",
    "sample_localizations",
]

EXACT_TOL = 1e-6


@dataclass(frozen=True)
class Localization:
    """An admissible allocation plus its quality numbers."""

    multipliers: LocalProblemSet
    distance: float
    exact: bool
    t_star: float


def localization_distance(icn, locals_, wq, feas_tol=FEAS_TOL):
    """Spectral norm of the admissibility matrix of a localization."""
    quads = locals_.multipliers if isinstance(locals_, LocalProblemSet) \
        else tuple(locals_)
    gac = gac_quadratic(icn, quads, wq)
    if not is_nsd(gac, tol=feas_tol):
        raise NotALocalization(
            f"admissibility matrix has lambda_max "
            f"{float(np.linalg.eigvalsh(gac)[-1]):.3e}")
    return sigma_max(gac)


def localization_gap(gamma_local, gamma_global):
    """Performance lost to localizing: sqrt(gamma_L^2 - gamma_G^2)."""
    gap_sq = float(gamma_local) ** 2 - float(gamma_global) ** 2
    if gap_sq < 0.0:
        raise NegativeGapSquared(
            f"local level {gamma_local} beats global level {gamma_global}; "
            "the local set cannot have been admissible")
    return float(np.sqrt(gap_sq))


def dominates(closest, other, icn):
    """Whether ``other``'s conjugated local stack sits below ``closest``'s."""
    diff = level_stack(other.multipliers.multipliers) \
        - level_stack(closest.multipliers.multipliers)
    q1, _ = quad_outer_maps(icn)
    return is_nsd(q1.T @ diff @ q1, tol=FEAS_TOL)


class _GridSpec:
    """Masked per-pair block variables for one joint coefficient level."""

    def __init__(self, in_dims, out_dims, mask):
        self.in_dims = tuple(in_dims)
        self.out_dims = tuple(out_dims)
        self.mask = np.asarray(mask, dtype=float)
        n = len(self.in_dims)
        if self.mask.shape != (n, n) or not np.allclose(
                self.mask, self.mask.T):
            raise ValueError("mask must be a symmetric n_sub x n_sub matrix")

    def declare(self, prog, level):
        """Declare the level's blocks; returns (g11, g12, g22) expressions."""
        def grid(dims_r, dims_c, kind):
            rows = []
            for i, dr in enumerate(dims_r):
                row = []
                for j, dc in enumerate(dims_c):
                    w = self.mask[i, j]
                    if w == 0.0:
                        row.append(np.zeros((dr, dc)))
                    elif kind != "cross" and i > j:
                        row.append(w * prog.var(f"{kind}{level}_{j}_{i}").T)
                    elif kind != "cross" and i == j:
                        row.append(
                            w * prog.symmetric(f"{kind}{level}_{i}_{j}", dr))
                    else:
                        row.append(
                            w * prog.matrix(f"{kind}{level}_{i}_{j}", dr, dc))
                rows.append(row)
            return cp.bmat(rows)

        g11 = grid(self.in_dims, self.in_dims, "a")
        g12 = grid(self.in_dims, self.out_dims, "cross")
        g22 = grid(self.out_dims, self.out_dims, "b")
        return g11, g12, g22


def _build_allocation(prog, icn, wq, mask, gain_cap):
    """Assemble variables, admissibility expression and sign constraints.

    Returns (gac_expr, local_stack_expr, grids) where grids is the list of
    per-level (g11, g12, g22) expressions.
    """
    spec = _GridSpec(icn.in_dims, icn.out_dims, mask)
    grids = [spec.declare(prog, level) for level in (1, 2, 3)]
    levels = [cp.bmat([[g11, g12], [g12.T, g22]]) for g11, g12, g22 in grids]
    y_l = cp.bmat([[levels[0], levels[1]], [levels[1].T, levels[2]]])
    q1, q2 = quad_outer_maps(icn)
    const = q2.T @ global_level_stack(wq) @ q2
    stack = q1.T @ y_l @ q1
    prog.require_nsd(stack - symmetrize(const, tol=np.inf), "admissible")
    prog.require_psd(grids[0][0], "squared_level_input_psd")
    prog.require_psd(grids[2][0], "const_level_input_psd")
    prog.require_nsd(grids[2][2], "const_level_output_nsd")
    if gain_cap is not None:
        prog.require_nsd(grids[0][0] - gain_cap * np.eye(icn.n_v),
                         "squared_level_gain_cap")
    return stack - const, stack, grids


def _grid_values(grids):
    def value(block):
        return np.asarray(block) if isinstance(block, np.ndarray) \
            else np.asarray(block.value)

    return [Multiplier(value(g11), value(g12), value(g22))
            for g11, g12, g22 in grids]


def masked_localization(icn, wq, mask, gain_cap=None):
    """Distance-minimizing joint allocation with pair weights fixed.

    The joint coefficient levels live on the stacked ports; block (i, j)
    enters every expression scaled by mask[i, j], so a zero weight removes
    the pair's coupling and a unit diagonal recovers the per-subsystem
    layout.  Returns (joint family over stacked ports, distance).
    """
    prog = LmiProgram("masked-localization")
    gac, _, grids = _build_allocation(prog, icn, wq, mask, gain_cap)
    size = gac.shape[0]
    spread = prog.scalar("spread", nonneg=True)
    prog.require_nsd(-gac - spread * np.eye(size), "distance_bound")
    prog.minimize(spread)
    report = conic.solve(prog)
    if not report.is_feasible:
        raise Infeasible(
            f"no admissible masked allocation ({report.status})")
    lv = _grid_values(grids)
    joint = QuadMultiplier(*lv)
    distance = float(sigma_max(gac_quadratic(
        _merge_ports(icn), [joint], wq)))
    return joint, distance


def _merge_ports(icn):
    from .interconnect import Interconnection

    return Interconnection(icn.m11, icn.m12, icn.m21, icn.m22,
                           (icn.n_v,), (icn.n_y,))


def closest_localization(icn, wq, structure="blockdiag", gain_cap=None):
    """Best admissible allocation of a global family to the subsystems.

    ``structure`` chooses the allocation pattern: "blockdiag" gives each
    subsystem its own family on its own ports; "fullblock" merges all
    ports into one joint family (used when subsystems will be regrouped).
    """
    if structure == "blockdiag":
        work = icn
    elif structure == "fullblock":
        work = _merge_ports(icn)
    else:
        raise ValueError(f"unknown structure {structure!r}")
    mask = np.eye(work.n_sub)

    # Phase one: the printed push-up program for t.
    prog = LmiProgram("closest-localization")
    gac, stack, _ = _build_allocation(prog, work, wq, mask, gain_cap)
    t = prog.scalar("t")
    size = stack.shape[0]
    prog.require_nsd(t * np.eye(size) - stack, "t_below_stack")
    prog.minimize(-t)
    report = conic.solve(prog)
    if not report.is_feasible:
        raise Infeasible(f"no admissible allocation ({report.status})")
    t_star = float(t.value)

    # Phase two: pin t, minimize the distance over the optimal face.
    pin = t_star - OBJ_TOL * max(1.0, abs(t_star))
    prog2 = LmiProgram("closest-localization-distance")
    gac2, stack2, grids2 = _build_allocation(prog2, work, wq, mask, gain_cap)
    prog2.require_nsd(pin * np.eye(size) - stack2, "t_pin")
    spread = prog2.scalar("spread", nonneg=True)
    prog2.require_nsd(-gac2 - spread * np.eye(gac2.shape[0]),
                      "distance_bound")
    prog2.minimize(spread)
    report2 = conic.solve(prog2)
    if not report2.is_feasible:
        raise Infeasible(
            f"distance phase lost feasibility ({report2.status})")

    lv = _grid_values(grids2)
    quads = _split_levels(work, lv)
    multipliers = LocalProblemSet(quads).validate(work)
    distance = float(sigma_max(gac_quadratic(work, quads, wq)))
    return Localization(multipliers, distance, distance <= EXACT_TOL, t_star)


def _split_levels(icn, lv):
    """Cut joint stacked-port levels into per-subsystem families."""
    quads = []
    for si, so in zip(icn.in_slices(), icn.out_slices()):
        coeffs = [Multiplier(m.x11[si, si], m.x12[si, so], m.x22[so, so])
                  for m in lv]
        quads.append(QuadMultiplier(*coeffs))
    return tuple(quads)


def sample_localizations(icn, wq, closest, rng, count=10):
    """Admissible allocations dominated by ``closest``, by construction.

    Shrinks each subsystem's squared-level input gain and damps its
    constant-level output block by a random positive amount; both moves
    lower the conjugated local stack, so admissibility and dominance are
    inherited from ``closest``.
    """
    out = []
    q1, _ = quad_outer_maps(icn)
    for _ in range(count):
        quads = []
        for quad in closest.multipliers.multipliers:
            x1, x2, x3 = quad.coefficients()
            shrink = 1.0 - rng.uniform(0.1, 0.9)
            g = 0.3 * rng.normal(size=(x3.n_out, x3.n_out))
            quads.append(QuadMultiplier(
                Multiplier(shrink * x1.x11, x1.x12, x1.x22),
                x2,
                Multiplier(x3.x11, x3.x12, x3.x22 - g @ g.T),
            ))
        gac = gac_quadratic(icn, quads, wq)
        stack = q1.T @ level_stack(quads) @ q1
        out.append(Localization(
            LocalProblemSet(tuple(quads)),
            float(sigma_max(gac)),
            bool(sigma_max(gac) <= EXACT_TOL),
            float(np.linalg.eigvalsh(symmetrize(stack, tol=np.inf))[0]),
        ))
    return out
