"""Partitioning subsystems into capacity-bounded groups.

A grouping matrix holds pair weights: entry (i, j) says how strongly
subsystems i and j share one joint supply rate.  Binary weights encode an
equivalence relation whose classes are the groups; its nonzero singular
values are exactly the group sizes, so a spectral-norm cap bounds the
largest group even through the continuous relaxation.

Group localization alternates two convex steps: at fixed pair weights the
allocation is re-solved (the masked closest-allocation program), and at a
fixed allocation the weights are re-solved under a sparsity penalty, a
positive-semidefinite requirement, and the spectral capacity cap.  The
relaxed weights are then rounded to a partition and the allocation is
re-solved once more on the final binary mask.
"""

from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from . import conic
from .conic import FEAS_TOL, LmiProgram
from .errors import DimensionMismatch, Infeasible, MaxIterReached, \
    NotEquivalence
from .interconnect import global_level_stack, quad_outer_maps
from .linalg import symmetrize
from .localization import _merge_ports, masked_localization
from .multipliers import Multiplier, QuadMultiplier

__all__ = [
    "GroupLocalization",
    "GroupMatrix",
    "group_localize",
    "hadamard_blocks",
    "membership_from_P",
]

ENTRY_TOL = 1e-6


@dataclass(frozen=True)
class GroupMatrix:
    """Symmetric pair weights in [0, 1] with a unit diagonal."""

    p: np.ndarray
    ng: int
    nbar: int

    def __post_init__(self):
        p = symmetrize(np.asarray(self.p, dtype=float))
        object.__setattr__(self, "p", p)
        if np.any(np.abs(np.diag(p) - 1.0) > ENTRY_TOL):
            raise ValueError("every subsystem fully belongs to its own group")
        if np.any(p < -ENTRY_TOL) or np.any(p > 1.0 + ENTRY_TOL):
            raise ValueError("pair weights must lie in [0, 1]")
        if np.linalg.eigvalsh(p).min() < -ENTRY_TOL:
            raise ValueError("pair weights must be positive semidefinite")
        if self.ng < 1 or self.nbar < 1:
            raise ValueError("group count and capacity must be positive")

    @property
    def n(self):
        return self.p.shape[0]

    @property
    def rounded(self):
        return bool(np.all(np.minimum(np.abs(self.p),
                                      np.abs(self.p - 1.0)) <= ENTRY_TOL))


@dataclass(frozen=True)
class GroupLocalization:
    """A partition, its joint masked family, and the alternation record."""

    groups: tuple
    group_matrix: GroupMatrix
    multipliers: QuadMultiplier
    distance: float
    iterations: int
    d_history: tuple


def membership_from_P(p, rounded=True):
    """Groups encoded by a binary grouping matrix.

    With ``rounded=False`` the entries are thresholded at 0.5 first.
    Raises NotEquivalence when the pattern is not transitive (two
    subsystems share a partner but not each other).
    """
    mat = p.p if isinstance(p, GroupMatrix) else \
        symmetrize(np.asarray(p, dtype=float))
    if not rounded:
        mat = np.where(mat >= 0.5, 1.0, 0.0)
    if np.any(np.minimum(np.abs(mat), np.abs(mat - 1.0)) > ENTRY_TOL):
        raise ValueError("membership needs binary pair weights")
    n = mat.shape[0]
    adj = mat > 0.5
    seen = np.zeros(n, dtype=bool)
    groups = []
    for start in range(n):
        if seen[start]:
            continue
        frontier = [start]
        member = []
        while frontier:
            i = frontier.pop()
            if seen[i]:
                continue
            seen[i] = True
            member.append(i)
            frontier.extend(j for j in range(n) if adj[i, j] and not seen[j])
        member.sort()
        for a in member:
            for b in member:
                if not adj[a, b]:
                    raise NotEquivalence(
                        f"subsystems {a} and {b} share group members but "
                        f"are not paired themselves")
        groups.append(tuple(member))
    return groups


def _port_weights(mat, in_dims, out_dims):
    """Expand subsystem pair weights onto the stacked port coordinates."""
    idx_in = np.repeat(np.arange(len(in_dims)), in_dims)
    idx_out = np.repeat(np.arange(len(out_dims)), out_dims)
    return (mat[np.ix_(idx_in, idx_in)], mat[np.ix_(idx_in, idx_out)],
            mat[np.ix_(idx_out, idx_out)])


def hadamard_blocks(p, mult, in_dims, out_dims):
    """Blockwise mask of a joint stacked-port family by pair weights."""
    mat = p.p if isinstance(p, GroupMatrix) else \
        symmetrize(np.asarray(p, dtype=float))
    if mat.shape != (len(in_dims), len(out_dims)):
        raise DimensionMismatch(
            f"weights are {mat.shape} for {len(in_dims)} subsystems")
    if mult.n_in != sum(in_dims) or mult.n_out != sum(out_dims):
        raise DimensionMismatch(
            f"family ports ({mult.n_in}, {mult.n_out}) do not match the "
            f"partition ({sum(in_dims)}, {sum(out_dims)})")
    e_in, e_io, e_out = _port_weights(mat, in_dims, out_dims)

    def mask_one(m):
        return Multiplier(e_in * m.x11, e_io * m.x12, e_out * m.x22)

    if isinstance(mult, QuadMultiplier):
        return QuadMultiplier(mask_one(mult.x1), mask_one(mult.x2),
                              mask_one(mult.x3))
    return mask_one(mult)


def _masked_distance(icn, mat, joint, wq):
    """Distance of a weighted family, evaluated on the merged ports."""
    from .interconnect import gac_quadratic

    masked = hadamard_blocks(mat, joint, icn.in_dims, icn.out_dims)
    gac = gac_quadratic(_merge_ports(icn), [masked], wq)
    return float(np.abs(np.linalg.eigvalsh(gac)).max())


def _uniform_capacity_mask(n, nbar):
    """Strongest uniform coupling whose spectral norm meets the capacity."""
    c = (nbar - 1.0) / (n - 1.0)
    return c * np.ones((n, n)) + (1.0 - c) * np.eye(n)


def _unmask(joint, mat, in_dims, out_dims, floor=1e-6):
    """Recover the free family from a weighted product, blockwise.

    Pairs whose weight sits below ``floor`` carry no information and stay
    zero; everything else is divided by its weight.
    """
    inv = np.where(mat > floor, 1.0 / np.maximum(mat, floor), 0.0)
    np.fill_diagonal(inv, 1.0)
    return hadamard_blocks(symmetrize(inv), joint, in_dims, out_dims)


def _pair_weight_step(icn, wq, joint, nbar, eta):
    """Re-solve the pair weights at a fixed joint allocation.

    Linear objective: admissibility distance plus an l1 push toward
    sparse couplings.  The sign pattern of the masked levels needs no
    extra constraints — a Schur product with a PSD weight matrix
    preserves both semidefinite directions.
    """
    n = icn.n_sub
    prog = LmiProgram("group-pair-weights")
    entries = {}
    p_expr = np.eye(n) * 1.0
    for i in range(n):
        for j in range(i + 1, n):
            w = prog.scalar(f"w_{i}_{j}", nonneg=True)
            prog.require_nsd(w - 1.0, f"box_{i}_{j}")
            basis = np.zeros((n, n))
            basis[i, j] = basis[j, i] = 1.0
            p_expr = p_expr + w * basis
            entries[(i, j)] = w
    prog.require_psd(p_expr, "weights_psd")
    prog.require_nsd(p_expr - float(nbar) * np.eye(n), "capacity")

    def entry(i, j):
        if i == j:
            return 1.0
        return entries[(min(i, j), max(i, j))]

    def blockmask(level_mat, dims_r, dims_c, transpose_pairs):
        slr = _dim_slices(dims_r)
        slc = _dim_slices(dims_c)
        rows = []
        for i, si in enumerate(slr):
            row = []
            for j, sj in enumerate(slc):
                block = level_mat[si, sj]
                if transpose_pairs and i > j:
                    row.append(entry(j, i) * block)
                else:
                    row.append(entry(i, j) * block)
            rows.append(row)
        return cp.bmat(rows)

    levels = []
    for lvl in (joint.x1, joint.x2, joint.x3):
        m11 = blockmask(lvl.x11, icn.in_dims, icn.in_dims, True)
        m12 = blockmask(lvl.x12, icn.in_dims, icn.out_dims, False)
        m22 = blockmask(lvl.x22, icn.out_dims, icn.out_dims, True)
        levels.append(cp.bmat([[m11, m12], [m12.T, m22]]))
    y_l = cp.bmat([[levels[0], levels[1]], [levels[1].T, levels[2]]])
    q1, q2 = quad_outer_maps(icn)
    const = symmetrize(q2.T @ global_level_stack(wq) @ q2, tol=np.inf)
    gac = q1.T @ y_l @ q1 - const
    # the fixed allocation is boundary-tight from its own solve, so the
    # weight selection gets a sliver of slack; the following allocation
    # step restores exact admissibility
    slack = 1e-6 * (1.0 + float(np.linalg.norm(const, 2)))
    prog.require_nsd(gac - slack * np.eye(gac.shape[0]), "admissible")
    spread = prog.scalar("spread", nonneg=True)
    prog.require_nsd(-gac - spread * np.eye(gac.shape[0]), "distance_bound")
    prog.minimize(spread + eta * sum(entries.values()))
    report = conic.solve(prog)
    if not report.is_feasible:
        raise Infeasible(f"pair-weight step failed ({report.status})")
    mat = np.eye(n)
    for (i, j), w in entries.items():
        val = min(max(float(w.value), 0.0), 1.0)
        # a vanishing weight must become an exact zero: the allocation
        # step keys structure off the support, and a stray 1e-9 entry
        # would silently keep the pair coupled at full strength
        if val < ENTRY_TOL:
            val = 0.0
        elif val > 1.0 - ENTRY_TOL:
            val = 1.0
        mat[i, j] = mat[j, i] = val
    return mat


def _dim_slices(dims):
    stops = np.cumsum((0,) + tuple(dims))
    return [slice(a, b) for a, b in zip(stops[:-1], stops[1:])]


def _round_to_partition(p_rel, nbar, ng):
    """Threshold, repair to an equivalence, then respect the capacity.

    The weight step can never push a pair above the level the previous
    mask certified, so the informative scale is the largest surviving
    off-diagonal weight; the half-way threshold is applied relative to
    it.  When nothing survives, every subsystem starts out alone.
    """
    n = p_rel.shape[0]
    off = p_rel - np.diag(np.diag(p_rel))
    anchor = float(off.max())
    if anchor <= ENTRY_TOL:
        adj = np.eye(n, dtype=bool)
    else:
        adj = off >= 0.5 * anchor
    np.fill_diagonal(adj, True)
    adj = adj | adj.T
    reach = adj.copy()
    for k in range(n):
        reach = reach | np.outer(reach[:, k], reach[k, :])
    groups = membership_from_P(reach.astype(float))

    final = []
    for g in sorted(groups, key=len, reverse=True):
        if len(g) <= nbar:
            final.append(list(g))
            continue
        # peel members in order of within-group coupling strength
        strength = {i: float(p_rel[i, list(g)].sum()) for i in g}
        ordered = sorted(g, key=lambda i: -strength[i])
        final.extend([sorted(ordered[k:k + nbar])
                      for k in range(0, len(ordered), nbar)])
    final.sort(key=len)
    while len(final) > ng:
        a, b = final[0], final[1]
        if len(a) + len(b) > nbar:
            break  # cannot merge further; report the achieved count
        final = sorted(final[2:] + [sorted(a + b)], key=len)
    return tuple(sorted(tuple(g) for g in final))


def _binary_matrix(groups, n):
    mat = np.zeros((n, n))
    for g in groups:
        for a in g:
            for b in g:
                mat[a, b] = 1.0
    return mat


def group_localize(icn, wq, ng, nbar, omega="l1", *, tol=1e-5,
                   max_outer=100):
    """Alternating search for a capacity-bounded grouped allocation.

    ``ng`` is the requested group count and ``nbar`` the largest allowed
    group.  Returns the rounded partition together with the joint family
    re-solved on the final binary mask.
    """
    if omega != "l1":
        raise ValueError(f"unknown sparsity norm {omega!r}")
    n = icn.n_sub
    if not nbar < n:
        raise ValueError("capacity must sit strictly below the subsystem "
                         "count; otherwise nothing is being grouped")
    if ng * nbar < n:
        raise ValueError(f"{ng} groups of at most {nbar} cannot cover "
                         f"{n} subsystems")

    p_rel = _uniform_capacity_mask(n, nbar)
    try:
        joint, d_now = masked_localization(icn, wq, p_rel)
    except Infeasible as exc:
        raise Infeasible(
            f"no admissible allocation even with all pairs coupled up to "
            f"capacity: {exc}")
    # an exact initial allocation leaves the spread term silent, so give
    # the sparsity push a small floor to keep the weight step decisive
    eta = 0.1 * d_now if d_now > 10.0 * FEAS_TOL else 1e-2
    history = [("init", d_now)]

    iterations = 0
    converged = False
    for iterations in range(1, max_outer + 1):
        # the solved joint carries the weights; strip them so the next
        # weight step masks the free family, not the product
        free = _unmask(joint, p_rel, icn.in_dims, icn.out_dims)
        p_rel = _pair_weight_step(icn, wq, free, nbar, eta)
        history.append(("weights", _masked_distance(icn, p_rel, free, wq)))
        joint, d_next = masked_localization(icn, wq, p_rel)
        history.append(("allocation", d_next))
        moved = abs(d_next - d_now)
        d_now = d_next
        if moved < tol:
            converged = True
            break
    if not converged:
        raise MaxIterReached(
            f"alternation still moving after {max_outer} rounds",
            state=tuple(history))

    groups = _round_to_partition(p_rel, nbar, ng)
    binary = _binary_matrix(groups, n)
    joint, distance = masked_localization(icn, wq, binary)
    history.append(("rounded", distance))
    gm = GroupMatrix(binary, ng=len(groups), nbar=nbar)
    _check_partition(groups, n, nbar)
    return GroupLocalization(groups=groups, group_matrix=gm,
                             multipliers=joint, distance=distance,
                             iterations=iterations,
                             d_history=tuple(history))


def _check_partition(groups, n, nbar):
    flat = [i for g in groups for i in g]
    if sorted(flat) != list(range(n)):
        raise NotEquivalence("groups must partition the subsystems")
    if any(len(g) > nbar for g in groups):
        raise NotEquivalence("a group exceeds the capacity bound")
