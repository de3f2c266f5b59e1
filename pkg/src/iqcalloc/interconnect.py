"""Static routing between subsystems and the admissibility algebra.

The routing matrix maps stacked subsystem outputs y and the global
disturbance w to stacked subsystem inputs v and the global performance
output z:

    [v; z] = [[M11, M12], [M21, M22]] [y; w]

Admissibility of a set of per-subsystem supply rates against a global one
means the local supplies never sum to more than the global supply along
any routed signal tuple.  That is a single matrix-sign condition; this
module assembles it in three forms: the direct quadratic form over (y, w),
the reduced form for routings without feedthrough shortcuts, and the
level-doubled form that removes the family parameter for quadratic
families.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotWellPosed
from .linalg import blkdiag, symmetrize
from .multipliers import Multiplier, QuadMultiplier
from .lti import StateSpace

__all__ = [
    "Interconnection",
    "LocalProblemSet",
    "gac_matrix",
    "gac_wellposed",
    "gac_quadratic",
    "gac_structured",
    "passivable",
    "assemble_global",
]

WP_TOL = 1e-8
BD_TOL = 1e-9


@dataclass(frozen=True)
class Interconnection:
    """Routing blocks plus the per-subsystem port partition."""

    m11: np.ndarray
    m12: np.ndarray
    m21: np.ndarray
    m22: np.ndarray
    in_dims: tuple
    out_dims: tuple

    def __post_init__(self):
        for name in ("m11", "m12", "m21", "m22"):
            mat = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            object.__setattr__(self, name, mat)
        object.__setattr__(self, "in_dims", tuple(int(d) for d in self.in_dims))
        object.__setattr__(self, "out_dims",
                           tuple(int(d) for d in self.out_dims))
        if len(self.in_dims) != len(self.out_dims) or not self.in_dims:
            raise DimensionMismatch(
                "need matching, nonempty input/output partitions")
        if min(self.in_dims) < 1 or min(self.out_dims) < 1:
            raise DimensionMismatch("every subsystem needs live ports")
        n_v, n_y = sum(self.in_dims), sum(self.out_dims)
        if self.m11.shape != (n_v, n_y):
            raise DimensionMismatch(
                f"m11 is {self.m11.shape}, expected {(n_v, n_y)}")
        if self.m12.shape[0] != n_v:
            raise DimensionMismatch("m12 row count must match m11")
        if self.m21.shape[1] != n_y:
            raise DimensionMismatch("m21 column count must match m11")
        if self.m22.shape != (self.m21.shape[0], self.m12.shape[1]):
            raise DimensionMismatch("m22 must close the block rectangle")

    @classmethod
    def identity_routing(cls, in_dims, out_dims):
        """v = w and z = y: the disturbance feeds the subsystems directly."""
        n_v, n_y = sum(in_dims), sum(out_dims)
        return cls(np.zeros((n_v, n_y)), np.eye(n_v), np.eye(n_y),
                   np.zeros((n_y, n_v)), tuple(in_dims), tuple(out_dims))

    @property
    def n_sub(self):
        return len(self.in_dims)

    @property
    def n_v(self):
        return self.m11.shape[0]

    @property
    def n_y(self):
        return self.m11.shape[1]

    @property
    def n_w(self):
        return self.m12.shape[1]

    @property
    def n_z(self):
        return self.m21.shape[0]

    def full(self):
        return np.block([[self.m11, self.m12], [self.m21, self.m22]])

    def in_slices(self):
        return _slices(self.in_dims)

    def out_slices(self):
        return _slices(self.out_dims)


def _slices(dims):
    edges = np.concatenate(([0], np.cumsum(dims)))
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


@dataclass(frozen=True)
class LocalProblemSet:
    """One supply-rate family per subsystem, aligned with a routing."""

    multipliers: tuple

    def __post_init__(self):
        object.__setattr__(self, "multipliers", tuple(self.multipliers))
        if not self.multipliers:
            raise DimensionMismatch("need at least one subsystem family")
        for quad in self.multipliers:
            if not isinstance(quad, QuadMultiplier):
                raise TypeError("local sets hold parametrized families")

    def validate(self, icn):
        _check_ports(icn, [q.x3 for q in self.multipliers])
        return self

    def eval(self, gamma):
        return [q.eval(gamma) for q in self.multipliers]


def _check_ports(icn, mults):
    if len(mults) != icn.n_sub:
        raise DimensionMismatch(
            f"{len(mults)} multipliers for {icn.n_sub} subsystems")
    for i, (mult, di, do) in enumerate(zip(mults, icn.in_dims, icn.out_dims)):
        if mult.n_in != di or mult.n_out != do:
            raise DimensionMismatch(
                f"subsystem {i}: multiplier is ({mult.n_in},{mult.n_out}), "
                f"ports are ({di},{do})")


def _check_global(icn, w):
    if w.n_in != icn.n_w or w.n_out != icn.n_z:
        raise DimensionMismatch(
            f"global multiplier is ({w.n_in},{w.n_out}), "
            f"ports are ({icn.n_w},{icn.n_z})")


def stack_multipliers(mults):
    """Stacked-port supply rate: block-diagonal in each conformal block."""
    return Multiplier(blkdiag(*(m.x11 for m in mults)),
                      blkdiag(*(m.x12 for m in mults)),
                      blkdiag(*(m.x22 for m in mults)))


def gac_matrix(icn, locals_, w):
    """Direct admissibility form over (y, w) at one parameter value.

    NSD of the result is exactly: sum of local supplies <= global supply
    for every routed signal tuple.
    """
    _check_ports(icn, locals_)
    _check_global(icn, w)
    big = stack_multipliers(locals_)
    n_v, n_z, n_y, n_w = icn.n_v, icn.n_z, icn.n_y, icn.n_w
    mid = np.zeros((n_v + n_z + n_y + n_w,) * 2)
    rows = _slices((n_v, n_z, n_y, n_w))
    v, z, y, ww = rows
    mid[v, v] = big.x11
    mid[v, y] = big.x12
    mid[y, v] = big.x12.T
    mid[y, y] = big.x22
    mid[z, z] = -w.x22
    mid[z, ww] = -w.x12.T
    mid[ww, z] = -w.x12
    mid[ww, ww] = -w.x11
    stack = np.vstack([icn.full(), np.eye(n_y + n_w)])
    return symmetrize(stack.T @ mid @ stack, tol=np.inf)


def _require_wellposed(icn):
    s12 = np.linalg.svd(icn.m12, compute_uv=False)
    if icn.m12.shape[1] > icn.m12.shape[0] or s12.size == 0 \
            or s12[-1] <= WP_TOL * max(s12[0], 1e-300):
        raise NotWellPosed("disturbance-to-input block lacks column rank")
    s21 = np.linalg.svd(icn.m21, compute_uv=False)
    if icn.m21.shape[0] > icn.m21.shape[1] or s21.size == 0 \
            or s21[-1] <= WP_TOL * max(s21[0], 1e-300):
        raise NotWellPosed("output-to-performance block lacks row rank")


def gac_wellposed(icn, locals_, w):
    """Reduced admissibility form for rank-regular routings.

    Assembled on (w, y) coordinates with the direct-routing blocks only;
    it matches the verdict of ``gac_matrix`` when the feedthrough shortcuts
    vanish (m11 orthogonal to m12's range, m22 = 0) — the rank conditions
    alone do not remove them.
    """
    _require_wellposed(icn)
    _check_ports(icn, locals_)
    _check_global(icn, w)
    big = stack_multipliers(locals_)
    top = icn.m12.T @ big.x11 @ icn.m12 - w.x11
    cross = icn.m12.T @ big.x12 - w.x12 @ icn.m21
    bottom = big.x22 - icn.m21.T @ w.x22 @ icn.m21
    return np.block([[top, cross], [cross.T, bottom]])


def quad_outer_maps(icn):
    """Level-doubled routing conjugators for quadratic families."""
    g1 = np.block([[icn.m12, icn.m11],
                   [np.zeros((icn.n_y, icn.n_w)), np.eye(icn.n_y)]])
    g2 = np.block([[np.eye(icn.n_w), np.zeros((icn.n_w, icn.n_y))],
                   [icn.m22, icn.m21]])
    return np.kron(np.eye(2), g1), np.kron(np.eye(2), g2)


def level_stack(quads):
    """Coefficient stack [[S1, S2], [S2', S3]] on stacked (v, y) ports.

    Each level is assembled in stacked-port layout so it composes with the
    conjugators from ``quad_outer_maps``.
    """
    s1 = stack_multipliers([q.x1 for q in quads]).full()
    s2 = stack_multipliers([q.x2 for q in quads]).full()
    s3 = stack_multipliers([q.x3 for q in quads]).full()
    return np.block([[s1, s2], [s2.T, s3]])


def global_level_stack(wq):
    w1, w2, w3 = (m.full() for m in wq.coefficients())
    return np.block([[w1, w2], [w2.T, w3]])


def gac_quadratic(icn, locals_, wq):
    """Parameter-free admissibility form for quadratic families.

    NSD of the result certifies admissibility at every parameter value at
    once.  ``locals_`` may be a LocalProblemSet or a plain list.
    """
    quads = _quads_of(icn, locals_)
    q1, q2 = quad_outer_maps(icn)
    gac = q1.T @ level_stack(quads) @ q1 \
        - q2.T @ global_level_stack(wq) @ q2
    return symmetrize(gac, tol=np.inf)


def _quads_of(icn, locals_):
    quads = locals_.multipliers if isinstance(locals_, LocalProblemSet) \
        else tuple(locals_)
    _check_ports(icn, [q.x3 for q in quads])
    return quads


def _structured_parts(quad, what):
    x1, x2, x3 = quad.coefficients()
    flat = [x1.x12, x1.x22, x2.x11, x2.x22]
    if any(np.any(m) for m in flat):
        raise DimensionMismatch(
            f"{what} is not in structured form: the squared level may only "
            "carry an input block and the linear level only a cross block")
    return x1.x11, x2.x12, x3


def gac_structured(icn, locals_, wq):
    """Reduced parameter-free form for structured families.

    Requires the structured shape (squared level on inputs, linear level on
    the cross block, free constant level) for every family, and a
    rank-regular routing.  Same feedthrough caveat as ``gac_wellposed``.
    """
    _require_wellposed(icn)
    quads = _quads_of(icn, locals_)
    _check_global(icn, wq.x3)
    gains, crosses, bars = zip(*(_structured_parts(q, f"subsystem {i}")
                                 for i, q in enumerate(quads)))
    w_gain, w_cross, w_bar = _structured_parts(wq, "global family")
    x11 = blkdiag(*gains)
    x12 = blkdiag(*crosses)
    xbar = stack_multipliers(list(bars))

    a = icn.m12.T @ x11 @ icn.m12 - w_gain
    c = icn.m12.T @ x12 - w_cross @ icn.m21
    abar = icn.m12.T @ xbar.x11 @ icn.m12 - w_bar.x11
    cbar = icn.m12.T @ xbar.x12 - w_bar.x12 @ icn.m21
    bbar = xbar.x22 - icn.m21.T @ w_bar.x22 @ icn.m21

    n_w, n_y = icn.n_w, icn.n_y
    z_ww = np.zeros((n_w, n_w))
    z_wy = np.zeros((n_w, n_y))
    z_yy = np.zeros((n_y, n_y))
    return np.block([
        [a, z_wy, z_ww, c],
        [z_wy.T, z_yy, c.T, z_yy],
        [z_ww, c, abar, cbar],
        [c.T, z_yy, cbar.T, bbar],
    ])


def passivable(icn, bd_tol=BD_TOL):
    """Whether passivity supplies alone can absorb this routing.

    True when the input-side image of the performance map decomposes per
    subsystem, i.e. m12 (m12' m12)^{-1} m21 is block diagonal in the port
    partition.
    """
    _require_wellposed(icn)
    if icn.n_w != icn.n_z:
        raise DimensionMismatch(
            "passivability needs matching disturbance/performance widths")
    gram = icn.m12.T @ icn.m12
    coupling = icn.m12 @ np.linalg.solve(gram, icn.m21)
    for i, si in enumerate(icn.in_slices()):
        for j, sj in enumerate(icn.out_slices()):
            if i != j and np.max(np.abs(coupling[si, sj])) > bd_tol:
                return False
    return True


def assemble_global(plants, icn):
    """Close the routing around subsystem realizations; returns w -> z.

    Subsystems must be plain input/output realizations (control channels
    already closed).  Raises NotWellPosed when the static loop through the
    feedthroughs is singular.
    """
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
    a_d = blkdiag(*(s.a for s in plants))
    b_d = blkdiag(*(s.b1 for s in plants))
    c_d = blkdiag(*(s.c1 for s in plants))
    d_d = blkdiag(*(s.d11 for s in plants))
    loop = np.eye(icn.n_y) - d_d @ icn.m11
    svals = np.linalg.svd(loop, compute_uv=False)
    if svals[-1] <= 1e-10 * max(svals[0], 1e-300):
        raise NotWellPosed("algebraic loop through the feedthroughs")
    phi = np.linalg.inv(loop)
    a_g = a_d + b_d @ icn.m11 @ phi @ c_d
    b_g = b_d @ (icn.m11 @ phi @ d_d + np.eye(icn.n_v)) @ icn.m12
    c_g = icn.m21 @ phi @ c_d
    d_g = icn.m21 @ phi @ d_d @ icn.m12 + icn.m22
    return StateSpace.plant(a_g, b_g, c_g, d_g)
