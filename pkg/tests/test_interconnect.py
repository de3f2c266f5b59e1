"""Routing algebra and the global admissibility matrix forms."""

import numpy as np
import pytest

from iqcalloc.errors import DimensionMismatch, NotWellPosed
from iqcalloc.interconnect import (
    Interconnection,
    LocalProblemSet,
    assemble_global,
    gac_matrix,
    gac_quadratic,
    gac_structured,
    gac_wellposed,
    passivable,
    level_stack,
    quad_outer_maps,
)
from iqcalloc.linalg import is_nsd
from iqcalloc.lti import StateSpace
from iqcalloc.multipliers import (
    Multiplier,
    QuadMultiplier,
    constant_quad,
    l2gain_quad,
    structured_quad,
)


def scalar_pair_routing(m11=None, m12=None, m21=None, m22=None):
    """Two scalar subsystems; defaults give the identity routing."""
    m11 = np.zeros((2, 2)) if m11 is None else np.asarray(m11, dtype=float)
    m12 = np.eye(2) if m12 is None else np.asarray(m12, dtype=float)
    m21 = np.eye(2) if m21 is None else np.asarray(m21, dtype=float)
    m22 = np.zeros((m21.shape[0], m12.shape[1])) if m22 is None \
        else np.asarray(m22, dtype=float)
    return Interconnection(m11, m12, m21, m22, (1, 1), (1, 1))


def random_multiplier(rng, n_in, n_out, damping=1.0):
    """Random supply with PSD input block and strictly damped output block."""
    g = rng.normal(size=(n_in, n_in))
    x11 = 0.3 * (g @ g.T)
    x12 = 0.2 * rng.normal(size=(n_in, n_out))
    h = rng.normal(size=(n_out, n_out))
    x22 = -damping * np.eye(n_out) - 0.3 * (h @ h.T)
    return Multiplier(x11, x12, x22)


def random_routing(rng, in_dims, out_dims, scale=0.3, shortcut_free=False):
    n_v, n_y = sum(in_dims), sum(out_dims)
    n_w, n_z = n_v, n_y
    m11 = np.zeros((n_v, n_y)) if shortcut_free \
        else scale * rng.normal(size=(n_v, n_y))
    m12 = np.eye(n_v) + scale * rng.normal(size=(n_v, n_w))
    m21 = np.eye(n_z) + scale * rng.normal(size=(n_z, n_y))
    m22 = np.zeros((n_z, n_w)) if shortcut_free \
        else scale * rng.normal(size=(n_z, n_w))
    return Interconnection(m11, m12, m21, m22, in_dims, out_dims)


def test_identity_routing_blocks():
    icn = Interconnection.identity_routing((1, 2), (2, 1))
    assert (icn.n_sub, icn.n_v, icn.n_y, icn.n_w, icn.n_z) == (2, 3, 3, 3, 3)
    assert np.allclose(icn.m12, np.eye(3))
    assert np.allclose(icn.m21, np.eye(3))
    assert not icn.m11.any() and not icn.m22.any()
    assert icn.full().shape == (6, 6)


def test_partition_validation():
    with pytest.raises(DimensionMismatch):
        Interconnection(np.zeros((2, 2)), np.eye(2), np.eye(2),
                        np.zeros((2, 2)), (1,), (1, 1))
    with pytest.raises(DimensionMismatch):
        Interconnection(np.zeros((2, 2)), np.eye(2), np.eye(2),
                        np.zeros((2, 2)), (2, 0), (1, 1))
    with pytest.raises(DimensionMismatch):
        Interconnection(np.zeros((2, 2)), np.eye(2), np.eye(2),
                        np.zeros((3, 2)), (1, 1), (1, 1))


def test_local_problem_set_validation():
    icn = Interconnection.identity_routing((1, 1), (1, 1))
    good = LocalProblemSet((l2gain_quad(1, 1), l2gain_quad(1, 1)))
    assert good.validate(icn) is good
    with pytest.raises(TypeError):
        LocalProblemSet((l2gain_quad(1, 1).eval(1.0),))
    with pytest.raises(DimensionMismatch):
        LocalProblemSet((l2gain_quad(1, 1),)).validate(icn)
    with pytest.raises(DimensionMismatch):
        LocalProblemSet((l2gain_quad(1, 1), l2gain_quad(2, 1))).validate(icn)


def test_gac_identity_routing_equal_supplies_is_zero():
    icn = Interconnection.identity_routing((2,), (2,))
    w = l2gain_quad(2, 2).eval(1.7)
    res = gac_matrix(icn, [w], w)
    assert np.allclose(res, 0.0, atol=1e-15)


def test_gac_smaller_supply_is_negative_definite():
    icn = Interconnection.identity_routing((2,), (2,))
    w = l2gain_quad(2, 2).eval(1.7)
    smaller = Multiplier.from_full(w.full() - np.eye(4), n_in=2)
    res = gac_matrix(icn, [smaller], w)
    assert np.allclose(res, -np.eye(4))


def test_gac_bigger_supply_is_not_nsd():
    icn = Interconnection.identity_routing((2,), (2,))
    w = l2gain_quad(2, 2).eval(1.7)
    bigger = Multiplier.from_full(w.full() + np.eye(4), n_in=2)
    assert not is_nsd(gac_matrix(icn, [bigger], w))


def test_gac_matrix_checks_dimensions():
    icn = Interconnection.identity_routing((1, 1), (1, 1))
    w = l2gain_quad(2, 2).eval(1.0)
    with pytest.raises(DimensionMismatch):
        gac_matrix(icn, [l2gain_quad(2, 2).eval(1.0)], w)
    with pytest.raises(DimensionMismatch):
        gac_matrix(icn, [l2gain_quad(1, 1).eval(1.0)] * 2,
                   l2gain_quad(3, 2).eval(1.0))


def routed_supply_gap(icn, locals_, w, y, ww):
    """Direct GAC1 evaluation: local supplies minus global supply."""
    v = icn.m11 @ y + icn.m12 @ ww
    z = icn.m21 @ y + icn.m22 @ ww
    total = 0.0
    for mult, si, so in zip(locals_, icn.in_slices(), icn.out_slices()):
        total += mult.supply(v[si], y[so])
    return total - w.supply(ww, z)


def test_gac_matrix_quadratic_form_is_the_supply_gap():
    rng = np.random.default_rng(42)
    for _ in range(20):
        icn = random_routing(rng, (1, 2), (2, 1))
        locals_ = [random_multiplier(rng, 1, 2), random_multiplier(rng, 2, 1)]
        w = random_multiplier(rng, icn.n_w, icn.n_z, damping=0.1)
        gac = gac_matrix(icn, locals_, w)
        y = rng.normal(size=icn.n_y)
        ww = rng.normal(size=icn.n_w)
        stacked = np.concatenate([y, ww])
        assert routed_supply_gap(icn, locals_, w, y, ww) == pytest.approx(
            stacked @ gac @ stacked, abs=1e-9)


def test_gac_not_nsd_exposes_violating_tuple():
    icn = Interconnection.identity_routing((2,), (2,))
    w = l2gain_quad(2, 2).eval(1.0)
    bigger = Multiplier.from_full(w.full() + np.eye(4), n_in=2)
    gac = gac_matrix(icn, [bigger], w)
    vals, vecs = np.linalg.eigh(gac)
    assert vals[-1] > 0
    worst = vecs[:, -1]
    gap = routed_supply_gap(icn, [bigger], w, worst[:2], worst[2:])
    assert gap > 1e-12


def test_trajectory_soundness_of_quadratic_certificate():
    # Whenever the parameter-free matrix is NSD, no routed signal tuple can
    # make the local supplies exceed the global one, at any parameter value.
    rng = np.random.default_rng(7)
    certified = 0
    for trial in range(12):
        in_dims, out_dims = (1, 2), (2, 1)
        # A squared-parameter gain on the local inputs is only sustainable
        # when the disturbance feeds them directly; alternate that shape
        # with input-gain-free locals under a fully populated routing.  The
        # squared level also damps the local outputs, which is what absorbs
        # the linear-level cross terms.
        direct_feed = trial % 2 == 0
        icn = random_routing(rng, in_dims, out_dims,
                             shortcut_free=direct_feed)
        quads = [
            QuadMultiplier(
                Multiplier(
                    (0.2 if direct_feed else 0.0) * np.eye(di),
                    np.zeros((di, do)), -0.15 * np.eye(do)),
                Multiplier(np.zeros((di, di)),
                           0.05 * rng.normal(size=(di, do)),
                           np.zeros((do, do))),
                random_multiplier(rng, di, do, damping=2.0),
            )
            for di, do in zip(in_dims, out_dims)
        ]
        zero_cross = np.zeros((icn.n_w, icn.n_z))
        zero_out = np.zeros((icn.n_z, icn.n_z))
        wq = QuadMultiplier(
            Multiplier(6.0 * np.eye(icn.n_w), zero_cross, zero_out),
            Multiplier(0.3 * np.eye(icn.n_w), zero_cross, zero_out),
            Multiplier(8.0 * np.eye(icn.n_w), zero_cross,
                       -0.05 * np.eye(icn.n_z)),
        )
        if not is_nsd(gac_quadratic(icn, quads, wq)):
            continue
        certified += 1
        for gamma in rng.uniform(-3.0, 3.0, size=7):
            locals_ = [q.eval(gamma) for q in quads]
            w = wq.eval(gamma)
            for _ in range(20):
                y = rng.normal(size=icn.n_y)
                ww = rng.normal(size=icn.n_w)
                assert routed_supply_gap(icn, locals_, w, y, ww) <= 1e-9
    assert certified >= 5


def test_wellposed_identity_routing_equal_supplies_is_zero():
    icn = Interconnection.identity_routing((2,), (2,))
    w = l2gain_quad(2, 2).eval(0.8)
    assert np.allclose(gac_wellposed(icn, [w], w), 0.0, atol=1e-15)


def test_wellposed_rejects_rank_deficient_routing():
    bad12 = scalar_pair_routing(m12=[[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(NotWellPosed):
        gac_wellposed(bad12, [passive_pair()] * 2, passive_global())
    bad21 = scalar_pair_routing(m21=[[0.0, 0.0], [0.0, 0.0]])
    with pytest.raises(NotWellPosed):
        gac_wellposed(bad21, [passive_pair()] * 2, passive_global())
    wide = Interconnection(np.zeros((1, 1)), np.ones((1, 2)), np.eye(1),
                           np.zeros((1, 2)), (1,), (1,))
    with pytest.raises(NotWellPosed):
        gac_wellposed(wide, [l2gain_quad(1, 1).eval(1.0)],
                      l2gain_quad(2, 1).eval(1.0))


def passive_pair():
    return Multiplier([[0.0]], [[1.0]], [[-0.1]])


def passive_global():
    return Multiplier(np.zeros((2, 2)), np.eye(2), -0.1 * np.eye(2))


def test_wellposed_matches_direct_form_without_shortcuts():
    # With no feedthrough shortcuts the reduced form is the direct form in
    # (w, y) order; check the matrices themselves, not just the verdicts.
    rng = np.random.default_rng(11)
    for _ in range(30):
        in_dims, out_dims = (2, 1), (1, 2)
        icn = random_routing(rng, in_dims, out_dims, shortcut_free=True)
        locals_ = [random_multiplier(rng, di, do, damping=0.5)
                   for di, do in zip(in_dims, out_dims)]
        w = random_multiplier(rng, icn.n_w, icn.n_z, damping=0.5)
        reduced = gac_wellposed(icn, locals_, w)
        direct = gac_matrix(icn, locals_, w)
        n_y, n_w = icn.n_y, icn.n_w
        perm = np.zeros((n_y + n_w, n_y + n_w))
        perm[:n_w, n_y:] = np.eye(n_w)
        perm[n_w:, :n_y] = np.eye(n_y)
        assert np.allclose(reduced, perm @ direct @ perm.T, atol=1e-11)
        assert is_nsd(reduced) == is_nsd(direct)


def test_quadratic_scalar_identity_is_zero():
    icn = Interconnection.identity_routing((1,), (1,))
    q1, q2 = quad_outer_maps(icn)
    assert np.allclose(q1, np.eye(4))
    assert np.allclose(q2, np.eye(4))
    res = gac_quadratic(icn, LocalProblemSet((l2gain_quad(1, 1),)),
                        l2gain_quad(1, 1))
    assert np.allclose(res, 0.0, atol=1e-15)


def test_quadratic_doubled_global_is_not_nsd():
    icn = Interconnection.identity_routing((1,), (1,))
    wq = l2gain_quad(1, 1)
    doubled = QuadMultiplier(wq.x1.scale(2.0), wq.x2.scale(2.0),
                             wq.x3.scale(2.0))
    res = gac_quadratic(icn, [wq], doubled)
    assert np.allclose(res, np.diag([-1.0, 0.0, 0.0, 1.0]))
    assert not is_nsd(res)


def test_level_stack_interleaves_ports_not_subsystems():
    # Two scalar subsystems: the stack must group all inputs first, then all
    # outputs, so the cross blocks land in the off-diagonal quadrant.
    qa = constant_quad(Multiplier([[1.0]], [[2.0]], [[3.0]]))
    qb = constant_quad(Multiplier([[4.0]], [[5.0]], [[6.0]]))
    stack = level_stack([qa, qb])
    want_x3 = np.array([
        [1.0, 0.0, 2.0, 0.0],
        [0.0, 4.0, 0.0, 5.0],
        [2.0, 0.0, 3.0, 0.0],
        [0.0, 5.0, 0.0, 6.0],
    ])
    assert stack.shape == (8, 8)
    assert np.allclose(stack[4:, 4:], want_x3)
    assert np.allclose(stack[:4, :], 0.0)


def test_quadratic_form_matches_evaluated_form():
    # [g u; u]' GACq [g u; u] must equal the evaluated-at-g direct form on
    # the same tuple, for every parameter g and direction u = (w, y).
    rng = np.random.default_rng(3)
    for _ in range(10):
        in_dims, out_dims = (2, 1), (1, 1)
        icn = random_routing(rng, in_dims, out_dims)
        quads = [
            QuadMultiplier(random_multiplier(rng, di, do),
                           random_multiplier(rng, di, do),
                           random_multiplier(rng, di, do))
            for di, do in zip(in_dims, out_dims)
        ]
        wq = QuadMultiplier(*(random_multiplier(rng, icn.n_w, icn.n_z)
                              for _ in range(3)))
        gac_q = gac_quadratic(icn, quads, wq)
        for gamma in rng.uniform(-2.0, 2.0, size=5):
            direct = gac_matrix(icn, [q.eval(gamma) for q in quads],
                                wq.eval(gamma))
            u = rng.normal(size=icn.n_w + icn.n_y)
            doubled = np.concatenate([gamma * u, u])
            yw = np.concatenate([u[icn.n_w:], u[:icn.n_w]])
            assert doubled @ gac_q @ doubled == pytest.approx(
                yw @ direct @ yw, abs=1e-8, rel=1e-8)


def test_quadratic_nsd_implies_grid_nsd():
    rng = np.random.default_rng(19)
    grid = np.linspace(-3.0, 3.0, 21)
    seen_nsd = seen_violated = 0
    for _ in range(25):
        icn = random_routing(rng, (1, 1), (1, 1), shortcut_free=True)
        quads = [
            QuadMultiplier(
                Multiplier([[rng.uniform(0.0, 0.5)]], [[0.0]], [[-0.1]]),
                Multiplier([[0.0]], [[0.1 * rng.normal()]], [[0.0]]),
                random_multiplier(rng, 1, 1, damping=1.0),
            )
            for _ in range(2)
        ]
        scale = rng.uniform(0.2, 4.0)
        wq = QuadMultiplier(
            Multiplier(scale * np.eye(2), np.zeros((2, 2)), np.zeros((2, 2))),
            Multiplier(*(np.zeros((2, 2)) for _ in range(3))),
            Multiplier(scale * np.eye(2), np.zeros((2, 2)),
                       -0.02 * np.eye(2)),
        )
        grid_verdicts = [
            is_nsd(gac_matrix(icn, [q.eval(g) for q in quads], wq.eval(g)))
            for g in grid
        ]
        if is_nsd(gac_quadratic(icn, quads, wq)):
            seen_nsd += 1
            assert all(grid_verdicts)
        elif not all(grid_verdicts):
            seen_violated += 1
    assert seen_nsd >= 3 and seen_violated >= 3


def test_structured_form_matches_quadratic_without_shortcuts():
    rng = np.random.default_rng(23)
    for _ in range(10):
        in_dims, out_dims = (1, 1), (1, 1)
        icn = random_routing(rng, in_dims, out_dims, shortcut_free=True)
        quads = [
            structured_quad([[rng.uniform(0.1, 1.0)]], [[rng.normal()]],
                            random_multiplier(rng, 1, 1))
            for _ in range(2)
        ]
        wq = structured_quad(
            rng.uniform(0.1, 1.0) * np.eye(2),
            0.3 * rng.normal(size=(2, 2)),
            random_multiplier(rng, 2, 2),
        )
        assert np.allclose(gac_structured(icn, quads, wq),
                           gac_quadratic(icn, quads, wq), atol=1e-11)


def test_structured_form_rejects_free_squared_level():
    icn = Interconnection.identity_routing((1,), (1,))
    loose = QuadMultiplier(Multiplier([[1.0]], [[0.5]], [[0.0]]),
                           Multiplier([[0.0]], [[1.0]], [[0.0]]),
                           Multiplier([[1.0]], [[0.0]], [[-1.0]]))
    with pytest.raises(DimensionMismatch):
        gac_structured(icn, [loose], l2gain_quad(1, 1))


def test_passivable_identity_pair():
    assert passivable(scalar_pair_routing()) is True


def test_passivable_swap_is_false():
    icn = scalar_pair_routing(m21=[[0.0, 1.0], [1.0, 0.0]])
    assert passivable(icn) is False


def test_passivable_diagonal_scaling():
    icn = scalar_pair_routing(m21=[[2.0, 0.0], [0.0, 3.0]])
    assert passivable(icn) is True


def test_passivable_needs_square_disturbance_to_performance():
    icn = Interconnection(np.zeros((2, 2)), np.eye(2),
                          np.array([[1.0, 0.0]]), np.zeros((1, 2)),
                          (1, 1), (1, 1))
    with pytest.raises(DimensionMismatch):
        passivable(icn)


def test_assemble_global_series_chain():
    lag = StateSpace.plant([[-1.0]], [[1.0]], [[1.0]], [[0.0]])
    icn = Interconnection([[0.0, 0.0], [1.0, 0.0]], [[1.0], [0.0]],
                          [[0.0, 1.0]], [[0.0]], (1, 1), (1, 1))
    chain = assemble_global([lag, lag], icn)
    assert np.allclose(chain.a, [[-1.0, 0.0], [1.0, -1.0]])
    assert np.allclose(chain.b1, [[1.0], [0.0]])
    assert np.allclose(chain.c1, [[0.0, 1.0]])
    assert np.allclose(chain.d11, [[0.0]])


def test_assemble_global_feedthrough_loop_raises():
    direct = StateSpace.plant([[-1.0]], [[1.0]], [[0.0]], [[1.0]])
    icn = Interconnection([[1.0]], [[1.0]], [[1.0]], [[0.0]], (1,), (1,))
    with pytest.raises(NotWellPosed):
        assemble_global([direct], icn)


def test_assemble_global_rejects_open_control_channels():
    with_control = StateSpace(
        a=[[-1.0]], b1=[[1.0]], b2=[[1.0]], c1=[[1.0]], d11=[[0.0]],
        d12=[[0.0]], c2=[[1.0]], d21=[[0.0]])
    icn = Interconnection.identity_routing((1,), (1,))
    with pytest.raises(DimensionMismatch):
        assemble_global([with_control], icn)
