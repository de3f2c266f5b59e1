"""Capacity-bounded grouping: membership, masking, and the alternation."""

import itertools

import numpy as np
import pytest

from iqcalloc.errors import DimensionMismatch, Infeasible, NotEquivalence
from iqcalloc.grouping import (
    GroupMatrix,
    group_localize,
    hadamard_blocks,
    membership_from_P,
)
from iqcalloc.interconnect import Interconnection
from iqcalloc.localization import closest_localization, masked_localization
from iqcalloc.multipliers import Multiplier, QuadMultiplier, l2gain_quad


def pair_and_loner():
    return np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def mixing_pair():
    """Two scalar subsystems coupled through a full-rank internal mix."""
    return Interconnection(m11=np.zeros((2, 2)),
                           m12=np.array([[1.0, 0.6], [0.0, 1.0]]),
                           m21=np.eye(2), m22=np.zeros((2, 2)),
                           in_dims=(1, 1), out_dims=(1, 1))


def coupled_pair_plus_loner():
    """Subsystems 0 and 1 share a mixed drive; subsystem 2 only relays."""
    m11 = np.zeros((3, 3))
    m11[2, 1] = 1.0
    m12 = np.zeros((3, 2))
    m12[:2, :] = [[1.0, 0.6], [0.6, 1.0]]
    m21 = np.zeros((2, 3))
    m21[:, 2] = 1.0
    return Interconnection(m11=m11, m12=m12, m21=m21, m22=np.zeros((2, 2)),
                           in_dims=(1, 1, 1), out_dims=(1, 1, 1))


def two_modules():
    """Four scalar subsystems, mixed pairwise into two independent modules."""
    mix = np.array([[1.0, 0.6], [0.6, 1.0]])
    m12 = np.zeros((4, 4))
    m12[:2, :2] = mix
    m12[2:, 2:] = mix
    return Interconnection(m11=np.zeros((4, 4)), m12=m12, m21=np.eye(4),
                           m22=np.zeros((4, 4)), in_dims=(1,) * 4,
                           out_dims=(1,) * 4)


def random_partition(rng, n):
    order = list(rng.permutation(n))
    groups = []
    while order:
        take = int(rng.integers(1, len(order) + 1))
        groups.append(tuple(sorted(order[:take])))
        order = order[take:]
    return groups


def binary_matrix(groups, n):
    mat = np.zeros((n, n))
    for g in groups:
        for a in g:
            for b in g:
                mat[a, b] = 1.0
    return mat


def test_membership_pair_and_singleton():
    assert membership_from_P(pair_and_loner()) == [(0, 1), (2,)]


def test_membership_identity_gives_singletons():
    assert membership_from_P(np.eye(4)) == [(0,), (1,), (2,), (3,)]


def test_membership_rejects_broken_transitivity():
    chain = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]])
    with pytest.raises(NotEquivalence, match="share group members"):
        membership_from_P(chain)


def test_membership_thresholds_soft_weights():
    soft = np.array([[1.0, 0.6, 0.0], [0.6, 1.0, 0.2], [0.0, 0.2, 1.0]])
    assert membership_from_P(soft, rounded=False) == [(0, 1), (2,)]
    with pytest.raises(ValueError, match="binary"):
        membership_from_P(soft)


def test_group_sizes_are_singular_values():
    svals = np.linalg.svd(pair_and_loner(), compute_uv=False)
    assert np.allclose(sorted(svals), [0.0, 1.0, 2.0])

    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(2, 9))
        groups = random_partition(rng, n)
        gm = GroupMatrix(binary_matrix(groups, n), ng=len(groups),
                         nbar=max(len(g) for g in groups))
        svals = np.linalg.svd(gm.p, compute_uv=False)
        nonzero = sorted(s for s in svals if s > 1e-9)
        assert np.allclose(nonzero, sorted(len(g) for g in groups))
        assert np.linalg.matrix_rank(gm.p) == len(groups)
        assert gm.rounded
        assert membership_from_P(gm) == sorted(groups)


def test_group_matrix_validation():
    with pytest.raises(ValueError, match="own group"):
        GroupMatrix(np.zeros((2, 2)), ng=1, nbar=2)
    with pytest.raises(ValueError, match="\\[0, 1\\]"):
        GroupMatrix(np.array([[1.0, 2.0], [2.0, 1.0]]), ng=1, nbar=2)
    with pytest.raises(ValueError, match="semidefinite"):
        GroupMatrix(np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0],
                              [1.0, 1.0, 1.0]]), ng=1, nbar=3)
    with pytest.raises(ValueError, match="positive"):
        GroupMatrix(np.eye(2), ng=0, nbar=1)
    soft = GroupMatrix(np.array([[1.0, 0.5], [0.5, 1.0]]), ng=1, nbar=2)
    assert not soft.rounded
    assert soft.n == 2


def joint_example():
    return Multiplier(x11=np.array([[2.0, 5.0], [5.0, 3.0]]),
                      x12=np.array([[1.0, 5.0], [7.0, 2.0]]),
                      x22=np.array([[-1.0, 5.0], [5.0, -2.0]]))


def test_hadamard_identity_keeps_block_diagonal():
    masked = hadamard_blocks(np.eye(2), joint_example(), (1, 1), (1, 1))
    assert np.allclose(masked.x11, np.diag([2.0, 3.0]))
    assert np.allclose(masked.x12, np.diag([1.0, 2.0]))
    assert np.allclose(masked.x22, np.diag([-1.0, -2.0]))


def test_hadamard_ones_is_identity_map():
    joint = joint_example()
    masked = hadamard_blocks(np.ones((2, 2)), joint, (1, 1), (1, 1))
    assert np.allclose(masked.full(), joint.full())


def test_hadamard_scales_cross_blocks():
    half = np.array([[1.0, 0.5], [0.5, 1.0]])
    quad = QuadMultiplier(joint_example(), joint_example().scale(0.0),
                          joint_example().scale(-1.0))
    masked = hadamard_blocks(half, quad, (1, 1), (1, 1))
    assert np.allclose(masked.x1.x11, [[2.0, 2.5], [2.5, 3.0]])
    assert np.allclose(masked.x1.x12, [[1.0, 2.5], [3.5, 2.0]])
    assert np.allclose(masked.x3.x22, [[1.0, -2.5], [-2.5, 2.0]])


def test_hadamard_rejects_mismatched_shapes():
    with pytest.raises(DimensionMismatch):
        hadamard_blocks(np.eye(3), joint_example(), (1, 1), (1, 1))
    with pytest.raises(DimensionMismatch):
        hadamard_blocks(np.eye(2), joint_example(), (2, 1), (1, 1))


def test_forced_singletons_match_blockdiag_closest():
    icn = mixing_pair()
    wq = l2gain_quad(2, 2)
    res = group_localize(icn, wq, ng=2, nbar=1)
    ref = closest_localization(icn, wq, structure="blockdiag")
    assert res.groups == ((0,), (1,))
    assert res.group_matrix.rounded
    assert np.allclose(res.group_matrix.p, np.eye(2))
    assert res.distance == pytest.approx(ref.distance, rel=5e-2)


def test_coupled_pair_matches_brute_force():
    icn = coupled_pair_plus_loner()
    wq = l2gain_quad(2, 2)

    best_dist, best_groups = np.inf, None
    singles = [((0,), (1,), (2,))]
    pairs = [tuple(sorted([pair, tuple(sorted(set(range(3)) - set(pair)))]))
             for pair in itertools.combinations(range(3), 2)]
    for groups in singles + pairs:
        _, dist = masked_localization(icn, wq, binary_matrix(groups, 3))
        if dist < best_dist:
            best_dist, best_groups = dist, groups

    res = group_localize(icn, wq, ng=2, nbar=2)
    assert set(res.groups) == set(best_groups)
    assert res.distance <= 1.05 * best_dist + 1e-6
    assert set(res.groups) == {(0, 1), (2,)}


def test_two_modules_recovered_exactly():
    res = group_localize(two_modules(), l2gain_quad(4, 4), ng=2, nbar=2)
    assert set(res.groups) == {(0, 1), (2, 3)}
    assert res.distance <= 1e-5
    assert res.group_matrix.ng == 2


def test_exact_split_is_a_fixed_point():
    icn = Interconnection.identity_routing((1, 1), (1, 1))
    res = group_localize(icn, l2gain_quad(2, 2), ng=2, nbar=1)
    assert res.iterations == 1
    assert res.groups == ((0,), (1,))
    assert res.distance <= 1e-6


def test_allocation_step_never_hurts():
    res = group_localize(mixing_pair(), l2gain_quad(2, 2), ng=2, nbar=1)
    tags = [tag for tag, _ in res.d_history]
    assert tags[0] == "init" and tags[-1] == "rounded"
    for (tag_a, val_a), (tag_b, val_b) in zip(res.d_history, res.d_history[1:]):
        if tag_a == "weights" and tag_b == "allocation":
            assert val_b <= val_a + 1e-5


def test_input_contracts():
    icn = mixing_pair()
    wq = l2gain_quad(2, 2)
    with pytest.raises(ValueError, match="capacity"):
        group_localize(icn, wq, ng=1, nbar=2)
    with pytest.raises(ValueError, match="cannot cover"):
        group_localize(icn, wq, ng=1, nbar=1)
    with pytest.raises(ValueError, match="sparsity norm"):
        group_localize(icn, wq, ng=2, nbar=1, omega="l2")


def test_reports_infeasible_coupling_limit():
    icn = Interconnection(m11=np.zeros((2, 2)), m12=np.zeros((2, 1)),
                          m21=np.zeros((1, 2)), m22=np.array([[2.0]]),
                          in_dims=(1, 1), out_dims=(1, 1))
    with pytest.raises(Infeasible, match="even with all pairs coupled"):
        group_localize(icn, l2gain_quad(1, 1), ng=2, nbar=1)
