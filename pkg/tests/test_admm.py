"""Consensus-negotiation driver: benchmarks, budgets, and invariants."""

import numpy as np
import pytest

from iqcalloc.admm import AdmmState, _DissipationStep, admm_solve
from iqcalloc.analysis import dissipation_residual, iqc_analysis, l2_gain_bisect
from iqcalloc.errors import DimensionMismatch, MaxIterReached, SeedInfeasible
from iqcalloc.interconnect import Interconnection, gac_matrix
from iqcalloc.lti import StateSpace, probe_signal
from iqcalloc.multipliers import Multiplier, l2gain_quad


def half_gain_plant():
    # first-order lag with dc gain 0.5 and peak gain 0.5
    return StateSpace.plant([[-1.0]], [[1.0]], [[0.5]], [[0.0]])


def series_chain(n):
    """w -> H1 -> ... -> Hn -> z with unit hand-offs."""
    m11 = np.zeros((n, n))
    for i in range(1, n):
        m11[i, i - 1] = 1.0
    m12 = np.zeros((n, 1))
    m12[0, 0] = 1.0
    m21 = np.zeros((1, n))
    m21[0, n - 1] = 1.0
    return Interconnection(m11=m11, m12=m12, m21=m21, m22=np.zeros((1, 1)),
                           in_dims=(1,) * n, out_dims=(1,) * n)


def test_single_subsystem_matches_bisection_oracle():
    plant = half_gain_plant()
    icn = Interconnection.identity_routing((1,), (1,))
    _, gamma, state = admm_solve(icn, l2gain_quad(1, 1), [plant])
    oracle = l2_gain_bisect(plant)
    assert oracle == pytest.approx(0.5, rel=1e-2)
    assert gamma == pytest.approx(oracle, rel=0.05)
    assert state.primal_res <= 1e-4 * (1.0 + _z_scale(state))
    assert state.dual_res <= 1e-4


def _z_scale(state):
    return np.sqrt(sum(np.linalg.norm(z.full(), "fro") ** 2
                       for z in state.z))


def test_chain_benchmark_meets_cascade_bound():
    plant = half_gain_plant()
    icn = series_chain(2)
    wq = l2gain_quad(1, 1)
    local_set, gamma, state = admm_solve(icn, wq, [plant, plant])
    # cascade of two 0.5 gains: true level 0.25, 10% headroom allowed
    assert gamma <= 0.25 * 1.1
    assert state.primal_res <= 1e-4 * (1.0 + _z_scale(state))
    local_set.validate(icn)
    # the negotiated supplies are constant in the level parameter
    lo, hi = local_set.eval(0.3), local_set.eval(2.0)
    for a, b in zip(lo, hi):
        assert np.allclose(a.full(), b.full())
    # consensus copies respect the sign structure
    for z in state.z:
        assert np.linalg.eigvalsh(z.x11).min() >= -1e-7
        assert np.linalg.eigvalsh(z.x22).max() <= 1e-7


def test_converged_output_is_certified():
    plant = half_gain_plant()
    icn = series_chain(2)
    wq = l2gain_quad(1, 1)
    local_set, gamma, state = admm_solve(icn, wq, [plant, plant])
    gac = gac_matrix(icn, local_set.eval(gamma), wq.eval(gamma))
    assert np.linalg.eigvalsh(gac).max() <= 1e-7
    rng = np.random.default_rng(7)
    for i, xi in enumerate(state.x):
        cert = iqc_analysis(plant, xi)
        probe = probe_signal(rng, 1, 0.002, 20.0)
        assert dissipation_residual(plant, cert, probe) <= 1e-5, i


def test_budget_exhaustion_carries_state():
    plant = half_gain_plant()
    icn = series_chain(2)
    with pytest.raises(MaxIterReached) as exc:
        admm_solve(icn, l2gain_quad(1, 1), [plant, plant], max_iter=1)
    state = exc.value.state
    assert isinstance(state, AdmmState)
    assert state.iters == 1
    assert len(state.trace) == 1
    assert np.isfinite(state.primal_res)
    assert state.gamma == pytest.approx(10.0)


def test_unreachable_level_never_converges():
    # an unstable stage only admits the degenerate zero supply, which can
    # never meet the output-damping the routing demands
    unstable = StateSpace.plant([[1.0]], [[1.0]], [[1.0]], [[0.0]])
    icn = Interconnection.identity_routing((1,), (1,))
    with pytest.raises(MaxIterReached):
        admm_solve(icn, l2gain_quad(1, 1), [unstable], max_iter=40)


def test_seed_rejects_impossible_level():
    # direct feedthrough of gain 2 from w to z cannot be absorbed at
    # gamma_hi = 1 by any signed supply
    icn = Interconnection(m11=np.zeros((1, 1)), m12=np.eye(1),
                          m21=np.zeros((1, 1)), m22=np.array([[2.0]]),
                          in_dims=(1,), out_dims=(1,))
    with pytest.raises(SeedInfeasible):
        admm_solve(icn, l2gain_quad(1, 1), [half_gain_plant()],
                   gamma_hi=1.0)


def test_residual_trend_is_downward():
    # soft monotonicity: 5-sweep moving average of the primal residual
    # at sweep 100 does not exceed the one at sweep 10
    plant = half_gain_plant()
    icn = series_chain(2)
    _, _, state = admm_solve(icn, l2gain_quad(1, 1), [plant, plant],
                             bisect_tol=0.0, max_iter=120)
    assert len(state.trace) >= 100

    def moving_average(upto):
        window = [p for (i, _, p, _) in state.trace
                  if upto - 4 <= i <= upto and np.isfinite(p)]
        return float(np.mean(window))

    assert moving_average(100) <= moving_average(10)


def test_local_updates_commute():
    plant = half_gain_plant()
    icn = series_chain(2)
    with pytest.raises(MaxIterReached) as exc:
        admm_solve(icn, l2gain_quad(1, 1), [plant, plant], max_iter=5)
    state = exc.value.state
    steps = [_DissipationStep(plant, i) for i in range(2)]
    targets = [Multiplier(z.x11 - v.x11, z.x12 - v.x12, z.x22 - v.x22)
               for z, v in zip(state.z, state.v)]
    forward = [steps[0].solve(targets[0]), steps[1].solve(targets[1])]
    backward = [steps[1].solve(targets[1]), steps[0].solve(targets[0])][::-1]
    for a, b in zip(forward, backward):
        assert np.linalg.norm(a.full() - b.full(), "fro") <= 1e-10


def test_problem_shape_is_validated():
    plant = half_gain_plant()
    icn = series_chain(2)
    wq = l2gain_quad(1, 1)
    with pytest.raises(DimensionMismatch):
        admm_solve(icn, wq, [plant])
    wide = StateSpace.plant([[-1.0]], [[1.0, 0.0]], [[0.5]],
                            [[0.0, 0.0]])
    with pytest.raises(DimensionMismatch):
        admm_solve(icn, wq, [wide, plant])
    with pytest.raises(DimensionMismatch):
        admm_solve(icn, l2gain_quad(2, 2), [plant, plant])
