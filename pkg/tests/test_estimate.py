"""Bound arithmetic and the anytime reporting wrapper."""

import math

import pytest

from bnsearch.errors import InvalidMass, ZeroEvidence
from bnsearch.estimate import (
    MassMode,
    posterior_bounds,
    prior_bounds,
    queue_mass,
    report_from_sums,
    run_anytime,
)
from bnsearch.model import NetworkSpec, Observation, atom, build_network
from bnsearch.search import (
    SearchParams,
    StoppingRule,
    best_first,
    new_search,
    step,
)


def chain3():
    spec = NetworkSpec(name="chain3")
    spec.add("a", ("t", "f"), rows=[[0.3, 0.7]])
    spec.add("b", ("t", "f"), parents=("a",), rows=[[0.9, 0.1], [0.2, 0.8]])
    spec.add("c", ("t", "f"), parents=("b",), rows=[[0.6, 0.4], [0.5, 0.5]])
    return build_network(spec)


# -- closed forms -------------------------------------------------------------


def test_posterior_bounds_worked_example():
    lower, upper, mid, err = posterior_bounds(0.3, 0.6, 0.1)
    assert lower == pytest.approx(0.3 / 0.7)
    assert upper == pytest.approx(0.4 / 0.7)
    assert mid == pytest.approx((0.3 / 0.7 + 0.4 / 0.7) / 2)
    assert err == pytest.approx(0.1 / 1.4)
    # the interval has width exactly 2 * max_error when nothing clamps
    assert upper - lower == pytest.approx(2 * err)


def test_posterior_bounds_clamps_upper_but_not_max_error():
    lower, upper, mid, err = posterior_bounds(0.6, 0.5, 0.2)
    assert lower == pytest.approx(0.6 / 0.7)
    assert upper == 1.0
    assert err == pytest.approx(0.2 / 1.4)
    assert mid == pytest.approx((0.6 / 0.7 + 1.0) / 2)


def test_posterior_bounds_with_nothing_explored():
    lower, upper, mid, err = posterior_bounds(0.0, 0.0, 0.25)
    assert (lower, upper) == (0.0, 1.0)
    assert mid == 0.5
    assert err == 0.5


def test_posterior_bounds_zero_evidence():
    with pytest.raises(ZeroEvidence):
        posterior_bounds(0.0, 0.0, 0.0)


def test_mass_validation():
    with pytest.raises(InvalidMass):
        posterior_bounds(-0.1, 0.5, 0.1)
    with pytest.raises(InvalidMass):
        posterior_bounds(0.1, math.nan, 0.1)
    with pytest.raises(InvalidMass):
        prior_bounds(0.1, -1.0)


def test_prior_bounds_clamp():
    assert prior_bounds(0.3, 0.1) == (0.3, pytest.approx(0.4))
    assert prior_bounds(0.9, 0.4) == (0.9, 1.0)


def test_report_prior_fields_follow_conditioning():
    rep = report_from_sums(0.2, 0.5, 0.1, conditioned=True)
    assert rep.prior_lower is None and rep.prior_upper is None
    rep = report_from_sums(0.2, 0.5, 0.1, conditioned=False)
    assert rep.prior_lower == pytest.approx(0.2)
    assert rep.prior_upper == pytest.approx(0.3)


# -- queue mass pricing -------------------------------------------------------


def test_queue_mass_modes_on_result():
    net = chain3()
    res = best_first(net, params=SearchParams(stop=StoppingRule(max_expansions=2)))
    assert queue_mass(res, MassMode.NAIVE) == res.pq_naive
    assert queue_mass(res, MassMode.CONFLICT_ADJUSTED) == res.pq_adj
    assert queue_mass(res) == res.pq_adj


def test_queue_mass_on_live_state():
    net = chain3()
    state = new_search(net)
    step(state)
    naive = queue_mass(state, MassMode.NAIVE)
    adj = queue_mass(state, MassMode.CONFLICT_ADJUSTED)
    assert naive > 0.0
    assert adj <= naive + 1e-15


def test_adjusted_pricing_can_underrun_the_true_remaining_mass():
    """The per-node price g * exp(h) bounds the best single completion, not
    the subtree total: with one soft variable the priced root is 0.6 while a
    full unit of mass is still unexplored. The naive column has no such gap,
    which is why the sound bracket is built from it."""
    spec = NetworkSpec(name="soft1")
    spec.add("a", ("t", "f"), rows=[[0.6, 0.4]])
    net = build_network(spec)
    res = best_first(net, params=SearchParams(snapshot_every=1))
    from bnsearch._pyengine import SNAP_PQ_ADJ, SNAP_PQ_NAIVE

    first = res.snapshots[0]
    assert first[SNAP_PQ_NAIVE] == pytest.approx(1.0)
    assert first[SNAP_PQ_ADJ] == pytest.approx(0.6)
    # true unexplored mass at that instant is 1.0: the adjusted price loses
    # the 0.4-branch, the naive price does not


# -- run_anytime --------------------------------------------------------------


def test_run_anytime_unconditioned_prior_fields():
    net = chain3()
    out = run_anytime(net, None, atom(net, "c", "t"))
    assert not out.conditioned
    assert out.final.prior_lower == pytest.approx(0.541)
    assert out.final.prior_upper == pytest.approx(0.541)
    assert out.final.midpoint == pytest.approx(0.541)
    assert out.final.max_error <= 1e-15


def test_run_anytime_conditioned():
    net = chain3()
    obs = Observation.from_names(net, {"b": "t"})
    out = run_anytime(net, obs, atom(net, "c", "t"))
    assert out.conditioned
    assert out.final.prior_lower is None
    assert out.final.midpoint == pytest.approx(0.6)
    assert out.final.max_error <= 1e-12


def test_run_anytime_mode_tracks_conflict_flag():
    net = chain3()
    obs = Observation.from_names(net, {"b": "t"})
    on = run_anytime(net, obs, atom(net, "c", "t"), SearchParams(conflicts_enabled=True))
    off = run_anytime(net, obs, atom(net, "c", "t"), SearchParams(conflicts_enabled=False))
    assert on.mode == MassMode.CONFLICT_ADJUSTED
    assert off.mode == MassMode.NAIVE
    assert on.final.p_q == on.result.pq_adj
    assert off.final.p_q == off.result.pq_naive


def test_run_anytime_prunes_for_the_query():
    spec = NetworkSpec(name="wide")
    spec.add("a", ("t", "f"), rows=[[0.3, 0.7]])
    spec.add("b", ("t", "f"), parents=("a",), rows=[[0.9, 0.1], [0.2, 0.8]])
    spec.add("junk", ("t", "f"), rows=[[0.5, 0.5]])
    net = build_network(spec)
    out = run_anytime(net, None, atom(net, "b", "t"))
    assert out.network.n == 2
    assert out.kept_variables == (0, 1)
    assert out.final.midpoint == pytest.approx(0.41)


def test_run_anytime_zero_evidence():
    spec = NetworkSpec(name="impossible")
    spec.add("a", ("t", "f"), rows=[[1.0, 0.0]])
    net = build_network(spec)
    with pytest.raises(ZeroEvidence):
        run_anytime(net, Observation([(0, 1)]), None)


def test_reports_iterate_snapshots_with_interval_identities():
    net = chain3()
    obs = Observation.from_names(net, {"c": "t"})
    out = run_anytime(net, obs, atom(net, "a", "t"), SearchParams(snapshot_every=1))
    reps = list(out.reports())
    assert len(reps) == len(out.result.snapshots)
    for rep in reps:
        assert rep.post_lower <= rep.midpoint <= rep.post_upper
        denom = rep.p_w_obs + rep.p_q
        assert rep.max_error == pytest.approx(rep.p_q / (2 * denom) if denom else 0.5)
    # error shrinks to zero as the run exhausts
    assert reps[-1].max_error <= 1e-15
    assert reps[0].max_error == pytest.approx(0.5)
