"""Search engines: pop order, mass accounting, stopping rules, top-m."""

import math
import random

import pytest

from bnsearch.errors import BadReference
from bnsearch.model import NetworkSpec, Observation, atom, build_network
from bnsearch.search import (
    QUEUE_EMPTY,
    SearchParams,
    StoppingRule,
    Strategy,
    best_first,
    iterative_deepening,
    new_search,
    step,
    top_m_search,
    top_m_worlds,
)
from bnsearch.worlds import enumerate_exact

from conftest import random_network, random_observation, random_query


def chain3():
    spec = NetworkSpec(name="chain3")
    spec.add("a", ("t", "f"), rows=[[0.3, 0.7]])
    spec.add("b", ("t", "f"), parents=("a",), rows=[[0.9, 0.1], [0.2, 0.8]])
    spec.add("c", ("t", "f"), parents=("b",), rows=[[0.6, 0.4], [0.5, 0.5]])
    return build_network(spec)


RUNNERS = [best_first, iterative_deepening]


@pytest.mark.parametrize("run", RUNNERS)
def test_exhaustion_recovers_exact_prior(run):
    net = chain3()
    res = run(net, None, atom(net, "c", "t"))
    # P(c=t) = P(b=t)*0.6 + P(b=f)*0.5 with P(b=t) = 0.3*0.9 + 0.7*0.2
    assert res.stop_reason == "exhausted"
    assert res.exhausted
    assert res.worlds_found == 8
    assert res.p_w_g_obs == pytest.approx(0.541, abs=1e-12)
    assert res.p_w_obs == pytest.approx(1.0, abs=1e-12)
    assert res.pq_naive <= 1e-15


@pytest.mark.parametrize("run", RUNNERS)
def test_exhaustion_recovers_exact_posterior(run):
    net = chain3()
    obs = Observation.from_names(net, {"b": "t"})
    res = run(net, obs, atom(net, "c", "t"))
    assert res.p_w_obs == pytest.approx(0.41, abs=1e-12)
    assert res.p_w_g_obs == pytest.approx(0.41 * 0.6, abs=1e-12)
    assert res.p_w_g_obs / res.p_w_obs == pytest.approx(0.6)


def test_best_first_pops_worlds_most_probable_first():
    net = chain3()
    res = best_first(net)
    gs = [w.g for w in res.worlds]
    assert gs == sorted(gs, reverse=True)
    assert gs[0] == pytest.approx(0.7 * 0.8 * 0.5)


def test_strategies_agree_on_masses():
    rng = random.Random(411)
    for _ in range(5):
        net = random_network(rng)
        obs = random_observation(rng, net)
        q = random_query(rng, net)
        a = best_first(net, obs, q)
        b = iterative_deepening(net, obs, q)
        assert a.p_w_obs == pytest.approx(b.p_w_obs, rel=1e-9, abs=1e-300)
        assert a.p_w_g_obs == pytest.approx(b.p_w_g_obs, rel=1e-9, abs=1e-300)
        assert a.worlds_found == b.worlds_found


def test_zero_probability_branches_never_surface():
    spec = NetworkSpec(name="det")
    spec.add("a", ("t", "f"), rows=[[1.0, 0.0]])
    spec.add("b", ("t", "f"), parents=("a",), rows=[[0.5, 0.5], [0.0, 1.0]])
    net = build_network(spec)
    res = best_first(net)
    assert res.worlds_found == 2
    assert all(w.g > 0.0 for w in res.worlds)


# -- stopping rules -----------------------------------------------------------


def test_stop_on_max_error():
    net = random_network(random.Random(9), n_vars=10)
    params = SearchParams(stop=StoppingRule(max_error=0.2))
    res = best_first(net, None, atom(net, "v9", "a"), params=params)
    assert res.stop_reason == "max_error"
    pq = res.pq(True)
    assert pq / (2.0 * (res.p_w_obs + pq)) <= 0.2
    assert not res.exhausted


def test_stop_on_max_expansions():
    net = random_network(random.Random(9), n_vars=10)
    params = SearchParams(stop=StoppingRule(max_expansions=20))
    res = best_first(net, params=params)
    assert res.stop_reason == "max_expansions"
    assert res.expansions >= 20
    # the rule is only checked between transitions
    assert res.expansions <= 25


def test_stop_on_max_worlds():
    net = chain3()
    params = SearchParams(stop=StoppingRule(max_worlds=3))
    res = best_first(net, params=params)
    assert res.stop_reason == "max_worlds"
    assert res.worlds_found == 3


def test_keep_worlds_zero_keeps_masses():
    net = chain3()
    res = best_first(net, params=SearchParams(keep_worlds=0))
    assert res.worlds == []
    assert res.worlds_found == 8
    assert res.p_w_obs == pytest.approx(1.0)


def test_keep_worlds_limit_retains_first_popped():
    net = chain3()
    full = best_first(net)
    res = best_first(net, params=SearchParams(keep_worlds=3))
    assert [w.values for w in res.worlds] == [w.values for w in full.worlds[:3]]


# -- top-m --------------------------------------------------------------------


def test_top_m_rejects_nonpositive_m():
    with pytest.raises(BadReference):
        top_m_search(chain3(), m=0)


def _exact_top(net, obs, m):
    exact = enumerate_exact(net, None, obs)
    obs_map = obs.as_dict() if obs else {}

    def mass(vals):
        g = 1.0
        for i, v in enumerate(vals):
            row = net.cpts[i].row([vals[p] for p in net.cpts[i].parent_indices])
            g *= row[v]
        return g

    import itertools

    worlds = []
    for vals in itertools.product(*(range(net.domain_size(i)) for i in range(net.n))):
        if any(vals[i] != v for i, v in obs_map.items()):
            continue
        g = mass(vals)
        if g > 0:
            worlds.append((g, vals))
    worlds.sort(key=lambda t: -t[0])
    assert exact.p_obs == pytest.approx(sum(g for g, _ in worlds))
    return worlds[:m]


@pytest.mark.parametrize("strategy", list(Strategy))
def test_top_m_worlds_match_enumeration(strategy):
    rng = random.Random(77)
    for _ in range(4):
        net = random_network(rng, n_vars=6)
        obs = random_observation(rng, net)
        want = _exact_top(net, obs, 3)
        got = top_m_worlds(net, obs, 3, SearchParams(strategy=strategy))
        assert len(got) == len(want)
        for rec, (g, _) in zip(got, want):
            # value tuples may differ only under exact mass ties
            assert rec.g == pytest.approx(g, rel=1e-12)


def test_top_m_certifies_under_deepening():
    # the round must finish, so the run may complete more worlds than m
    net = chain3()
    res = top_m_search(net, None, 2, SearchParams(strategy=Strategy.ITERATIVE_DEEPENING))
    assert res.stop_reason in ("max_worlds", "exhausted")
    assert res.worlds_found >= 2


# -- step-driven interface ----------------------------------------------------


def test_new_search_step_matches_batch_run():
    net = chain3()
    obs = Observation.from_names(net, {"c": "t"})
    q = atom(net, "a", "t")
    state = new_search(net, obs, q)
    transitions = []
    while True:
        rep = step(state)
        if rep == QUEUE_EMPTY:
            break
        transitions.append(rep)
    batch = best_first(net, obs, q)
    assert state.p_w_obs.value == pytest.approx(batch.p_w_obs)
    assert state.p_w_g_obs.value == pytest.approx(batch.p_w_g_obs)
    assert state.worlds_found == batch.worlds_found
    assert len(transitions) >= batch.worlds_found


def test_heuristic_must_match_network():
    from bnsearch.conflicts import init_heuristic

    other = init_heuristic(chain3())
    with pytest.raises(BadReference):
        best_first(chain3(), heuristic=other)  # fresh build, different object


def test_unknown_engine_name_rejected():
    with pytest.raises(ValueError):
        best_first(chain3(), params=SearchParams(engine="vaporware"))


def test_conflicts_only_change_bookkeeping_not_masses():
    rng = random.Random(5150)
    for _ in range(5):
        net = random_network(rng)
        obs = random_observation(rng, net)
        on = best_first(net, obs, params=SearchParams(conflicts_enabled=True))
        off = best_first(net, obs, params=SearchParams(conflicts_enabled=False))
        assert on.p_w_obs == pytest.approx(off.p_w_obs, rel=1e-12, abs=1e-300)
        assert on.worlds_found == off.worlds_found
        assert on.pq_adj <= on.pq_naive + 1e-15
