import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import link, make_config
from satchain.engine import BufferedRequest, Simulator
from satchain.placement_baselines import (CentralQParams, GreedyPolicy, NbpPolicy, RandomPolicy, central_q_reward,
                                          greedy_cost, nbp_policy, random_policy, train_central_q)
from satchain.services import ServiceRequest, make_sfc, table3_catalog
from satchain.topology import ALWAYS_ON


def test_greedy_executes_locally_when_possible():
    sfc = make_sfc(1, (1,), 1, 1)
    cfg = make_config(2, sfcs=[sfc], caching=({1}, {1}))
    sim = Simulator(cfg)
    y = BufferedRequest(sfc, 1, 1, 1)
    assert GreedyPolicy(cfg).act(sim, 1, y, sim.valid_actions(y, 1, 1), 1) == 3


def test_greedy_prefers_earliest_link():
    sfc = make_sfc(1, (1,), 1, 1)
    cfg = make_config(3, {(1, 2): link(4, 1, 1), (1, 3): link(4, 1, 3)}, sfcs=[sfc], caching=({2}, {1}, {1}))
    pol = GreedyPolicy(cfg)
    y = BufferedRequest(sfc, 1, 1, 1)
    assert cfg.topology.next_active_slot(1, 2, 1) == 2 and cfg.topology.next_active_slot(1, 3, 1) == 4
    assert pol.target(1, y, 1) == 2
    sim = Simulator(cfg)
    assert pol.act(sim, 1, y, sim.valid_actions(y, 1, 1), 1) == 1      # waits for the link
    assert pol.act(sim, 1, y, sim.valid_actions(y, 1, 2), 2) == 2


def test_greedy_splits_ties_evenly():
    sfc = make_sfc(1, (1,), 1, 1)
    cfg = make_config(3, sfcs=[sfc], caching=({2}, {1}, {1}))
    pol = GreedyPolicy(cfg, seed=11)
    y = BufferedRequest(sfc, 1, 1, 1)
    picks = Counter(pol.target(1, y, 1) for _ in range(10_000))
    assert set(picks) == {2, 3}
    assert abs(picks[2] / 10_000 - 0.5) <= 0.02


def test_greedy_without_cache_knowledge_tries_everyone():
    sfc = make_sfc(1, (1,), 1, 1)
    cfg = make_config(3, sfcs=[sfc], caching=({2}, {2}, {1}))
    assert GreedyPolicy(cfg, knows_caching=False).candidates(1, 1) == [2, 3]
    assert GreedyPolicy(cfg).candidates(1, 1) == [3]


def test_greedy_round_trip_score():
    cfg = make_config(2, {(1, 2): link(3, 1, 0)})
    for t in range(1, 10):
        assert greedy_cost(cfg.topology, 1, 2, t) >= 2
    assert greedy_cost(cfg.topology, 1, 2, 1) == 1 + 3
    assert math.isinf(greedy_cost(make_config(2, {}).topology, 1, 2, 1))


def test_central_q_reward_by_hand():
    assert central_q_reward(1.0, 1.0, 5, 5) == pytest.approx(25 * 2 * math.e ** 2)
    assert central_q_reward(1.0, 1.0, 5, 5) == pytest.approx(369.45, abs=0.01)


def test_central_q_serves_everything_on_a_static_full_mesh():
    cat = table3_catalog()
    cfg = make_config(2, {(1, 2): ALWAYS_ON}, 20, 20, [cat[1], cat[3]], caching=({1, 2, 3}, {1, 2, 3}))
    pol = train_central_q(cfg, 2000, CentralQParams(), seed=0)
    stats = Simulator(cfg, pol, seed=1).run(2000)
    assert stats.arrivals > 0 and stats.request_serving_rate() == 1.0


def test_central_q_plans_fail_on_links_that_go_down():
    sfc = make_sfc(1, (1, 2), 1, 1, delay_tolerance=8)
    cfg = make_config(2, {(1, 2): link(4, 1, 0)}, 5, 5, [sfc], caching=({1}, {2}))
    pol = train_central_q(cfg, 0, seed=0)
    pol.q[(1, 1)] = np.array([0.0, 1.0])
    pol.q[(1, 2)] = np.array([1.0, 0.0])
    sim = Simulator(cfg, pol, script={1: ServiceRequest(sfc, 1, 1)})
    sim.run(10)
    # planned at slot 1 as if the link stayed up; it is down when the output has to come back
    assert sim.stats.rejected == 1 and pol.failures == 1


def test_nbp_keeps_fully_cached_chain_local():
    sfc = make_sfc(1, (1, 2, 3), 1, 1, exec_slots=(1, 2, 1))
    cfg = make_config(2, sfcs=[sfc], caching=({1, 2, 3}, {1, 2, 3}), compute=5, storage=5)
    sim = Simulator(cfg)
    p = nbp_policy(sim, BufferedRequest(sfc, 1, 1, 1), 1)
    assert set(p.handlers) == {1} and len(p) == 4


def test_nbp_rejects_when_host_unreachable():
    sfc = make_sfc(1, (1,), 1, 1)
    cfg = make_config(2, {(1, 2): link(3, 1, 1)}, sfcs=[sfc], caching=({2}, {1}))
    sim = Simulator(cfg)
    assert nbp_policy(sim, BufferedRequest(sfc, 1, 1, 1), 1) is None
    assert nbp_policy(sim, BufferedRequest(sfc, 1, 1, 1), 2) is not None


def test_random_policy_choices():
    rng = np.random.default_rng(0)
    assert random_policy([4], rng) == 4
    picks = Counter(random_policy([1, 4], rng) for _ in range(10_000))
    assert abs(picks[1] / 10_000 - 0.5) <= 0.02
    with pytest.raises(ValueError):
        random_policy([], rng)


# -- properties ---------------------------------------------------------------------

class Checked:
    """Wraps a policy and asserts every action it returns is currently valid."""

    def __init__(self, inner):
        self.inner = inner

    def act(self, sim, v, y, valid, t):
        a = self.inner.act(sim, v, y, valid, t)
        assert a in valid, (a, valid)
        return a


def fig4_like(seed):
    rng = np.random.default_rng(seed)
    cat = table3_catalog(delay_tolerance=int(rng.integers(4, 12)))
    sfcs = [cat[h] for h in (4, 5, 6, 7)]
    caching = [frozenset(int(x) for x in rng.choice(range(1, 8), size=2, replace=False)) for _ in range(4)]
    sched = {(1, 2): link(2), (1, 3): link(3, 1, 1), (2, 4): link(4), (3, 4): link(2, 1, 1)}
    R = int(rng.integers(1, 6))
    return make_config(4, sched, R, R, sfcs, caching, mu=0.9)


POLICIES = {
    "greedy": lambda cfg, s: GreedyPolicy(cfg, seed=s),
    "greedy-blind": lambda cfg, s: GreedyPolicy(cfg, knows_caching=False, seed=s),
    "nbp": lambda cfg, s: NbpPolicy(cfg),
    "random": lambda cfg, s: RandomPolicy(s),
    "qcentral": lambda cfg, s: train_central_q(cfg, 300, seed=s),
}


@pytest.mark.invariant
@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(sorted(POLICIES)))
def test_baseline_actions_are_valid(seed, name):
    cfg = fig4_like(seed)
    Simulator(cfg, Checked(POLICIES[name](cfg, seed)), seed=seed).run(150)


@pytest.mark.invariant
@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_greedy_forwards_only_to_hosts(seed):
    cfg = fig4_like(seed)
    sfcs = {s.sfc_id: s for s in cfg.requests.sfcs}
    sim = Simulator(cfg, GreedyPolicy(cfg, seed=seed), seed=seed, record_trace=True)
    sim.run(200)
    for t, v, h, n, f, that, action, cost, outcome in sim.trace:
        if action.startswith("forward") and f <= sfcs[h].length:
            assert sfcs[h].vnf(f) in cfg.caching[int(action.split(":")[1]) - 1]


@pytest.mark.invariant
@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_policies_see_identical_request_streams(seed):
    cfg = fig4_like(seed)
    streams = []
    for name in sorted(POLICIES):
        sim = Simulator(cfg, POLICIES[name](cfg, seed + 1), seed=seed, record_trace=True)
        sim.run(120)
        firsts = {}
        for t, v, h, n, f, that, *_ in sim.trace:
            firsts.setdefault(that, (h, n))
        streams.append((sim.stats.arrivals, sorted(firsts.items())))
    assert all(s == streams[0] for s in streams)
