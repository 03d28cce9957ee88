import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import link, make_config
from satchain.maql import (KEY_FUNCTIONS, LearningParams, MaqlAgents, QTable, catalog_key, generator_key, q_bound,
                           select_action, share_on_forward, train, update)
from satchain.engine import BufferedRequest
from satchain.services import make_sfc, table3_catalog

PLAIN = LearningParams(learning_rate=0.1, discount=0.6, warm_start=False)


def table(V=2, q_init=0.0):
    return QTable(1, V, 100.0, q_init)


def test_eval_ties_pick_lowest_action():
    t = table()
    assert select_action(t, 1, ("k",), [4, 2, 3]) == 2


def test_eval_strict_argmin():
    t = table()
    for a, q in ((1, 5.0), (2, 7.0), (3, 1.0)):
        t.set(1, ("k",), a, q)
    assert select_action(t, 1, ("k",), [1, 2, 3, 4]) == 3


def test_train_picks_uniformly():
    t = table()
    rng = np.random.default_rng(0)
    picks = [select_action(t, 1, ("k",), [1, 4], "train", rng) for _ in range(10_000)]
    assert abs(picks.count(1) / 10_000 - 0.5) <= 0.02
    rng2 = np.random.default_rng(0)
    assert picks[:50] == [select_action(t, 1, ("k",), [1, 4], "train", rng2) for _ in range(50)]


def test_update_rule_by_hand():
    t = table()
    t.set(1, ("k",), 1, 10.0)
    assert update(t, 1, ("k",), 1, 1.0, 5.0, PLAIN) == pytest.approx(9.4)


def test_zero_rate_keeps_value():
    t = table()
    t.set(1, ("k",), 2, 7.0)
    p = LearningParams(learning_rate=0.0, warm_start=False)
    assert update(t, 1, ("k",), 2, 3.0, 9.0, p) == 7.0


def test_full_rate_undiscounted_overwrites():
    t = table()
    t.set(1, ("k",), 2, 7.0)
    p = LearningParams(learning_rate=1.0, discount=0.0, warm_start=False)
    assert update(t, 1, ("k",), 2, 2.0, 50.0, p) == 2.0


def test_warm_start_averages_first_samples():
    t = table()
    p = LearningParams(learning_rate=0.1, discount=0.0, warm_start=True)
    update(t, 1, ("k",), 1, 4.0, 0.0, p)
    assert t.get(1, ("k",), 1) == 4.0
    update(t, 1, ("k",), 1, 2.0, 0.0, p)
    assert t.get(1, ("k",), 1) == 3.0


def test_reject_entries_cannot_be_learned():
    t = table()
    with pytest.raises(ValueError):
        update(t, 1, ("k",), t.reject, 1.0, 0.0, PLAIN)
    with pytest.raises(ValueError):
        t.set(1, ("k",), t.reject, 5.0)


def test_shared_value_rules():
    t = table(q_init=3.0)
    assert share_on_forward(t, 1, ("new",)) == 3.0
    t.set(1, ("a",), 3, 2.0)
    t.set(1, ("a",), 1, 5.0)
    assert share_on_forward(t, 1, ("a",)) == 2.0
    t.set(1, ("b",), t.reject, 100.0)
    assert share_on_forward(t, 1, ("b",)) == 100.0


def test_unseen_entries_read_initial_value():
    t = table(q_init=1.5)
    assert t.get(2, ("x",), 1) == 1.5
    assert t.get(2, ("x",), t.reject) == 100.0


def test_key_functions():
    s = make_sfc(9, (4, 2), 1, 1)
    y = BufferedRequest(s, 3, 2, 5)
    assert catalog_key(y, 8) == (9, 3, 2)
    assert KEY_FUNCTIONS["aged"](y, 8) == (9, 3, 2, 3)
    assert generator_key(y, 8) == (2, 0)
    y.f = 3
    assert generator_key(y, 8) == (0, 3)


def test_table_rows_serialise():
    t = table()
    t.set(2, (1, 2, 1), 3, 4.5)
    rows = list(t.to_rows())
    assert (1, 2, 1, 2, "1", 3, 4.5) in rows
    assert (1, 2, 1, 2, "1", 4, 100.0) in rows


# -- training --------------------------------------------------------------------

def relay_config(R=5, mu=0.9):
    """Two satellites; each caches one stage of a two-stage chain, linked every other slot."""
    sfc = make_sfc(1, (1, 2), 1, 1, delay_tolerance=6)
    return make_config(2, {(1, 2): link(2)}, R, R, [sfc], caching=({1}, {2}), mu=mu)


@pytest.fixture(scope="module")
def trained():
    cfg = relay_config()
    params = LearningParams(window_episodes=100, eval_slots=300, decay_patience=5)
    # the age in the key lets the agents see the deadline coming
    agents = MaqlAgents(cfg, params, KEY_FUNCTIONS["aged"], seed=0)
    agents.check_bounds = True
    res = train(cfg, params, 3000, seed=0, agents=agents)
    return cfg, res


def test_training_learns_to_serve(trained):
    cfg, res = trained
    stats = res.agents.evaluate(1000, seed=5).stats
    assert stats.serving_rate() == 1.0
    assert res.trace[-1][1] == 1.0
    assert [e for e, _, _ in res.trace] == list(range(100, 3001, 100))


def test_zero_capacity_learns_nothing_but_rejection():
    cfg = relay_config(R=0, mu=1.0)
    res = train(cfg, LearningParams(window_episodes=50, eval_slots=200), 200, seed=1)
    assert res.agents.evaluate(300, seed=2).stats.serving_rate() == 0.0


@pytest.mark.invariant
def test_q_values_bounded_and_rejects_pinned(trained):
    cfg, res = trained
    hi = q_bound(100.0, 0.6)
    assert res.agents.updates > 1000
    for t in res.agents.tables[1:]:
        for (zeta, key), row in t.rows.items():
            seen = t.seen[(zeta, key)]
            assert row[t.reject] == 100.0
            assert np.all(row[seen] >= 0) and np.all(row[seen] <= hi)


@pytest.mark.invariant
def test_tables_keyed_by_slot_in_period(trained):
    cfg, res = trained
    zetas = {zeta for t in res.agents.tables[1:] for zeta, _ in t.rows}
    assert zetas == set(range(1, cfg.period + 1))


@pytest.mark.invariant
def test_every_lookup_uses_current_slot_in_period():
    from satchain.topology import slot_in_period
    cat = table3_catalog(delay_tolerance=5)
    cfg = make_config(3, {(1, 2): link(2), (2, 3): link(3)}, 6, 6, [cat[1], cat[3]],
                      caching=({1, 2}, {2}, {3}))
    agents = MaqlAgents(cfg, LearningParams(), seed=0)
    sim = agents.simulator(0, mode="train")
    seen = []
    for t in agents.tables[1:]:
        for name in ("values", "best_value"):
            orig = getattr(t, name)

            def spy(zeta, *a, _orig=orig, **kw):
                seen.append((zeta, sim.t))
                return _orig(zeta, *a, **kw)
            setattr(t, name, spy)
    for _ in range(200):
        sim.step()
    assert len(seen) > 100
    assert all(z == slot_in_period(t, cfg.period) for z, t in seen)


@pytest.mark.invariant
def test_evaluation_is_pure(trained):
    cfg, res = trained
    before = {k: v.copy() for k, v in res.agents.tables[1].rows.items()}
    a = res.agents.evaluate(300, seed=9, record_trace=True).trace
    b = res.agents.evaluate(300, seed=9, record_trace=True).trace
    assert a == b
    assert all(np.array_equal(before[k], v) for k, v in res.agents.tables[1].rows.items())


@pytest.mark.invariant
@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 200), min_size=4, max_size=4), st.integers(1, 50),
       st.lists(st.sampled_from([1, 2, 3, 4]), min_size=1, unique=True))
def test_argmin_invariant_to_row_offset(values, c, valid):
    t = table()
    for a, q in zip((1, 2, 3), values):
        t.set(1, ("k",), a, q)
    before = select_action(t, 1, ("k",), valid)
    row = t.rows[(1, ("k",))]
    row[1:] += c
    assert select_action(t, 1, ("k",), valid) == before


@pytest.mark.invariant
@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.0, 0.3, 0.6, 0.9]))
def test_bounds_hold_during_training(seed, delta):
    cat = table3_catalog(delay_tolerance=5)
    cfg = make_config(3, {(1, 2): link(2), (2, 3): link(3), (1, 3): link(4)}, 6, 6, [cat[1], cat[3]],
                      caching=({1, 2}, {2}, {3}), mu=0.9)
    params = LearningParams(discount=delta, window_episodes=20, eval_slots=50)
    agents = MaqlAgents(cfg, params, seed=seed)
    agents.check_bounds = True
    train(cfg, params, 40, seed=seed, agents=agents)
    for t in agents.tables[1:]:
        for row in t.rows.values():
            assert row[t.reject] == 100.0
