import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satchain.topology import ALWAYS_ON, IslSchedule, Topology, slot_in_period

FIG1 = IslSchedule(period=3, duration=2, phase=0)


def pair(sched):
    return Topology(2, {(1, 2): sched})


def test_example_schedule_activation_pattern():
    top = pair(FIG1)
    assert [top.is_active(1, 2, t) for t in (1, 2, 3, 4)] == [True, True, False, True]


def test_full_duration_link_is_always_active():
    top = pair(IslSchedule(5, 5))
    assert all(top.is_active(1, 2, t) for t in range(1, 30))


def test_self_link_always_active():
    top = pair(IslSchedule(4, 1, 2))
    assert all(top.is_active(2, 2, t) for t in range(1, 10))


def test_unknown_satellite_rejected():
    top = pair(FIG1)
    with pytest.raises(ValueError, match="unknown satellite"):
        top.is_active(1, 3, 1)
    with pytest.raises(ValueError):
        top.is_active(0, 1, 1)


def test_missing_pair_has_no_link():
    top = Topology(3, {(1, 2): FIG1})
    assert not top.is_active(1, 3, 1)
    assert top.next_active_slot(1, 3, 1) is None


@pytest.mark.parametrize("periods,expected", [((2, 4, 4), 4), ((3,), 3), ((2, 3), 6)])
def test_system_period_is_lcm(periods, expected):
    V = len(periods) + 1
    top = Topology(V, {(1, i + 2): IslSchedule(T, 1) for i, T in enumerate(periods)})
    assert top.system_period == expected == math.lcm(*periods)


@pytest.mark.parametrize("t,T,zeta", [(3, 4, 3), (5, 4, 1), (8, 4, 4), (1, 1, 1)])
def test_slot_in_period(t, T, zeta):
    assert slot_in_period(t, T) == zeta


def test_slot_in_period_rejects_bad_input():
    with pytest.raises(ValueError):
        slot_in_period(0, 4)


@pytest.mark.parametrize("sched,t,expected", [(FIG1, 3, 4), (FIG1, 2, 2), (IslSchedule(4, 1, 0), 2, 5)])
def test_next_active_slot(sched, t, expected):
    assert pair(sched).next_active_slot(1, 2, t) == expected


def test_invalid_schedules_rejected():
    with pytest.raises(ValueError):
        IslSchedule(3, 4)
    with pytest.raises(ValueError):
        IslSchedule(3, 1, 3)
    with pytest.raises(ValueError):
        Topology(2, {(1, 2): FIG1, (2, 1): IslSchedule(2, 1)})


def test_groups_expand_to_pair_schedules():
    top = Topology.from_groups([[1, 3], [2]], {(0, 1): 4}, intra=IslSchedule(2, 1))
    assert top.schedule(1, 3) == IslSchedule(2, 1)
    assert top.schedule(1, 2) == IslSchedule(4, 1) == top.schedule(2, 3)
    assert top.system_period == 4
    top = Topology.from_groups([[1, 2], [3]], 5)
    assert top.schedule(1, 2) == ALWAYS_ON and top.schedule(2, 3).period == 5


def test_groups_must_partition_satellites():
    with pytest.raises(ValueError):
        Topology.from_groups([[1, 2], [2, 3]], 2)
    with pytest.raises(ValueError):
        Topology.from_groups([[1], [3]], 2)


# -- properties -------------------------------------------------------------------

@st.composite
def schedules(draw):
    T = draw(st.integers(1, 7))
    tau = draw(st.integers(1, T))
    phase = draw(st.integers(0, T - 1))
    return IslSchedule(T, tau, phase)


@st.composite
def topologies(draw):
    V = draw(st.integers(2, 4))
    pairs = [(v, u) for v in range(1, V + 1) for u in range(v + 1, V + 1)]
    chosen = draw(st.lists(st.sampled_from(pairs), min_size=1, unique=True))
    return Topology(V, {p: draw(schedules()) for p in chosen})


@pytest.mark.invariant
@settings(max_examples=60, deadline=None)
@given(topologies())
def test_activation_is_periodic_in_system_period(top):
    T = top.system_period
    for v in top.satellites:
        for u in top.satellites:
            for t in range(1, 10 * T + 1):
                assert top.is_active(v, u, t) == top.is_active(v, u, t + T)


@pytest.mark.invariant
@settings(max_examples=80, deadline=None)
@given(schedules())
def test_active_runs_have_exact_duration(sched):
    top = pair(sched)
    T, tau = sched.period, sched.duration
    pattern = [top.is_active(1, 2, t) for t in range(1, 4 * T + 1)]
    if tau == T:
        assert all(pattern)
        return
    # maximal runs strictly inside the window, so truncated edge runs are ignored
    runs, cur, seen_off = [], 0, False
    for on in pattern:
        if on:
            cur += 1
        else:
            if cur and seen_off:
                runs.append(cur)
            cur, seen_off = 0, True
    assert runs and all(r == tau for r in runs)


@pytest.mark.invariant
@settings(max_examples=60, deadline=None)
@given(topologies(), st.integers(1, 100))
def test_activation_is_symmetric(top, t):
    for v in top.satellites:
        for u in top.satellites:
            assert top.is_active(v, u, t) == top.is_active(u, v, t)
            assert top.neighbors(v, t) == tuple(w for w in top.satellites if w != v and top.is_active(v, w, t))


@pytest.mark.invariant
@given(st.integers(1, 50), st.integers(1, 500))
def test_slot_in_period_range_and_periodicity(T, t):
    z = slot_in_period(t, T)
    assert 1 <= z <= T
    assert slot_in_period(t + T, T) == z
    assert (z - t) % T == 0


@pytest.mark.invariant
@settings(max_examples=80, deadline=None)
@given(schedules(), st.integers(1, 60))
def test_next_active_slot_matches_scan(sched, t):
    top = pair(sched)
    scan = next(s for s in range(t, t + sched.period + 1) if top.is_active(1, 2, s))
    assert top.next_active_slot(1, 2, t) == scan
