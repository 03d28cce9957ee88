"""Satellite set and periodic inter-satellite link (ISL) schedules."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class IslSchedule:
    """Activation pattern of one link.

    The link is active for ``duration`` consecutive slots out of every
    ``period`` slots; ``phase`` is the slot-within-period (0-based) at which
    an active run starts, so ``phase=0`` means active at ``t=1``.
    """

    period: int
    duration: int
    phase: int = 0

    def __post_init__(self):
        if self.period < 1:
            raise ValueError(f"period must be >= 1, got {self.period}")
        if not 1 <= self.duration <= self.period:
            raise ValueError(
                f"duration must be in [1, period={self.period}], got {self.duration}")
        if not 0 <= self.phase < self.period:
            raise ValueError(f"phase must be in [0, {self.period}), got {self.phase}")

    def active(self, t: int) -> bool:
        return (t - 1 - self.phase) % self.period < self.duration


ALWAYS_ON = IslSchedule(period=1, duration=1)


def slot_in_period(t: int, period: int) -> int:
    """Position of slot ``t`` inside a period, in ``[1, period]``.

    Multiples of ``period`` map to ``period`` rather than 0.
    """
    if t < 1 or period < 1:
        raise ValueError(f"need t >= 1 and period >= 1, got t={t}, period={period}")
    return (t - 1) % period + 1


def _lcm(values: Iterable[int]) -> int:
    return reduce(lambda a, b: a * b // math.gcd(a, b), values, 1)


class Topology:
    """Satellites ``1..V`` and the symmetric schedule of every link.

    Pairs without a schedule have no link at all. A satellite is always
    connected to itself.
    """

    def __init__(self, num_satellites: int, schedules: Mapping[tuple[int, int], IslSchedule]):
        if num_satellites < 1:
            raise ValueError("need at least one satellite")
        self.num_satellites = num_satellites
        self.schedules: dict[tuple[int, int], IslSchedule] = {}
        for (v, u), sched in schedules.items():
            self._check(v)
            self._check(u)
            if v == u:
                raise ValueError(f"self-link ({v},{u}) cannot carry a schedule")
            key = (min(v, u), max(v, u))
            if key in self.schedules and self.schedules[key] != sched:
                raise ValueError(f"conflicting schedules for pair {key}")
            self.schedules[key] = sched
        self.system_period = _lcm(s.period for s in self.schedules.values())
        # active[z, v, u] for z = slot_in_period - 1; index 0 unused for 1-based ids
        V, T = num_satellites, self.system_period
        table = np.zeros((T, V + 1, V + 1), dtype=bool)
        for z in range(T):
            for v in range(1, V + 1):
                table[z, v, v] = True
            for (v, u), sched in self.schedules.items():
                on = sched.active(z + 1)
                table[z, v, u] = table[z, u, v] = on
        self._table = table
        self._neighbors = [
            [tuple(u for u in range(1, V + 1) if u != v and table[z, v, u]) for v in range(V + 1)]
            for z in range(T)
        ]

    def _check(self, v: int):
        if not (isinstance(v, (int, np.integer)) and 1 <= v <= self.num_satellites):
            raise ValueError(f"unknown satellite id {v!r} (V={self.num_satellites})")

    @property
    def satellites(self) -> range:
        return range(1, self.num_satellites + 1)

    def schedule(self, v: int, u: int) -> IslSchedule | None:
        return self.schedules.get((min(v, u), max(v, u)))

    def is_active(self, v: int, u: int, t: int) -> bool:
        self._check(v)
        self._check(u)
        if t < 1:
            raise ValueError(f"slot index must be >= 1, got {t}")
        if v == u:
            return True
        sched = self.schedule(v, u)
        return sched is not None and sched.active(t)

    def zeta(self, t: int) -> int:
        return slot_in_period(t, self.system_period)

    def neighbors(self, v: int, t: int) -> tuple[int, ...]:
        """Satellites other than ``v`` reachable over an active link at slot ``t``."""
        return self._neighbors[(t - 1) % self.system_period][v]

    def next_active_slot(self, v: int, u: int, t: int) -> int | None:
        """Earliest slot ``>= t`` at which link (v, u) is active; None without a link."""
        self._check(v)
        self._check(u)
        if v == u:
            return t
        sched = self.schedule(v, u)
        if sched is None:
            return None
        offset = (t - 1 - sched.phase) % sched.period
        if offset < sched.duration:
            return t
        return t + sched.period - offset

    @classmethod
    def from_groups(
        cls,
        groups: Sequence[Sequence[int]],
        inter_periods: Mapping[tuple[int, int], int] | int,
        *,
        intra: IslSchedule = ALWAYS_ON,
        duration: int = 1,
        phase: int = 0,
    ) -> "Topology":
        """Build a topology from satellite subgroups.

        Links inside a group follow ``intra``; links between groups ``i`` and
        ``j`` (0-based group indices) get period ``inter_periods[(i, j)]``.
        """
        num = max(v for g in groups for v in g)
        owner = {}
        for gi, g in enumerate(groups):
            for v in g:
                if v in owner:
                    raise ValueError(f"satellite {v} appears in two groups")
                owner[v] = gi
        if sorted(owner) != list(range(1, num + 1)):
            raise ValueError("groups must cover satellites 1..V exactly")
        schedules = {}
        for v in range(1, num + 1):
            for u in range(v + 1, num + 1):
                gv, gu = owner[v], owner[u]
                if gv == gu:
                    schedules[(v, u)] = intra
                    continue
                if isinstance(inter_periods, int):
                    period = inter_periods
                else:
                    key = (min(gv, gu), max(gv, gu))
                    period = inter_periods[key]
                schedules[(v, u)] = IslSchedule(period, min(duration, period), phase % period)
        return cls(num, schedules)

    def __repr__(self):
        return f"Topology(V={self.num_satellites}, T={self.system_period}, links={len(self.schedules)})"
