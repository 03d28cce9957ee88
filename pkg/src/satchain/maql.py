"""Cooperative multi-agent Q-learning for per-slot placement decisions.

Every satellite keeps its own table indexed by slot-in-period, request key
and action. Training explores uniformly; when a request is forwarded, the
receiver's best value for it travels along and serves as the sender's
bootstrap target.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .engine.config import SystemConfig
from .engine.sim import BufferedRequest, RunStats, Simulator, Transition


def catalog_key(y: BufferedRequest, t: int) -> tuple:
    """(SFC id, requester, next stage)."""
    return (y.sfc.sfc_id, y.requester, y.f)


def aged_key(y: BufferedRequest, t: int) -> tuple:
    """``catalog_key`` plus the slots elapsed since the request started.

    Worth it when tolerances are tight enough that the best action depends
    on how much slack is left.
    """
    return (y.sfc.sfc_id, y.requester, y.f, t - y.initiated_at)


def generator_key(y: BufferedRequest, t: int) -> tuple:
    """Coarse key for randomly generated chains: (next VNF, requester).

    The VNF is 0 once the chain is done; the requester only matters then and
    is 0 before. Generated chains rarely repeat, so anything finer leaves most
    rows unvisited.
    """
    if y.f > y.sfc.length:
        return (0, y.requester)
    return (y.sfc.vnf(y.f), 0)


KEY_FUNCTIONS = {"catalog": catalog_key, "aged": aged_key, "generator": generator_key}


@dataclass
class LearningParams:
    learning_rate: float = 0.1
    decayed_rate: float = 0.01
    decay_patience: int = 100
    discount: float = 0.6
    q_init: float = 0.0
    window_episodes: int = 50
    eval_slots: int = 500
    warm_start: bool = True
    deferred: bool = True

    def __post_init__(self):
        for name in ("learning_rate", "decayed_rate", "discount"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


class QTable:
    """Q-values of one satellite, ``rows[(zeta, key)]`` -> values over actions ``1..V+2``.

    A row is created the first time it is written; its reject entry is pinned
    to the penalty from the start. Entries never written read as ``q_init``.
    """

    def __init__(self, owner: int, num_satellites: int, penalty: float, q_init: float = 0.0):
        self.owner = owner
        self.V = num_satellites
        self.penalty = float(penalty)
        self.q_init = float(q_init)
        self.rows: dict[tuple, np.ndarray] = {}
        self.seen: dict[tuple, np.ndarray] = {}
        self.visits: dict[tuple, np.ndarray] = {}

    @property
    def reject(self) -> int:
        return self.V + 2

    def _row(self, zeta: int, key: tuple) -> np.ndarray:
        k = (zeta, key)
        row = self.rows.get(k)
        if row is None:
            row = np.full(self.V + 3, self.q_init)
            seen = np.zeros(self.V + 3, dtype=bool)
            row[self.reject] = self.penalty
            seen[self.reject] = True
            self.rows[k] = row
            self.seen[k] = seen
            self.visits[k] = np.zeros(self.V + 3, dtype=np.int64)
        return row

    def get(self, zeta: int, key: tuple, a: int) -> float:
        row = self.rows.get((zeta, key))
        if row is None:
            return self.penalty if a == self.reject else self.q_init
        return float(row[a])

    def set(self, zeta: int, key: tuple, a: int, value: float):
        if a == self.reject and value != self.penalty:
            raise ValueError("reject entries are pinned to the penalty")
        self._row(zeta, key)[a] = value
        self.seen[(zeta, key)][a] = True

    def best_value(self, zeta: int, key: tuple, actions=None) -> float:
        """Smallest populated value of a row (optionally among ``actions``), else ``q_init``."""
        row = self.rows.get((zeta, key))
        if row is None:
            return self.q_init
        seen = self.seen[(zeta, key)]
        if actions is not None:
            idx = [a for a in actions if seen[a]]
            return float(row[idx].min()) if idx else self.q_init
        return float(row[seen].min())

    def values(self, zeta: int, key: tuple, actions) -> np.ndarray:
        row = self.rows.get((zeta, key))
        if row is None:
            return np.array([self.penalty if a == self.reject else self.q_init for a in actions])
        return row[list(actions)]

    def __len__(self):
        return len(self.rows)

    def to_rows(self):
        """``(v, zeta, h, n, f, a, q)`` for every populated entry; extra key parts join ``f``."""
        for (zeta, key), row in sorted(self.rows.items(), key=lambda kv: repr(kv[0])):
            seen = self.seen[(zeta, key)]
            h, n, *rest = key
            f = ":".join(map(str, rest))
            for a in np.flatnonzero(seen):
                yield (self.owner, zeta, h, n, f, int(a), float(row[a]))


def select_action(table: QTable, zeta: int, key: tuple, valid, mode: str = "eval",
                  rng: np.random.Generator | None = None) -> int:
    """Uniform over ``valid`` when training; argmin Q (lowest action on ties) otherwise."""
    valid = sorted(valid)
    if mode == "train":
        return valid[int(rng.integers(len(valid)))]
    vals = table.values(zeta, key, valid)
    return valid[int(np.argmin(vals))]


def share_on_forward(receiver: QTable, zeta: int, key: tuple) -> float:
    return receiver.best_value(zeta, key)


def update(table: QTable, zeta: int, key: tuple, a: int, cost: float, target: float,
           params: LearningParams, rate: float | None = None) -> float:
    """One step of ``Q <- (1 - rate) Q + rate (cost + discount * target)``.

    With ``params.warm_start`` the rate of an entry's n-th update is
    ``max(rate, 1/n)``, so early estimates are plain sample averages instead
    of being dragged toward ``q_init``.
    """
    if a == table.reject:
        raise ValueError("reject entries are not learned")
    lam = params.learning_rate if rate is None else rate
    row = table._row(zeta, key)
    visits = table.visits[(zeta, key)]
    visits[a] += 1
    if params.warm_start:
        lam = max(lam, 1.0 / visits[a])
    q = float(row[a])
    new = (1.0 - lam) * q + lam * (cost + params.discount * target)
    table.set(zeta, key, a, new)
    return new


def q_bound(penalty: float, discount: float) -> float:
    return penalty + (discount * penalty / (1.0 - discount) if discount < 1 else math.inf)


class MaqlAgents:
    """The set of per-satellite tables plus the training and greedy policies."""

    def __init__(self, config: SystemConfig, params: LearningParams | None = None,
                 key_fn: Callable | None = None, seed: int | None = 0):
        self.config = config
        self.params = params or LearningParams(discount=config.cost.learning_discount)
        self.key_fn = key_fn or (generator_key if config.requests.generator is not None else catalog_key)
        V = config.num_satellites
        self.tables = [None] + [QTable(v, V, config.cost.rejection_penalty, self.params.q_init)
                                for v in range(1, V + 1)]
        self.rng = np.random.default_rng(seed)
        self.rate = self.params.learning_rate
        self.mode = "train"
        self.updates = 0
        self.check_bounds = False
        self.pending: dict[int, Transition] = {}

    # Policy protocol
    def act(self, sim: Simulator, v: int, y: BufferedRequest, valid, t: int) -> int:
        zeta = self.config.topology.zeta(t)
        key = self.key_fn(y, t)
        table = self.tables[v]
        if self.mode == "train" and self.pending:
            prev = self.pending.pop(id(y), None)
            if prev is not None:
                self._learn(prev, table.best_value(zeta, key, valid))
        return select_action(table, zeta, key, valid, self.mode, self.rng)

    def _learn(self, tr: Transition, target: float):
        table = self.tables[tr.v]
        q = update(table, tr.zeta, tr.key, tr.action, tr.cost, target, self.params, self.rate)
        self.updates += 1
        if self.check_bounds:
            hi = q_bound(table.penalty, self.params.discount)
            assert -1e-9 <= q <= hi + 1e-9, f"Q-value {q} outside [0, {hi}]"

    def observe(self, tr: Transition):
        if self.mode != "train":
            return
        table = self.tables[tr.v]
        if tr.action == table.reject:
            table.set(tr.zeta, tr.key, tr.action, table.penalty)
            return
        if tr.terminal == "completed":
            target = 0.0
        elif tr.terminal == "expired":
            target = table.penalty
        elif self.params.deferred:
            # learn once the next holder sees which actions are actually open
            self.pending[id(tr.request)] = tr
            return
        elif tr.next_holder != tr.v:
            target = share_on_forward(self.tables[tr.next_holder], tr.next_zeta, tr.next_key)
        else:
            target = table.best_value(tr.next_zeta, tr.next_key)
        self._learn(tr, target)

    def simulator(self, seed: int | None, record_trace: bool = False, mode: str = "eval") -> Simulator:
        sim = Simulator(self.config, policy=self, seed=seed, record_trace=record_trace,
                        observer=self.observe if mode == "train" else None)
        sim.key_fn = self.key_fn
        return sim

    def evaluate(self, slots: int, seed: int | None = 0, record_trace: bool = False) -> Simulator:
        """Greedy run with frozen tables; returns the finished simulator."""
        prev = self.mode
        self.mode = "eval"
        try:
            sim = self.simulator(seed, record_trace)
            sim.run(slots)
        finally:
            self.mode = prev
        return sim

    def write_tables(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["v", "zeta", "h", "n", "f", "a", "q"])
            for table in self.tables[1:]:
                w.writerows(table.to_rows())


@dataclass
class TrainingResult:
    agents: MaqlAgents
    trace: list = field(default_factory=list)     # (episode, serving_rate, avg_cost)
    decayed_at: int | None = None

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "serving_rate", "avg_cost"])
            w.writerows(self.trace)


def train(config: SystemConfig, params: LearningParams | None = None, episodes: int = 2000,
          seed: int = 0, eval_seed: int = 10_000, key_fn: Callable | None = None,
          agents: MaqlAgents | None = None) -> TrainingResult:
    """Explore uniformly for ``episodes`` periods, scoring the greedy policy after every window.

    One episode is one system period of slots. After ``decay_patience``
    windows without a better greedy serving rate the learning rate drops to
    its decayed value.
    """
    agents = agents or MaqlAgents(config, params, key_fn, seed)
    p = agents.params
    T = config.period
    sim = agents.simulator(seed + 1, mode="train")
    agents.mode = "train"
    result = TrainingResult(agents)
    best, stale = -1.0, 0
    done = 0
    while done < episodes:
        n = min(p.window_episodes, episodes - done)
        for _ in range(n * T):
            sim.step()
        done += n
        stats = agents.evaluate(p.eval_slots, eval_seed).stats
        rate = stats.serving_rate()
        result.trace.append((done, rate, stats.average_request_cost()))
        if rate > best + 1e-12:
            best, stale = rate, 0
        else:
            stale += 1
            if stale >= p.decay_patience and agents.rate != p.decayed_rate:
                agents.rate = p.decayed_rate
                result.decayed_at = done
    agents.mode = "eval"
    return result


def evaluate(agents: MaqlAgents, slots: int, seed: int = 0) -> RunStats:
    return agents.evaluate(slots, seed).stats
