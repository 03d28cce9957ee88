"""Slot-by-slot simulation: request buffers, per-slot resources, actions and metrics.

Actions on satellite ``v`` are integers in ``1..V+2``: ``u != v`` forwards to
``u``, ``v`` itself stalls, ``V+1`` executes the next VNF and ``V+2``
rejects.
"""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol

import numpy as np

from ..services import ServiceRequest, SfcSpec, sample_request
from .config import SystemConfig
from .placement import CostModel

TRACE_FIELDS = ("t", "v", "h", "n", "f", "that", "action", "cost", "outcome")


def execute_action(V: int) -> int:
    return V + 1


def reject_action(V: int) -> int:
    return V + 2


def action_name(a: int, v: int, V: int) -> str:
    if a == V + 1:
        return "execute"
    if a == V + 2:
        return "reject"
    if a == v:
        return "stall"
    return f"forward:{a}"


@dataclass(eq=False)
class BufferedRequest:
    sfc: SfcSpec
    requester: int
    f: int
    initiated_at: int
    busy_until: int = 0
    cost: float = 0.0
    discounted: float = 0.0

    @property
    def done(self) -> bool:
        """All stages ran; the result is on its way back to the requester."""
        return self.f > self.sfc.length

    @property
    def payload(self) -> int:
        return self.sfc.payload(self.f)

    def age(self, t: int) -> int:
        return t - self.initiated_at

    def key(self, t: int) -> tuple:
        return (self.sfc.sfc_id, self.requester, self.f, t - self.initiated_at)

    def expired_at(self, t: int) -> bool:
        """True when the request can no longer finish by the end of slot ``t``."""
        return t - self.initiated_at + 1 > self.sfc.delay_tolerance


def instant_cost(model: CostModel, y: BufferedRequest, a: int, v: int, V: int,
                 receiver_storage: int | None = None) -> float:
    if a == V + 2:
        return model.rejection_penalty
    if a == V + 1:
        return float(y.sfc.exec_slots(y.f, v))
    if a == v:
        return 1.0
    if receiver_storage is not None and y.payload > receiver_storage:
        return model.rejection_penalty
    return 1.0


def discounted_request_cost(costs: Iterable[float], gamma: float, ages: Iterable[int]) -> float:
    """Sum of ``gamma ** (age + 1) * cost`` over one request's slots."""
    return float(sum(gamma ** (a + 1) * c for c, a in zip(costs, ages)))


def serving_rate(slot_costs, horizon: int | None = None, penalty: float = 100.0) -> float:
    """Fraction of slots whose request (if any) was served; idle slots count as served."""
    c = np.asarray(slot_costs, dtype=float)
    if horizon is not None:
        c = c[:horizon]
    if c.size == 0:
        return 1.0
    return float(np.mean(c < penalty))


@dataclass
class Transition:
    """What one decision led to, as seen by a learning policy."""

    v: int
    key: tuple
    action: int
    cost: float
    zeta: int
    next_holder: int | None = None
    next_key: tuple | None = None
    next_zeta: int | None = None
    terminal: str | None = None
    request: BufferedRequest | None = None


class Policy(Protocol):
    def act(self, sim: "Simulator", v: int, y: BufferedRequest, valid: list[int], t: int) -> int: ...


@dataclass
class RunStats:
    penalty: float
    slot_costs: list = field(default_factory=list)
    arrivals: int = 0
    completed: int = 0
    rejected: int = 0
    expired: int = 0
    total_delay: float = 0.0
    discounted_costs: list = field(default_factory=list)

    def serving_rate(self) -> float:
        return serving_rate(self.slot_costs, penalty=self.penalty)

    def request_serving_rate(self) -> float:
        return self.completed / self.arrivals if self.arrivals else 1.0

    def average_delay(self) -> float:
        return self.total_delay / self.arrivals if self.arrivals else 0.0

    def average_slot_cost(self) -> float:
        return float(np.mean(self.slot_costs)) if self.slot_costs else 0.0

    def average_request_cost(self) -> float:
        return float(np.mean(self.discounted_costs)) if self.discounted_costs else 0.0

    def summary(self) -> dict:
        return {
            "slots": len(self.slot_costs),
            "arrivals": self.arrivals,
            "completed": self.completed,
            "rejected": self.rejected,
            "expired": self.expired,
            "serving_rate": self.serving_rate(),
            "request_serving_rate": self.request_serving_rate(),
            "average_delay": self.average_delay(),
            "average_slot_cost": self.average_slot_cost(),
            "average_request_cost": self.average_request_cost(),
        }


class Simulator:
    """Owns the world state and advances it one slot at a time.

    Resources are accounted per slot. A stalling or forwarding holder keeps
    the request's payload in its storage for that slot; an execution holds
    compute for its whole window. Within a slot satellites act in ascending
    id order and each one handles its buffer oldest request first, so every
    check sees the resources left by the decisions already made.
    """

    def __init__(self, config: SystemConfig, policy: Policy | None = None, seed: int | None = 0,
                 rng: np.random.Generator | None = None, arrivals: bool = True,
                 record_trace: bool = False, observer: Callable[[Transition], None] | None = None,
                 script: dict[int, ServiceRequest] | None = None):
        self.config = config
        self.policy = policy
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.arrivals_on = arrivals
        self.script = script    # slot -> request, replaces sampling when given
        self.observer = observer
        V = config.num_satellites
        self.V = V
        self.t = 1
        self.buffers: list[list[BufferedRequest]] = [[] for _ in range(V + 1)]
        self.committed: list[dict[int, int]] = [defaultdict(int) for _ in range(V + 1)]
        self.compute_free = [0] + list(config.compute_capacity)
        self.storage_free = [0] + list(config.storage_capacity)
        self.stats = RunStats(config.cost.rejection_penalty)
        self._slot_index: dict[int, int] = {}
        self.trace: list[tuple] | None = [] if record_trace else None
        self._check_every_slot = False
        self.key_fn: Callable[[BufferedRequest, int], tuple] = BufferedRequest.key

    # -- resources -------------------------------------------------------
    def _open_slot(self, t: int):
        cfg = self.config
        for v in range(1, self.V + 1):
            self.committed[v].pop(t - 1, None)
            self.compute_free[v] = cfg.compute_capacity[v - 1] - self.committed[v].get(t, 0)
            self.storage_free[v] = cfg.storage_capacity[v - 1]

    def valid_actions(self, y: BufferedRequest, v: int, t: int | None = None) -> list[int]:
        t = self.t if t is None else t
        V, cfg = self.V, self.config
        g = y.payload
        out = []
        holds = self.storage_free[v] >= g
        if holds:
            for u in cfg.topology.neighbors(v, t):
                if g == 0 or (y.done and u == y.requester) or self.storage_free[u] >= g:
                    out.append(u)
            out.append(v)
        if (not y.done and y.sfc.vnf(y.f) in cfg.caching[v - 1]
                and self.compute_free[v] >= y.sfc.compute[y.f - 1]
                and not y.expired_at(t + y.sfc.exec_slots(y.f, v) - 1)):
            out.append(V + 1)
        out.append(V + 2)
        out.sort()
        return out

    # -- bookkeeping -----------------------------------------------------
    def _record(self, t, v, y, a_name, cost, outcome="", f=None):
        if self.trace is not None:
            self.trace.append((t, v, y.sfc.sfc_id, y.requester, y.f if f is None else f,
                               y.initiated_at, a_name, cost, outcome))

    def _charge(self, y: BufferedRequest, cost: float, t: int):
        y.cost += cost
        y.discounted += self.config.cost.learning_discount ** (y.age(t) + 1) * cost

    def _resolve(self, y: BufferedRequest, outcome: str, t: int):
        st = self.stats
        delay = t - y.initiated_at + 1
        st.total_delay += delay
        idx = self._slot_index.get(y.initiated_at)
        if outcome == "completed":
            st.completed += 1
            if idx is not None:
                st.slot_costs[idx] = float(delay)
        else:
            if outcome == "rejected":
                st.rejected += 1
            else:
                st.expired += 1
            if idx is not None:
                st.slot_costs[idx] = st.penalty
        st.discounted_costs.append(y.discounted)

    def _arrive(self, req: ServiceRequest):
        y = BufferedRequest(req.sfc, req.requester, 1, req.initiated_at)
        self.stats.arrivals += 1
        self.stats.slot_costs[self._slot_index[req.initiated_at]] = 0.0
        self.buffers[req.requester].append(y)

    # -- the slot ----------------------------------------------------------
    def step(self, actions: dict | None = None) -> int:
        """Advance one slot. ``actions`` may fix decisions as ``{(v, initiated_at): action}``."""
        t = self.t
        cfg, V = self.config, self.V
        topo, penalty = cfg.topology, cfg.cost.rejection_penalty
        self._open_slot(t)
        self._slot_index[t] = len(self.stats.slot_costs)
        self.stats.slot_costs.append(0.0)
        if self.arrivals_on:
            if self.script is not None:
                req = self.script.get(t)
            else:
                req = sample_request(cfg.requests, t, self.rng)
            if req is not None:
                self._arrive(req)
        if actions:
            for (v, that) in actions:
                if not any(y.initiated_at == that for y in self.buffers[v]):
                    raise ValueError(f"no request initiated at {that} in the buffer of satellite {v}")
        zeta = topo.zeta(t)
        incoming: list[tuple[int, BufferedRequest]] = []
        for v in range(1, V + 1):
            keep = []
            for y in self.buffers[v]:
                if y.busy_until >= t:
                    keep.append(y)
                    continue
                if y.expired_at(t):
                    self._charge(y, penalty, t)
                    self._record(t, v, y, "expire", penalty, "expired")
                    self._resolve(y, "expired", t)
                    continue
                valid = self.valid_actions(y, v, t)
                key = self.key_fn(y, t) if self.observer else None
                if actions and (v, y.initiated_at) in actions:
                    a = actions[(v, y.initiated_at)]
                    if a not in valid:
                        raise ValueError(f"action {a} is not valid for request {y.initiated_at} on satellite {v}")
                else:
                    a = self.policy.act(self, v, y, valid, t)
                cost = instant_cost(cfg.cost, y, a, v, V)
                f_before = y.f
                self._charge(y, cost, t)
                tr = Transition(v, key, a, cost, zeta, request=y) if self.observer else None
                outcome = ""
                if a == V + 2:
                    outcome = "rejected"
                    self._resolve(y, "rejected", t)
                    if tr:
                        tr.terminal = "rejected"
                elif a == V + 1:
                    d = y.sfc.exec_slots(y.f, v)
                    q = y.sfc.compute[y.f - 1]
                    for k in range(t, t + d):
                        self.committed[v][k] += q
                    self.compute_free[v] -= q
                    y.busy_until = t + d - 1
                    y.f += 1
                    if y.done and v == y.requester:
                        outcome = "completed"
                        self._resolve(y, "completed", t + d - 1)
                        if tr:
                            tr.terminal = "completed"
                    else:
                        keep.append(y)
                        if tr:
                            self._fill_next(tr, y, v, t + d)
                else:
                    self.storage_free[v] -= y.payload
                    if a == v:
                        keep.append(y)
                    elif y.done and a == y.requester:
                        outcome = "completed"
                        self._resolve(y, "completed", t)
                        if tr:
                            tr.terminal = "completed"
                    else:
                        incoming.append((a, y))
                    if tr and not tr.terminal:
                        self._fill_next(tr, y, a, t + 1)
                self._record(t, v, y, action_name(a, v, V), cost, outcome, f_before)
                if tr:
                    self.observer(tr)
            self.buffers[v] = keep
        for u, y in incoming:
            self.buffers[u].append(y)
        for v in range(1, V + 1):
            if len(self.buffers[v]) > 1:
                self.buffers[v].sort(key=lambda y: y.initiated_at)
        if self._check_every_slot:
            self.check_invariants()
        self.t += 1
        return t

    def _fill_next(self, tr: Transition, y: BufferedRequest, holder: int, slot: int):
        if y.expired_at(slot):
            tr.terminal = "expired"
            return
        tr.next_holder = holder
        tr.next_key = self.key_fn(y, slot)
        tr.next_zeta = self.config.topology.zeta(slot)

    def check_invariants(self):
        cfg = self.config
        for v in range(1, self.V + 1):
            used = self.committed[v].get(self.t, 0)
            assert self.compute_free[v] >= 0 and self.storage_free[v] >= 0, f"negative resources on {v}"
            assert used + self.compute_free[v] == cfg.compute_capacity[v - 1]
            assert self.storage_free[v] <= cfg.storage_capacity[v - 1]

    def pending(self) -> int:
        return sum(len(b) for b in self.buffers)

    def run(self, slots: int, drain: bool = True) -> RunStats:
        """Simulate ``slots`` slots with arrivals, then (optionally) let in-flight requests resolve."""
        for _ in range(slots):
            self.step()
        if drain:
            self.drain()
        return self.stats

    def drain(self):
        on = self.arrivals_on
        self.arrivals_on = False
        n_slots = len(self.stats.slot_costs)
        while self.pending():
            self.step()
        del self.stats.slot_costs[n_slots:]
        self.arrivals_on = on

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_FIELDS)
            w.writerows(self.trace or [])


def valid_actions(sim: Simulator, y: BufferedRequest, v: int, t: int | None = None) -> list[int]:
    return sim.valid_actions(y, v, t)
