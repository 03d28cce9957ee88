"""Reference placement policies: greedy forwarding, one-shot planners and random choice.

All policies plug into :class:`~satchain.engine.Simulator` through the same
``act`` hook as the learned agents, so a fixed scenario and seed yields the
same request stream whichever policy runs.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .engine.config import SystemConfig
from .engine.placement import Placement
from .engine.sim import BufferedRequest, Simulator
from .topology import Topology


def link_delay(topology: Topology, v: int, u: int, t: int) -> float:
    """Slots from ``t`` until data sent from ``v`` has reached ``u`` (wait plus one transfer)."""
    if v == u:
        return 0.0
    nxt = topology.next_active_slot(v, u, t)
    return math.inf if nxt is None else float(nxt - t + 1)


def greedy_cost(topology: Topology, v: int, u: int, t: int) -> float:
    """Round-trip score: ``v -> u`` starting at ``t``, then ``u -> v`` as soon as the data lands."""
    there = link_delay(topology, v, u, t)
    if math.isinf(there):
        return there
    return there + link_delay(topology, u, v, t + int(there))


def random_policy(valid, rng: np.random.Generator) -> int:
    valid = list(valid)
    if not valid:
        raise ValueError("no valid action to choose from")
    return valid[int(rng.integers(len(valid)))]


class RandomPolicy:
    def __init__(self, seed: int | None = 0):
        self.rng = np.random.default_rng(seed)

    def act(self, sim: Simulator, v: int, y: BufferedRequest, valid, t: int) -> int:
        return random_policy(sorted(valid), self.rng)


def _fallback(v: int, valid, V: int) -> int:
    return v if v in valid else V + 2


class GreedyPolicy:
    """Execute where the next VNF is cached, otherwise head for the earliest reachable host.

    With ``knows_caching`` the candidate hosts are the satellites caching the
    next VNF; without it every other satellite is a candidate, so the request
    wanders until it meets a host. Ties on the earliest link are broken
    uniformly at random. Finished results go straight back to the requester.
    """

    def __init__(self, config: SystemConfig, knows_caching: bool = True, seed: int | None = 0):
        self.config = config
        self.knows_caching = knows_caching
        self.rng = np.random.default_rng(seed)

    def candidates(self, v: int, vnf: int) -> list[int]:
        V = self.config.num_satellites
        others = [u for u in range(1, V + 1) if u != v]
        if not self.knows_caching:
            return others
        return [u for u in others if vnf in self.config.caching[u - 1]]

    def target(self, v: int, y: BufferedRequest, t: int) -> int | None:
        """Satellite to send to next, or None when nothing is worth sending."""
        topo = self.config.topology
        if y.done:
            return y.requester if y.requester != v else None
        cands = self.candidates(v, y.sfc.vnf(y.f))
        if not cands:
            return None
        slots = np.array([topo.next_active_slot(v, u, t) or math.inf for u in cands], dtype=float)
        if np.isinf(slots.min()):
            return None
        best = np.flatnonzero(slots == slots.min())
        return cands[int(best[self.rng.integers(len(best))])] if len(best) > 1 else cands[int(best[0])]

    def act(self, sim: Simulator, v: int, y: BufferedRequest, valid, t: int) -> int:
        V = self.config.num_satellites
        execute = V + 1
        if not y.done and execute in valid:
            return execute
        u = self.target(v, y, t)
        if u is not None and u in valid:
            return u
        return _fallback(v, valid, V)


def greedy_policy(sim: Simulator, v: int, y: BufferedRequest, valid, t: int,
                  rng: np.random.Generator | None = None, knows_caching: bool = True) -> int:
    pol = GreedyPolicy(sim.config, knows_caching)
    if rng is not None:
        pol.rng = rng
    return pol.act(sim, v, y, valid, t)


# -- one-shot planners --------------------------------------------------------

def _snapshot_paths(topology: Topology, src: int, t: int) -> dict[int, list[int]]:
    """Shortest hop paths from ``src`` over the links active at slot ``t``."""
    paths = {src: [src]}
    queue = deque([src])
    while queue:
        v = queue.popleft()
        for u in topology.neighbors(v, t):
            if u not in paths:
                paths[u] = paths[v] + [u]
                queue.append(u)
    return paths


def plan_placement(config: SystemConfig, sfc, requester: int, executors, t: int) -> Placement | None:
    """Placement visiting ``executors`` in order along shortest paths of the slot-``t`` snapshot.

    Returns None when some hop has no path in the snapshot. The placement is
    built as if the snapshot links stayed up; nothing checks later slots.
    """
    topo = config.topology
    handlers: list[int] = []
    activations: list[int] = []
    here = requester
    paths_from = {}
    for f, u in enumerate(executors, start=1):
        paths = paths_from.setdefault(here, _snapshot_paths(topo, here, t))
        if u not in paths:
            return None
        handlers.extend(paths[u][:-1])
        activations.append(len(handlers) + 1)
        handlers.extend([u] * sfc.exec_slots(f, u))
        here = u
    paths = paths_from.setdefault(here, _snapshot_paths(topo, here, t))
    if requester not in paths:
        return None
    handlers.extend(paths[requester][:-1])
    return Placement(tuple(handlers), tuple(activations))


def planned_action(p: Placement, k: int, requester: int, V: int) -> int:
    """The engine action for slot ``k`` (1-based) of placement ``p``."""
    if k in p.activations:
        return V + 1
    L = len(p.handlers)
    if k > L:
        return V + 2
    nxt = p.handlers[k] if k < L else requester
    return nxt


class PlanFollower:
    """Carries out a whole-request plan made at arrival; a step the engine refuses ends in rejection."""

    def __init__(self, config: SystemConfig):
        self.config = config
        self.plans: dict[int, tuple[Placement, int]] = {}
        self.failures = 0

    def make_plan(self, sim: Simulator, y: BufferedRequest, t: int) -> Placement | None:
        raise NotImplementedError

    def finished(self, y: BufferedRequest, success: bool, p: Placement | None):
        """Hook called once per request when its plan resolves."""

    def act(self, sim: Simulator, v: int, y: BufferedRequest, valid, t: int) -> int:
        V = self.config.num_satellites
        entry = self.plans.get(y.initiated_at)
        if entry is None:
            p = self.make_plan(sim, y, t)
            if p is None or p.is_rejection or len(p) > y.sfc.delay_tolerance - y.age(t):
                self.finished(y, False, p)
                return V + 2
            entry = (p, t)
            self.plans[y.initiated_at] = entry
        p, start = entry
        k = t - start + 1
        a = planned_action(p, k, y.requester, V)
        if a == V + 2 or a not in valid or (a != V + 1 and k <= len(p.handlers) and p.handlers[k - 1] != v):
            self.plans.pop(y.initiated_at, None)
            self.failures += 1
            self.finished(y, False, p)
            return V + 2
        last_exec_end = p.activations[-1] + y.sfc.exec_slots(y.sfc.length, p.handlers[p.activations[-1] - 1]) - 1
        if k == len(p.handlers) or (a == V + 1 and last_exec_end == len(p.handlers)
                                      and k == p.activations[-1] and v == y.requester):
            self.plans.pop(y.initiated_at, None)
            self.finished(y, True, p)
        return a


class NbpPolicy(PlanFollower):
    """Neighbor-based placement: at arrival, pick hosts among the satellites reachable right now.

    Every stage goes to a reachable satellite that caches its VNF and has the
    compute and storage free at this slot, choosing the assignment with the
    fewest slots in the current snapshot. Unplaceable requests are rejected.
    """

    def make_plan(self, sim: Simulator, y: BufferedRequest, t: int) -> Placement | None:
        cfg = self.config
        sfc, n = y.sfc, y.requester
        reach = _snapshot_paths(cfg.topology, n, t)
        dist = {}
        for v in reach:
            dist[v] = {u: len(p) - 1 for u, p in _snapshot_paths(cfg.topology, v, t).items()}
        # layered shortest path over (stage, host)
        best: dict[int, tuple[float, list[int]]] = {n: (0.0, [])}
        for f in range(1, sfc.length + 1):
            hosts = [u for u in sorted(reach)
                     if sfc.vnf(f) in cfg.caching[u - 1]
                     and sim.compute_free[u] >= sfc.compute[f - 1]
                     and sim.storage_free[u] >= sfc.storage[f - 1]]
            layer = {}
            for u in hosts:
                opts = [(c + dist[w].get(u, math.inf) + sfc.exec_slots(f, u), path + [u])
                        for w, (c, path) in best.items()]
                c, path = min(opts, key=lambda o: (o[0], o[1]))
                if not math.isinf(c):
                    layer[u] = (c, path)
            if not layer:
                return None
            best = layer
        total = {u: c + dist[u].get(n, math.inf) for u, (c, _) in best.items()}
        u = min(total, key=lambda w: (total[w], w))
        if math.isinf(total[u]) or total[u] > sfc.delay_tolerance:
            return None
        return plan_placement(cfg, sfc, n, best[u][1], t)


def nbp_policy(sim: Simulator, y: BufferedRequest, t: int) -> Placement | None:
    return NbpPolicy(sim.config).make_plan(sim, y, t)


def central_q_reward(iota_c: float, iota_r: float, delay: float, length: int) -> float:
    """``25 (iota_c + iota_r) exp(2 delay / length)``; larger is worse."""
    return 25.0 * (iota_c + iota_r) * math.exp(2.0 * delay / length)


@dataclass
class CentralQParams:
    learning_rate: float = 0.6
    discount: float = 0.6
    epsilon: float = 0.1


class CentralQPolicy(PlanFollower):
    """Centralized tabular Q-learning over (SFC, stage) -> executing satellite.

    The whole chain is assigned at arrival and routed over the links active
    at that slot; a plan that later needs a link that is down fails. A failed
    plan scores as a saturated placement that used the full delay tolerance.
    """

    def __init__(self, config: SystemConfig, params: CentralQParams | None = None, seed: int | None = 0):
        super().__init__(config)
        self.params = params or CentralQParams(discount=config.cost.learning_discount)
        self.rng = np.random.default_rng(seed)
        self.q: dict[tuple, np.ndarray] = {}
        self.training = True
        self._ratios: dict[int, list[tuple[float, float]]] = {}

    def row(self, h, f) -> np.ndarray:
        r = self.q.get((h, f))
        if r is None:
            r = self.q[(h, f)] = np.zeros(self.config.num_satellites)
        return r

    def choose(self, h, f) -> int:
        r = self.row(h, f)
        if self.training and self.rng.random() < self.params.epsilon:
            return int(self.rng.integers(len(r))) + 1
        best = np.flatnonzero(r == r.min())
        return int(best[self.rng.integers(len(best))]) + 1

    def make_plan(self, sim: Simulator, y: BufferedRequest, t: int) -> Placement | None:
        sfc = y.sfc
        execs = [self.choose(sfc.sfc_id, f) for f in range(1, sfc.length + 1)]
        ratios = []
        for f, u in enumerate(execs, start=1):
            c, z = sim.compute_free[u], sim.storage_free[u]
            ratios.append((sfc.compute[f - 1] / c if c > 0 else math.inf,
                           sfc.storage[f - 1] / z if z > 0 else math.inf))
        self._ratios[y.initiated_at] = (execs, ratios)
        return plan_placement(self.config, sfc, y.requester, execs, t)

    def finished(self, y: BufferedRequest, success: bool, p: Placement | None):
        execs, ratios = self._ratios.pop(y.initiated_at, (None, None))
        if not self.training or execs is None:
            return
        sfc = y.sfc
        L = sfc.length
        for f in range(L, 0, -1):
            if success:
                ic, ir = ratios[f - 1]
                r = central_q_reward(ic, ir, len(p.handlers), L)
            else:
                r = central_q_reward(1.0, 1.0, sfc.delay_tolerance, L)
            target = 0.0 if f == L else float(self.row(sfc.sfc_id, f + 1).min())
            row = self.row(sfc.sfc_id, f)
            a = execs[f - 1] - 1
            lam = self.params.learning_rate
            row[a] = (1 - lam) * row[a] + lam * (r + self.params.discount * target)


def train_central_q(config: SystemConfig, slots: int, params: CentralQParams | None = None,
                    seed: int = 0) -> CentralQPolicy:
    pol = CentralQPolicy(config, params, seed)
    pol.training = True
    Simulator(config, pol, seed=seed + 1).run(slots)
    pol.training = False
    pol.plans.clear()
    return pol


def central_q_policy(config: SystemConfig, slots: int, seed: int = 0, mode: str = "eval") -> CentralQPolicy:
    """Train for ``slots`` slots; ``mode='train'`` keeps exploring afterwards."""
    pol = train_central_q(config, slots, seed=seed)
    pol.training = mode == "train"
    return pol
