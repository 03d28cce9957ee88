"""Optimal whole-request placement by dynamic programming over the horizon state.

The solver works on afterstates: the free-resource horizon seen at the start
of a slot (already shifted) plus the slot-in-period. A decision state is an
afterstate together with the pending request outcome. Resource entries are
clipped at the largest amount that the requests able to reach them could ever
consume, which merges states without changing any feasibility question.
"""
from __future__ import annotations

import csv
import hashlib
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np

from .engine.config import SystemConfig
from .engine.placement import REJECT, Placement, SystemState, transition
from .services import SfcSpec, sample_request


class InstanceTooLarge(RuntimeError):
    def __init__(self, states: int, limit: int, what: str = "states"):
        self.states = states
        super().__init__(f"instance too large: more than {limit} {what} discovered ({states} so far)")


# -- placement enumeration ----------------------------------------------------

def _moves(sfc: SfcSpec, n: int, k: int, v: int, f: int, D: int, config: SystemConfig, start_slot: int):
    """Choices at relative slot ``k`` for a request held by ``v`` whose next stage is ``f``.

    Yields ``(usage, handlers, activation, next_node, completed_length)``;
    usage items are ``(kind, satellite, slot, amount)`` with kind 0 for
    compute and 1 for storage. Exactly one of ``next_node`` and
    ``completed_length`` is set.
    """
    l = sfc.length
    if f <= l and sfc.vnf(f) in config.caching[v - 1]:
        d = sfc.exec_slots(f, v)
        end = k + d - 1
        if end <= D:
            q = sfc.compute[f - 1]
            usage = tuple((0, v, kk, q) for kk in range(k, end + 1))
            if f == l and v == n:
                yield usage, (v,) * d, (k,), None, end
            elif end + 1 <= D:
                yield usage, (v,) * d, (k,), (end + 1, v, f + 1), None
    g = sfc.payload(f)
    usage = ((1, v, k, g),) if g > 0 else ()
    if k + 1 <= D:
        yield usage, (v,), (), (k + 1, v, f), None
    for u in config.topology.neighbors(v, start_slot + k - 1):
        if f == l + 1 and u == n:
            yield usage, (v,), (), None, k
        elif k + 1 <= D:
            yield usage, (v,), (), (k + 1, u, f), None


def enumerate_placements(x: SystemState, config: SystemConfig, start_slot: int | None = None) -> list[Placement]:
    """Every feasible placement of the pending request against ``x``, plus the empty one.

    Depth-first over the time-expanded handler graph. A placement ends as
    soon as the final output reaches the requester.
    """
    if x.sfc is None:
        raise ValueError("state carries no pending request")
    sfc, n = x.sfc, x.requester
    t0 = x.zeta if start_slot is None else start_slot
    D = min(sfc.delay_tolerance, x.horizon)
    avail = (x.compute, x.storage)
    out = [REJECT]

    def dfs(k, v, f, phi, m):
        for usage, dphi, dm, nxt, done_len in _moves(sfc, n, k, v, f, D, config, t0):
            if any(a > avail[kind][w - 1][kk - 1] for kind, w, kk, a in usage):
                continue
            if done_len is not None:
                out.append(Placement(phi + dphi, m + dm))
            else:
                dfs(*nxt, phi + dphi, m + dm)

    if D >= 1:
        dfs(1, n, 1, (), ())
    return out


def _leq(a: dict, b: dict) -> bool:
    """Usage ``a`` is contained in usage ``b`` entry by entry."""
    return all(key in b and amt <= b[key] for key, amt in a.items())


def pareto_placements(sfc: SfcSpec, n: int, zeta: int, config: SystemConfig, horizon: int,
                      limit: int | None = None):
    """Structurally feasible placements nobody beats on both length and resource use.

    Returns ``(length, usage dict, placement)`` triples sorted by
    ``(length, handlers, activations)``. A placement dropped here is never
    better than a kept one: whenever it fits, some kept placement fits too
    and is no longer. Capacities bound every usage entry. More than
    ``limit`` partial placements raises InstanceTooLarge.
    """
    D = min(sfc.delay_tolerance, horizon)
    caps = (config.compute_capacity, config.storage_capacity)
    frontier: dict[tuple, list] = defaultdict(list)
    complete = []

    def add(bucket, usage, phi, m):
        for other, _, _ in bucket:
            if _leq(other, usage):
                return
        bucket[:] = [b for b in bucket if not _leq(usage, b[0])]
        bucket.append((usage, phi, m))

    if D >= 1:
        frontier[(1, n, 1)].append(({}, (), ()))
    for k in range(1, D + 1):
        if limit is not None:
            size = len(complete) + sum(len(b) for b in frontier.values())
            if size > limit:
                raise InstanceTooLarge(size, limit, "partial placements")
        for node in sorted(key for key in frontier if key[0] == k):
            for usage, phi, m in frontier.pop(node):
                _, v, f = node
                for extra, dphi, dm, nxt, done_len in _moves(sfc, n, k, v, f, D, config, zeta):
                    if any(a > caps[kind][w - 1] for kind, w, _, a in extra):
                        continue
                    u2 = dict(usage)
                    u2.update({(kind, w, kk): a for kind, w, kk, a in extra})
                    if done_len is not None:
                        complete.append((done_len, u2, Placement(phi + dphi, m + dm)))
                    else:
                        add(frontier[nxt], u2, phi + dphi, m + dm)
    complete.sort(key=lambda c: (c[0], c[2].handlers, c[2].activations))
    kept = []
    for c in complete:
        if not any(o[0] <= c[0] and _leq(o[1], c[1]) for o in kept):
            kept.append(c)
    return kept


# -- value iteration ------------------------------------------------------------

@dataclass
class _Layout:
    V: int
    K: int
    period: int
    cap: np.ndarray
    clip: np.ndarray

    def shift(self, a: np.ndarray) -> np.ndarray:
        b = a.reshape(self.V, 2, self.K)
        s = np.concatenate([b[..., 1:], self.cap.reshape(self.V, 2, self.K)[..., :1]], axis=-1)
        return np.minimum(s.reshape(a.shape), self.clip)

    def shift_many(self, A: np.ndarray) -> np.ndarray:
        B = A.reshape(-1, self.V, 2, self.K)
        cap = np.broadcast_to(self.cap.reshape(self.V, 2, self.K)[..., :1], B.shape[:-1] + (1,))
        S = np.concatenate([B[..., 1:], cap], axis=-1)
        return np.minimum(S.reshape(A.shape), self.clip)


def _layout(config: SystemConfig, K: int) -> _Layout:
    V = config.num_satellites
    sfcs = config.requests.sfcs
    cap = np.zeros((V, 2, K), dtype=np.int32)
    clip = np.zeros((V, 2, K), dtype=np.int32)
    g_max = max(max(s.storage) for s in sfcs)
    for v in range(1, V + 1):
        cap[v - 1, 0, :] = config.compute_capacity[v - 1]
        cap[v - 1, 1, :] = config.storage_capacity[v - 1]
        q_max = max([s.compute[f] for s in sfcs for f in range(s.length)
                     if s.chain[f] in config.caching[v - 1]] or [0])
        for k in range(K):
            # entry k (0-based) can be touched by at most k + 1 future requests
            clip[v - 1, 0, k] = min(cap[v - 1, 0, k], (k + 1) * q_max)
            clip[v - 1, 1, k] = min(cap[v - 1, 1, k], (k + 1) * g_max)
    return _Layout(V, K, config.period, cap.reshape(-1), clip.reshape(-1))


@dataclass
class ValueTable:
    """Converged values and greedy placements over the discovered states."""

    config: SystemConfig
    layout: _Layout
    outcomes: list                       # (probability, requester, sfc); index 0 is "no request"
    keys: dict                           # (bytes, zeta) -> node index
    avail: np.ndarray                    # node -> clipped free resources
    zetas: np.ndarray
    J: np.ndarray                        # node x outcome
    choice: np.ndarray                   # node x outcome -> candidate index (-1 = reject)
    candidates: dict                     # (outcome, zeta) -> list of (length, usage, Placement)
    sweeps: int = 0
    residuals: list = field(default_factory=list)

    @property
    def num_states(self) -> int:
        return len(self.keys)

    def start_value(self) -> float:
        """Expected discounted cost from an idle network at slot 1."""
        return float(self.outcome_probs() @ self.J[0])

    def outcome_probs(self) -> np.ndarray:
        mu = self.config.requests.arrival_prob
        return np.array([1.0 - mu] + [p for p, _, _ in self.outcomes[1:]])

    def _vector(self, x: SystemState) -> np.ndarray:
        a = np.array([x.compute, x.storage], dtype=np.int32).transpose(1, 0, 2)
        if a.shape[-1] != self.layout.K:
            raise ValueError(f"state horizon {a.shape[-1]} differs from solver horizon {self.layout.K}")
        return np.minimum(a.reshape(-1), self.layout.clip)

    def _outcome_index(self, x: SystemState) -> int:
        if x.sfc is None:
            return 0
        for i, (_, n, sfc) in enumerate(self.outcomes[1:], start=1):
            if n == x.requester and sfc.sfc_id == x.sfc.sfc_id:
                return i
        raise KeyError(f"request ({x.sfc.sfc_id}, {x.requester}) is not in the catalog")

    def _node(self, avail: np.ndarray, zeta: int) -> int:
        return self.keys[(avail.astype(np.int32).tobytes(), zeta)]

    def value(self, x: SystemState) -> float:
        return float(self.J[self._node(self._vector(x), x.zeta), self._outcome_index(x)])

    def decision(self, node: int, o: int):
        """``(length, usage, Placement)`` chosen at a node for outcome ``o``; None means reject."""
        c = int(self.choice[node, o])
        if o == 0 or c < 0:
            return None
        return self.candidates[(o, int(self.zetas[node]))][c]

    def policy(self, x: SystemState) -> Placement:
        o = self._outcome_index(x)
        d = self.decision(self._node(self._vector(x), x.zeta), o)
        return REJECT if d is None else d[2]

    def dump(self, path):
        """Write ``state-hash,J,placement`` rows, one per (state, outcome)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state-hash", "J", "placement"])
            for (raw, zeta), i in sorted(self.keys.items(), key=lambda kv: kv[1]):
                for o in range(len(self.outcomes)):
                    h = hashlib.sha1(raw + bytes([zeta % 256, o % 256])).hexdigest()[:16]
                    d = self.decision(i, o)
                    if o == 0:
                        text = "-"
                    elif d is None:
                        text = "reject"
                    else:
                        p = d[2]
                        text = "phi=" + "/".join(map(str, p.handlers)) + ";m=" + "/".join(map(str, p.activations))
                    w.writerow([h, f"{self.J[i, o]:.10g}", text])


def _usage_matrix(cands, layout: _Layout) -> np.ndarray:
    U = np.zeros((len(cands), layout.V, 2, layout.K), dtype=np.int32)
    for i, (_, usage, _) in enumerate(cands):
        for (kind, v, k), a in usage.items():
            U[i, v - 1, kind, k - 1] += a
    return U.reshape(len(cands), layout.V * 2 * layout.K)


def value_iteration(config: SystemConfig, tolerance: float = 1e-6, max_sweeps: int = 10_000,
                    max_states: int = 500_000) -> ValueTable:
    """Solve the discounted placement DP by value iteration.

    States reachable from an idle network are discovered breadth-first under
    every feasible placement, then Bellman sweeps run until the sup-norm
    change drops below ``tolerance``. Among equally good placements the one
    with the smallest ``(handlers, activations)`` wins.
    """
    gamma = config.cost.dp_discount
    if not gamma < 1.0:
        raise ValueError("value iteration needs a discount factor below 1")
    req = config.requests
    K = config.horizon
    layout = _layout(config, K)
    T = config.period
    outcomes = [(1.0 - req.arrival_prob, 0, None)] + req.outcomes()
    penalty = config.cost.rejection_penalty

    candidates, umats, lengths = {}, {}, {}
    for o, (_, n, sfc) in enumerate(outcomes[1:], start=1):
        for z in range(1, T + 1):
            c = pareto_placements(sfc, n, z, config, K, limit=max_states)
            candidates[(o, z)] = c
            umats[(o, z)] = _usage_matrix(c, layout)
            lengths[(o, z)] = np.array([x[0] for x in c], dtype=float)

    start = np.minimum(layout.cap, layout.clip)
    keys = {(start.tobytes(), 1): 0}
    avail_rows = [start]
    zetas = [1]
    seg_cost, seg_succ, seg_cand, seg_start = [], [], [], []
    pos = 0

    def node_of(a: np.ndarray, z: int) -> int:
        key = (a.tobytes(), z)
        i = keys.get(key)
        if i is None:
            i = len(avail_rows)
            if i >= max_states:
                raise InstanceTooLarge(i + 1, max_states)
            keys[key] = i
            avail_rows.append(a)
            zetas.append(z)
        return i

    i = 0
    while i < len(avail_rows):
        a, z = avail_rows[i], zetas[i]
        z_next = z % T + 1
        idle = node_of(layout.shift(a), z_next)
        for o in range(len(outcomes)):
            seg_start.append(pos)
            if o == 0:
                seg_cost.append(0.0)
                seg_succ.append(idle)
                seg_cand.append(-1)
                pos += 1
                continue
            U = umats[(o, z)]
            ok = np.flatnonzero(np.all(U <= a, axis=1)) if len(U) else np.zeros(0, dtype=int)
            if len(ok):
                nxt = layout.shift_many(a[None, :] - U[ok])
                for j, row in zip(ok, nxt):
                    seg_cost.append(lengths[(o, z)][j])
                    seg_succ.append(node_of(row, z_next))
                    seg_cand.append(int(j))
                pos += len(ok)
            seg_cost.append(penalty)
            seg_succ.append(idle)
            seg_cand.append(-1)
            pos += 1
        i += 1

    N, O = len(avail_rows), len(outcomes)
    cost = np.asarray(seg_cost)
    succ = np.asarray(seg_succ, dtype=np.int64)
    starts = np.asarray(seg_start, dtype=np.int64)
    probs = np.array([p for p, _, _ in outcomes])
    J = np.zeros(N * O)
    residuals = []
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        W = J.reshape(N, O) @ probs
        J_new = np.minimum.reduceat(cost + gamma * W[succ], starts)
        res = float(np.max(np.abs(J_new - J)))
        residuals.append(res)
        J = J_new
        if res < tolerance:
            break
    W = J.reshape(N, O) @ probs
    Q = cost + gamma * W[succ]
    J = np.minimum.reduceat(Q, starts)
    best = np.repeat(J, np.diff(np.append(starts, len(Q))))
    idx = np.where(Q <= best, np.arange(len(Q)), len(Q))
    first = np.minimum.reduceat(idx, starts)
    choice = np.asarray(seg_cand)[first].reshape(N, O)
    return ValueTable(config, layout, outcomes, keys, np.array(avail_rows), np.array(zetas),
                      J.reshape(N, O), choice, candidates, sweeps, residuals)


# -- oracle ---------------------------------------------------------------------

def _default_depth(config: SystemConfig, slack: float = 1e-9) -> int:
    gamma = config.cost.dp_discount
    if gamma <= 0.0:
        return 1
    bound = config.cost.rejection_penalty / (1.0 - gamma)
    return max(1, math.ceil(math.log(slack / bound) / math.log(gamma)))


def brute_force_policy_value(config: SystemConfig, horizon: int | None = None,
                             max_nodes: int = 2_000_000) -> float:
    """Minimum expected discounted cost from an idle network at slot 1, by expectimax.

    Expands the full expectation tree over the next ``horizon`` arrivals,
    choosing among every feasible placement (no pruning, no clipping) at each
    decision. Identical subtrees are evaluated once. The truncation error is
    at most ``gamma ** horizon * C_p / (1 - gamma)``; by default the horizon
    pushes it below 1e-9.
    """
    K = config.horizon
    V = config.num_satellites
    if K > 4 or V > 2 or len(config.requests.sfcs) > 2:
        raise ValueError("brute force is limited to 2 satellites, 2 SFCs and a 4-slot horizon")
    gamma = config.cost.dp_discount
    depth = _default_depth(config) if horizon is None else horizon
    mu = config.requests.arrival_prob
    outcomes = config.requests.outcomes()
    idle = SystemState.idle(config.compute_capacity, config.storage_capacity, K)
    memo: dict = {}
    cap = (config.compute_capacity, config.storage_capacity, config.period)

    def W(x: SystemState, d: int) -> float:
        if d == 0:
            return 0.0
        key = (x.compute, x.storage, x.zeta, d)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if len(memo) >= max_nodes:
            raise InstanceTooLarge(len(memo), max_nodes)
        total = (1.0 - mu) * gamma * W(transition(x, REJECT, None, 0, *cap), d - 1) if mu < 1 else 0.0
        for p, n, sfc in outcomes:
            xo = replace(x, sfc=sfc, requester=n)
            best = math.inf
            for plc in enumerate_placements(xo, config):
                c = config.cost.rejection_penalty if plc.is_rejection else len(plc)
                val = c + gamma * W(transition(xo, plc, None, 0, *cap), d - 1)
                best = min(best, val)
            total += p * best
        memo[key] = total
        return total

    return W(idle, depth)


# -- running the optimal policy ---------------------------------------------------

@dataclass
class DpRun:
    slot_costs: np.ndarray
    penalty: float
    executed_on: dict

    def serving_rate(self) -> float:
        return float(np.mean(self.slot_costs < self.penalty))

    def average_slot_cost(self) -> float:
        return float(np.mean(self.slot_costs))


def simulate_dp_policy(table: ValueTable, slots: int, seed: int | None = 0,
                       rng: np.random.Generator | None = None) -> DpRun:
    """Apply the stored optimal placements to a sampled request stream.

    Arrivals are drawn exactly as the online simulator draws them, so equal
    seeds give both the same request sequence.
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    cfg = table.config
    layout = table.layout
    index = {(sfc.sfc_id, n): o for o, (_, n, sfc) in enumerate(table.outcomes) if o}
    a = np.minimum(layout.cap, layout.clip)
    costs = np.zeros(slots)
    executed_on: dict = defaultdict(int)
    for t in range(1, slots + 1):
        z = cfg.topology.zeta(t)
        r = sample_request(cfg.requests, t, rng)
        if r is not None:
            o = index[(r.sfc.sfc_id, r.requester)]
            d = table.decision(table._node(a, z), o)
            if d is None:
                costs[t - 1] = cfg.cost.rejection_penalty
            else:
                length, usage, plc = d
                costs[t - 1] = length
                for (kind, v, k), amt in usage.items():
                    a[(v - 1) * 2 * layout.K + kind * layout.K + (k - 1)] -= amt
                for f, m in enumerate(plc.activations, start=1):
                    executed_on[(r.sfc.vnf(f), plc.handlers[m - 1])] += 1
        a = layout.shift(a)
    return DpRun(costs, cfg.cost.rejection_penalty, dict(executed_on))
