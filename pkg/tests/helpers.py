"""Small builders shared by the test modules."""
from __future__ import annotations


import numpy as np

from satchain.engine import CostModel, SystemConfig
from satchain.services import RequestModel, make_sfc
from satchain.topology import ALWAYS_ON, IslSchedule, Topology


def make_config(V=1, schedules=None, compute=2, storage=2, sfcs=None, caching=None, mu=0.9,
                cost=None, requester_probs=None, service_probs=None) -> SystemConfig:
    """A small catalog-mode configuration; every argument has a tiny default."""
    if schedules is None:
        schedules = {(v, u): ALWAYS_ON for v in range(1, V + 1) for u in range(v + 1, V + 1)}
    sfcs = sfcs or [make_sfc(1, (1,), 1, 1, delay_tolerance=3)]
    catalog = {s.sfc_id: s for s in sfcs}
    if caching is None:
        every = frozenset(f for s in sfcs for f in s.chain)
        caching = [every] * V
    per = lambda x: tuple(x) if isinstance(x, (list, tuple)) else (x,) * V
    model = RequestModel(mu, V, catalog, requester_probs, service_probs)
    return SystemConfig(Topology(V, schedules), per(compute), per(storage), tuple(caching), model,
                        cost or CostModel())


def link(period, duration=1, phase=0) -> IslSchedule:
    return IslSchedule(period, duration, phase)


def random_tiny_config(rng):
    """Up to two satellites and two SFCs, horizon at most four, one or two arrival outcomes."""
    V = int(rng.integers(1, 3))
    sched = {}
    if V == 2:
        T = int(rng.integers(1, 4))
        sched[(1, 2)] = link(T, int(rng.integers(1, T + 1)), int(rng.integers(0, T)))
    H = int(rng.integers(1, 3))
    sfcs = []
    for h in range(1, H + 1):
        L = int(rng.integers(1, 3))
        chain = tuple(int(x) for x in rng.permutation([1, 2, 3])[:L])
        sfcs.append(make_sfc(h, chain, int(rng.integers(1, 3)), int(rng.integers(1, 3)),
                             exec_slots=int(rng.integers(1, 3)), delay_tolerance=int(rng.integers(1, 5))))
    caching = [frozenset(int(x) for x in rng.choice([1, 2, 3], size=int(rng.integers(1, 4)), replace=False))
               for _ in range(V)]
    cap = lambda: tuple(int(x) for x in rng.integers(1, 4, size=V))
    outcomes = V * H
    if outcomes == 1:
        mu = float(rng.choice([1.0, 0.5]))
    else:
        mu = 1.0
    # keep at most two outcomes: one requester when there are two services
    req = [1.0] + [0.0] * (V - 1) if H == 2 else None
    cfg = make_config(V, sched, cap(), cap(), sfcs, caching, mu=mu, requester_probs=req,
                      cost=CostModel(dp_discount=float(rng.choice([0.5, 0.6, 0.8]))))
    return cfg


def conditioning_oracle(X, y, Xq, beta, prior, jitter):
    """Posterior of a zero-noise-plus-jitter GP by explicit inversion of the joint covariance."""
    def k(A, B):
        d = np.array([[np.sum((a - b) ** 2) for b in B] for a in A])
        return np.exp(-d / (2 * beta ** 2))
    Kxx = k(X, X) + jitter * np.eye(len(X))
    Kqx = k(Xq, X)
    inv = np.linalg.inv(Kxx)
    mean = prior + Kqx @ inv @ (y - prior)
    cov = k(Xq, Xq) - Kqx @ inv @ Kqx.T
    return mean, np.sqrt(np.clip(np.diag(cov), 0, None))
