"""Choosing which VNFs each satellite caches.

A strategy ``theta`` is a flat tuple of VNF ids split into one segment per
satellite (segment sizes are the cache capacities). Segments are kept
sorted, so two strategies caching the same sets compare equal. The search
tools here are Bayesian optimisation over a Gaussian-process surrogate,
coordinate descent, pattern search and a popularity ranking.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .engine.config import SystemConfig
from .engine.sim import Simulator

Strategy = tuple[int, ...]


@dataclass(frozen=True)
class CachingSpace:
    """Valid strategies for fixed cache capacities.

    A strategy is valid when no satellite caches a VNF twice and, when
    ``chains`` is given, at least one chain has all its VNFs cached
    somewhere. Without ``chains`` any strategy caching something is valid.
    """

    vnfs: tuple[int, ...]
    capacities: tuple[int, ...]
    chains: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "vnfs", tuple(sorted(set(self.vnfs))))
        object.__setattr__(self, "capacities", tuple(int(c) for c in self.capacities))
        if not self.vnfs:
            raise ValueError("no VNFs to cache")
        if any(c < 1 or c > len(self.vnfs) for c in self.capacities):
            raise ValueError(f"capacities must lie in [1, {len(self.vnfs)}]")
        if self.chains is not None:
            object.__setattr__(self, "chains", tuple(tuple(c) for c in self.chains))

    @property
    def num_slots(self) -> int:
        return sum(self.capacities)

    def _bounds(self):
        start = 0
        for c in self.capacities:
            yield start, start + c
            start += c

    def segments(self, theta: Sequence[int]) -> list[tuple[int, ...]]:
        if len(theta) != self.num_slots:
            raise ValueError(f"strategy has {len(theta)} entries, expected {self.num_slots}")
        return [tuple(theta[a:b]) for a, b in self._bounds()]

    def canonical(self, theta: Sequence[int]) -> Strategy:
        return tuple(x for seg in self.segments(theta) for x in sorted(seg))

    def violations(self, theta: Sequence[int]) -> list[str]:
        out = []
        for v, seg in enumerate(self.segments(theta), start=1):
            if any(x not in self.vnfs for x in seg):
                out.append(f"satellite {v}: unknown VNF in {seg}")
            if len(set(seg)) != len(seg):
                out.append(f"satellite {v}: VNF cached more than once in {seg}")
        cached = set(theta)
        if self.chains is not None and not any(set(c) <= cached for c in self.chains):
            out.append("no chain can be served: none has all its VNFs cached")
        if not cached:
            out.append("nothing cached")
        return out

    def is_valid(self, theta: Sequence[int]) -> bool:
        return not self.violations(theta)

    def size(self) -> int:
        """Number of strategies before the chain condition is applied."""
        return math.prod(math.comb(len(self.vnfs), c) for c in self.capacities)

    def enumerate(self) -> list[Strategy]:
        per_sat = [list(itertools.combinations(self.vnfs, c)) for c in self.capacities]
        out = []
        for combo in itertools.product(*per_sat):
            theta = tuple(x for seg in combo for x in seg)
            if self.is_valid(theta):
                out.append(theta)
        return out

    def sample(self, rng: np.random.Generator, max_tries: int = 10_000) -> Strategy:
        for _ in range(max_tries):
            theta = tuple(int(x) for c in self.capacities
                          for x in sorted(rng.choice(self.vnfs, size=c, replace=False)))
            if self.is_valid(theta):
                return theta
        raise ValueError("could not draw a valid strategy; the search space may be empty")

    def to_caching(self, theta: Sequence[int]) -> tuple[frozenset, ...]:
        return tuple(frozenset(seg) for seg in self.segments(theta))

    def format(self, theta: Sequence[int]) -> str:
        return ";".join(",".join(map(str, seg)) for seg in self.segments(theta))

    def encode(self, theta: Sequence[int]) -> np.ndarray:
        """One-hot block per cached position; squared distance is twice the number of differing positions."""
        index = {f: i for i, f in enumerate(self.vnfs)}
        x = np.zeros((len(theta), len(self.vnfs)))
        for k, f in enumerate(theta):
            x[k, index[f]] = 1.0
        return x.ravel()


def encode(space: CachingSpace, theta: Sequence[int]) -> np.ndarray:
    return space.encode(theta)


def kernel(a: np.ndarray, b: np.ndarray, beta: float = 1.0) -> float:
    """RBF similarity ``exp(-||a - b||^2 / (2 beta^2))`` of two encodings."""
    if beta <= 0:
        raise ValueError("length scale must be positive")
    d2 = float(np.sum((np.asarray(a, float) - np.asarray(b, float)) ** 2))
    return math.exp(-d2 / (2.0 * beta * beta))


def kernel_matrix(A: np.ndarray, B: np.ndarray, beta: float = 1.0) -> np.ndarray:
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-np.maximum(d2, 0.0) / (2.0 * beta * beta))


class NumericalFailure(RuntimeError):
    pass


class GaussianProcess:
    """GP regression with a constant prior mean and unit-variance RBF prior.

    ``jitter`` is added to the diagonal of the training kernel matrix; if the
    Cholesky factorisation fails it is doubled until ``max_jitter``.
    """

    def __init__(self, beta: float = 1.0, prior_mean: float = 0.5, jitter: float = 1e-6,
                 max_jitter: float = 1e-2):
        if beta <= 0:
            raise ValueError("length scale must be positive")
        self.beta = beta
        self.prior_mean = prior_mean
        self.jitter = jitter
        self.max_jitter = max_jitter
        self.X: np.ndarray | None = None
        self.used_jitter = jitter

    def fit(self, X, y) -> "GaussianProcess":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        if len(X) == 0 or len(X) != len(y):
            raise ValueError("need at least one observation and matching X, y")
        K = kernel_matrix(X, X, self.beta)
        j = self.jitter
        while True:
            try:
                self._chol = linalg.cho_factor(K + j * np.eye(len(X)), lower=True)
                break
            except linalg.LinAlgError:
                if j >= self.max_jitter:
                    raise NumericalFailure(f"kernel matrix not positive definite with jitter {j:g}")
                j = min(max(2.0 * j, 1e-12), self.max_jitter)
        self.used_jitter = j
        self.X, self.y = X, y
        self._alpha = linalg.cho_solve(self._chol, y - self.prior_mean)
        return self

    def predict(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation at the rows of ``Xq``."""
        if self.X is None:
            raise ValueError("fit the process before predicting")
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        Ks = kernel_matrix(Xq, self.X, self.beta)
        mean = self.prior_mean + Ks @ self._alpha
        v = linalg.cho_solve(self._chol, Ks.T)
        var = 1.0 - np.einsum("ij,ji->i", Ks, v)
        if np.any(var < -1e-9):
            raise NumericalFailure(f"negative posterior variance {var.min():g}")
        return mean, np.sqrt(np.maximum(var, 0.0))


def posterior(gp: GaussianProcess, x) -> tuple[float, float]:
    m, s = gp.predict(np.atleast_2d(x))
    return float(m[0]), float(s[0])


ACQUISITIONS = ("pi", "ei", "ucb", "lcb")


@dataclass(frozen=True)
class AcquisitionSpec:
    kind: str = "pi"
    xi: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.lower())
        if self.kind not in ACQUISITIONS:
            raise ValueError(f"unknown acquisition {self.kind!r}; expected one of {ACQUISITIONS}")
        if self.xi < 0:
            raise ValueError("exploration weight must be non-negative")


def acquisition(spec: AcquisitionSpec, mean, std, best: float) -> np.ndarray:
    """Score candidates for maximisation; zero deviation uses the limiting forms."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    if np.any(std < 0):
        raise ValueError("standard deviation must be non-negative")
    if spec.kind == "ucb":
        return mean + spec.xi * std
    if spec.kind == "lcb":
        return mean - spec.xi * std
    pos = std > 0
    safe = np.where(pos, std, 1.0)
    with np.errstate(over="ignore"):        # a tiny deviation sends |z| to inf, where both limits are exact
        z = (mean - best) / safe
        pdf = norm.pdf(z)
    if spec.kind == "pi":
        return np.where(pos, norm.cdf(z), (mean > best).astype(float))
    return np.where(pos, (mean - best) * norm.cdf(z) + std * pdf, np.maximum(mean - best, 0.0))


# -- objective ----------------------------------------------------------------

PolicyFactory = Callable[[SystemConfig], object]


def greedy_factory(config: SystemConfig):
    from .placement_baselines import GreedyPolicy
    return GreedyPolicy(config, knows_caching=True, seed=0)


class CachingObjective:
    """Serving rate of a placement policy under a caching strategy, averaged over ``repeats`` seeds.

    Every strategy sees the same request streams (seeds ``seed .. seed+repeats-1``),
    and values are memoised, so asking twice costs one evaluation.
    """

    def __init__(self, config: SystemConfig, space: CachingSpace, policy_factory: PolicyFactory = greedy_factory,
                 horizon: int = 1000, seed: int = 0, repeats: int = 1):
        if len(space.capacities) != config.num_satellites:
            raise ValueError("one cache capacity per satellite is required")
        self.config = config
        self.space = space
        self.policy_factory = policy_factory
        self.horizon = horizon
        self.seed = seed
        self.repeats = repeats
        self.memo: dict[Strategy, float] = {}
        self.evaluations = 0

    def run(self, theta: Sequence[int]) -> float:
        bad = self.space.violations(theta)
        if bad:
            raise ValueError("invalid caching strategy: " + "; ".join(bad))
        cfg = self.config.with_caching(self.space.to_caching(theta))
        rates = []
        for r in range(self.repeats):
            sim = Simulator(cfg, self.policy_factory(cfg), seed=self.seed + r)
            rates.append(sim.run(self.horizon).serving_rate())
        return float(np.mean(rates))

    def __call__(self, theta: Sequence[int]) -> float:
        key = self.space.canonical(theta)
        if key not in self.memo:
            self.memo[key] = self.run(key)
            self.evaluations += 1
        return self.memo[key]


class _Tracker:
    """Records one history row per objective request.

    Asking again for a known strategy reuses its value without running the
    objective, but still counts as a request of the search method.
    """

    def __init__(self, objective: Callable, space: CachingSpace, kind: str):
        self.objective = objective
        self.space = space
        self.kind = kind
        self.seen: dict[Strategy, float] = {}
        self.history: list[tuple] = []
        self.best_theta: Strategy | None = None
        self.best = -math.inf
        self.stale = 0

    def __call__(self, theta, kind: str | None = None) -> float:
        theta = self.space.canonical(theta)
        m = self.seen.get(theta)
        if m is None:
            if not self.space.is_valid(theta):
                raise ValueError(f"invalid strategy {theta} reached evaluation")
            m = self.seen[theta] = float(self.objective(theta))
        if m > self.best:
            self.best, self.best_theta, self.stale = m, theta, 0
        else:
            self.stale += 1
        self.history.append((len(self.history) + 1, self.space.format(theta), m, self.best, kind or self.kind))
        return m


@dataclass
class SearchResult:
    theta: Strategy
    value: float
    history: list = field(default_factory=list)   # (iter, theta, serving_rate, best_so_far, acq_kind)

    @property
    def evaluations(self) -> int:
        """Objective requests made by the search, repeats included."""
        return len(self.history)

    @property
    def distinct(self) -> int:
        return len({row[1] for row in self.history})

    def best_so_far(self) -> np.ndarray:
        return np.array([row[3] for row in self.history])

    def write_history(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "theta", "serving_rate", "best_so_far", "acq_kind"])
            w.writerows(self.history)


def _result(tr: _Tracker) -> SearchResult:
    return SearchResult(tr.best_theta, tr.best, tr.history)


def bo_optimize(objective: Callable, space: CachingSpace, acq: AcquisitionSpec | str = "pi",
                init_samples: int = 5, budget: int | None = None, patience: int | None = 100,
                rng: np.random.Generator | None = None, beta: float = 1.0, prior_mean: float = 0.5,
                jitter: float = 1e-6, pool_size: int = 500, enumerate_limit: int = 20_000,
                local_pool: bool = False) -> SearchResult:
    """Bayesian optimisation of ``objective`` over ``space``.

    Starts from ``init_samples`` distinct uniform strategies, then repeatedly
    evaluates the candidate with the highest acquisition score. Candidates are
    every unevaluated strategy when the space has at most ``enumerate_limit``
    members, otherwise a fresh uniform sample of ``pool_size``. Stops after
    ``budget`` evaluations, after ``patience`` evaluations without a new best,
    or when nothing is left to evaluate. With ``local_pool`` the sampled pool
    also holds every single-position change of the incumbent.
    """
    spec = AcquisitionSpec(acq) if isinstance(acq, str) else acq
    rng = rng if rng is not None else np.random.default_rng(0)
    if init_samples < 1:
        raise ValueError("need at least one initial sample")
    if budget is not None and budget < init_samples:
        raise ValueError(f"budget {budget} is smaller than init_samples {init_samples}")
    full = space.enumerate() if space.size() <= enumerate_limit else None
    if full is not None and not full:
        raise ValueError("search space is empty")
    tr = _Tracker(objective, space, spec.kind)

    def left() -> int:
        return len(full) - len(tr.seen) if full is not None else 1

    if full is not None:
        for i in rng.permutation(len(full))[:init_samples]:
            tr(full[i], "init")
    else:
        tries = 0
        while len(tr.seen) < init_samples and tries < 100 * init_samples:
            tr(space.sample(rng), "init")
            tries += 1
    gp = GaussianProcess(beta, prior_mean, jitter)
    while left() > 0:
        if budget is not None and len(tr.seen) >= budget:
            break
        if patience is not None and tr.stale >= patience:
            break
        if full is not None:
            pool = [th for th in full if th not in tr.seen]
        else:
            drawn = [space.sample(rng) for _ in range(pool_size)]
            if local_pool:
                drawn += [space.canonical(c) for i in range(space.num_slots)
                          for c in coordinate_candidates(space, tr.best_theta, i) if space.is_valid(c)]
            pool = list(dict.fromkeys(th for th in drawn if th not in tr.seen))
            if not pool:
                break
        X = np.array([space.encode(th) for th in tr.seen])
        gp.fit(X, np.array(list(tr.seen.values())))
        mean, std = gp.predict(np.array([space.encode(th) for th in pool]))
        scores = acquisition(spec, mean, std, tr.best)
        tr(pool[int(np.argmax(scores))])
    return _result(tr)


def coordinate_candidates(space: CachingSpace, theta: Sequence[int], i: int) -> list[tuple[int, ...]]:
    """Position ``i`` set to every VNF in turn (before validity filtering)."""
    out = []
    for f in space.vnfs:
        th = list(theta)
        th[i] = f
        out.append(tuple(th))
    return out


def _exhausted(tr: _Tracker, patience: int | None, max_evaluations: int | None) -> bool:
    return ((patience is not None and tr.stale >= patience)
            or (max_evaluations is not None and len(tr.history) >= max_evaluations))


def coordinate_descent(objective: Callable, space: CachingSpace, theta0: Sequence[int] | None = None,
                       patience: int | None = 100, max_evaluations: int | None = None,
                       rng: np.random.Generator | None = None) -> SearchResult:
    """Cycle through positions; at each, try every VNF there and keep the best.

    Every valid candidate is requested, the current strategy included. Stops
    after ``patience`` consecutive requests without a new best or after
    ``max_evaluations`` requests; with neither set it stops after a full
    cycle that changed nothing.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    theta = space.canonical(theta0) if theta0 is not None else space.sample(rng)
    tr = _Tracker(objective, space, "cd")
    current = tr(theta)
    unchanged = i = 0
    N = space.num_slots
    while not _exhausted(tr, patience, max_evaluations):
        if patience is None and max_evaluations is None and unchanged >= N:
            break
        best_th, best_m = theta, current
        for cand in coordinate_candidates(space, theta, i):
            if not space.is_valid(cand):
                continue
            m = tr(cand)
            if m > best_m:
                best_th, best_m = space.canonical(cand), m
            if _exhausted(tr, patience, max_evaluations):
                break
        if best_th != theta:
            theta, current, unchanged = best_th, best_m, 0
        else:
            unchanged += 1
        i = (i + 1) % N
    return _result(tr)


def pattern_neighbors(space: CachingSpace, theta: Sequence[int]) -> list[Strategy]:
    """Strategies with one position moved to the next VNF id (valid ones only)."""
    order = space.vnfs
    out = []
    for j, f in enumerate(theta):
        k = order.index(f)
        if k + 1 >= len(order):
            continue
        th = list(theta)
        th[j] = order[k + 1]
        if space.is_valid(th):
            out.append(space.canonical(th))
    return list(dict.fromkeys(out))


def pattern_search(objective: Callable, space: CachingSpace, theta0: Sequence[int] | None = None,
                   patience: int | None = 100, max_evaluations: int | None = None,
                   rng: np.random.Generator | None = None) -> SearchResult:
    """Move to the best successor neighbour each round.

    Stops when no neighbour is left, after ``patience`` consecutive requests
    without a new best, or after ``max_evaluations`` requests.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    theta = space.canonical(theta0) if theta0 is not None else space.sample(rng)
    tr = _Tracker(objective, space, "ps")
    tr(theta)
    while not _exhausted(tr, patience, max_evaluations):
        nbrs = pattern_neighbors(space, theta)
        if not nbrs:
            break
        vals = []
        for th in nbrs:
            vals.append(tr(th))
            if _exhausted(tr, patience, max_evaluations):
                break
        theta = nbrs[int(np.argmax(vals))]
    return _result(tr)


def popularity_greedy(weights: Sequence[float], capacities: Sequence[int],
                      vnf_ids: Sequence[int] | None = None) -> Strategy:
    """Every satellite caches the most popular VNFs (ties go to the smaller id)."""
    ids = list(vnf_ids) if vnf_ids is not None else list(range(1, len(weights) + 1))
    if len(ids) != len(weights):
        raise ValueError("one weight per VNF is required")
    ranked = [f for _, f in sorted(zip(weights, ids), key=lambda wf: (-wf[0], wf[1]))]
    return tuple(x for c in capacities for x in sorted(ranked[:c]))


def exhaustive_optimum(objective: Callable, space: CachingSpace) -> tuple[float, list[Strategy]]:
    """Best value over the whole space and every strategy attaining it."""
    vals = {th: objective(th) for th in space.enumerate()}
    best = max(vals.values())
    return best, [th for th, m in vals.items() if m == best]
