"""VNFs, service function chains and the request arrival process."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class SfcSpec:
    """One service function chain with per-stage demands.

    Stage ``f`` (1-based) runs VNF ``chain[f-1]``, needs ``compute[f-1]``
    units while executing and produces an output of ``storage[f-1]`` units.
    ``duration`` holds the execution slots per stage; ``site_durations`` may
    override it per satellite as ``{v: (d_1, ..., d_l)}``.
    """

    sfc_id: Hashable
    chain: tuple[int, ...]
    compute: tuple[int, ...]
    storage: tuple[int, ...]
    duration: tuple[int, ...]
    delay_tolerance: int
    site_durations: Mapping[int, tuple[int, ...]] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n = len(self.chain)
        if n < 1:
            raise ValueError(f"SFC {self.sfc_id}: chain must contain at least one VNF")
        if len(set(self.chain)) != n:
            raise ValueError(f"SFC {self.sfc_id}: chain repeats a VNF")
        for name in ("compute", "storage", "duration"):
            vals = getattr(self, name)
            if len(vals) != n:
                raise ValueError(f"SFC {self.sfc_id}: {name} needs {n} entries, got {len(vals)}")
            if any(x <= 0 for x in vals):
                raise ValueError(f"SFC {self.sfc_id}: {name} entries must be positive")
        for v, ds in self.site_durations.items():
            if len(ds) != n or any(x <= 0 for x in ds):
                raise ValueError(f"SFC {self.sfc_id}: bad durations for satellite {v}")
        if self.delay_tolerance < 0:
            raise ValueError(f"SFC {self.sfc_id}: negative delay tolerance")

    @property
    def length(self) -> int:
        return len(self.chain)

    def vnf(self, f: int) -> int:
        return self.chain[f - 1]

    def exec_slots(self, f: int, v: int) -> int:
        ds = self.site_durations.get(v)
        return ds[f - 1] if ds is not None else self.duration[f - 1]

    def payload(self, f: int) -> int:
        """Size of the data carried by a request whose next stage is ``f``.

        Zero before the first stage runs; otherwise the output of stage ``f-1``.
        """
        return 0 if f <= 1 else self.storage[f - 2]


def make_sfc(sfc_id, chain, compute, storage, *, exec_slots=1, delay_tolerance=15) -> SfcSpec:
    n = len(chain)
    as_tuple = lambda x: tuple(x) if isinstance(x, (list, tuple)) else (x,) * n
    return SfcSpec(sfc_id, tuple(chain), as_tuple(compute), as_tuple(storage),
                   as_tuple(exec_slots), delay_tolerance)


TABLE3_CHAINS = {
    1: (2, 3), 2: (2, 1, 3), 3: (1, 3), 4: (3, 4), 5: (2, 3, 5), 6: (1, 4, 6), 7: (5, 6),
    8: (7, 8, 9), 9: (1, 10), 10: (4, 8), 11: (6, 10), 12: (3, 4), 13: (7, 8), 14: (1, 2),
}
_TABLE3_DEMANDS = {  # sfc -> (storage per stage, compute per stage)
    1: ((3, 1), (5, 4)),
    2: ((1, 3, 1), (3, 4, 4)),
    3: ((1, 2), (3, 3)),
}


def table3_catalog(delay_tolerance: int = 15, exec_slots: int = 1) -> dict[int, SfcSpec]:
    """The 14 reference chains with their stock resource demands."""
    catalog = {}
    for h, chain in TABLE3_CHAINS.items():
        g, q = _TABLE3_DEMANDS.get(h, ((1,) * len(chain), (2,) * len(chain)))
        catalog[h] = make_sfc(h, chain, q, g, exec_slots=exec_slots, delay_tolerance=delay_tolerance)
    return catalog


BUILTIN_CATALOGS = {"table3": table3_catalog}


def zipf_weights(n: int, chi: float) -> np.ndarray:
    if n < 1 or chi < 0:
        raise ValueError(f"need n >= 1 and chi >= 0, got n={n}, chi={chi}")
    w = np.arange(1, n + 1, dtype=float) ** (-chi)
    return w / w.sum()


def _normalize(p, n, what) -> np.ndarray:
    arr = np.full(n, 1.0 / n) if p is None else np.asarray(p, dtype=float)
    if arr.shape != (n,) or np.any(arr < 0) or not np.isclose(arr.sum(), 1.0, atol=1e-9):
        raise ValueError(f"{what} must be {n} non-negative probabilities summing to 1")
    return arr / arr.sum()


def _draw(rng: np.random.Generator, cdf: np.ndarray) -> int:
    """Index drawn from a cumulative distribution (one uniform per draw)."""
    return min(int(np.searchsorted(cdf, rng.random(), side="right")), len(cdf) - 1)


def generate_random_sfc(vnf_ids: Sequence[int], length_probs, vnf_weights, rng: np.random.Generator) -> tuple[int, ...]:
    """Random ordered chain of distinct VNFs.

    The chain length ``nu`` is drawn from ``length_probs`` (over ``1..len(vnf_ids)``),
    then ``nu`` VNFs are drawn without replacement from ``vnf_weights``; the
    remaining weights are renormalised after every pick.
    """
    ids = list(vnf_ids)
    if not ids:
        raise ValueError("vnf set is empty")
    lp = np.asarray(length_probs, dtype=float)
    nu = _draw(rng, np.cumsum(lp / lp.sum())) + 1
    weights = np.asarray(vnf_weights, dtype=float).copy()
    chain = []
    for _ in range(nu):
        total = weights.sum()
        i = _draw(rng, np.cumsum(weights / total))
        chain.append(ids[i])
        weights[i] = 0.0
    return tuple(chain)


@dataclass(frozen=True)
class SfcGenerator:
    """Random-chain mode: each request carries a freshly generated chain."""

    num_vnfs: int
    length_probs: tuple[float, ...]
    vnf_weights: tuple[float, ...]
    compute: int = 2
    storage: int = 1
    exec_slots: int = 1
    delay_tolerance: int = 80

    @classmethod
    def uniform(cls, num_vnfs: int, max_length: int | None = None, **kw) -> "SfcGenerator":
        L = max_length or num_vnfs
        lp = tuple(1.0 / L if i < L else 0.0 for i in range(num_vnfs))
        return cls(num_vnfs, lp, tuple([1.0 / num_vnfs] * num_vnfs), **kw)

    @classmethod
    def zipf(cls, num_vnfs: int, chi: float, max_length: int | None = None, **kw) -> "SfcGenerator":
        base = cls.uniform(num_vnfs, max_length, **kw)
        return cls(num_vnfs, base.length_probs, tuple(zipf_weights(num_vnfs, chi)), **{
            k: getattr(base, k) for k in ("compute", "storage", "exec_slots", "delay_tolerance")})

    def sample(self, rng: np.random.Generator) -> SfcSpec:
        chain = generate_random_sfc(range(1, self.num_vnfs + 1), self.length_probs, self.vnf_weights, rng)
        return make_sfc(chain, chain, self.compute, self.storage,
                        exec_slots=self.exec_slots, delay_tolerance=self.delay_tolerance)


@dataclass(frozen=True)
class ServiceRequest:
    sfc: SfcSpec
    requester: int
    initiated_at: int


class RequestModel:
    """Bernoulli arrivals with categorical requester and service draws."""

    def __init__(self, arrival_prob: float, num_satellites: int, catalog: Mapping | None = None,
                 requester_probs=None, service_probs=None, generator: SfcGenerator | None = None):
        if not 0.0 <= arrival_prob <= 1.0:
            raise ValueError(f"arrival probability must be in [0, 1], got {arrival_prob}")
        if (catalog is None) == (generator is None):
            raise ValueError("give exactly one of catalog or generator")
        self.arrival_prob = float(arrival_prob)
        self.num_satellites = num_satellites
        self.requester_probs = _normalize(requester_probs, num_satellites, "requester_probs")
        self._req_cdf = np.cumsum(self.requester_probs)
        self.generator = generator
        if catalog is not None:
            self.sfcs: tuple[SfcSpec, ...] = tuple(catalog.values())
            self.service_probs = _normalize(service_probs, len(self.sfcs), "service_probs")
            self._svc_cdf = np.cumsum(self.service_probs)
        else:
            self.sfcs = ()
            self.service_probs = np.zeros(0)

    def outcomes(self):
        """``(probability, requester, sfc)`` for every possible arrival (catalog mode)."""
        if self.generator is not None:
            raise ValueError("outcome enumeration needs a finite catalog")
        out = []
        for i, pn in enumerate(self.requester_probs):
            for j, ph in enumerate(self.service_probs):
                p = self.arrival_prob * pn * ph
                if p > 0:
                    out.append((p, i + 1, self.sfcs[j]))
        return out

    @property
    def max_delay_tolerance(self) -> int:
        if self.generator is not None:
            return self.generator.delay_tolerance
        return max(s.delay_tolerance for s in self.sfcs)


def sample_request(model: RequestModel, t: int, rng: np.random.Generator) -> ServiceRequest | None:
    """Draw the arrival for slot ``t``, or None when no request is initiated."""
    if model.arrival_prob <= 0.0 or rng.random() >= model.arrival_prob:
        return None
    n = _draw(rng, model._req_cdf) + 1
    if model.generator is not None:
        sfc = model.generator.sample(rng)
    else:
        sfc = model.sfcs[_draw(rng, model._svc_cdf)]
    return ServiceRequest(sfc, n, t)
