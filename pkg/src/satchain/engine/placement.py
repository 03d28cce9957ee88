"""Whole-request placements, their constraints and the horizon-state transition."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from ..services import SfcSpec
from ..topology import Topology


@dataclass(frozen=True)
class CostModel:
    rejection_penalty: float = 100.0
    dp_discount: float = 0.6
    learning_discount: float = 0.6

    def __post_init__(self):
        for name in ("dp_discount", "learning_discount"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.rejection_penalty <= 0:
            raise ValueError("rejection penalty must be positive")


@dataclass(frozen=True)
class Placement:
    """Handler per slot (``handlers[k-1]`` handles slot k) and activation slot per stage.

    The empty placement stands for a rejection.
    """

    handlers: tuple[int, ...] = ()
    activations: tuple[int, ...] = ()

    @property
    def is_rejection(self) -> bool:
        return not self.handlers

    def __len__(self):
        return len(self.handlers)


REJECT = Placement()


def placement_cost(model: CostModel, p: Placement) -> float:
    return model.rejection_penalty if p.is_rejection else float(len(p.handlers))


@dataclass(frozen=True)
class SystemState:
    """Resources still free on each satellite for the next K slots plus the pending request.

    ``compute[v-1][k-1]`` / ``storage[v-1][k-1]`` refer to slot k counted from
    the current one. ``sfc`` is None (and ``requester`` 0) when nothing
    arrived in the previous slot.
    """

    compute: tuple[tuple[int, ...], ...]
    storage: tuple[tuple[int, ...], ...]
    sfc: SfcSpec | None = None
    requester: int = 0
    zeta: int = 1

    @classmethod
    def idle(cls, compute_capacity: Sequence[int], storage_capacity: Sequence[int], horizon: int,
             sfc: SfcSpec | None = None, requester: int = 0, zeta: int = 1) -> "SystemState":
        return cls(tuple((c,) * horizon for c in compute_capacity),
                   tuple((s,) * horizon for s in storage_capacity), sfc, requester, zeta)

    @property
    def horizon(self) -> int:
        return len(self.compute[0])


class InvalidPlacement(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def _stage_windows(p: Placement, sfc: SfcSpec):
    """Yield (stage, satellite, first slot, last slot) for each execution."""
    for f, m in enumerate(p.activations, start=1):
        v = p.handlers[m - 1] if 0 < m <= len(p.handlers) else None
        yield f, v, m, m + sfc.exec_slots(f, v) - 1 if v is not None else m


def resource_usage(p: Placement, sfc: SfcSpec) -> list[tuple[str, int, int, int]]:
    """``(kind, satellite, slot, amount)`` for every resource a placement holds.

    Executing satellites hold compute over the execution window; after the
    first stage has started, every other handled slot holds the output of the
    latest finished stage in storage. Nothing is held before the first stage.
    """
    if p.is_rejection:
        return []
    usage = []
    exec_slot = {}
    for f, v, first, last in _stage_windows(p, sfc):
        for k in range(first, last + 1):
            exec_slot[k] = f
            usage.append(("compute", v, k, sfc.compute[f - 1]))
    done = 0
    for k, v in enumerate(p.handlers, start=1):
        if k in exec_slot:
            done = exec_slot[k]
            continue
        if done >= 1:
            usage.append(("storage", v, k, sfc.storage[done - 1]))
    return usage


def check_constraints(p: Placement, x: SystemState, topology: Topology,
                      caching: Sequence[frozenset] | Mapping[int, frozenset],
                      start_slot: int | None = None) -> list[str]:
    """Violations of the delay, compute, storage, caching and link constraints.

    Returns an empty list for a feasible placement. ``start_slot`` is the
    absolute slot of the placement's first slot; it defaults to ``x.zeta``.
    """
    sfc, n = x.sfc, x.requester
    if sfc is None:
        return ["structure: no pending request"]
    if p.is_rejection:
        return []
    t0 = x.zeta if start_slot is None else start_slot
    K = x.horizon
    cache = (lambda v: caching[v - 1]) if isinstance(caching, Sequence) else (lambda v: caching[v])
    phi, m = p.handlers, p.activations
    L = len(phi)
    out = []
    if L > sfc.delay_tolerance:
        out.append(f"(7) delay: |phi|={L} exceeds tolerance {sfc.delay_tolerance}")
    if L > K:
        out.append(f"structure: |phi|={L} exceeds horizon {K}")
    if any(not 1 <= v <= topology.num_satellites for v in phi):
        return out + ["structure: unknown satellite in handlers"]
    if phi[0] != n:
        out.append(f"structure: first handler {phi[0]} is not the requester {n}")
    if len(m) != sfc.length:
        return out + [f"structure: {len(m)} activations for {sfc.length} stages"]
    exec_slots = set()
    prev_end = 0
    for f, v, first, last in _stage_windows(p, sfc):
        if not 1 <= first <= L or last > L:
            out.append(f"structure: stage {f} window [{first},{last}] outside placement")
            continue
        if first <= prev_end:
            out.append(f"structure: stage {f} starts at {first} before stage {f - 1} ends")
        prev_end = last
        if any(phi[k - 1] != v for k in range(first, last + 1)):
            out.append(f"structure: stage {f} changes handler mid-execution")
        exec_slots.update(range(first, last + 1))
        if sfc.vnf(f) not in cache(v):
            out.append(f"(10) caching: VNF {sfc.vnf(f)} (stage {f}) not cached on satellite {v}")
    if out:
        return out
    for kind, v, k, amount in resource_usage(p, sfc):
        if k > K:
            continue
        avail = (x.compute if kind == "compute" else x.storage)[v - 1][k - 1]
        if amount > avail:
            tag = "(8) compute" if kind == "compute" else "(9) storage"
            out.append(f"{tag}: satellite {v} slot {k} needs {amount}, has {avail}")
    for k in range(1, L + 1):
        nxt = phi[k] if k < L else n
        if nxt == phi[k - 1]:
            continue
        if k in exec_slots:
            out.append(f"structure: transfer at slot {k} while executing")
        elif not topology.is_active(phi[k - 1], nxt, t0 + k - 1):
            out.append(f"(11) link: ({phi[k - 1]},{nxt}) inactive at slot {k}")
    if m[-1] + sfc.exec_slots(sfc.length, phi[m[-1] - 1]) - 1 > L:
        out.append("structure: last stage ends after the placement")
    return out


def transition(x: SystemState, p: Placement, next_sfc: SfcSpec | None, next_requester: int,
               compute_capacity: Sequence[int], storage_capacity: Sequence[int], period: int,
               topology: Topology | None = None, caching=None) -> SystemState:
    """Reserve the placement's resources, shift the horizon one slot and install the next request.

    When ``topology`` and ``caching`` are given the placement is validated
    first and :class:`InvalidPlacement` names every violated constraint.
    """
    if topology is not None and not p.is_rejection:
        bad = check_constraints(p, x, topology, caching)
        if bad:
            raise InvalidPlacement(bad)
    comp = [list(r) for r in x.compute]
    stor = [list(z) for z in x.storage]
    if not p.is_rejection:
        for kind, v, k, amount in resource_usage(p, x.sfc):
            (comp if kind == "compute" else stor)[v - 1][k - 1] -= amount
    new_c = tuple(tuple(r[1:]) + (cap,) for r, cap in zip(comp, compute_capacity))
    new_z = tuple(tuple(z[1:]) + (cap,) for z, cap in zip(stor, storage_capacity))
    zeta = x.zeta % period + 1
    return SystemState(new_c, new_z, next_sfc, next_requester if next_sfc is not None else 0, zeta)
