"""Scenario files: parsing, validation with field-path diagnostics, and construction.

A scenario is one YAML document. Numeric fields carry their unit in the
name (``*_slots``, ``*_units``). See ``README.md`` for the full layout; the
short version is::

    name: example
    seed: 0
    topology:
      groups: [[1, 3, 5], [2, 4, 6]]
      inter_group_period_slots: 4
      intra_group: {period_slots: 2, duration_slots: 1}
    resources: {compute_units: 4, storage_units: 4}
    services: {catalog: table3, sfcs: [4, 5, 6], delay_tolerance_slots: 15}
    requests: {arrival_prob: 0.9}
    caching:
      per_satellite: [[1, 2], [3, 4], [5, 6], [7, 8], [9, 10], [1, 10]]
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import yaml

from ..caching_opt import CachingSpace
from ..engine.config import SystemConfig
from ..engine.placement import CostModel
from ..services import BUILTIN_CATALOGS, RequestModel, SfcGenerator, make_sfc, zipf_weights
from ..topology import ALWAYS_ON, IslSchedule, Topology

# Knobs a scenario may set for the pipelines; values are the defaults.
RUN_DEFAULTS: dict[str, Any] = {
    "slots": 5000,
    "episodes": 2000,
    "window_episodes": 50,
    "eval_slots": 500,
    "learning_rate": 0.1,
    "decayed_rate": 0.01,
    "decay_patience": 100,
    "q_init": 0.0,
    "key": "auto",
    "central_q_slots": 40_000,
    "greedy_knows_caching": True,
    "objective_slots": 1000,
    "objective_repeats": 1,
    "init_samples": 5,
    "budget": None,
    "patience": 100,
    "beta": 1.0,
    "prior_mean": 0.5,
    "jitter": 1e-6,
    "xi": 2.0,
    "pool_size": 500,
    "local_pool": False,
    "dp_max_states": 500_000,
}

_SECTIONS = ("name", "seed", "topology", "resources", "services", "requests", "caching", "cost", "run")


@dataclass
class Diagnostic:
    path: str
    message: str
    line: int | None = None

    def __str__(self):
        where = f"line {self.line}: " if self.line else ""
        return f"{where}{self.path or '<root>'}: {self.message}"


class ScenarioError(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(str(d) for d in diagnostics))


@dataclass
class Scenario:
    name: str
    seed: int
    config: SystemConfig
    raw: dict
    run: dict = field(default_factory=dict)
    space: CachingSpace | None = None          # set when caching is to be optimised
    vnf_weights: tuple[float, ...] | None = None

    @property
    def caching_fixed(self) -> bool:
        return self.space is None

    def config_hash(self) -> str:
        text = json.dumps(self.raw, sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()

    def with_seed(self, seed: int) -> "Scenario":
        raw = copy.deepcopy(self.raw)
        raw["seed"] = seed
        return build_scenario(raw)


def _line_map(node, path: str = "", out: dict | None = None) -> dict[str, int]:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            p = f"{path}.{k.value}" if path else str(k.value)
            out[p] = k.start_mark.line + 1
            _line_map(v, p, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            p = f"{path}[{i}]"
            out[p] = item.start_mark.line + 1
            _line_map(item, p, out)
    return out


def _lookup_line(lines: dict[str, int], path: str) -> int | None:
    while path:
        if path in lines:
            return lines[path]
        cut = max(path.rfind("."), path.rfind("["))
        path = path[:cut] if cut > 0 else ""
    return None


class _Checker:
    """Collects diagnostics while reading a raw scenario dict."""

    def __init__(self):
        self.diags: list[Diagnostic] = []

    def error(self, path: str, message: str):
        self.diags.append(Diagnostic(path, message))

    def section(self, data: dict, key: str, path: str, allowed, required=False) -> dict | None:
        val = data.get(key)
        p = f"{path}.{key}" if path else key
        if val is None:
            if required:
                self.error(p, "missing required section")
            return None
        if not isinstance(val, dict):
            self.error(p, "expected a mapping")
            return None
        for k in val:
            if k not in allowed:
                self.error(f"{p}.{k}", f"unknown field (allowed: {', '.join(allowed)})")
        return val

    def integer(self, data: dict, key: str, path: str, *, required=False, default=None, lo=None):
        p = f"{path}.{key}" if path else key
        if key not in data or data[key] is None:
            if required:
                self.error(p, "missing required field")
            return default
        val = data[key]
        if isinstance(val, bool) or not isinstance(val, int):
            self.error(p, f"expected an integer, got {val!r}")
            return default
        if lo is not None and val < lo:
            self.error(p, f"must be >= {lo}, got {val}")
            return default
        return val

    def number(self, data: dict, key: str, path: str, *, default=None, lo=None, hi=None, required=False):
        p = f"{path}.{key}" if path else key
        if key not in data or data[key] is None:
            if required:
                self.error(p, "missing required field")
            return default
        val = data[key]
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            self.error(p, f"expected a number, got {val!r}")
            return default
        if (lo is not None and val < lo) or (hi is not None and val > hi):
            self.error(p, f"must lie in [{lo}, {hi}], got {val}")
            return default
        return float(val)

    def per_satellite(self, data: dict, key: str, path: str, V: int, *, lo=1) -> tuple | None:
        p = f"{path}.{key}"
        val = data.get(key)
        if val is None:
            self.error(p, "missing required field")
            return None
        vals = [val] * V if isinstance(val, int) and not isinstance(val, bool) else val
        if not isinstance(vals, list) or len(vals) != V:
            self.error(p, f"expected an integer or a list of {V} integers")
            return None
        for i, x in enumerate(vals):
            if isinstance(x, bool) or not isinstance(x, int) or x < lo:
                self.error(f"{p}[{i}]", f"expected an integer >= {lo}, got {x!r}")
                return None
        return tuple(vals)


def _topology(ck: _Checker, data: dict) -> Topology | None:
    top = ck.section(data, "topology", "", ("satellites", "links", "groups", "inter_group_period_slots",
                                            "inter_group_duration_slots", "intra_group"), required=True)
    if top is None:
        return None
    n0 = len(ck.diags)
    if ("links" in top) == ("groups" in top):
        ck.error("topology", "give exactly one of 'links' or 'groups'")
        return None
    if "groups" in top:
        groups = top["groups"]
        if (not isinstance(groups, list) or not groups
                or not all(isinstance(g, list) and g and all(isinstance(v, int) for v in g) for g in groups)):
            ck.error("topology.groups", "expected a list of non-empty lists of satellite ids")
            return None
        members = sorted(v for g in groups for v in g)
        V = len(members)
        if members != list(range(1, V + 1)):
            ck.error("topology.groups", f"groups must cover satellites 1..{V} exactly once")
            return None
        if "satellites" in top and top["satellites"] != V:
            ck.error("topology.satellites", f"groups hold {V} satellites, not {top['satellites']}")
        intra = ALWAYS_ON
        if "intra_group" in top:
            sec = ck.section(top, "intra_group", "topology", ("period_slots", "duration_slots", "phase_slots"))
            if sec is not None:
                intra = _schedule(ck, sec, "topology.intra_group")
                if intra is None:
                    return None
        dur = ck.integer(top, "inter_group_duration_slots", "topology", default=1, lo=1)
        raw = top.get("inter_group_period_slots")
        periods: dict | int
        if len(groups) > 1 and raw is None:
            ck.error("topology.inter_group_period_slots", "missing required field")
            return None
        if raw is None or isinstance(raw, int):
            periods = raw or 1
            if periods < 1:
                ck.error("topology.inter_group_period_slots", "must be >= 1")
                return None
            if dur > periods:
                ck.error("topology.inter_group_duration_slots",
                         f"duration {dur} exceeds the inter-group period {periods}")
                return None
        else:
            periods = {}
            if not isinstance(raw, list):
                ck.error("topology.inter_group_period_slots", "expected an integer or a list of {groups, period_slots}")
                return None
            for i, item in enumerate(raw):
                p = f"topology.inter_group_period_slots[{i}]"
                g = item.get("groups") if isinstance(item, dict) else None
                per = item.get("period_slots") if isinstance(item, dict) else None
                if (not isinstance(g, list) or len(g) != 2 or not all(isinstance(x, int) for x in g)
                        or not isinstance(per, int) or per < 1):
                    ck.error(p, "expected {groups: [i, j], period_slots: T} with 1-based group indices")
                    return None
                a, b = sorted(g)
                if not 1 <= a < b <= len(groups):
                    ck.error(p, f"group indices must be distinct and within 1..{len(groups)}")
                    return None
                if dur > per:
                    ck.error(p, f"duration {dur} exceeds period {per} between groups {a} and {b}")
                    return None
                periods[(a - 1, b - 1)] = per
            missing = [(a + 1, b + 1) for a in range(len(groups)) for b in range(a + 1, len(groups))
                       if (a, b) not in periods]
            if missing:
                ck.error("topology.inter_group_period_slots", f"no period for group pairs {missing}")
                return None
        return Topology.from_groups(groups, periods, intra=intra, duration=dur)
    V = ck.integer(top, "satellites", "topology", required=True, lo=1)
    links = top["links"]
    if V is None:
        return None
    if not isinstance(links, list):
        ck.error("topology.links", "expected a list of links")
        return None
    schedules = {}
    for i, link in enumerate(links):
        p = f"topology.links[{i}]"
        if not isinstance(link, dict):
            ck.error(p, "expected a mapping")
            continue
        pair = link.get("between")
        if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(x, int) for x in pair)):
            ck.error(f"{p}.between", "expected a pair of satellite ids")
            continue
        v, u = pair
        if not (1 <= v <= V and 1 <= u <= V) or v == u:
            ck.error(f"{p}.between", f"satellites must be distinct ids in 1..{V}, got {pair}")
            continue
        sched = _schedule(ck, {k: x for k, x in link.items() if k != "between"}, p, pair=(v, u))
        if sched is None:
            continue
        key = (min(v, u), max(v, u))
        if key in schedules:
            ck.error(p, f"pair {key} is listed twice")
            continue
        schedules[key] = sched
    return Topology(V, schedules) if len(ck.diags) == n0 else None


def _schedule(ck: _Checker, sec: dict, path: str, pair=None) -> IslSchedule | None:
    for k in sec:
        if k not in ("period_slots", "duration_slots", "phase_slots"):
            ck.error(f"{path}.{k}", "unknown field (allowed: period_slots, duration_slots, phase_slots)")
            return None
    T = ck.integer(sec, "period_slots", path, required=True, lo=1)
    tau = ck.integer(sec, "duration_slots", path, default=1, lo=1)
    phase = ck.integer(sec, "phase_slots", path, default=0, lo=0)
    if T is None:
        return None
    name = f" on pair {tuple(pair)}" if pair else ""
    if tau > T:
        ck.error(f"{path}.duration_slots", f"duration {tau} exceeds period {T}{name}")
        return None
    if phase >= T:
        ck.error(f"{path}.phase_slots", f"phase {phase} must be below period {T}{name}")
        return None
    return IslSchedule(T, tau, phase)


def _services(ck: _Checker, data: dict, V: int):
    """Returns ``(catalog dict or None, generator or None, vnf weights or None)``."""
    sec = ck.section(data, "services", "", ("catalog", "sfcs", "inline", "generator",
                                            "delay_tolerance_slots", "exec_slots"), required=True)
    if sec is None:
        return None, None, None
    n0 = len(ck.diags)
    modes = [k for k in ("catalog", "inline", "generator") if k in sec]
    if len(modes) != 1:
        ck.error("services", "give exactly one of 'catalog', 'inline' or 'generator'")
        return None, None, None
    D = ck.integer(sec, "delay_tolerance_slots", "services", default=15, lo=0)
    d = ck.integer(sec, "exec_slots", "services", default=1, lo=1)
    if modes[0] == "catalog":
        name = sec["catalog"]
        if name not in BUILTIN_CATALOGS:
            ck.error("services.catalog", f"unknown catalog {name!r} (known: {', '.join(BUILTIN_CATALOGS)})")
            return None, None, None
        full = BUILTIN_CATALOGS[name](delay_tolerance=D, exec_slots=d)
        ids = sec.get("sfcs", sorted(full))
        if not isinstance(ids, list) or not ids:
            ck.error("services.sfcs", "expected a non-empty list of SFC ids")
            return None, None, None
        for i, h in enumerate(ids):
            if h not in full:
                ck.error(f"services.sfcs[{i}]", f"SFC {h!r} is not in catalog {name!r}")
        if len(ck.diags) > n0:
            return None, None, None
        return {h: full[h] for h in ids}, None, None
    if modes[0] == "inline":
        items = sec["inline"]
        if not isinstance(items, list) or not items:
            ck.error("services.inline", "expected a non-empty list of SFC specs")
            return None, None, None
        catalog = {}
        for i, it in enumerate(items):
            p = f"services.inline[{i}]"
            if not isinstance(it, dict):
                ck.error(p, "expected a mapping")
                continue
            extra = set(it) - {"id", "chain", "compute_units", "storage_units", "exec_slots", "delay_tolerance_slots"}
            for k in sorted(extra):
                ck.error(f"{p}.{k}", "unknown field")
            sid = it.get("id", i + 1)
            if sid in catalog:
                ck.error(f"{p}.id", f"duplicate SFC id {sid!r}")
                continue
            try:
                catalog[sid] = make_sfc(sid, it["chain"], it.get("compute_units", 2), it.get("storage_units", 1),
                                        exec_slots=it.get("exec_slots", d),
                                        delay_tolerance=it.get("delay_tolerance_slots", D))
            except KeyError:
                ck.error(f"{p}.chain", "missing required field")
            except (TypeError, ValueError) as exc:
                ck.error(p, str(exc))
        return (catalog if len(ck.diags) == n0 else None), None, None
    g = ck.section(sec, "generator", "services", ("vnfs", "max_length", "popularity", "chi",
                                                  "compute_units", "storage_units"))
    if g is None:
        return None, None, None
    n = ck.integer(g, "vnfs", "services.generator", required=True, lo=1)
    if n is None:
        return None, None, None
    L = ck.integer(g, "max_length", "services.generator", default=n, lo=1)
    if L > n:
        ck.error("services.generator.max_length", f"cannot exceed the number of VNFs ({n})")
        return None, None, None
    kw = dict(compute=ck.integer(g, "compute_units", "services.generator", default=2, lo=1),
              storage=ck.integer(g, "storage_units", "services.generator", default=1, lo=1),
              exec_slots=d, delay_tolerance=D)
    pop = g.get("popularity", "uniform")
    if pop == "uniform":
        return None, SfcGenerator.uniform(n, L, **kw), tuple([1.0 / n] * n)
    if pop == "zipf":
        chi = ck.number(g, "chi", "services.generator", required=True, lo=0.0)
        if chi is None:
            return None, None, None
        return None, SfcGenerator.zipf(n, chi, L, **kw), tuple(zipf_weights(n, chi))
    ck.error("services.generator.popularity", f"expected 'uniform' or 'zipf', got {pop!r}")
    return None, None, None


def _caching(ck: _Checker, data: dict, V: int, vnfs: list[int], chains, known: list[int]):
    """Returns ``(caching tuple or None, CachingSpace or None)``.

    ``vnfs`` are the requested VNFs (the default optimisation pool); ``known`` may be wider.
    """
    sec = ck.section(data, "caching", "", ("per_satellite", "optimize"), required=True)
    if sec is None:
        return None, None
    n0 = len(ck.diags)
    if ("per_satellite" in sec) == ("optimize" in sec):
        ck.error("caching", "give exactly one of 'per_satellite' or 'optimize'")
        return None, None
    if "per_satellite" in sec:
        segs = sec["per_satellite"]
        if not isinstance(segs, list) or len(segs) != V:
            ck.error("caching.per_satellite", f"expected one list of VNF ids per satellite ({V})")
            return None, None
        for i, seg in enumerate(segs):
            p = f"caching.per_satellite[{i}]"
            if not isinstance(seg, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in seg):
                ck.error(p, "expected a list of VNF ids")
                continue
            unknown = [x for x in seg if x not in known]
            if unknown:
                ck.error(p, f"unknown VNF ids {unknown}")
            dup = sorted({x for x in seg if seg.count(x) > 1})
            if dup:
                ck.error(p, f"VNF {dup[0]} is cached more than once on satellite {i + 1}")
        if len(ck.diags) > n0:
            return None, None
        cached = {x for seg in segs for x in seg}
        if not cached:
            ck.error("caching.per_satellite", "nothing is cached anywhere")
        elif chains is not None and not any(set(c) <= cached for c in chains):
            ck.error("caching.per_satellite", "no requested chain can be served: none has all its VNFs cached")
        return tuple(frozenset(s) for s in segs), None
    opt = ck.section(sec, "optimize", "caching", ("capacities", "vnfs", "require_servable_chain"))
    if opt is None:
        return None, None
    caps = ck.per_satellite(opt, "capacities", "caching.optimize", V)
    pool = opt.get("vnfs", vnfs)
    if not isinstance(pool, list) or not pool or not all(isinstance(x, int) for x in pool):
        ck.error("caching.optimize.vnfs", "expected a non-empty list of VNF ids")
        return None, None
    if caps is None:
        return None, None
    if max(caps) > len(set(pool)):
        ck.error("caching.optimize.capacities", f"a capacity exceeds the number of VNFs ({len(set(pool))})")
        return None, None
    need = opt.get("require_servable_chain", chains is not None)
    return None, CachingSpace(tuple(pool), caps, chains if need else None)


def validate(data: Any, lines: dict[str, int] | None = None) -> list[Diagnostic]:
    """Every problem found in a raw scenario, each tagged with its field path."""
    ck = _Checker()
    _build(ck, data)
    lines = lines or {}
    for d in ck.diags:
        d.line = _lookup_line(lines, d.path)
    return ck.diags


def _guess_satellites(data: dict) -> int | None:
    """Satellite count from a topology that failed validation, so later sections still get checked."""
    top = data.get("topology")
    if not isinstance(top, dict):
        return None
    if isinstance(top.get("satellites"), int):
        return top["satellites"]
    groups = top.get("groups")
    if isinstance(groups, list) and all(isinstance(g, list) for g in groups):
        return sum(len(g) for g in groups) or None
    return None


def _build(ck: _Checker, data: Any) -> Scenario | None:
    if not isinstance(data, dict):
        ck.error("", "a scenario must be a mapping")
        return None
    for k in data:
        if k not in _SECTIONS:
            ck.error(str(k), f"unknown section (allowed: {', '.join(_SECTIONS)})")
    seed = ck.integer(data, "seed", "", required=True, lo=0)
    topo = _topology(ck, data)
    V = topo.num_satellites if topo is not None else _guess_satellites(data)
    if V is None:
        return None
    res = ck.section(data, "resources", "", ("compute_units", "storage_units"), required=True)
    compute = storage = None
    if res is not None:
        compute = ck.per_satellite(res, "compute_units", "resources", V)
        storage = ck.per_satellite(res, "storage_units", "resources", V)
    catalog, generator, weights = _services(ck, data, V)
    req = ck.section(data, "requests", "", ("arrival_prob", "requester_probs", "service_probs"), required=True)
    cost_sec = ck.section(data, "cost", "", ("rejection_penalty", "dp_discount", "learning_discount")) or {}
    run_sec = ck.section(data, "run", "", tuple(RUN_DEFAULTS)) or {}
    if req is None or (catalog is None and generator is None):
        return None
    mu = ck.number(req, "arrival_prob", "requests", required=True, lo=0.0, hi=1.0)
    if catalog is not None:
        vnfs = sorted({f for s in catalog.values() for f in s.chain})
        chains = [s.chain for s in catalog.values()]
        # a builtin catalog names VNFs beyond the selected SFCs; caching those is wasteful, not wrong
        name = data["services"].get("catalog")
        known = sorted({f for s in BUILTIN_CATALOGS[name]().values() for f in s.chain}) if name else vnfs
    else:
        vnfs = list(range(1, generator.num_vnfs + 1))
        known = vnfs
        chains = None
        if "service_probs" in req:
            ck.error("requests.service_probs", "only meaningful with a finite catalog")
    caching, space = _caching(ck, data, V, vnfs, chains, known)
    cost = CostModel(
        rejection_penalty=ck.number(cost_sec, "rejection_penalty", "cost", default=100.0, lo=1e-9),
        dp_discount=ck.number(cost_sec, "dp_discount", "cost", default=0.6, lo=0.0, hi=1.0),
        learning_discount=ck.number(cost_sec, "learning_discount", "cost", default=0.6, lo=0.0, hi=1.0),
    )
    run = dict(RUN_DEFAULTS)
    run.update(run_sec)
    if run["key"] not in ("auto", "catalog", "aged", "generator"):
        ck.error("run.key", f"expected auto, catalog, aged or generator, got {run['key']!r}")
    if ck.diags or mu is None or topo is None:
        return None
    try:
        model = RequestModel(mu, V, catalog, req.get("requester_probs"), req.get("service_probs"), generator)
    except ValueError as exc:
        ck.error("requests", str(exc))
        return None
    if caching is None:
        caching = tuple(frozenset(vnfs) for _ in range(V))   # placeholder until optimised
    config = SystemConfig(topo, compute, storage, caching, model, cost)
    return Scenario(str(data.get("name", "scenario")), seed, config, data, run, space, weights)


def build_scenario(data: dict) -> Scenario:
    ck = _Checker()
    sc = _build(ck, data)
    if ck.diags or sc is None:
        raise ScenarioError(ck.diags or [Diagnostic("", "invalid scenario")])
    return sc


def read_scenario_text(text: str) -> tuple[Any, dict[str, int]]:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError([Diagnostic("", f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                                        mark.line + 1 if mark else None)]) from None
    return yaml.safe_load(text), (_line_map(node) if node is not None else {})


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        data, lines = read_scenario_text(fh.read())
    diags = validate(data, lines)
    if diags:
        raise ScenarioError(diags)
    return build_scenario(data)


def dump_scenario(data: dict) -> str:
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=None)
