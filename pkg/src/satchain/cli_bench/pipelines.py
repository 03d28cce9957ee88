"""The runnable pipelines behind each subcommand, plus report and manifest writing."""
from __future__ import annotations

import csv
import json
import os
import platform
from dataclasses import dataclass, field

import numpy as np

from .. import __version__
from ..caching_opt import (AcquisitionSpec, CachingObjective, SearchResult, bo_optimize, coordinate_descent,
                           pattern_search, popularity_greedy)
from ..dp_solver import simulate_dp_policy, value_iteration
from ..engine.config import SystemConfig
from ..engine.sim import Simulator
from ..maql import KEY_FUNCTIONS, LearningParams, TrainingResult, train
from ..placement_baselines import CentralQParams, GreedyPolicy, NbpPolicy, RandomPolicy, train_central_q
from .scenario import Scenario

POLICIES = ("maql", "dp", "greedy", "qcentral", "nbp", "random")
ACQUISITIONS = ("pi", "ei", "ucb", "lcb")


@dataclass
class RunReport:
    """Outcome of one policy run; ``series`` holds the training curve if there was one."""

    scenario: str
    policy: str
    seed: int
    metrics: dict
    series: list = field(default_factory=list)      # (episode, serving_rate, avg_cost)

    def row(self) -> dict:
        return {"scenario": self.scenario, "policy": self.policy, "seed": self.seed, **self.metrics}

    @property
    def serving_rate(self) -> float:
        return self.metrics["serving_rate"]


def learning_params(sc: Scenario) -> LearningParams:
    r = sc.run
    return LearningParams(learning_rate=r["learning_rate"], decayed_rate=r["decayed_rate"],
                          decay_patience=r["decay_patience"], discount=sc.config.cost.learning_discount,
                          q_init=r["q_init"], window_episodes=r["window_episodes"], eval_slots=r["eval_slots"])


def key_function(sc: Scenario):
    name = sc.run["key"]
    if name == "auto":
        name = "generator" if sc.config.requests.generator is not None else "catalog"
    return KEY_FUNCTIONS[name]


def train_maql(sc: Scenario, seed: int | None = None, episodes: int | None = None) -> TrainingResult:
    seed = sc.seed if seed is None else seed
    return train(sc.config, learning_params(sc), episodes or sc.run["episodes"], seed=seed,
                 eval_seed=10_000 + seed, key_fn=key_function(sc))


def make_policy(sc: Scenario, name: str, seed: int, config: SystemConfig | None = None):
    """Ready-to-run policy; learning policies are trained first. Returns (policy, training result or None)."""
    cfg = config or sc.config
    if name == "maql":
        res = train_maql(sc, seed)
        return res.agents, res
    if name == "greedy":
        return GreedyPolicy(cfg, knows_caching=sc.run["greedy_knows_caching"], seed=seed), None
    if name == "qcentral":
        params = CentralQParams(discount=cfg.cost.learning_discount)
        return train_central_q(cfg, sc.run["central_q_slots"], params, seed=seed), None
    if name == "nbp":
        return NbpPolicy(cfg), None
    if name == "random":
        return RandomPolicy(seed), None
    raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICIES)}")


def _stats_metrics(stats) -> dict:
    s = stats.summary()
    return {k: s[k] for k in ("serving_rate", "request_serving_rate", "average_delay", "average_request_cost",
                              "average_slot_cost", "arrivals", "completed", "rejected", "expired")}


def simulate(sc: Scenario, policy: str, seed: int | None = None, slots: int | None = None,
             record_trace: bool = False) -> tuple[RunReport, Simulator | None]:
    """Run one policy on the scenario's fixed caching for ``slots`` slots."""
    if not sc.caching_fixed:
        raise ValueError("the scenario asks for caching to be optimised; run optimize-cache first "
                         "or give caching.per_satellite")
    seed = sc.seed if seed is None else seed
    slots = slots or sc.run["slots"]
    if policy == "dp":
        return dp_report(sc, seed, slots), None
    pol, res = make_policy(sc, policy, seed)
    if policy == "maql":
        sim = pol.evaluate(slots, seed, record_trace=record_trace)
    else:
        sim = Simulator(sc.config, pol, seed=seed, record_trace=record_trace)
        sim.run(slots)
    series = res.trace if res is not None else []
    return RunReport(sc.name, policy, seed, _stats_metrics(sim.stats), series), sim


def dp_report(sc: Scenario, seed: int, slots: int, table=None) -> RunReport:
    table = table or value_iteration(sc.config, max_states=sc.run["dp_max_states"])
    run = simulate_dp_policy(table, slots, seed=seed)
    c = run.slot_costs
    asked = c > 0
    served = asked & (c < run.penalty)
    metrics = {
        "serving_rate": run.serving_rate(),
        "request_serving_rate": float(served.sum() / asked.sum()) if asked.any() else 1.0,
        # a rejection is decided in the arrival slot
        "average_delay": float(np.where(served, c, 1.0)[asked].mean()) if asked.any() else 0.0,
        "average_slot_cost": run.average_slot_cost(),
        "expected_discounted_cost": table.start_value(),
        "arrivals": int(asked.sum()),
        "completed": int(served.sum()),
        "rejected": int((asked & ~served).sum()),
        "states": table.num_states,
    }
    return RunReport(sc.name, "dp", seed, metrics)


def objective_for(sc: Scenario, seed: int | None = None) -> CachingObjective:
    if sc.space is None:
        raise ValueError("the scenario has fixed caching; use caching.optimize to search over strategies")
    seed = sc.seed if seed is None else seed
    return CachingObjective(sc.config, sc.space, horizon=sc.run["objective_slots"], seed=seed,
                            repeats=sc.run["objective_repeats"])


def optimize_cache(sc: Scenario, method: str = "bo", acq: str = "pi", seed: int | None = None,
                   objective: CachingObjective | None = None, budget: int | None = -1,
                   patience: int | None = -1) -> SearchResult:
    """Search the scenario's caching space. ``seed`` drives the search; the objective keeps the scenario seed.

    ``budget`` and ``patience`` default (-1) to the scenario's settings; None disables them.
    """
    seed = sc.seed if seed is None else seed
    obj = objective or objective_for(sc)
    r = sc.run
    patience = r["patience"] if patience == -1 else patience
    budget = r["budget"] if budget == -1 else budget
    rng = np.random.default_rng(seed)
    if method == "bo":
        return bo_optimize(obj, sc.space, AcquisitionSpec(acq, r["xi"]), init_samples=r["init_samples"],
                           budget=budget, patience=patience, rng=rng, beta=r["beta"], prior_mean=r["prior_mean"],
                           jitter=r["jitter"], pool_size=r["pool_size"], local_pool=r["local_pool"])
    if method == "cd":
        return coordinate_descent(obj, sc.space, patience=patience, max_evaluations=budget, rng=rng)
    if method == "ps":
        return pattern_search(obj, sc.space, patience=patience, max_evaluations=budget, rng=rng)
    if method == "popularity":
        if sc.vnf_weights is None:
            raise ValueError("popularity caching needs generator-mode services")
        theta = popularity_greedy(sc.vnf_weights, sc.space.capacities)
        m = obj(theta)
        return SearchResult(theta, m, [(1, sc.space.format(theta), m, m, "popularity")])
    raise ValueError(f"unknown caching method {method!r}")


# -- output -------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, float):
        return f"{x:.10g}"
    return x


def write_rows(path, rows: list[dict]):
    """CSV with the union of keys, in first-seen order."""
    keys: list[str] = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in rows:
            w.writerow([_fmt(r.get(k, "")) for k in keys])


def write_series(path, series):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "serving_rate", "avg_cost"])
        w.writerows([(e, _fmt(float(s)), _fmt(float(c))) for e, s, c in series])


def versions() -> dict:
    import scipy
    import yaml
    return {"satchain": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pyyaml": yaml.__version__}


def write_manifest(out_dir, command: str, seed: int, scenarios: list[Scenario], extra: dict | None = None):
    """Run manifest: no timestamps, so identical runs give identical files."""
    manifest = {
        "command": command,
        "seed": seed,
        "scenarios": [{"name": s.name, "config_sha256": s.config_hash()} for s in scenarios],
        "versions": versions(),
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
