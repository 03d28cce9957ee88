"""Named experiment presets.

Every preset builds its scenarios as plain dicts (the same layout a
scenario file uses), runs them, and returns named tables of rows. Episode
counts and seeds are parameters; the defaults are the settings the
acceptance suite uses.
"""
from __future__ import annotations

import numpy as np

from ..caching_opt import exhaustive_optimum
from ..dp_solver import simulate_dp_policy, value_iteration
from ..maql import train
from ..engine.sim import Simulator
from .pipelines import (ACQUISITIONS, _stats_metrics, key_function, learning_params, make_policy,
                        objective_for, optimize_cache)
from .scenario import Scenario, build_scenario

Tables = dict[str, list[dict]]


# -- scenarios ------------------------------------------------------------------

def fig3_scenario(resources: int, delay_tolerance: int = 7, seed: int = 0) -> dict:
    """Three satellites, two catalog chains; small enough for exact DP at the default tolerance."""
    return {
        "name": f"fig3-R{resources}",
        "seed": seed,
        "topology": {"satellites": 3, "links": [
            {"between": [1, 2], "period_slots": 2},
            {"between": [2, 3], "period_slots": 4},
            {"between": [1, 3], "period_slots": 4},
        ]},
        "resources": {"compute_units": resources, "storage_units": resources},
        "services": {"catalog": "table3", "sfcs": [1, 3], "delay_tolerance_slots": delay_tolerance},
        "requests": {"arrival_prob": 0.9},
        "caching": {"per_satellite": [[1, 2], [2], [3]]},
        "run": {"episodes": 200_000, "window_episodes": 1000, "decay_patience": 20, "key": "aged",
                "slots": 5000},
    }


def fig4_scenario(resources: int = 4, seed: int = 0) -> dict:
    """Six satellites in two alternating groups serving ten catalog chains."""
    return {
        "name": f"fig4-R{resources}",
        "seed": seed,
        "topology": {"groups": [[1, 3, 5], [2, 4, 6]], "inter_group_period_slots": 4,
                     "intra_group": {"period_slots": 2, "duration_slots": 1}},
        "resources": {"compute_units": resources, "storage_units": resources},
        "services": {"catalog": "table3", "sfcs": list(range(4, 14)), "delay_tolerance_slots": 15},
        "requests": {"arrival_prob": 0.9},
        "caching": {"per_satellite": [[1, 2], [3, 4], [5, 6], [7, 8], [9, 10], [1, 10]]},
        "run": {"episodes": 250_000, "window_episodes": 1000, "decay_patience": 20, "key": "catalog",
                "greedy_knows_caching": False, "central_q_slots": 40_000, "slots": 5000},
    }


def fig6_scenario(max_length: int, seed: int = 0) -> dict:
    """Ten satellites, randomly generated chains over ten VNFs, two VNFs cached per satellite."""
    return {
        "name": f"fig6-L{max_length}",
        "seed": seed,
        "topology": {"groups": [[1, 2, 3, 4], [5, 6, 7, 8], [9, 10]],
                     "inter_group_period_slots": [{"groups": [1, 2], "period_slots": 2},
                                                  {"groups": [1, 3], "period_slots": 4},
                                                  {"groups": [2, 3], "period_slots": 4}]},
        "resources": {"compute_units": 14, "storage_units": 14},
        "services": {"generator": {"vnfs": 10, "max_length": max_length, "popularity": "uniform"},
                     "delay_tolerance_slots": 80},
        "requests": {"arrival_prob": 0.9},
        "caching": {"per_satellite": [[(2 * v - 2) % 10 + 1, (2 * v - 1) % 10 + 1] for v in range(1, 11)]},
        "run": {"episodes": 40_000, "window_episodes": 4000, "eval_slots": 1000, "key": "generator",
                "slots": 2000},
    }


def _three_group_periods():
    return [{"groups": [1, 2], "period_slots": 2}, {"groups": [1, 3], "period_slots": 5},
            {"groups": [2, 3], "period_slots": 3}]


def fig7_scenario(seed: int = 0) -> dict:
    """One satellite from each of three groups choosing two of three VNFs: 27 strategies."""
    return {
        "name": "fig7",
        "seed": seed,
        "topology": {"groups": [[1], [2], [3]], "inter_group_period_slots": _three_group_periods()},
        "resources": {"compute_units": 9, "storage_units": 9},
        "services": {"catalog": "table3", "sfcs": [1, 2], "delay_tolerance_slots": 5},
        "requests": {"arrival_prob": 0.9},
        "caching": {"optimize": {"capacities": 2, "vnfs": [1, 2, 3]}},
        "run": {"objective_slots": 2000, "beta": 1.0, "patience": 100},
    }


def fig8_scenario(seed: int = 0) -> dict:
    """Twenty satellites in three groups, two cache slots each over VNFs 1..3."""
    return {
        "name": "fig8",
        "seed": seed,
        "topology": {"groups": [list(range(1, 8)), list(range(8, 15)), list(range(15, 21))],
                     "inter_group_period_slots": _three_group_periods()},
        "resources": {"compute_units": 9, "storage_units": 9},
        "services": {"catalog": "table3", "sfcs": [1, 2], "delay_tolerance_slots": 5},
        "requests": {"arrival_prob": 0.9},
        "caching": {"optimize": {"capacities": 2, "vnfs": [1, 2, 3]}},
        "run": {"objective_slots": 1000, "beta": 4.0, "local_pool": True, "budget": 60, "patience": 100},
    }


def fig10_scenario(chi: float, capacity: int, seed: int = 0) -> dict:
    """Six satellites in three pairs; Zipf-popular generated chains; cache size ``capacity``."""
    return {
        "name": f"fig10-chi{chi:g}-C{capacity}",
        "seed": seed,
        "topology": {"groups": [[1, 2], [3, 4], [5, 6]], "inter_group_period_slots": 10},
        "resources": {"compute_units": 14, "storage_units": 14},
        "services": {"generator": {"vnfs": 10, "popularity": "zipf", "chi": chi},
                     "delay_tolerance_slots": 20},
        "requests": {"arrival_prob": 0.9},
        "caching": {"optimize": {"capacities": capacity}},
        "run": {"objective_slots": 1000, "beta": 4.0, "local_pool": True, "budget": 60, "patience": None},
    }


# -- runners --------------------------------------------------------------------

def _train_and_eval(sc: Scenario, seed: int, eval_seed: int, episodes: int | None):
    res = train(sc.config, learning_params(sc), episodes or sc.run["episodes"], seed=seed,
                eval_seed=10_000 + seed, key_fn=key_function(sc))
    stats = res.agents.evaluate(sc.run["slots"], eval_seed).stats
    return _stats_metrics(stats), res.trace


def run_fig3(seeds=(0,), levels=(4, 7, 14), episodes: int | None = None, delay_tolerance: int = 7,
             eval_seed: int = 3) -> Tables:
    """Exact DP against MAQL at each resource level, on a shared request stream."""
    rows, curves = [], []
    for R in levels:
        sc = build_scenario(fig3_scenario(R, delay_tolerance))
        table = value_iteration(sc.config, max_states=sc.run["dp_max_states"])
        dp = simulate_dp_policy(table, sc.run["slots"], seed=eval_seed)
        rows.append({"resources": R, "policy": "dp", "seed": "", "serving_rate": dp.serving_rate(),
                     "average_slot_cost": dp.average_slot_cost(), "expected_discounted_cost": table.start_value()})
        for s in seeds:
            m, trace = _train_and_eval(sc, s, eval_seed, episodes)
            rows.append({"resources": R, "policy": "maql", "seed": s, "serving_rate": m["serving_rate"],
                         "average_slot_cost": m["average_slot_cost"],
                         "average_request_cost": m["average_request_cost"]})
            curves += [{"resources": R, "seed": s, "episode": e, "serving_rate": r, "avg_cost": c}
                       for e, r, c in trace]
    return {"results": rows, "convergence": curves}


def _policy_rows(sc: Scenario, policies, seeds, episodes, label: dict) -> list[dict]:
    rows = []
    for s in seeds:
        eval_seed = 1000 + s
        for name in policies:
            if name == "maql":
                m, _ = _train_and_eval(sc, s, eval_seed, episodes)
            else:
                pol, _ = make_policy(sc, name, s)
                sim = Simulator(sc.config, pol, seed=eval_seed)
                sim.run(sc.run["slots"])
                m = _stats_metrics(sim.stats)
            rows.append({**label, "policy": name, "seed": s, **m})
    return rows


def run_fig4(seeds=(0, 1, 2, 3, 4), resources: int = 4, episodes: int | None = None) -> Tables:
    """MAQL against Greedy and centralized Q-learning on the six-satellite scenario."""
    sc = build_scenario(fig4_scenario(resources))
    return {"results": _policy_rows(sc, ("maql", "greedy", "qcentral"), seeds, episodes,
                                    {"resources": resources})}


def run_fig6(seeds=(0, 1, 2), lengths=(5, 8, 10), episodes: int | None = None) -> Tables:
    """MAQL against NBP and random placement for generated chains of growing maximum length."""
    rows = []
    for L in lengths:
        sc = build_scenario(fig6_scenario(L))
        rows += _policy_rows(sc, ("maql", "nbp", "random"), seeds, episodes, {"max_length": L})
    return {"results": rows}


def run_fig7(seeds=(0, 1, 2, 3, 4), budget: int = 14) -> Tables:
    """BO with PI on the 27-strategy space, against evaluating strategies in random order."""
    sc = build_scenario(fig7_scenario())
    obj = objective_for(sc)
    best, argmax = exhaustive_optimum(obj, sc.space)
    strategies = [{"theta": sc.space.format(th), "serving_rate": m, "optimal": m == best}
                  for th, m in sorted(obj.memo.items(), key=lambda kv: kv[1])]
    rows = []
    for s in seeds:
        res = optimize_cache(sc, "bo", "pi", seed=s, objective=obj, budget=budget, patience=None)
        order = np.random.default_rng(s).permutation(len(strategies))
        random_needed = 1 + next(i for i, j in enumerate(order) if strategies[j]["optimal"])
        bo_needed = next((i for i, row in enumerate(res.history, 1) if row[2] == best), "")
        rows.append({"seed": s, "space_size": len(strategies), "budget": budget, "optimum": best,
                     "bo_best": res.value, "bo_found_optimum": res.value == best,
                     "bo_evaluations_to_optimum": bo_needed, "random_order_evaluations_to_optimum": random_needed})
    return {"results": rows, "strategies": strategies}


def run_fig8(seeds=(0, 1, 2), parts=("acquisition", "baselines")) -> Tables:
    """Acquisition functions at a fixed budget, then BO against CD and PS under a shared patience."""
    sc = build_scenario(fig8_scenario())
    obj = objective_for(sc)
    out: Tables = {}
    if "acquisition" in parts:
        rows, curves = [], []
        for s in seeds:
            for acq in ACQUISITIONS:
                res = optimize_cache(sc, "bo", acq, seed=s, objective=obj, patience=None)
                rows.append({"seed": s, "acq": acq, "best": res.value, "evaluations": res.evaluations,
                             "theta": sc.space.format(res.theta)})
                curves += [{"seed": s, "acq": acq, "iter": i, "best_so_far": b}
                           for i, b in enumerate(res.best_so_far(), 1)]
        out["acquisition"] = rows
        out["acquisition_curves"] = curves
    if "baselines" in parts:
        rows = []
        for s in seeds:
            for method in ("bo", "cd", "ps"):
                res = optimize_cache(sc, method, "pi", seed=s, objective=obj, budget=None, patience=sc.run["patience"])
                first = next(i for i, row in enumerate(res.history, 1) if row[2] == res.value)
                rows.append({"seed": s, "method": method, "serving_rate": res.value, "evaluations": res.evaluations,
                             "distinct_strategies": res.distinct, "evaluations_to_best": first,
                             "theta": sc.space.format(res.theta)})
        out["baselines"] = rows
    return out


def run_fig10(seeds=(0,), chis=(1.5, 4.0), capacities=(1, 2, 3)) -> Tables:
    """BO caching against popularity-ranked caching across cache sizes and popularity skews."""
    rows = []
    for chi in chis:
        for cap in capacities:
            sc = build_scenario(fig10_scenario(chi, cap))
            obj = objective_for(sc)
            pop = optimize_cache(sc, "popularity", objective=obj)
            for s in seeds:
                res = optimize_cache(sc, "bo", "pi", seed=s, objective=obj)
                rows.append({"chi": chi, "capacity": cap, "seed": s, "bo": res.value, "popularity": pop.value,
                             "bo_theta": sc.space.format(res.theta), "popularity_theta": sc.space.format(pop.theta)})
    return {"results": rows}


PRESETS = {
    "fig3": (run_fig3, "DP against MAQL on three satellites at R=Z in {4, 7, 14}"),
    "fig4": (run_fig4, "MAQL, Greedy and centralized Q-learning on six satellites"),
    "fig6": (run_fig6, "MAQL, NBP and random placement with generated chains, L in {5, 8, 10}"),
    "fig7": (run_fig7, "BO with PI on the 27-strategy caching space"),
    "fig8": (run_fig8, "acquisition functions, then BO against CD and PS, on 20 satellites"),
    "fig10": (run_fig10, "BO against popularity caching under Zipf popularity"),
}

PRESET_SCENARIOS = {
    "fig3": lambda: fig3_scenario(4),
    "fig4": fig4_scenario,
    "fig6": lambda: fig6_scenario(5),
    "fig7": fig7_scenario,
    "fig8": fig8_scenario,
    "fig10": lambda: fig10_scenario(1.5, 2),
}
