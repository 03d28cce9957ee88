"""End-to-end acceptance criteria. Each test records one pass/fail line for the terminal summary."""
import subprocess
import sys
import time
from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE
from helpers import conditioning_oracle, random_tiny_config
from satchain.caching_opt import CachingSpace, GaussianProcess
from satchain.cli_bench.presets import run_fig3, run_fig4, run_fig6, run_fig7, run_fig8, run_fig10
from satchain.dp_solver import brute_force_policy_value, value_iteration

pytestmark = pytest.mark.acceptance


def record(n: int, ok: bool, detail: str, elapsed: float, budget: float | None = None):
    within = budget is None or elapsed < budget
    limit = f" (limit {budget:.0f}s)" if budget else ""
    ACCEPTANCE[n] = (ok and within, f"{detail}; {elapsed:.0f}s{limit}")
    assert ok, detail
    assert within, f"took {elapsed:.0f}s, over the {budget:.0f}s budget"


def majority(flags) -> bool:
    flags = list(flags)
    return sum(flags) * 2 > len(flags)


def by(rows, *keys):
    out = {}
    for r in rows:
        out[tuple(r[k] for k in keys)] = r
    return out


def test_1_dp_matches_brute_force():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    errors = []
    for _ in range(8):
        cfg = random_tiny_config(rng)
        vi = value_iteration(cfg, tolerance=1e-9)
        errors.append(abs(vi.start_value() - brute_force_policy_value(cfg)))
    worst = max(errors)
    record(1, worst <= 1e-5, f"8 fixtures, worst |VI - brute force| = {worst:.2e}", time.perf_counter() - t0, 60)


def test_2_dp_against_maql_on_three_satellites():
    t0 = time.perf_counter()
    rows = run_fig3(seeds=(0,))["results"]
    dp = {r["resources"]: r for r in rows if r["policy"] == "dp"}
    mq = {r["resources"]: r for r in rows if r["policy"] == "maql"}
    levels = sorted(dp)
    rates = [dp[R]["serving_rate"] for R in levels]
    costs = [dp[R]["expected_discounted_cost"] for R in levels]
    monotone = all(a < b for a, b in zip(rates, rates[1:])) and all(a > b for a, b in zip(costs, costs[1:]))
    gaps = {R: (dp[R]["serving_rate"] - mq[R]["serving_rate"],
                mq[R]["average_slot_cost"] / dp[R]["average_slot_cost"] - 1) for R in levels}
    close = all(abs(dr) <= 0.05 and abs(dc) <= 0.15 for dr, dc in gaps.values())
    detail = "DP rates " + "/".join(f"{r:.3f}" for r in rates) + ", costs " + "/".join(f"{c:.1f}" for c in costs)
    detail += "; MAQL gap " + ", ".join(f"R={R}: {dr * 100:+.1f}pp {dc * 100:+.1f}%" for R, (dr, dc) in gaps.items())
    record(2, monotone and close, detail, time.perf_counter() - t0, 600)


def test_3_maql_beats_greedy_beats_central_q():
    t0 = time.perf_counter()
    rows = by(run_fig4()["results"], "seed", "policy")
    seeds = sorted({s for s, _ in rows})
    votes = []
    for s in seeds:
        m, g, c = (rows[(s, p)] for p in ("maql", "greedy", "qcentral"))
        votes.append(m["serving_rate"] > g["serving_rate"] > c["serving_rate"]
                     and m["average_slot_cost"] < g["average_slot_cost"] < c["average_slot_cost"])
    rates = "; ".join(f"seed {s}: " + "/".join(f"{rows[(s, p)]['serving_rate']:.3f}"
                                               for p in ("maql", "greedy", "qcentral")) for s in seeds)
    record(3, majority(votes), f"{sum(votes)}/{len(votes)} seeds ordered (maql/greedy/qcentral {rates})",
           time.perf_counter() - t0, 900)


def test_4_maql_beats_nbp_beats_random():
    t0 = time.perf_counter()
    rows = by(run_fig6()["results"], "max_length", "seed", "policy")
    votes = defaultdict(list)
    for (L, s, p) in rows:
        if p == "maql":
            r = [rows[(L, s, q)]["serving_rate"] for q in ("maql", "nbp", "random")]
            votes[L].append(r[0] > r[1] > r[2])
    ok = all(majority(v) for v in votes.values())
    detail = ", ".join(f"L={L}: {sum(v)}/{len(v)} seeds ordered" for L, v in sorted(votes.items()))
    record(4, ok, detail, time.perf_counter() - t0, 1200)


def test_5_gp_posterior_matches_conditioning():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        space = CachingSpace(tuple(range(1, int(rng.integers(2, 5)) + 1)), (int(rng.integers(1, 3)),) * 3)
        pool = space.enumerate()
        n = min(int(rng.integers(1, 11)), len(pool))
        X = np.array([space.encode(pool[i]) for i in rng.choice(len(pool), size=n, replace=False)])
        y = rng.random(n)
        Xq = np.array([space.encode(space.sample(rng)) for _ in range(4)])
        beta = float(rng.uniform(0.5, 2.0))
        m, s = GaussianProcess(beta, 0.5, 1e-6).fit(X, y).predict(Xq)
        om, os_ = conditioning_oracle(X, y, Xq, beta, 0.5, 1e-6)
        worst = max(worst, float(np.max(np.abs(m - om))), float(np.max(np.abs(s - os_))))
    record(5, worst <= 1e-8, f"100 fixtures, worst deviation {worst:.1e}", time.perf_counter() - t0, 60)


def test_6_bo_finds_optimum_within_14_of_27():
    t0 = time.perf_counter()
    rows = run_fig7()["results"]
    votes = [r["bo_found_optimum"] and r["bo_evaluations_to_optimum"] <= 14 for r in rows]
    needed = "/".join(str(r["bo_evaluations_to_optimum"] or "-") for r in rows)
    record(6, majority(votes), f"{sum(votes)}/{len(votes)} seeds found the optimum; evaluations needed {needed}",
           time.perf_counter() - t0, 600)


def test_7_pi_is_the_best_acquisition():
    t0 = time.perf_counter()
    out = run_fig8(parts=("acquisition",))
    curves = defaultdict(list)
    for c in out["acquisition_curves"]:
        curves[(c["seed"], c["acq"])].append(c["best_so_far"])
    monotone = all(np.all(np.diff(v) >= 0) for v in curves.values())
    best = by(out["acquisition"], "seed", "acq")
    seeds = sorted({s for s, _ in best})
    votes = [all(best[(s, "pi")]["best"] >= best[(s, a)]["best"] for a in ("ei", "ucb", "lcb")) for s in seeds]
    finals = "; ".join(f"seed {s}: " + "/".join(f"{best[(s, a)]['best']:.3f}" for a in ("pi", "ei", "ucb", "lcb"))
                       for s in seeds)
    record(7, monotone and majority(votes),
           f"curves non-decreasing: {monotone}; PI best on {sum(votes)}/{len(votes)} seeds (pi/ei/ucb/lcb {finals})",
           time.perf_counter() - t0)


def test_8_bo_matches_cd_and_ps_with_fewer_evaluations():
    t0 = time.perf_counter()
    rows = by(run_fig8(parts=("baselines",))["baselines"], "seed", "method")
    seeds = sorted({s for s, _ in rows})
    votes, parts = [], []
    for s in seeds:
        r = {m: rows[(s, m)] for m in ("bo", "cd", "ps")}
        rates = [x["serving_rate"] for x in r.values()]
        close = max(rates) - min(rates) <= 0.03
        fewest = all(r["bo"]["evaluations"] < r[m]["evaluations"] for m in ("cd", "ps"))
        votes.append(close and fewest)
        parts.append(f"seed {s}: rates " + "/".join(f"{x:.3f}" for x in rates) + ", evaluations "
                     + "/".join(str(x["evaluations"]) for x in r.values()))
    record(8, majority(votes), f"{sum(votes)}/{len(votes)} seeds (bo/cd/ps {'; '.join(parts)})",
           time.perf_counter() - t0)


def test_9_bo_caching_beats_popularity_under_zipf():
    t0 = time.perf_counter()
    rows = by(run_fig10()["results"], "chi", "capacity")
    chis = sorted({c for c, _ in rows})
    caps = sorted({k for _, k in rows})
    beats = all(r["bo"] >= r["popularity"] for r in rows.values())
    trend = True
    for key in ("bo", "popularity"):
        for c in chis:
            seq = [rows[(c, k)][key] for k in caps]
            trend &= all(a < b for a, b in zip(seq, seq[1:]))
        for k in caps:
            seq = [rows[(c, k)][key] for c in chis]
            trend &= all(a < b for a, b in zip(seq, seq[1:]))
    table = "; ".join(f"chi={c}: " + " ".join(f"{rows[(c, k)]['bo']:.3f}/{rows[(c, k)]['popularity']:.3f}"
                                             for k in caps) for c in chis)
    record(9, beats and trend, f"bo>=popularity: {beats}, trends hold: {trend} (bo/pop by capacity {table})",
           time.perf_counter() - t0, 1200)


def test_10_invariant_suite():
    t0 = time.perf_counter()
    tests = Path(__file__).parent
    res = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", "-m", "invariant",
                          str(tests)], capture_output=True, text=True, cwd=tests.parent)
    summary = res.stdout.strip().splitlines()[-1] if res.stdout.strip() else res.stderr[-200:]
    record(10, res.returncode == 0, f"invariant suite: {summary}", time.perf_counter() - t0)
