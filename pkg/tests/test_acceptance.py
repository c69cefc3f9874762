"""One test per acceptance criterion; each prints a PASS/FAIL line."""

from __future__ import annotations

import math
import random
import time
from dataclasses import replace

import pytest

from conftest import make_traj, random_traj, record_criterion
from trajreuse.core import ErrorFingerprint, NodeExperience, Outcome, Query, RootCause, structural_hash
from trajreuse.embedding import cosine_similarity
from trajreuse.execution import FAULT_CODES, Environment, FaultProfile, FaultTrigger, ToolRegistry, ToolSpec, TriggerKind
from trajreuse.extraction import classify_root_cause
from trajreuse.generation import MockBackend, rewrite_trajectory
from trajreuse.harness import (
    EngineConfig,
    Strategy,
    WorkloadConfig,
    World,
    build_workload,
    compare_and_report,
    make_backend,
    run_all,
    run_strategy,
)
from trajreuse.routing import Route, RoutingConfig, decide_route
from trajreuse.store import ExperienceStore

ORDER = {Route.A: 0, Route.B: 1, Route.C: 2}


def naive_cos(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na, nb = math.sqrt(sum(x * x for x in a)), math.sqrt(sum(x * x for x in b))
    return 0.0 if na == 0 or nb == 0 else dot / (na * nb)


def unit(rng: random.Random, dim: int) -> tuple[float, ...]:
    v = [rng.gauss(0, 1) for _ in range(dim)]
    n = math.sqrt(sum(x * x for x in v))
    return tuple(x / n for x in v)


@pytest.fixture(scope="module")
def default_bench(tmp_path_factory):
    start = time.perf_counter()
    _, runs = run_all()
    out = tmp_path_factory.mktemp("bench") / "report.json"
    report, passed = compare_and_report([r.metrics for r in runs.values()], out)
    return report, passed, out, time.perf_counter() - start


def test_criterion_01_routing_partition():
    rng = random.Random(1)
    configs = []
    while len(configs) < 20:
        b, a = sorted(rng.uniform(0.0, 1.0) for _ in range(2))
        if 0.0 < b < a <= 1.0:
            configs.append(RoutingConfig(theta_a=a, theta_b=b))
    scores = sorted(rng.uniform(0.0, 1.0) for _ in range(10_000))
    start = time.perf_counter()
    bad_partition = bad_monotone = 0
    for cfg in configs:
        prev = None
        for s in scores:
            r = decide_route(s, cfg)
            hits = [s > cfg.theta_a, cfg.theta_b < s <= cfg.theta_a, s <= cfg.theta_b]
            bad_partition += sum(hits) != 1 or hits.index(True) != ORDER[r]
            if prev is not None and ORDER[r] > ORDER[prev]:
                bad_monotone += 1
            prev = r
    elapsed = time.perf_counter() - start
    ok = bad_partition == 0 and bad_monotone == 0 and elapsed < 1.0
    record_criterion(1, "routing partition and monotonicity", ok,
                     f"{len(configs)} configs x {len(scores)} scores, {elapsed:.3f}s")
    assert ok


def test_criterion_02_zero_token_reuse():
    world = World.load()
    engine = EngineConfig()
    cfg = WorkloadConfig(seed=42, n_queries=100, tier_mix=(1.0, 0.0, 0.0), n_families=8)
    wl = build_workload(cfg, world)
    run = run_strategy(Strategy.ADAPTIVE, wl, world, make_backend(engine, wl, world))
    post = run.records[cfg.n_families:]
    ok = all(r.route == Route.A.value and r.trail == (f"{Route.A.value}:Success",) and r.ledger.generator_calls == 0
             for r in post)
    ok = ok and run.metrics.total_ledger.generator_calls == cfg.n_families
    record_criterion(2, "exact repeats route A at zero generator calls", ok,
                     f"{len(post)} post-warmup queries, total calls {run.metrics.total_ledger.generator_calls}")
    assert ok


def test_criterion_03_structure_preservation():
    rng = random.Random(3)
    cases = violations = 0
    for i in range(250):
        base = random_traj(rng, f"t{i}")
        store = ExperienceStore()
        store.put_trajectory(base)
        if i % 2:
            # a second member with different variable values but the same structure
            nodes = tuple(replace(n, params={k: f"{v}x" if isinstance(v, str) else v + 1 for k, v in n.params.items()})
                          if n.is_variable else n for n in base.nodes)
            store.put_trajectory(replace(base, trajectory_id=f"u{i}", nodes=nodes))
        [tpl] = store.cluster_templates()
        out, _ = rewrite_trajectory(tpl, Query(f"rewrite case {i}", f"q{i}"), MockBackend(seed=i), store)
        cases += 1
        violations += structural_hash(out) != tpl.structural_hash
    ok = cases >= 200 and violations == 0
    record_criterion(3, "rewrites keep the structural hash", ok, f"{cases} cases, {violations} violations")
    assert ok


def test_criterion_04_reduction_vs_real_time(default_bench):
    report, _, _, elapsed = default_bench
    pct = report["token_reduction_pct"]["RealTimePlanning"]
    ours = report["strategies"]["AdaptiveReuse"]["total_tokens"]
    theirs = report["strategies"]["RealTimePlanning"]["total_tokens"]
    ok = ours <= 0.6 * theirs and pct >= 40.0 and elapsed < 60.0
    record_criterion(4, "token reduction vs RealTimePlanning >= 40%", ok,
                     f"{ours} vs {theirs} tokens, {pct:.2f}%, {elapsed:.2f}s")
    assert ok


def test_criterion_05_reduction_vs_static(default_bench):
    report, _, _, elapsed = default_bench
    pct = report["token_reduction_pct"]["StaticSingleTrajectory"]
    ok = pct >= 15.0 and elapsed < 60.0
    record_criterion(5, "token reduction vs StaticSingleTrajectory >= 15%", ok, f"measured {pct:.2f}%")
    assert ok


def test_criterion_06_medium_gain(default_bench):
    report, _, _, elapsed = default_bench
    ours = report["strategies"]["AdaptiveReuse"]["success_rate_medium_tier"]
    theirs = report["strategies"]["BasicICL"]["success_rate_medium_tier"]
    gain = (ours - theirs) * 100.0
    ok = gain >= 20.0 and elapsed < 60.0 and len(WorkloadConfig.load().faults) == 4
    record_criterion(6, "Medium-tier success gain vs BasicICL >= 20pp", ok,
                     f"{ours:.3f} vs {theirs:.3f}, +{gain:.2f}pp")
    assert ok


def test_criterion_07_fault_bijection():
    hits = 0
    for mode in FAULT_CODES:
        reg = ToolRegistry()
        reg.register_tool(ToolSpec("t_alpha"))
        reg.inject_fault("t_alpha", FaultProfile(mode, FaultTrigger(TriggerKind.ALWAYS)))
        log = Environment(reg).execute(make_traj("a", "probe", ["t_alpha"]))
        hits += classify_root_cause(log.steps[0].error) is mode
    ok = hits == 4 == len(FAULT_CODES)
    record_criterion(7, "fault modes classify to their namesake", ok, f"{hits}/4")
    assert ok


def test_criterion_08_oracle_equivalences():
    rng = random.Random(8)
    dim = 32
    mismatches = 0
    for trial in range(100):
        size = rng.randint(1, 1000) if trial % 10 else 1000
        store = ExperienceStore(dimension=dim)
        base = make_traj("x", "probe", ["t_alpha"])
        vecs = {}
        for i in range(size):
            v = unit(rng, dim)
            vecs[f"t{i:04d}"] = v
            store.put_trajectory(replace(base, trajectory_id=f"t{i:04d}", trigger_embedding=v))
        q = unit(rng, dim)
        k = rng.randint(1, 10)
        meta = {t.trajectory_id: t.metadata for t in store.trajectories()}
        oracle = sorted(vecs, key=lambda tid: (-naive_cos(q, vecs[tid]), -meta[tid].priority,
                                               -meta[tid].executed_at, tid))[:k]
        got = store.find_nearest(q, k)
        mismatches += [tid for tid, _ in got] != oracle
        mismatches += any(abs(s - naive_cos(q, vecs[tid])) > 1e-9 for tid, s in got)
    cos_bad = 0
    for _ in range(1000):
        a, b = [rng.uniform(-1, 1) for _ in range(dim)], [rng.uniform(-1, 1) for _ in range(dim)]
        cos_bad += abs(cosine_similarity(a, b) - naive_cos(a, b)) > 1e-9
    idem_bad = 0
    for c in range(50):
        store = ExperienceStore()
        for i in range(rng.randint(1, 30)):
            store.put_trajectory(random_traj(random.Random(c * 100 + i), f"c{c}t{i}", rng.randint(1, 3)))
        first = store.cluster_templates()
        idem_bad += store.cluster_templates() != first
    ok = mismatches == 0 and cos_bad == 0 and idem_bad == 0
    record_criterion(8, "oracle equivalences", ok,
                     f"find_nearest mismatches {mismatches}/100, cosine {cos_bad}/1000, cluster {idem_bad}/50")
    assert ok


def test_criterion_09_end_to_end_determinism(default_bench, tmp_path):
    _, _, first, _ = default_bench
    _, runs = run_all()
    second = tmp_path / "report.json"
    compare_and_report([r.metrics for r in runs.values()], second)
    ok = first.read_bytes() == second.read_bytes()
    ok = ok and first.with_suffix(".txt").read_bytes() == second.with_suffix(".txt").read_bytes()
    record_criterion(9, "identical seeds give byte-identical reports", ok, f"{len(first.read_bytes())} bytes")
    assert ok


def test_criterion_10_persistence_round_trip(tmp_path):
    rng = random.Random(10)
    store = ExperienceStore.init(tmp_path / "a")
    for i in range(60):
        store.put_trajectory(random_traj(rng, f"t{i:02d}", rng.randint(1, 2)))
    for i in range(35):
        if i % 2:
            e = NodeExperience(f"e{i}", f"k:{i % 4}", Outcome.FAILURE, RootCause.OTHER,
                               ErrorFingerprint.of("t_alpha", str(500 + i), f"boom {i}"), avoidance_note=f"note {i}")
        else:
            e = NodeExperience(f"e{i}", f"k:{i % 4}", Outcome.SUCCESS, best_tool="t_beta", avoidance_note=f"ok {i}")
        store.put_experience(e)
    store.merge_similar(0.95)
    store.cluster_templates()
    store.save()
    n_t, n_e, n_tpl = len(store), len(store.experiences()), len(store.templates())
    before = store.serialize()
    back = ExperienceStore.load(tmp_path / "a")
    after = back.serialize()
    ok = n_t >= 50 and n_e >= 30 and n_tpl >= 5 and before == after
    record_criterion(10, "serialize, load, serialize is byte-identical", ok,
                     f"{n_t} trajectories, {n_e} experiences, {n_tpl} templates")
    assert ok
