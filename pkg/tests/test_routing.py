from __future__ import annotations

import math
import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TOOLS, make_traj
from trajreuse.core import Outcome, Query, RootCause, WorkflowNode, dumps
from trajreuse.embedding import cosine_similarity, embed
from trajreuse.execution import Environment, FaultProfile, FaultTrigger, ToolRegistry, ToolSpec, TriggerKind
from trajreuse.generation import IntentSeed, MockBackend
from trajreuse.routing import (
    INVALIDATED_TAG,
    REJECTED_TAG,
    Route,
    RouteDecision,
    RoutingConfig,
    Verdict,
    decide_route,
    execute_with_fallback,
    record_feedback,
    route,
)
from trajreuse.store import ExperienceStore, UnknownTrajectory

ORDER = {Route.A: 0, Route.B: 1, Route.C: 2}
Q = Query("close ledger emea", "q1")


def at_score(query_text: str, s: float) -> tuple[float, ...]:
    """A unit vector whose cosine with the query's embedding is ``s``."""
    q = embed(query_text)
    j = next(i for i, x in enumerate(q) if x == 0.0)
    v = [s * x for x in q]
    v[j] = math.sqrt(1 - s * s)
    return tuple(v)


def store_at(s: float) -> ExperienceStore:
    store = ExperienceStore()
    t = make_traj("m", "stored", ["t_alpha"])
    store.put_trajectory(replace(t, trigger_embedding=at_score(Q.text, s)))
    store.cluster_templates()
    return store


@pytest.mark.parametrize("s, expected", [(0.95, Route.A), (0.70, Route.B), (0.50, Route.C)])
def test_route_examples(s, expected):
    store = store_at(s)
    [(_, score)] = store.find_nearest(embed(Q.text), 1)
    assert abs(score - s) < 1e-9
    d = route(Q, store)
    assert d.route is expected
    assert abs(d.best_match[1] - s) < 1e-9


def test_empty_store_routes_to_c():
    d = route(Q, ExperienceStore())
    assert d.route is Route.C and d.best_match is None


def test_strict_preset_sends_095_to_b():
    assert route(Q, store_at(0.95), RoutingConfig.preset("strict")).route is Route.B


def test_config_validation_and_presets():
    assert RoutingConfig() == RoutingConfig.preset("default")
    assert RoutingConfig.preset("strict").theta_a == 0.99
    for bad in ({"theta_a": 0.5, "theta_b": 0.6}, {"theta_b": 0.0}, {"theta_a": 1.2}, {"max_iters": 0}):
        with pytest.raises(ValueError):
            RoutingConfig(**bad)
    with pytest.raises(ValueError):
        RoutingConfig.preset("loose")
    assert RoutingConfig.from_dict({"preset": "strict", "max_iters": 5}) == RoutingConfig(0.99, 0.6, 5)


def test_env_overrides():
    cfg = RoutingConfig().with_env({"WG_THETA_A": "0.95", "WG_THETA_B": "0.55"})
    assert (cfg.theta_a, cfg.theta_b) == (0.95, 0.55)
    assert RoutingConfig().with_env({}) == RoutingConfig()
    with pytest.raises(ValueError):
        RoutingConfig().with_env({"WG_THETA_B": "0.95"})


unit = st.floats(0.0, 1.0, allow_nan=False)
configs = st.tuples(st.floats(0.01, 0.98), st.floats(0.0, 1.0)).map(
    lambda p: RoutingConfig(theta_a=p[0] + (1 - p[0]) * max(p[1], 1e-3), theta_b=p[0])
)


@given(unit, configs)
def test_threshold_partition(s, cfg):
    r = decide_route(s, cfg)
    assert (r is Route.A) == (s > cfg.theta_a)
    assert (r is Route.C) == (s <= cfg.theta_b)


@given(unit, unit, configs)
def test_decision_is_monotone(s1, s2, cfg):
    lo, hi = sorted((s1, s2))
    assert ORDER[decide_route(hi, cfg)] <= ORDER[decide_route(lo, cfg)]


def test_decision_round_trip():
    d = RouteDecision(Route.B, ("abc", 0.7), (Route.A,), "t1")
    assert RouteDecision.from_dict(d.to_dict()) == d


INTENT = IntentSeed(
    ("close", "ledger"),
    (
        WorkflowNode("n0", "t_alpha", {"region": "{region}"}),
        WorkflowNode("n1", "t_beta", {"mode": "agg"}, depends_on=("n0",)),
    ),
)


def backend(seed=0):
    return MockBackend(seed=seed, intents=[INTENT], vocab={"region": ["emea", "apac", "amer"]})


def registry(*faults):
    reg = ToolRegistry()
    for t in TOOLS:
        reg.register_tool(ToolSpec(t))
    for tool, profile in faults:
        reg.inject_fault(tool, profile)
    return reg


def test_novel_query_on_empty_store():
    store = ExperienceStore()
    rep = execute_with_fallback(Q, store, backend(), Environment(registry()))
    assert [d.route for d, _ in rep.trail] == [Route.C]
    assert rep.succeeded and len(store) == 1
    assert store.get_trajectory(rep.final_trajectory.trajectory_id).outcome is Outcome.SUCCESS


def test_exact_repeat_costs_nothing():
    store = ExperienceStore()
    env = Environment(registry())
    execute_with_fallback(Q, store, backend(), env)
    rep = execute_with_fallback(Q, store, backend(), env)
    assert [d.route for d, _ in rep.trail] == [Route.A]
    assert rep.ledger.generator_calls == 0 and rep.succeeded
    assert store.get_trajectory(rep.final_trajectory.trajectory_id).metadata.usage_count == 1


def test_similar_query_is_rewritten():
    store = ExperienceStore()
    env = Environment(registry())
    execute_with_fallback(Q, store, backend(), env)
    q2 = Query("close ledger apac", "q2")
    assert 0.6 < cosine_similarity(embed(Q.text), embed(q2.text)) <= 0.9
    rep = execute_with_fallback(q2, store, backend(), env)
    assert [d.route for d, _ in rep.trail] == [Route.B]
    assert rep.ledger.generator_calls == 1  # only the region node is variable
    assert rep.final_trajectory.nodes[0].params == {"region": "apac"}


def test_failed_direct_reuse_degrades_to_rewrite():
    store = ExperienceStore()
    reg = registry()
    env = Environment(reg)
    execute_with_fallback(Q, store, backend(), env)
    # the variable region node fails once, so the template itself stays valid
    reg.inject_fault("t_alpha", FaultProfile(RootCause.MISSING_LOGIC, FaultTrigger(TriggerKind.FIRST_N_CALLS, n=1)))
    rep = execute_with_fallback(Q, store, backend(), env)
    assert [(d.route, o) for d, o in rep.trail] == [(Route.A, Outcome.FAILURE), (Route.B, Outcome.SUCCESS)]
    assert rep.trail[1][0].degraded_from == (Route.A,)
    assert rep.trail[0][0].route is Route.A and rep.attempts[0].ledger.generator_calls == 0


def test_fixed_node_failure_invalidates_and_goes_to_c():
    store = ExperienceStore()
    reg = registry()
    env = Environment(reg)
    first = execute_with_fallback(Q, store, backend(), env)
    reg.inject_fault("t_beta", FaultProfile(RootCause.TOOL_MISMATCH, FaultTrigger(TriggerKind.FIRST_N_CALLS, n=1)))
    rep = execute_with_fallback(Query(Q.text, "q1-again"), store, backend(), env)
    assert [d.route for d, _ in rep.trail] == [Route.A, Route.C]
    assert rep.trail[1][0].degraded_from == (Route.A,)
    assert INVALIDATED_TAG in store.get_trajectory(first.final_trajectory.trajectory_id).metadata.compatibility_tags


def test_feedback_user_ok():
    store = ExperienceStore()
    rep = execute_with_fallback(Q, store, backend(), Environment(registry()))
    before = store.get_trajectory(rep.final_trajectory.trajectory_id).metadata.usage_count
    after = record_feedback(rep, Verdict.USER_OK, store).metadata.usage_count
    assert after == before + 1


def test_feedback_user_error_skips_a_and_is_idempotent():
    store = ExperienceStore()
    env = Environment(registry())
    rep = execute_with_fallback(Q, store, backend(), env)
    rejected = record_feedback(rep, Verdict.USER_ERROR, store)
    assert rejected.outcome is Outcome.FAILURE
    again = record_feedback(rep, Verdict.USER_ERROR, store)
    assert again.metadata.compatibility_tags.count(REJECTED_TAG) == 1
    assert again.metadata.version_id == rejected.metadata.version_id
    nxt = execute_with_fallback(Q, store, backend(), env)
    assert nxt.trail[0][0].route is Route.B
    assert nxt.trail[0][0].degraded_from == (Route.A,)


def test_feedback_on_unknown_trajectory():
    store = ExperienceStore()
    rep = execute_with_fallback(Q, store, backend(), Environment(registry()))
    with pytest.raises(UnknownTrajectory):
        record_feedback(rep, Verdict.USER_OK, ExperienceStore())


def test_report_ledger_must_add_up():
    store = ExperienceStore()
    rep = execute_with_fallback(Q, store, backend(), Environment(registry()))
    with pytest.raises(ValueError):
        replace(rep, ledger=rep.ledger + rep.ledger)


def test_c_exhaustion_is_reported_not_raised():
    store = ExperienceStore()
    always = ("t_alpha", FaultProfile(RootCause.MISSING_LOGIC, FaultTrigger(TriggerKind.ALWAYS)))
    rep = execute_with_fallback(Q, store, backend(), Environment(registry(always)))
    assert not rep.succeeded
    assert [d.route for d, _ in rep.trail] == [Route.C]
    assert rep.attempts[0].iterations == 3


REGIONS = ["emea", "apac", "amer"]
VERBS = ["close ledger", "close ledger now", "close books"]


def scenario(seed: int):
    r = random.Random(seed)
    reg = registry()
    modes = [RootCause.MISSING_LOGIC, RootCause.TOOL_MISMATCH, RootCause.WRONG_PARAMETER]
    for tool in ("t_alpha", "t_beta"):
        if r.random() < 0.5:
            reg.inject_fault(tool, FaultProfile(r.choice(modes), FaultTrigger(TriggerKind.FIRST_N_CALLS, n=r.randint(1, 4))))
    queries = [Query(f"{r.choice(VERBS)} {r.choice(REGIONS)}", f"q{i}") for i in range(6)]
    return reg, queries


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_trail_is_forward_only_and_a_is_free(seed):
    reg, queries = scenario(seed)
    store = ExperienceStore()
    env = Environment(reg)
    for q in queries:
        rep = execute_with_fallback(q, store, backend(seed), env)
        ranks = [ORDER[d.route] for d, _ in rep.trail]
        assert ranks == sorted(set(ranks))
        for a in rep.attempts:
            if a.decision.route is Route.A:
                assert a.ledger.generator_calls == 0
        first = rep.trail[0][0]
        if first.route is Route.A:
            assert first.best_match[1] > 0.9
        if first.route is Route.B and Route.A not in first.degraded_from:
            assert 0.6 < first.best_match[1] <= 0.9
        assert not rep.succeeded or rep.final_trajectory.outcome is Outcome.SUCCESS


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_reproducible(seed):
    def run():
        reg, queries = scenario(seed)
        store = ExperienceStore()
        env = Environment(reg, seed)
        return [dumps(execute_with_fallback(q, store, backend(seed), env).to_dict()) for q in queries], store.serialize()

    assert run() == run()
