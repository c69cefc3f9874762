"""Three-tier routing with forward-only degradation.

Route A re-executes a stored trajectory, route B rewrites the variable nodes
of a template, route C plans from scratch. A failed tier hands over to the
next one within the same call to :func:`execute_with_fallback`.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Mapping

from .core import (
    ZERO_LEDGER,
    Outcome,
    Query,
    TokenLedger,
    Trajectory,
    TrajectoryTemplate,
)
from .embedding import EmbeddingConfig, embed
from .execution import Environment
from .extraction import extract_node_experiences
from .generation import (
    ExhaustedIterations,
    GeneratorBackend,
    executed_steps,
    iterative_generate,
)
from .store import ExperienceStore, UnknownTrajectory, build_template

INVALIDATED_TAG = "invalidated"
REJECTED_TAG = "user_rejected"


class Route(str, Enum):
    A = "A_DirectReuse"
    B = "B_Rewrite"
    C = "C_Initialize"


class Verdict(str, Enum):
    USER_OK = "UserOk"
    USER_ERROR = "UserError"


@dataclass(frozen=True)
class RoutingConfig:
    theta_a: float = 0.9
    theta_b: float = 0.6
    max_iters: int = 3

    def __post_init__(self) -> None:
        if not 0.0 < self.theta_b < self.theta_a <= 1.0:
            raise ValueError("need 0 < theta_b < theta_a <= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    @classmethod
    def preset(cls, name: str) -> RoutingConfig:
        try:
            return cls(**PRESETS[name])
        except KeyError:
            raise ValueError(f"unknown routing preset {name!r}") from None

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RoutingConfig:
        base = dict(PRESETS[d.get("preset", "default")])
        for key in ("theta_a", "theta_b", "max_iters"):
            if key in d:
                base[key] = d[key]
        return cls(float(base["theta_a"]), float(base["theta_b"]), int(base["max_iters"]))

    def with_env(self, environ: Mapping[str, str] | None = None) -> RoutingConfig:
        """Apply ``WG_THETA_A`` / ``WG_THETA_B`` overrides (decimal strings)."""
        environ = os.environ if environ is None else environ
        out = self
        if environ.get("WG_THETA_A"):
            out = replace(out, theta_a=float(environ["WG_THETA_A"]))
        if environ.get("WG_THETA_B"):
            out = replace(out, theta_b=float(environ["WG_THETA_B"]))
        return out

    def to_dict(self) -> dict[str, Any]:
        return {"max_iters": self.max_iters, "theta_a": self.theta_a, "theta_b": self.theta_b}


PRESETS: dict[str, dict[str, Any]] = {
    "default": {"theta_a": 0.9, "theta_b": 0.6, "max_iters": 3},
    "strict": {"theta_a": 0.99, "theta_b": 0.6, "max_iters": 3},
}


def decide_route(score: float | None, cfg: RoutingConfig) -> Route:
    """The threshold partition on its own. ``None`` means nothing is stored."""
    if score is None or score <= cfg.theta_b:
        return Route.C
    if score > cfg.theta_a:
        return Route.A
    return Route.B


@dataclass(frozen=True)
class RouteDecision:
    route: Route
    best_match: tuple[str, float] | None = None
    # routes tried already, or ruled out up front (a rejected exact match rules out A)
    degraded_from: tuple[Route, ...] = ()
    # stored trajectory that route A replays or route B's template is taken from
    trajectory_id: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "best_match": (
                {"template_id": self.best_match[0], "score": self.best_match[1]} if self.best_match else None
            ),
            "degraded_from": [r.value for r in self.degraded_from],
            "route": self.route.value,
            "trajectory_id": self.trajectory_id,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RouteDecision:
        bm = d.get("best_match")
        return cls(
            route=Route(d["route"]),
            best_match=(bm["template_id"], float(bm["score"])) if bm else None,
            degraded_from=tuple(Route(r) for r in d.get("degraded_from", ())),
            trajectory_id=d.get("trajectory_id"),
        )


@dataclass(frozen=True)
class Attempt:
    decision: RouteDecision
    outcome: Outcome
    ledger: TokenLedger = ZERO_LEDGER
    wall_steps: int = 0
    iterations: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "decision": self.decision.to_dict(),
            "iterations": self.iterations,
            "ledger": self.ledger.to_dict(),
            "outcome": self.outcome.value,
            "wall_steps": self.wall_steps,
        }


@dataclass(frozen=True)
class ExecutionReport:
    query: Query
    attempts: tuple[Attempt, ...]
    final_trajectory: Trajectory | None
    ledger: TokenLedger
    succeeded: bool
    wall_steps: int

    def __post_init__(self) -> None:
        total = ZERO_LEDGER
        for a in self.attempts:
            total = total + a.ledger
        if total != self.ledger:
            raise ValueError("report ledger must equal the sum of attempt ledgers")
        if self.succeeded and (self.final_trajectory is None or self.final_trajectory.outcome is not Outcome.SUCCESS):
            raise ValueError("a successful report needs a Success trajectory")

    @property
    def trail(self) -> list[tuple[RouteDecision, Outcome]]:
        return [(a.decision, a.outcome) for a in self.attempts]

    @property
    def initial_route(self) -> Route:
        return self.attempts[0].decision.route

    def to_dict(self) -> dict[str, Any]:
        return {
            "attempts": [a.to_dict() for a in self.attempts],
            "final_trajectory_id": self.final_trajectory.trajectory_id if self.final_trajectory else None,
            "ledger": self.ledger.to_dict(),
            "query": self.query.to_dict(),
            "succeeded": self.succeeded,
            "wall_steps": self.wall_steps,
        }


# -- routing -----------------------------------------------------------------


def _pool(store: ExperienceStore, q) -> list[tuple[Trajectory, float]]:
    return [(t, s) for t, s in store.ranked(q) if INVALIDATED_TAG not in t.metadata.compatibility_tags]


def _reusable(t: Trajectory) -> bool:
    return t.outcome is Outcome.SUCCESS and REJECTED_TAG not in t.metadata.compatibility_tags


def _template_key(store: ExperienceStore, t: Trajectory) -> str:
    tpl = store.template_of(t.trajectory_id)
    return tpl.template_id if tpl else t.trajectory_id


def _rewrite_source(
    pool: list[tuple[Trajectory, float]], cfg: RoutingConfig
) -> tuple[Trajectory, float] | None:
    """Best reusable trajectory above ``theta_b``, else the best usable one at all."""
    for t, s in pool:
        if s > cfg.theta_b and _reusable(t):
            return t, s
    for t, s in pool:
        if s > cfg.theta_b:
            return t, s
    return None


def route(
    query: Query,
    store: ExperienceStore,
    cfg: RoutingConfig | None = None,
    emb: EmbeddingConfig | None = None,
) -> RouteDecision:
    """Pick the first tier to try for ``query``.

    The score is the best trigger cosine over individual stored trajectories
    (single linkage), so a template is reachable as soon as any of its members
    is close. Invalidated trajectories are never candidates; rejected ones can
    seed a rewrite but are never replayed.
    """
    cfg = cfg or RoutingConfig()
    pool = _pool(store, embed(query.text, emb))
    if not pool:
        return RouteDecision(Route.C)
    best_t, best_s = pool[0]
    for t, s in pool:
        if _reusable(t):
            if s > cfg.theta_a:
                return RouteDecision(Route.A, (_template_key(store, t), s), (), t.trajectory_id)
            break
    first = decide_route(best_s, cfg)
    if first is Route.C:
        return RouteDecision(Route.C, (_template_key(store, best_t), best_s))
    src = _rewrite_source(pool, cfg)
    assert src is not None
    t, s = src
    skipped = (Route.A,) if first is Route.A else ()
    return RouteDecision(Route.B, (_template_key(store, t), s), skipped, t.trajectory_id)


def _template_for(store: ExperienceStore, t: Trajectory) -> TrajectoryTemplate:
    tpl = store.template_of(t.trajectory_id)
    return tpl if tpl is not None else build_template([t], store.direct_reuse_threshold)


def invalidate_template(store: ExperienceStore, template: TrajectoryTemplate) -> None:
    """Retire every member of a template whose fixed part no longer works."""
    for mid in template.member_ids:
        if not store.has_trajectory(mid):
            continue
        t = store.get_trajectory(mid)
        meta = replace(t.metadata.with_tag(INVALIDATED_TAG), outcome=Outcome.FAILURE)
        if meta != t.metadata:
            store.update_trajectory(replace(t, metadata=meta))
    store.cluster_templates()


def _fixed_failure(template: TrajectoryTemplate | None, t: Trajectory, failed_nodes: list[str]) -> bool:
    if template is not None:
        fixed = {n.node_id for n in template.skeleton if not n.is_variable}
    else:
        fixed = {n.node_id for n in t.nodes if not n.is_variable}
    return bool(failed_nodes) and all(n in fixed for n in failed_nodes)


def _try_direct(
    decision: RouteDecision, store: ExperienceStore, env: Environment
) -> tuple[Attempt, Trajectory]:
    t = store.get_trajectory(decision.trajectory_id)  # type: ignore[arg-type]
    log = env.execute(t)
    steps = executed_steps(log)
    template = store.template_of(t.trajectory_id)
    if log.outcome is Outcome.SUCCESS:
        meta = replace(t.metadata, usage_count=t.metadata.usage_count + 1)
        updated = store.update_trajectory(replace(t, metadata=meta))
        for e in extract_node_experiences(updated, None, []):
            store.put_experience(e)
        if template is not None:
            store.boost_priority(template.template_id)
        return Attempt(decision, Outcome.SUCCESS, ZERO_LEDGER, steps, 1), updated
    failed = replace(t, metadata=replace(t.metadata, outcome=Outcome.FAILURE))
    for e in extract_node_experiences(None, failed, [log]):
        store.put_experience(e)
    failed = store.update_trajectory(failed)
    if template is not None and _fixed_failure(template, t, [s.node_id for s in log.errors]):
        invalidate_template(store, template)
    else:
        store.cluster_templates()
    return Attempt(decision, Outcome.FAILURE, ZERO_LEDGER, steps, 1), failed


def _try_generate(
    decision: RouteDecision,
    query: Query,
    template: TrajectoryTemplate | None,
    store: ExperienceStore,
    backend: GeneratorBackend,
    env: Environment,
    cfg: RoutingConfig,
    emb: EmbeddingConfig | None,
) -> tuple[Attempt, Trajectory | None]:
    try:
        res = iterative_generate(query, template, backend, store, env, cfg.max_iters, emb)
    except ExhaustedIterations as exc:
        if exc.structural and template is not None and template.member_ids:
            invalidate_template(store, template)
        attempt = Attempt(decision, Outcome.FAILURE, exc.ledger, exc.wall_steps, exc.iterations)
        return attempt, exc.last_trajectory
    return Attempt(decision, Outcome.SUCCESS, res.ledger, res.wall_steps, res.iterations), res.trajectory


def execute_with_fallback(
    query: Query,
    store: ExperienceStore,
    backend: GeneratorBackend,
    env: Environment,
    cfg: RoutingConfig | None = None,
    emb: EmbeddingConfig | None = None,
) -> ExecutionReport:
    """Try A, B, C in that order starting at the routed tier; never go back."""
    cfg = cfg or RoutingConfig()
    decision = route(query, store, cfg, emb)
    attempts: list[Attempt] = []
    final: Trajectory | None = None
    tried = list(decision.degraded_from)

    def report(ok: bool) -> ExecutionReport:
        ledger = ZERO_LEDGER
        for a in attempts:
            ledger = ledger + a.ledger
        return ExecutionReport(
            query=query,
            attempts=tuple(attempts),
            final_trajectory=final,
            ledger=ledger,
            succeeded=ok,
            wall_steps=sum(a.wall_steps for a in attempts),
        )

    if decision.route is Route.A:
        attempt, final = _try_direct(decision, store, env)
        attempts.append(attempt)
        if attempt.outcome is Outcome.SUCCESS:
            return report(True)
        tried.append(Route.A)
        pool = _pool(store, embed(query.text, emb))
        src = _rewrite_source(pool, cfg)
        if src is not None:
            t, s = src
            decision = RouteDecision(Route.B, (_template_key(store, t), s), tuple(tried), t.trajectory_id)
        else:
            best = (pool[0][0], pool[0][1]) if pool else None
            match = (_template_key(store, best[0]), best[1]) if best else None
            decision = RouteDecision(Route.C, match, tuple(tried))

    if decision.route is Route.B:
        source = store.get_trajectory(decision.trajectory_id)  # type: ignore[arg-type]
        template = _template_for(store, source)
        attempt, last = _try_generate(decision, query, template, store, backend, env, cfg, emb)
        attempts.append(attempt)
        final = last if last is not None else final
        if attempt.outcome is Outcome.SUCCESS:
            return report(True)
        tried.append(Route.B)
        decision = RouteDecision(Route.C, decision.best_match, tuple(tried))

    attempt, last = _try_generate(decision, query, None, store, backend, env, cfg, emb)
    attempts.append(attempt)
    final = last if last is not None else final
    return report(attempt.outcome is Outcome.SUCCESS)


def record_feedback(report: ExecutionReport, verdict: Verdict, store: ExperienceStore) -> Trajectory:
    """Apply a user's verdict on the trajectory a report ended with."""
    if report.final_trajectory is None:
        raise UnknownTrajectory("report has no final trajectory")
    current = store.get_trajectory(report.final_trajectory.trajectory_id)
    if verdict is Verdict.USER_ERROR:
        meta = replace(current.metadata.with_tag(REJECTED_TAG), outcome=Outcome.FAILURE)
        if meta == current.metadata:
            return current
        updated = store.update_trajectory(replace(current, metadata=meta))
        store.cluster_templates()
        return updated
    meta = replace(current.metadata, usage_count=current.metadata.usage_count + 1)
    updated = store.update_trajectory(replace(current, metadata=meta))
    tpl = store.template_of(updated.trajectory_id)
    if tpl is not None:
        store.boost_priority(tpl.template_id)
    return updated
