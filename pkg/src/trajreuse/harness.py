"""Synthetic workloads, the comparison strategies, metrics, and reports."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

from .core import (
    ZERO_LEDGER,
    Outcome,
    Pattern,
    Query,
    Tier,
    TokenLedger,
    TrajReuseError,
    Trajectory,
    WorkflowNode,
    render_value,
)
from .embedding import EmbeddingConfig, Provider, cosine_similarity, embed
from .execution import Environment, FaultProfile, ToolRegistry
from .extraction import extract_node_experiences
from .generation import (
    GenerationError,
    GeneratorBackend,
    IntentSeed,
    MockBackend,
    RemoteHTTPBackend,
    executed_steps,
    plan_experiences,
    plan_from_scratch,
)
from .kernels import cosine
from .routing import ExecutionReport, Route, RoutingConfig, Verdict, execute_with_fallback, record_feedback
from .store import ExperienceStore

DATA_DIR = Path(str(resources.files("trajreuse") / "data"))

QUERY_HEAD = 2
QUERY_FILLERS = 4
MAX_RESAMPLES = 100

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


class CalibrationFailure(TrajReuseError):
    pass


class MissingBaseline(TrajReuseError):
    pass


class Strategy(str, Enum):
    ADAPTIVE = "AdaptiveReuse"
    REAL_TIME = "RealTimePlanning"
    STATIC = "StaticSingleTrajectory"
    BASIC_ICL = "BasicICL"


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class EngineConfig:
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    routing: RoutingConfig = field(default_factory=RoutingConfig)
    generator: dict[str, Any] = field(default_factory=lambda: {"kind": "DeterministicMock", "seed": 0})
    registry_path: Path = DATA_DIR / "registry.json"
    world_path: Path = DATA_DIR / "world.json"

    @classmethod
    def load(cls, path: str | Path | None = None, environ: Mapping[str, str] | None = None) -> EngineConfig:
        path = Path(path) if path is not None else DATA_DIR / "config.json"
        d = json.loads(path.read_text(encoding="utf-8"))
        base = path.parent
        emb = d.get("embedding", {})
        embedding = EmbeddingConfig(
            dimension=int(emb.get("dimension", 256)),
            provider=Provider(emb.get("provider", Provider.DETERMINISTIC_HASH.value)),
            remote_endpoint=emb.get("remote_endpoint"),
            timeout=float(emb.get("timeout", 10.0)),
        )
        return cls(
            embedding=embedding,
            routing=RoutingConfig.from_dict(d.get("routing", {})).with_env(environ),
            generator=dict(d.get("generator", {"kind": "DeterministicMock"})),
            registry_path=base / d.get("registry", "registry.json"),
            world_path=base / d.get("world", "world.json"),
        )


@dataclass(frozen=True)
class FaultSpec:
    tool_id: str
    profile: FaultProfile
    activation_step: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {"activation_step": self.activation_step, "profile": self.profile.to_dict(), "tool_id": self.tool_id}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> FaultSpec:
        return cls(d["tool_id"], FaultProfile.from_dict(d["profile"]), int(d.get("activation_step", 0)))


@dataclass(frozen=True)
class WorkloadConfig:
    seed: int = 42
    n_queries: int = 100
    tier_mix: tuple[float, float, float] = (0.6, 0.3, 0.1)
    n_families: int = 8
    faults: tuple[FaultSpec, ...] = ()

    def __post_init__(self) -> None:
        if len(self.tier_mix) != 3 or any(f < 0 for f in self.tier_mix):
            raise ValueError("tier_mix needs three non-negative fractions")
        if abs(sum(self.tier_mix) - 1.0) > 1e-9:
            raise ValueError("tier fractions must sum to 1")
        if self.n_families < 1 or self.n_queries < self.n_families:
            raise ValueError("need n_queries >= n_families >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "faults": [f.to_dict() for f in self.faults],
            "n_families": self.n_families,
            "n_queries": self.n_queries,
            "seed": self.seed,
            "tier_mix": list(self.tier_mix),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> WorkloadConfig:
        return cls(
            seed=int(d.get("seed", 42)),
            n_queries=int(d.get("n_queries", 100)),
            tier_mix=tuple(float(x) for x in d.get("tier_mix", (0.6, 0.3, 0.1))),  # type: ignore[arg-type]
            n_families=int(d.get("n_families", 8)),
            faults=tuple(FaultSpec.from_dict(f) for f in d.get("faults", ())),
        )

    @classmethod
    def load(cls, path: str | Path | None = None) -> WorkloadConfig:
        path = Path(path) if path is not None else DATA_DIR / "default_workload.json"
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


# -- world -------------------------------------------------------------------


@dataclass(frozen=True)
class Shape:
    name: str
    pattern: Pattern
    nodes: tuple[WorkflowNode, ...]

    @property
    def slots(self) -> tuple[str, ...]:
        out: list[str] = []
        for node in self.nodes:
            for v in node.params.values():
                if isinstance(v, str) and v.startswith("{") and v.endswith("}") and v[1:-1] not in out:
                    out.append(v[1:-1])
        return tuple(out)


@dataclass
class World:
    """Tools, entity vocabularies, workflow shapes, and the fixes a careful planner would apply."""

    registry: ToolRegistry
    entities: dict[str, list[str]]
    shapes: list[Shape]
    fixes: dict[str, dict[str, Any]]

    @classmethod
    def load(cls, path: str | Path | None = None, registry_path: str | Path | None = None) -> World:
        path = Path(path) if path is not None else DATA_DIR / "world.json"
        d = json.loads(path.read_text(encoding="utf-8"))
        reg_path = Path(registry_path) if registry_path is not None else path.parent / d["registry"]
        shapes = [
            Shape(s["name"], Pattern(s["pattern"]), tuple(WorkflowNode.from_dict(n) for n in s["nodes"]))
            for s in d["shapes"]
        ]
        return cls(ToolRegistry.load(reg_path), d["entities"], shapes, d["fixes"])

    def reserved_words(self) -> set[str]:
        words = {w for values in self.entities.values() for w in values}
        for shape in self.shapes:
            for node in shape.nodes:
                words.add(node.tool_id)
                words.update(render_value(v) for v in node.params.values())
        return words


@dataclass(frozen=True)
class Family:
    family_id: str
    head: tuple[str, ...]
    fillers: tuple[str, ...]
    shape: Shape

    @property
    def key_tokens(self) -> tuple[str, ...]:
        return self.head + self.fillers

    def text(self, entities: Mapping[str, str]) -> str:
        slots = self.shape.slots
        words = list(self.head)
        for i, filler in enumerate(self.fillers):
            words.append(filler)
            if i < len(slots):
                words.append(entities[slots[i]])
        return " ".join(words)

    def intent(self) -> IntentSeed:
        return IntentSeed(self.key_tokens, self.shape.nodes, self.shape.pattern)


@dataclass(frozen=True)
class WorkloadItem:
    query: Query
    family_id: str
    entities: dict[str, str]
    base_id: str | None = None
    similarity: float = 1.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "base_id": self.base_id,
            "entities": dict(sorted(self.entities.items())),
            "family_id": self.family_id,
            "query": self.query.to_dict(),
            "similarity": self.similarity,
        }


@dataclass(frozen=True)
class Workload:
    config: WorkloadConfig
    items: tuple[WorkloadItem, ...]
    families: tuple[Family, ...]

    @property
    def queries(self) -> list[Query]:
        return [item.query for item in self.items]

    def intents(self) -> list[IntentSeed]:
        return [f.intent() for f in self.families]


def _tier_counts(n: int, mix: Sequence[float]) -> list[int]:
    raw = [n * f for f in mix]
    counts = [int(x) for x in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


class _WordMaker:
    def __init__(self, rng: random.Random, reserved: set[str]) -> None:
        self.rng = rng
        self.used = set(reserved)

    def word(self) -> str:
        while True:
            w = "".join(self.rng.choice(_CONSONANTS) + self.rng.choice(_VOWELS) for _ in range(3))
            if w not in self.used:
                self.used.add(w)
                return w


def build_workload(cfg: WorkloadConfig, world: World | None = None, routing: RoutingConfig | None = None,
                   emb: EmbeddingConfig | None = None) -> Workload:
    """Deterministic query stream over procedurally named families.

    Every family is introduced once (its base query) before the shuffled
    remainder. Medium queries swap one to three entity values of their base and
    Novel queries come from fresh one-off families; both are checked against
    the routing thresholds after construction and resampled on a miss.
    """
    world = world or World.load()
    routing = routing or RoutingConfig()
    rng = random.Random(cfg.seed)
    words = _WordMaker(rng, world.reserved_words())
    high, medium, novel = _tier_counts(cfg.n_queries, cfg.tier_mix)
    if high < cfg.n_families:
        raise ValueError("tier mix leaves fewer High queries than families to introduce")

    def new_family(fid: str, shape: Shape) -> Family:
        return Family(
            fid,
            tuple(words.word() for _ in range(QUERY_HEAD)),
            tuple(words.word() for _ in range(QUERY_FILLERS)),
            shape,
        )

    def pick_entities(shape: Shape) -> dict[str, str]:
        return {slot: rng.choice(world.entities[slot]) for slot in shape.slots}

    def vec(text: str):
        return embed(text, emb)

    families: list[Family] = []
    bases: list[WorkloadItem] = []
    anchors: list = []  # embeddings every new family must stay clear of
    for i in range(cfg.n_families):
        shape = world.shapes[i % len(world.shapes)]
        for _ in range(MAX_RESAMPLES):
            fam = new_family(f"f{i}", shape)
            ents = pick_entities(shape)
            v = vec(fam.text(ents))
            if all(cosine(v, a) <= routing.theta_b for a in anchors):
                break
        else:
            raise CalibrationFailure(f"family {i} keeps colliding with earlier families")
        families.append(fam)
        anchors.append(v)
        bases.append(WorkloadItem(Query(fam.text(ents), "", Tier.HIGH), fam.family_id, ents))

    seen = list(anchors)
    tiers = [Tier.HIGH] * (high - cfg.n_families) + [Tier.MEDIUM] * medium + [Tier.NOVEL] * novel
    rng.shuffle(tiers)
    items: list[WorkloadItem] = list(bases)
    for tier in tiers:
        if tier is Tier.HIGH:
            base = bases[rng.randrange(len(bases))]
            items.append(replace(base, base_id=base.family_id))
        elif tier is Tier.MEDIUM:
            base = bases[rng.randrange(len(bases))]
            fam = families[int(base.family_id[1:])]
            base_vec = vec(base.query.text)
            for _ in range(MAX_RESAMPLES):
                ents = dict(base.entities)
                slots = list(fam.shape.slots)
                for slot in rng.sample(slots, rng.randint(1, len(slots))):
                    ents[slot] = rng.choice([w for w in world.entities[slot] if w != base.entities[slot]])
                v = vec(fam.text(ents))
                s = cosine_similarity(v, base_vec)
                # also stay out of the replay band of every earlier query, so the
                # tier label matches what a correct router should do with it
                if routing.theta_b < s <= routing.theta_a and all(
                    cosine(v, e) <= routing.theta_a for e in seen
                ):
                    break
            else:
                raise CalibrationFailure("cannot place a Medium query inside the rewrite band")
            seen.append(v)
            items.append(WorkloadItem(Query(fam.text(ents), "", Tier.MEDIUM), fam.family_id, ents,
                                      base.family_id, s))
        else:
            shape = world.shapes[rng.randrange(len(world.shapes))]
            for _ in range(MAX_RESAMPLES):
                fam = new_family(f"n{len(families)}", shape)
                ents = pick_entities(shape)
                v = vec(fam.text(ents))
                s = max(cosine(v, a) for a in anchors)
                if s <= routing.theta_b:
                    break
            else:
                raise CalibrationFailure("cannot place a Novel query below the rewrite band")
            families.append(fam)
            anchors.append(v)
            items.append(WorkloadItem(Query(fam.text(ents), "", Tier.NOVEL), fam.family_id, ents, None, s))
    numbered = tuple(
        replace(item, query=replace(item.query, id=f"q{i:04d}")) for i, item in enumerate(items)
    )
    return Workload(cfg, numbered, tuple(families))


def generate_workload(cfg: WorkloadConfig, world: World | None = None) -> list[Query]:
    return build_workload(cfg, world).queries


def make_backend(engine: EngineConfig, workload: Workload, world: World) -> GeneratorBackend:
    gen = engine.generator
    if gen.get("kind", "DeterministicMock") == "RemoteHTTP":
        return RemoteHTTPBackend(gen["endpoint"], float(gen.get("timeout", 30.0)))
    return MockBackend(
        seed=int(gen.get("seed", 0)),
        intents=workload.intents(),
        vocab=world.entities,
        fixes=world.fixes,
    )


# -- strategies --------------------------------------------------------------


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    tier: Tier
    succeeded: bool
    ledger: TokenLedger
    wall_steps: int
    route: str | None = None
    trail: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "ledger": self.ledger.to_dict(),
            "query_id": self.query_id,
            "route": self.route,
            "succeeded": self.succeeded,
            "tier": self.tier.value,
            "trail": list(self.trail),
            "wall_steps": self.wall_steps,
        }


@dataclass(frozen=True)
class StrategyMetrics:
    strategy: Strategy
    n_queries: int
    total_ledger: TokenLedger
    success_rate: float
    success_rate_medium_tier: float
    mean_wall_steps: float
    route_histogram: dict[str, int] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "mean_wall_steps": self.mean_wall_steps,
            "n_queries": self.n_queries,
            "route_histogram": dict(sorted(self.route_histogram.items())) if self.route_histogram is not None else None,
            "strategy": self.strategy.value,
            "success_rate": self.success_rate,
            "success_rate_medium_tier": self.success_rate_medium_tier,
            "total_ledger": self.total_ledger.to_dict(),
            "total_tokens": self.total_ledger.total_tokens,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> StrategyMetrics:
        return cls(
            strategy=Strategy(d["strategy"]),
            n_queries=int(d["n_queries"]),
            total_ledger=TokenLedger.from_dict(d["total_ledger"]),
            success_rate=float(d["success_rate"]),
            success_rate_medium_tier=float(d["success_rate_medium_tier"]),
            mean_wall_steps=float(d["mean_wall_steps"]),
            route_histogram=d.get("route_histogram"),
        )


@dataclass(frozen=True)
class StrategyRun:
    metrics: StrategyMetrics
    records: tuple[QueryRecord, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"metrics": self.metrics.to_dict(), "queries": [r.to_dict() for r in self.records]}


def entities_present(trajectory: Trajectory | None, expected: Mapping[str, str]) -> bool:
    """True when every expected entity value appears among the trajectory's params."""
    if trajectory is None:
        return False
    values = {render_value(v) for n in trajectory.nodes for v in n.params.values()}
    return all(v in values for v in expected.values())


def _aggregate(strategy: Strategy, records: Sequence[QueryRecord], with_routes: bool) -> StrategyMetrics:
    total = ZERO_LEDGER
    for r in records:
        total = total + r.ledger
    n = len(records)
    medium = [r for r in records if r.tier is Tier.MEDIUM]
    hist = None
    if with_routes:
        hist = {route.value: 0 for route in Route}
        for r in records:
            hist[r.route] += 1  # type: ignore[index]
    return StrategyMetrics(
        strategy=strategy,
        n_queries=n,
        total_ledger=total,
        success_rate=sum(r.succeeded for r in records) / n if n else 0.0,
        success_rate_medium_tier=sum(r.succeeded for r in medium) / len(medium) if medium else 0.0,
        mean_wall_steps=sum(r.wall_steps for r in records) / n if n else 0.0,
        route_histogram=hist,
    )


def _plan_and_run(
    item: WorkloadItem,
    backend: GeneratorBackend,
    env: Environment,
    store: ExperienceStore | None,
    emb: EmbeddingConfig,
    successes_only: bool,
) -> tuple[Trajectory | None, bool, TokenLedger, int]:
    successes = plan_experiences(store, item.query, include_failures=False)[0] if store and successes_only else []
    try:
        traj, ledger = plan_from_scratch(item.query, backend, env.registry, successes, (), emb)
    except GenerationError as exc:
        return None, False, exc.ledger, 0
    log = env.execute(traj)
    ok = log.outcome is Outcome.SUCCESS and entities_present(traj, item.entities)
    return traj, ok, ledger, executed_steps(log)


def run_strategy(
    strategy: Strategy,
    workload: Workload,
    world: World,
    backend: GeneratorBackend,
    store: ExperienceStore | None = None,
    engine: EngineConfig | None = None,
    env_seed: int | None = None,
) -> StrategyRun:
    """Run one strategy over the workload against a private copy of the tools.

    Faults are switched on when the query index reaches their activation step.
    """
    engine = engine or EngineConfig()
    emb, rcfg = engine.embedding, engine.routing
    store = store if store is not None else ExperienceStore(dimension=emb.dimension)
    if len(store):
        raise ValueError("each strategy run needs a fresh store")
    env = Environment(world.registry.clone(), workload.config.seed if env_seed is None else env_seed)
    records: list[QueryRecord] = []
    for step, item in enumerate(workload.items):
        for fault in workload.config.faults:
            if fault.activation_step == step or (step == 0 and fault.activation_step < 0):
                env.registry.inject_fault(fault.tool_id, fault.profile)
        q = item.query
        if strategy is Strategy.ADAPTIVE:
            rep: ExecutionReport = execute_with_fallback(q, store, backend, env, rcfg, emb)
            ok = rep.succeeded and entities_present(rep.final_trajectory, item.entities)
            if rep.succeeded and not ok:
                record_feedback(rep, Verdict.USER_ERROR, store)
            records.append(
                QueryRecord(
                    q.id, q.tier_hint, ok, rep.ledger, rep.wall_steps,  # type: ignore[arg-type]
                    rep.initial_route.value,
                    tuple(f"{a.decision.route.value}:{a.outcome.value}" for a in rep.attempts),
                )
            )
            continue
        if strategy is Strategy.STATIC:
            best = store.find_nearest(embed(q.text, emb), 1)[0] if len(store) else None
            if best is not None and best[1] > rcfg.theta_a:
                frozen = store.get_trajectory(best[0])
                log = env.execute(frozen)
                ok = log.outcome is Outcome.SUCCESS and entities_present(frozen, item.entities)
                records.append(QueryRecord(q.id, q.tier_hint, ok, ZERO_LEDGER, executed_steps(log)))  # type: ignore[arg-type]
                continue
            traj, ok, ledger, steps = _plan_and_run(item, backend, env, None, emb, False)
            if ok and traj is not None and (best is None or best[1] <= rcfg.theta_b):
                store.put_trajectory(traj)
            records.append(QueryRecord(q.id, q.tier_hint, ok, ledger, steps))  # type: ignore[arg-type]
            continue
        icl = strategy is Strategy.BASIC_ICL
        traj, ok, ledger, steps = _plan_and_run(item, backend, env, store if icl else None, emb, icl)
        if icl and ok and traj is not None:
            for e in extract_node_experiences(traj, None, []):
                store.put_experience(e)
            store.put_trajectory(traj)
        records.append(QueryRecord(q.id, q.tier_hint, ok, ledger, steps))  # type: ignore[arg-type]
    if store.path is not None:
        store.save()
    return StrategyRun(_aggregate(strategy, records, strategy is Strategy.ADAPTIVE), tuple(records))


# -- reports -----------------------------------------------------------------

DEFAULT_THRESHOLDS = {
    "reduction_vs_RealTimePlanning_pct": 40.0,
    "reduction_vs_StaticSingleTrajectory_pct": 15.0,
    "medium_gain_vs_BasicICL_pp": 20.0,
}


def reduction_pct(ours: TokenLedger, theirs: TokenLedger) -> float:
    if theirs.total_tokens == 0:
        return 0.0
    return (1.0 - ours.total_tokens / theirs.total_tokens) * 100.0


def compare(metrics: Sequence[StrategyMetrics], thresholds: Mapping[str, float] | None = None) -> dict[str, Any]:
    thresholds = dict(DEFAULT_THRESHOLDS if thresholds is None else thresholds)
    by_name = {m.strategy: m for m in metrics}
    if Strategy.REAL_TIME not in by_name:
        raise MissingBaseline(Strategy.REAL_TIME.value)
    if Strategy.ADAPTIVE not in by_name:
        raise MissingBaseline(Strategy.ADAPTIVE.value)
    ours = by_name[Strategy.ADAPTIVE]
    reductions: dict[str, float] = {}
    deltas: dict[str, dict[str, float]] = {}
    for m in metrics:
        if m.strategy is Strategy.ADAPTIVE:
            continue
        reductions[m.strategy.value] = reduction_pct(ours.total_ledger, m.total_ledger)
        deltas[m.strategy.value] = {
            "medium_pp": (ours.success_rate_medium_tier - m.success_rate_medium_tier) * 100.0,
            "overall_pp": (ours.success_rate - m.success_rate) * 100.0,
        }
    checks: dict[str, dict[str, Any]] = {}
    for key, limit in thresholds.items():
        if key.startswith("reduction_vs_"):
            name = key[len("reduction_vs_") : -len("_pct")]
            value = reductions.get(name)
        else:
            name = key[len("medium_gain_vs_") : -len("_pp")]
            value = deltas.get(name, {}).get("medium_pp")
        if value is None:
            continue
        checks[key] = {"passed": value >= limit, "threshold": limit, "value": value}
    return {
        "checks": checks,
        "passed": bool(checks) and all(c["passed"] for c in checks.values()),
        "route_histogram": ours.route_histogram,
        "strategies": {m.strategy.value: m.to_dict() for m in metrics},
        "success_rate_delta": deltas,
        "token_reduction_pct": reductions,
    }


def render_table(report: Mapping[str, Any]) -> str:
    lines = [
        f"{'strategy':<24}{'tokens':>10}{'calls':>8}{'success':>10}{'medium':>10}{'wall':>8}",
    ]
    for name, m in report["strategies"].items():
        lines.append(
            f"{name:<24}{m['total_tokens']:>10}{m['total_ledger']['generator_calls']:>8}"
            f"{m['success_rate']:>10.3f}{m['success_rate_medium_tier']:>10.3f}{m['mean_wall_steps']:>8.2f}"
        )
    lines.append("")
    for name, pct in report["token_reduction_pct"].items():
        d = report["success_rate_delta"][name]
        lines.append(
            f"vs {name}: token reduction {pct:.1f}%, success {d['overall_pp']:+.1f}pp, medium {d['medium_pp']:+.1f}pp"
        )
    if report.get("route_histogram"):
        lines.append("routes: " + ", ".join(f"{k}={v}" for k, v in report["route_histogram"].items()))
    for key, c in report["checks"].items():
        lines.append(f"{'PASS' if c['passed'] else 'FAIL'} {key}: {c['value']:.2f} (need >= {c['threshold']})")
    return "\n".join(lines) + "\n"


def compare_and_report(
    metrics: Sequence[StrategyMetrics], out_path: str | Path, thresholds: Mapping[str, float] | None = None
) -> tuple[dict[str, Any], bool]:
    """Write ``out_path`` (JSON) and a ``.txt`` table next to it."""
    report = compare(metrics, thresholds)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    out.with_suffix(".txt").write_text(render_table(report), encoding="utf-8")
    return report, report["passed"]


def run_all(
    workload_cfg: WorkloadConfig | None = None,
    engine: EngineConfig | None = None,
    strategies: Sequence[Strategy] = tuple(Strategy),
) -> tuple[Workload, dict[Strategy, StrategyRun]]:
    """Every strategy on one workload, each with its own store and tool copy."""
    engine = engine or EngineConfig()
    workload_cfg = workload_cfg or WorkloadConfig.load()
    world = World.load(engine.world_path, engine.registry_path)
    workload = build_workload(workload_cfg, world, engine.routing, engine.embedding)
    backend = make_backend(engine, workload, world)
    runs = {s: run_strategy(s, workload, world, backend, None, engine) for s in strategies}
    return workload, runs
