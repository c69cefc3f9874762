"""Generator backends, prompt assembly, and the generation paths.

Two ways to obtain a workflow:

* :func:`rewrite_trajectory` keeps a template's structure and asks the
  generator only for the parameters of its variable nodes.
* :func:`plan_from_scratch` asks for a complete plan in a line format.

:func:`iterative_generate` wraps either one in an execute / learn / retry loop.
"""

from __future__ import annotations

import json
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Mapping, NamedTuple, Protocol, Sequence

from .core import (
    ZERO_LEDGER,
    Metadata,
    NodeExperience,
    Outcome,
    ParameterSchema,
    ParamValue,
    Pattern,
    Query,
    RootCause,
    TokenLedger,
    TrajReuseError,
    Trajectory,
    TrajectoryTemplate,
    WorkflowNode,
    render_value,
    validate,
)
from .embedding import EmbeddingConfig, embed, tokenize
from .execution import Environment, ToolRegistry
from .extraction import (
    ExecutionLog,
    _hex_id,
    classify_root_cause,
    extract_node_experiences,
    induce_parameter_schema,
    intent_key,
    mark_entity_bindings,
)
from .kernels import fnv1a64
from .store import ExperienceStore

PROMPT_CAP = 3

TASK = "task"
NODE_CONTRACT = "node contract"
TOOL_CATALOG = "tool catalog"
PLANNING_RULES = "planning rules"
SUCCESS_PARADIGMS = "success paradigms"
FAILURE_AVOIDANCE = "failure avoidance"

PLAN_FORMAT_RULES = (
    "Reply with a first line 'pattern <Sequential|Parallel|ConditionalBranch>' and then "
    "exactly one line per workflow step in the form "
    "'<node_id> <tool_id> <name>=<value> ... <- <dependency ids, comma separated>'. "
    "Use only tools from the catalog, fill every required field, and keep values free of spaces."
)


def count_tokens(text: str) -> int:
    """Number of maximal non-whitespace runs. The only token metric used anywhere."""
    return len(text.split())


class GenerationError(TrajReuseError):
    """Base for generation failures; ``ledger`` holds tokens already spent."""

    def __init__(self, message: str, ledger: TokenLedger = ZERO_LEDGER, node_id: str | None = None):
        super().__init__(message)
        self.ledger = ledger
        self.node_id = node_id


class GeneratorFailure(GenerationError):
    pass


class SchemaViolation(GenerationError):
    pass


class UnparsablePlan(GenerationError):
    pass


class UnknownToolInPlan(GenerationError):
    pass


class NotVariableNode(TrajReuseError, ValueError):
    pass


class ExhaustedIterations(TrajReuseError):
    def __init__(
        self,
        last_log: ExecutionLog | None,
        ledger: TokenLedger,
        iterations: int,
        wall_steps: int,
        last_trajectory: Trajectory | None = None,
        structural: bool = False,
    ):
        super().__init__(f"no successful execution after {iterations} iteration(s)")
        self.last_log = last_log
        self.ledger = ledger
        self.iterations = iterations
        self.wall_steps = wall_steps
        self.last_trajectory = last_trajectory
        # failure sat on a fixed node, so rewriting again could not help
        self.structural = structural


class Purpose(str, Enum):
    REWRITE_NODE = "RewriteNode"
    FULL_PLAN = "FullPlan"


@dataclass(frozen=True)
class GeneratorRequest:
    purpose: Purpose
    prompt_sections: tuple[tuple[str, str], ...]
    constraints: ParameterSchema | None = None
    slot: tuple[str, str] | None = None

    def __post_init__(self) -> None:
        if not self.prompt_sections:
            raise ValueError("prompt_sections must not be empty")
        if self.purpose is Purpose.REWRITE_NODE and self.slot is None:
            raise ValueError("RewriteNode requests need a slot")

    def section(self, label: str) -> str:
        for name, text in self.prompt_sections:
            if name == label:
                return text
        return ""

    @property
    def prompt(self) -> str:
        return "\n\n".join(f"[{label}]\n{text}" for label, text in self.prompt_sections)

    def with_section(self, label: str, text: str) -> GeneratorRequest:
        """Append ``text`` to section ``label``, creating it at the end if absent."""
        sections = list(self.prompt_sections)
        for i, (name, body) in enumerate(sections):
            if name == label:
                sections[i] = (name, f"{body}\n{text}")
                break
        else:
            sections.append((label, text))
        return replace(self, prompt_sections=tuple(sections))


@dataclass(frozen=True)
class GeneratorResponse:
    payload: str
    ledger: TokenLedger


class GeneratorBackend(Protocol):
    kind: str

    def generate(self, request: GeneratorRequest) -> GeneratorResponse: ...


def _metered(request: GeneratorRequest, payload: str) -> GeneratorResponse:
    return GeneratorResponse(
        payload=payload,
        ledger=TokenLedger(count_tokens(request.prompt), count_tokens(payload), 1),
    )


# -- backends ----------------------------------------------------------------


@dataclass(frozen=True)
class IntentSeed:
    """What the mock 'knows' about one kind of request.

    ``nodes`` may hold ``{slot}`` placeholders that the mock fills from query
    tokens found in ``vocab[slot]``.
    """

    key_tokens: tuple[str, ...]
    nodes: tuple[WorkflowNode, ...]
    pattern: Pattern = Pattern.SEQUENTIAL

    def to_dict(self) -> dict[str, Any]:
        return {
            "key_tokens": list(self.key_tokens),
            "nodes": [n.to_dict() for n in self.nodes],
            "pattern": self.pattern.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> IntentSeed:
        return cls(
            key_tokens=tuple(d["key_tokens"]),
            nodes=tuple(WorkflowNode.from_dict(n) for n in d["nodes"]),
            pattern=Pattern(d["pattern"]),
        )


_PLACEHOLDER = re.compile(r"^\{(\w+)\}$")
_TOOL_MENTION = re.compile(r"\btool (\S+)")


class MockBackend:
    """Deterministic stand-in for a language model.

    Lookup order: the exact seed ``table`` (keyed by ``(purpose, slot key)`` for
    rewrites and ``(purpose, query text or intent key)`` for plans), then the
    default rules: plans come from the best-overlapping :class:`IntentSeed`,
    and rewrite slots are filled with query tokens that belong to the field's
    vocabulary, falling back to the schema example. A tool named in the
    failure-avoidance section gets its entry in ``fixes`` applied, which is how
    injected lessons change the output.
    """

    kind = "DeterministicMock"

    def __init__(
        self,
        seed: int = 0,
        table: Mapping[tuple[str, str], str] | None = None,
        intents: Sequence[IntentSeed] = (),
        vocab: Mapping[str, Sequence[str]] | None = None,
        fixes: Mapping[str, Mapping[str, Any]] | None = None,
    ) -> None:
        self.seed = seed
        self.table = dict(table or {})
        self.intents = list(intents)
        self.vocab = {k: list(v) for k, v in (vocab or {}).items()}
        self.fixes = {k: dict(v) for k, v in (fixes or {}).items()}

    def generate(self, request: GeneratorRequest) -> GeneratorResponse:
        if request.purpose is Purpose.REWRITE_NODE:
            payload = self._rewrite(request)
        else:
            payload = self._plan(request)
        return _metered(request, payload)

    def _warned_tools(self, request: GeneratorRequest) -> set[str]:
        return set(_TOOL_MENTION.findall(request.section(FAILURE_AVOIDANCE)))

    def _entity(self, slot: str, qtokens: list[str]) -> str | None:
        vocab = self.vocab.get(slot)
        if not vocab:
            return None
        for tok in qtokens:
            if tok in vocab:
                return tok
        return None

    def _rewrite(self, request: GeneratorRequest) -> str:
        template_id, node_id = request.slot  # type: ignore[misc]
        seeded = self.table.get((Purpose.REWRITE_NODE.value, f"{template_id}:{node_id}"))
        if seeded is not None:
            return seeded
        qtokens = tokenize(request.section(TASK))
        mentioned = _TOOL_MENTION.findall(request.section(NODE_CONTRACT))
        tool = mentioned[0] if mentioned else ""
        schema = request.constraints or ParameterSchema()
        values: dict[str, str] = {}
        for name in schema.fields:
            found = self._entity(name, qtokens)
            if found is not None:
                values[name] = found
            elif name in schema.example_template:
                values[name] = schema.example_template[name]
        if tool in self._warned_tools(request):
            for k, v in self.fixes.get(tool, {}).get("params", {}).items():
                values[k] = render_value(v)
        return " ".join(f"{k}={v}" for k, v in values.items())

    def _plan(self, request: GeneratorRequest) -> str:
        task = request.section(TASK)
        for key in (task, intent_key(task)):
            seeded = self.table.get((Purpose.FULL_PLAN.value, key))
            if seeded is not None:
                return seeded
        qtokens = tokenize(task)
        qset = set(qtokens)
        best: IntentSeed | None = None
        best_rank: tuple[int, int] | None = None
        for seed_intent in self.intents:
            overlap = len(qset.intersection(seed_intent.key_tokens))
            if overlap == 0:
                continue
            tie = fnv1a64(f"{self.seed}:{' '.join(seed_intent.key_tokens)}".encode())
            rank = (overlap, -tie)
            if best_rank is None or rank > best_rank:
                best, best_rank = seed_intent, rank
        if best is None:
            catalog = request.section(TOOL_CATALOG).split()
            tool = catalog[0].rstrip(":") if catalog else "noop"
            return f"pattern Sequential\nn0 {tool}"
        warned = self._warned_tools(request)
        nodes = []
        for node in best.nodes:
            params: dict[str, ParamValue] = {}
            for k, v in node.params.items():
                m = _PLACEHOLDER.match(v) if isinstance(v, str) else None
                if m:
                    found = self._entity(m.group(1), qtokens)
                    vocab = self.vocab.get(m.group(1)) or [m.group(1)]
                    params[k] = found if found is not None else vocab[0]
                else:
                    params[k] = v
            tool = node.tool_id
            if tool in warned and tool in self.fixes:
                fix = self.fixes[tool]
                params.update(fix.get("params", {}))
                tool = fix.get("replace_with", tool)
            nodes.append(replace(node, tool_id=tool, params=params))
        return render_plan(nodes, best.pattern)


class RemoteHTTPBackend:
    """POSTs ``{"purpose", "prompt"}`` and expects ``{"payload", ...}`` back."""

    kind = "RemoteHTTP"

    def __init__(self, endpoint: str, timeout: float = 30.0) -> None:
        self.endpoint = endpoint
        self.timeout = timeout

    def generate(self, request: GeneratorRequest) -> GeneratorResponse:
        body = json.dumps({"purpose": request.purpose.value, "prompt": request.prompt}).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint, data=body, headers={"Content-Type": "application/json"}, method="POST"
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                data = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise GeneratorFailure(f"remote generator unavailable: {exc}") from exc
        if not isinstance(data, dict) or not isinstance(data.get("payload"), str):
            raise GeneratorFailure("remote generator returned no payload")
        payload = data["payload"]
        pt = data.get("prompt_tokens")
        ct = data.get("completion_tokens")
        ledger = TokenLedger(
            int(pt) if pt is not None else count_tokens(request.prompt),
            int(ct) if ct is not None else count_tokens(payload),
            1,
        )
        return GeneratorResponse(payload, ledger)


# -- plan text ---------------------------------------------------------------


def render_plan(nodes: Sequence[WorkflowNode], pattern: Pattern) -> str:
    lines = [f"pattern {pattern.value}"]
    for node in nodes:
        parts = [node.node_id, node.tool_id]
        for k, v in node.params.items():
            text = render_value(v)
            if not text or any(c.isspace() for c in text):
                raise ValueError(f"param {k} of {node.node_id} is empty or has whitespace")
            parts.append(f"{k}={text}")
        if node.depends_on:
            parts += ["<-", ",".join(node.depends_on)]
        lines.append(" ".join(parts))
    return "\n".join(lines)


_INT = re.compile(r"^-?\d+$")
_FLOAT = re.compile(r"^-?\d+\.\d+$")


def parse_value(text: str) -> ParamValue:
    if _INT.match(text):
        return int(text)
    if _FLOAT.match(text):
        return float(text)
    if text in ("true", "false"):
        return text == "true"
    return text


def parse_assignments(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for token in text.split():
        name, sep, value = token.partition("=")
        if not sep or not name:
            raise ValueError(f"not a name=value pair: {token!r}")
        out[name] = value
    return out


def parse_plan(payload: str) -> tuple[list[WorkflowNode], Pattern]:
    lines = [line.strip() for line in payload.strip().splitlines() if line.strip()]
    if not lines:
        raise ValueError("empty plan")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "pattern":
        raise ValueError("plan must start with 'pattern <name>'")
    pattern = Pattern(head[1])
    nodes = []
    for line in lines[1:]:
        body, arrow, deps = line.partition("<-")
        parts = body.split()
        if len(parts) < 2:
            raise ValueError(f"step line needs an id and a tool: {line!r}")
        params = {k: parse_value(v) for k, v in parse_assignments(" ".join(parts[2:])).items()}
        dep_ids = tuple(d.strip() for d in deps.split(",") if d.strip()) if arrow else ()
        nodes.append(WorkflowNode(node_id=parts[0], tool_id=parts[1], params=params, depends_on=dep_ids))
    if not nodes:
        raise ValueError("plan has no steps")
    return nodes, pattern


# -- prompt assembly ---------------------------------------------------------


def _notes(experiences: Sequence[NodeExperience], cap: int) -> list[str]:
    out: list[str] = []
    for e in experiences:
        if e.avoidance_note and e.avoidance_note not in out:
            out.append(e.avoidance_note)
        if len(out) == cap:
            break
    return out


def describe_contract(tool_id: str, schema: ParameterSchema | None, names: Sequence[str] = ()) -> str:
    if schema is None:
        return f"tool {tool_id} fields " + " ".join(names)
    fields = " ".join(f"{n}:{schema.format_constraints.get(n, 'any')}" for n in schema.fields)
    example = " ".join(f"{k}={v}" for k, v in schema.example_template.items())
    return f"tool {tool_id} fields {fields} example {example}".rstrip()


def assemble_prompt(
    node: WorkflowNode,
    experiences: Sequence[NodeExperience],
    query: Query,
    schema: ParameterSchema | None = None,
    template_id: str = "",
) -> GeneratorRequest:
    """Rewrite request for one variable node.

    ``experiences`` are taken to be in chronological order; the newest three of
    each polarity are injected.
    """
    if not node.is_variable:
        raise NotVariableNode(node.node_id)
    newest_first = list(reversed(experiences))
    sections = [(TASK, query.text), (NODE_CONTRACT, describe_contract(node.tool_id, schema, list(node.params)))]
    good = _notes([e for e in newest_first if e.polarity is Outcome.SUCCESS], PROMPT_CAP)
    bad = _notes([e for e in newest_first if e.polarity is Outcome.FAILURE], PROMPT_CAP)
    if good:
        sections.append((SUCCESS_PARADIGMS, "\n".join(good)))
    if bad:
        sections.append((FAILURE_AVOIDANCE, "\n".join(bad)))
    return GeneratorRequest(
        purpose=Purpose.REWRITE_NODE,
        prompt_sections=tuple(sections),
        constraints=schema,
        slot=(template_id, node.node_id),
    )


def describe_catalog(tools: ToolRegistry) -> str:
    lines = []
    for spec in tools.list_tools():
        fields = " ".join(spec.param_schema.fields) or "none"
        lines.append(f"{spec.tool_id}: {spec.description} | fields {fields}".replace("  ", " "))
    return "\n".join(lines)


def assemble_plan_prompt(
    query: Query,
    tools: ToolRegistry,
    successes: Sequence[NodeExperience] = (),
    failures: Sequence[NodeExperience] = (),
) -> GeneratorRequest:
    """Full-plan request. Experience lists are already in priority order."""
    sections = [
        (TASK, query.text),
        (TOOL_CATALOG, describe_catalog(tools)),
        (PLANNING_RULES, PLAN_FORMAT_RULES),
    ]
    good = _notes(successes, PROMPT_CAP)
    bad = _notes(failures, PROMPT_CAP)
    if good:
        sections.append((SUCCESS_PARADIGMS, "\n".join(good)))
    if bad:
        sections.append((FAILURE_AVOIDANCE, "\n".join(bad)))
    return GeneratorRequest(purpose=Purpose.FULL_PLAN, prompt_sections=tuple(sections))


def plan_experiences(
    store: ExperienceStore, query: Query, include_failures: bool = True
) -> tuple[list[NodeExperience], list[NodeExperience]]:
    """(successes, failures) for a plan prompt, newest first.

    Failures for the query's own intent come first; the remaining room is
    filled with the newest failures recorded for any intent.
    """
    own = store.lookup_experiences(intent_key(query.text))
    successes = [e for e in reversed(own) if e.polarity is Outcome.SUCCESS]
    if not include_failures:
        return successes, []
    failures = [e for e in reversed(own) if e.polarity is Outcome.FAILURE]
    for e in store.recent_failures(PROMPT_CAP):
        if e not in failures:
            failures.append(e)
    return successes, failures


# -- generation paths --------------------------------------------------------


def _coerce(text: str, like: ParamValue | None) -> ParamValue:
    if isinstance(like, bool):
        return text == "true"
    if isinstance(like, int):
        try:
            return int(text)
        except ValueError:
            return text
    if isinstance(like, float):
        try:
            return float(text)
        except ValueError:
            return text
    if like is None:
        return parse_value(text)
    return text


def _ask(backend: GeneratorBackend, request: GeneratorRequest, node_id: str | None, spent: TokenLedger):
    try:
        return backend.generate(request)
    except GenerationError as exc:
        raise GeneratorFailure(str(exc), spent + exc.ledger, node_id) from exc
    except Exception as exc:  # backend bugs surface as generation failures
        raise GeneratorFailure(f"generator raised {exc!r}", spent, node_id) from exc


def template_members(template: TrajectoryTemplate, store: ExperienceStore) -> list[Trajectory]:
    return [store.get_trajectory(m) for m in template.member_ids if store.has_trajectory(m)]


def rewrite_trajectory(
    template: TrajectoryTemplate,
    query: Query,
    backend: GeneratorBackend,
    store: ExperienceStore,
    cfg: EmbeddingConfig | None = None,
    trajectory_id: str | None = None,
) -> tuple[Trajectory, TokenLedger]:
    """Fill the template's variable nodes for ``query``; copy everything else."""
    members = template_members(template, store)
    canonical = max(members, key=lambda t: (t.metadata.executed_at, t.trajectory_id)) if members else None
    ledger = ZERO_LEDGER
    nodes: list[WorkflowNode] = []
    for pos, node in enumerate(template.skeleton):
        if not node.is_variable:
            nodes.append(node)
            continue
        samples = [m.nodes[pos].params for m in members if pos < len(m.nodes)]
        schema = induce_parameter_schema(samples) if samples and samples[0] else None
        like = samples[0] if samples else {}
        request = assemble_prompt(
            node, store.experiences_for_tool(node.tool_id), query, schema, template.template_id
        )
        params = None
        problems: list[tuple[str, str]] = []
        for attempt in range(2):
            resp = _ask(backend, request, node.node_id, ledger)
            ledger = ledger + resp.ledger
            try:
                raw = parse_assignments(resp.payload)
            except ValueError as exc:
                problems = [("payload", str(exc))]
            else:
                params = {k: _coerce(v, like.get(k)) for k, v in raw.items()}
                problems = schema.violations(params) if schema else []
            if not problems:
                break
            # one bounded repair: tell the generator what was wrong and ask again
            complaint = "previous answer rejected: " + "; ".join(f"{f} {p}" for f, p in problems)
            request = request.with_section(FAILURE_AVOIDANCE, complaint)
        if problems or params is None:
            raise SchemaViolation(f"node {node.node_id}: {problems}", ledger, node.node_id)
        nodes.append(replace(node, params=params, generated_by_model=True, experience_refs=()))
    traj = Trajectory(
        trajectory_id=trajectory_id or _hex_id("r", query.id, template.template_id),
        trigger=query,
        trigger_embedding=embed(query.text, cfg),
        nodes=tuple(nodes),
        pattern=template.pattern,
        context={**(canonical.context if canonical else {}), "source_template": template.template_id},
        metadata=Metadata(outcome=Outcome.SUCCESS),
    )
    return traj, ledger


def plan_from_scratch(
    query: Query,
    backend: GeneratorBackend,
    tools: ToolRegistry,
    successes: Sequence[NodeExperience] = (),
    failures: Sequence[NodeExperience] = (),
    cfg: EmbeddingConfig | None = None,
    trajectory_id: str | None = None,
) -> tuple[Trajectory, TokenLedger]:
    """One FullPlan call, parsed strictly into a trajectory over ``tools``."""
    if len(tools) == 0:
        raise ValueError("tool registry is empty")
    request = assemble_plan_prompt(query, tools, successes, failures)
    resp = _ask(backend, request, None, ZERO_LEDGER)
    ledger = resp.ledger
    try:
        nodes, pattern = parse_plan(resp.payload)
    except ValueError as exc:
        raise UnparsablePlan(str(exc), ledger) from exc
    for node in nodes:
        if node.tool_id not in tools:
            raise UnknownToolInPlan(f"{node.node_id} uses unregistered tool {node.tool_id}", ledger, node.node_id)
    nodes = [replace(n, generated_by_model=True) for n in nodes]
    traj = Trajectory(
        trajectory_id=trajectory_id or _hex_id("p", query.id),
        trigger=query,
        trigger_embedding=embed(query.text, cfg),
        nodes=mark_entity_bindings(nodes, query.text),
        pattern=pattern,
        metadata=Metadata(outcome=Outcome.SUCCESS),
    )
    violations = validate(traj)
    if violations:
        raise UnparsablePlan(f"plan violates {[v.value for v in violations]}", ledger)
    return traj, ledger


class GenerationResult(NamedTuple):
    trajectory: Trajectory
    log: ExecutionLog
    ledger: TokenLedger
    iterations: int
    wall_steps: int


def executed_steps(log: ExecutionLog) -> int:
    return sum(1 for s in log.steps if s.skipped_by is None)


def _link_experiences(
    traj: Trajectory, learned: Sequence[NodeExperience], store: ExperienceStore
) -> Trajectory:
    key = intent_key(traj.trigger.text)
    nodes = []
    for pos, node in enumerate(traj.nodes):
        refs = [
            e.experience_id
            for e in learned
            if e.polarity is Outcome.SUCCESS
            and e.best_tool == node.tool_id
            and e.avoidance_note.startswith(f"step {pos} ")
        ]
        refs += [
            e.experience_id
            for e in store.experiences_for_tool(node.tool_id)
            if e.polarity is Outcome.FAILURE and e.intent_key == key
        ]
        nodes.append(replace(node, experience_refs=tuple(dict.fromkeys(refs))))
    return replace(traj, nodes=tuple(nodes))


def _beyond_rewrite(step, fixed_ids: set[str]) -> bool:
    # rewriting only refills variable-node params: it cannot touch fixed nodes or swap a tool
    return step.node_id in fixed_ids or classify_root_cause(step.error) is RootCause.TOOL_MISMATCH


def iterative_generate(
    query: Query,
    template: TrajectoryTemplate | None,
    backend: GeneratorBackend,
    store: ExperienceStore,
    env: Environment,
    max_iters: int = 3,
    cfg: EmbeddingConfig | None = None,
) -> GenerationResult:
    """Generate, execute, learn from failure, retry; store the first success.

    Raises :class:`ExhaustedIterations` when no attempt succeeds. With a
    template, the loop also stops early once a failure lands on a fixed node,
    since rewriting cannot change fixed nodes.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    ledger = ZERO_LEDGER
    wall = 0
    last_log: ExecutionLog | None = None
    last_failed: Trajectory | None = None
    structural = False
    iterations = 0
    fixed_ids = {n.node_id for n in template.skeleton if not n.is_variable} if template else set()
    for it in range(max_iters):
        iterations += 1
        tag = "rewrite" if template is not None else "plan"
        tid = _hex_id("t", query.id, tag, str(it))
        try:
            if template is not None:
                traj, spent = rewrite_trajectory(template, query, backend, store, cfg, tid)
            else:
                successes, failures = plan_experiences(store, query)
                traj, spent = plan_from_scratch(
                    query, backend, env.registry, successes, failures, cfg, tid
                )
        except GenerationError as exc:
            ledger = ledger + exc.ledger
            continue
        ledger = ledger + spent
        log = env.execute(traj)
        wall += executed_steps(log)
        if log.outcome is Outcome.SUCCESS:
            learned = extract_node_experiences(traj, last_failed, [])
            for e in learned:
                store.put_experience(e)
            stored = _link_experiences(traj, learned, store)
            store.put_trajectory(stored)
            store.cluster_templates()
            return GenerationResult(store.get_trajectory(stored.trajectory_id), log, ledger, iterations, wall)
        failed = replace(traj, metadata=replace(traj.metadata, outcome=Outcome.FAILURE))
        for e in extract_node_experiences(None, failed, [log]):
            store.put_experience(e)
        last_log, last_failed = log, failed
        if template is not None and all(_beyond_rewrite(s, fixed_ids) for s in log.errors):
            structural = True
            break
    raise ExhaustedIterations(last_log, ledger, iterations, wall, last_failed, structural)
