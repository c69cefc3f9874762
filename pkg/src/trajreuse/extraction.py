"""Turning execution logs into trajectories and node-level experiences."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Sequence

from .core import (
    ErrorFingerprint,
    Metadata,
    NodeExperience,
    Outcome,
    ParameterSchema,
    ParamValue,
    Pattern,
    Query,
    ReuseClass,
    RootCause,
    TrajReuseError,
    Trajectory,
    TrajectoryTemplate,
    WorkflowNode,
    _is_number,
    generalize_pattern,
    render_value,
)
from .embedding import EmbeddingConfig, embed, tokenize
from .kernels import fnv1a64
from .store import ExperienceStore, classify_reuse

CONDITION_PARAM = "when"


class EmptyLog(TrajReuseError, ValueError):
    pass


class BothAbsent(TrajReuseError, ValueError):
    pass


class EmptySamples(TrajReuseError, ValueError):
    pass


@dataclass(frozen=True)
class StepRecord:
    node_id: str
    tool_id: str
    params: dict[str, ParamValue] = field(default_factory=dict)
    output: str | None = None
    error: tuple[str, str] | None = None
    duration_units: int = 0
    depends_on: tuple[str, ...] = ()
    # condition text when the step was skipped; then neither output nor error is set
    skipped_by: str | None = None

    def __post_init__(self) -> None:
        if self.skipped_by is None and (self.output is None) == (self.error is None):
            raise ValueError("exactly one of output / error must be present")
        if self.duration_units < 0:
            raise ValueError("duration_units must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "depends_on": list(self.depends_on),
            "duration_units": self.duration_units,
            "error": {"code": self.error[0], "message": self.error[1]} if self.error else None,
            "node_id": self.node_id,
            "output": self.output,
            "params": [[k, v] for k, v in self.params.items()],
            "skipped_by": self.skipped_by,
            "tool_id": self.tool_id,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> StepRecord:
        err = d.get("error")
        return cls(
            node_id=d["node_id"],
            tool_id=d["tool_id"],
            params={k: v for k, v in d["params"]},
            output=d.get("output"),
            error=(err["code"], err["message"]) if err else None,
            duration_units=d.get("duration_units", 0),
            depends_on=tuple(d.get("depends_on", ())),
            skipped_by=d.get("skipped_by"),
        )


@dataclass(frozen=True)
class ExecutionLog:
    query: Query
    steps: tuple[StepRecord, ...]
    outcome: Outcome
    context: dict[str, str] = field(default_factory=dict)
    trajectory_id: str | None = None

    def __post_init__(self) -> None:
        if self.outcome is Outcome.FAILURE and not any(s.error for s in self.steps):
            raise ValueError("a failed log needs at least one error step")

    @property
    def errors(self) -> list[StepRecord]:
        return [s for s in self.steps if s.error is not None]

    def to_dict(self) -> dict[str, Any]:
        return {
            "context": dict(sorted(self.context.items())),
            "outcome": self.outcome.value,
            "query": self.query.to_dict(),
            "steps": [s.to_dict() for s in self.steps],
            "trajectory_id": self.trajectory_id,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ExecutionLog:
        return cls(
            query=Query.from_dict(d["query"]),
            steps=tuple(StepRecord.from_dict(s) for s in d["steps"]),
            outcome=Outcome(d["outcome"]),
            context=dict(d.get("context", {})),
            trajectory_id=d.get("trajectory_id"),
        )


def read_logs(lines: Iterable[str]) -> list[ExecutionLog]:
    return [ExecutionLog.from_dict(json.loads(line)) for line in lines if line.strip()]


# -- helpers -----------------------------------------------------------------


def intent_key(text: str) -> str:
    """First two lowercase tokens joined by ``:``."""
    return ":".join(tokenize(text)[:2])


def mark_entity_bindings(nodes: Sequence[WorkflowNode], query_text: str) -> tuple[WorkflowNode, ...]:
    """Flag nodes whose parameter values reuse tokens of the query as variable."""
    qtokens = set(tokenize(query_text))
    out = []
    for node in nodes:
        bound = any(
            qtokens.intersection(tokenize(render_value(v))) for k, v in node.params.items() if k != CONDITION_PARAM
        )
        out.append(replace(node, is_variable=True) if bound else node)
    return tuple(out)


def infer_pattern(steps: Sequence[StepRecord]) -> Pattern:
    if any(s.skipped_by for s in steps):
        return Pattern.CONDITIONAL_BRANCH
    chain = all(
        tuple(s.depends_on) == ((steps[i - 1].node_id,) if i else ())
        for i, s in enumerate(steps)
    )
    if chain:
        return Pattern.SEQUENTIAL
    # shared predecessor sets mean siblings; any other non-chain DAG is fan-in
    return Pattern.PARALLEL


def _hex_id(prefix: str, *parts: str) -> str:
    return prefix + format(fnv1a64("\x1f".join(parts).encode("utf-8")), "016x")


# -- extraction --------------------------------------------------------------


def extract_workflow_trajectory(log: ExecutionLog, cfg: EmbeddingConfig | None = None) -> Trajectory:
    if not log.steps:
        raise EmptyLog("execution log has no steps")
    nodes = tuple(
        WorkflowNode(
            node_id=s.node_id,
            tool_id=s.tool_id,
            params=dict(s.params),
            depends_on=tuple(s.depends_on),
        )
        for s in log.steps
    )
    nodes = mark_entity_bindings(nodes, log.query.text)
    return Trajectory(
        trajectory_id=log.trajectory_id or _hex_id("x", log.query.id, *(s.node_id for s in log.steps)),
        trigger=log.query,
        trigger_embedding=embed(log.query.text, cfg),
        nodes=nodes,
        pattern=infer_pattern(log.steps),
        context=dict(log.context),
        metadata=Metadata(outcome=log.outcome),
    )


_ROOT_CAUSE_RULES: tuple[tuple[RootCause, frozenset[str], tuple[str, ...]], ...] = (
    (RootCause.WRONG_PARAMETER, frozenset({"400", "422"}), ("param",)),
    (RootCause.INSUFFICIENT_PERMISSION, frozenset({"401", "403"}), ("permission", "denied")),
    (RootCause.TOOL_MISMATCH, frozenset({"404"}), ("no such tool", "not found")),
    (RootCause.MISSING_LOGIC, frozenset(), ("unimplemented", "missing step")),
)


def classify_root_cause(error: tuple[str, str]) -> RootCause:
    code, message = error
    code = str(code).strip()
    text = str(message).lower()
    for cause, codes, needles in _ROOT_CAUSE_RULES:
        if code in codes or any(n in text for n in needles):
            return cause
    return RootCause.OTHER


AVOIDANCE_PHRASES: dict[RootCause, str] = {
    RootCause.WRONG_PARAMETER: "tool {tool} rejected its arguments (code {code}); pass validated values to {tool}",
    RootCause.INSUFFICIENT_PERMISSION: "tool {tool} was refused access (code {code}); request a narrower scope from {tool}",
    RootCause.TOOL_MISMATCH: "tool {tool} is unavailable (code {code}); route this step to an equivalent tool",
    RootCause.MISSING_LOGIC: "tool {tool} lacks a prerequisite (code {code}); prepare inputs before calling {tool}",
    RootCause.OTHER: "tool {tool} failed (code {code}); do not repeat this call unchanged",
}


def avoidance_note(cause: RootCause, tool_id: str, code: str) -> str:
    return AVOIDANCE_PHRASES[cause].format(tool=tool_id, code=code)


def induce_parameter_schema(samples: Sequence[Mapping[str, ParamValue]]) -> ParameterSchema:
    if not samples:
        raise EmptySamples("need at least one params sample")
    first = samples[0]
    required = tuple(n for n in first if all(n in s for s in samples))
    seen: list[str] = []
    for s in samples:
        for n in s:
            if n not in seen:
                seen.append(n)
    optional = tuple(sorted(n for n in seen if n not in required))
    ranges: dict[str, tuple[float, float]] = {}
    formats: dict[str, str] = {}
    for name in seen:
        values = [s[name] for s in samples if name in s]
        if all(_is_number(v) for v in values):
            ranges[name] = (min(values), max(values))  # type: ignore[type-var]
        elif all(isinstance(v, str) for v in values):
            patterns = {generalize_pattern(v) for v in values}  # type: ignore[arg-type]
            if len(patterns) == 1:
                formats[name] = patterns.pop()
    return ParameterSchema(
        required_fields=required,
        format_constraints=formats,
        value_ranges=ranges,
        example_template={k: render_value(v) for k, v in first.items()},
        optional_fields=optional,
    )


def extract_node_experiences(
    success: Trajectory | None,
    failure: Trajectory | None,
    logs: Sequence[ExecutionLog] = (),
) -> list[NodeExperience]:
    """Failure lessons for every failed step, tool mappings for changed steps."""
    if success is None and failure is None:
        raise BothAbsent("need a successful or a failed trajectory")
    out: dict[str, NodeExperience] = {}
    failure_logs = list(logs)
    for log in failure_logs:
        key = intent_key(log.query.text)
        for step in log.errors:
            code, message = step.error  # type: ignore[misc]
            fp = ErrorFingerprint.of(step.tool_id, code, message)
            cause = classify_root_cause((code, message))
            eid = _hex_id("e", "F", key, fp.key)
            out[eid] = NodeExperience(
                experience_id=eid,
                intent_key=key,
                polarity=Outcome.FAILURE,
                root_cause=cause,
                fingerprint=fp,
                avoidance_note=avoidance_note(cause, step.tool_id, fp.error_code),
            )
    if success is not None:
        key = intent_key(success.trigger.text)
        for pos, node in enumerate(success.nodes):
            other = failure.nodes[pos] if failure is not None and pos < len(failure.nodes) else None
            if other is not None and other.tool_id == node.tool_id:
                continue
            eid = _hex_id("e", "S", key, str(pos), node.tool_id)
            out[eid] = NodeExperience(
                experience_id=eid,
                intent_key=key,
                polarity=Outcome.SUCCESS,
                best_tool=node.tool_id,
                schema=induce_parameter_schema([node.params]) if node.params else None,
                avoidance_note=f"step {pos} of {key} succeeds with tool {node.tool_id}",
            )
    return list(out.values())


def classify_experience(
    template: TrajectoryTemplate, store: ExperienceStore, theta_a: float = 0.9
) -> ReuseClass:
    triggers = [store.get_trajectory(m).trigger_embedding for m in template.member_ids]
    return classify_reuse(template.skeleton, triggers, theta_a)
