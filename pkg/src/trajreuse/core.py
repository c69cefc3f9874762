"""Shared domain types: trajectories, nodes, experiences, templates, ledgers.

Every type here is an immutable value object. Changes are made with
:func:`dataclasses.replace`. Each type round-trips through a plain dict
(``to_dict`` / ``from_dict``); :func:`dumps` turns that into one canonical
JSON line with alphabetical keys.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping, Union

from .kernels import fnv1a64

ParamValue = Union[str, int, float, bool]
Vector = tuple[float, ...]

SLOT_PREFIX = "{{slot:"
ROLLBACK_NOTE_KEY = "rollback_note"


class TrajReuseError(Exception):
    """Base class for every error raised by this package."""


class Tier(str, Enum):
    HIGH = "High"
    MEDIUM = "Medium"
    NOVEL = "Novel"


class Pattern(str, Enum):
    SEQUENTIAL = "Sequential"
    CONDITIONAL_BRANCH = "ConditionalBranch"
    PARALLEL = "Parallel"


class Outcome(str, Enum):
    SUCCESS = "Success"
    FAILURE = "Failure"


class RootCause(str, Enum):
    WRONG_PARAMETER = "WrongParameter"
    INSUFFICIENT_PERMISSION = "InsufficientPermission"
    TOOL_MISMATCH = "ToolMismatch"
    MISSING_LOGIC = "MissingLogic"
    OTHER = "Other"


class ReuseClass(str, Enum):
    DIRECT_REUSE = "DirectReuse"
    REWRITE_REUSE = "RewriteReuse"


class Violation(str, Enum):
    NODES_EMPTY = "NodesEmpty"
    DUPLICATE_NODE_ID = "DuplicateNodeId"
    DANGLING_DEPENDENCY = "DanglingDependency"
    FORWARD_DEPENDENCY = "ForwardDependency"
    SEQUENTIAL_CHAIN_BROKEN = "SequentialChainBroken"
    EMBEDDING_NOT_UNIT = "EmbeddingNotUnit"
    BAD_VERSION = "BadVersion"
    NEGATIVE_COUNTER = "NegativeCounter"
    EMBEDDING_DIMENSION = "EmbeddingDimension"


def slot_marker(name: str) -> str:
    return f"{SLOT_PREFIX}{name}}}}}"


def is_slot_marker(value: ParamValue) -> bool:
    return isinstance(value, str) and value.startswith(SLOT_PREFIX) and value.endswith("}}")


@dataclass(frozen=True)
class Query:
    text: str
    id: str
    # harness-only annotation; nothing in the engine reads it
    tier_hint: Tier | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValueError("query text must be non-empty after trimming")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "text": self.text,
            "tier_hint": self.tier_hint.value if self.tier_hint else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Query:
        tier = d.get("tier_hint")
        return cls(text=d["text"], id=d["id"], tier_hint=Tier(tier) if tier else None)


@dataclass(frozen=True)
class WorkflowNode:
    node_id: str
    tool_id: str
    params: dict[str, ParamValue] = field(default_factory=dict)
    is_variable: bool = False
    generated_by_model: bool = False
    experience_refs: tuple[str, ...] = ()
    depends_on: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "depends_on": list(self.depends_on),
            "experience_refs": list(self.experience_refs),
            "generated_by_model": self.generated_by_model,
            "is_variable": self.is_variable,
            "node_id": self.node_id,
            # pairs keep the declared parameter order through sort_keys
            "params": [[k, v] for k, v in self.params.items()],
            "tool_id": self.tool_id,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> WorkflowNode:
        return cls(
            node_id=d["node_id"],
            tool_id=d["tool_id"],
            params={k: v for k, v in d["params"]},
            is_variable=bool(d["is_variable"]),
            generated_by_model=bool(d["generated_by_model"]),
            experience_refs=tuple(d["experience_refs"]),
            depends_on=tuple(d["depends_on"]),
        )


@dataclass(frozen=True)
class Metadata:
    executed_at: int = 0
    outcome: Outcome = Outcome.SUCCESS
    version_id: int = 1
    compatibility_tags: tuple[str, ...] = ()
    usage_count: int = 0
    priority: int = 0

    def with_tag(self, tag: str) -> Metadata:
        if tag in self.compatibility_tags:
            return self
        return replace(self, compatibility_tags=self.compatibility_tags + (tag,))

    def to_dict(self) -> dict[str, Any]:
        return {
            "compatibility_tags": list(self.compatibility_tags),
            "executed_at": self.executed_at,
            "outcome": self.outcome.value,
            "priority": self.priority,
            "usage_count": self.usage_count,
            "version_id": self.version_id,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Metadata:
        return cls(
            executed_at=d["executed_at"],
            outcome=Outcome(d["outcome"]),
            version_id=d["version_id"],
            compatibility_tags=tuple(d["compatibility_tags"]),
            usage_count=d["usage_count"],
            priority=d["priority"],
        )


@dataclass(frozen=True)
class Trajectory:
    trajectory_id: str
    trigger: Query
    trigger_embedding: Vector
    nodes: tuple[WorkflowNode, ...]
    pattern: Pattern = Pattern.SEQUENTIAL
    context: dict[str, str] = field(default_factory=dict)
    metadata: Metadata = field(default_factory=Metadata)

    @property
    def outcome(self) -> Outcome:
        return self.metadata.outcome

    def node(self, node_id: str) -> WorkflowNode:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    def to_dict(self) -> dict[str, Any]:
        return {
            "context": dict(sorted(self.context.items())),
            "metadata": self.metadata.to_dict(),
            "nodes": [n.to_dict() for n in self.nodes],
            "pattern": self.pattern.value,
            "trajectory_id": self.trajectory_id,
            "trigger": self.trigger.to_dict(),
            "trigger_embedding": list(self.trigger_embedding),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Trajectory:
        return cls(
            trajectory_id=d["trajectory_id"],
            trigger=Query.from_dict(d["trigger"]),
            trigger_embedding=tuple(float(x) for x in d["trigger_embedding"]),
            nodes=tuple(WorkflowNode.from_dict(n) for n in d["nodes"]),
            pattern=Pattern(d["pattern"]),
            context=dict(d["context"]),
            metadata=Metadata.from_dict(d["metadata"]),
        )


_DIGITS = re.compile(r"\d+")
_SPACES = re.compile(r"\s+")


def normalize_message(message: str) -> str:
    """Lowercase, collapse whitespace, replace digit runs with ``#``."""
    text = _SPACES.sub(" ", message.lower()).strip()
    return _DIGITS.sub("#", text)


@dataclass(frozen=True)
class ErrorFingerprint:
    tool_id: str
    error_code: str
    message_digest: int

    @classmethod
    def of(cls, tool_id: str, error_code: str, message: str) -> ErrorFingerprint:
        digest = fnv1a64(normalize_message(message).encode("utf-8"))
        return cls(tool_id=tool_id, error_code=str(error_code).strip(), message_digest=digest)

    @property
    def key(self) -> str:
        return f"{self.tool_id}|{self.error_code}|{self.message_digest:016x}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "error_code": self.error_code,
            "message_digest": self.message_digest,
            "tool_id": self.tool_id,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ErrorFingerprint:
        return cls(d["tool_id"], d["error_code"], int(d["message_digest"]))


def generalize_pattern(value: str) -> str:
    """Digits become ``#``, letters become ``a``, everything else is kept."""
    return "".join("#" if ch.isdigit() else "a" if ch.isalpha() else ch for ch in value)


def render_value(value: ParamValue) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _is_number(value: ParamValue) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


@dataclass(frozen=True)
class ParameterSchema:
    required_fields: tuple[str, ...] = ()
    format_constraints: dict[str, str] = field(default_factory=dict)
    value_ranges: dict[str, tuple[float, float]] = field(default_factory=dict)
    example_template: dict[str, str] = field(default_factory=dict)
    optional_fields: tuple[str, ...] = ()

    @property
    def fields(self) -> tuple[str, ...]:
        return self.required_fields + tuple(
            f for f in self.optional_fields if f not in self.required_fields
        )

    def violations(self, params: Mapping[str, ParamValue]) -> list[tuple[str, str]]:
        """``(field, problem)`` pairs; empty when ``params`` conforms."""
        out = []
        for name in self.required_fields:
            if name not in params:
                out.append((name, "missing required param"))
        for name, pattern in self.format_constraints.items():
            value = params.get(name)
            if isinstance(value, str) and generalize_pattern(value) != pattern:
                out.append((name, f"param violates format {pattern}"))
        for name, (lo, hi) in self.value_ranges.items():
            value = params.get(name)
            if _is_number(value) and not lo <= value <= hi:  # type: ignore[operator]
                out.append((name, f"param out of range [{lo}, {hi}]"))
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "example_template": dict(sorted(self.example_template.items())),
            "format_constraints": dict(sorted(self.format_constraints.items())),
            "optional_fields": list(self.optional_fields),
            "required_fields": list(self.required_fields),
            "value_ranges": {k: list(v) for k, v in sorted(self.value_ranges.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ParameterSchema:
        return cls(
            required_fields=tuple(d.get("required_fields", ())),
            format_constraints=dict(d.get("format_constraints", {})),
            value_ranges={k: (v[0], v[1]) for k, v in d.get("value_ranges", {}).items()},
            example_template=dict(d.get("example_template", {})),
            optional_fields=tuple(d.get("optional_fields", ())),
        )


@dataclass(frozen=True)
class NodeExperience:
    experience_id: str
    intent_key: str
    polarity: Outcome
    root_cause: RootCause = RootCause.OTHER
    fingerprint: ErrorFingerprint | None = None
    best_tool: str | None = None
    schema: ParameterSchema | None = None
    avoidance_note: str = ""

    def __post_init__(self) -> None:
        if self.polarity is Outcome.FAILURE and self.fingerprint is None:
            raise ValueError("failure experience requires a fingerprint")
        if self.polarity is Outcome.SUCCESS and self.best_tool is None and self.schema is None:
            raise ValueError("success experience requires best_tool or schema")

    @property
    def tool_id(self) -> str | None:
        if self.fingerprint is not None:
            return self.fingerprint.tool_id
        return self.best_tool

    def to_dict(self) -> dict[str, Any]:
        return {
            "avoidance_note": self.avoidance_note,
            "best_tool": self.best_tool,
            "experience_id": self.experience_id,
            "fingerprint": self.fingerprint.to_dict() if self.fingerprint else None,
            "intent_key": self.intent_key,
            "polarity": self.polarity.value,
            "root_cause": self.root_cause.value,
            "schema": self.schema.to_dict() if self.schema else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> NodeExperience:
        return cls(
            experience_id=d["experience_id"],
            intent_key=d["intent_key"],
            polarity=Outcome(d["polarity"]),
            root_cause=RootCause(d["root_cause"]),
            fingerprint=ErrorFingerprint.from_dict(d["fingerprint"]) if d["fingerprint"] else None,
            best_tool=d["best_tool"],
            schema=ParameterSchema.from_dict(d["schema"]) if d["schema"] else None,
            avoidance_note=d["avoidance_note"],
        )


@dataclass(frozen=True)
class TrajectoryTemplate:
    template_id: str
    structural_hash: int
    skeleton: tuple[WorkflowNode, ...]
    member_ids: tuple[str, ...]
    trigger_centroid: Vector
    pattern: Pattern = Pattern.SEQUENTIAL
    reuse_class: ReuseClass = ReuseClass.REWRITE_REUSE
    priority: int = 0

    @property
    def variable_nodes(self) -> tuple[WorkflowNode, ...]:
        return tuple(n for n in self.skeleton if n.is_variable)

    def to_dict(self) -> dict[str, Any]:
        return {
            "member_ids": list(self.member_ids),
            "pattern": self.pattern.value,
            "priority": self.priority,
            "reuse_class": self.reuse_class.value,
            "skeleton": [n.to_dict() for n in self.skeleton],
            "structural_hash": self.structural_hash,
            "template_id": self.template_id,
            "trigger_centroid": list(self.trigger_centroid),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TrajectoryTemplate:
        return cls(
            template_id=d["template_id"],
            structural_hash=int(d["structural_hash"]),
            skeleton=tuple(WorkflowNode.from_dict(n) for n in d["skeleton"]),
            member_ids=tuple(d["member_ids"]),
            trigger_centroid=tuple(float(x) for x in d["trigger_centroid"]),
            pattern=Pattern(d["pattern"]),
            reuse_class=ReuseClass(d["reuse_class"]),
            priority=d["priority"],
        )


@dataclass(frozen=True)
class TokenLedger:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    generator_calls: int = 0

    def __add__(self, other: TokenLedger) -> TokenLedger:
        if not isinstance(other, TokenLedger):
            return NotImplemented
        return TokenLedger(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
            self.generator_calls + other.generator_calls,
        )

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def to_dict(self) -> dict[str, Any]:
        return {
            "completion_tokens": self.completion_tokens,
            "generator_calls": self.generator_calls,
            "prompt_tokens": self.prompt_tokens,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TokenLedger:
        return cls(d["prompt_tokens"], d["completion_tokens"], d["generator_calls"])


ZERO_LEDGER = TokenLedger()


def dumps(obj: Any) -> str:
    """Canonical single-line JSON for any value object in this package."""
    payload = obj.to_dict() if hasattr(obj, "to_dict") else obj
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


# -- structural hash ---------------------------------------------------------


def _encode_value(value: ParamValue) -> bytes:
    # type-tagged and length-prefixed so distinct values never serialize alike
    if isinstance(value, bool):
        body = b"b" + (b"1" if value else b"0")
    elif isinstance(value, int):
        body = b"i" + str(value).encode()
    elif isinstance(value, float):
        body = b"f" + struct.pack(">d", value)
    else:
        body = b"s" + str(value).encode("utf-8")
    return struct.pack(">I", len(body)) + body


def _encode_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack(">I", len(raw)) + raw


def structural_bytes(nodes: tuple[WorkflowNode, ...] | list[WorkflowNode], pattern: Pattern) -> bytes:
    """The exact byte string hashed by :func:`structural_hash`.

    Included: pattern, and per node in order its tool_id, variability flag,
    dependency positions, and (fixed nodes only) sorted param names and values.
    Excluded: node ids, trigger, context, metadata, experience refs,
    generated_by_model, and every param of a variable node.
    """
    position = {n.node_id: i for i, n in enumerate(nodes)}
    out = bytearray(_encode_str(pattern.value))
    out += struct.pack(">I", len(nodes))
    for node in nodes:
        out += _encode_str(node.tool_id)
        out += b"V" if node.is_variable else b"F"
        deps = sorted(position.get(d, -1) for d in node.depends_on)
        out += struct.pack(">I", len(deps))
        for d in deps:
            out += struct.pack(">i", d)
        if node.is_variable:
            out += struct.pack(">I", 0)
            continue
        names = sorted(node.params)
        out += struct.pack(">I", len(names))
        for name in names:
            out += _encode_str(name) + _encode_value(node.params[name])
    return bytes(out)


def structural_hash(trajectory: Trajectory) -> int:
    return fnv1a64(structural_bytes(trajectory.nodes, trajectory.pattern))


def template_id_for(hash_value: int) -> str:
    return f"{hash_value:016x}"


# -- validation --------------------------------------------------------------


def validate(trajectory: Trajectory) -> list[Violation]:
    """Every violated invariant of ``trajectory``; empty when valid."""
    found: list[Violation] = []

    def flag(v: Violation) -> None:
        if v not in found:
            found.append(v)

    nodes = trajectory.nodes
    if not nodes:
        flag(Violation.NODES_EMPTY)
    seen: dict[str, int] = {}
    all_ids = {n.node_id for n in nodes}
    for i, node in enumerate(nodes):
        if node.node_id in seen:
            flag(Violation.DUPLICATE_NODE_ID)
        for dep in node.depends_on:
            if dep not in all_ids:
                flag(Violation.DANGLING_DEPENDENCY)
            elif dep not in seen:
                # later or self reference; with ordered nodes this is also what makes a cycle
                flag(Violation.FORWARD_DEPENDENCY)
        seen[node.node_id] = i
    if trajectory.pattern is Pattern.SEQUENTIAL and nodes:
        if nodes[0].depends_on:
            flag(Violation.SEQUENTIAL_CHAIN_BROKEN)
        for prev, node in zip(nodes, nodes[1:]):
            if tuple(node.depends_on) != (prev.node_id,):
                flag(Violation.SEQUENTIAL_CHAIN_BROKEN)
    vec = trajectory.trigger_embedding
    ss = 0.0
    for x in vec:
        ss += x * x
    if ss != 0.0 and abs(ss**0.5 - 1.0) > 1e-9:
        flag(Violation.EMBEDDING_NOT_UNIT)
    meta = trajectory.metadata
    if meta.version_id < 1:
        flag(Violation.BAD_VERSION)
    if meta.usage_count < 0 or meta.priority < 0:
        flag(Violation.NEGATIVE_COUNTER)
    return found
