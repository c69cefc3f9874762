"""Tool registry and a deterministic simulated execution environment.

Tools are declarative: a named builtin behavior plus arguments, never
arbitrary code. Fault profiles make tools fail on declared triggers so that
failure trajectories can be produced on demand.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from .core import (
    Outcome,
    ParameterSchema,
    ParamValue,
    RootCause,
    TrajReuseError,
    Trajectory,
    _is_number,
    render_value,
)
from .extraction import CONDITION_PARAM, ExecutionLog, StepRecord, classify_root_cause
from .kernels import fnv1a64

BUILTIN_BEHAVIORS = ("echo", "concat", "sum", "lookup_table")

FAULT_CODES: dict[RootCause, str] = {
    RootCause.WRONG_PARAMETER: "422",
    RootCause.INSUFFICIENT_PERMISSION: "403",
    RootCause.TOOL_MISMATCH: "404",
    RootCause.MISSING_LOGIC: "501",
}

FAULT_MESSAGES: dict[RootCause, str] = {
    RootCause.WRONG_PARAMETER: "invalid param value rejected by upstream api",
    RootCause.INSUFFICIENT_PERMISSION: "permission denied for requested scope",
    RootCause.TOOL_MISMATCH: "no such tool: endpoint has been retired",
    RootCause.MISSING_LOGIC: "unimplemented: missing step before this call",
}


class DuplicateTool(TrajReuseError, ValueError):
    pass


class UnknownTool(TrajReuseError, KeyError):
    def __init__(self, ref: str):
        super().__init__(ref)
        self.ref = ref


class TriggerKind(str, Enum):
    FIELD_EQUALS = "field_equals"
    FIELD_MISSING = "field_missing"
    FIRST_N_CALLS = "first_n_calls"
    ALWAYS = "always"


@dataclass(frozen=True)
class FaultTrigger:
    kind: TriggerKind
    field: str | None = None
    value: ParamValue | None = None
    n: int | None = None

    def matches(self, params: Mapping[str, ParamValue], call_number: int) -> bool:
        if self.kind is TriggerKind.ALWAYS:
            return True
        if self.kind is TriggerKind.FIELD_EQUALS:
            return self.field in params and params[self.field] == self.value
        if self.kind is TriggerKind.FIELD_MISSING:
            return self.field not in params
        return call_number <= (self.n or 0)

    def to_dict(self) -> dict[str, Any]:
        return {"field": self.field, "kind": self.kind.value, "n": self.n, "value": self.value}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> FaultTrigger:
        return cls(TriggerKind(d["kind"]), d.get("field"), d.get("value"), d.get("n"))


@dataclass(frozen=True)
class FaultProfile:
    mode: RootCause
    trigger: FaultTrigger
    error_code: str = ""
    message: str = ""

    def __post_init__(self) -> None:
        if self.mode not in FAULT_CODES:
            raise ValueError(f"fault mode must be one of {[m.value for m in FAULT_CODES]}")
        if not self.error_code:
            object.__setattr__(self, "error_code", FAULT_CODES[self.mode])
        if not self.message:
            object.__setattr__(self, "message", FAULT_MESSAGES[self.mode])
        if self.error_code != FAULT_CODES[self.mode]:
            raise ValueError(f"{self.mode.value} faults use code {FAULT_CODES[self.mode]}")
        if classify_root_cause((self.error_code, self.message)) is not self.mode:
            raise ValueError(f"message {self.message!r} does not classify as {self.mode.value}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "error_code": self.error_code,
            "message": self.message,
            "mode": self.mode.value,
            "trigger": self.trigger.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> FaultProfile:
        return cls(
            mode=RootCause(d["mode"]),
            trigger=FaultTrigger.from_dict(d["trigger"]),
            error_code=d.get("error_code", ""),
            message=d.get("message", ""),
        )


@dataclass(frozen=True)
class ToolSpec:
    tool_id: str
    param_schema: ParameterSchema = field(default_factory=ParameterSchema)
    behavior: str = "echo"
    args: dict[str, Any] = field(default_factory=dict)
    description: str = ""
    fault_profile: FaultProfile | None = None

    def __post_init__(self) -> None:
        if self.behavior.split(":", 1)[0] not in BUILTIN_BEHAVIORS:
            raise ValueError(f"unknown behavior {self.behavior!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "args": self.args,
            "behavior": self.behavior,
            "description": self.description,
            "fault_profile": self.fault_profile.to_dict() if self.fault_profile else None,
            "param_schema": self.param_schema.to_dict(),
            "tool_id": self.tool_id,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ToolSpec:
        fp = d.get("fault_profile")
        return cls(
            tool_id=d["tool_id"],
            param_schema=ParameterSchema.from_dict(d.get("param_schema", {})),
            behavior=d.get("behavior", "echo"),
            args=dict(d.get("args", {})),
            description=d.get("description", ""),
            fault_profile=FaultProfile.from_dict(fp) if fp else None,
        )


class ToolRegistry:
    """Registered tools plus their live fault state.

    Call counters for threshold faults live here, so one registry serves one
    execution at a time; use :meth:`clone` for concurrent runs.
    """

    def __init__(self, base_dir: str | os.PathLike | None = None) -> None:
        self.base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
        self._tools: dict[str, ToolSpec] = {}
        self._faults: dict[str, FaultProfile] = {}
        self._calls: dict[str, int] = {}
        self._tables: dict[str, dict[str, Any]] = {}

    def register_tool(self, spec: ToolSpec) -> None:
        if spec.tool_id in self._tools:
            raise DuplicateTool(spec.tool_id)
        self._tools[spec.tool_id] = spec
        if spec.fault_profile is not None:
            self._faults[spec.tool_id] = spec.fault_profile

    def __contains__(self, tool_id: object) -> bool:
        return tool_id in self._tools

    def __len__(self) -> int:
        return len(self._tools)

    def get(self, tool_id: str) -> ToolSpec:
        try:
            return self._tools[tool_id]
        except KeyError:
            raise UnknownTool(tool_id) from None

    def list_tools(self) -> list[ToolSpec]:
        return list(self._tools.values())

    def inject_fault(self, tool_id: str, profile: FaultProfile) -> None:
        if tool_id not in self._tools:
            raise UnknownTool(tool_id)
        self._faults[tool_id] = profile
        # call-count triggers count from the moment of injection
        self._calls[tool_id] = 0

    def clear_fault(self, tool_id: str) -> None:
        if tool_id not in self._tools:
            raise UnknownTool(tool_id)
        self._faults.pop(tool_id, None)
        self._calls[tool_id] = 0

    def active_fault(self, tool_id: str) -> FaultProfile | None:
        return self._faults.get(tool_id)

    def clone(self) -> ToolRegistry:
        other = ToolRegistry(self.base_dir)
        other._tools = dict(self._tools)
        other._faults = dict(self._faults)
        other._calls = dict(self._calls)
        other._tables = copy.deepcopy(self._tables)
        return other

    def _table(self, rel: str) -> dict[str, Any]:
        if rel not in self._tables:
            path = Path(rel)
            if not path.is_absolute():
                path = self.base_dir / path
            self._tables[rel] = json.loads(path.read_text(encoding="utf-8"))
        return self._tables[rel]

    def call(
        self, tool_id: str, params: Mapping[str, ParamValue], upstream: list[str]
    ) -> tuple[str | None, tuple[str, str] | None]:
        """Run one tool call; returns ``(output, None)`` or ``(None, (code, message))``."""
        spec = self.get(tool_id)
        self._calls[tool_id] = self._calls.get(tool_id, 0) + 1
        fault = self._faults.get(tool_id)
        if fault is not None and fault.trigger.matches(params, self._calls[tool_id]):
            return None, (fault.error_code, fault.message)
        problems = spec.param_schema.violations(params)
        if problems:
            name, problem = problems[0]
            code = "400" if problem.startswith("missing") else "422"
            return None, (code, f"{problem}: {name}")
        return self._behave(spec, params, upstream), None

    def _behave(self, spec: ToolSpec, params: Mapping[str, ParamValue], upstream: list[str]) -> str:
        kind, _, arg = spec.behavior.partition(":")
        rendered = ",".join(f"{k}={render_value(v)}" for k, v in params.items())
        if kind == "echo":
            return f"{spec.tool_id}({rendered})"
        if kind == "concat":
            sep = spec.args.get("sep", "|")
            return sep.join(list(upstream) + ([rendered] if rendered else []))
        if kind == "sum":
            total = 0.0
            for v in list(params.values()) + list(upstream):
                if _is_number(v):
                    total += v  # type: ignore[operator]
                else:
                    try:
                        total += float(v)  # type: ignore[arg-type]
                    except ValueError:
                        pass
            return repr(total)
        table = self._table(arg)
        key = params.get(spec.args.get("key", "key"))
        return str(table.get(render_value(key), "none")) if key is not None else "none"

    # -- persistence ------------------------------------------------------

    def to_json(self) -> str:
        specs = []
        for spec in self._tools.values():
            d = spec.to_dict()
            fault = self._faults.get(spec.tool_id)
            d["fault_profile"] = fault.to_dict() if fault else None
            specs.append(d)
        return json.dumps(specs, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str, base_dir: str | os.PathLike | None = None) -> ToolRegistry:
        reg = cls(base_dir)
        for d in json.loads(text):
            reg.register_tool(ToolSpec.from_dict(d))
        return reg

    @classmethod
    def load(cls, path: str | os.PathLike) -> ToolRegistry:
        path = Path(path)
        return cls.from_json(path.read_text(encoding="utf-8"), path.parent)


def register_tool(registry: ToolRegistry, spec: ToolSpec) -> None:
    registry.register_tool(spec)


def inject_fault(registry: ToolRegistry, tool_id: str, profile: FaultProfile) -> None:
    registry.inject_fault(tool_id, profile)


def clear_fault(registry: ToolRegistry, tool_id: str) -> None:
    registry.clear_fault(tool_id)


def _duration(seed: int, trajectory_id: str, node_id: str) -> int:
    return fnv1a64(f"{seed}:{trajectory_id}:{node_id}".encode()) % 4 + 1


def execute_trajectory(trajectory: Trajectory, registry: ToolRegistry, seed: int = 0) -> ExecutionLog:
    """Run nodes in order; a failure halts everything downstream of it."""
    for node in trajectory.nodes:
        if node.tool_id not in registry:
            raise UnknownTool(node.node_id)
    outputs: dict[str, str] = {}
    blocked: set[str] = set()
    skipped: dict[str, str] = {}
    steps: list[StepRecord] = []
    for node in trajectory.nodes:
        if any(d in blocked for d in node.depends_on):
            blocked.add(node.node_id)
            continue
        params = dict(node.params)
        condition = params.pop(CONDITION_PARAM, None)
        inherited = next((skipped[d] for d in node.depends_on if d in skipped), None)
        reason = inherited
        if reason is None and condition is not None:
            dep, _, needle = str(condition).partition("~")
            if needle not in outputs.get(dep, ""):
                reason = str(condition)
        duration = _duration(seed, trajectory.trajectory_id, node.node_id)
        if reason is not None:
            skipped[node.node_id] = reason
            steps.append(
                StepRecord(
                    node_id=node.node_id,
                    tool_id=node.tool_id,
                    params=dict(node.params),
                    depends_on=node.depends_on,
                    skipped_by=reason,
                )
            )
            continue
        upstream = [outputs[d] for d in node.depends_on if d in outputs]
        output, error = registry.call(node.tool_id, params, upstream)
        steps.append(
            StepRecord(
                node_id=node.node_id,
                tool_id=node.tool_id,
                params=dict(node.params),
                output=output,
                error=error,
                duration_units=duration,
                depends_on=node.depends_on,
            )
        )
        if error is not None:
            blocked.add(node.node_id)
        else:
            outputs[node.node_id] = output  # type: ignore[assignment]
    outcome = Outcome.FAILURE if any(s.error for s in steps) else Outcome.SUCCESS
    return ExecutionLog(
        query=trajectory.trigger,
        steps=tuple(steps),
        outcome=outcome,
        context=dict(trajectory.context),
        trajectory_id=trajectory.trajectory_id,
    )


class Environment:
    """A registry plus a seed: the thing trajectories are executed against."""

    def __init__(self, registry: ToolRegistry, seed: int = 0) -> None:
        self.registry = registry
        self.seed = seed

    def execute(self, trajectory: Trajectory) -> ExecutionLog:
        return execute_trajectory(trajectory, self.registry, self.seed)
