"""Workflow reuse engine: store executed tool-call trajectories, route new
queries to direct reuse, variable-node rewriting, or fresh planning, and learn
node-level lessons from failures."""

from __future__ import annotations

from .core import (
    ErrorFingerprint,
    Metadata,
    NodeExperience,
    Outcome,
    ParameterSchema,
    Pattern,
    Query,
    RootCause,
    Tier,
    TokenLedger,
    Trajectory,
    TrajectoryTemplate,
    WorkflowNode,
    structural_hash,
    validate,
)
from .embedding import EmbeddingConfig, cosine_similarity, embed
from .execution import Environment, FaultProfile, FaultTrigger, ToolRegistry, ToolSpec, execute_trajectory
from .generation import MockBackend, RemoteHTTPBackend, count_tokens, iterative_generate
from .kernels import BACKEND
from .routing import Route, RouteDecision, RoutingConfig, execute_with_fallback, record_feedback, route
from .store import ExperienceStore

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "EmbeddingConfig",
    "Environment",
    "ErrorFingerprint",
    "ExperienceStore",
    "FaultProfile",
    "FaultTrigger",
    "Metadata",
    "MockBackend",
    "NodeExperience",
    "Outcome",
    "ParameterSchema",
    "Pattern",
    "Query",
    "RemoteHTTPBackend",
    "RootCause",
    "Route",
    "RouteDecision",
    "RoutingConfig",
    "Tier",
    "TokenLedger",
    "ToolRegistry",
    "ToolSpec",
    "Trajectory",
    "TrajectoryTemplate",
    "WorkflowNode",
    "cosine_similarity",
    "count_tokens",
    "embed",
    "execute_trajectory",
    "execute_with_fallback",
    "iterative_generate",
    "record_feedback",
    "route",
    "structural_hash",
    "validate",
]
