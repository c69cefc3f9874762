"""Query embeddings and cosine similarity."""

from __future__ import annotations

import json
import re
import urllib.error
import urllib.request
from dataclasses import dataclass
from enum import Enum

from . import kernels
from .core import TrajReuseError, Vector

DEFAULT_DIMENSION = 256

_TOKEN = re.compile(r"[^\W_]+")


class EmptyText(TrajReuseError, ValueError):
    pass


class RemoteUnavailable(TrajReuseError):
    pass


class DimensionMismatch(TrajReuseError, ValueError):
    pass


class Provider(str, Enum):
    DETERMINISTIC_HASH = "DeterministicHash"
    REMOTE = "Remote"


@dataclass(frozen=True)
class EmbeddingConfig:
    dimension: int = DEFAULT_DIMENSION
    provider: Provider = Provider.DETERMINISTIC_HASH
    remote_endpoint: str | None = None
    timeout: float = 10.0

    def __post_init__(self) -> None:
        if self.dimension < 8:
            raise ValueError("embedding dimension must be >= 8")
        if self.provider is Provider.REMOTE and not self.remote_endpoint:
            raise ValueError("remote provider needs remote_endpoint")


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric runs; whitespace and punctuation separate."""
    return _TOKEN.findall(text.lower())


def embed(text: str, cfg: EmbeddingConfig | None = None) -> Vector:
    cfg = cfg or EmbeddingConfig()
    if not text or not text.strip():
        raise EmptyText("cannot embed empty text")
    if cfg.provider is Provider.REMOTE:
        return _embed_remote(text, cfg)
    return kernels.hash_embed(tokenize(text), cfg.dimension)


def _embed_remote(text: str, cfg: EmbeddingConfig) -> Vector:
    body = json.dumps({"text": text}).encode("utf-8")
    req = urllib.request.Request(
        cfg.remote_endpoint,  # type: ignore[arg-type]
        data=body,
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(req, timeout=cfg.timeout) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
    except (urllib.error.URLError, OSError, ValueError) as exc:
        raise RemoteUnavailable(str(exc)) from exc
    values = payload.get("values") if isinstance(payload, dict) else None
    if not isinstance(values, list) or len(values) != cfg.dimension:
        raise RemoteUnavailable("remote embedding has wrong shape")
    vec = tuple(float(v) for v in values)
    norm = sum(v * v for v in vec) ** 0.5
    if norm == 0.0:
        return vec
    return tuple(v / norm for v in vec)


def cosine_similarity(a: Vector, b: Vector) -> float:
    if len(a) != len(b):
        raise DimensionMismatch(f"{len(a)} != {len(b)}")
    return kernels.cosine(a, b)


def normalize(values: list[float] | tuple[float, ...]) -> Vector:
    ss = 0.0
    for v in values:
        ss += v * v
    if ss == 0.0:
        return tuple(0.0 for _ in values)
    norm = ss**0.5
    return tuple(v / norm for v in values)
