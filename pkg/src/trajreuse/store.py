"""Experience repository: trajectories, node experiences, and templates.

Retrieval is an exact cosine scan over trigger embeddings (desk scale, at most
about 10^4 trajectories). Writers append one JSON line per revision to the
store directory; :meth:`ExperienceStore.save` compacts the files into their
canonical form.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
from array import array
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Union

from . import kernels
from .core import (
    ErrorFingerprint,
    NodeExperience,
    Outcome,
    ReuseClass,
    TrajReuseError,
    Trajectory,
    TrajectoryTemplate,
    Violation,
    Vector,
    WorkflowNode,
    dumps,
    slot_marker,
    structural_hash,
    template_id_for,
    validate,
)
from .embedding import DEFAULT_DIMENSION, normalize

SCHEMA_VERSION = 1
TRAJECTORIES_FILE = "trajectories.jsonl"
EXPERIENCES_FILE = "experiences.jsonl"
TEMPLATES_FILE = "templates.jsonl"
MANIFEST_FILE = "manifest.json"

MERGED_TAG_PREFIX = "merged:"


class InvalidTrajectory(TrajReuseError, ValueError):
    def __init__(self, violations):
        super().__init__(f"invalid trajectory: {[v.value for v in violations]}")
        self.violations = list(violations)


class StorageFailure(TrajReuseError):
    pass


class EmptyStore(TrajReuseError):
    pass


class UnknownTemplate(TrajReuseError, KeyError):
    pass


class UnknownTrajectory(TrajReuseError, KeyError):
    pass


class RWLock:
    """Many readers or one writer. Writers are preferred once waiting."""

    def __init__(self) -> None:
        self._cond = threading.Condition(threading.Lock())
        self._readers = 0
        self._writer = False
        self._waiting_writers = 0

    @contextmanager
    def read(self) -> Iterator[None]:
        with self._cond:
            while self._writer or self._waiting_writers:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if self._readers == 0:
                    self._cond.notify_all()

    @contextmanager
    def write(self) -> Iterator[None]:
        with self._cond:
            self._waiting_writers += 1
            while self._writer or self._readers:
                self._cond.wait()
            self._waiting_writers -= 1
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()


@dataclass(frozen=True)
class MergeGroup:
    canonical_id: str
    member_ids: tuple[str, ...]


@dataclass(frozen=True)
class MergeReport:
    groups: tuple[MergeGroup, ...]

    def to_dict(self) -> dict:
        return {"groups": [{"canonical_id": g.canonical_id, "member_ids": list(g.member_ids)} for g in self.groups]}


def classify_reuse(
    skeleton: tuple[WorkflowNode, ...], member_triggers: list[Vector], theta_a: float
) -> ReuseClass:
    """DirectReuse iff no variable node and every member pair is above ``theta_a``."""
    if any(n.is_variable for n in skeleton):
        return ReuseClass.REWRITE_REUSE
    lowest = 1.0
    for i in range(len(member_triggers)):
        for j in range(i + 1, len(member_triggers)):
            lowest = min(lowest, kernels.cosine(member_triggers[i], member_triggers[j]))
    return ReuseClass.DIRECT_REUSE if lowest >= theta_a else ReuseClass.REWRITE_REUSE


def build_template(
    members: list[Trajectory], theta_a: float = 0.9, priority: int = 0
) -> TrajectoryTemplate:
    """Merge structurally identical trajectories into one template."""
    if not members:
        raise ValueError("template needs at least one member")
    members = sorted(members, key=lambda t: t.trajectory_id)
    h = structural_hash(members[0])
    canonical = max(members, key=lambda t: (t.metadata.executed_at, t.trajectory_id))
    skeleton = []
    for pos, node in enumerate(canonical.nodes):
        diverges = any(m.nodes[pos].params != node.params for m in members)
        if node.is_variable or diverges:
            node = replace(
                node,
                is_variable=True,
                params={name: slot_marker(name) for name in node.params},
            )
        skeleton.append(node)
    skeleton_t = tuple(skeleton)
    dim = len(canonical.trigger_embedding)
    acc = [0.0] * dim
    for m in members:
        for i, v in enumerate(m.trigger_embedding):
            acc[i] += v
    return TrajectoryTemplate(
        template_id=template_id_for(h),
        structural_hash=h,
        skeleton=skeleton_t,
        member_ids=tuple(m.trajectory_id for m in members),
        trigger_centroid=normalize(acc),
        pattern=canonical.pattern,
        reuse_class=classify_reuse(skeleton_t, [m.trigger_embedding for m in members], theta_a),
        priority=max(priority, sum(m.metadata.usage_count for m in members)),
    )


ExperienceKey = Union[ErrorFingerprint, str]


class ExperienceStore:
    """Repository with key-value and vector retrieval and update management.

    All public methods are atomic with respect to each other: readers run
    concurrently, writers run alone.
    """

    def __init__(
        self,
        path: str | os.PathLike | None = None,
        dimension: int = DEFAULT_DIMENSION,
        direct_reuse_threshold: float = 0.9,
    ) -> None:
        self.path = Path(path) if path is not None else None
        self.dimension = dimension
        self.direct_reuse_threshold = direct_reuse_threshold
        self._lock = RWLock()
        self._trajectories: dict[str, Trajectory] = {}
        self._experiences: dict[str, NodeExperience] = {}
        self._by_fingerprint: dict[str, list[str]] = {}
        self._by_intent: dict[str, list[str]] = {}
        self._by_tool: dict[str, list[str]] = {}
        self._templates: dict[str, TrajectoryTemplate] = {}
        self._template_of: dict[str, str] = {}
        self._clock = 0
        self._matrix: array | None = None
        self._matrix_ids: list[str] = []

    # -- lifecycle --------------------------------------------------------

    @classmethod
    def init(cls, path: str | os.PathLike, dimension: int = DEFAULT_DIMENSION) -> ExperienceStore:
        store = cls(path, dimension)
        store.path.mkdir(parents=True, exist_ok=True)
        if (store.path / MANIFEST_FILE).exists() or any(
            (store.path / f).exists() and (store.path / f).stat().st_size
            for f in (TRAJECTORIES_FILE, EXPERIENCES_FILE, TEMPLATES_FILE)
        ):
            raise StorageFailure(f"store already exists at {store.path}")
        store.save()
        return store

    @classmethod
    def load(cls, path: str | os.PathLike, dimension: int | None = None) -> ExperienceStore:
        root = Path(path)
        try:
            manifest = json.loads((root / MANIFEST_FILE).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise StorageFailure(f"cannot read manifest in {root}: {exc}") from exc
        if manifest.get("schema_version") != SCHEMA_VERSION:
            raise StorageFailure(f"unsupported schema_version {manifest.get('schema_version')}")
        dim = manifest["embedding_dimension"]
        if dimension is not None and dimension != dim:
            raise StorageFailure(f"embedding dimension mismatch: store {dim}, expected {dimension}")
        store = cls(root, dim)
        for line in _read_lines(root / TRAJECTORIES_FILE):
            t = Trajectory.from_dict(json.loads(line))
            if len(t.trigger_embedding) != dim:
                raise StorageFailure(f"trajectory {t.trajectory_id} has wrong embedding dimension")
            store._trajectories[t.trajectory_id] = t
            store._clock = max(store._clock, t.metadata.executed_at)
        for line in _read_lines(root / EXPERIENCES_FILE):
            store._index_experience(NodeExperience.from_dict(json.loads(line)))
        for line in _read_lines(root / TEMPLATES_FILE):
            tpl = TrajectoryTemplate.from_dict(json.loads(line))
            store._templates[tpl.template_id] = tpl
            for mid in tpl.member_ids:
                store._template_of[mid] = tpl.template_id
        return store

    def serialize(self) -> dict[str, str]:
        """Canonical file contents keyed by file name."""
        with self._lock.read():
            return self._serialize()

    def _serialize(self) -> dict[str, str]:
        def jsonl(items) -> str:
            return "".join(dumps(i) + "\n" for i in items)

        manifest = json.dumps(
            {"embedding_dimension": self.dimension, "schema_version": SCHEMA_VERSION},
            sort_keys=True,
        )
        return {
            MANIFEST_FILE: manifest + "\n",
            TRAJECTORIES_FILE: jsonl(self._trajectories.values()),
            EXPERIENCES_FILE: jsonl(self._experiences.values()),
            TEMPLATES_FILE: jsonl(self._templates.values()),
        }

    def save(self) -> None:
        """Write canonical files atomically (compacts the append journals)."""
        if self.path is None:
            return
        with self._lock.read():
            files = self._serialize()
        self.path.mkdir(parents=True, exist_ok=True)
        for name, content in files.items():
            _atomic_write(self.path / name, content)

    def _append(self, name: str, line: str) -> None:
        if self.path is None:
            return
        try:
            with open(self.path / name, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
        except OSError as exc:
            raise StorageFailure(str(exc)) from exc

    def _write_templates(self) -> None:
        if self.path is None:
            return
        content = "".join(dumps(t) + "\n" for t in self._templates.values())
        _atomic_write(self.path / TEMPLATES_FILE, content)

    # -- trajectories -----------------------------------------------------

    def put_trajectory(self, t: Trajectory) -> str:
        violations = validate(t)
        if len(t.trigger_embedding) != self.dimension:
            raise InvalidTrajectory([*violations, Violation.EMBEDDING_DIMENSION])
        if violations:
            raise InvalidTrajectory(violations)
        with self._lock.write():
            prev = self._trajectories.get(t.trajectory_id)
            meta = t.metadata
            version = prev.metadata.version_id + 1 if prev else 1
            if meta.executed_at <= 0:
                self._clock += 1
                executed_at = self._clock
            else:
                executed_at = meta.executed_at
                self._clock = max(self._clock, executed_at)
            t = replace(t, metadata=replace(meta, version_id=version, executed_at=executed_at))
            self._append(TRAJECTORIES_FILE, dumps(t))
            self._trajectories[t.trajectory_id] = t
            self._matrix = None
            return t.trajectory_id

    def get_trajectory(self, trajectory_id: str) -> Trajectory:
        with self._lock.read():
            try:
                return self._trajectories[trajectory_id]
            except KeyError:
                raise UnknownTrajectory(trajectory_id) from None

    def has_trajectory(self, trajectory_id: str) -> bool:
        with self._lock.read():
            return trajectory_id in self._trajectories

    def trajectories(self) -> list[Trajectory]:
        with self._lock.read():
            return list(self._trajectories.values())

    def __len__(self) -> int:
        return len(self._trajectories)

    def _priority_of(self, t: Trajectory) -> int:
        tid = self._template_of.get(t.trajectory_id)
        if tid is not None and tid in self._templates:
            return max(self._templates[tid].priority, t.metadata.priority)
        return t.metadata.priority

    def find_nearest(self, q: Vector, k: int) -> list[tuple[str, float]]:
        """Top ``k`` trajectories by trigger cosine, exact scan.

        Ties go to higher priority, then more recent ``executed_at``, then the
        lexicographically smaller id.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        with self._lock.read():
            scored = self._score_all(q)
            if not scored:
                raise EmptyStore("no trajectories stored")
            return scored[:k]

    def _score_all(self, q: Vector) -> list[tuple[str, float]]:
        if not self._trajectories:
            return []
        if len(q) != self.dimension:
            raise ValueError(f"query dimension {len(q)} != store dimension {self.dimension}")
        if self._matrix is None:
            flat = array("d")
            ids = []
            for tid, t in self._trajectories.items():
                flat.extend(t.trigger_embedding)
                ids.append(tid)
            self._matrix = flat
            self._matrix_ids = ids
        scores = kernels.scan_cosine(q, self._matrix, self.dimension)
        trajs = self._trajectories
        rows = [
            (
                -s,
                -self._priority_of(trajs[tid]),
                -trajs[tid].metadata.executed_at,
                tid,
                s,
            )
            for tid, s in zip(self._matrix_ids, scores)
        ]
        rows.sort()
        return [(r[3], r[4]) for r in rows]

    def ranked(self, q: Vector) -> list[tuple[Trajectory, float]]:
        """Every stored trajectory with its score, in ``find_nearest`` order."""
        with self._lock.read():
            return [(self._trajectories[tid], s) for tid, s in self._score_all(q)]

    # -- experiences ------------------------------------------------------

    def _index_experience(self, e: NodeExperience) -> None:
        old = self._experiences.pop(e.experience_id, None)
        if old is not None:
            self._unindex(old)
        self._experiences[e.experience_id] = e
        if e.fingerprint is not None:
            self._by_fingerprint.setdefault(e.fingerprint.key, []).append(e.experience_id)
        self._by_intent.setdefault(e.intent_key, []).append(e.experience_id)
        if e.tool_id is not None:
            self._by_tool.setdefault(e.tool_id, []).append(e.experience_id)

    def _unindex(self, e: NodeExperience) -> None:
        for index, key in (
            (self._by_fingerprint, e.fingerprint.key if e.fingerprint else None),
            (self._by_intent, e.intent_key),
            (self._by_tool, e.tool_id),
        ):
            if key is None:
                continue
            ids = index.get(key, [])
            if e.experience_id in ids:
                ids.remove(e.experience_id)
            if not ids:
                index.pop(key, None)

    def put_experience(self, e: NodeExperience) -> str:
        """Insert or replace; a replaced experience becomes the most recent."""
        with self._lock.write():
            self._append(EXPERIENCES_FILE, dumps(e))
            self._index_experience(e)
            return e.experience_id

    def get_experience(self, experience_id: str) -> NodeExperience:
        with self._lock.read():
            return self._experiences[experience_id]

    def experiences(self) -> list[NodeExperience]:
        with self._lock.read():
            return list(self._experiences.values())

    def lookup_experiences(self, key: ExperienceKey) -> list[NodeExperience]:
        """Exact match by fingerprint or intent key; failures first, then oldest first."""
        with self._lock.read():
            if isinstance(key, ErrorFingerprint):
                ids = self._by_fingerprint.get(key.key, [])
            else:
                ids = self._by_intent.get(key, [])
            return self._order([self._experiences[i] for i in ids])

    def experiences_for_tool(self, tool_id: str) -> list[NodeExperience]:
        with self._lock.read():
            return self._order([self._experiences[i] for i in self._by_tool.get(tool_id, [])])

    def recent_failures(self, limit: int) -> list[NodeExperience]:
        """Most recent Failure experiences across all intents, newest first."""
        with self._lock.read():
            out = []
            for e in reversed(list(self._experiences.values())):
                if e.polarity is Outcome.FAILURE:
                    out.append(e)
                    if len(out) == limit:
                        break
            return out

    def _order(self, items: list[NodeExperience]) -> list[NodeExperience]:
        seq = {eid: i for i, eid in enumerate(self._experiences)}
        items.sort(key=lambda e: (e.polarity is not Outcome.FAILURE, seq[e.experience_id]))
        return items

    # -- update management ------------------------------------------------

    def merge_similar(self, similarity_floor: float) -> MergeReport:
        """Group same-structure Success trajectories with similar triggers.

        Grouping is the transitive closure of the pairwise predicate. The most
        recent member is canonical; the others are tagged and their usage
        moves to the canonical trajectory.
        """
        if not 0.0 < similarity_floor <= 1.0:
            raise ValueError("similarity_floor must be in (0, 1]")
        with self._lock.write():
            by_hash: dict[int, list[Trajectory]] = {}
            for t in self._trajectories.values():
                if t.metadata.outcome is Outcome.SUCCESS:
                    by_hash.setdefault(structural_hash(t), []).append(t)
            groups: list[MergeGroup] = []
            for h in sorted(by_hash):
                items = sorted(by_hash[h], key=lambda t: t.trajectory_id)
                parent = list(range(len(items)))

                def find(i: int) -> int:
                    while parent[i] != i:
                        parent[i] = parent[parent[i]]
                        i = parent[i]
                    return i

                for i in range(len(items)):
                    for j in range(i + 1, len(items)):
                        s = kernels.cosine(items[i].trigger_embedding, items[j].trigger_embedding)
                        if s >= similarity_floor:
                            parent[find(i)] = find(j)
                clusters: dict[int, list[Trajectory]] = {}
                for i, t in enumerate(items):
                    clusters.setdefault(find(i), []).append(t)
                for members in clusters.values():
                    if len(members) < 2:
                        continue
                    canonical = max(members, key=lambda t: (t.metadata.executed_at, t.trajectory_id))
                    moved = 0
                    for t in members:
                        if t is canonical:
                            continue
                        moved += t.metadata.usage_count
                        meta = t.metadata.with_tag(MERGED_TAG_PREFIX + canonical.trajectory_id)
                        meta = replace(meta, usage_count=0)
                        if meta != t.metadata:
                            self._revise(replace(t, metadata=meta))
                    if moved:
                        cm = canonical.metadata
                        self._revise(replace(canonical, metadata=replace(cm, usage_count=cm.usage_count + moved)))
                    groups.append(
                        MergeGroup(
                            canonical_id=canonical.trajectory_id,
                            member_ids=tuple(sorted(t.trajectory_id for t in members)),
                        )
                    )
            groups.sort(key=lambda g: g.canonical_id)
            return MergeReport(tuple(groups))

    def _revise(self, t: Trajectory) -> Trajectory:
        prev = self._trajectories[t.trajectory_id]
        t = replace(t, metadata=replace(t.metadata, version_id=prev.metadata.version_id + 1))
        self._append(TRAJECTORIES_FILE, dumps(t))
        self._trajectories[t.trajectory_id] = t
        return t

    def update_trajectory(self, t: Trajectory) -> Trajectory:
        """Store a revision of an existing trajectory; returns the stored value."""
        with self._lock.write():
            if t.trajectory_id not in self._trajectories:
                raise UnknownTrajectory(t.trajectory_id)
            revised = self._revise(t)
            self._matrix = None
            return revised

    def cluster_templates(self) -> list[TrajectoryTemplate]:
        """Rebuild one template per structural hash over Success trajectories."""
        with self._lock.write():
            by_hash: dict[int, list[Trajectory]] = {}
            for t in self._trajectories.values():
                if t.metadata.outcome is Outcome.SUCCESS:
                    by_hash.setdefault(structural_hash(t), []).append(t)
            templates: dict[str, TrajectoryTemplate] = {}
            template_of: dict[str, str] = {}
            for h in sorted(by_hash):
                tid = template_id_for(h)
                old = self._templates.get(tid)
                tpl = build_template(
                    by_hash[h], self.direct_reuse_threshold, old.priority if old else 0
                )
                templates[tid] = tpl
                for mid in tpl.member_ids:
                    template_of[mid] = tid
            changed = templates != self._templates
            self._templates = templates
            self._template_of = template_of
            if changed:
                self._write_templates()
            return list(templates.values())

    def templates(self) -> list[TrajectoryTemplate]:
        with self._lock.read():
            return list(self._templates.values())

    def get_template(self, template_id: str) -> TrajectoryTemplate:
        with self._lock.read():
            try:
                return self._templates[template_id]
            except KeyError:
                raise UnknownTemplate(template_id) from None

    def template_of(self, trajectory_id: str) -> TrajectoryTemplate | None:
        with self._lock.read():
            tid = self._template_of.get(trajectory_id)
            return self._templates.get(tid) if tid else None

    def boost_priority(self, template_id: str) -> int:
        """Raise a template's priority to the summed usage of its members."""
        with self._lock.write():
            tpl = self._templates.get(template_id)
            if tpl is None:
                raise UnknownTemplate(template_id)
            usage = sum(
                self._trajectories[m].metadata.usage_count
                for m in tpl.member_ids
                if m in self._trajectories
            )
            new = max(tpl.priority, usage)
            if new != tpl.priority:
                self._templates[template_id] = replace(tpl, priority=new)
                self._write_templates()
            return new

    def check_consistency(self) -> list[str]:
        """Index problems, if any. Empty when every index hit resolves."""
        problems = []
        with self._lock.read():
            for index_name, index in (
                ("fingerprint", self._by_fingerprint),
                ("intent", self._by_intent),
                ("tool", self._by_tool),
            ):
                for key, ids in index.items():
                    for eid in ids:
                        if eid not in self._experiences:
                            problems.append(f"{index_name}:{key} -> missing {eid}")
            for t in self._trajectories.values():
                for n in t.nodes:
                    for ref in n.experience_refs:
                        if ref not in self._experiences:
                            problems.append(f"{t.trajectory_id}/{n.node_id} -> missing {ref}")
            for tpl in self._templates.values():
                for mid in tpl.member_ids:
                    if mid not in self._trajectories:
                        problems.append(f"template {tpl.template_id} -> missing {mid}")
        return problems


def _read_lines(path: Path) -> list[str]:
    if not path.exists():
        return []
    with open(path, encoding="utf-8") as fh:
        return [line for line in fh.read().splitlines() if line.strip()]


def _atomic_write(path: Path, content: str) -> None:
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except OSError as exc:
        raise StorageFailure(str(exc)) from exc
