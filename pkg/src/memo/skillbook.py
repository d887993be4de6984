"""The skillbook: an append-only, snapshot-isolated vector store.

Entries carry an :class:`~memo.embedding.EmbeddingKey` and one of three
payloads: free-text guidance, global (task-invariant) guidance, or a skill
template.  Retrieval is an exact brute-force weighted-cosine scan — the
store holds hundreds of entries, not millions.

Persistence is a JSON-Lines file: one header line, then ``entry`` and
``tombstone`` records.  Records are never rewritten; deactivation is a
tombstone.  Every published mutation batch bumps the generation by exactly
one, and readers always observe a complete generation (the in-memory
snapshot is swapped atomically).
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import dsl
from .embedding import EmbeddingKey

SCHEMA_VERSION = 1


class SkillbookError(Exception):
    pass


class DimensionMismatchError(SkillbookError):
    pass


class UnknownEntryError(SkillbookError):
    pass


class SkillbookFormatError(SkillbookError):
    def __init__(self, message: str, line: int):
        super().__init__(f"{message} (line {line})")
        self.line = line


# ---------------------------------------------------------------------------
# Entries


@dataclass(frozen=True)
class Guidance:
    text: str
    type = "guidance"


@dataclass(frozen=True)
class GlobalGuidance:
    text: str
    type = "global"


@dataclass(frozen=True)
class TemplateEntry:
    template: dsl.Template
    type = "template"


Payload = Union[Guidance, GlobalGuidance, TemplateEntry]


@dataclass(frozen=True)
class Provenance:
    task_name: str
    source: str  # "human" | "success" | "clustering"
    iteration: int = 0
    note: str = ""


@dataclass(frozen=True)
class SkillbookEntry:
    id: int
    key: EmbeddingKey
    payload: Payload
    provenance: Provenance
    created_at: int
    active: bool = True
    gen: int = 0  # generation of the batch that inserted this entry


@dataclass(frozen=True)
class RetrievalQuery:
    q_act: tuple
    q_obj: tuple
    q_scene: Optional[tuple]
    raw_action: str
    raw_objects: tuple

    @classmethod
    def from_key(cls, key: EmbeddingKey) -> "RetrievalQuery":
        return cls(key.v_act, key.v_obj, key.v_scene, key.action_text, key.object_texts)


@dataclass(frozen=True)
class RetrievalResult:
    ranked: tuple  # of (entry_id, score), sorted desc, ties by ascending id
    globals: tuple  # active global entry ids, most recent first
    generation: int


# ---------------------------------------------------------------------------
# Serialization


def _payload_to_json(p: Payload) -> dict:
    if isinstance(p, TemplateEntry):
        return {"type": "template", "template": dsl.template_to_json(p.template)}
    return {"type": p.type, "text": p.text}


def _payload_from_json(d: dict) -> Payload:
    t = d["type"]
    if t == "guidance":
        return Guidance(d["text"])
    if t == "global":
        return GlobalGuidance(d["text"])
    if t == "template":
        return TemplateEntry(dsl.template_from_json(d["template"]))
    raise ValueError(f"unknown payload type {t!r}")


def _entry_to_json(e: SkillbookEntry) -> dict:
    k = e.key
    return {
        "kind": "entry",
        "gen": e.gen,
        "id": e.id,
        "action_text": k.action_text,
        "object_texts": list(k.object_texts),
        "is_global": k.is_global,
        "v_act": list(k.v_act),
        "v_obj": list(k.v_obj),
        "v_scene": None if k.v_scene is None else list(k.v_scene),
        "payload": _payload_to_json(e.payload),
        "provenance": {
            "task_name": e.provenance.task_name,
            "source": e.provenance.source,
            "iteration": e.provenance.iteration,
            "note": e.provenance.note,
        },
        "created_at": e.created_at,
    }


def _entry_from_json(d: dict) -> SkillbookEntry:
    key = EmbeddingKey(
        v_act=tuple(d["v_act"]),
        v_obj=tuple(d["v_obj"]),
        v_scene=None if d["v_scene"] is None else tuple(d["v_scene"]),
        action_text=d["action_text"],
        object_texts=tuple(d["object_texts"]),
        is_global=d["is_global"],
    )
    prov = d["provenance"]
    return SkillbookEntry(
        id=d["id"],
        key=key,
        payload=_payload_from_json(d["payload"]),
        provenance=Provenance(
            prov["task_name"], prov["source"], prov.get("iteration", 0), prov.get("note", "")
        ),
        created_at=d["created_at"],
        active=True,
        gen=d.get("gen", 0),
    )


# ---------------------------------------------------------------------------
# Immutable snapshot


class SkillbookView:
    """A read-only view of one generation; unaffected by later mutations."""

    def __init__(self, generation: int, entries: tuple, dim: int):
        self.generation = generation
        self._entries = entries  # sorted by id
        self._by_id = {e.id: e for e in entries}
        self.dim = dim

        scored = [
            e for e in entries if e.active and not e.key.is_global
        ]
        self._scored = scored
        n = len(scored)
        self._ids = np.array([e.id for e in scored], dtype=np.int64)
        self._act = np.zeros((n, dim))
        self._obj = np.zeros((n, dim))
        self._scene = np.zeros((n, dim))
        self._has_scene = np.zeros(n, dtype=bool)
        for i, e in enumerate(scored):
            self._act[i] = e.key.v_act
            self._obj[i] = e.key.v_obj
            if e.key.v_scene is not None:
                self._scene[i] = e.key.v_scene
                self._has_scene[i] = True
        self._globals = tuple(
            e.id for e in sorted(entries, key=lambda e: -e.id) if e.active and e.key.is_global
        )

    def entries(self, active: Optional[bool] = None) -> list:
        if active is None:
            return list(self._entries)
        return [e for e in self._entries if e.active == active]

    def get(self, entry_id: int) -> SkillbookEntry:
        try:
            return self._by_id[entry_id]
        except KeyError:
            raise UnknownEntryError(f"no entry with id {entry_id}") from None

    def __contains__(self, entry_id: int) -> bool:
        return entry_id in self._by_id

    def retrieve(
        self,
        query: RetrievalQuery,
        lambda_act: float = 1.0,
        lambda_obj: float = 1.0,
        lambda_scene: float = 0.0,
        k: int = 4,
        theta_min: float = 0.35,
        max_globals: int = 8,
    ) -> RetrievalResult:
        """Exact top-k weighted-cosine scan over active non-global entries.

        Per-entry score is ``(l1*cos_act + l2*cos_obj [+ l3*cos_scene]) /
        (l1 + l2 [+ l3])``; the scene term drops out of both numerator and
        denominator when either side lacks a scene vector.  Active global
        entries are returned separately, unscored, most recent first.
        """
        if lambda_act <= 0 or lambda_obj <= 0:
            raise ValueError("lambda_act and lambda_obj must be positive")
        if lambda_scene < 0:
            raise ValueError("lambda_scene must be non-negative")
        if k < 1:
            raise ValueError("k must be at least 1")

        ranked: tuple = ()
        if len(self._scored) > 0:
            q_act = np.asarray(query.q_act)
            q_obj = np.asarray(query.q_obj)
            base = lambda_act * (self._act @ q_act) + lambda_obj * (self._obj @ q_obj)
            denom = np.full(len(self._scored), lambda_act + lambda_obj)
            if query.q_scene is not None and lambda_scene > 0:
                q_scene = np.asarray(query.q_scene)
                scene_sim = self._scene @ q_scene
                base = base + np.where(self._has_scene, lambda_scene * scene_sim, 0.0)
                denom = denom + np.where(self._has_scene, lambda_scene, 0.0)
            scores = base / denom
            order = sorted(range(len(scores)), key=lambda i: (-scores[i], self._ids[i]))
            picked = []
            for i in order:
                if scores[i] < theta_min:
                    break
                picked.append((int(self._ids[i]), float(scores[i])))
                if len(picked) == k:
                    break
            ranked = tuple(picked)
        return RetrievalResult(
            ranked=ranked,
            globals=self._globals[:max_globals],
            generation=self.generation,
        )

    def stats(self) -> dict:
        counts = {
            "guidance_active": 0,
            "guidance_inactive": 0,
            "global_active": 0,
            "global_inactive": 0,
            "template_active": 0,
            "template_inactive": 0,
        }
        chars = 0
        for e in self._entries:
            suffix = "active" if e.active else "inactive"
            counts[f"{e.payload.type}_{suffix}"] += 1
            if e.active and isinstance(e.payload, (Guidance, GlobalGuidance)):
                chars += len(e.payload.text)
        counts["active_guidance_entries"] = (
            counts["guidance_active"] + counts["global_active"]
        )
        counts["active_guidance_chars"] = chars
        counts["generation"] = self.generation
        return counts


# ---------------------------------------------------------------------------
# The mutable store


class Skillbook:
    """Single-writer, many-reader store.  When ``path`` is given, every
    published batch is durably appended to the JSONL file."""

    def __init__(self, dim: int, embedder_id: str, path=None):
        self.dim = dim
        self.embedder_id = embedder_id
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._entries: dict = {}
        self._tombstone_gens: dict = {}  # entry id -> generation of its tombstone
        self._next_id = 1
        self._generation = 0
        self._view = SkillbookView(0, (), dim)
        if self.path is not None and not self.path.exists():
            self._write_header()

    # -- construction ------------------------------------------------------

    @classmethod
    def load(cls, path, expected_embedder_id: Optional[str] = None) -> "Skillbook":
        path = Path(path)
        raw = path.read_bytes().decode("utf-8")
        if raw == "":
            raise SkillbookFormatError("missing header line", 1)
        if not raw.endswith("\n"):
            truncated_line = raw.count("\n") + 1
            raise SkillbookFormatError("truncated record (no trailing newline)", truncated_line)
        lines = raw.split("\n")[:-1]

        def fail(msg, line_no):
            raise SkillbookFormatError(msg, line_no)

        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError:
            fail("unreadable header", 1)
        for field_name in ("schema_version", "embedding_dimension", "embedder_id"):
            if field_name not in header:
                fail(f"header missing {field_name!r}", 1)
        if header["schema_version"] != SCHEMA_VERSION:
            raise SkillbookError(
                f"unsupported schema_version {header['schema_version']} "
                f"(expected {SCHEMA_VERSION})"
            )
        if (
            expected_embedder_id is not None
            and header["embedder_id"] != expected_embedder_id
        ):
            raise SkillbookError(
                f"embedder mismatch: file was written with {header['embedder_id']!r}, "
                f"expected {expected_embedder_id!r}"
            )

        book = cls(header["embedding_dimension"], header["embedder_id"])
        max_gen = 0
        for line_no, line in enumerate(lines[1:], start=2):
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                fail("corrupt record", line_no)
            kind = rec.get("kind")
            if kind == "entry":
                try:
                    entry = _entry_from_json(rec)
                except (KeyError, ValueError, TypeError):
                    fail("malformed entry record", line_no)
                if entry.id in book._entries:
                    fail(f"duplicate entry id {entry.id}", line_no)
                if len(entry.key.v_act) != book.dim:
                    fail("entry dimension does not match header", line_no)
                book._entries[entry.id] = entry
                book._next_id = max(book._next_id, entry.id + 1)
            elif kind == "tombstone":
                eid = rec.get("id")
                if eid not in book._entries:
                    fail(f"tombstone for unknown entry id {eid}", line_no)
                book._entries[eid] = replace(book._entries[eid], active=False)
                book._tombstone_gens[eid] = rec.get("gen", 0)
            else:
                fail(f"unknown record kind {kind!r}", line_no)
            max_gen = max(max_gen, rec.get("gen", 0))
        book._generation = max_gen
        book.path = path
        book._rebuild_view()
        return book

    def persist(self, path) -> None:
        """Write the full store (entries, tombstones, generation) to a new
        file.  ``load(persist(...))`` reproduces the store exactly."""
        path = Path(path)
        with path.open("w", encoding="utf-8") as f:
            f.write(json.dumps(self._header()) + "\n")
            for e in sorted(self._entries.values(), key=lambda e: e.id):
                f.write(json.dumps(_entry_to_json(e)) + "\n")
            for e in sorted(self._entries.values(), key=lambda e: e.id):
                if not e.active:
                    gen = self._tombstone_gens.get(e.id, self._generation)
                    f.write(json.dumps({"kind": "tombstone", "gen": gen, "id": e.id}) + "\n")
            f.flush()
            os.fsync(f.fileno())

    # -- internal plumbing -------------------------------------------------

    def _header(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "embedding_dimension": self.dim,
            "embedder_id": self.embedder_id,
        }

    def _write_header(self):
        with self.path.open("w", encoding="utf-8") as f:
            f.write(json.dumps(self._header()) + "\n")
            f.flush()
            os.fsync(f.fileno())

    def _append_records(self, records: list) -> None:
        if self.path is None:
            return
        with self.path.open("a", encoding="utf-8") as f:
            for rec in records:
                f.write(json.dumps(rec) + "\n")
            f.flush()
            os.fsync(f.fileno())

    def _rebuild_view(self):
        entries = tuple(sorted(self._entries.values(), key=lambda e: e.id))
        # Atomic publish: readers holding the old view keep a full generation.
        self._view = SkillbookView(self._generation, entries, self.dim)

    # -- mutations ---------------------------------------------------------

    def insert(self, key: EmbeddingKey, payload: Payload, provenance: Provenance) -> int:
        """Insert one entry as its own mutation batch; returns the new id."""
        ids = self.apply_batch(inserts=[(key, payload, provenance)])
        return ids[0]

    def deactivate(self, ids: Sequence[int]) -> int:
        """Tombstone the given entries; returns how many were deactivated."""
        self.apply_batch(deactivate_ids=list(ids))
        return len(ids)

    def apply_batch(
        self,
        inserts: Sequence[tuple] = (),
        deactivate_ids: Sequence[int] = (),
    ) -> list:
        """Publish inserts and deactivations as one atomic generation bump.

        Validates everything before mutating; any error leaves the store
        untouched.  Returns the new entry ids in insert order.
        """
        with self._lock:
            for key, payload, _prov in inserts:
                if len(key.v_act) != self.dim:
                    raise DimensionMismatchError(
                        f"key dimension {len(key.v_act)} != store dimension {self.dim}"
                    )
                if isinstance(payload, TemplateEntry) and key.is_global:
                    raise SkillbookError("template entries must not use the global key")
                if isinstance(payload, (Guidance, GlobalGuidance)) and not payload.text:
                    raise SkillbookError("guidance payload text must be non-empty")
            for eid in deactivate_ids:
                if eid not in self._entries:
                    raise UnknownEntryError(f"no entry with id {eid}")
            if not inserts and not deactivate_ids:
                return []

            gen = self._generation + 1
            new_ids = []
            records = []
            staged = dict(self._entries)
            staged_tombs = dict(self._tombstone_gens)
            next_id = self._next_id
            for key, payload, prov in inserts:
                entry = SkillbookEntry(
                    id=next_id,
                    key=key,
                    payload=payload,
                    provenance=prov,
                    created_at=next_id,
                    gen=gen,
                )
                staged[next_id] = entry
                records.append(_entry_to_json(entry))
                new_ids.append(next_id)
                next_id += 1
            for eid in deactivate_ids:
                staged[eid] = replace(staged[eid], active=False)
                staged_tombs[eid] = gen
                records.append({"kind": "tombstone", "gen": gen, "id": eid})

            self._append_records(records)
            self._entries = staged
            self._tombstone_gens = staged_tombs
            self._next_id = next_id
            self._generation = gen
            self._rebuild_view()
            return new_ids

    # -- reads -------------------------------------------------------------

    @property
    def generation(self) -> int:
        return self._view.generation

    def snapshot(self) -> SkillbookView:
        return self._view

    def retrieve(self, query: RetrievalQuery, **kwargs) -> RetrievalResult:
        return self._view.retrieve(query, **kwargs)

    def stats(self) -> dict:
        return self._view.stats()

    def entries(self, active: Optional[bool] = None) -> list:
        return self._view.entries(active)

    def get(self, entry_id: int) -> SkillbookEntry:
        return self._view.get(entry_id)

    def find_active_duplicate(self, key: EmbeddingKey, payload: Payload) -> Optional[int]:
        """Id of an active entry with identical key vectors and payload."""
        for e in self._view.entries(active=True):
            if (
                e.key.v_act == key.v_act
                and e.key.v_obj == key.v_obj
                and e.key.v_scene == key.v_scene
                and e.key.is_global == key.is_global
                and e.payload == payload
            ):
                return e.id
        return None


def retrieve_with_config(book, query: RetrievalQuery, config) -> RetrievalResult:
    """Retrieve using the weights/thresholds from a :class:`MemoConfig`."""
    return book.retrieve(
        query,
        lambda_act=config.lambda_act,
        lambda_obj=config.lambda_obj,
        lambda_scene=config.lambda_scene,
        k=config.top_k,
        theta_min=config.theta_min,
        max_globals=config.max_globals,
    )
