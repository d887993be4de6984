"""Offline skillbook refinement: group, compress, prune, publish.

Entries whose keys score above a similarity threshold against a greedy
seed (highest unclustered id first, which makes the grouping
deterministic) form a cluster.  Each cluster is condensed by the model,
conditioned on any related skill templates; members that contradict a
template are pruned.  The refined entries replace the raw ones in one
atomic generation bump — raw entries are tombstoned, never deleted.

The compression contract is enforced mechanically: never more entries and
never more characters than the originals.  A model that violates it gets
one retry with an explicit size budget, then an identity fallback.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import dsl
from .config import MemoConfig
from .embedding import EmbeddingKey
from .modelclient import ModelError, ModelRequest
from .prompts import load_prompt
from .skillbook import (
    GlobalGuidance,
    Guidance,
    Provenance,
    RetrievalQuery,
    Skillbook,
    SkillbookView,
    TemplateEntry,
)


@dataclass
class Cluster:
    centroid_key: EmbeddingKey
    member_ids: tuple
    members: tuple  # guidance texts, aligned with member_ids
    conditioning_templates: tuple  # of (entry_id, Template)
    is_global: bool = False


@dataclass
class CompressionResult:
    new_texts: tuple
    pruned_ids: tuple
    rationale: str
    fallback: bool = False

    @property
    def identity(self) -> bool:
        return not self.pruned_ids and not self.rationale and not self.fallback


def _pair_score(a: EmbeddingKey, b: EmbeddingKey, config: MemoConfig) -> float:
    import numpy as np

    l1, l2 = config.lambda_act, config.lambda_obj
    return (
        l1 * float(np.dot(a.act, b.act)) + l2 * float(np.dot(a.obj, b.obj))
    ) / (l1 + l2)


def form_clusters(
    snapshot: SkillbookView,
    theta_c: float,
    config: Optional[MemoConfig] = None,
) -> list:
    """Greedy agglomerative grouping of active guidance entries.

    Seeds with the highest-id unclustered entry and absorbs every entry
    whose key scores at least ``theta_c`` against the seed under the
    retrieval formula.  Every active non-global guidance entry lands in
    exactly one cluster; active global entries form one dedicated cluster
    with no conditioning templates.
    """
    config = config or MemoConfig()
    guidance = [
        e
        for e in snapshot.entries(active=True)
        if isinstance(e.payload, Guidance) and not e.key.is_global
    ]
    templates = [
        e for e in snapshot.entries(active=True) if isinstance(e.payload, TemplateEntry)
    ]
    clusters = []
    remaining = sorted(guidance, key=lambda e: -e.id)
    while remaining:
        seed = remaining[0]
        # the seed always belongs to its own cluster, even when theta_c
        # exceeds the maximum attainable score
        members = [
            e
            for e in remaining
            if e.id == seed.id or _pair_score(e.key, seed.key, config) >= theta_c
        ]
        member_set = {e.id for e in members}
        remaining = [e for e in remaining if e.id not in member_set]
        conditioning = tuple(
            (t.id, t.payload.template)
            for t in templates
            if _pair_score(t.key, seed.key, config) >= theta_c
        )
        members = sorted(members, key=lambda e: e.id)
        clusters.append(
            Cluster(
                centroid_key=seed.key,
                member_ids=tuple(e.id for e in members),
                members=tuple(e.payload.text for e in members),
                conditioning_templates=conditioning,
            )
        )
    globals_ = [
        e
        for e in snapshot.entries(active=True)
        if isinstance(e.payload, GlobalGuidance) and e.key.is_global
    ]
    if globals_:
        globals_ = sorted(globals_, key=lambda e: e.id)
        clusters.append(
            Cluster(
                centroid_key=globals_[0].key,
                member_ids=tuple(e.id for e in globals_),
                members=tuple(e.payload.text for e in globals_),
                conditioning_templates=(),
                is_global=True,
            )
        )
    return clusters


def _identity(cluster: Cluster, fallback: bool) -> CompressionResult:
    return CompressionResult(tuple(cluster.members), (), "", fallback=fallback)


def _validate(cluster: Cluster, data) -> Optional[CompressionResult]:
    if not isinstance(data, dict):
        return None
    texts = data.get("new_texts")
    pruned = data.get("pruned_ids", [])
    if not isinstance(texts, list) or not all(isinstance(t, str) and t for t in texts):
        return None
    if not isinstance(pruned, list) or not all(isinstance(i, int) for i in pruned):
        return None
    if any(i not in cluster.member_ids for i in pruned):
        return None
    if len(texts) > len(cluster.members):
        return None
    if sum(len(t) for t in texts) > sum(len(t) for t in cluster.members):
        return None
    return CompressionResult(tuple(texts), tuple(pruned), str(data.get("rationale", "")))


def compress_cluster(cluster: Cluster, model) -> CompressionResult:
    """Condense one cluster via the model, conditioned on its templates.

    Contract violations get one retry carrying an explicit size budget;
    a second violation (or an unavailable model) yields the identity
    result, which keeps the skillbook valid under adversarial output.
    """
    if not cluster.members:
        raise ValueError("cannot compress an empty cluster")
    prompt = load_prompt("compress")
    payload = {
        "entries": [
            {"id": i, "text": t} for i, t in zip(cluster.member_ids, cluster.members)
        ],
        "templates": [dsl.render_template(t) for _id, t in cluster.conditioning_templates],
    }
    base = [("system", prompt), ("user", json.dumps(payload, sort_keys=True))]
    messages = list(base)
    for round_no in range(2):
        try:
            resp = model.complete(ModelRequest("compress", tuple(messages)))
        except ModelError:
            return _identity(cluster, fallback=True)
        try:
            data = json.loads(resp.text)
        except json.JSONDecodeError:
            data = None
        result = _validate(cluster, data)
        if result is not None:
            return result
        if round_no == 0:
            budget_chars = sum(len(t) for t in cluster.members)
            messages = list(base) + [
                (
                    "user",
                    "Invalid answer. Respond with JSON {new_texts, pruned_ids, rationale}; "
                    f"at most {len(cluster.members)} entries and {budget_chars} total "
                    "characters; pruned_ids must be ids from the cluster.",
                )
            ]
    return _identity(cluster, fallback=True)


@dataclass
class ClusterReport:
    clusters: int
    sizes: list
    pruned: list
    char_before: int
    char_after: int
    entries_before: int
    entries_after: int
    generation: int

    def to_dict(self) -> dict:
        return {
            "clusters": self.clusters,
            "sizes": self.sizes,
            "pruned": self.pruned,
            "char_before": self.char_before,
            "char_after": self.char_after,
            "entries_before": self.entries_before,
            "entries_after": self.entries_after,
            "generation": self.generation,
        }


_job_lock = threading.Lock()


def run_offline(
    book: Skillbook,
    model,
    config: Optional[MemoConfig] = None,
    theta_c: Optional[float] = None,
) -> ClusterReport:
    """One offline refinement pass over a stable snapshot.

    Per cluster: insert the compressed guidance keyed by the cluster
    centroid, tombstone all members and pruned entries, and publish
    everything as a single atomic generation bump.  Identity results leave
    their cluster untouched, which makes an immediate re-run a no-op.
    Template entries are never modified.
    """
    config = config or MemoConfig()
    theta_c = config.theta_cluster if theta_c is None else theta_c
    if not _job_lock.acquire(blocking=False):
        raise RuntimeError("a clustering job is already running")
    try:
        snapshot = book.snapshot()
        stats_before = snapshot.stats()
        clusters = form_clusters(snapshot, theta_c, config)
        inserts = []
        deactivate = []
        sizes = []
        pruned_all = []
        for cluster in clusters:
            sizes.append(len(cluster.member_ids))
            result = compress_cluster(cluster, model)
            if result.new_texts == cluster.members and not result.pruned_ids:
                continue  # identity: keep the originals in place
            payload_cls = GlobalGuidance if cluster.is_global else Guidance
            for text in result.new_texts:
                inserts.append(
                    (
                        cluster.centroid_key,
                        payload_cls(text),
                        Provenance("", "clustering", 0, result.rationale[:200]),
                    )
                )
            deactivate.extend(cluster.member_ids)
            pruned_all.extend(result.pruned_ids)
        if inserts or deactivate:
            book.apply_batch(inserts=inserts, deactivate_ids=sorted(set(deactivate)))
        stats_after = book.stats()
        return ClusterReport(
            clusters=len(clusters),
            sizes=sizes,
            pruned=sorted(set(pruned_all)),
            char_before=stats_before["active_guidance_chars"],
            char_after=stats_after["active_guidance_chars"],
            entries_before=stats_before["active_guidance_entries"],
            entries_after=stats_after["active_guidance_entries"],
            generation=book.generation,
        )
    finally:
        _job_lock.release()
