"""Greedy clustering, the compression contract, and offline refinement."""

import json

import pytest

from memo.cluster import (
    Cluster,
    compress_cluster,
    form_clusters,
    run_offline,
)
from memo.config import MemoConfig
from memo.embedding import embed_key, global_key
from memo.modelclient import ScriptRule, ScriptedModel
from memo.skillbook import GlobalGuidance, Guidance, Provenance, Skillbook


def guidance_book(embedder, items, path=None):
    book = Skillbook(embedder.dim, embedder.embedder_id, path)
    for action, objects, text in items:
        book.insert(
            embed_key(embedder, action, tuple(objects)), Guidance(text), Provenance("t", "human")
        )
    return book


def pairwise_oracle(entries, theta, config):
    """Exhaustive greedy grouping in plain python, mirroring the spec rule."""
    from memo.cluster import _pair_score

    remaining = sorted(entries, key=lambda e: -e.id)
    groups = []
    while remaining:
        seed = remaining[0]
        grp = [e for e in remaining if _pair_score(e.key, seed.key, config) >= theta]
        ids = {e.id for e in grp}
        remaining = [e for e in remaining if e.id not in ids]
        groups.append(tuple(sorted(e.id for e in grp)))
    return groups


def test_three_entry_example_splits_door_from_pour(embedder):
    book = guidance_book(
        embedder,
        [
            ("open", ["toaster door"], "rotate it open"),
            ("open", ["fridge door"], "pull it open"),
            ("pour", ["can"], "tilt it"),
        ],
    )
    clusters = form_clusters(book.snapshot(), theta_c=0.6)
    groups = sorted(c.member_ids for c in clusters)
    assert groups == [(1, 2), (3,)]
    oracle = pairwise_oracle(book.entries(), 0.6, MemoConfig())
    assert sorted(tuple(g) for g in oracle) == groups


def test_every_entry_in_exactly_one_cluster(embedder):
    items = [
        (f"act{i % 5}", [f"obj{i % 3}", f"thing{i % 4}"], f"text {i}") for i in range(40)
    ]
    book = guidance_book(embedder, items)
    for theta in (0.3, 0.6, 0.8):
        clusters = form_clusters(book.snapshot(), theta)
        seen = [i for c in clusters for i in c.member_ids]
        assert sorted(seen) == [e.id for e in book.entries()]
        assert sorted(tuple(c.member_ids) for c in clusters) == sorted(
            tuple(g) for g in pairwise_oracle(book.entries(), theta, MemoConfig())
        )


def test_single_entry_is_a_singleton_cluster(embedder):
    book = guidance_book(embedder, [("open", ["door"], "x")])
    clusters = form_clusters(book.snapshot(), 0.8)
    assert len(clusters) == 1
    assert clusters[0].member_ids == (1,)


def test_threshold_above_one_gives_all_singletons(embedder):
    book = guidance_book(
        embedder, [("open", ["door"], "a"), ("open", ["door"], "b"), ("open", ["door"], "c")]
    )
    clusters = form_clusters(book.snapshot(), 1.0 + 1e-9)
    assert sorted(c.member_ids for c in clusters) == [(1,), (2,), (3,)]


def test_globals_form_one_dedicated_cluster(embedder):
    book = guidance_book(embedder, [("open", ["door"], "local")])
    book.insert(global_key(book.dim), GlobalGuidance("g1"), Provenance("t", "human"))
    book.insert(global_key(book.dim), GlobalGuidance("g2"), Provenance("t", "human"))
    clusters = form_clusters(book.snapshot(), 0.8)
    globals_ = [c for c in clusters if c.is_global]
    assert len(globals_) == 1
    assert globals_[0].member_ids == (2, 3)
    assert globals_[0].conditioning_templates == ()


def test_conditioning_templates_attach_by_similarity(embedder, book, scripted_model):
    from memo import policy
    from tests.conftest import seed_pour_fixture_book

    seed_pour_fixture_book(book, embedder)
    clusters = form_clusters(book.snapshot(), 0.8)
    (cluster,) = clusters  # one guidance entry, template conditions it
    assert cluster.member_ids == (2,)
    assert [tid for tid, _t in cluster.conditioning_templates] == [1]


def simple_cluster(texts, ids=None):
    key = global_key(4)
    ids = tuple(ids or range(1, len(texts) + 1))
    return Cluster(key, ids, tuple(texts), ())


def compress_model(*responses):
    """First call gets responses[0]; the retry (flagged prompt) gets responses[-1]."""
    rules = []
    if len(responses) > 1:
        rules.append(ScriptRule("compress", contains=("Invalid answer",), response=responses[1]))
    rules.append(ScriptRule("compress", response=responses[0]))
    return ScriptedModel(rules)


def test_compress_valid_answer_accepted():
    cluster = simple_cluster(["alpha alpha alpha", "beta beta beta"])
    model = compress_model(json.dumps({"new_texts": ["short"], "pruned_ids": [2], "rationale": "r"}))
    result = compress_cluster(cluster, model)
    assert result.new_texts == ("short",)
    assert result.pruned_ids == (2,)
    assert not result.fallback


def test_compress_too_many_entries_retries_then_identity():
    cluster = simple_cluster(["one", "two"])
    bad = json.dumps({"new_texts": ["a", "b", "c"], "pruned_ids": [], "rationale": ""})
    result = compress_cluster(cluster, compress_model(bad))
    assert result.fallback
    assert result.new_texts == cluster.members
    assert result.pruned_ids == ()


def test_compress_char_growth_rejected_but_retry_can_fix():
    cluster = simple_cluster(["short text here"])
    bloated = json.dumps({"new_texts": ["much much much longer than before"], "pruned_ids": []})
    fixed = json.dumps({"new_texts": ["tiny"], "pruned_ids": []})
    result = compress_cluster(cluster, compress_model(bloated, fixed))
    assert result.new_texts == ("tiny",)
    assert not result.fallback


def test_compress_foreign_pruned_id_rejected():
    cluster = simple_cluster(["aaa", "bbb"], ids=(7, 9))
    bad = json.dumps({"new_texts": ["a"], "pruned_ids": [3], "rationale": ""})
    assert compress_cluster(cluster, compress_model(bad)).fallback


def test_compress_non_json_and_missing_model_fall_back():
    cluster = simple_cluster(["aaa"])
    assert compress_cluster(cluster, compress_model("garbage")).fallback
    assert compress_cluster(cluster, ScriptedModel([])).fallback


def test_compress_empty_cluster_rejected():
    with pytest.raises(ValueError):
        compress_cluster(simple_cluster([]), ScriptedModel([]))


def test_run_offline_replaces_members_atomically(embedder, tmp_path):
    book = guidance_book(
        embedder,
        [
            ("open", ["door"], "grab the handle first"),
            ("open", ["door"], "grasp the handle before pulling"),
        ],
        path=tmp_path / "book.jsonl",
    )
    condensed = json.dumps(
        {"new_texts": ["grasp the handle first"], "pruned_ids": [], "rationale": "merge"}
    )
    g0 = book.generation
    report = run_offline(book, compress_model(condensed))
    assert book.generation == g0 + 1
    active = [e for e in book.entries() if e.active]
    assert [e.payload.text for e in active] == ["grasp the handle first"]
    assert active[0].provenance.source == "clustering"
    inactive = [e for e in book.entries() if not e.active]
    assert len(inactive) == 2
    assert report.entries_after <= report.entries_before
    assert report.char_after <= report.char_before
    # the refinement survives persistence
    loaded = Skillbook.load(tmp_path / "book.jsonl")
    assert [e.payload.text for e in loaded.entries() if e.active] == ["grasp the handle first"]


def test_run_offline_identity_everywhere_is_a_no_op(embedder):
    book = guidance_book(
        embedder, [("open", ["door"], "a"), ("pour", ["can"], "b")]
    )
    g0 = book.generation
    report = run_offline(book, ScriptedModel([]))  # fixture missing -> identity
    assert book.generation == g0
    assert report.entries_after == report.entries_before == 2
    # and therefore idempotent
    report2 = run_offline(book, ScriptedModel([]))
    assert report2.to_dict() == report.to_dict()


def test_run_offline_never_touches_templates(embedder, book, scripted_model):
    from tests.conftest import seed_pour_fixture_book

    seed_pour_fixture_book(book, embedder)
    run_offline(book, scripted_model)
    template_entries = [e for e in book.entries() if e.id == 1]
    assert template_entries[0].active


def test_run_offline_pour_rescue_prunes_misleading_entry(embedder, book, scripted_model):
    from memo.skillbook import TemplateEntry
    from tests.conftest import seed_pour_fixture_book

    seed_pour_fixture_book(book, embedder)
    report = run_offline(book, scripted_model)
    assert 2 in report.pruned
    assert not next(e for e in book.entries() if e.id == 2).active
    texts = [
        e.payload.text
        for e in book.entries()
        if e.active and isinstance(e.payload, Guidance)
    ]
    assert texts == ["tilt the can above the bowl to pour it out"]
