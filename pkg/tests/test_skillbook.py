"""Retrieval exactness against a brute-force oracle, persistence, and
snapshot semantics."""

import json
import math
import random

import numpy as np
import pytest

from memo.embedding import EmbeddingKey, global_key
from memo.skillbook import (
    GlobalGuidance,
    Guidance,
    Provenance,
    RetrievalQuery,
    Skillbook,
    SkillbookFormatError,
    TemplateEntry,
)


def unit(rng, dim=16):
    v = np.array([rng.gauss(0, 1) for _ in range(dim)])
    return v / np.linalg.norm(v)


def make_key(rng, dim=16, scene=False):
    return EmbeddingKey(
        v_act=tuple(unit(rng, dim)),
        v_obj=tuple(unit(rng, dim)),
        v_scene=tuple(unit(rng, dim)) if scene else None,
        action_text="a",
        object_texts=("o",),
    )


def brute_force(entries, query, l1, l2, l3, k, theta):
    """Independent oracle: plain-python weighted-cosine scan."""
    def cos(a, b):
        num = sum(x * y for x, y in zip(a, b))
        return num  # stored vectors are unit norm already

    scored = []
    for e in entries:
        num = l1 * cos(e.key.v_act, query.q_act) + l2 * cos(e.key.v_obj, query.q_obj)
        den = l1 + l2
        if query.q_scene is not None and e.key.v_scene is not None and l3 > 0:
            num += l3 * cos(e.key.v_scene, query.q_scene)
            den += l3
        scored.append((num / den, e.id))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [(i, s) for s, i in scored if s >= theta][:k]


def fill_book(book, rng, n, dim=16, scene_fraction=0.5):
    for i in range(n):
        key = make_key(rng, dim, scene=rng.random() < scene_fraction)
        book.insert(key, Guidance(f"entry {i}"), Provenance("t", "human", i))


def test_retrieval_matches_brute_force_oracle(tmp_path):
    rng = random.Random(7)
    book = Skillbook(16, "test")
    fill_book(book, rng, 300)
    view = book.snapshot()
    entries = view.entries(active=True)
    for trial in range(30):
        q = make_key(rng, 16, scene=rng.random() < 0.5)
        query = RetrievalQuery.from_key(q)
        l3 = rng.choice([0.0, 0.5])
        result = view.retrieve(query, lambda_scene=l3, k=5, theta_min=0.2)
        oracle = brute_force(entries, query, 1.0, 1.0, l3, 5, 0.2)
        assert [i for i, _ in result.ranked] == [i for i, _ in oracle]
        for (ri, rs), (oi, os_) in zip(result.ranked, oracle):
            assert rs == pytest.approx(os_, abs=1e-12)


def test_identical_key_scores_one_and_ranks_first():
    rng = random.Random(1)
    book = Skillbook(16, "test")
    fill_book(book, rng, 50)
    target = make_key(rng)
    tid = book.insert(target, Guidance("the one"), Provenance("t", "human"))
    result = book.retrieve(RetrievalQuery.from_key(target))
    assert result.ranked[0][0] == tid
    assert result.ranked[0][1] == pytest.approx(1.0, abs=1e-9)


def test_tie_break_is_ascending_id():
    book = Skillbook(4, "test")
    key = EmbeddingKey((1.0, 0, 0, 0), (0, 1.0, 0, 0), None, "a", ("o",))
    ids = [book.insert(key, Guidance(f"g{i}"), Provenance("t", "human")) for i in range(3)]
    result = book.retrieve(RetrievalQuery.from_key(key), k=3)
    assert [i for i, _ in result.ranked] == sorted(ids)


def test_threshold_filters_low_scores():
    book = Skillbook(4, "test")
    a = EmbeddingKey((1.0, 0, 0, 0), (1.0, 0, 0, 0), None, "a", ("o",))
    b = EmbeddingKey((0.0, 1.0, 0, 0), (0.0, 1.0, 0, 0), None, "b", ("o",))
    book.insert(b, Guidance("far"), Provenance("t", "human"))
    result = book.retrieve(RetrievalQuery.from_key(a), theta_min=0.35)
    assert result.ranked == ()


def test_globals_returned_separately_most_recent_first():
    book = Skillbook(4, "test")
    gk = global_key(4)
    g1 = book.insert(gk, GlobalGuidance("one"), Provenance("t", "human"))
    g2 = book.insert(gk, GlobalGuidance("two"), Provenance("t", "human"))
    key = EmbeddingKey((1.0, 0, 0, 0), (1.0, 0, 0, 0), None, "a", ("o",))
    result = book.retrieve(RetrievalQuery.from_key(key))
    assert list(result.globals) == [g2, g1]
    assert result.ranked == ()  # globals are never ranked


def test_empty_book_retrieval_is_empty():
    book = Skillbook(4, "test")
    key = EmbeddingKey((1.0, 0, 0, 0), (1.0, 0, 0, 0), None, "a", ("o",))
    assert book.retrieve(RetrievalQuery.from_key(key)).ranked == ()


def test_scene_term_omitted_per_entry():
    # Entry without a scene vector competes using only act/obj terms.
    book = Skillbook(4, "test")
    with_scene = EmbeddingKey(
        (1.0, 0, 0, 0), (1.0, 0, 0, 0), (1.0, 0, 0, 0), "a", ("o",)
    )
    without = EmbeddingKey((1.0, 0, 0, 0), (1.0, 0, 0, 0), None, "a", ("o",))
    i1 = book.insert(with_scene, Guidance("s"), Provenance("t", "human"))
    i2 = book.insert(without, Guidance("n"), Provenance("t", "human"))
    q = RetrievalQuery.from_key(with_scene)
    result = book.retrieve(q, lambda_scene=1.0, k=4)
    scores = dict(result.ranked)
    assert scores[i1] == pytest.approx(1.0)
    assert scores[i2] == pytest.approx(1.0)  # (1+1)/2, scene term dropped


def test_persistence_round_trip(tmp_path):
    rng = random.Random(3)
    path = tmp_path / "book.jsonl"
    book = Skillbook(16, "test", path)
    fill_book(book, rng, 40)
    book.deactivate([1, 5, 9])
    loaded = Skillbook.load(path)
    assert loaded.generation == book.generation
    assert len(loaded.entries()) == len(book.entries())
    for a, b in zip(book.entries(), loaded.entries()):
        assert (a.id, a.active, a.created_at, a.gen) == (b.id, b.active, b.created_at, b.gen)
        assert a.key == b.key
        assert a.payload == b.payload
    # a second persist produces identical bytes
    out = tmp_path / "copy.jsonl"
    loaded.persist(out)
    book.persist(tmp_path / "orig.jsonl")
    assert out.read_bytes() == (tmp_path / "orig.jsonl").read_bytes()


def test_corrupt_line_reports_line_number(tmp_path):
    path = tmp_path / "book.jsonl"
    book = Skillbook(8, "test", path)
    key = EmbeddingKey((1.0,) + (0.0,) * 7, (1.0,) + (0.0,) * 7, None, "a", ("o",))
    book.insert(key, Guidance("g"), Provenance("t", "human"))
    lines = path.read_text().splitlines()
    lines[1] = lines[1][: len(lines[1]) // 2]  # truncate a record mid-JSON
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(SkillbookFormatError) as err:
        Skillbook.load(path)
    assert err.value.line == 2


def test_embedder_mismatch_rejected(tmp_path):
    path = tmp_path / "book.jsonl"
    Skillbook(8, "hashing-v1-d256", path)
    from memo.skillbook import SkillbookError

    with pytest.raises(SkillbookError):
        Skillbook.load(path, expected_embedder_id="other-embedder")


def test_apply_batch_is_atomic_per_generation(book, embedder):
    from memo.embedding import embed_key

    k1 = embed_key(embedder, "open", ("door",))
    g0 = book.generation
    book.apply_batch(
        inserts=[
            (k1, Guidance("a"), Provenance("t", "clustering")),
            (k1, Guidance("b"), Provenance("t", "clustering")),
        ],
        deactivate_ids=[],
    )
    assert book.generation == g0 + 1
    assert all(e.gen == g0 + 1 for e in book.entries())


def test_deactivate_unknown_id_rejected(book):
    from memo.skillbook import UnknownEntryError

    with pytest.raises(UnknownEntryError):
        book.deactivate([999])


def test_stats_counts_kinds(book, embedder):
    from memo import dsl, simenv
    from memo.embedding import embed_key

    key = embed_key(embedder, "open", ("door",))
    book.insert(key, Guidance("local"), Provenance("t", "human"))
    book.insert(global_key(book.dim), GlobalGuidance("general"), Provenance("t", "human"))
    stats = book.stats()
    assert stats["guidance_active"] == 1
    assert stats["global_active"] == 1
    assert stats["active_guidance_entries"] == 2
    assert stats["active_guidance_chars"] == len("local") + len("general")
