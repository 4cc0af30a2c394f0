"""Store behavior: durability, idempotency, ordering, stats integrity."""

import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmpilot.corpus import (
    Chunk,
    CorpusStore,
    DocKind,
    SourceDocument,
    content_id,
)
from gmpilot.errors import (
    DuplicateIdWithDifferentContent,
    EmptyBody,
    UnknownDocument,
)

from oracles import recount_stats


def make_doc(kind=DocKind.REGULATORY, title="t", body="some body text", **kw):
    return SourceDocument.create(kind=kind, title=title, body=body, **kw)


def test_put_and_get_round_trip(tmp_path):
    store = CorpusStore(tmp_path)
    doc = make_doc(body="exact body é中 bytes\n")
    doc_id = store.put_document(doc)
    assert doc_id == content_id(DocKind.REGULATORY, "t", doc.body)
    fetched = store.get_document(doc_id)
    assert fetched.body == doc.body
    assert fetched.kind == DocKind.REGULATORY


def test_put_document_empty_body(tmp_path):
    store = CorpusStore(tmp_path)
    with pytest.raises(EmptyBody):
        store.put_document(SourceDocument.create(DocKind.QA, "t", ""))


def test_put_document_idempotent(tmp_path):
    store = CorpusStore(tmp_path)
    doc = make_doc()
    first = store.put_document(doc)
    before = (tmp_path / "regulatory.jsonl").read_text()
    second = store.put_document(make_doc())
    assert first == second
    assert (tmp_path / "regulatory.jsonl").read_text() == before


def test_put_document_conflicting_content(tmp_path):
    store = CorpusStore(tmp_path)
    doc = make_doc()
    store.put_document(doc)
    clash = SourceDocument(
        doc_id=doc.doc_id,
        kind=DocKind.REGULATORY,
        title="t",
        body="different body",
    )
    with pytest.raises(DuplicateIdWithDifferentContent):
        store.put_document(clash)


def test_get_chunks_ordering_and_empty(tmp_path):
    store = CorpusStore(tmp_path)
    doc = make_doc()
    store.put_document(doc)
    assert store.get_chunks(doc.doc_id) == []
    chunks = [
        Chunk(f"{doc.doc_id}:{i:04d}", doc.doc_id, doc.kind, f"c{i}", (i, i + 2), i)
        for i in (2, 0, 1)
    ]
    store.put_chunks(doc.doc_id, chunks)
    assert [c.seq for c in store.get_chunks(doc.doc_id)] == [0, 1, 2]


def test_get_chunks_unknown_document(tmp_path):
    store = CorpusStore(tmp_path)
    with pytest.raises(UnknownDocument):
        store.get_chunks("nope")


def test_stats_empty_store(tmp_path):
    stats = CorpusStore(tmp_path).corpus_stats()
    assert stats.observation_count == 0
    assert all(v == 0 for v in stats.doc_counts.values())
    assert all(v == 0 for v in stats.chunk_counts.values())


def test_stats_match_recount_after_fixture_ingest(fixture_engine):
    stats = fixture_engine.store.corpus_stats().to_dict()
    assert stats == recount_stats(Path(fixture_engine.data_dir))
    assert stats["documents"] == {"Regulatory": 8, "Form483": 2, "QA": 1}
    assert stats["observations"] == 5


def test_store_audit_clean(fixture_engine):
    assert fixture_engine.store.audit() == []


def test_store_audit_flags_orphan_chunk(tmp_path):
    store = CorpusStore(tmp_path)
    doc = make_doc()
    store.put_document(doc)
    store.put_chunks(doc.doc_id, [Chunk("x:0", doc.doc_id, doc.kind, "t", (0, 1), 0)])
    # simulate a manifest edited out from under the chunk file
    (tmp_path / "regulatory.jsonl").write_text("")
    problems = store.audit()
    assert any("references missing doc" in p for p in problems)


@settings(max_examples=30, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.sampled_from(list(DocKind)),
            st.text(min_size=1, max_size=8),
            st.text(min_size=1, max_size=30),
        ),
        max_size=12,
    )
)
def test_stats_equal_recount_for_random_put_sequences(tmp_path_factory, docs):
    root = tmp_path_factory.mktemp("store")
    store = CorpusStore(root)
    for kind, title, body in docs:
        doc = SourceDocument.create(kind, title, body)
        try:
            store.put_document(doc)
        except DuplicateIdWithDifferentContent:
            pass
    assert store.corpus_stats().to_dict() == recount_stats(Path(root))


def test_stats_twelve_docs_thirty_observations(tmp_path):
    store = CorpusStore(tmp_path)
    doc_ids = []
    for i in range(12):
        kind = [DocKind.REGULATORY, DocKind.FORM483, DocKind.QA][i % 3]
        doc = SourceDocument.create(kind, f"doc {i}", f"body {i}")
        store.put_document(doc)
        doc_ids.append((doc.doc_id, kind))
    f483_ids = [d for d, k in doc_ids if k == DocKind.FORM483]
    per_doc = 30 // len(f483_ids) + 1
    total = 0
    for doc_id in f483_ids:
        batch = []
        for j in range(per_doc):
            if total >= 30:
                break
            from gmpilot.corpus import Observation

            batch.append(Observation(obs_id=f"{doc_id}:o{j}", doc_id=doc_id, text="t"))
            total += 1
        store.put_observations(doc_id, batch)
    stats = store.corpus_stats()
    assert sum(stats.doc_counts.values()) == 12
    assert stats.observation_count == 30
    assert stats.to_dict() == recount_stats(Path(tmp_path))


def test_manifest_lines_are_valid_json(fixture_engine):
    manifest = Path(fixture_engine.data_dir) / "form483.jsonl"
    for line in manifest.read_text().splitlines():
        record = json.loads(line)
        assert {"doc_id", "kind", "title", "body", "source_uri", "verified", "ingested_at"} <= set(record)
