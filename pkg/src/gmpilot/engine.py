"""Composition root: wires store, index, registry, and agent together.

Both the command line and the HTTP service drive this class, which is what
guarantees the two paths produce identical answers for identical inputs.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Iterator

from . import agent, ingest
from .agent import (
    AgentStep,
    AgentTranscript,
    BackendConfig,
    LLMBackend,
    ReactState,
    StructuredAnswer,
)
from .compliance import CfrTree, default_tree, load_cfr_tree, risk_profile
from .corpus import CorpusStore, DocKind, Observation, SourceDocument
from .errors import ParseError, UnknownKind
from .ingest import ChunkConfig
from .retrieval import (
    HashEmbedder,
    IndexSnapshot,
    RemoteEmbedder,
    RemoteReranker,
    RetrievalConfig,
    Reranker,
)

ENV_DATA_DIR = "GMPILOT_DATA_DIR"
ENV_LLM_URL = "GMPILOT_LLM_URL"
ENV_EMBED_URL = "GMPILOT_EMBED_URL"
ENV_RERANK_URL = "GMPILOT_RERANK_URL"
ENV_BIND_ADDR = "GMPILOT_BIND_ADDR"
ENV_BACKEND = "GMPILOT_BACKEND"
ENV_MOCK_SCRIPT = "GMPILOT_MOCK_SCRIPT"

INGEST_KINDS = ("regulatory", "form483", "qa", "cfr_manifest", "alignment_decisions")


class Engine:
    def __init__(
        self,
        data_dir: Path | str,
        retrieval_cfg: RetrievalConfig | None = None,
        backend_cfg: BackendConfig | None = None,
        chunk_cfg: ChunkConfig | None = None,
        backend: LLMBackend | None = None,
        reranker: Reranker | None = None,
        embed_url: str | None = None,
    ):
        self.data_dir = Path(data_dir)
        self.store = CorpusStore(self.data_dir)
        self.retrieval_cfg = retrieval_cfg or RetrievalConfig()
        self.backend_cfg = backend_cfg or BackendConfig()
        self.chunk_cfg = chunk_cfg or ChunkConfig()
        self.backend = backend or agent.AutoMockBackend()
        rerank_url = os.environ.get(ENV_RERANK_URL, "")
        self.reranker = reranker or (RemoteReranker(rerank_url) if rerank_url else None)
        embed_url = embed_url if embed_url is not None else os.environ.get(ENV_EMBED_URL, "")
        self.embedder = RemoteEmbedder(embed_url) if embed_url else HashEmbedder()
        self._snapshot: IndexSnapshot | None = None
        self._ingest_lock = threading.Lock()
        self._tree: CfrTree | None = None

    # -- regulatory tree -----------------------------------------------------

    @property
    def tree(self) -> CfrTree:
        if self._tree is None:
            manifest = self.data_dir / "cfr_manifest.tsv"
            if manifest.exists():
                self._tree = load_cfr_tree(manifest.read_text(encoding="utf-8"))
            else:
                self._tree = default_tree()
        return self._tree

    # -- index ----------------------------------------------------------------

    @property
    def snapshot(self) -> IndexSnapshot:
        if self._snapshot is None:
            self.rebuild_index()
        assert self._snapshot is not None
        return self._snapshot

    def rebuild_index(self) -> str:
        """Build a fresh snapshot and swap it in atomically."""
        snapshot = IndexSnapshot.build(self.store.all_chunks(), self.embedder)
        self._snapshot = snapshot
        return snapshot.snapshot_id

    # -- ingestion --------------------------------------------------------------

    def ingest_payload(self, kind: str, payload: str) -> dict:
        if kind not in INGEST_KINDS:
            raise UnknownKind(kind)
        with self._ingest_lock:
            if kind == "regulatory":
                report = self._ingest_regulatory(payload)
            elif kind == "form483":
                report = self._ingest_form483(payload)
            elif kind == "qa":
                report = self._ingest_qa(payload)
            elif kind == "cfr_manifest":
                report = self._ingest_cfr_manifest(payload)
            else:
                report = self._apply_alignment(payload)
            self.rebuild_index()
        return report

    def _ingest_regulatory(self, payload: str) -> dict:
        docs = 0
        chunks = 0
        for record in _ndjson(payload):
            doc = SourceDocument.create(
                kind=DocKind.REGULATORY,
                title=record.get("title", ""),
                body=record.get("body", ""),
                source_uri=record.get("source_uri", ""),
                verified=bool(record.get("verified", False)),
            )
            self.store.put_document(doc)
            doc_chunks = ingest.chunk_regulatory(doc.body, self.chunk_cfg, doc_id=doc.doc_id)
            self.store.put_chunks(doc.doc_id, doc_chunks)
            docs += 1
            chunks += len(doc_chunks)
        return {"documents": docs, "chunks": chunks, "observations": 0}

    def _ingest_form483(self, payload: str) -> dict:
        meta, body = ingest.split_483_file(payload)
        doc = SourceDocument.create(
            kind=DocKind.FORM483,
            title=meta.get("title", "FDA Form 483"),
            body=body,
            source_uri=meta.get("source", ""),
            verified=meta.get("verified", False),
            firm=meta.get("firm") or None,
            inspectors=meta.get("inspectors", ()),
        )
        self.store.put_document(doc)
        doc_chunks = ingest.chunk_483(doc.body, self.chunk_cfg, doc_id=doc.doc_id)
        self.store.put_chunks(doc.doc_id, doc_chunks)
        observations = ingest.parse_483(doc, self.tree, self.chunk_cfg)
        self.store.put_observations(doc.doc_id, observations)
        self._refresh_registry()
        return {"documents": 1, "chunks": len(doc_chunks), "observations": len(observations)}

    def _ingest_qa(self, payload: str) -> dict:
        pairs = []
        title = ""
        for record in _ndjson(payload):
            if "title" in record and "question" not in record:
                title = record["title"]
                continue
            pairs.append((record.get("question", ""), record.get("answer", "")))
        if not pairs:
            return {"documents": 0, "chunks": 0, "observations": 0}
        body = ingest.qa_body(pairs)
        doc = SourceDocument.create(
            kind=DocKind.QA, title=title or f"Expert Q&A ({len(pairs)} pairs)", body=body
        )
        self.store.put_document(doc)
        doc_chunks = ingest.chunk_qa(pairs, doc_id=doc.doc_id)
        self.store.put_chunks(doc.doc_id, doc_chunks)
        return {"documents": 1, "chunks": len(doc_chunks), "observations": 0}

    def _ingest_cfr_manifest(self, payload: str) -> dict:
        tree = load_cfr_tree(payload)  # validate before persisting
        (self.data_dir / "cfr_manifest.tsv").write_text(payload, encoding="utf-8")
        self._tree = tree
        return {"documents": 0, "chunks": 0, "observations": 0, "parts": len(tree)}

    def _apply_alignment(self, payload: str) -> dict:
        decisions = ingest.parse_decisions_jsonl(payload)
        self.store.append_decisions([d.to_dict() for d in decisions])
        registry = self._refresh_registry()
        return {
            "documents": 0,
            "chunks": 0,
            "observations": 0,
            "decisions": len(decisions),
            "firm_groups": registry.count(ingest.EntityKind.FIRM),
            "inspector_groups": registry.count(ingest.EntityKind.INSPECTOR),
        }

    def _refresh_registry(self) -> ingest.EntityRegistry:
        decisions = [ingest.AlignmentDecision.from_dict(d) for d in self.store.decisions()]
        registry = ingest.registry_from_store(self.store.documents(DocKind.FORM483), decisions)
        self.store.save_registry(registry.to_dict())
        return registry

    def registry(self) -> ingest.EntityRegistry:
        decisions = [ingest.AlignmentDecision.from_dict(d) for d in self.store.decisions()]
        return ingest.registry_from_store(self.store.documents(DocKind.FORM483), decisions)

    def resolved_observations(self) -> list[Observation]:
        return ingest.resolve_observation_groups(self.store.observations(), self.registry())

    # -- statistics ----------------------------------------------------------------

    def stats(self) -> dict:
        corpus = self.store.corpus_stats().to_dict()
        report = risk_profile(self.resolved_observations(), self.tree)
        return {"corpus": corpus, "risk": report.to_dict()}

    # -- querying ----------------------------------------------------------------------

    def query_steps(self, query: str, state: ReactState | None = None) -> Iterator[AgentStep]:
        return agent.react_steps(
            query,
            self.snapshot,
            self.backend_cfg,
            self.retrieval_cfg,
            self.backend,
            self.tree,
            self.reranker,
            state=state,
        )

    def query(self, query: str) -> tuple[AgentTranscript, StructuredAnswer]:
        return agent.run_react(
            query,
            self.snapshot,
            self.backend_cfg,
            self.retrieval_cfg,
            self.backend,
            self.tree,
            self.reranker,
        )

    def get_chunk(self, chunk_id: str):
        return self.snapshot.chunks.get(chunk_id)


def _ndjson(payload: str) -> Iterator[dict]:
    # split on \n only: JSON string values may contain \x85 /
    for lineno, line in enumerate(payload.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"line {lineno}: {e}") from None
        if not isinstance(record, dict):
            raise ParseError(f"line {lineno}: expected a JSON object")
        yield record


def make_backend(mode: str, mock_script: str | None = None, llm_url: str | None = None) -> LLMBackend:
    """Backend factory honoring the mock/remote switch."""
    if mode == "remote":
        url = llm_url or os.environ.get(ENV_LLM_URL, "")
        if not url:
            raise ParseError(f"remote backend needs {ENV_LLM_URL} or llm_url")
        timeout = float(os.environ.get("GMPILOT_LLM_TIMEOUT", "30"))
        return agent.RemoteBackend(url, timeout=timeout)
    if mode == "mock":
        script = mock_script or os.environ.get(ENV_MOCK_SCRIPT, "")
        if script:
            return agent.MockBackend.from_jsonl(script)
        return agent.AutoMockBackend()
    raise ParseError(f"unknown backend mode {mode!r}")
