"""Document store: source documents, chunks, observations, and statistics.

Layout is a single directory of JSON-lines manifests (one per corpus kind,
plus derived chunk and observation files). Every mutation rewrites the
target file to a temp path and renames it into place, so readers never see
a partial document. One store instance serializes its writers with a lock.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

from .compliance import CfrRef
from .errors import (
    DuplicateIdWithDifferentContent,
    EmptyBody,
    UnknownDocument,
)


class DocKind(str, Enum):
    REGULATORY = "Regulatory"
    FORM483 = "Form483"
    QA = "QA"


def _utcnow() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


def content_id(kind: DocKind, title: str, body: str) -> str:
    """Content-derived document id; identical content always maps to one id."""
    h = hashlib.sha256()
    for piece in (kind.value, title, body):
        h.update(piece.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class SourceDocument:
    doc_id: str
    kind: DocKind
    title: str
    body: str
    source_uri: str = ""
    verified: bool = False
    ingested_at: datetime = field(default_factory=_utcnow)
    # Inspection-report metadata; empty for other kinds.
    firm: str | None = None
    inspectors: tuple[str, ...] = ()

    @classmethod
    def create(
        cls,
        kind: DocKind,
        title: str,
        body: str,
        source_uri: str = "",
        verified: bool = False,
        firm: str | None = None,
        inspectors: Iterable[str] = (),
    ) -> "SourceDocument":
        return cls(
            doc_id=content_id(kind, title, body),
            kind=kind,
            title=title,
            body=body,
            source_uri=source_uri,
            verified=verified,
            firm=firm,
            inspectors=tuple(inspectors),
        )

    def to_dict(self) -> dict:
        d = {
            "doc_id": self.doc_id,
            "kind": self.kind.value,
            "title": self.title,
            "body": self.body,
            "source_uri": self.source_uri,
            "verified": self.verified,
            "ingested_at": self.ingested_at.isoformat(),
        }
        if self.kind == DocKind.FORM483:
            d["firm"] = self.firm
            d["inspectors"] = list(self.inspectors)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SourceDocument":
        return cls(
            doc_id=d["doc_id"],
            kind=DocKind(d["kind"]),
            title=d["title"],
            body=d["body"],
            source_uri=d.get("source_uri", ""),
            verified=bool(d.get("verified", False)),
            ingested_at=datetime.fromisoformat(d["ingested_at"]),
            firm=d.get("firm"),
            inspectors=tuple(d.get("inspectors", ())),
        )


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    kind: DocKind
    text: str
    char_span: tuple[int, int]
    seq: int

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "kind": self.kind.value,
            "text": self.text,
            "char_span": list(self.char_span),
            "seq": self.seq,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Chunk":
        return cls(
            chunk_id=d["chunk_id"],
            doc_id=d["doc_id"],
            kind=DocKind(d["kind"]),
            text=d["text"],
            char_span=(d["char_span"][0], d["char_span"][1]),
            seq=d["seq"],
        )


@dataclass(frozen=True)
class Observation:
    """One inspection-report observation with its parsed citations.

    `firm_name`/`inspector_names` are the raw surface strings from the
    source document; the `*_group` fields hold resolved registry group ids
    and stay unset until an entity registry is applied.
    """

    obs_id: str
    doc_id: str
    text: str
    cited_refs: tuple[CfrRef, ...] = ()
    firm_name: str | None = None
    inspector_names: tuple[str, ...] = ()
    firm_group: str | None = None
    inspector_groups: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "obs_id": self.obs_id,
            "doc_id": self.doc_id,
            "text": self.text,
            "cited_refs": [r.to_dict() for r in self.cited_refs],
            "firm_name": self.firm_name,
            "inspector_names": list(self.inspector_names),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Observation":
        return cls(
            obs_id=d["obs_id"],
            doc_id=d["doc_id"],
            text=d["text"],
            cited_refs=tuple(CfrRef.from_dict(r) for r in d.get("cited_refs", ())),
            firm_name=d.get("firm_name"),
            inspector_names=tuple(d.get("inspector_names", ())),
        )

    def with_groups(self, firm_group: str | None, inspector_groups: tuple[str, ...]) -> "Observation":
        return replace(self, firm_group=firm_group, inspector_groups=inspector_groups)


@dataclass
class CorpusStats:
    doc_counts: dict[str, int]
    chunk_counts: dict[str, int]
    observation_count: int
    firm_group_count: int
    inspector_group_count: int
    unverified_doc_count: int

    def to_dict(self) -> dict:
        return {
            "documents": dict(sorted(self.doc_counts.items())),
            "chunks": dict(sorted(self.chunk_counts.items())),
            "observations": self.observation_count,
            "firm_groups": self.firm_group_count,
            "inspector_groups": self.inspector_group_count,
            "unverified_documents": self.unverified_doc_count,
        }


_MANIFESTS = {
    DocKind.REGULATORY: "regulatory.jsonl",
    DocKind.FORM483: "form483.jsonl",
    DocKind.QA: "qa.jsonl",
}


class CorpusStore:
    """Single-directory persistent store."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._write_lock = threading.Lock()

    # -- file plumbing ------------------------------------------------------

    def _path(self, name: str) -> Path:
        return self.root / name

    def _read_jsonl(self, name: str) -> list[dict]:
        path = self._path(name)
        if not path.exists():
            return []
        records = []
        with path.open("r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        return records

    def _write_jsonl(self, name: str, records: Iterable[dict]) -> None:
        path = self._path(name)
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=name, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                for rec in records:
                    f.write(json.dumps(rec, ensure_ascii=False) + "\n")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    # -- documents ----------------------------------------------------------

    def put_document(self, doc: SourceDocument) -> str:
        if not doc.body:
            raise EmptyBody(f"document {doc.doc_id or '<new>'} has an empty body")
        with self._write_lock:
            manifest = _MANIFESTS[doc.kind]
            records = self._read_jsonl(manifest)
            for rec in records:
                if rec["doc_id"] == doc.doc_id:
                    same = (
                        rec["kind"] == doc.kind.value
                        and rec["title"] == doc.title
                        and rec["body"] == doc.body
                    )
                    if same:
                        return doc.doc_id
                    raise DuplicateIdWithDifferentContent(doc.doc_id)
            # ids are content digests, but an id could still collide across
            # kinds if a caller supplies one explicitly
            other = self._find_document(doc.doc_id, exclude=doc.kind)
            if other is not None:
                raise DuplicateIdWithDifferentContent(doc.doc_id)
            records.append(doc.to_dict())
            self._write_jsonl(manifest, records)
        return doc.doc_id

    def _find_document(self, doc_id: str, exclude: DocKind | None = None) -> dict | None:
        for kind, manifest in _MANIFESTS.items():
            if kind == exclude:
                continue
            for rec in self._read_jsonl(manifest):
                if rec["doc_id"] == doc_id:
                    return rec
        return None

    def get_document(self, doc_id: str) -> SourceDocument:
        rec = self._find_document(doc_id)
        if rec is None:
            raise UnknownDocument(doc_id)
        return SourceDocument.from_dict(rec)

    def has_document(self, doc_id: str) -> bool:
        return self._find_document(doc_id) is not None

    def documents(self, kind: DocKind | None = None) -> list[SourceDocument]:
        kinds = [kind] if kind is not None else list(_MANIFESTS)
        docs = []
        for k in kinds:
            docs.extend(SourceDocument.from_dict(r) for r in self._read_jsonl(_MANIFESTS[k]))
        return docs

    # -- chunks ---------------------------------------------------------------

    def put_chunks(self, doc_id: str, chunks: Iterable[Chunk]) -> None:
        if not self.has_document(doc_id):
            raise UnknownDocument(doc_id)
        with self._write_lock:
            records = [r for r in self._read_jsonl("chunks.jsonl") if r["doc_id"] != doc_id]
            records.extend(c.to_dict() for c in chunks)
            self._write_jsonl("chunks.jsonl", records)

    def get_chunks(self, doc_id: str) -> list[Chunk]:
        if not self.has_document(doc_id):
            raise UnknownDocument(doc_id)
        chunks = [
            Chunk.from_dict(r)
            for r in self._read_jsonl("chunks.jsonl")
            if r["doc_id"] == doc_id
        ]
        chunks.sort(key=lambda c: c.seq)
        return chunks

    def all_chunks(self) -> list[Chunk]:
        return [Chunk.from_dict(r) for r in self._read_jsonl("chunks.jsonl")]

    # -- observations ---------------------------------------------------------

    def put_observations(self, doc_id: str, observations: Iterable[Observation]) -> None:
        if not self.has_document(doc_id):
            raise UnknownDocument(doc_id)
        with self._write_lock:
            records = [
                r for r in self._read_jsonl("observations.jsonl") if r["doc_id"] != doc_id
            ]
            records.extend(o.to_dict() for o in observations)
            self._write_jsonl("observations.jsonl", records)

    def observations(self) -> list[Observation]:
        return [Observation.from_dict(r) for r in self._read_jsonl("observations.jsonl")]

    # -- alignment decisions ----------------------------------------------------

    def append_decisions(self, records: Iterable[dict]) -> None:
        with self._write_lock:
            existing = self._read_jsonl("decisions.jsonl")
            existing.extend(records)
            self._write_jsonl("decisions.jsonl", existing)

    def decisions(self) -> list[dict]:
        return self._read_jsonl("decisions.jsonl")

    def save_registry(self, registry_dict: dict) -> None:
        with self._write_lock:
            fd, tmp = tempfile.mkstemp(dir=self.root, prefix="registry", suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as f:
                    json.dump(registry_dict, f, ensure_ascii=False, indent=1)
                os.replace(tmp, self._path("registry.json"))
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise

    def load_registry(self) -> dict | None:
        path = self._path("registry.json")
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    # -- statistics and audit -----------------------------------------------

    def corpus_stats(self) -> CorpusStats:
        doc_counts = {}
        unverified = 0
        for kind, manifest in _MANIFESTS.items():
            records = self._read_jsonl(manifest)
            doc_counts[kind.value] = len(records)
            unverified += sum(1 for r in records if not r.get("verified", False))
        chunk_counts = {k.value: 0 for k in DocKind}
        for rec in self._read_jsonl("chunks.jsonl"):
            chunk_counts[rec["kind"]] += 1
        registry = self.load_registry() or {"groups": []}
        firm_groups = sum(1 for g in registry["groups"] if g["kind"] == "firm")
        inspector_groups = sum(1 for g in registry["groups"] if g["kind"] == "inspector")
        return CorpusStats(
            doc_counts=doc_counts,
            chunk_counts=chunk_counts,
            observation_count=len(self._read_jsonl("observations.jsonl")),
            firm_group_count=firm_groups,
            inspector_group_count=inspector_groups,
            unverified_doc_count=unverified,
        )

    def audit(self) -> list[str]:
        """Store-wide referential integrity check; returns violations."""
        problems = []
        ids_by_kind: dict[str, set[str]] = {}
        all_ids: set[str] = set()
        for kind, manifest in _MANIFESTS.items():
            ids = {r["doc_id"] for r in self._read_jsonl(manifest)}
            ids_by_kind[kind.value] = ids
            overlap = all_ids & ids
            if overlap:
                problems.append(f"doc ids present in two manifests: {sorted(overlap)}")
            all_ids |= ids
        for rec in self._read_jsonl("chunks.jsonl"):
            if rec["doc_id"] not in all_ids:
                problems.append(f"chunk {rec['chunk_id']} references missing doc {rec['doc_id']}")
        for rec in self._read_jsonl("observations.jsonl"):
            if rec["doc_id"] not in ids_by_kind[DocKind.FORM483.value]:
                problems.append(
                    f"observation {rec['obs_id']} references non-inspection doc {rec['doc_id']}"
                )
        return problems
