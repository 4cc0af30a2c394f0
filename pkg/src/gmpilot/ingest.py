"""Corpus ingestion: kind-specific chunking, observation splitting, entities.

Chunking contracts:
  * regulatory text packs natural paragraphs greedily into fixed-size
    chunks and copies a short overlap prefix from each chunk into the next;
  * inspection reports split on an explicit delimiter, one observation per
    chunk, no overlap, hard size cap;
  * expert Q&A keeps each question/answer pair as one retrieval unit.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .compliance import CfrTree, default_tree, extract_citations
from .corpus import Chunk, DocKind, Observation, SourceDocument
from .errors import (
    ConflictingDecisions,
    EmptyEntity,
    EmptyPairMember,
    ObservationTooLarge,
    ParseError,
    UnknownProposal,
    WrongKind,
)

DEFAULT_REGULATORY_CHUNK_SIZE = 1024
DEFAULT_REGULATORY_OVERLAP_RATE = 0.05
DEFAULT_483_MAX_CHUNK = 40_000
DEFAULT_483_DELIMITER = "===OBS==="


QA_MODE_PAIRED = "question_answer_paired"


@dataclass(frozen=True)
class ChunkConfig:
    regulatory_chunk_size: int = DEFAULT_REGULATORY_CHUNK_SIZE
    regulatory_overlap_rate: float = DEFAULT_REGULATORY_OVERLAP_RATE
    f483_max_chunk: int = DEFAULT_483_MAX_CHUNK
    f483_delimiter: str = DEFAULT_483_DELIMITER
    qa_mode: str = QA_MODE_PAIRED

    def __post_init__(self):
        if self.regulatory_chunk_size <= 0:
            raise ValueError("regulatory_chunk_size must be positive")
        if not (0 <= self.regulatory_overlap_rate < 1):
            raise ValueError("regulatory_overlap_rate must be in [0, 1)")
        if self.f483_max_chunk <= 0:
            raise ValueError("f483_max_chunk must be positive")
        if not self.f483_delimiter:
            raise ValueError("f483_delimiter must be non-empty")
        if self.qa_mode != QA_MODE_PAIRED:
            raise ValueError(f"unsupported qa_mode {self.qa_mode!r}")

    @property
    def effective_overlap(self) -> int:
        return math.floor(self.regulatory_chunk_size * self.regulatory_overlap_rate)


DEFAULT_CHUNK_CONFIG = ChunkConfig()


def _chunk_id(doc_id: str, seq: int) -> str:
    return f"{doc_id or 'doc'}:{seq:04d}"


# --- regulatory chunking ----------------------------------------------------

# A paragraph break is one or more blank lines (lines holding only
# horizontal whitespace). Breaks attach to the preceding paragraph so the
# units always concatenate back to the exact source text.
_PARA_BREAK = re.compile(r"\n(?:[^\S\n]*\n)+")


def _paragraph_units(body: str) -> list[str]:
    units: list[str] = []
    pos = 0
    for m in _PARA_BREAK.finditer(body):
        units.append(body[pos : m.end()])
        pos = m.end()
    if pos < len(body):
        units.append(body[pos:])
    elif not units and body:
        units.append(body)
    return units


def _pack_cores(units: Sequence[str], size: int) -> list[str]:
    """Greedy packing; paragraphs above `size` split at character bounds."""
    cores: list[str] = []
    cur = ""
    for unit in units:
        if len(cur) + len(unit) <= size:
            cur += unit
            continue
        if cur:
            cores.append(cur)
            cur = ""
        while len(unit) > size:
            cores.append(unit[:size])
            unit = unit[size:]
        cur = unit
    if cur:
        cores.append(cur)
    return cores


def chunk_regulatory(body: str, cfg: ChunkConfig = DEFAULT_CHUNK_CONFIG, doc_id: str = "") -> list[Chunk]:
    """Paragraph-packed chunks with a copied overlap prefix between chunks.

    The char_span of each chunk covers its fresh (non-overlap) text, so
    concatenating `body[span]` over all chunks reproduces the body exactly.
    """
    if not body:
        return []
    cores = _pack_cores(_paragraph_units(body), cfg.regulatory_chunk_size)
    overlap = cfg.effective_overlap
    chunks: list[Chunk] = []
    offset = 0
    prev_text = ""
    for seq, core in enumerate(cores):
        prefix = prev_text[-overlap:] if (seq > 0 and overlap > 0) else ""
        text = prefix + core
        chunks.append(
            Chunk(
                chunk_id=_chunk_id(doc_id, seq),
                doc_id=doc_id,
                kind=DocKind.REGULATORY,
                text=text,
                char_span=(offset, offset + len(core)),
                seq=seq,
            )
        )
        offset += len(core)
        prev_text = text
    return chunks


# --- inspection-report chunking ----------------------------------------------

def _483_segments(body: str, delimiter: str) -> list[tuple[str, int, int]]:
    """Trimmed non-empty segments between delimiters, with body offsets."""
    segments: list[tuple[str, int, int]] = []
    pos = 0
    bounds: list[tuple[int, int]] = []
    while True:
        idx = body.find(delimiter, pos)
        if idx < 0:
            bounds.append((pos, len(body)))
            break
        bounds.append((pos, idx))
        pos = idx + len(delimiter)
    for start, end in bounds:
        raw = body[start:end]
        stripped = raw.strip()
        if not stripped:
            continue
        lead = len(raw) - len(raw.lstrip())
        segments.append((stripped, start + lead, start + lead + len(stripped)))
    return segments


def chunk_483(body: str, cfg: ChunkConfig = DEFAULT_CHUNK_CONFIG, doc_id: str = "") -> list[Chunk]:
    """One chunk per delimited observation; no overlap, hard size cap."""
    if not body:
        return []
    chunks: list[Chunk] = []
    for seq, (text, start, end) in enumerate(_483_segments(body, cfg.f483_delimiter)):
        if len(text) > cfg.f483_max_chunk:
            raise ObservationTooLarge(
                f"segment {seq} has {len(text)} characters (cap {cfg.f483_max_chunk}); "
                "re-segment the source document"
            )
        chunks.append(
            Chunk(
                chunk_id=_chunk_id(doc_id, seq),
                doc_id=doc_id,
                kind=DocKind.FORM483,
                text=text,
                char_span=(start, end),
                seq=seq,
            )
        )
    return chunks


# --- Q&A chunking -------------------------------------------------------------

def qa_body(pairs: Sequence[tuple[str, str]]) -> str:
    """Canonical document body for a Q&A set: the pair texts joined by blank lines."""
    return "\n\n".join(f"Q: {q}\nA: {a}" for q, a in pairs)


def chunk_qa(pairs: Sequence[tuple[str, str]], doc_id: str = "") -> list[Chunk]:
    """One chunk per question/answer pair, spans into the canonical body."""
    chunks: list[Chunk] = []
    offset = 0
    for seq, (question, answer) in enumerate(pairs):
        if not question.strip() or not answer.strip():
            raise EmptyPairMember(f"pair {seq} has an empty member")
        text = f"Q: {question}\nA: {answer}"
        if seq > 0:
            offset += 2  # the joining blank line
        chunks.append(
            Chunk(
                chunk_id=_chunk_id(doc_id, seq),
                doc_id=doc_id,
                kind=DocKind.QA,
                text=text,
                char_span=(offset, offset + len(text)),
                seq=seq,
            )
        )
        offset += len(text)
    return chunks


def chunk_document(doc: SourceDocument, cfg: ChunkConfig = DEFAULT_CHUNK_CONFIG) -> list[Chunk]:
    if doc.kind == DocKind.REGULATORY:
        return chunk_regulatory(doc.body, cfg, doc_id=doc.doc_id)
    if doc.kind == DocKind.FORM483:
        return chunk_483(doc.body, cfg, doc_id=doc.doc_id)
    # Q&A bodies are canonical pair joins, so chunking is a re-split
    pairs = parse_qa_body(doc.body)
    return chunk_qa(pairs, doc_id=doc.doc_id)


_QA_PAIR = re.compile(r"Q: (?P<q>.*?)\nA: (?P<a>.*?)(?=\n\nQ: |\Z)", re.DOTALL)


def parse_qa_body(body: str) -> list[tuple[str, str]]:
    return [(m.group("q"), m.group("a")) for m in _QA_PAIR.finditer(body)]


# --- observation parsing --------------------------------------------------------

def parse_483(
    doc: SourceDocument,
    tree: CfrTree | None = None,
    cfg: ChunkConfig = DEFAULT_CHUNK_CONFIG,
) -> list[Observation]:
    """Split an inspection report into observations with parsed citations."""
    if doc.kind != DocKind.FORM483:
        raise WrongKind(f"document {doc.doc_id} has kind {doc.kind.value}")
    tree = tree or default_tree()
    observations = []
    for seq, (text, _start, _end) in enumerate(_483_segments(doc.body, cfg.f483_delimiter)):
        refs = extract_citations(text, tree.part_numbers())
        observations.append(
            Observation(
                obs_id=f"{doc.doc_id}:o{seq}",
                doc_id=doc.doc_id,
                text=text,
                cited_refs=tuple(refs),
                firm_name=doc.firm,
                inspector_names=doc.inspectors,
            )
        )
    return observations


_HEADER_LINE = re.compile(r"^(TITLE|FIRM|INSPECTOR|SOURCE|VERIFIED):\s*(.*)$")


def split_483_file(text: str) -> tuple[dict, str]:
    """Split a raw inspection-report file into (metadata, observation body).

    Header lines (`TITLE:`, `FIRM:`, `INSPECTOR:`, `SOURCE:`, `VERIFIED:`)
    may precede the first delimiter; the body starts at the first delimiter
    line or the first non-header line.
    """
    meta: dict = {"inspectors": []}
    lines = text.splitlines(keepends=True)
    consumed = 0
    for line in lines:
        m = _HEADER_LINE.match(line.strip())
        if line.strip() and m is None:
            break
        if m is not None:
            key, value = m.group(1), m.group(2).strip()
            if key == "INSPECTOR":
                meta["inspectors"].append(value)
            elif key == "VERIFIED":
                meta["verified"] = value.lower() in ("true", "yes", "1")
            else:
                meta[key.lower()] = value
        consumed += len(line)
    return meta, text[consumed:]


# --- entity normalization and alignment ---------------------------------------

class EntityKind(str, Enum):
    FIRM = "firm"
    INSPECTOR = "inspector"


DEFAULT_FIRM_SUFFIXES = frozenset({"inc", "llc", "ltd", "corp", "co", "gmbh"})
DEFAULT_HONORIFICS = frozenset({"mr", "mrs", "ms", "dr", "prof"})

_PUNCT = re.compile(r"[^\w\s]", re.UNICODE)


def normalize_entity(
    raw: str,
    kind: EntityKind,
    firm_suffixes: frozenset[str] = DEFAULT_FIRM_SUFFIXES,
    honorifics: frozenset[str] = DEFAULT_HONORIFICS,
) -> str:
    """Deterministic grouping key for a firm or inspector surface string."""
    if not raw.strip():
        raise EmptyEntity("blank entity name")
    text = raw.strip()
    if kind == EntityKind.INSPECTOR and "," in text:
        last, _, first = text.partition(",")
        text = f"{first.strip()} {last.strip()}"
    text = _PUNCT.sub(" ", text.casefold())
    tokens = text.split()
    stoplist = firm_suffixes if kind == EntityKind.FIRM else honorifics
    kept = [t for t in tokens if t not in stoplist]
    # a name made only of stoplist tokens keeps them rather than vanishing
    if not kept:
        kept = tokens
    return " ".join(kept)


@dataclass(frozen=True)
class GroupProposal:
    kind: EntityKind
    normalized_key: str
    members: tuple[str, ...]

    @property
    def key(self) -> str:
        """Qualified key used by alignment decisions."""
        return f"{self.kind.value}:{self.normalized_key}"


@dataclass(frozen=True)
class AlignmentDecision:
    action: str  # "merge" | "split"
    targets: tuple[str, ...]  # qualified proposal keys
    confirmed_by: str = ""
    timestamp: str = ""

    def to_dict(self) -> dict:
        return {
            "action": self.action,
            "targets": list(self.targets),
            "confirmed_by": self.confirmed_by,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AlignmentDecision":
        action = d.get("action")
        if action not in ("merge", "split"):
            raise ParseError(f"bad decision action {action!r}")
        return cls(
            action=action,
            targets=tuple(d.get("targets", ())),
            confirmed_by=d.get("confirmed_by", ""),
            timestamp=d.get("timestamp", ""),
        )


@dataclass(frozen=True)
class EntityGroup:
    group_id: str
    kind: EntityKind
    canonical: str
    members: tuple[str, ...]
    keys: tuple[str, ...]  # normalized keys folded into this group


@dataclass
class EntityRegistry:
    groups: dict[str, EntityGroup] = field(default_factory=dict)
    _key_to_group: dict[str, str] = field(default_factory=dict)

    def group_of(self, raw: str, kind: EntityKind) -> str | None:
        qualified = f"{kind.value}:{normalize_entity(raw, kind)}"
        return self._key_to_group.get(qualified)

    def count(self, kind: EntityKind) -> int:
        return sum(1 for g in self.groups.values() if g.kind == kind)

    def to_dict(self) -> dict:
        return {
            "groups": [
                {
                    "group_id": g.group_id,
                    "kind": g.kind.value,
                    "canonical": g.canonical,
                    "members": list(g.members),
                    "keys": list(g.keys),
                }
                for _, g in sorted(self.groups.items())
            ]
        }


def propose_groups(surface_forms: Iterable[tuple[str, EntityKind]]) -> list[GroupProposal]:
    """Partition surface strings by normalized key; one proposal per key."""
    buckets: dict[tuple[EntityKind, str], list[str]] = {}
    for raw, kind in surface_forms:
        key = normalize_entity(raw, kind)
        buckets.setdefault((kind, key), []).append(raw)
    proposals = [
        GroupProposal(kind=kind, normalized_key=key, members=tuple(members))
        for (kind, key), members in buckets.items()
    ]
    proposals.sort(key=lambda p: (p.kind.value, p.normalized_key))
    return proposals


def _slug(key: str) -> str:
    return key.replace(" ", "-")


def apply_alignment(
    proposals: Sequence[GroupProposal],
    decisions: Sequence[AlignmentDecision],
) -> EntityRegistry:
    """Replay human merge/split decisions over proposals into a partition.

    Merges never chain implicitly: a proposal referenced by two merge
    decisions with different target sets is a conflict. Splits extract a
    proposal back into its own group and apply in decision order.
    """
    by_key = {p.key: p for p in proposals}
    merge_sets: dict[str, frozenset[str]] = {}
    for d in decisions:
        for t in d.targets:
            if t not in by_key:
                raise UnknownProposal(t)
        if d.action == "merge":
            targets = frozenset(d.targets)
            for t in d.targets:
                prior = merge_sets.get(t)
                if prior is not None and prior != targets:
                    raise ConflictingDecisions(
                        f"{t} merged into two different groups"
                    )
                merge_sets[t] = targets

    partition: dict[str, set[str]] = {k: {k} for k in by_key}
    for d in decisions:
        if d.action == "merge":
            union: set[str] = set()
            for t in d.targets:
                union |= partition[t]
            for member in union:
                partition[member] = union
        else:  # split
            for t in d.targets:
                partition[t].discard(t)
                partition[t] = {t}

    registry = EntityRegistry()
    done: set[frozenset[str]] = set()
    for key in sorted(partition):
        group_keys = frozenset(partition[key])
        if group_keys in done:
            continue
        done.add(group_keys)
        sorted_keys = sorted(group_keys)
        kind = by_key[sorted_keys[0]].kind
        members: list[str] = []
        for k in sorted_keys:
            members.extend(by_key[k].members)
        counts: dict[str, int] = {}
        for m in members:
            counts[m] = counts.get(m, 0) + 1
        canonical = sorted(counts, key=lambda m: (-counts[m], m))[0]
        lead_key = sorted_keys[0].split(":", 1)[1]
        group = EntityGroup(
            group_id=f"{kind.value}:{_slug(lead_key)}",
            kind=kind,
            canonical=canonical,
            members=tuple(sorted(set(members))),
            keys=tuple(k.split(":", 1)[1] for k in sorted_keys),
        )
        registry.groups[group.group_id] = group
        for k in sorted_keys:
            registry._key_to_group[k] = group.group_id
    return registry


def parse_decisions_jsonl(text: str) -> list[AlignmentDecision]:
    decisions = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            decisions.append(AlignmentDecision.from_dict(json.loads(line)))
        except json.JSONDecodeError as e:
            raise ParseError(f"decisions line {lineno}: {e}") from None
    return decisions


def registry_from_store(
    documents: Iterable[SourceDocument],
    decisions: Sequence[AlignmentDecision],
) -> EntityRegistry:
    """Rebuild the registry from inspection-report metadata plus decisions."""
    forms: list[tuple[str, EntityKind]] = []
    for doc in documents:
        if doc.kind != DocKind.FORM483:
            continue
        if doc.firm:
            forms.append((doc.firm, EntityKind.FIRM))
        for name in doc.inspectors:
            forms.append((name, EntityKind.INSPECTOR))
    proposals = propose_groups(forms)
    known = {p.key for p in proposals}
    # decisions may cite entities not yet re-ingested; keep only applicable ones
    applicable = [d for d in decisions if all(t in known for t in d.targets)]
    return apply_alignment(proposals, applicable)


def resolve_observation_groups(
    observations: Iterable[Observation], registry: EntityRegistry
) -> list[Observation]:
    resolved = []
    for obs in observations:
        firm_group = (
            registry.group_of(obs.firm_name, EntityKind.FIRM) if obs.firm_name else None
        )
        inspector_groups = tuple(
            g
            for g in (
                registry.group_of(n, EntityKind.INSPECTOR) for n in obs.inspector_names
            )
            if g is not None
        )
        resolved.append(obs.with_groups(firm_group, inspector_groups))
    return resolved


def utc_timestamp() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()
