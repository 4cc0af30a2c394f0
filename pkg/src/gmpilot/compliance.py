"""CFR regulatory tree, citation extraction, and risk profiling.

The tree ships with the explicitly supported parts (drug cGMP, submissions,
and the biologics range); the full deployment part list is a manifest file,
one `part<TAB>category<TAB>title` record per line.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Collection, Iterable, Mapping, Sequence

from .errors import DuplicatePart, ParseError

if TYPE_CHECKING:  # pragma: no cover
    from .corpus import Chunk, Observation

_DEFAULT_MANIFEST = Path(__file__).parent / "data" / "cfr_manifest.tsv"


class CfrCategory(str, Enum):
    CORE_CGMP = "core_cgmp"
    SUBMISSION = "submission"
    BIOLOGICS = "biologics"
    OTHER = "other"


@dataclass(frozen=True)
class CfrPart:
    number: int
    category: CfrCategory
    title: str


@dataclass(frozen=True)
class CfrRef:
    """One parsed citation, keeping the exact source text it came from."""

    part: int
    section: int | None = None
    subpart: str | None = None
    source: str = ""

    def key(self) -> tuple[int, int | None, str | None]:
        return (self.part, self.section, self.subpart)

    def label(self) -> str:
        text = f"21 CFR {self.part}"
        if self.section is not None:
            text += f".{self.section}"
        if self.subpart is not None:
            text += f"({self.subpart})"
        return text

    def to_dict(self) -> dict:
        return {
            "part": self.part,
            "section": self.section,
            "subpart": self.subpart,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CfrRef":
        return cls(
            part=int(d["part"]),
            section=d.get("section"),
            subpart=d.get("subpart"),
            source=d.get("source", ""),
        )


class CfrTree:
    """Immutable part registry loaded from a manifest."""

    def __init__(self, parts: Iterable[CfrPart]):
        self._parts: dict[int, CfrPart] = {}
        for part in parts:
            if part.number in self._parts:
                raise DuplicatePart(f"part {part.number} listed twice")
            self._parts[part.number] = part

    def __contains__(self, number: int) -> bool:
        return number in self._parts

    def __len__(self) -> int:
        return len(self._parts)

    def get(self, number: int) -> CfrPart | None:
        return self._parts.get(number)

    def part_numbers(self) -> list[int]:
        return sorted(self._parts)

    def serialize(self) -> str:
        lines = []
        for number in sorted(self._parts):
            part = self._parts[number]
            lines.append(f"{part.number}\t{part.category.value}\t{part.title}")
        return "\n".join(lines) + ("\n" if lines else "")


def load_cfr_tree(manifest_text: str) -> CfrTree:
    """Parse a tab-separated part manifest into a tree."""
    parts = []
    for lineno, line in enumerate(manifest_text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(f"line {lineno}: expected 3 tab-separated fields")
        raw_num, raw_cat, title = fields
        try:
            number = int(raw_num.strip())
        except ValueError:
            raise ParseError(f"line {lineno}: bad part number {raw_num!r}") from None
        try:
            category = CfrCategory(raw_cat.strip())
        except ValueError:
            raise ParseError(f"line {lineno}: bad category {raw_cat!r}") from None
        parts.append(CfrPart(number=number, category=category, title=title.strip()))
    return CfrTree(parts)


def default_tree() -> CfrTree:
    return load_cfr_tree(_DEFAULT_MANIFEST.read_text(encoding="utf-8"))


# --- citation extraction ----------------------------------------------------

# Three citation shapes, most specific first so finditer never double-counts:
# "21 CFR 211.113(b)" / "21 CFR Part 312", "Part 312", and bare "211.42(c)".
# Bare matches are accepted only for parts present in the supplied part list;
# the prefixed forms are always citations even when the part is off-tree.
_CITATION_RE = re.compile(
    r"""
    (?P<full>
        21\s*C\.?\s*F\.?\s*R\.?\s*(?:Part\s+)?
        (?P<p1>\d{1,4})(?:\.(?P<s1>\d+))?(?:\((?P<sub1>[a-z0-9]{1,3})\))?
    )
    |
    (?P<partform>\bPart\s+(?P<p2>\d{1,4})\b)
    |
    (?P<bare>\b(?P<p3>\d{1,4})\.(?P<s3>\d+)(?:\((?P<sub3>[a-z0-9]{1,3})\))?)
    """,
    re.IGNORECASE | re.VERBOSE,
)


def extract_citations(text: str, known_parts: Collection[int]) -> list[CfrRef]:
    """Find CFR citations in free text, in order of appearance."""
    refs: list[CfrRef] = []
    seen: set[tuple] = set()
    for m in _CITATION_RE.finditer(text):
        if m.group("full"):
            part, section, sub = m.group("p1"), m.group("s1"), m.group("sub1")
        elif m.group("partform"):
            part, section, sub = m.group("p2"), None, None
        else:
            part, section, sub = m.group("p3"), m.group("s3"), m.group("sub3")
            if int(part) not in known_parts:
                continue
        ref = CfrRef(
            part=int(part),
            section=int(section) if section is not None else None,
            subpart=sub.lower() if sub is not None else None,
            source=m.group(0),
        )
        if ref.key() not in seen:
            seen.add(ref.key())
            refs.append(ref)
    return refs


def map_observation(obs: "Observation", tree: CfrTree) -> tuple[list[int], list[int]]:
    """Distinct cited part numbers split into (in-tree, off-tree), ascending."""
    known: set[int] = set()
    unknown: set[int] = set()
    for ref in obs.cited_refs:
        (known if ref.part in tree else unknown).add(ref.part)
    return sorted(known), sorted(unknown)


# --- risk profiling ---------------------------------------------------------

@dataclass(frozen=True)
class ObservationFilter:
    firm_group: str | None = None
    parts: frozenset[int] | None = None
    since: datetime | None = None
    until: datetime | None = None


@dataclass
class RiskReport:
    part_counts: dict[int, int]
    firm_counts: dict[str, int]
    top_parts: list[tuple[int, int]]
    generated_at: datetime

    def to_dict(self) -> dict:
        return {
            "part_counts": {str(k): v for k, v in sorted(self.part_counts.items())},
            "firm_counts": dict(sorted(self.firm_counts.items())),
            "top_parts": [[p, c] for p, c in self.top_parts],
            "generated_at": self.generated_at.isoformat(),
        }


def risk_profile(
    observations: Iterable["Observation"],
    tree: CfrTree,
    flt: ObservationFilter | None = None,
    top_n: int = 10,
    ingested_at: Mapping[str, datetime] | None = None,
) -> RiskReport:
    """Observation-frequency counts per cited part and per firm group.

    Date filtering needs an `ingested_at` map (doc_id -> timestamp); without
    it, date bounds are ignored.
    """
    flt = flt or ObservationFilter()
    part_counts: Counter[int] = Counter()
    firm_counts: Counter[str] = Counter()
    for obs in observations:
        if flt.firm_group is not None and obs.firm_group != flt.firm_group:
            continue
        known, _ = map_observation(obs, tree)
        if flt.parts is not None and not (set(known) & flt.parts):
            continue
        if ingested_at is not None and obs.doc_id in ingested_at:
            ts = ingested_at[obs.doc_id]
            if flt.since is not None and ts < flt.since:
                continue
            if flt.until is not None and ts > flt.until:
                continue
        for part in known:
            part_counts[part] += 1
        if obs.firm_group is not None:
            firm_counts[obs.firm_group] += 1
    ranked = sorted(part_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return RiskReport(
        part_counts=dict(part_counts),
        firm_counts=dict(firm_counts),
        top_parts=ranked[:top_n],
        generated_at=datetime.now(timezone.utc),
    )


# --- checklist scaffold -----------------------------------------------------

@dataclass(frozen=True)
class ChecklistRow:
    """Pre-populated checklist row handed to the synthesis prompt.

    Rows are seeded with their supporting citations so the generated
    checklist can never contain an item without evidence.
    """

    kind: str  # "regulation" | "precedent"
    reference: str  # "211.42" style for regulations, chunk id for precedents
    risk_summary: str
    action_item: str
    citations: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "reference": self.reference,
            "risk_summary": self.risk_summary,
            "action_item": self.action_item,
            "citations": list(self.citations),
        }


def build_checklist(
    topic: str, evidence: Sequence["Chunk"], tree: CfrTree
) -> list[ChecklistRow]:
    """One row per distinct cited regulation section, one per precedent chunk.

    Duplicate citations of the same section merge into a single row whose
    citation list accumulates every supporting chunk id.
    """
    from .corpus import DocKind  # local import to avoid a module cycle

    section_cites: dict[tuple[int, int | None], list[str]] = {}
    precedent_rows: list[ChecklistRow] = []
    for chunk in evidence:
        if chunk.kind == DocKind.REGULATORY:
            for ref in extract_citations(chunk.text, tree.part_numbers()):
                key = (ref.part, ref.section)
                ids = section_cites.setdefault(key, [])
                if chunk.chunk_id not in ids:
                    ids.append(chunk.chunk_id)
        elif chunk.kind == DocKind.FORM483:
            precedent_rows.append(
                ChecklistRow(
                    kind="precedent",
                    reference=chunk.chunk_id,
                    risk_summary=f"Recurrence of the deficiency in inspection record {chunk.chunk_id}",
                    action_item=f"Assess whether the conditions in {chunk.chunk_id} apply to {topic}",
                    citations=(chunk.chunk_id,),
                )
            )

    rows: list[ChecklistRow] = []
    for part, section in sorted(section_cites, key=lambda k: (k[0], k[1] if k[1] is not None else -1)):
        label = f"21 CFR {part}" + (f".{section}" if section is not None else "")
        rows.append(
            ChecklistRow(
                kind="regulation",
                reference=f"{part}.{section}" if section is not None else str(part),
                risk_summary=f"Potential noncompliance with {label}",
                action_item=f"Verify and document compliance with {label} for {topic}",
                citations=tuple(sorted(section_cites[(part, section)])),
            )
        )
    precedent_rows.sort(key=lambda r: r.reference)
    rows.extend(precedent_rows)
    return rows
