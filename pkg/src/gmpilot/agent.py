"""Query agent: plan, retrieve per sub-goal, observe, synthesize.

The loop speaks a strict line protocol with its LLM backend so every run
is deterministic and scriptable:

    THOUGHT: <free text>
    ACTION: retrieve(corpus=<regulations|cases|qa>, query="<text>")
    FINAL: <JSON payload>

A planning call decomposes the query into retrieval sub-goals (one ACTION
line each); each sub-goal becomes one retrieval tool call; a synthesis
call produces the FINAL dossier payload, whose citations are validated
against the evidence actually retrieved. Malformed planning replies fall
back to a single-retrieval plan; malformed synthesis replies get exactly
one correction retry.
"""

from __future__ import annotations

import json
import math
import re
import socket
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterator, Sequence

from .compliance import CfrTree, build_checklist, default_tree
from .corpus import Chunk, DocKind
from .errors import (
    BackendUnavailable,
    BudgetExhausted,
    ContextOverflow,
    EmptyQuery,
    QueryAloneExceedsBudget,
    Timeout,
    UnparseableFinal,
)
from .retrieval import (
    DEFAULT_RETRIEVAL_CONFIG,
    IndexSnapshot,
    Reranker,
    RetrievalConfig,
    retrieve,
)

DEFAULT_CONTEXT_WINDOW = 131_072
DEFAULT_MAX_STEPS = 8

INSUFFICIENT_EVIDENCE_DISCLAIMER = (
    "Insufficient evidence: no retrieved content met the similarity threshold. "
    "No regulatory basis, precedent, or checklist item can be supported."
)
STANDARD_DISCLAIMER = (
    "Generated from retrieved evidence; verify against official sources before acting."
)


def estimate_tokens(text: str) -> int:
    """Default token estimate: one token per four characters, rounded up."""
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class BackendConfig:
    context_window: int = DEFAULT_CONTEXT_WINDOW
    max_steps: int = DEFAULT_MAX_STEPS
    token_estimator: Callable[[str], int] | None = None

    def estimate(self, text: str) -> int:
        est = self.token_estimator or estimate_tokens
        return est(text)


DEFAULT_BACKEND_CONFIG = BackendConfig()


# --- task plans ----------------------------------------------------------------

class ToolHint(str, Enum):
    REGULATIONS = "regulations"
    CASES = "cases"
    QA = "qa"
    SYNTHESIZE = "synthesize"


_HINT_TO_KIND = {
    ToolHint.REGULATIONS: DocKind.REGULATORY,
    ToolHint.CASES: DocKind.FORM483,
    ToolHint.QA: DocKind.QA,
}


class PlanMode(str, Enum):
    SIMPLE = "simple"
    COMPLEX = "complex"


@dataclass(frozen=True)
class SubGoal:
    description: str
    tool_hint: ToolHint
    query: str = ""


@dataclass(frozen=True)
class TaskPlan:
    mode: PlanMode
    sub_goals: tuple[SubGoal, ...]
    rationale: str = ""
    fallback: bool = False

    @property
    def retrieval_goals(self) -> tuple[SubGoal, ...]:
        return tuple(g for g in self.sub_goals if g.tool_hint != ToolHint.SYNTHESIZE)


# --- transcripts -----------------------------------------------------------------

class StepKind(str, Enum):
    THOUGHT = "thought"
    ACTION = "action"
    OBSERVATION = "observation"
    FINAL = "final"


@dataclass(frozen=True)
class AgentStep:
    kind: StepKind
    content: str
    tool_call: tuple[str, dict] | None = None
    evidence: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "content": self.content,
            "tool_call": (
                {"tool": self.tool_call[0], "arguments": self.tool_call[1]}
                if self.tool_call
                else None
            ),
            "evidence": list(self.evidence),
        }


@dataclass
class AgentTranscript:
    steps: list[AgentStep] = field(default_factory=list)
    token_usage: int = 0
    partial: bool = False

    def action_count(self) -> int:
        return sum(1 for s in self.steps if s.kind == StepKind.ACTION)

    def evidence_ids(self) -> list[str]:
        seen: list[str] = []
        for step in self.steps:
            if step.kind == StepKind.OBSERVATION:
                for cid in step.evidence:
                    if cid not in seen:
                        seen.append(cid)
        return seen


# --- structured answers -----------------------------------------------------------

@dataclass(frozen=True)
class BasisEntry:
    chunk_id: str
    excerpt: str


@dataclass(frozen=True)
class PrecedentEntry:
    chunk_id: str
    summary: str


@dataclass(frozen=True)
class ChecklistItem:
    risk: str
    action: str
    citations: tuple[str, ...]
    unsupported: bool = False


@dataclass(frozen=True)
class StructuredAnswer:
    regulatory_basis: tuple[BasisEntry, ...] = ()
    precedents: tuple[PrecedentEntry, ...] = ()
    checklist: tuple[ChecklistItem, ...] = ()
    disclaimer: str = STANDARD_DISCLAIMER

    def to_dict(self) -> dict:
        return {
            "regulatory_basis": [
                {"chunk_id": e.chunk_id, "excerpt": e.excerpt} for e in self.regulatory_basis
            ],
            "precedents": [
                {"chunk_id": e.chunk_id, "summary": e.summary} for e in self.precedents
            ],
            "checklist": [
                {
                    "risk": i.risk,
                    "action": i.action,
                    "citations": list(i.citations),
                    "unsupported": i.unsupported,
                }
                for i in self.checklist
            ],
            "disclaimer": self.disclaimer,
        }

    def to_json(self) -> str:
        """Canonical serialization; identical answers are byte-identical."""
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))

    def cited_ids(self) -> set[str]:
        ids = {e.chunk_id for e in self.regulatory_basis}
        ids |= {e.chunk_id for e in self.precedents}
        for item in self.checklist:
            ids |= set(item.citations)
        return ids


def _require_str(value, what: str) -> str:
    if not isinstance(value, str):
        raise ValueError(f"{what} must be a string")
    return value


def parse_answer_payload(payload: dict, valid_ids: set[str]) -> StructuredAnswer:
    """Validate the FINAL payload; strip citations that resolve to nothing.

    A checklist item that cited any unknown id is kept but flagged when at
    least one real citation remains; with no real citations left it is
    dropped outright, so every emitted item stays evidence-backed.
    """
    if not isinstance(payload, dict):
        raise ValueError("payload must be a JSON object")
    basis = []
    for entry in _as_list(payload.get("regulatory_basis", [])):
        cid = _require_str(entry.get("chunk_id"), "regulatory_basis.chunk_id")
        if cid in valid_ids:
            basis.append(BasisEntry(chunk_id=cid, excerpt=_require_str(entry.get("excerpt", ""), "excerpt")))
    precedents = []
    for entry in _as_list(payload.get("precedents", [])):
        cid = _require_str(entry.get("chunk_id"), "precedents.chunk_id")
        if cid in valid_ids:
            precedents.append(PrecedentEntry(chunk_id=cid, summary=_require_str(entry.get("summary", ""), "summary")))
    checklist = []
    for entry in _as_list(payload.get("checklist", [])):
        risk = _require_str(entry.get("risk"), "checklist.risk")
        action = _require_str(entry.get("action"), "checklist.action")
        cites = entry.get("citations", [])
        if not isinstance(cites, list) or not all(isinstance(c, str) for c in cites):
            raise ValueError("checklist.citations must be a list of strings")
        kept = tuple(c for c in cites if c in valid_ids)
        if not kept:
            continue
        checklist.append(
            ChecklistItem(risk=risk, action=action, citations=kept, unsupported=len(kept) < len(cites))
        )
    disclaimer = payload.get("disclaimer", STANDARD_DISCLAIMER)
    return StructuredAnswer(
        regulatory_basis=tuple(basis),
        precedents=tuple(precedents),
        checklist=tuple(checklist),
        disclaimer=_require_str(disclaimer, "disclaimer"),
    )


def _as_list(value) -> list:
    if not isinstance(value, list):
        raise ValueError("section must be a list")
    for entry in value:
        if not isinstance(entry, dict):
            raise ValueError("section entries must be objects")
    return value


# --- backends -----------------------------------------------------------------------

class LLMBackend:
    """Completion contract: one prompt string in, one reply string out."""

    def complete(self, prompt: str) -> str:  # pragma: no cover - interface
        raise NotImplementedError


class MockBackend(LLMBackend):
    """Scripted backend: replies consumed in call order with marker checks."""

    def __init__(self, script: Sequence[dict]):
        self.script = list(script)
        self.calls = 0

    @classmethod
    def from_jsonl(cls, path: Path | str) -> "MockBackend":
        entries = []
        for line in Path(path).read_text(encoding="utf-8").split("\n"):
            if line.strip():
                entries.append(json.loads(line))
        return cls(entries)

    def complete(self, prompt: str) -> str:
        if self.calls >= len(self.script):
            raise BackendUnavailable(f"mock script exhausted after {self.calls} calls")
        entry = self.script[self.calls]
        self.calls += 1
        marker = entry.get("expect_marker", "")
        if marker and marker not in prompt:
            raise BackendUnavailable(
                f"mock script call {self.calls}: marker {marker!r} not in prompt"
            )
        return entry["reply"]


_EVIDENCE_BLOCK = re.compile(
    r"\[chunk:(?P<id>[^\]]+)\] \(kind=(?P<kind>\w+), score=[0-9.]+\)\n"
    r"(?P<text>.*?)(?=\n\n\[chunk:|\n\n== |\Z)",
    re.DOTALL,
)
_SCAFFOLD_LINE = re.compile(r"^SCAFFOLD_JSON: (.*)$", re.MULTILINE)
_QUERY_SECTION = re.compile(r"== QUERY ==\n(.*)\Z", re.DOTALL)


class AutoMockBackend(LLMBackend):
    """Deterministic rule-based backend for offline runs.

    Planning prompts get a single-retrieval plan over the regulations
    corpus; synthesis prompts get a payload that excerpts every evidence
    chunk and copies the checklist scaffold verbatim.
    """

    def complete(self, prompt: str) -> str:
        if PLANNING_MARKER in prompt:
            m = _QUERY_SECTION.search(prompt)
            query = " ".join(m.group(1).split()) if m else "regulatory requirements"
            return (
                "THOUGHT: A direct regulation lookup should answer this.\n"
                f'ACTION: retrieve(corpus=regulations, query="{query}")\n'
                "FINAL: synthesize"
            )
        if SYNTHESIS_MARKER in prompt:
            return "FINAL: " + json.dumps(self._synthesis_payload(prompt), ensure_ascii=False)
        raise BackendUnavailable("auto-mock cannot interpret this prompt")

    def _synthesis_payload(self, prompt: str) -> dict:
        basis, precedents = [], []
        for m in _EVIDENCE_BLOCK.finditer(prompt):
            excerpt = " ".join(m.group("text").split())[:200]
            if m.group("kind") == DocKind.REGULATORY.value:
                basis.append({"chunk_id": m.group("id"), "excerpt": excerpt})
            elif m.group("kind") == DocKind.FORM483.value:
                precedents.append({"chunk_id": m.group("id"), "summary": excerpt})
        checklist = []
        sm = _SCAFFOLD_LINE.search(prompt)
        if sm:
            for row in json.loads(sm.group(1)):
                checklist.append(
                    {
                        "risk": row["risk_summary"],
                        "action": row["action_item"],
                        "citations": row["citations"],
                    }
                )
        return {
            "regulatory_basis": basis,
            "precedents": precedents,
            "checklist": checklist,
            "disclaimer": "Automated summary of retrieved evidence; verify against official sources before acting.",
        }


class RemoteBackend(LLMBackend):
    """HTTP completion: POST {"prompt", "max_tokens"} -> {"text"}."""

    def __init__(self, url: str, timeout: float = 30.0, max_tokens: int = 2048):
        self.url = url
        self.timeout = timeout
        self.max_tokens = max_tokens

    def complete(self, prompt: str) -> str:
        payload = json.dumps({"prompt": prompt, "max_tokens": self.max_tokens}).encode("utf-8")
        req = urllib.request.Request(
            self.url, data=payload, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except socket.timeout as e:
            raise Timeout(f"backend at {self.url} timed out after {self.timeout}s") from e
        except urllib.error.URLError as e:
            if isinstance(e.reason, socket.timeout):
                raise Timeout(f"backend at {self.url} timed out after {self.timeout}s") from e
            raise BackendUnavailable(f"backend at {self.url}: {e}") from e
        except (OSError, ValueError) as e:
            raise BackendUnavailable(f"backend at {self.url}: {e}") from e
        if "text" not in body:
            raise BackendUnavailable(f"backend at {self.url}: reply missing 'text'")
        return str(body["text"])


def llm_complete(prompt: str, backend: LLMBackend, cfg: BackendConfig = DEFAULT_BACKEND_CONFIG) -> str:
    """One completion call, guarded locally against context overflow."""
    if cfg.estimate(prompt) > cfg.context_window:
        raise ContextOverflow(
            f"prompt estimate {cfg.estimate(prompt)} tokens exceeds window {cfg.context_window}"
        )
    return backend.complete(prompt)


# --- prompt assembly ----------------------------------------------------------------

PLANNING_MARKER = "== TASK PLANNING =="
SYNTHESIS_MARKER = "== SYNTHESIS =="

SYSTEM_ROLE = (
    "You are a pharmaceutical quality and regulatory compliance assistant. "
    "Ground every statement in the supplied evidence and cite chunk ids."
)

_PLANNING_INSTRUCTIONS = (
    PLANNING_MARKER
    + "\nDecompose the query into retrieval sub-goals. Reply only with protocol lines:\n"
    '  THOUGHT: <reasoning>\n'
    '  ACTION: retrieve(corpus=<regulations|cases|qa>, query="<search text>")\n'
    "  FINAL: synthesize\n"
    "Use one ACTION line per sub-goal, at least one."
)

_SYNTHESIS_INSTRUCTIONS = (
    SYNTHESIS_MARKER
    + "\nProduce the final dossier as one line starting with 'FINAL: ' followed by a JSON object with keys\n"
    'regulatory_basis (list of {"chunk_id","excerpt"}), precedents (list of {"chunk_id","summary"}),\n'
    'checklist (list of {"risk","action","citations"}), disclaimer (string).\n'
    "Cite only chunk ids present in the evidence. Start from the scaffold rows; never add a row without citations."
)

_CORRECTION_NOTE = (
    "== CORRECTION ==\n"
    "The previous reply violated the required format. Reply again following the instructions exactly."
)


def _format_evidence(evidence: Sequence[tuple[Chunk, float]]) -> str:
    if not evidence:
        return "No evidence retrieved."
    blocks = []
    for chunk, score in evidence:
        blocks.append(
            f"[chunk:{chunk.chunk_id}] (kind={chunk.kind.value}, score={score:.4f})\n{chunk.text}"
        )
    return "\n\n".join(blocks)


def build_prompt(
    system_role: str,
    plan_context: str,
    evidence: Sequence[tuple[Chunk, float]],
    query: str,
    cfg: BackendConfig = DEFAULT_BACKEND_CONFIG,
) -> str:
    """Assemble a prompt, dropping lowest-scored evidence until it fits."""
    ordered = sorted(evidence, key=lambda cs: (-cs[1], cs[0].chunk_id))
    while True:
        prompt = "\n\n".join(
            [
                system_role,
                plan_context,
                "== EVIDENCE ==\n" + _format_evidence(ordered),
                "== QUERY ==\n" + query,
            ]
        )
        if cfg.estimate(prompt) <= cfg.context_window:
            return prompt
        if not ordered:
            raise QueryAloneExceedsBudget(
                f"prompt estimate {cfg.estimate(prompt)} exceeds window {cfg.context_window} "
                "with no evidence left to drop"
            )
        ordered = ordered[:-1]


# --- protocol parsing ------------------------------------------------------------------

_ACTION_LINE = re.compile(
    r'^\s*ACTION:\s*retrieve\(\s*corpus\s*=\s*(regulations|cases|qa)\s*,\s*query\s*=\s*"(.*)"\s*\)\s*$'
)
_THOUGHT_LINE = re.compile(r"^\s*THOUGHT:\s*(.*)$")
_FINAL_LINE = re.compile(r"^\s*FINAL:\s*(.*)$", re.DOTALL)


def parse_plan_reply(reply: str) -> TaskPlan | None:
    """Parse a planning reply; None when no usable ACTION line is present."""
    thoughts: list[str] = []
    goals: list[SubGoal] = []
    for line in reply.splitlines():
        m = _THOUGHT_LINE.match(line)
        if m:
            thoughts.append(m.group(1).strip())
            continue
        m = _ACTION_LINE.match(line)
        if m:
            corpus, q = m.group(1), m.group(2)
            if q.strip():
                goals.append(
                    SubGoal(
                        description=f"retrieve {corpus}: {q}",
                        tool_hint=ToolHint(corpus),
                        query=q,
                    )
                )
    if not goals:
        return None
    goals.append(SubGoal(description="synthesize structured answer", tool_hint=ToolHint.SYNTHESIZE))
    return TaskPlan(
        mode=PlanMode.SIMPLE if len(goals) == 2 else PlanMode.COMPLEX,
        sub_goals=tuple(goals),
        rationale=" ".join(thoughts),
    )


def parse_final_payload(reply: str) -> dict | None:
    """Extract and decode the JSON payload of the first FINAL line."""
    for idx, line in enumerate(reply.splitlines()):
        m = _FINAL_LINE.match(line)
        if m:
            remainder = "\n".join([m.group(1)] + reply.splitlines()[idx + 1 :])
            try:
                payload = json.loads(remainder)
            except json.JSONDecodeError:
                return None
            return payload if isinstance(payload, dict) else None
    return None


# --- planning and synthesis ---------------------------------------------------------------

@dataclass
class TokenMeter:
    used: int = 0

    def add(self, cfg: BackendConfig, *texts: str) -> None:
        for t in texts:
            self.used += cfg.estimate(t)


def _fallback_plan(query: str) -> TaskPlan:
    return TaskPlan(
        mode=PlanMode.SIMPLE,
        sub_goals=(
            SubGoal(description=f"retrieve regulations: {query}", tool_hint=ToolHint.REGULATIONS, query=query),
            SubGoal(description="synthesize structured answer", tool_hint=ToolHint.SYNTHESIZE),
        ),
        fallback=True,
    )


def classify_task(
    query: str,
    backend: LLMBackend,
    cfg: BackendConfig = DEFAULT_BACKEND_CONFIG,
    meter: TokenMeter | None = None,
) -> TaskPlan:
    """One planning call; malformed replies fall back to a simple plan."""
    if not query.strip():
        raise EmptyQuery("empty agent query")
    prompt = build_prompt(SYSTEM_ROLE, _PLANNING_INSTRUCTIONS, [], query, cfg)
    reply = llm_complete(prompt, backend, cfg)
    if meter:
        meter.add(cfg, prompt, reply)
    plan = parse_plan_reply(reply)
    return plan if plan is not None else _fallback_plan(query)


def synthesize(
    query: str,
    evidence: Sequence[tuple[Chunk, float]],
    backend: LLMBackend,
    cfg: BackendConfig = DEFAULT_BACKEND_CONFIG,
    tree: CfrTree | None = None,
    meter: TokenMeter | None = None,
) -> StructuredAnswer:
    """One synthesis call validated against the evidence set.

    Empty evidence short-circuits to the insufficient-evidence answer
    without consulting the backend, so nothing can be fabricated.
    """
    if not evidence:
        return StructuredAnswer(disclaimer=INSUFFICIENT_EVIDENCE_DISCLAIMER)
    tree = tree or default_tree()
    scaffold = build_checklist(query, [c for c, _ in evidence], tree)
    scaffold_line = "SCAFFOLD_JSON: " + json.dumps(
        [row.to_dict() for row in scaffold], ensure_ascii=False
    )
    instructions = _SYNTHESIS_INSTRUCTIONS + "\n" + scaffold_line
    valid_ids = {c.chunk_id for c, _ in evidence}
    prompt = build_prompt(SYSTEM_ROLE, instructions, evidence, query, cfg)
    reply = llm_complete(prompt, backend, cfg)
    if meter:
        meter.add(cfg, prompt, reply)
    for attempt in range(2):
        payload = parse_final_payload(reply)
        if payload is not None:
            try:
                return parse_answer_payload(payload, valid_ids)
            except ValueError:
                pass
        if attempt == 0:
            retry_prompt = build_prompt(
                SYSTEM_ROLE, instructions + "\n\n" + _CORRECTION_NOTE, evidence, query, cfg
            )
            reply = llm_complete(retry_prompt, backend, cfg)
            if meter:
                meter.add(cfg, retry_prompt, reply)
    raise UnparseableFinal("synthesis reply violates the answer schema after one retry")


# --- the loop ---------------------------------------------------------------------------

@dataclass
class ReactState:
    """Mutable run state shared between the step generator and its caller."""

    steps: list[AgentStep] = field(default_factory=list)
    answer: StructuredAnswer | None = None
    token_usage: int = 0


def react_steps(
    query: str,
    snapshot: IndexSnapshot,
    bcfg: BackendConfig = DEFAULT_BACKEND_CONFIG,
    rcfg: RetrievalConfig = DEFAULT_RETRIEVAL_CONFIG,
    backend: LLMBackend | None = None,
    tree: CfrTree | None = None,
    reranker: Reranker | None = None,
    state: ReactState | None = None,
) -> Iterator[AgentStep]:
    """Run the loop, yielding steps as they happen.

    The caller owns error handling; typed errors raised here leave the
    partial step list on `state`.
    """
    backend = backend or AutoMockBackend()
    state = state if state is not None else ReactState()
    meter = TokenMeter()

    def emit(step: AgentStep) -> AgentStep:
        state.steps.append(step)
        state.token_usage = meter.used
        return step

    plan = classify_task(query, backend, bcfg, meter=meter)
    goal_list = ", ".join(g.description for g in plan.retrieval_goals)
    content = f"Plan ({plan.mode.value}): {goal_list}"
    if plan.fallback:
        content += " [warning: planning reply was malformed; fell back to a simple plan]"
    yield emit(AgentStep(kind=StepKind.THOUGHT, content=content))

    evidence: dict[str, tuple[Chunk, float]] = {}
    actions = 0
    for goal in plan.retrieval_goals:
        if actions >= bcfg.max_steps:
            raise BudgetExhausted(
                f"step budget of {bcfg.max_steps} actions reached before completion"
            )
        yield emit(
            AgentStep(
                kind=StepKind.THOUGHT,
                content=f"Sub-goal: {goal.description}",
            )
        )
        yield emit(
            AgentStep(
                kind=StepKind.ACTION,
                content=f'retrieve(corpus={goal.tool_hint.value}, query="{goal.query}")',
                tool_call=("retrieve", {"corpus": goal.tool_hint.value, "query": goal.query}),
            )
        )
        actions += 1
        view = snapshot.for_kind(_HINT_TO_KIND[goal.tool_hint])
        result = retrieve(view, goal.query, rcfg, reranker)
        for hit in result.hits:
            chunk = view.chunks[hit.chunk_id]
            prev = evidence.get(hit.chunk_id)
            if prev is None or hit.rerank_score > prev[1]:
                evidence[hit.chunk_id] = (chunk, hit.rerank_score)
        if result.hits:
            summary = ", ".join(f"{h.chunk_id} ({h.rerank_score:.4f})" for h in result.hits)
            content = f"{len(result.hits)} hit(s) at or above threshold: {summary}"
        else:
            content = "no evidence at or above the similarity threshold"
        yield emit(
            AgentStep(
                kind=StepKind.OBSERVATION,
                content=content,
                evidence=tuple(h.chunk_id for h in result.hits),
            )
        )

    ordered = sorted(evidence.values(), key=lambda cs: (-cs[1], cs[0].chunk_id))
    answer = synthesize(query, ordered, backend, bcfg, tree, meter=meter)
    state.answer = answer
    yield emit(
        AgentStep(
            kind=StepKind.FINAL,
            content=answer.to_json(),
            evidence=tuple(c.chunk_id for c, _ in ordered),
        )
    )


def run_react(
    query: str,
    snapshot: IndexSnapshot,
    bcfg: BackendConfig = DEFAULT_BACKEND_CONFIG,
    rcfg: RetrievalConfig = DEFAULT_RETRIEVAL_CONFIG,
    backend: LLMBackend | None = None,
    tree: CfrTree | None = None,
    reranker: Reranker | None = None,
) -> tuple[AgentTranscript, StructuredAnswer]:
    """Run the full loop to completion.

    Typed failures re-raise with the partial transcript attached so callers
    can always inspect how far the run got.
    """
    state = ReactState()
    try:
        for _ in react_steps(query, snapshot, bcfg, rcfg, backend, tree, reranker, state):
            pass
    except Exception as err:
        transcript = AgentTranscript(steps=state.steps, token_usage=state.token_usage, partial=True)
        err.transcript = transcript
        raise
    assert state.answer is not None
    transcript = AgentTranscript(steps=state.steps, token_usage=state.token_usage, partial=False)
    return transcript, state.answer
