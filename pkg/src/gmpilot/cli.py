"""Operator command line: ingest, index, one-shot query, serve, stats, align.

Configuration resolves deterministically: flags beat environment variables,
which beat the config file, which beats built-in defaults. Exit codes:
0 success, 1 operational error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .agent import BackendConfig, StructuredAnswer
from .engine import (
    ENV_BACKEND,
    ENV_BIND_ADDR,
    ENV_DATA_DIR,
    ENV_MOCK_SCRIPT,
    Engine,
    make_backend,
)
from .errors import GmpilotError
from .retrieval import RetrievalConfig


def _load_config_file(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    values: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if sep:
            values[key.strip()] = value.strip()
    return values


def _resolve(flag, env_name: str, file_values: dict, file_key: str, default):
    if flag is not None:
        return flag
    env = os.environ.get(env_name)
    if env is not None and env != "":
        return env
    if file_key in file_values:
        return file_values[file_key]
    return default


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmpilot",
        description="Compliance corpus, hybrid retrieval, and query agent.",
    )
    parser.add_argument("--data-dir", help="corpus directory")
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--backend", choices=["mock", "remote"], help="LLM backend mode")
    parser.add_argument("--mock-script", help="JSONL mock script for the scripted backend")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    parser.add_argument("--max-steps", type=int, help="agent action budget")
    parser.add_argument("--top-k", type=int, help="evidence kept per retrieval")
    parser.add_argument("--threshold", type=float, help="re-rank similarity threshold")

    sub = parser.add_subparsers(dest="command")
    p_ingest = sub.add_parser("ingest", help="ingest a corpus file")
    p_ingest.add_argument("kind", choices=["regulatory", "form483", "qa", "cfr_manifest"])
    p_ingest.add_argument("path")
    sub.add_parser("index", help="rebuild the retrieval index")
    p_query = sub.add_parser("query", help="run a one-shot query")
    p_query.add_argument("text")
    sub.add_parser("serve", help="run the HTTP service")
    sub.add_parser("stats", help="print corpus and risk statistics")
    p_align = sub.add_parser("align", help="apply entity alignment decisions")
    p_align.add_argument("decisions_file")
    return parser


def _make_engine(args, file_values: dict[str, str]) -> Engine:
    data_dir = _resolve(args.data_dir, ENV_DATA_DIR, file_values, "data_dir", "./gmpilot-data")
    backend_mode = _resolve(args.backend, ENV_BACKEND, file_values, "backend", "mock")
    mock_script = _resolve(args.mock_script, ENV_MOCK_SCRIPT, file_values, "mock_script", None)
    rdefault = RetrievalConfig()
    retrieval_cfg = RetrievalConfig(
        top_k=args.top_k
        if args.top_k is not None
        else int(file_values.get("top_k", rdefault.top_k)),
        rerank_threshold=args.threshold
        if args.threshold is not None
        else float(file_values.get("threshold", rdefault.rerank_threshold)),
    )
    bdefault = BackendConfig()
    backend_cfg = BackendConfig(
        max_steps=args.max_steps
        if args.max_steps is not None
        else int(file_values.get("max_steps", bdefault.max_steps)),
    )
    backend = make_backend(backend_mode, mock_script, file_values.get("llm_url"))
    return Engine(
        data_dir,
        retrieval_cfg=retrieval_cfg,
        backend_cfg=backend_cfg,
        backend=backend,
        embed_url=file_values.get("embed_url"),
    )


def _render_answer_text(answer: StructuredAnswer) -> str:
    lines = ["=== Regulatory basis ==="]
    if answer.regulatory_basis:
        for entry in answer.regulatory_basis:
            lines.append(f"  [{entry.chunk_id}] {entry.excerpt}")
    else:
        lines.append("  (none)")
    lines.append("=== Historical precedents ===")
    if answer.precedents:
        for entry in answer.precedents:
            lines.append(f"  [{entry.chunk_id}] {entry.summary}")
    else:
        lines.append("  (none)")
    lines.append("=== Inspection checklist ===")
    if answer.checklist:
        for item in answer.checklist:
            flag = " [unsupported]" if item.unsupported else ""
            lines.append(f"  - risk: {item.risk}{flag}")
            lines.append(f"    action: {item.action}")
            lines.append(f"    citations: {', '.join(item.citations)}")
    else:
        lines.append("  (none)")
    lines.append(f"Disclaimer: {answer.disclaimer}")
    return "\n".join(lines)


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2

    try:
        file_values = _load_config_file(args.config)
    except OSError as e:
        print(f"error: cannot read config file: {e}", file=sys.stderr)
        return 1

    try:
        engine = _make_engine(args, file_values)
        if args.command == "ingest":
            payload = Path(args.path).read_text(encoding="utf-8")
            report = engine.ingest_payload(args.kind, payload)
            _print_report(report, args.json)
        elif args.command == "align":
            payload = Path(args.decisions_file).read_text(encoding="utf-8")
            report = engine.ingest_payload("alignment_decisions", payload)
            _print_report(report, args.json)
        elif args.command == "index":
            snapshot_id = engine.rebuild_index()
            report = {"snapshot_id": snapshot_id, "chunks": engine.snapshot.n_docs}
            _print_report(report, args.json)
        elif args.command == "stats":
            stats = engine.stats()
            if args.json:
                print(json.dumps(stats, ensure_ascii=False, sort_keys=True))
            else:
                corpus = stats["corpus"]
                print(f"documents: {corpus['documents']}")
                print(f"chunks: {corpus['chunks']}")
                print(f"observations: {corpus['observations']}")
                print(f"firm groups: {corpus['firm_groups']}")
                print(f"inspector groups: {corpus['inspector_groups']}")
                print(f"unverified documents: {corpus['unverified_documents']}")
                top = stats["risk"]["top_parts"]
                if top:
                    ranked = ", ".join(f"part {p}: {c}" for p, c in top)
                    print(f"top cited parts: {ranked}")
        elif args.command == "query":
            _transcript, answer = engine.query(args.text)
            if args.json:
                print(answer.to_json())
            else:
                print(_render_answer_text(answer))
        elif args.command == "serve":
            from .service import serve

            bind = os.environ.get(ENV_BIND_ADDR, file_values.get("bind_addr", "127.0.0.1:8000"))
            serve(engine, bind)
        return 0
    except GmpilotError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def _print_report(report: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(report, ensure_ascii=False, sort_keys=True))
    else:
        print(", ".join(f"{k}: {v}" for k, v in report.items()))


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
