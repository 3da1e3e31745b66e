"""Operator entry point.

Subcommands: ingest, index, recall, query, chat, serve, bench. Exit codes:
0 success, 1 domain error, 2 usage error. Config precedence: flags > env >
config file (JSON) > defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .gateway import (
    Gateway,
    HttpChatBackend,
    HttpEmbeddingBackend,
    MockEmbeddingBackend,
    ScriptedBackend,
    EchoBackend,
    RetryPolicy,
)
from .recall import RecallConfig
from .reflection import ReflectionConfig


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def build_gateway(backend: str, script: Optional[str] = None, seed: int = 0) -> Gateway:
    if backend == "mock":
        chat = ScriptedBackend.from_file(script) if script else EchoBackend()
        return Gateway(chat_backend=chat, embedding_backend=MockEmbeddingBackend(seed=seed),
                       policy=RetryPolicy(backoff_base_ms=1), sleep=lambda _s: None)
    if backend == "http":
        return Gateway(chat_backend=HttpChatBackend(), embedding_backend=HttpEmbeddingBackend())
    raise ValueError(f"unknown backend {backend!r}")


def _recall_cfg(args) -> RecallConfig:
    return RecallConfig(total_limit=args.total_limit, keyword_quota=args.keyword_quota,
                        vector_quota=args.total_limit - args.keyword_quota)


def cmd_ingest(args) -> int:
    from .ingestion import ingest_document, parse_block_jsonl, parse_markup
    from .knowledge import DEFAULT_VOCABULARY, save_kb

    input_path = Path(args.input)
    if input_path.suffix in (".jsonl", ".ndjson"):
        doc = parse_block_jsonl(input_path, book_label=args.book)
    else:
        doc = parse_markup(input_path.read_text(encoding="utf-8"),
                           book_label=args.book or input_path.stem)
    gateway = build_gateway(args.backend, args.script, args.seed)
    kb, review = ingest_document(doc, gateway, DEFAULT_VOCABULARY,
                                 review_file=args.review, extract=not args.raw_only)
    save_kb(kb, args.kb)
    accepted = sum(1 for s in review.values() if s.stage.value == "accepted")
    print(f"kb written to {args.kb}: {len(kb.tree.nodes)} nodes, "
          f"{len(kb.entries)} entries ({accepted} accepted), {len(kb.triples)} triples")
    return 0


def cmd_index(args) -> int:
    from .index import build_keyword_index, build_vector_index
    from .knowledge import load_kb
    from .index import HnswParams

    kb = load_kb(args.kb)
    gateway = build_gateway(args.backend, seed=args.seed)
    entry_ids = sorted(kb.entries)
    vectors = gateway.embed_batch([kb.entries[eid].text for eid in entry_ids])
    index = build_vector_index(dict(zip(entry_ids, vectors)),
                               params=HnswParams(seed=args.seed or 12345))
    out = Path(args.out)
    index.save(out)
    kw = build_keyword_index(list(kb.triples.values()))
    kw.save(out.with_suffix(".kw.json"))
    print(f"index written to {out} ({len(index)} vectors, "
          f"{len(kw.postings)} keyword postings)")
    return 0


def cmd_recall(args) -> int:
    from .pipeline import load_engine
    from .recall import dump_recall

    gateway = build_gateway(args.backend, args.script, args.seed)
    engine = load_engine(args.kb, args.index, gateway, recall_cfg=_recall_cfg(args))
    recall = engine.recall(args.question)
    for row in dump_recall(recall):
        print(json.dumps(row, ensure_ascii=False))
    return 0


def cmd_query(args) -> int:
    from .pipeline import load_engine

    gateway = build_gateway(args.backend, args.script, args.seed)
    engine = load_engine(args.kb, args.index, gateway, recall_cfg=_recall_cfg(args))
    answer, trace = engine.answer_with_reflection(args.question)
    print(f"outcome: {trace.outcome}")
    print(answer or "(no answer)")
    if args.trace:
        Path(args.trace).write_text(trace.to_jsonl(), encoding="utf-8")
        print(f"trace written to {args.trace}")
    return 0


def cmd_chat(args) -> int:
    from .pipeline import load_engine
    from .service import Session, dialogue_question

    gateway = build_gateway(args.backend, args.script, args.seed)
    engine = load_engine(args.kb, args.index, gateway, recall_cfg=_recall_cfg(args))
    session = Session(id="local", kb_id="default")
    print("tosrr chat (empty line to quit)")
    while True:
        try:
            question = input("you> ").strip()
        except EOFError:
            break
        if not question:
            break
        contextual = dialogue_question(session, question)
        answer, trace = engine.answer_with_reflection(contextual)
        print(f"tosrr> {answer or '(no answer)'}")
        from .service import Turn
        session.turns.append(Turn(question=question, answer=answer or "",
                                  trace_id="", outcome=trace.outcome or "", evidence=[]))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .pipeline import load_engine
    from .service import create_app

    gateway = build_gateway(args.backend, args.script, args.seed)
    engine = load_engine(args.kb, args.index, gateway, recall_cfg=_recall_cfg(args))
    app = create_app(engine, journal_path=args.journal)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_bench(args) -> int:
    from .evaluation import load_items, write_reports
    from .gateway import CallRecord
    from .pipeline import load_engine, run_benchmark

    items = load_items(args.items)
    groups = [g.strip() for g in args.groups.split(",") if g.strip()]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = {}
    for group in groups:
        # Fresh gateway per group so call logs are attributable.
        gateway = build_gateway(args.backend, args.script, args.seed)
        engine = load_engine(args.kb, args.index, gateway, recall_cfg=_recall_cfg(args))
        results.update(run_benchmark(items, engine, groups=[group]))
        with (out_dir / f"calls-{group}.jsonl").open("w", encoding="utf-8") as fh:
            for rec in gateway.call_log.records():
                fh.write(json.dumps({"tag": rec.tag, "kind": rec.kind,
                                     "attempts": rec.attempts,
                                     "request": rec.request_text,
                                     "response": rec.response_text},
                                    ensure_ascii=False) + "\n")
    write_reports(results, out_dir)
    print(f"reports written to {out_dir}")
    for group, result in results.items():
        row = result.report.as_row(group)
        print(f"{group}: total={row['total']} percentage={row['percentage']:.2f}")
    return 0


def _add_common(parser: argparse.ArgumentParser, kb: bool = True, index: bool = False):
    parser.add_argument("--backend", choices=("mock", "http"), default="mock")
    parser.add_argument("--script", help="mock script JSONL (tag-matched FIFO responses)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", help="JSON config file")
    if kb:
        parser.add_argument("--kb", required=True, help="knowledge base JSONL path")
    if index:
        parser.add_argument("--index", required=True, help="vector index path")
        parser.add_argument("--total-limit", type=int, default=15)
        parser.add_argument("--keyword-quota", type=int, default=5)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tosrr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="segment, extract, review, and persist a kb")
    _add_common(p)
    p.add_argument("--input", required=True, help="markup text or block JSONL")
    p.add_argument("--book", help="book label (default: file stem)")
    p.add_argument("--review", help="review verdict JSONL to replay")
    p.add_argument("--raw-only", action="store_true",
                   help="skip LLM extraction; raw chunks only")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("index", help="embed entries and build the indices")
    _add_common(p)
    p.add_argument("--out", required=True, help="index output path")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("recall", help="debug-dump recall for one question")
    _add_common(p, index=True)
    p.add_argument("--question", required=True)
    p.set_defaults(func=cmd_recall)

    p = sub.add_parser("query", help="answer one question with reflection")
    _add_common(p, index=True)
    p.add_argument("--question", required=True)
    p.add_argument("--trace", help="write the reflection trace JSONL here")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("chat", help="terminal REPL over a local session")
    _add_common(p, index=True)
    p.set_defaults(func=cmd_chat)

    p = sub.add_parser("serve", help="run the HTTP service")
    _add_common(p, index=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--journal", help="session journal JSONL path")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("bench", help="run the ablation benchmark")
    _add_common(p, index=True)
    p.add_argument("--items", required=True, help="MCQ items JSONL")
    p.add_argument("--groups", default="tosrr,spot-rag,rag,base")
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(func=cmd_bench)

    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    # Config file fills in optional values the flags left at defaults.
    config = _load_config(getattr(args, "config", None))
    for key, value in config.items():
        attr = key.replace("-", "_")
        if getattr(args, attr, None) in (None,) and hasattr(args, attr):
            setattr(args, attr, value)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
