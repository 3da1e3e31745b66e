"""HTTP API for multi-turn Q&A sessions, recall debugging, and reflection
traces.

Endpoints (JSON unless streaming):
  POST /sessions                      -> {"session_id": ...}
  POST /sessions/{id}/messages        -> TurnResponse (``?stream=1`` streams
                                         the answer as chunked text)
  GET  /sessions/{id}                 -> session transcript
  GET  /traces/{id}                   -> serialized reflection trace
  POST /recall                        -> recall debug table
  GET  /healthz                       -> {"status": "ok"}

Sessions are kept in memory with an optional JSONL journal so a restarted
service can replay its stores.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse, StreamingResponse
from pydantic import BaseModel

from .pipeline import Engine
from .recall import dump_recall

DIALOGUE_TURN_FORMAT = "User: {question}\nAssistant: {answer}"


@dataclass
class Turn:
    question: str
    answer: str
    trace_id: str
    outcome: str
    evidence: list[dict]


@dataclass
class Session:
    id: str
    kb_id: str
    turns: list[Turn] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionStore:
    """Synchronized in-memory stores with an optional append-only journal."""

    def __init__(self, journal_path: Optional[str | Path] = None):
        self.sessions: dict[str, Session] = {}
        self.traces: dict[str, str] = {}
        self._lock = threading.Lock()
        self._journal_path = Path(journal_path) if journal_path else None
        if self._journal_path and self._journal_path.exists():
            self._replay()

    def _journal(self, record: dict) -> None:
        if self._journal_path is None:
            return
        with self._journal_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    def _replay(self) -> None:
        with self._journal_path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if rec["kind"] == "session":
                    self.sessions[rec["id"]] = Session(id=rec["id"], kb_id=rec["kb_id"])
                elif rec["kind"] == "turn":
                    self.sessions[rec["session_id"]].turns.append(Turn(
                        question=rec["question"], answer=rec["answer"],
                        trace_id=rec["trace_id"], outcome=rec["outcome"],
                        evidence=rec["evidence"]))
                elif rec["kind"] == "trace":
                    self.traces[rec["id"]] = rec["body"]

    def create_session(self, kb_id: str) -> Session:
        session = Session(id=uuid.uuid4().hex, kb_id=kb_id)
        with self._lock:
            self.sessions[session.id] = session
        self._journal({"kind": "session", "id": session.id, "kb_id": kb_id})
        return session

    def get_session(self, session_id: str) -> Session:
        with self._lock:
            session = self.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return session

    def add_turn(self, session: Session, turn: Turn, trace_body: str) -> None:
        with self._lock:
            self.traces[turn.trace_id] = trace_body
            session.turns.append(turn)
        self._journal({"kind": "trace", "id": turn.trace_id, "body": trace_body})
        self._journal({"kind": "turn", "session_id": session.id, "question": turn.question,
                       "answer": turn.answer, "trace_id": turn.trace_id,
                       "outcome": turn.outcome, "evidence": turn.evidence})

    def get_trace(self, trace_id: str) -> str:
        with self._lock:
            trace = self.traces.get(trace_id)
        if trace is None:
            raise HTTPException(status_code=404, detail=f"unknown trace {trace_id}")
        return trace


class MessageIn(BaseModel):
    question: str


class RecallIn(BaseModel):
    question: str


def dialogue_question(session: Session, question: str) -> str:
    """Prepend prior turns as labeled dialogue lines inside the question
    slot; retrieval stays keyed on the latest question alone."""
    if not session.turns:
        return question
    history = "\n".join(DIALOGUE_TURN_FORMAT.format(question=t.question, answer=t.answer)
                        for t in session.turns)
    return f"{history}\nUser: {question}"


def create_app(engine: Engine, kb_id: str = "default",
               journal_path: Optional[str | Path] = None) -> FastAPI:
    app = FastAPI(title="tosrr")
    store = SessionStore(journal_path)
    app.state.store = store
    app.state.engine = engine

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/sessions")
    def create_session(body: Optional[dict] = None):
        requested = (body or {}).get("kb_id", kb_id)
        if requested != kb_id:
            raise HTTPException(status_code=404, detail=f"unknown kb {requested}")
        session = store.create_session(requested)
        return {"session_id": session.id}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        session = store.get_session(session_id)
        return {
            "session_id": session.id,
            "kb_id": session.kb_id,
            "turns": [
                {"question": t.question, "answer": t.answer, "trace_id": t.trace_id,
                 "outcome": t.outcome, "evidence": t.evidence}
                for t in session.turns
            ],
        }

    def _run_turn(session: Session, question: str) -> Turn:
        contextual = dialogue_question(session, question)
        answer, trace = app.state.engine.answer_with_reflection(contextual)
        evidence = _final_evidence(trace)
        turn = Turn(question=question, answer=answer or "", trace_id=uuid.uuid4().hex,
                    outcome=trace.outcome or "answered", evidence=evidence)
        store.add_turn(session, turn, trace.to_jsonl())
        return turn

    def _final_evidence(trace) -> list[dict]:
        # Evidence shown to the client is the final retrieval round's
        # relevant set.
        engine: Engine = app.state.engine
        kept: list[dict] = []
        for step in trace.steps:
            if step.state == "relevance":
                kept = step.payload.get("items", [])
        rows = []
        for rank, item in enumerate(kept, 1):
            entry = engine.kb.entries.get(item["entry_id"])
            if entry is None:
                continue
            rows.append({"rank": rank, "entry_id": item["entry_id"],
                         "channel": item["channel"], "score": item["score"],
                         "tree_path": list(entry.tree_path), "text": entry.text})
        return rows

    @app.post("/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageIn, stream: int = 0):
        if not body.question.strip():
            raise HTTPException(status_code=400, detail="empty question")
        session = store.get_session(session_id)
        with session.lock:  # per-session serialization
            turn = _run_turn(session, body.question)
        payload = {
            "answer": turn.answer,
            "evidence": turn.evidence,
            "trace_id": turn.trace_id,
            "outcome": turn.outcome,
        }
        if stream:
            def chunks():
                text = turn.answer
                for i in range(0, len(text), 64):
                    yield text[i : i + 64]
                yield "\n" + json.dumps({"trace_id": turn.trace_id,
                                         "outcome": turn.outcome,
                                         "evidence": turn.evidence},
                                        ensure_ascii=False)
            return StreamingResponse(chunks(), media_type="text/plain")
        return payload

    @app.get("/traces/{trace_id}")
    def get_trace(trace_id: str):
        return PlainTextResponse(store.get_trace(trace_id),
                                 media_type="application/x-ndjson")

    @app.post("/recall")
    def recall_debug(body: RecallIn):
        recall = app.state.engine.recall(body.question)
        return {"question": body.question, "results": dump_recall(recall),
                "stats": recall.stats}

    return app
