/**
 * In-memory fetch-compatible mock of the question-answering service HTTP
 * contract, so the client can be exercised without a running backend.
 * Mirrors the real wire shapes: JSON session/turn bodies, streamed answers
 * with a JSON trailer line, NDJSON traces.
 */
import type { FetchLike } from "../src/api.js";

export interface ScriptedTurn {
  answer: string;
  outcome?: string;
  /** Number of evidence rows; first `keyword` come from the keyword channel. */
  evidence?: { total: number; keyword: number };
}

interface StoredTurn {
  question: string;
  answer: string;
  trace_id: string;
  outcome: string;
  evidence: unknown[];
}

interface Session {
  session_id: string;
  kb_id: string;
  turns: StoredTurn[];
}

export function makeEvidence(total: number, keyword: number): unknown[] {
  const rows: unknown[] = [];
  for (let i = 0; i < total; i++) {
    const isKeyword = i < keyword;
    rows.push({
      rank: i + 1,
      entry_id: `entry-${i + 1}`,
      channel: isKeyword ? "keyword" : "vector",
      score: isKeyword ? 1.0 : Number((0.9 - 0.05 * (i - keyword)).toFixed(4)),
      tree_path: ["Demo Book", "Herbs", `Point ${i + 1}`],
      text: `Evidence text ${i + 1} about the remedy.`,
    });
  }
  return rows;
}

function json(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export class MockService {
  private sessions = new Map<string, Session>();
  private traces = new Map<string, string>();
  private nextSession = 1;
  private nextTrace = 1;
  /** Questions received per session, in order, for assertions. */
  readonly received: string[] = [];

  constructor(private readonly script: ScriptedTurn[]) {}

  private scriptedAnswer(turnIndex: number): ScriptedTurn {
    const entry = this.script[turnIndex];
    if (!entry) return { answer: "I have no further scripted answers." };
    return entry;
  }

  private buildTrace(question: string, answer: string, outcome: string): string {
    const steps = [
      { index: 0, state: "retrieve", payload: { question }, elapsed_ms: 1.0 },
      { index: 1, state: "relevance", payload: { kept: 15 }, elapsed_ms: 1.0 },
      { index: 2, state: "empty_check", payload: { empty: false }, elapsed_ms: 0.1 },
      { index: 3, state: "generate", payload: { answer }, elapsed_ms: 2.0 },
      { index: 4, state: "support_check", payload: { supported: true }, elapsed_ms: 1.0 },
      { index: 5, state: "helpful_check", payload: { helpful: true }, elapsed_ms: 1.0 },
      { index: 6, state: "done", payload: { outcome }, elapsed_ms: 0.1 },
    ];
    const summary = {
      final_answer: answer,
      outcome,
      question_history: [question],
      judge_parse_failures: 0,
    };
    return [...steps.map((s) => JSON.stringify(s)), JSON.stringify(summary)].join("\n") + "\n";
  }

  fetch: FetchLike = async (url, init) => {
    const method = init?.method ?? "GET";
    const { pathname, searchParams } = new URL(url, "http://mock");

    if (method === "GET" && pathname === "/healthz") return json({ status: "ok" });

    if (method === "POST" && pathname === "/sessions") {
      const body = init?.body ? JSON.parse(String(init.body)) : {};
      const id = `s${this.nextSession++}`;
      this.sessions.set(id, { session_id: id, kb_id: body.kb_id ?? "default", turns: [] });
      return json({ session_id: id });
    }

    const sessionGet = pathname.match(/^\/sessions\/([^/]+)$/);
    if (method === "GET" && sessionGet) {
      const session = this.sessions.get(sessionGet[1]!);
      if (!session) return json({ detail: "unknown session" }, 404);
      return json(session);
    }

    const messages = pathname.match(/^\/sessions\/([^/]+)\/messages$/);
    if (method === "POST" && messages) {
      const session = this.sessions.get(messages[1]!);
      if (!session) return json({ detail: "unknown session" }, 404);
      const body = JSON.parse(String(init?.body ?? "{}"));
      const question = String(body.question ?? "");
      if (!question.trim()) return json({ detail: "question must not be empty" }, 400);
      this.received.push(question);

      const scripted = this.scriptedAnswer(session.turns.length);
      const outcome = scripted.outcome ?? "answered";
      const ev = scripted.evidence ?? { total: 3, keyword: 1 };
      const evidence = makeEvidence(ev.total, ev.keyword);
      const traceId = `t${this.nextTrace++}`;
      this.traces.set(traceId, this.buildTrace(question, scripted.answer, outcome));
      session.turns.push({
        question,
        answer: scripted.answer,
        trace_id: traceId,
        outcome,
        evidence,
      });

      if (searchParams.get("stream") === "1") {
        const trailer = JSON.stringify({ trace_id: traceId, outcome, evidence });
        // Stream in 64-char answer chunks, then the newline-prefixed trailer.
        const encoder = new TextEncoder();
        const pieces: string[] = [];
        for (let i = 0; i < scripted.answer.length; i += 64) {
          pieces.push(scripted.answer.slice(i, i + 64));
        }
        pieces.push("\n" + trailer);
        const stream = new ReadableStream<Uint8Array>({
          start(controller) {
            for (const piece of pieces) controller.enqueue(encoder.encode(piece));
            controller.close();
          },
        });
        return new Response(stream, {
          status: 200,
          headers: { "Content-Type": "text/plain" },
        });
      }
      return json({ answer: scripted.answer, evidence, trace_id: traceId, outcome });
    }

    const traceGet = pathname.match(/^\/traces\/([^/]+)$/);
    if (method === "GET" && traceGet) {
      const trace = this.traces.get(traceGet[1]!);
      if (trace === undefined) return json({ detail: "unknown trace" }, 404);
      return new Response(trace, {
        status: 200,
        headers: { "Content-Type": "application/x-ndjson" },
      });
    }

    if (method === "POST" && pathname === "/recall") {
      const body = JSON.parse(String(init?.body ?? "{}"));
      return json({
        question: body.question ?? "",
        results: makeEvidence(15, 5),
        stats: { keyword: 5, vector: 10 },
      });
    }

    return json({ detail: "not found" }, 404);
  };
}
