/**
 * Typed client for the question-answering service HTTP API.
 *
 * The fetch function is injectable so tests can run against an in-process
 * mock service; the browser entry point passes the real `fetch`.
 */
import { z } from "zod";

export const EvidenceRow = z.object({
  rank: z.number().int().positive(),
  entry_id: z.string(),
  channel: z.enum(["keyword", "vector"]),
  score: z.number(),
  tree_path: z.array(z.string()),
  text: z.string(),
});
export type EvidenceRow = z.infer<typeof EvidenceRow>;

export const TurnResponse = z.object({
  answer: z.string(),
  evidence: z.array(EvidenceRow),
  trace_id: z.string(),
  outcome: z.string(),
});
export type TurnResponse = z.infer<typeof TurnResponse>;

export const SessionTranscript = z.object({
  session_id: z.string(),
  kb_id: z.string(),
  turns: z.array(
    z.object({
      question: z.string(),
      answer: z.string(),
      trace_id: z.string(),
      outcome: z.string(),
      evidence: z.array(EvidenceRow),
    }),
  ),
});
export type SessionTranscript = z.infer<typeof SessionTranscript>;

export const TraceStep = z.object({
  index: z.number().int(),
  state: z.string(),
  payload: z.record(z.unknown()),
  elapsed_ms: z.number(),
});
export type TraceStep = z.infer<typeof TraceStep>;

export const TraceSummary = z.object({
  final_answer: z.string().nullable(),
  outcome: z.string().nullable(),
  question_history: z.array(z.string()),
  judge_parse_failures: z.number().int(),
});
export type TraceSummary = z.infer<typeof TraceSummary>;

export interface Trace {
  steps: TraceStep[];
  summary: TraceSummary;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceError extends Error {
  constructor(
    message: string,
    public readonly status?: number,
  ) {
    super(message);
    this.name = "ServiceError";
  }
}

async function expectOk(resp: Response): Promise<Response> {
  if (!resp.ok) {
    const body = await resp.text().catch(() => "");
    throw new ServiceError(`service returned ${resp.status}: ${body}`, resp.status);
  }
  return resp;
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = fetch,
  ) {}

  async health(): Promise<boolean> {
    try {
      const resp = await this.fetchFn(`${this.baseUrl}/healthz`);
      return resp.ok;
    } catch {
      return false;
    }
  }

  async createSession(kbId?: string): Promise<string> {
    const resp = await expectOk(
      await this.fetchFn(`${this.baseUrl}/sessions`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(kbId ? { kb_id: kbId } : {}),
      }),
    );
    const body = z.object({ session_id: z.string() }).parse(await resp.json());
    return body.session_id;
  }

  async getSession(sessionId: string): Promise<SessionTranscript> {
    const resp = await expectOk(await this.fetchFn(`${this.baseUrl}/sessions/${sessionId}`));
    return SessionTranscript.parse(await resp.json());
  }

  /**
   * Send a question with streaming enabled. The service streams the answer
   * as plain text chunks and terminates with one JSON trailer line carrying
   * trace_id / outcome / evidence. `onChunk` fires per answer fragment.
   */
  async sendMessage(
    sessionId: string,
    question: string,
    onChunk?: (text: string) => void,
  ): Promise<TurnResponse> {
    const resp = await expectOk(
      await this.fetchFn(`${this.baseUrl}/sessions/${sessionId}/messages?stream=1`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ question }),
      }),
    );
    const full = await readStream(resp, onChunk);
    // The trailer is everything after the final newline; the answer may
    // itself contain newlines.
    const cut = full.lastIndexOf("\n");
    if (cut < 0) throw new ServiceError("stream ended without a trailer line");
    const answer = full.slice(0, cut);
    const trailer = z
      .object({
        trace_id: z.string(),
        outcome: z.string(),
        evidence: z.array(EvidenceRow),
      })
      .parse(JSON.parse(full.slice(cut + 1)));
    return { answer, ...trailer };
  }

  async getTrace(traceId: string): Promise<Trace> {
    const resp = await expectOk(await this.fetchFn(`${this.baseUrl}/traces/${traceId}`));
    const lines = (await resp.text())
      .split("\n")
      .map((l) => l.trim())
      .filter((l) => l.length > 0);
    if (lines.length === 0) throw new ServiceError("empty trace");
    const steps = lines.slice(0, -1).map((l) => TraceStep.parse(JSON.parse(l)));
    const summary = TraceSummary.parse(JSON.parse(lines[lines.length - 1]!));
    return { steps, summary };
  }

  async recall(question: string): Promise<unknown> {
    const resp = await expectOk(
      await this.fetchFn(`${this.baseUrl}/recall`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ question }),
      }),
    );
    return resp.json();
  }
}

async function readStream(resp: Response, onChunk?: (text: string) => void): Promise<string> {
  if (!resp.body) {
    const text = await resp.text();
    if (onChunk) onChunk(text);
    return text;
  }
  const reader = resp.body.getReader();
  const decoder = new TextDecoder();
  let full = "";
  for (;;) {
    const { done, value } = await reader.read();
    if (done) break;
    const text = decoder.decode(value, { stream: true });
    full += text;
    if (onChunk) onChunk(text);
  }
  full += decoder.decode();
  return full;
}
