/**
 * Chat view state and orchestration, decoupled from the DOM so tests can
 * drive a full conversation against a mock service.
 */
import { ApiClient, EvidenceRow, Trace } from "./api.js";

export interface TurnView {
  question: string;
  answer: string;
  traceId: string;
  outcome: string;
  evidence: EvidenceRow[];
}

export interface ChatView {
  sessionId: string | null;
  kbId: string | null;
  turns: TurnView[];
  /** Partial answer text while a turn is streaming, null when idle. */
  pending: { question: string; answer: string } | null;
  /** Index of the turn whose evidence/trace panel is open, null = latest. */
  selectedTurn: number | null;
  /** Lazily fetched traces keyed by trace id. */
  traces: Map<string, Trace>;
  error: string | null;
}

export function emptyView(): ChatView {
  return {
    sessionId: null,
    kbId: null,
    turns: [],
    pending: null,
    selectedTurn: null,
    traces: new Map(),
    error: null,
  };
}

export class ChatController {
  readonly view: ChatView = emptyView();

  constructor(
    private readonly api: ApiClient,
    private readonly onChange: (view: ChatView) => void = () => {},
  ) {}

  private notify(): void {
    this.onChange(this.view);
  }

  async startSession(kbId?: string): Promise<string> {
    this.view.error = null;
    const sessionId = await this.api.createSession(kbId);
    const transcript = await this.api.getSession(sessionId);
    this.view.sessionId = transcript.session_id;
    this.view.kbId = transcript.kb_id;
    this.view.turns = [];
    this.view.pending = null;
    this.view.selectedTurn = null;
    this.view.traces.clear();
    this.notify();
    return sessionId;
  }

  /** Send a question, surfacing streamed chunks via onChange as they land. */
  async send(question: string): Promise<TurnView> {
    if (!this.view.sessionId) throw new Error("no active session");
    if (this.view.pending) throw new Error("a turn is already in flight");
    if (!question.trim()) {
      this.view.error = "question must not be empty";
      this.notify();
      throw new Error(this.view.error);
    }
    this.view.error = null;
    this.view.pending = { question, answer: "" };
    this.notify();
    try {
      const result = await this.api.sendMessage(this.view.sessionId, question, (chunk) => {
        if (this.view.pending) {
          this.view.pending.answer += chunk;
          this.notify();
        }
      });
      const turn: TurnView = {
        question,
        answer: result.answer,
        traceId: result.trace_id,
        outcome: result.outcome,
        evidence: result.evidence,
      };
      this.view.turns.push(turn);
      this.view.selectedTurn = this.view.turns.length - 1;
      return turn;
    } catch (err) {
      this.view.error = err instanceof Error ? err.message : String(err);
      throw err;
    } finally {
      this.view.pending = null;
      this.notify();
    }
  }

  /** Open a turn's evidence panel, fetching its trace on first view. */
  async selectTurn(index: number): Promise<Trace> {
    const turn = this.view.turns[index];
    if (!turn) throw new Error(`no turn at index ${index}`);
    this.view.selectedTurn = index;
    let trace = this.view.traces.get(turn.traceId);
    if (!trace) {
      trace = await this.api.getTrace(turn.traceId);
      this.view.traces.set(turn.traceId, trace);
    }
    this.notify();
    return trace;
  }

  /** Rebuild the whole view from the server, as after a page reload. */
  async reloadFromServer(sessionId: string): Promise<void> {
    const transcript = await this.api.getSession(sessionId);
    this.view.sessionId = transcript.session_id;
    this.view.kbId = transcript.kb_id;
    this.view.turns = transcript.turns.map((t) => ({
      question: t.question,
      answer: t.answer,
      traceId: t.trace_id,
      outcome: t.outcome,
      evidence: t.evidence,
    }));
    this.view.pending = null;
    this.view.selectedTurn = this.view.turns.length > 0 ? this.view.turns.length - 1 : null;
    this.view.traces.clear();
    this.view.error = null;
    this.notify();
  }
}
