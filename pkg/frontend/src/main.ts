/**
 * Browser entry point: wires the chat controller to a minimal DOM shell.
 * Expects elements #transcript, #evidence, #trace, #question, #send.
 * Untested glue — all logic lives in api.ts / state.ts / render.ts.
 */
import { ApiClient } from "./api.js";
import { ChatController } from "./state.js";
import { renderEvidence, renderTrace, renderTranscript } from "./render.js";

export function mount(root: Document, baseUrl: string): ChatController {
  const transcriptEl = root.getElementById("transcript");
  const evidenceEl = root.getElementById("evidence");
  const traceEl = root.getElementById("trace");
  const questionEl = root.getElementById("question") as HTMLInputElement | null;
  const sendEl = root.getElementById("send");
  if (!transcriptEl || !evidenceEl || !traceEl || !questionEl || !sendEl) {
    throw new Error("chat shell elements missing");
  }

  const api = new ApiClient(baseUrl);
  const controller = new ChatController(api, (view) => {
    transcriptEl.innerHTML = renderTranscript(view);
    const idx = view.selectedTurn;
    const turn = idx !== null ? view.turns[idx] : undefined;
    evidenceEl.innerHTML = turn ? renderEvidence(turn.evidence) : "";
    const trace = turn ? view.traces.get(turn.traceId) : undefined;
    traceEl.innerHTML = trace ? renderTrace(trace) : "";
  });

  const submit = async () => {
    const question = questionEl.value.trim();
    if (!question) return;
    questionEl.value = "";
    const turn = await controller.send(question);
    await controller.selectTurn(controller.view.turns.length - 1);
    void turn;
  };
  sendEl.addEventListener("click", () => void submit());
  questionEl.addEventListener("keydown", (ev) => {
    if ((ev as KeyboardEvent).key === "Enter") void submit();
  });

  void controller.startSession();
  return controller;
}

declare const window: (Window & { TOSRR_BASE_URL?: string }) | undefined;
if (typeof window !== "undefined" && typeof document !== "undefined") {
  mount(document, window.TOSRR_BASE_URL ?? "");
}
