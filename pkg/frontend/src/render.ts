/**
 * Pure HTML-string renderers for the chat view. Keeping these free of DOM
 * mutation lets tests assert on the produced markup directly.
 */
import { EvidenceRow, Trace } from "./api.js";
import { ChatView, TurnView } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function renderEvidenceRow(row: EvidenceRow): string {
  const path = row.tree_path.map(escapeHtml).join(" › ");
  return (
    `<li class="evidence-row channel-${row.channel}" data-rank="${row.rank}">` +
    `<span class="rank">#${row.rank}</span>` +
    `<span class="badge badge-${row.channel}">${row.channel}</span>` +
    `<span class="score">${row.score.toFixed(4)}</span>` +
    `<span class="tree-path">${path}</span>` +
    `<span class="entry-text">${escapeHtml(row.text)}</span>` +
    `</li>`
  );
}

export function renderEvidence(rows: EvidenceRow[]): string {
  if (rows.length === 0) {
    return `<p class="evidence-empty">No supporting evidence was retrieved.</p>`;
  }
  return `<ol class="evidence-list">${rows.map(renderEvidenceRow).join("")}</ol>`;
}

export function renderTurn(turn: TurnView, index: number, selected: boolean): string {
  const cls = selected ? "turn selected" : "turn";
  return (
    `<article class="${cls}" data-turn="${index}" data-outcome="${escapeHtml(turn.outcome)}">` +
    `<p class="question">${escapeHtml(turn.question)}</p>` +
    `<p class="answer">${escapeHtml(turn.answer)}</p>` +
    `<p class="meta">outcome: ${escapeHtml(turn.outcome)} · evidence: ${turn.evidence.length}</p>` +
    `</article>`
  );
}

export function renderTranscript(view: ChatView): string {
  const parts = view.turns.map((t, i) => renderTurn(t, i, view.selectedTurn === i));
  if (view.pending) {
    parts.push(
      `<article class="turn pending">` +
        `<p class="question">${escapeHtml(view.pending.question)}</p>` +
        `<p class="answer streaming">${escapeHtml(view.pending.answer)}</p>` +
        `</article>`,
    );
  }
  if (view.error) {
    parts.push(`<p class="error">${escapeHtml(view.error)}</p>`);
  }
  return `<section class="transcript">${parts.join("")}</section>`;
}

export function renderTrace(trace: Trace): string {
  const steps = trace.steps
    .map((step) => {
      const extra =
        step.state === "reformulate" && typeof step.payload["new_question"] === "string"
          ? `<span class="rewritten">${escapeHtml(step.payload["new_question"] as string)}</span>`
          : "";
      return (
        `<li class="trace-step state-${escapeHtml(step.state)}" data-index="${step.index}">` +
        `<span class="state">${escapeHtml(step.state)}</span>${extra}</li>`
      );
    })
    .join("");
  const outcome = trace.summary.outcome ?? "in progress";
  return (
    `<div class="trace">` +
    `<ol class="trace-steps">${steps}</ol>` +
    `<p class="trace-summary">outcome: ${escapeHtml(outcome)} · ` +
    `questions tried: ${trace.summary.question_history.length}</p>` +
    `</div>`
  );
}
