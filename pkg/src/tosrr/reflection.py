"""Self-reflective answer loop: retrieve, filter for relevance, generate,
then judge support and helpfulness, reformulating or regenerating within
configured caps.

The walk is: retrieve -> relevance -> empty_check -> {reformulate ->
retrieve | generate} -> support_check -> {generate | helpful_check} ->
{done | reformulate -> retrieve}. Caps turn the unbounded loop into a
terminating one with explicit degraded outcomes.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .gateway import ChatMessage, ChatRequest, Gateway
from .recall import RecallSet

DEFAULT_ANSWER_TEMPLATE = (
    "As a well-read scholar of TCM, please choose a correct answer for the "
    "following question based on the content of the knowledge base.\n\n"
    "{question}\n\n{knowledge}\n"
)
DEFAULT_REFORMULATE_TEMPLATE = (
    "The knowledge base returned nothing relevant for the question below. "
    "Rewrite it as a more specific question using the same intent. Previous "
    "attempts:\n{history}\n\nQuestion: {question}\n\nRewritten question:"
)
DEFAULT_RELEVANCE_TEMPLATE = (
    "Question: {question}\n\nFor each numbered knowledge item below, judge "
    "whether it is relevant to answering the question. Reply with a "
    "bracketed list of Y/N, one per item, e.g. [Y,N,Y].\n\n{items}"
)
DEFAULT_SUPPORT_TEMPLATE = (
    "Answer:\n{answer}\n\nKnowledge items:\n{items}\n\nIs the answer "
    "supported by the knowledge items? Reply YES or NO as the first word."
)
DEFAULT_HELPFUL_TEMPLATE = (
    "Question: {question}\n\nAnswer: {answer}\n\nIs this answer helpful in "
    "addressing the question? Reply YES or NO as the first word."
)
UNSUPPORTED_ADDENDUM = (
    "The previous answer was judged unsupported by the knowledge items; "
    "generate a new answer that stays strictly within them.\nPrevious "
    "answer:\n{previous}"
)


class ReflectionError(Exception):
    pass


class EmptyEvidence(ReflectionError):
    pass


class DegenerateReformulation(ReflectionError):
    pass


@dataclass(frozen=True)
class PromptTemplates:
    answer: str = DEFAULT_ANSWER_TEMPLATE
    reformulate: str = DEFAULT_REFORMULATE_TEMPLATE
    relevance_judge: str = DEFAULT_RELEVANCE_TEMPLATE
    support_judge: str = DEFAULT_SUPPORT_TEMPLATE
    helpful_judge: str = DEFAULT_HELPFUL_TEMPLATE


@dataclass(frozen=True)
class ReflectionConfig:
    max_reformulations: int = 3
    max_regenerations: int = 2
    templates: PromptTemplates = field(default_factory=PromptTemplates)

    def __post_init__(self):
        if self.max_reformulations < 0 or self.max_regenerations < 0:
            raise ValueError("caps must be >= 0")
        if "{question}" not in self.templates.answer or "{knowledge}" not in self.templates.answer:
            raise ValueError("answer template needs {question} and {knowledge} placeholders")

    def call_ceiling(self) -> int:
        """Upper bound on gateway calls for one run."""
        rounds = self.max_reformulations + 1
        per_round = 1 + 2 * (self.max_regenerations + 1) + 1  # relevance + gen/support pairs + helpful
        # Each reformulation may retry once on a degenerate output.
        return rounds * per_round + 2 * self.max_reformulations


@dataclass(frozen=True)
class Judgment:
    verdict: object  # bool or list[bool]
    rationale: str = ""
    parse_failed: bool = False


# Fig-style state graph: state -> allowed successor states.
STATE_GRAPH: dict[str, set[str]] = {
    "retrieve": {"relevance"},
    "relevance": {"empty_check"},
    "empty_check": {"reformulate", "generate", "done"},
    "reformulate": {"retrieve", "done"},
    "generate": {"support_check"},
    "support_check": {"generate", "helpful_check"},
    "helpful_check": {"done", "reformulate"},
}


@dataclass
class TraceStep:
    index: int
    state: str
    payload: dict = field(default_factory=dict)
    elapsed_ms: float = 0.0


@dataclass
class ReflectionTrace:
    steps: list[TraceStep] = field(default_factory=list)
    question_history: list[str] = field(default_factory=list)
    final_answer: Optional[str] = None
    outcome: Optional[str] = None  # answered | best_effort_cap_hit | no_evidence
    judge_parse_failures: int = 0

    def add(self, state: str, payload: Optional[dict] = None, elapsed_ms: float = 0.0) -> None:
        self.steps.append(TraceStep(index=len(self.steps), state=state,
                                    payload=payload or {}, elapsed_ms=elapsed_ms))

    def states(self) -> list[str]:
        return [s.state for s in self.steps]

    def to_jsonl(self) -> str:
        lines = []
        for step in self.steps:
            lines.append(json.dumps({
                "index": step.index,
                "state": step.state,
                "payload": step.payload,
                "elapsed_ms": step.elapsed_ms,
            }, ensure_ascii=False, sort_keys=True))
        lines.append(json.dumps({
            "final_answer": self.final_answer,
            "outcome": self.outcome,
            "question_history": self.question_history,
            "judge_parse_failures": self.judge_parse_failures,
        }, ensure_ascii=False, sort_keys=True))
        return "\n".join(lines) + "\n"


def validate_trace_states(states: list[str]) -> bool:
    """Independent walk validator over the reflection state graph."""
    if not states or states[0] != "retrieve" or states[-1] != "done":
        return False
    for prev, nxt in zip(states, states[1:]):
        if nxt not in STATE_GRAPH.get(prev, set()):
            return False
    return True


def _parse_bool_list(text: str, n: int) -> Optional[list[bool]]:
    match = re.search(r"\[([^\]]*)\]", text)
    if not match:
        return None
    items = [p.strip().upper() for p in match.group(1).split(",") if p.strip()]
    if len(items) != n:
        return None
    out = []
    for item in items:
        if item in ("Y", "YES", "TRUE", "T", "1"):
            out.append(True)
        elif item in ("N", "NO", "FALSE", "F", "0"):
            out.append(False)
        else:
            return None
    return out


def _parse_yes_no(text: str) -> Optional[bool]:
    first = re.split(r"\W+", text.strip().upper(), maxsplit=1)[0] if text.strip() else ""
    if first in ("YES", "Y", "TRUE"):
        return True
    if first in ("NO", "N", "FALSE"):
        return False
    return None


def _numbered_items(recall: RecallSet) -> str:
    return "\n".join(f"{i + 1}. {r.rendered()}" for i, r in enumerate(recall.results))


def assess_relevance(question: str, recall: RecallSet, judge: Gateway,
                     templates: PromptTemplates = PromptTemplates()) -> tuple[RecallSet, Judgment]:
    """Filter the recall set to the items the judge marks relevant.

    Unparseable verdicts fail open (everything kept) and are counted.
    """
    if recall.is_empty():
        return recall.renumbered([]), Judgment(verdict=[], rationale="empty recall")
    prompt = templates.relevance_judge.format(question=question, items=_numbered_items(recall))
    response = judge.chat(ChatRequest(messages=(ChatMessage("user", prompt),),
                                      tag="relevance_judge"))
    verdicts = _parse_bool_list(response, len(recall.results))
    if verdicts is None:
        kept = list(recall.results)
        return recall.renumbered(kept), Judgment(verdict=[True] * len(kept),
                                                 rationale=response, parse_failed=True)
    kept = [r for r, keep in zip(recall.results, verdicts) if keep]
    return recall.renumbered(kept), Judgment(verdict=verdicts, rationale=response)


def reformulate(question: str, history: list[str], llm: Gateway,
                templates: PromptTemplates = PromptTemplates()) -> str:
    """Produce a more specific question distinct from every history entry.

    One retry on a degenerate (empty or repeated) output, then
    DegenerateReformulation.
    """
    known = set(history) | {question}
    for _ in range(2):
        prompt = templates.reformulate.format(
            question=question, history="\n".join(history) or "(none)")
        candidate = llm.chat(ChatRequest(messages=(ChatMessage("user", prompt),),
                                         tag="reformulate")).strip()
        if candidate and candidate not in known:
            return candidate
    raise DegenerateReformulation(question)


def build_answer_prompt(question: str, evidence: RecallSet,
                        templates: PromptTemplates = PromptTemplates(),
                        addendum: Optional[str] = None) -> str:
    knowledge = _numbered_items(evidence)
    prompt = templates.answer.format(question=question, knowledge=knowledge)
    if addendum:
        prompt += "\n" + addendum
    return prompt


def generate_answer(question: str, evidence: RecallSet, llm: Gateway,
                    templates: PromptTemplates = PromptTemplates(),
                    addendum: Optional[str] = None) -> str:
    """Answer from the template: question section, then the rendered
    knowledge items in recall order. Returns the backend text verbatim."""
    if evidence.is_empty():
        raise EmptyEvidence(question)
    prompt = build_answer_prompt(question, evidence, templates, addendum)
    return llm.chat(ChatRequest(messages=(ChatMessage("user", prompt),), tag="answer"))


def check_support(answer: str, evidence: RecallSet, judge: Gateway,
                  templates: PromptTemplates = PromptTemplates()) -> Judgment:
    if not answer:
        raise ReflectionError("cannot judge an empty answer")
    prompt = templates.support_judge.format(answer=answer, items=_numbered_items(evidence))
    response = judge.chat(ChatRequest(messages=(ChatMessage("user", prompt),),
                                      tag="support_judge"))
    verdict = _parse_yes_no(response)
    if verdict is None:
        return Judgment(verdict=True, rationale=response, parse_failed=True)
    return Judgment(verdict=verdict, rationale=response)


def check_helpful(answer: str, question: str, judge: Gateway,
                  templates: PromptTemplates = PromptTemplates()) -> Judgment:
    if not answer:
        raise ReflectionError("cannot judge an empty answer")
    prompt = templates.helpful_judge.format(question=question, answer=answer)
    response = judge.chat(ChatRequest(messages=(ChatMessage("user", prompt),),
                                      tag="helpful_judge"))
    verdict = _parse_yes_no(response)
    if verdict is None:
        return Judgment(verdict=True, rationale=response, parse_failed=True)
    return Judgment(verdict=verdict, rationale=response)


RecallFn = Callable[[str], RecallSet]


def run_reflection(question: str, recall_fn: RecallFn, llm: Gateway,
                   cfg: Optional[ReflectionConfig] = None,
                   judge: Optional[Gateway] = None,
                   clock: Callable[[], float] = time.perf_counter
                   ) -> tuple[Optional[str], ReflectionTrace]:
    """Run the full loop for one question.

    Outcomes: ``answered`` (support and helpfulness both passed),
    ``no_evidence`` (every round's relevant set was empty and the
    reformulation cap is spent), ``best_effort_cap_hit`` (an answer exists
    but a cap stopped further improvement).
    """
    cfg = cfg or ReflectionConfig()
    judge = judge or llm
    trace = ReflectionTrace(question_history=[question])
    reformulations = 0
    current_question = question
    last_answer: Optional[str] = None
    start = clock()

    def mark(state: str, payload: Optional[dict] = None) -> None:
        trace.add(state, payload, elapsed_ms=(clock() - start) * 1000.0)

    def try_reformulate() -> bool:
        """Returns True if a new question was adopted."""
        nonlocal current_question, reformulations
        if reformulations >= cfg.max_reformulations:
            return False
        try:
            new_question = reformulate(current_question, trace.question_history, llm,
                                       cfg.templates)
        except DegenerateReformulation:
            reformulations = cfg.max_reformulations
            return False
        reformulations += 1
        trace.question_history.append(new_question)
        mark("reformulate", {"question": new_question})
        current_question = new_question
        return True

    while True:
        recall = recall_fn(current_question)
        mark("retrieve", {"question": current_question, "retrieved": len(recall.results),
                          "entry_ids": [r.entry_id for r in recall.results]})
        evidence, relevance = assess_relevance(current_question, recall, judge, cfg.templates)
        if relevance.parse_failed:
            trace.judge_parse_failures += 1
        mark("relevance", {
            "kept": len(evidence.results),
            "entry_ids": [r.entry_id for r in evidence.results],
            "items": [{"entry_id": r.entry_id, "channel": r.channel, "score": r.score}
                      for r in evidence.results],
        })
        mark("empty_check", {"empty": evidence.is_empty()})

        if evidence.is_empty():
            if try_reformulate():
                continue
            trace.outcome = "no_evidence" if last_answer is None else "best_effort_cap_hit"
            trace.final_answer = last_answer
            mark("done", {"outcome": trace.outcome})
            return last_answer, trace

        addendum = None
        regenerations = 0
        while True:
            last_answer = generate_answer(current_question, evidence, llm, cfg.templates,
                                          addendum=addendum)
            mark("generate", {"regeneration": regenerations})
            support = check_support(last_answer, evidence, judge, cfg.templates)
            if support.parse_failed:
                trace.judge_parse_failures += 1
            mark("support_check", {"supported": bool(support.verdict)})
            if support.verdict or regenerations >= cfg.max_regenerations:
                break
            regenerations += 1
            addendum = UNSUPPORTED_ADDENDUM.format(previous=last_answer)

        helpful = check_helpful(last_answer, current_question, judge, cfg.templates)
        if helpful.parse_failed:
            trace.judge_parse_failures += 1
        mark("helpful_check", {"helpful": bool(helpful.verdict)})
        if helpful.verdict:
            trace.outcome = "answered"
            trace.final_answer = last_answer
            mark("done", {"outcome": trace.outcome})
            return last_answer, trace
        if try_reformulate():
            continue
        trace.outcome = "best_effort_cap_hit"
        trace.final_answer = last_answer
        mark("done", {"outcome": trace.outcome})
        return last_answer, trace
