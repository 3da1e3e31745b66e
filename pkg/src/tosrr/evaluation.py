"""Benchmark scoring arithmetic: multiple-choice exam scoring with the
factual/case split, recall-accuracy sheets, five-dimension manual ratings
on the 100-point scale, percentile-bootstrap confidence intervals, and the
four-group ablation benchmark runner.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_UP
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

MANUAL_DIMENSIONS = ("safety", "consistency", "explainability", "compliance",
                     "self_consistency")

BENCH_GROUPS = ("tosrr", "spot-rag", "rag", "base")


class EvaluationError(Exception):
    pass


class UnknownItemId(EvaluationError):
    pass


class GridMismatch(EvaluationError):
    pass


class MissingDimension(EvaluationError):
    pass


class TooFewSamples(EvaluationError):
    pass


def round2(value: float) -> float:
    """Half-up rounding to 2 decimals (exam-sheet arithmetic, not banker's)."""
    return float(Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class McqItem:
    id: str
    stem: str
    options: dict[str, str]
    key: str
    category: str  # "factual" | "case_analysis"
    subject: Optional[str] = None

    def __post_init__(self):
        if self.key not in self.options:
            raise EvaluationError(f"item {self.id}: key {self.key!r} not among options")
        if self.category not in ("factual", "case_analysis"):
            raise EvaluationError(f"item {self.id}: bad category {self.category!r}")


def load_items(path: str | Path) -> list[McqItem]:
    items = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            items.append(McqItem(id=rec["id"], stem=rec["stem"], options=rec["options"],
                                 key=rec["key"], category=rec["category"],
                                 subject=rec.get("subject")))
    return items


@dataclass
class MleReport:
    factual_correct: int
    case_correct: int
    total: int
    percentage: float
    question_count: int
    unanswered: int = 0
    per_subject: dict[str, int] = field(default_factory=dict)

    def as_row(self, model: str) -> dict:
        return {
            "model": model,
            "factual": self.factual_correct,
            "case_analysis": self.case_correct,
            "total": self.total,
            "percentage": self.percentage,
        }


_CHOICE_PATTERN = re.compile(r"(?<![A-Za-z])([A-Ea-e])(?![A-Za-z])")


def extract_choice(model_output: str) -> Optional[str]:
    """First standalone A-E token in the output, case-folded."""
    match = _CHOICE_PATTERN.search(model_output)
    return match.group(1).upper() if match else None


def score_mcq(responses: dict[str, Optional[str]], items: Sequence[McqItem]) -> MleReport:
    """One point per exact key match; blanks score 0 and are counted."""
    by_id = {item.id: item for item in items}
    for item_id in responses:
        if item_id not in by_id:
            raise UnknownItemId(item_id)
    factual = case = unanswered = 0
    per_subject: dict[str, int] = {}
    for item in items:
        response = responses.get(item.id)
        if response is None:
            unanswered += 1
            continue
        if response.upper() == item.key:
            if item.category == "factual":
                factual += 1
            else:
                case += 1
            if item.subject is not None:
                per_subject[item.subject] = per_subject.get(item.subject, 0) + 1
    total = factual + case
    count = len(items)
    percentage = round2(total / count * 100) if count else 0.0
    return MleReport(factual_correct=factual, case_correct=case, total=total,
                     percentage=percentage, question_count=count,
                     unanswered=unanswered, per_subject=per_subject)


def compare_pass_line(report: MleReport, pass_lines: dict[str, float]) -> dict[str, str]:
    """pass iff total >= line, per year."""
    return {year: ("pass" if report.total >= line else "fail")
            for year, line in pass_lines.items()}


@dataclass
class RecallScoreSheet:
    expert_id: str
    marks: dict[tuple[str, int], int]  # (question id, rank 1..15) -> 0/1

    def grid(self) -> frozenset[tuple[str, int]]:
        return frozenset(self.marks)


def recall_accuracy(sheets: Sequence[RecallScoreSheet]) -> dict[str, float]:
    """Expert-averaged total marks and the accuracy over the grid.

    accuracy is rounded from the unrounded mean; average_total is reported
    to 1 decimal (the rounding the published numbers leave ambiguous).
    """
    if not sheets:
        raise GridMismatch("no score sheets")
    grid = sheets[0].grid()
    for sheet in sheets[1:]:
        if sheet.grid() != grid:
            raise GridMismatch(f"sheet {sheet.expert_id} covers a different grid")
    totals = [sum(sheet.marks.values()) for sheet in sheets]
    average_total = sum(totals) / len(totals)
    accuracy = round2(average_total / len(grid))
    return {"accuracy": accuracy, "average_total": round(average_total, 1)}


@dataclass(frozen=True)
class ManualRating:
    expert_id: str
    question_id: str
    model_id: str
    dims: dict[str, int]

    def __post_init__(self):
        missing = [d for d in MANUAL_DIMENSIONS if d not in self.dims]
        if missing:
            raise MissingDimension(f"{self.expert_id}/{self.question_id}: missing {missing}")
        for dim, value in self.dims.items():
            if not 1 <= value <= 5:
                raise EvaluationError(f"rating {value} outside 1..5 for {dim}")


def aggregate_manual(ratings: Sequence[ManualRating], model_id: str) -> dict:
    """Per-dimension mean rating mapped linearly onto 20 points; total is
    the sum of unrounded per-dimension scores, rounded once."""
    rows = [r for r in ratings if r.model_id == model_id]
    if not rows:
        raise EvaluationError(f"no ratings for model {model_id!r}")
    per_dim_raw = {}
    for dim in MANUAL_DIMENSIONS:
        values = [r.dims[dim] for r in rows]
        per_dim_raw[dim] = (sum(values) / len(values)) * 4.0
    total = round2(sum(per_dim_raw.values()))
    per_dim = {dim: round2(v) for dim, v in per_dim_raw.items()}
    return {"per_dim": per_dim, "total": total}


def manual_improvement(ratings: Sequence[ManualRating], model_a: str, model_b: str) -> float:
    """total(model_a) - total(model_b), last-digit exact."""
    a = aggregate_manual(ratings, model_a)["total"]
    b = aggregate_manual(ratings, model_b)["total"]
    return round2(a - b)


def bootstrap_ci(samples: Sequence[float], resamples: int = 10_000,
                 level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile interval of resampled means.

    RNG stream contract (so an independent implementation can agree
    bit-for-bit): numpy PCG64 seeded with ``seed``; one call
    ``integers(0, n, size=(resamples, n))`` yields all resample indices;
    interval bounds are linear-interpolation quantiles of the sorted means
    at (1-level)/2 and 1-(1-level)/2.
    """
    samples = list(samples)
    n = len(samples)
    if n < 2:
        raise TooFewSamples(f"need >= 2 samples, got {n}")
    if not 0.0 < level < 1.0:
        raise EvaluationError("level must be in (0, 1)")
    data = np.asarray(samples, dtype=np.float64)
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = rng.integers(0, n, size=(resamples, n))
    means = data[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha], method="linear")
    return float(lo), float(hi)


# -- ablation benchmark ------------------------------------------------------


@dataclass
class GroupRunResult:
    report: MleReport
    responses: dict[str, Optional[str]]
    answers: dict[str, str]
    errors: dict[str, str] = field(default_factory=dict)
    trace_archive: dict[str, str] = field(default_factory=dict)  # item id -> trace jsonl


AnswerFn = Callable[[McqItem], str]


def format_question(item: McqItem) -> str:
    options = "\n".join(f"{letter}. {text}" for letter, text in sorted(item.options.items()))
    return f"{item.stem}\n{options}\nPlease select one answer."


def run_group(items: Sequence[McqItem], answer_fn: AnswerFn) -> GroupRunResult:
    """Answer every item through one pipeline configuration; gateway errors
    score 0 and are flagged rather than aborting the run."""
    responses: dict[str, Optional[str]] = {}
    answers: dict[str, str] = {}
    errors: dict[str, str] = {}
    for item in items:
        try:
            answer = answer_fn(item)
        except Exception as exc:  # scored 0, flagged
            errors[item.id] = str(exc)
            responses[item.id] = None
            continue
        answers[item.id] = answer
        responses[item.id] = extract_choice(answer)
    report = score_mcq(responses, items)
    return GroupRunResult(report=report, responses=responses, answers=answers, errors=errors)


def write_reports(results: dict[str, GroupRunResult], out_dir: str | Path) -> None:
    """Machine-readable table plus a plain-text summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = [result.report.as_row(group) for group, result in results.items()]
    (out / "report.json").write_text(json.dumps(table, indent=2, ensure_ascii=False),
                                     encoding="utf-8")
    lines = [f"{'model':<12}{'factual':>8}{'case':>6}{'total':>7}{'percent':>9}"]
    for row in table:
        lines.append(f"{row['model']:<12}{row['factual']:>8}{row['case_analysis']:>6}"
                     f"{row['total']:>7}{row['percentage']:>9.2f}")
    (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for group, result in results.items():
        with (out / f"answers-{group}.jsonl").open("w", encoding="utf-8") as fh:
            for item_id, answer in result.answers.items():
                fh.write(json.dumps({"item": item_id, "answer": answer,
                                     "choice": result.responses.get(item_id)},
                                    ensure_ascii=False) + "\n")
