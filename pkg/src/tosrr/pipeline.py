"""Wiring of the four benchmark pipelines over one knowledge base.

Groups:
  tosrr    — full recall + self-reflection loop
  spot-rag — full recall + single grounded generation, no reflection
  rag      — vector-only recall, entries rendered without tree-path
             prefixes, no reflection
  base     — no retrieval at all
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .evaluation import BENCH_GROUPS, GroupRunResult, McqItem, format_question, run_group
from .gateway import ChatMessage, ChatRequest, Gateway
from .index import KeywordIndex, VectorIndex
from .knowledge import KnowledgeBase, SpoT
from .recall import RecallConfig, RecallResult, RecallSet, multi_way_recall
from .reflection import (
    ReflectionConfig,
    ReflectionTrace,
    build_answer_prompt,
    run_reflection,
)


@dataclass
class Engine:
    """One loaded knowledge base with its indices and gateway."""

    kb: KnowledgeBase
    keyword_index: KeywordIndex
    vector_index: VectorIndex
    gateway: Gateway
    recall_cfg: RecallConfig = field(default_factory=RecallConfig)
    reflection_cfg: ReflectionConfig = field(default_factory=ReflectionConfig)

    def recall(self, question: str) -> RecallSet:
        return multi_way_recall(question, self.kb, self.keyword_index,
                                self.vector_index, self.gateway, self.recall_cfg)

    def vector_only_recall(self, question: str, strip_paths: bool) -> RecallSet:
        """RAG-group recall: vector channel only, optionally without the
        tree-path provenance prefix."""
        out = RecallSet(question=question)
        if len(self.vector_index) == 0:
            return out
        [query_vector] = self.gateway.embed_batch([question])
        k = min(self.recall_cfg.total_limit, len(self.vector_index))
        for rank, (entry_id, sim) in enumerate(self.vector_index.knn(query_vector, k=k), 1):
            entry = self.kb.entries[entry_id]
            if strip_paths:
                from dataclasses import replace
                entry = replace(entry, tree_path=())
            out.results.append(RecallResult(spo_t=SpoT(entry=entry), channel="vector",
                                            score=float(sim), rank=rank))
        out.stats["vector_hits"] = len(out.results)
        return out

    def answer_with_reflection(self, question: str, **kwargs) -> tuple[Optional[str], ReflectionTrace]:
        return run_reflection(question, self.recall, self.gateway,
                              self.reflection_cfg, **kwargs)

    def answer_once(self, question: str, recall: Optional[RecallSet] = None) -> str:
        """Single grounded generation without the reflection loop."""
        evidence = recall if recall is not None else self.recall(question)
        if evidence.is_empty():
            prompt = self.reflection_cfg.templates.answer.format(
                question=question, knowledge="(knowledge base returned nothing)")
        else:
            prompt = build_answer_prompt(question, evidence, self.reflection_cfg.templates)
        return self.gateway.chat(ChatRequest(messages=(ChatMessage("user", prompt),),
                                             tag="answer"))

    def answer_bare(self, question: str) -> str:
        """Base group: the raw question, no knowledge section."""
        return self.gateway.chat(ChatRequest(messages=(ChatMessage("user", question),),
                                             tag="answer"))


def run_benchmark(items: Sequence[McqItem], engine: Engine,
                  groups: Sequence[str] = BENCH_GROUPS) -> dict[str, GroupRunResult]:
    """Answer every item through each requested group's pipeline."""
    results: dict[str, GroupRunResult] = {}
    for group in groups:
        if group == "tosrr":
            def answer_fn(item: McqItem) -> str:
                answer, trace = engine.answer_with_reflection(format_question(item))
                return answer or ""
        elif group == "spot-rag":
            def answer_fn(item: McqItem) -> str:
                return engine.answer_once(format_question(item))
        elif group == "rag":
            def answer_fn(item: McqItem) -> str:
                question = format_question(item)
                recall = engine.vector_only_recall(question, strip_paths=True)
                return engine.answer_once(question, recall=recall)
        elif group == "base":
            def answer_fn(item: McqItem) -> str:
                return engine.answer_bare(format_question(item))
        else:
            raise ValueError(f"unknown benchmark group {group!r}")
        results[group] = run_group(items, answer_fn)
    return results


def load_engine(kb_path: str | Path, index_path: str | Path, gateway: Gateway,
                recall_cfg: Optional[RecallConfig] = None,
                reflection_cfg: Optional[ReflectionConfig] = None) -> Engine:
    from .knowledge import load_kb

    kb = load_kb(kb_path)
    index_path = Path(index_path)
    vector_index = VectorIndex.load(index_path)
    keyword_index = KeywordIndex.load(index_path.with_suffix(".kw.json"))
    return Engine(kb=kb, keyword_index=keyword_index, vector_index=vector_index,
                  gateway=gateway, recall_cfg=recall_cfg or RecallConfig(),
                  reflection_cfg=reflection_cfg or ReflectionConfig())
