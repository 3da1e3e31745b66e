"""Multi-way recall: keyword-matched triples plus vector-matched content,
merged into the top-15 prompt payload.

The keyword channel fills up to its quota; the vector channel fills the
remainder ("fill-up" when keyword hits are scarce). Duplicates resolve in
the keyword channel's favor. Final ordering is the keyword block then the
vector block, each score-descending with id tie-breaks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .gateway import Gateway
from .index import KeywordIndex, VectorIndex, keyword_match
from .knowledge import EntryKind, KnowledgeBase, SpoT, render_spo_t


class ConfigInvalid(Exception):
    pass


@dataclass(frozen=True)
class RecallConfig:
    total_limit: int = 15
    keyword_quota: int = 5
    vector_quota: int = 10

    def __post_init__(self):
        if min(self.total_limit, self.keyword_quota, self.vector_quota) <= 0:
            raise ConfigInvalid("all recall quotas must be positive")
        if self.keyword_quota + self.vector_quota != self.total_limit:
            raise ConfigInvalid("keyword_quota + vector_quota must equal total_limit")


@dataclass(frozen=True)
class RecallResult:
    spo_t: SpoT
    channel: str  # "keyword" | "vector"
    score: float
    rank: int

    @property
    def entry_id(self) -> str:
        return self.spo_t.entry.id

    def rendered(self) -> str:
        return render_spo_t(self.spo_t)


@dataclass
class RecallSet:
    question: str
    results: list[RecallResult] = field(default_factory=list)
    stats: dict[str, int] = field(default_factory=lambda: {
        "keyword_hits": 0, "vector_hits": 0, "deduped": 0})

    def __len__(self) -> int:
        return len(self.results)

    def is_empty(self) -> bool:
        return not self.results

    def renumbered(self, results: list[RecallResult]) -> "RecallSet":
        """Same question/stats with a filtered, re-ranked result list."""
        new = [RecallResult(spo_t=r.spo_t, channel=r.channel, score=r.score, rank=i + 1)
               for i, r in enumerate(results)]
        return RecallSet(question=self.question, results=new, stats=dict(self.stats))


def merge_and_rank(kw_hits: Sequence[tuple[str, float]],
                   vec_hits: Sequence[tuple[str, float]],
                   cfg: RecallConfig) -> list[tuple[str, str, float, int]]:
    """Merge two internally-sorted scored id lists into the final
    (id, channel, score, rank) composition.

    Keyword takes min(quota, hits); vector fills to the total, skipping ids
    the keyword block already claimed.
    """
    kw_block = list(kw_hits[: cfg.keyword_quota])
    taken = {eid for eid, _ in kw_block}
    vector_slots = cfg.total_limit - len(kw_block)
    vec_block: list[tuple[str, float]] = []
    for eid, score in vec_hits:
        if len(vec_block) >= vector_slots:
            break
        if eid in taken:
            continue
        taken.add(eid)
        vec_block.append((eid, score))
    merged = [(eid, "keyword", score) for eid, score in kw_block]
    merged += [(eid, "vector", score) for eid, score in vec_block]
    return [(eid, channel, score, rank + 1) for rank, (eid, channel, score) in enumerate(merged)]


def multi_way_recall(question: str, kb: KnowledgeBase, kw: KeywordIndex,
                     vec: VectorIndex, gateway: Gateway,
                     cfg: Optional[RecallConfig] = None) -> RecallSet:
    """Run both channels for one question and merge per the quota rules.

    Keyword hits map triple ids to their source chunk's raw entry (that is
    the SpoT context); the dedup key on both channels is the underlying
    entry id. The vector channel over-fetches so deduplication cannot
    starve it.
    """
    cfg = cfg or RecallConfig()
    out = RecallSet(question=question)
    if not kb.entries or (len(vec) == 0 and not kw.postings):
        return out

    kw_raw = keyword_match(kw, question, limit=cfg.total_limit, tokenizer_id=kw.tokenizer_id)
    kw_scored: list[tuple[str, float]] = []
    kw_spo_t: dict[str, SpoT] = {}
    for triple_id, score in kw_raw:
        triple = kb.triples.get(triple_id)
        if triple is None or triple.source_chunk is None:
            continue
        entry = kb.entry_for_chunk(triple.source_chunk)
        if entry is None:
            continue
        if entry.id in kw_spo_t:
            continue  # one keyword slot per underlying entry
        kw_spo_t[entry.id] = SpoT(entry=entry, triple=triple)
        kw_scored.append((entry.id, float(score)))

    vec_scored: list[tuple[str, float]] = []
    vec_spo_t: dict[str, SpoT] = {}
    if len(vec) > 0:
        [query_vector] = gateway.embed_batch([question])
        # Over-fetch 2x the total so dedup against the keyword block cannot
        # leave vector slots unfilled.
        for entry_id, sim in vec.knn(query_vector, k=min(2 * cfg.total_limit, len(vec))):
            entry = kb.entries.get(entry_id)
            if entry is None:
                continue
            vec_spo_t[entry_id] = SpoT(entry=entry)
            vec_scored.append((entry_id, float(sim)))

    out.stats["keyword_hits"] = len(kw_scored)
    out.stats["vector_hits"] = len(vec_scored)
    merged = merge_and_rank(kw_scored, vec_scored, cfg)
    kw_block_ids = {eid for eid, ch, _, _ in merged if ch == "keyword"}
    out.stats["deduped"] = sum(1 for eid, _ in vec_scored if eid in kw_block_ids)
    for entry_id, channel, score, rank in merged:
        spo_t = kw_spo_t[entry_id] if channel == "keyword" else vec_spo_t[entry_id]
        out.results.append(RecallResult(spo_t=spo_t, channel=channel, score=score, rank=rank))
    return out


def dump_recall(recall: RecallSet) -> list[dict]:
    """Debug dump: one record per result, the shape of the recall table
    shown to operators and the UI."""
    return [
        {
            "rank": r.rank,
            "channel": r.channel,
            "score": r.score,
            "entry_id": r.entry_id,
            "tree_path": list(r.spo_t.entry.tree_path),
            "rendered": r.rendered(),
        }
        for r in recall.results
    ]
