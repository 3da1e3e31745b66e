"""Document ingestion: segmentation, LLM content/triple extraction, the
two-screen review workflow, and tree assembly.

Segmentation is lossless: joining the chunk texts with the paragraph
separator reproduces the document's paragraph stream byte for byte.
Paragraphs are atomic; a chunk targets 200-300 words and is flagged when
the source makes that impossible (oversize indivisible paragraph, short
tail, or a paragraph boundary that cannot land inside the window).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

from .gateway import ChatMessage, ChatRequest, Gateway
from .knowledge import (
    EntryKind,
    KnowledgeBase,
    KnowledgeEntry,
    KnowledgeNode,
    KnowledgeTree,
    NodeLevel,
    PredicateVocabulary,
    QA_DELIMITER,
    SpoTriple,
    attach_chunk,
    validate_triple,
)
from .textutil import word_count

logger = logging.getLogger(__name__)

PARAGRAPH_SEPARATOR = "\n\n"
MIN_CHUNK_WORDS = 200
MAX_CHUNK_WORDS = 300


class IngestionError(Exception):
    pass


class EmptyGeneration(IngestionError):
    pass


class ParseError(IngestionError):
    pass


class IllegalTransition(IngestionError):
    pass


class TagStageMismatch(IngestionError):
    pass


@dataclass(frozen=True)
class Block:
    kind: str  # "heading" | "paragraph"
    text: str
    heading_level: int = 0  # 1..4 for headings


@dataclass
class SourceDocument:
    book_label: str
    blocks: list[Block] = field(default_factory=list)


@dataclass
class TextChunk:
    id: str
    text: str
    word_count: int
    heading_path: tuple[str, ...] = ()
    flag: Optional[str] = None  # "oversize" | "undersize" | None


def parse_markup(text: str, book_label: str) -> SourceDocument:
    """Minimal markup: '#'-prefixed heading lines (depth 1..4), blank-line
    separated paragraphs."""
    blocks: list[Block] = []
    paragraph_lines: list[str] = []

    def flush():
        if paragraph_lines:
            blocks.append(Block("paragraph", "\n".join(paragraph_lines)))
            paragraph_lines.clear()

    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("#"):
            flush()
            depth = len(stripped) - len(stripped.lstrip("#"))
            blocks.append(Block("heading", stripped[depth:].strip(), heading_level=min(depth, 4)))
        elif not stripped:
            flush()
        else:
            paragraph_lines.append(line)
    flush()
    return SourceDocument(book_label=book_label, blocks=blocks)


def parse_block_jsonl(path: str | Path, book_label: Optional[str] = None) -> SourceDocument:
    """Block records: {"kind": "heading", "level": 1..4, "text": ...} or
    {"kind": "paragraph", "text": ...}; an optional leading
    {"kind": "book", "label": ...} names the book."""
    blocks: list[Block] = []
    label = book_label or Path(path).stem
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec["kind"] == "book":
                label = rec["label"]
            elif rec["kind"] == "heading":
                blocks.append(Block("heading", rec["text"], heading_level=int(rec["level"])))
            elif rec["kind"] == "paragraph":
                blocks.append(Block("paragraph", rec["text"]))
            else:
                raise ParseError(f"unknown block kind {rec['kind']!r}")
    return SourceDocument(book_label=label, blocks=blocks)


def segment(doc: SourceDocument,
            counter: Callable[[str], int] = word_count,
            chunk_id_prefix: str = "chunk") -> list[TextChunk]:
    """Group paragraphs into 200-300 word chunks under their heading stack.

    Chunks never span headings. A paragraph that would push a sub-200-word
    chunk past 300 closes it early (flagged undersize); a single paragraph
    over 300 words becomes its own oversize-flagged chunk; a document or
    section tail under 200 words is flagged undersize.
    """
    chunks: list[TextChunk] = []
    heading_stack: list[tuple[int, str]] = []
    section: list[str] = []
    section_path: tuple[str, ...] = ()

    def emit(paragraphs: list[str], n_words: int, path: tuple[str, ...]) -> None:
        flag = None
        if n_words > MAX_CHUNK_WORDS:
            flag = "oversize"
        elif n_words < MIN_CHUNK_WORDS:
            flag = "undersize"
        chunks.append(TextChunk(
            id=f"{chunk_id_prefix}-{len(chunks):04d}",
            text=PARAGRAPH_SEPARATOR.join(paragraphs),
            word_count=n_words,
            heading_path=path,
            flag=flag,
        ))

    def pack_section() -> None:
        """Pack one heading span into ceil(total/300) balanced chunks.

        Paragraphs over 300 words are indivisible and become their own
        oversize chunks; the runs between them are packed toward an even
        target so chunk sizes land inside the 200-300 window whenever the
        paragraph lengths allow it.
        """
        nonlocal section
        if not section:
            return
        paragraphs = section
        section = []
        weights = [counter(p) for p in paragraphs]
        run: list[tuple[str, int]] = []

        def pack_run() -> None:
            nonlocal run
            if not run:
                return
            total = sum(w for _, w in run)
            n_chunks = max(1, math.ceil(total / MAX_CHUNK_WORDS))
            emitted = 0
            remaining = total
            pending: list[str] = []
            pending_words = 0
            for text, w in run:
                if pending and pending_words + w > MAX_CHUNK_WORDS:
                    emit(pending, pending_words, section_path)
                    emitted += 1
                    pending, pending_words = [], 0
                pending.append(text)
                pending_words += w
                remaining -= w
                slots_left = n_chunks - emitted
                target = (pending_words + remaining) / slots_left if slots_left > 1 else None
                if target is not None and pending_words >= target:
                    emit(pending, pending_words, section_path)
                    emitted += 1
                    pending, pending_words = [], 0
            if pending:
                emit(pending, pending_words, section_path)
            run = []

        for text, w in zip(paragraphs, weights):
            if w > MAX_CHUNK_WORDS:
                pack_run()
                emit([text], w, section_path)
            else:
                run.append((text, w))
        pack_run()

    for block in doc.blocks:
        if block.kind == "heading":
            pack_section()
            # Heading depths 1..4 map to chapter/title/knowledge_point
            # (depth 4 collapses onto 3).
            depth = min(block.heading_level, 3)
            while heading_stack and heading_stack[-1][0] >= depth:
                heading_stack.pop()
            heading_stack.append((depth, block.text))
            section_path = tuple(label for _, label in heading_stack)
        else:
            section.append(block.text)
    pack_section()
    return chunks


# -- review workflow ---------------------------------------------------------

FIRST_SCREEN_TAGS = ("literary_nonsense", "needs_external_info", "meaningless")
SECOND_SCREEN_TAGS = ("error_of_fact", "excessive_omission", "supplementary_context",
                      "confusion_of_concepts")


class ReviewStage(str, Enum):
    PENDING = "pending"
    FIRST_SCREEN = "first_screen"
    SECOND_SCREEN = "second_screen"
    ACCEPTED = "accepted"
    DELETED = "deleted"


@dataclass(frozen=True)
class ReviewState:
    entry_id: str
    stage: ReviewStage = ReviewStage.PENDING
    noise_tag: Optional[str] = None
    revision: Optional[str] = None


@dataclass(frozen=True)
class Verdict:
    action: str  # "delete" | "revise" | "accept"
    tag: Optional[str] = None
    text: Optional[str] = None


def review_screen(state: ReviewState, verdict: Verdict) -> ReviewState:
    """Advance one entry through the two-screen workflow.

    pending -> first_screen -> {deleted | second_screen} -> accepted.
    Deletion tags belong to the first screen, revision tags to the second.
    """
    if state.stage is ReviewStage.PENDING:
        # Entering the first screen happens implicitly with the verdict.
        if verdict.action == "delete":
            if verdict.tag not in FIRST_SCREEN_TAGS:
                raise TagStageMismatch(f"{verdict.tag!r} is not a first-screen tag")
            return replace(state, stage=ReviewStage.DELETED, noise_tag=verdict.tag)
        if verdict.action == "accept":
            return replace(state, stage=ReviewStage.SECOND_SCREEN)
        raise IllegalTransition("first screen only deletes or passes entries on")
    if state.stage is ReviewStage.SECOND_SCREEN:
        if verdict.action == "revise":
            if verdict.tag not in SECOND_SCREEN_TAGS:
                raise TagStageMismatch(f"{verdict.tag!r} is not a second-screen tag")
            if not verdict.text:
                raise IllegalTransition("revision requires replacement text")
            return replace(state, stage=ReviewStage.ACCEPTED, noise_tag=verdict.tag,
                           revision=verdict.text)
        if verdict.action == "accept":
            return replace(state, stage=ReviewStage.ACCEPTED)
        raise IllegalTransition("second screen only revises or accepts")
    raise IllegalTransition(f"no transition from stage {state.stage.value}")


def replay_review_file(states: dict[str, ReviewState], path: str | Path) -> dict[str, ReviewState]:
    """Batch mode: apply JSONL verdicts {entry_id, action, tag?, text?}."""
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            entry_id = rec["entry_id"]
            if entry_id not in states:
                raise IngestionError(f"review verdict for unknown entry {entry_id}")
            verdict = Verdict(action=rec["action"], tag=rec.get("tag"), text=rec.get("text"))
            states[entry_id] = review_screen(states[entry_id], verdict)
    return states


# -- LLM extraction ----------------------------------------------------------

QA_PROMPT = (
    "Read the following text and produce one question-and-answer pair that "
    "captures its key teaching. Reply with the question on one line starting "
    "'Q: ' and the answer on the next starting 'A: '.\n\n{chunk}"
)
SUMMARY_PROMPT = (
    "Summarize the following text in two to four sentences, keeping all "
    "technical terms intact.\n\n{chunk}"
)
JUDGE_PROMPT = (
    "Two candidate versions of the same {kind} follow. Reply with exactly "
    "'A' or 'B' naming the superior version.\n\nVersion A:\n{a}\n\n"
    "Version B:\n{b}"
)

TRIPLE_EXAMPLE = (
    "Taiyang disease | include | headache"
)

TRIPLE_PROMPT = (
    "Extract subject-predicate-object facts from the text below. Use only "
    "these predicate ids: {predicates}. Output one fact per line in the "
    "format 'subject | predicate | object'. Worked example:\n"
    "Text: Taiyang disease includes headache.\nFacts:\n" + TRIPLE_EXAMPLE +
    "\n\nText: {chunk}\nFacts:"
)


@dataclass
class ExtractionResult:
    qa_pair: KnowledgeEntry
    summary: KnowledgeEntry
    review: dict[str, ReviewState]


def _generate_twice_pick_best(gateway: Gateway, prompt: str, kind: str,
                              judge: Gateway, tag: str) -> str:
    versions = []
    for _ in range(2):
        req = ChatRequest(messages=(ChatMessage("user", prompt),), tag=tag)
        versions.append(gateway.chat(req).strip())
    if not any(versions):
        raise EmptyGeneration(f"both {kind} generations were empty")
    judge_req = ChatRequest(
        messages=(ChatMessage("user", JUDGE_PROMPT.format(kind=kind, a=versions[0], b=versions[1])),),
        tag="version_judge",
    )
    verdict = judge.chat(judge_req).strip().upper()
    # Ties and unparseable verdicts keep the first version.
    if verdict.startswith("B") and versions[1]:
        return versions[1]
    return versions[0] or versions[1]


def extract_contents(chunk: TextChunk, llm: Gateway, judge: Optional[Gateway] = None) -> ExtractionResult:
    """Generate a Q&A pair and a summary for one chunk, twice each, keeping
    the judge-preferred version. New entries start review at pending."""
    judge = judge or llm
    qa_text = _generate_twice_pick_best(
        llm, QA_PROMPT.format(chunk=chunk.text), "question-and-answer pair", judge, tag="qa_generate")
    summary_text = _generate_twice_pick_best(
        llm, SUMMARY_PROMPT.format(chunk=chunk.text), "summary", judge, tag="summary_generate")
    if QA_DELIMITER not in qa_text:
        raise ParseError("qa_pair response lacks the 'Q: ...\\nA: ...' shape")
    qa = KnowledgeEntry(id=f"{chunk.id}-qa", kind=EntryKind.QA_PAIR, text=qa_text,
                        chunk_id=chunk.id, tree_path=chunk.heading_path)
    summary = KnowledgeEntry(id=f"{chunk.id}-sum", kind=EntryKind.SUMMARY, text=summary_text,
                             chunk_id=chunk.id, tree_path=chunk.heading_path)
    review = {e.id: ReviewState(entry_id=e.id) for e in (qa, summary)}
    return ExtractionResult(qa_pair=qa, summary=summary, review=review)


@dataclass
class TripleExtraction:
    triples: list[SpoTriple]
    dropped: int


def extract_triples(chunk: TextChunk, llm: Gateway, vocab: PredicateVocabulary,
                    id_prefix: Optional[str] = None) -> TripleExtraction:
    """One-shot triple extraction. The prompt carries the full predicate
    vocabulary and one worked example; invalid lines are dropped and
    counted."""
    if len(vocab) == 0:
        raise IngestionError("empty predicate vocabulary")
    prompt = TRIPLE_PROMPT.format(predicates=", ".join(vocab.ids()), chunk=chunk.text)
    response = llm.chat(ChatRequest(messages=(ChatMessage("user", prompt),), tag="triple_extract"))
    triples: list[SpoTriple] = []
    dropped = 0
    prefix = id_prefix or chunk.id
    for line in response.splitlines():
        line = line.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 3:
            dropped += 1
            logger.debug("unparseable triple line dropped: %r", line)
            continue
        subject, predicate_text, obj = parts
        predicate = vocab.resolve(predicate_text) or predicate_text
        triple = SpoTriple(id=f"{prefix}-t{len(triples) + dropped}", subject=subject,
                           predicate=predicate, object=obj, source_chunk=chunk.id)
        result = validate_triple(triple, vocab)
        if result.ok:
            triples.append(triple)
        else:
            dropped += 1
            logger.debug("invalid triple dropped (%s): %r", ",".join(result.violations), line)
    return TripleExtraction(triples=triples, dropped=dropped)


# -- tree assembly -----------------------------------------------------------

_DEPTH_LEVEL = {1: NodeLevel.CHAPTER, 2: NodeLevel.TITLE, 3: NodeLevel.KNOWLEDGE_POINT}

UNTITLED_LABEL = "(untitled)"


def build_tree(book: str, chunks: Sequence[TextChunk]) -> KnowledgeTree:
    """Mirror the union of heading paths under a book root and attach each
    chunk below its deepest heading.

    Heading depth maps to chapter/title/knowledge_point. When a chunk's
    deepest heading is shallower than knowledge_point (or absent), a
    synthetic knowledge point is inserted so the include edge always hangs
    off a knowledge_point node. Node ids are canonical (derived from the
    label path), so identical inputs produce structurally identical trees.
    """
    seen_chunk_ids: set[str] = set()
    for chunk in chunks:
        if chunk.id in seen_chunk_ids:
            raise DuplicateChunkId(chunk.id)
        seen_chunk_ids.add(chunk.id)

    root_id = "n0"
    tree = KnowledgeTree(root=root_id)
    tree.nodes[root_id] = KnowledgeNode(id=root_id, level=NodeLevel.BOOK, label=book)
    path_to_id: dict[tuple[str, ...], str] = {(): root_id}

    def ensure_node(path: tuple[str, ...], level: NodeLevel) -> str:
        node_id = path_to_id.get(path)
        if node_id is not None:
            return node_id
        parent_id = path_to_id[path[:-1]]
        node_id = f"n{len(tree.nodes)}"
        tree.nodes[node_id] = KnowledgeNode(id=node_id, level=level, label=path[-1],
                                            parent=parent_id)
        tree.nodes[parent_id].children.append(node_id)
        path_to_id[path] = node_id
        return node_id

    for chunk in sorted(chunks, key=lambda c: c.id):
        path = chunk.heading_path
        for depth in range(1, len(path) + 1):
            ensure_node(path[:depth], _DEPTH_LEVEL[min(depth, 3)])
        deepest_level = _DEPTH_LEVEL[min(len(path), 3)] if path else None
        if deepest_level is NodeLevel.KNOWLEDGE_POINT:
            kp_id = path_to_id[path]
        else:
            # Synthetic knowledge point below the deepest heading (or the
            # root for heading-less chunks).
            kp_label = path[-1] if path else UNTITLED_LABEL
            kp_id = ensure_node(path + (kp_label + " \u00b7 kp",), NodeLevel.KNOWLEDGE_POINT)
        chunk_node_id = f"c:{chunk.id}"
        tree.nodes[chunk_node_id] = KnowledgeNode(id=chunk_node_id, level=NodeLevel.CHUNK,
                                                  label=chunk.id)
        attach_chunk(tree, kp_id, chunk_node_id)
    return tree


class DuplicateChunkId(IngestionError):
    pass


def ingest_document(doc: SourceDocument, llm: Gateway, vocab: PredicateVocabulary,
                    judge: Optional[Gateway] = None,
                    review_file: Optional[str | Path] = None,
                    extract: bool = True) -> tuple[KnowledgeBase, dict[str, ReviewState]]:
    """Full ingestion: segment, extract contents and triples, apply review
    verdicts, assemble the tree, and cascade-delete rejected content.

    With ``extract=False`` only raw-chunk entries are produced (no gateway
    calls), which is enough for offline index builds.
    """
    chunks = segment(doc)
    tree = build_tree(doc.book_label, chunks)
    kb = KnowledgeBase(tree=tree)
    review: dict[str, ReviewState] = {}

    chunk_paths: dict[str, tuple[str, ...]] = {}
    for chunk in chunks:
        node_path = [tree.nodes[nid].label for nid in _path_ids(tree, f"c:{chunk.id}")]
        # Drop the chunk node's own label (it is the chunk id, not a heading).
        chunk_paths[chunk.id] = tuple(node_path[:-1])

    for chunk in chunks:
        path = chunk_paths[chunk.id]
        raw = KnowledgeEntry(id=f"{chunk.id}-raw", kind=EntryKind.RAW_CHUNK, text=chunk.text,
                             chunk_id=chunk.id, tree_path=path)
        kb.entries[raw.id] = raw
        review[raw.id] = ReviewState(entry_id=raw.id)
        if extract:
            result = extract_contents(chunk, llm, judge)
            for entry in (result.qa_pair, result.summary):
                entry.tree_path = path
                kb.entries[entry.id] = entry
            review.update(result.review)
            extraction = extract_triples(chunk, llm, vocab)
            for triple in extraction.triples:
                kb.triples[triple.id] = triple

    if review_file is not None:
        review = replay_review_file(review, review_file)
        for entry_id, state in review.items():
            if state.stage is ReviewStage.DELETED and entry_id in kb.entries:
                chunk_id = kb.entries[entry_id].chunk_id
                if kb.entries[entry_id].kind is EntryKind.RAW_CHUNK:
                    kb.drop_chunk(chunk_id)
                else:
                    del kb.entries[entry_id]
            elif state.revision and entry_id in kb.entries:
                kb.entries[entry_id].text = state.revision
    return kb, review


def _path_ids(tree: KnowledgeTree, node_id: str) -> list[str]:
    from .knowledge import path_of

    return path_of(tree, node_id)
