"""Core domain types: SPO triples, the knowledge tree, and retrievable entries.

The knowledge base is a forest-of-one tree per book: book -> chapter ->
title -> knowledge_point -> chunk, with chunk leaves attached to knowledge
points through "include" edges. Levels may be skipped for shallow documents
but never reordered.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

KB_FORMAT_VERSION = "tosrr-kb/1"

DEFAULT_PATH_SEPARATOR = " - "


class KnowledgeError(Exception):
    """Base class for domain errors."""


class UnknownNode(KnowledgeError):
    pass


class AlreadyAttached(KnowledgeError):
    pass


class WrongLevel(KnowledgeError):
    pass


class DanglingContext(KnowledgeError):
    pass


class DuplicateChunkId(KnowledgeError):
    pass


@dataclass(frozen=True)
class Predicate:
    id: str
    label_zh: str
    label_en: str


# Built-in 20-predicate vocabulary. ``include`` is structural (chunk
# attachment) and must survive any custom vocabulary.
BUILTIN_PREDICATES: tuple[Predicate, ...] = (
    Predicate("treatment_principle", "治疗原则是", "The treatment principle(s) is/are"),
    Predicate("treatment_measure", "治疗措施是", "The treatment measure(s) is/are"),
    Predicate("treatment_location", "治疗部位是", "The treatment location(s) on the body is/are"),
    Predicate("treat", "治疗", "Treat"),
    Predicate("healing_time", "欲解时是", "The time when the disease starts to heal"),
    Predicate("prognosis", "预后是", "The prognosis(ses) is/are"),
    Predicate("characteristic", "特性是", "The characteristic(s) is/are"),
    Predicate("clinical_manifestation", "临床表现是", "The clinical manifestation(s) is/are"),
    Predicate("contraindication", "禁忌症是", "The contraindication(s) is/are"),
    Predicate("prohibit", "禁忌是", "Prohibit"),
    Predicate("differential_diagnosis", "鉴别诊断是", "Differential diagnosis(ses) is/are"),
    Predicate("effect", "功效是", "The effect(s) is/are"),
    Predicate("medication_response", "服药反应是", "Medication response(s) is/are"),
    Predicate("herbal_prescription", "方剂是", "The herbal prescription(s) is/are"),
    Predicate("corresponding_pathogenesis", "对应病机", "Corresponding pathogenesis"),
    Predicate("induce", "导致", "Induce"),
    Predicate("cause", "病因是", "The cause(s) is/are"),
    Predicate("disease_location", "病位是", "The disease location(s) is/are"),
    Predicate("pathological_transmission", "病传是", "pathological transmission(s)"),
    Predicate("include", "包含", "Include"),
)

INCLUDE_PREDICATE = "include"


class PredicateVocabulary:
    """Predicate lookup by id, with optional label aliases.

    Custom vocabularies may extend the built-in set but never remove
    ``include``.
    """

    def __init__(self, predicates: Iterable[Predicate] = BUILTIN_PREDICATES):
        self._by_id: dict[str, Predicate] = {}
        self._alias: dict[str, str] = {}
        for p in predicates:
            if p.id in self._by_id:
                raise ValueError(f"duplicate predicate id: {p.id}")
            self._by_id[p.id] = p
            self._alias[p.label_en.lower()] = p.id
            self._alias[p.label_zh] = p.id
        if INCLUDE_PREDICATE not in self._by_id:
            raise ValueError("vocabulary must contain the 'include' predicate")

    def __contains__(self, predicate_id: str) -> bool:
        return predicate_id in self._by_id

    def __len__(self) -> int:
        return len(self._by_id)

    def get(self, predicate_id: str) -> Optional[Predicate]:
        return self._by_id.get(predicate_id)

    def resolve(self, text: str) -> Optional[str]:
        """Map a predicate id or a display label to a predicate id."""
        text = text.strip()
        if text in self._by_id:
            return text
        return self._alias.get(text.lower(), self._alias.get(text))

    def ids(self) -> list[str]:
        return list(self._by_id)

    def predicates(self) -> list[Predicate]:
        return list(self._by_id.values())


DEFAULT_VOCABULARY = PredicateVocabulary()


@dataclass(frozen=True)
class SpoTriple:
    id: str
    subject: str
    predicate: str
    object: str
    source_chunk: Optional[str] = None


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    violations: tuple[str, ...] = ()


def validate_triple(triple: SpoTriple, vocab: PredicateVocabulary = DEFAULT_VOCABULARY) -> ValidationResult:
    """Check triple invariants against the active vocabulary.

    Failures are reported, never raised: EmptySubject, EmptyObject,
    UnknownPredicate.
    """
    violations = []
    if not triple.subject.strip():
        violations.append("EmptySubject")
    if not triple.object.strip():
        violations.append("EmptyObject")
    if triple.predicate not in vocab:
        violations.append("UnknownPredicate")
    return ValidationResult(ok=not violations, violations=tuple(violations))


class NodeLevel(str, Enum):
    BOOK = "book"
    CHAPTER = "chapter"
    TITLE = "title"
    KNOWLEDGE_POINT = "knowledge_point"
    CHUNK = "chunk"


LEVEL_ORDER: dict[NodeLevel, int] = {
    NodeLevel.BOOK: 0,
    NodeLevel.CHAPTER: 1,
    NodeLevel.TITLE: 2,
    NodeLevel.KNOWLEDGE_POINT: 3,
    NodeLevel.CHUNK: 4,
}


@dataclass
class KnowledgeNode:
    id: str
    level: NodeLevel
    label: str
    parent: Optional[str] = None
    children: list[str] = field(default_factory=list)


@dataclass
class KnowledgeTree:
    root: str
    nodes: dict[str, KnowledgeNode] = field(default_factory=dict)
    include_edges: set[tuple[str, str]] = field(default_factory=set)

    def node(self, node_id: str) -> KnowledgeNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None


class EntryKind(str, Enum):
    QA_PAIR = "qa_pair"
    SUMMARY = "summary"
    RAW_CHUNK = "raw_chunk"


# Delimiter between the question and answer segments of a qa_pair entry.
QA_DELIMITER = "\nA: "


@dataclass
class KnowledgeEntry:
    id: str
    kind: EntryKind
    text: str
    chunk_id: str
    tree_path: tuple[str, ...] = ()
    embedding: Optional[tuple[float, ...]] = None


@dataclass(frozen=True)
class SpoT:
    """One prompt-payload unit: an optional triple plus its textual context
    and the tree-path provenance prefix.

    Vector-channel hits carry no triple (they are recalled as content, not
    as graph facts); keyword-channel hits carry the matched triple.
    """

    entry: KnowledgeEntry
    triple: Optional[SpoTriple] = None
    separator: str = DEFAULT_PATH_SEPARATOR

    @property
    def path_prefix(self) -> str:
        return self.separator.join(self.entry.tree_path)


def render_spo_t(spo_t: SpoT) -> str:
    """Render tree-path labels then the entry text, joined by the separator.

    Pure and deterministic; the UI and prompt builder both rely on this.
    """
    if spo_t.entry is None:
        raise DanglingContext("SpoT has no context entry")
    parts = list(spo_t.entry.tree_path) + [spo_t.entry.text]
    return spo_t.separator.join(parts)


def attach_chunk(tree: KnowledgeTree, leaf: str, chunk: str) -> KnowledgeTree:
    """Attach a chunk node to a knowledge point through an include edge.

    Mutates and returns ``tree`` (builder phase only).
    """
    leaf_node = tree.node(leaf)
    chunk_node = tree.node(chunk)
    if leaf_node.level is not NodeLevel.KNOWLEDGE_POINT:
        raise WrongLevel(f"{leaf} has level {leaf_node.level.value}, expected knowledge_point")
    if chunk_node.level is not NodeLevel.CHUNK:
        raise WrongLevel(f"{chunk} has level {chunk_node.level.value}, expected chunk")
    if any(c == chunk for _, c in tree.include_edges):
        raise AlreadyAttached(chunk)
    tree.include_edges.add((leaf, chunk))
    if chunk not in leaf_node.children:
        leaf_node.children.append(chunk)
    chunk_node.parent = leaf
    return tree


def path_of(tree: KnowledgeTree, node_id: str) -> list[str]:
    """Root-to-node id sequence, following parent links."""
    node = tree.node(node_id)
    path = [node.id]
    seen = {node.id}
    while node.parent is not None:
        node = tree.node(node.parent)
        if node.id in seen:
            raise KnowledgeError(f"parent cycle at {node.id}")
        seen.add(node.id)
        path.append(node.id)
    path.reverse()
    if path[0] != tree.root:
        raise KnowledgeError(f"path of {node_id} does not start at root")
    return path


def validate_tree(tree: KnowledgeTree) -> list[str]:
    """Full-scan structural check. Returns a list of violations (empty = ok)."""
    problems: list[str] = []
    roots = [n for n in tree.nodes.values() if n.parent is None]
    if len(roots) != 1:
        problems.append(f"expected exactly one root, found {len(roots)}")
    if tree.root not in tree.nodes:
        problems.append(f"root id {tree.root} missing from nodes")
        return problems

    # Reachability and acyclicity from the root.
    seen: set[str] = set()
    stack = [tree.root]
    while stack:
        nid = stack.pop()
        if nid in seen:
            problems.append(f"cycle or duplicate reach at {nid}")
            continue
        seen.add(nid)
        node = tree.nodes.get(nid)
        if node is None:
            problems.append(f"dangling child id {nid}")
            continue
        for child_id in node.children:
            child = tree.nodes.get(child_id)
            if child is None:
                problems.append(f"dangling child id {child_id}")
                continue
            if child.parent != nid:
                problems.append(f"child {child_id} does not point back to {nid}")
            if LEVEL_ORDER[child.level] <= LEVEL_ORDER[node.level]:
                problems.append(
                    f"level order violated: {nid}({node.level.value}) -> "
                    f"{child_id}({child.level.value})"
                )
            stack.append(child_id)
    unreachable = set(tree.nodes) - seen
    if unreachable:
        problems.append(f"unreachable nodes: {sorted(unreachable)}")

    include_by_chunk: dict[str, int] = {}
    for kp, chunk in tree.include_edges:
        include_by_chunk[chunk] = include_by_chunk.get(chunk, 0) + 1
        kp_node = tree.nodes.get(kp)
        chunk_node = tree.nodes.get(chunk)
        if kp_node is None or kp_node.level is not NodeLevel.KNOWLEDGE_POINT:
            problems.append(f"include edge source {kp} is not a knowledge point")
        if chunk_node is None or chunk_node.level is not NodeLevel.CHUNK:
            problems.append(f"include edge target {chunk} is not a chunk")
    for node in tree.nodes.values():
        if node.level is NodeLevel.CHUNK:
            if node.children:
                problems.append(f"chunk {node.id} has children")
            n_edges = include_by_chunk.get(node.id, 0)
            if n_edges != 1:
                problems.append(f"chunk {node.id} has {n_edges} include edges, expected 1")
    return problems


@dataclass
class KnowledgeBase:
    """The persisted unit: one tree plus its entries and triples."""

    tree: KnowledgeTree
    entries: dict[str, KnowledgeEntry] = field(default_factory=dict)
    triples: dict[str, SpoTriple] = field(default_factory=dict)

    def entry_for_chunk(self, chunk_id: str, kind: EntryKind = EntryKind.RAW_CHUNK) -> Optional[KnowledgeEntry]:
        for entry in self.entries.values():
            if entry.chunk_id == chunk_id and entry.kind is kind:
                return entry
        return None

    def drop_chunk(self, chunk_id: str) -> None:
        """Cascade-delete a chunk's entries and triples (review deletions)."""
        self.entries = {k: v for k, v in self.entries.items() if v.chunk_id != chunk_id}
        self.triples = {k: v for k, v in self.triples.items() if v.source_chunk != chunk_id}


def save_kb(kb: KnowledgeBase, path: str | Path) -> None:
    """Write the knowledge base as line-delimited JSON records.

    Record kinds: ``node``, ``edge``, ``triple``, ``entry``; every record
    carries ``format_version``. Field names are a stable contract (see
    README).
    """
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        meta = {"format_version": KB_FORMAT_VERSION, "kind": "tree", "root": kb.tree.root}
        fh.write(json.dumps(meta, ensure_ascii=False) + "\n")
        for node in kb.tree.nodes.values():
            rec = {
                "format_version": KB_FORMAT_VERSION,
                "kind": "node",
                "id": node.id,
                "level": node.level.value,
                "label": node.label,
                "parent": node.parent,
                "children": node.children,
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        for kp, chunk in sorted(kb.tree.include_edges):
            rec = {
                "format_version": KB_FORMAT_VERSION,
                "kind": "edge",
                "knowledge_point": kp,
                "chunk": chunk,
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        for triple in kb.triples.values():
            rec = {
                "format_version": KB_FORMAT_VERSION,
                "kind": "triple",
                "id": triple.id,
                "subject": triple.subject,
                "predicate": triple.predicate,
                "object": triple.object,
                "source_chunk": triple.source_chunk,
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        for entry in kb.entries.values():
            rec = {
                "format_version": KB_FORMAT_VERSION,
                "kind": "entry",
                "id": entry.id,
                "entry_kind": entry.kind.value,
                "text": entry.text,
                "chunk_id": entry.chunk_id,
                "tree_path": list(entry.tree_path),
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_kb(path: str | Path) -> KnowledgeBase:
    path = Path(path)
    root: Optional[str] = None
    nodes: dict[str, KnowledgeNode] = {}
    edges: set[tuple[str, str]] = set()
    triples: dict[str, SpoTriple] = {}
    entries: dict[str, KnowledgeEntry] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("format_version") != KB_FORMAT_VERSION:
                raise KnowledgeError(f"unsupported kb format: {rec.get('format_version')!r}")
            kind = rec["kind"]
            if kind == "tree":
                root = rec["root"]
            elif kind == "node":
                nodes[rec["id"]] = KnowledgeNode(
                    id=rec["id"],
                    level=NodeLevel(rec["level"]),
                    label=rec["label"],
                    parent=rec["parent"],
                    children=list(rec["children"]),
                )
            elif kind == "edge":
                edges.add((rec["knowledge_point"], rec["chunk"]))
            elif kind == "triple":
                triples[rec["id"]] = SpoTriple(
                    id=rec["id"],
                    subject=rec["subject"],
                    predicate=rec["predicate"],
                    object=rec["object"],
                    source_chunk=rec.get("source_chunk"),
                )
            elif kind == "entry":
                entries[rec["id"]] = KnowledgeEntry(
                    id=rec["id"],
                    kind=EntryKind(rec["entry_kind"]),
                    text=rec["text"],
                    chunk_id=rec["chunk_id"],
                    tree_path=tuple(rec["tree_path"]),
                )
            else:
                raise KnowledgeError(f"unknown record kind {kind!r}")
    if root is None:
        raise KnowledgeError("kb file has no tree record")
    tree = KnowledgeTree(root=root, nodes=nodes, include_edges=edges)
    return KnowledgeBase(tree=tree, entries=entries, triples=triples)
