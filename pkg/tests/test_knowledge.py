import json
import random

import pytest

from tosrr.ingestion import TextChunk, build_tree
from tosrr.knowledge import (
    AlreadyAttached,
    BUILTIN_PREDICATES,
    DEFAULT_VOCABULARY,
    EntryKind,
    KnowledgeBase,
    KnowledgeEntry,
    KnowledgeNode,
    KnowledgeTree,
    NodeLevel,
    Predicate,
    PredicateVocabulary,
    SpoT,
    SpoTriple,
    WrongLevel,
    attach_chunk,
    load_kb,
    path_of,
    render_spo_t,
    save_kb,
    validate_triple,
    validate_tree,
)


class TestVocabulary:
    def test_builtin_has_exactly_20_predicates(self):
        assert len(BUILTIN_PREDICATES) == 20
        assert len(DEFAULT_VOCABULARY) == 20

    def test_include_and_treat_and_effect_present(self):
        assert "include" in DEFAULT_VOCABULARY
        assert "treat" in DEFAULT_VOCABULARY
        assert "effect" in DEFAULT_VOCABULARY

    def test_custom_vocabulary_must_keep_include(self):
        with pytest.raises(ValueError):
            PredicateVocabulary([Predicate("treat", "治疗", "Treat")])

    def test_resolve_english_label(self):
        assert DEFAULT_VOCABULARY.resolve("Include") == "include"
        assert DEFAULT_VOCABULARY.resolve("治疗") == "treat"
        assert DEFAULT_VOCABULARY.resolve("CuresInstantly") is None


class TestValidateTriple:
    def test_valid_include_triple(self):
        t = SpoTriple(id="t1", subject="Taiyang disease", predicate="include",
                      object="headache")
        assert validate_triple(t).ok

    def test_empty_subject(self):
        t = SpoTriple(id="t1", subject="", predicate="treat", object="cough")
        result = validate_triple(t)
        assert not result.ok and "EmptySubject" in result.violations

    def test_unknown_predicate(self):
        t = SpoTriple(id="t1", subject="Mahuang", predicate="CuresInstantly",
                      object="asthma")
        result = validate_triple(t)
        assert result.violations == ("UnknownPredicate",)

    def test_whitespace_only_object(self):
        t = SpoTriple(id="t1", subject="x", predicate="treat", object="   ")
        assert "EmptyObject" in validate_triple(t).violations

    def test_serialization_round_trip_stability(self):
        t = SpoTriple(id="t1", subject="Taiyang disease", predicate="include",
                      object="headache", source_chunk="c1")
        blob = json.dumps(t.__dict__)
        t2 = SpoTriple(**json.loads(blob))
        assert validate_triple(t).ok == validate_triple(t2).ok


def small_tree():
    tree = KnowledgeTree(root="r")
    tree.nodes["r"] = KnowledgeNode(id="r", level=NodeLevel.BOOK, label="Book")
    tree.nodes["kp1"] = KnowledgeNode(id="kp1", level=NodeLevel.KNOWLEDGE_POINT,
                                      label="KP", parent="r")
    tree.nodes["r"].children.append("kp1")
    tree.nodes["c1"] = KnowledgeNode(id="c1", level=NodeLevel.CHUNK, label="chunk-1")
    return tree


class TestAttachChunk:
    def test_attach_creates_edge(self):
        tree = attach_chunk(small_tree(), "kp1", "c1")
        assert ("kp1", "c1") in tree.include_edges

    def test_double_attach_rejected(self):
        tree = attach_chunk(small_tree(), "kp1", "c1")
        with pytest.raises(AlreadyAttached):
            attach_chunk(tree, "kp1", "c1")

    def test_wrong_level_rejected(self):
        tree = small_tree()
        with pytest.raises(WrongLevel):
            attach_chunk(tree, "r", "c1")

    def test_full_build_has_one_include_edge_per_chunk(self):
        rng = random.Random(5)
        chunks = [
            TextChunk(id=f"c{i}", text="x", word_count=1,
                      heading_path=(f"C{rng.randint(0, 2)}", f"T{rng.randint(0, 3)}"))
            for i in range(30)
        ]
        tree = build_tree("B", chunks)
        counts = {}
        for _, chunk in tree.include_edges:
            counts[chunk] = counts.get(chunk, 0) + 1
        chunk_nodes = [n.id for n in tree.nodes.values() if n.level is NodeLevel.CHUNK]
        assert sorted(counts) == sorted(chunk_nodes)
        assert all(v == 1 for v in counts.values())


class TestPathOf:
    def test_root_path_is_identity(self):
        tree = small_tree()
        assert path_of(tree, "r") == ["r"]

    def test_path_levels_in_order(self):
        chunks = [TextChunk(id="c1", text="x", word_count=1,
                            heading_path=("Ch", "Ti", "Kp"))]
        tree = build_tree("B", chunks)
        path = path_of(tree, "c:c1")
        levels = [tree.nodes[n].level for n in path]
        assert levels == [NodeLevel.BOOK, NodeLevel.CHAPTER, NodeLevel.TITLE,
                          NodeLevel.KNOWLEDGE_POINT, NodeLevel.CHUNK]

    def test_path_matches_reverse_parent_walk(self):
        rng = random.Random(11)
        chunks = [
            TextChunk(id=f"c{i}", text="x", word_count=1,
                      heading_path=tuple(f"H{rng.randint(0, 2)}" for _ in range(rng.randint(0, 3))))
            for i in range(20)
        ]
        tree = build_tree("B", chunks)
        node_id = rng.choice(list(tree.nodes))
        path = path_of(tree, node_id)
        # Oracle: walk parent links from the node and reverse.
        walk = []
        cur = node_id
        while cur is not None:
            walk.append(cur)
            cur = tree.nodes[cur].parent
        assert path == list(reversed(walk))


class TestRenderSpoT:
    def entry(self, path, text):
        return KnowledgeEntry(id="e1", kind=EntryKind.SUMMARY, text=text,
                              chunk_id="c1", tree_path=tuple(path))

    def test_appendix_style_rendering(self):
        entry = self.entry(
            ["Golden Chamber Synopsis", "phlegm and retain fluid", "treatment principle"],
            "The treatment principles of phlegm and retain fluid diseases involves "
            "the use of warm-property herbal medicines.",
        )
        rendered = render_spo_t(SpoT(entry=entry))
        assert rendered.startswith(
            "Golden Chamber Synopsis - phlegm and retain fluid - treatment principle - The")

    def test_empty_path_renders_text_only(self):
        entry = self.entry([], "just text")
        assert render_spo_t(SpoT(entry=entry)) == "just text"

    def test_deterministic(self):
        entry = self.entry(["A", "B"], "text")
        spo_t = SpoT(entry=entry)
        assert render_spo_t(spo_t) == render_spo_t(spo_t)


class TestPersistence:
    def test_round_trip(self, tmp_path, demo_kb):
        path = tmp_path / "kb.jsonl"
        save_kb(demo_kb, path)
        loaded = load_kb(path)
        assert set(loaded.entries) == set(demo_kb.entries)
        assert set(loaded.triples) == set(demo_kb.triples)
        assert loaded.tree.include_edges == demo_kb.tree.include_edges
        assert validate_tree(loaded.tree) == []

    def test_format_version_checked(self, tmp_path):
        path = tmp_path / "kb.jsonl"
        path.write_text('{"format_version": "bogus/9", "kind": "tree", "root": "r"}\n')
        with pytest.raises(Exception):
            load_kb(path)

    def test_cascade_delete_drops_triples(self, demo_kb):
        chunk_id = next(iter(demo_kb.triples.values())).source_chunk
        demo_kb.drop_chunk(chunk_id)
        assert all(t.source_chunk != chunk_id for t in demo_kb.triples.values())
        assert all(e.chunk_id != chunk_id for e in demo_kb.entries.values())
