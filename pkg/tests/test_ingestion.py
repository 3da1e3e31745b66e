import random

import pytest
from hypothesis import given, settings, strategies as st

from tosrr.gateway import Exhausted, RetryPolicy
from tosrr.ingestion import (
    Block,
    EmptyGeneration,
    IllegalTransition,
    MAX_CHUNK_WORDS,
    MIN_CHUNK_WORDS,
    PARAGRAPH_SEPARATOR,
    ReviewStage,
    ReviewState,
    SourceDocument,
    TagStageMismatch,
    TextChunk,
    Verdict,
    build_tree,
    extract_contents,
    extract_triples,
    parse_markup,
    replay_review_file,
    review_screen,
    segment,
)
from tosrr.knowledge import DEFAULT_VOCABULARY, NodeLevel, validate_tree
from .conftest import make_mock_gateway


def words(rng, n):
    return " ".join(f"t{rng.randint(0, 99)}" for _ in range(n))


def paragraph_stream(doc):
    return PARAGRAPH_SEPARATOR.join(b.text for b in doc.blocks if b.kind == "paragraph")


def rejoined(chunks):
    return PARAGRAPH_SEPARATOR.join(c.text for c in chunks)


class TestSegment:
    def test_thousand_words_one_heading_gives_four_chunks(self):
        rng = random.Random(0)
        doc = SourceDocument("B", [Block("heading", "H", heading_level=1)] + [
            Block("paragraph", words(rng, 50)) for _ in range(20)
        ])
        chunks = segment(doc)
        assert len(chunks) == 4
        assert all(MIN_CHUNK_WORDS <= c.word_count <= MAX_CHUNK_WORDS for c in chunks)
        assert all(c.flag is None for c in chunks)

    def test_empty_document(self):
        assert segment(SourceDocument("B", [])) == []

    def test_oversize_paragraph_is_isolated_and_flagged(self):
        rng = random.Random(1)
        doc = SourceDocument("B", [
            Block("paragraph", words(rng, 50)),
            Block("paragraph", words(rng, 400)),
            Block("paragraph", words(rng, 250)),
        ])
        chunks = segment(doc)
        oversize = [c for c in chunks if c.flag == "oversize"]
        assert len(oversize) == 1 and oversize[0].word_count == 400
        assert len(oversize[0].text.split(PARAGRAPH_SEPARATOR)) == 1

    def test_short_tail_flagged_undersize(self):
        # 280 + 60 cannot merge (would exceed 300), so the 60-word tail
        # becomes its own flagged chunk.
        rng = random.Random(2)
        doc = SourceDocument("B", [Block("paragraph", words(rng, 280)),
                                   Block("paragraph", words(rng, 60))])
        chunks = segment(doc)
        assert len(chunks) == 2
        assert chunks[0].flag is None
        assert chunks[-1].flag == "undersize"

    def test_short_tail_merges_when_it_fits(self):
        rng = random.Random(2)
        doc = SourceDocument("B", [Block("paragraph", words(rng, 250)),
                                   Block("paragraph", words(rng, 40))])
        chunks = segment(doc)
        assert len(chunks) == 1
        assert chunks[0].word_count == 290 and chunks[0].flag is None

    def test_heading_path_tracks_stack(self):
        rng = random.Random(3)
        doc = SourceDocument("B", [
            Block("heading", "C1", heading_level=1),
            Block("paragraph", words(rng, 210)),
            Block("heading", "T1", heading_level=2),
            Block("paragraph", words(rng, 210)),
            Block("heading", "C2", heading_level=1),
            Block("paragraph", words(rng, 210)),
        ])
        chunks = segment(doc)
        assert [c.heading_path for c in chunks] == [("C1",), ("C1", "T1"), ("C2",)]

    def test_chunks_never_contain_heading_lines(self):
        doc = parse_markup("# Head\n\npara one text\n\n## Sub\n\npara two text\n", "B")
        for chunk in segment(doc):
            assert "Head" not in chunk.text and "Sub" not in chunk.text

    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_lossless_and_bounded(self, data):
        rng = random.Random(data.draw(st.integers(0, 10_000)))
        blocks = []
        for _ in range(data.draw(st.integers(0, 25))):
            if rng.random() < 0.25:
                blocks.append(Block("heading", f"H{rng.randint(0, 5)}",
                                    heading_level=rng.randint(1, 4)))
            else:
                blocks.append(Block("paragraph", words(rng, rng.randint(1, 400))))
        doc = SourceDocument("B", blocks)
        chunks = segment(doc)
        assert rejoined(chunks) == paragraph_stream(doc)
        for chunk in chunks:
            if chunk.flag is None:
                assert MIN_CHUNK_WORDS <= chunk.word_count <= MAX_CHUNK_WORDS


class TestReviewScreen:
    def test_first_screen_delete(self):
        state = review_screen(ReviewState("e1"), Verdict("delete", tag="literary_nonsense"))
        assert state.stage is ReviewStage.DELETED
        assert state.noise_tag == "literary_nonsense"

    def test_second_screen_revise_accepts_with_revision(self):
        state = review_screen(ReviewState("e1"), Verdict("accept"))
        state = review_screen(state, Verdict("revise", tag="error_of_fact",
                                             text="corrected text"))
        assert state.stage is ReviewStage.ACCEPTED
        assert state.revision == "corrected text"

    def test_second_screen_tag_rejected_at_first_screen(self):
        with pytest.raises(TagStageMismatch):
            review_screen(ReviewState("e1"), Verdict("delete", tag="error_of_fact"))

    def test_no_transition_from_terminal_states(self):
        deleted = review_screen(ReviewState("e1"), Verdict("delete", tag="meaningless"))
        with pytest.raises(IllegalTransition):
            review_screen(deleted, Verdict("accept"))

    def test_revision_requires_text(self):
        state = review_screen(ReviewState("e1"), Verdict("accept"))
        with pytest.raises(IllegalTransition):
            review_screen(state, Verdict("revise", tag="error_of_fact"))

    def test_replay_file(self, tmp_path):
        path = tmp_path / "review.jsonl"
        path.write_text(
            '{"entry_id": "e1", "action": "accept"}\n'
            '{"entry_id": "e1", "action": "accept"}\n'
            '{"entry_id": "e2", "action": "delete", "tag": "meaningless"}\n'
        )
        states = {"e1": ReviewState("e1"), "e2": ReviewState("e2")}
        states = replay_review_file(states, path)
        assert states["e1"].stage is ReviewStage.ACCEPTED
        assert states["e2"].stage is ReviewStage.DELETED


def chunk_fixture():
    return TextChunk(id="c1", text="some chunk text", word_count=3,
                     heading_path=("C1",))


class TestExtractContents:
    def script(self, judge="B"):
        return [
            {"tag": "qa_generate", "response": "Q: q-v1?\nA: a-v1"},
            {"tag": "qa_generate", "response": "Q: q-v2?\nA: a-v2"},
            {"tag": "summary_generate", "response": "summary v1"},
            {"tag": "summary_generate", "response": "summary v2"},
            {"tag": "version_judge", "default": judge},
        ]

    def test_judge_prefers_b(self):
        gw = make_mock_gateway(self.script("B"))
        result = extract_contents(chunk_fixture(), gw)
        assert result.qa_pair.text == "Q: q-v2?\nA: a-v2"
        assert result.summary.text == "summary v2"

    def test_tie_or_garbage_keeps_first(self):
        gw = make_mock_gateway(self.script("no idea"))
        result = extract_contents(chunk_fixture(), gw)
        assert result.qa_pair.text == "Q: q-v1?\nA: a-v1"

    def test_exactly_two_generations_and_one_judge_per_kind(self):
        gw = make_mock_gateway(self.script())
        extract_contents(chunk_fixture(), gw)
        assert gw.call_log.count(tag="qa_generate") == 2
        assert gw.call_log.count(tag="summary_generate") == 2
        assert gw.call_log.count(tag="version_judge") == 2  # one per content kind

    def test_both_attempts_empty(self):
        gw = make_mock_gateway([
            {"tag": "qa_generate", "default": ""},
            {"tag": "summary_generate", "default": ""},
            {"tag": "version_judge", "default": "A"},
        ])
        with pytest.raises(EmptyGeneration):
            extract_contents(chunk_fixture(), gw)

    def test_entries_start_pending(self):
        gw = make_mock_gateway(self.script())
        result = extract_contents(chunk_fixture(), gw)
        assert all(s.stage is ReviewStage.PENDING for s in result.review.values())

    def test_gateway_failure_propagates(self):
        gw = make_mock_gateway([{"tag": "qa_generate", "error": "transient"},
                                {"tag": "qa_generate", "error": "transient"},
                                {"tag": "qa_generate", "error": "transient"}])
        gw.policy = RetryPolicy(max_attempts=3, backoff_base_ms=1)
        with pytest.raises(Exhausted) as exc_info:
            extract_contents(chunk_fixture(), gw)
        assert len(exc_info.value.attempts) == 3


class TestExtractTriples:
    def test_valid_line_parsed(self):
        gw = make_mock_gateway([
            {"tag": "triple_extract", "response": "Taiyang disease | Include | headache"},
        ])
        result = extract_triples(chunk_fixture(), gw, DEFAULT_VOCABULARY)
        assert len(result.triples) == 1
        triple = result.triples[0]
        assert (triple.subject, triple.predicate, triple.object) == (
            "Taiyang disease", "include", "headache")
        assert triple.source_chunk == "c1"

    def test_unknown_predicate_dropped_and_counted(self):
        gw = make_mock_gateway([
            {"tag": "triple_extract",
             "response": "A | treat | B\nC | CuresInstantly | D\nbroken line"},
        ])
        result = extract_triples(chunk_fixture(), gw, DEFAULT_VOCABULARY)
        assert len(result.triples) == 1
        assert result.dropped == 2

    def test_prompt_carries_vocabulary_and_one_example(self):
        gw = make_mock_gateway([{"tag": "triple_extract", "response": ""}])
        extract_triples(chunk_fixture(), gw, DEFAULT_VOCABULARY)
        prompt = gw.call_log.records(tag="triple_extract")[0].request_text
        for pid in DEFAULT_VOCABULARY.ids():
            assert pid in prompt
        assert prompt.count("Taiyang disease | include | headache") == 1

    def test_corpus_triple_count_matches_script_tally(self):
        rng = random.Random(9)
        scripts = []
        expected = 0
        n_chunks = 12
        for i in range(n_chunks):
            n = rng.randint(0, 4)
            expected += n
            lines = "\n".join(f"s{i}{j} | treat | o{j}" for j in range(n))
            scripts.append({"tag": "triple_extract", "response": lines})
        gw = make_mock_gateway(scripts)
        total = 0
        for i in range(n_chunks):
            chunk = TextChunk(id=f"c{i}", text="x", word_count=1)
            total += len(extract_triples(chunk, gw, DEFAULT_VOCABULARY).triples)
        assert total == expected


class TestBuildTree:
    def test_two_titles_example(self):
        chunks = [
            TextChunk(id="c1", text="x", word_count=1, heading_path=("C1", "T1")),
            TextChunk(id="c2", text="x", word_count=1, heading_path=("C1", "T2")),
        ]
        tree = build_tree("B", chunks)
        by_level = {}
        for node in tree.nodes.values():
            by_level.setdefault(node.level, []).append(node)
        assert len(by_level[NodeLevel.CHAPTER]) == 1
        assert len(by_level[NodeLevel.TITLE]) == 2
        assert len(by_level[NodeLevel.KNOWLEDGE_POINT]) == 2
        assert len(by_level[NodeLevel.CHUNK]) == 2

    def test_empty_heading_path_gets_untitled_kp(self):
        tree = build_tree("B", [TextChunk(id="c1", text="x", word_count=1)])
        kp = [n for n in tree.nodes.values() if n.level is NodeLevel.KNOWLEDGE_POINT]
        assert len(kp) == 1 and kp[0].label.startswith("(untitled)")

    def test_deterministic_structure(self):
        chunks = [TextChunk(id=f"c{i}", text="x", word_count=1,
                            heading_path=("A", f"T{i % 3}")) for i in range(9)]
        t1 = build_tree("B", chunks)
        t2 = build_tree("B", list(reversed(chunks)))
        assert {(n.id, n.level, n.label, n.parent) for n in t1.nodes.values()} == \
               {(n.id, n.level, n.label, n.parent) for n in t2.nodes.values()}
        assert t1.include_edges == t2.include_edges

    def test_random_corpora_node_count_oracle(self):
        rng = random.Random(17)
        for _ in range(25):
            chunks = []
            for i in range(rng.randint(1, 20)):
                depth = rng.randint(0, 3)
                path = tuple(f"H{rng.randint(0, 2)}-{d}" for d in range(depth))
                chunks.append(TextChunk(id=f"c{i}", text="x", word_count=1,
                                        heading_path=path))
            tree = build_tree("B", chunks)
            # Oracle: distinct heading prefixes + synthetic kps for
            # sub-knowledge-point attach targets + chunks + root.
            prefixes = set()
            synthetic = set()
            for chunk in chunks:
                for d in range(1, len(chunk.heading_path) + 1):
                    prefixes.add(chunk.heading_path[:d])
                if len(chunk.heading_path) < 3:
                    synthetic.add(chunk.heading_path)
            expected = len(prefixes) + len(synthetic) + len(chunks) + 1
            assert len(tree.nodes) == expected
            assert validate_tree(tree) == []
