import random

import pytest

from tosrr.gateway import Gateway, MockEmbeddingBackend, RetryPolicy, ScriptedBackend
from tosrr.index import HnswParams, build_keyword_index, build_vector_index
from tosrr.ingestion import TextChunk, build_tree
from tosrr.knowledge import (
    DEFAULT_VOCABULARY,
    EntryKind,
    KnowledgeBase,
    KnowledgeEntry,
    SpoTriple,
    path_of,
)

TOPICS = [
    ("taiyang disease", "headache fever chills floating pulse"),
    ("xiao qing long tang", "cough with thin phlegm wheezing cold fluid"),
    ("mahuang decoction", "asthma no sweating body aches"),
    ("guizhi decoction", "sweating aversion to wind weak pulse"),
    ("baizhu herb", "spleen deficiency dampness loose stools"),
    ("jiegeng decoction", "pulmonary abscess pus drainage detoxify"),
]


def make_words(rng: random.Random, n: int) -> str:
    return " ".join(f"w{rng.randint(0, 80)}" for _ in range(n))


def build_demo_kb(n_chunks_per_topic: int = 2, seed: int = 3) -> KnowledgeBase:
    """Synthetic kb: one chapter per topic, raw entries whose text shares the
    topic vocabulary, one triple per chunk."""
    rng = random.Random(seed)
    chunks = []
    triples = []
    for t, (subject, detail) in enumerate(TOPICS):
        for j in range(n_chunks_per_topic):
            chunk_id = f"ch{t}{j:02d}"
            text = f"{subject} {detail} {make_words(rng, 30)}"
            chunks.append(TextChunk(
                id=chunk_id, text=text, word_count=len(text.split()),
                heading_path=(f"Chapter {t}", f"Topic {subject}"),
            ))
            triples.append(SpoTriple(
                id=f"t-{chunk_id}", subject=subject, predicate="treat",
                object=detail, source_chunk=chunk_id,
            ))
    tree = build_tree("Demo Book", chunks)
    kb = KnowledgeBase(tree=tree)
    chunk_paths = {}
    for node in tree.nodes.values():
        if node.id.startswith("c:"):
            labels = [tree.nodes[nid].label for nid in path_of(tree, node.id)]
            chunk_paths[node.label] = tuple(labels[:-1])
    for chunk in chunks:
        kb.entries[f"{chunk.id}-raw"] = KnowledgeEntry(
            id=f"{chunk.id}-raw", kind=EntryKind.RAW_CHUNK, text=chunk.text,
            chunk_id=chunk.id, tree_path=chunk_paths[chunk.id],
        )
    for triple in triples:
        kb.triples[triple.id] = triple
    return kb


HAPPY_SCRIPT = [
    # Relevance replies are unparseable on purpose: the loop fails open and
    # keeps the whole recall set, which is fine for end-to-end tests.
    {"tag": "relevance_judge", "default": "keep everything"},
    {"tag": "support_judge", "default": "YES"},
    {"tag": "helpful_judge", "default": "YES"},
    {"tag": "answer", "default": "Use the warm-property decoction."},
    {"tag": "reformulate", "default": "rewritten"},
]


def build_demo_engine(script=None, n_chunks_per_topic=3, seed=5):
    from tosrr.pipeline import Engine

    kb = build_demo_kb(n_chunks_per_topic=n_chunks_per_topic, seed=seed)
    gateway = make_mock_gateway(
        script=script if script is not None else list(HAPPY_SCRIPT))
    entry_ids = sorted(kb.entries)
    vectors = gateway.embed_batch([kb.entries[e].text for e in entry_ids])
    vec = build_vector_index(dict(zip(entry_ids, vectors)), params=HnswParams(seed=1))
    kw = build_keyword_index(list(kb.triples.values()))
    return Engine(kb=kb, keyword_index=kw, vector_index=vec, gateway=gateway)


def make_mock_gateway(script=None, seed=0):
    return Gateway(
        chat_backend=ScriptedBackend(script or []),
        embedding_backend=MockEmbeddingBackend(seed=seed),
        policy=RetryPolicy(backoff_base_ms=1),
        sleep=lambda _s: None,
    )


@pytest.fixture
def demo_kb():
    return build_demo_kb()


@pytest.fixture
def demo_indices(demo_kb):
    gateway = make_mock_gateway(script=[{"tag": "answer", "default": "ok"}])
    entry_ids = sorted(demo_kb.entries)
    vectors = gateway.embed_batch([demo_kb.entries[e].text for e in entry_ids])
    vec = build_vector_index(dict(zip(entry_ids, vectors)), params=HnswParams(seed=1))
    kw = build_keyword_index(list(demo_kb.triples.values()))
    return kw, vec


@pytest.fixture
def vocab():
    return DEFAULT_VOCABULARY
