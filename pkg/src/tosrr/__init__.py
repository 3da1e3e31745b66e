"""Tree-organized SPO-T retrieval with a self-reflective RAG loop."""

__version__ = "0.1.0"

from .knowledge import (
    KnowledgeBase,
    KnowledgeEntry,
    KnowledgeTree,
    PredicateVocabulary,
    SpoT,
    SpoTriple,
    load_kb,
    render_spo_t,
    save_kb,
    validate_triple,
)
from .recall import RecallConfig, RecallSet, multi_way_recall
from .reflection import ReflectionConfig, run_reflection

__all__ = [
    "KnowledgeBase",
    "KnowledgeEntry",
    "KnowledgeTree",
    "PredicateVocabulary",
    "RecallConfig",
    "RecallSet",
    "ReflectionConfig",
    "SpoT",
    "SpoTriple",
    "load_kb",
    "multi_way_recall",
    "render_spo_t",
    "run_reflection",
    "save_kb",
    "validate_triple",
]
