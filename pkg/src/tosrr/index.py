"""Vector and keyword retrieval indices.

The vector side is an HNSW graph over cosine similarity: vectors are
stored L2-normalized so similarity reduces to a dot product. The keyword
side is an inverted index over triple subject/object tokens. Both indices
are immutable once built and safe for concurrent readers.
"""

from __future__ import annotations

import heapq
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .knowledge import SpoTriple
from .textutil import DEFAULT_TOKENIZER_ID, tokenize

INDEX_MAGIC = b"TOSRRIDX"
INDEX_FORMAT_VERSION = 1


class IndexError_(Exception):
    """Base class for index errors (trailing underscore avoids the builtin)."""


class DimensionMismatch(IndexError_):
    pass


class ZeroVector(IndexError_):
    pass


class TokenizerMismatch(IndexError_):
    pass


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine similarity, evaluated symmetrically so cosine(a,b)==cosine(b,a)."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise DimensionMismatch(f"dims {va.shape} vs {vb.shape}")
    na = float(np.dot(va, va))
    nb = float(np.dot(vb, vb))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine undefined for all-zero vector")
    return float(np.dot(va, vb)) / math.sqrt(na * nb)


@dataclass(frozen=True)
class HnswParams:
    max_neighbors: int = 16
    ef_construction: int = 200
    ef_search: int = 100
    seed: int = 12345

    def __post_init__(self):
        if self.max_neighbors < 2:
            raise ValueError("max_neighbors must be >= 2")
        if self.ef_construction < self.max_neighbors:
            raise ValueError("ef_construction must be >= max_neighbors")
        if self.ef_search < 1:
            raise ValueError("ef_search must be >= 1")


class VectorIndex:
    """HNSW graph keyed by string entry ids.

    Level assignment uses a seeded RNG, and items are inserted in ascending
    id order, so builds are reproducible regardless of input order.
    """

    def __init__(self, dim: int, params: Optional[HnswParams] = None):
        self.dim = dim
        self.params = params or HnswParams()
        self.ids: list[str] = []
        self._id_to_idx: dict[str, int] = {}
        self._store = np.zeros((16, dim), dtype=np.float64)  # grows by doubling
        # layers[level][node_idx] -> list of neighbor idxs
        self.layers: list[dict[int, list[int]]] = []
        self.entry_point: Optional[int] = None
        self._rng = np.random.Generator(np.random.PCG64(self.params.seed))
        self._ml = 1.0 / math.log(self.params.max_neighbors)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def _vectors(self) -> np.ndarray:
        return self._store[: len(self.ids)]

    # -- construction ------------------------------------------------------

    def _normalize(self, vector: Sequence[float]) -> np.ndarray:
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (self.dim,):
            raise DimensionMismatch(f"expected dim {self.dim}, got {v.shape}")
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            raise ZeroVector("cannot index an all-zero vector")
        return v / norm

    def add(self, entry_id: str, vector: Sequence[float]) -> None:
        if entry_id in self._id_to_idx:
            raise IndexError_(f"duplicate entry id {entry_id}")
        v = self._normalize(vector)
        idx = len(self.ids)
        self.ids.append(entry_id)
        self._id_to_idx[entry_id] = idx
        if idx >= self._store.shape[0]:
            grown = np.zeros((max(self._store.shape[0] * 2, 16), self.dim), dtype=np.float64)
            grown[: self._store.shape[0]] = self._store
            self._store = grown
        self._store[idx] = v

        level = int(-math.log(max(self._rng.random(), 1e-300)) * self._ml)
        old_top = len(self.layers) - 1
        while len(self.layers) <= level:
            self.layers.append({})
        for lvl in range(level + 1):
            self.layers[lvl][idx] = []

        if self.entry_point is None:
            self.entry_point = idx
            return

        ep = self.entry_point
        # Greedy descent through layers above the new node's level.
        for lvl in range(old_top, level, -1):
            ep = self._greedy_closest(v, ep, lvl)

        m = self.params.max_neighbors
        for lvl in range(min(level, old_top), -1, -1):
            candidates = self._search_layer(v, [ep], lvl, self.params.ef_construction, exclude=idx)
            m_lvl = m if lvl > 0 else 2 * m
            neighbors = [i for _, i in heapq.nlargest(m_lvl, candidates)]
            self.layers[lvl][idx] = list(neighbors)
            for n in neighbors:
                links = self.layers[lvl][n]
                links.append(idx)
                if len(links) > m_lvl:
                    sims = self._vectors[links] @ self._vectors[n]
                    keep = np.argsort(-sims)[:m_lvl]
                    self.layers[lvl][n] = [links[k] for k in keep]
            if candidates:
                ep = max(candidates)[1]

        if level > self._node_level(self.entry_point):
            self.entry_point = idx

    def _node_level(self, idx: int) -> int:
        for lvl in range(len(self.layers) - 1, -1, -1):
            if idx in self.layers[lvl]:
                return lvl
        return 0

    def _greedy_closest(self, q: np.ndarray, start: int, level: int) -> int:
        current = start
        current_sim = float(self._vectors[current] @ q)
        improved = True
        while improved:
            improved = False
            neighbors = self.layers[level].get(current, [])
            if neighbors:
                sims = self._vectors[neighbors] @ q
                best = int(np.argmax(sims))
                if float(sims[best]) > current_sim:
                    current = neighbors[best]
                    current_sim = float(sims[best])
                    improved = True
        return current

    def _search_layer(self, q: np.ndarray, entry_points: list[int], level: int,
                      ef: int, exclude: Optional[int] = None) -> list[tuple[float, int]]:
        """Best-first search; returns up to ef (similarity, idx) pairs."""
        visited = set(entry_points)
        if exclude is not None:
            visited.add(exclude)
            entry_points = [e for e in entry_points if e != exclude]
        results: list[tuple[float, int]] = []  # min-heap of (sim, idx)
        candidates: list[tuple[float, int]] = []  # max-heap via negation
        for ep in entry_points:
            sim = float(self._vectors[ep] @ q)
            heapq.heappush(results, (sim, ep))
            heapq.heappush(candidates, (-sim, ep))
        while candidates:
            neg_sim, current = heapq.heappop(candidates)
            if len(results) >= ef and -neg_sim < results[0][0]:
                break
            fresh = [n for n in self.layers[level].get(current, []) if n not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            sims = self._vectors[fresh] @ q
            for n, sim in zip(fresh, sims.tolist()):
                if len(results) < ef or sim > results[0][0]:
                    heapq.heappush(results, (sim, n))
                    heapq.heappush(candidates, (-sim, n))
                    if len(results) > ef:
                        heapq.heappop(results)
        return results

    # -- queries -----------------------------------------------------------

    def knn(self, query: Sequence[float], k: int,
            ef_search: Optional[int] = None) -> list[tuple[str, float]]:
        """Top-k (entry id, cosine similarity), descending; ties by id."""
        if k < 0:
            raise ValueError("k must be >= 0")
        if k == 0 or self.entry_point is None:
            return []
        q = self._normalize(query)
        ef = max(ef_search if ef_search is not None else self.params.ef_search, k)
        ep = self.entry_point
        for lvl in range(len(self.layers) - 1, 0, -1):
            if ep in self.layers[lvl]:
                ep = self._greedy_closest(q, ep, lvl)
        hits = self._search_layer(q, [ep], 0, ef)
        scored = [(sim, self.ids[idx]) for sim, idx in hits]
        scored.sort(key=lambda t: (-t[0], t[1]))
        return [(eid, sim) for sim, eid in scored[:k]]

    def exhaustive_knn(self, query: Sequence[float], k: int) -> list[tuple[str, float]]:
        """Brute-force oracle: full scan, same ordering contract as knn."""
        if k <= 0 or not self.ids:
            return []
        q = self._normalize(query)
        sims = self._vectors @ q
        scored = sorted(zip(sims.tolist(), self.ids), key=lambda t: (-t[0], t[1]))
        return [(eid, sim) for sim, eid in scored[:k]]

    def vector_of(self, entry_id: str) -> np.ndarray:
        return self._vectors[self._id_to_idx[entry_id]]

    # -- persistence -------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Versioned binary layout: magic, u32 version, u32 header length,
        JSON header (dim, params, ids, layer adjacency), float32 vectors."""
        header = {
            "dim": self.dim,
            "params": {
                "max_neighbors": self.params.max_neighbors,
                "ef_construction": self.params.ef_construction,
                "ef_search": self.params.ef_search,
                "seed": self.params.seed,
            },
            "ids": self.ids,
            "entry_point": self.entry_point,
            "layers": [{str(k): v for k, v in layer.items()} for layer in self.layers],
        }
        header_bytes = json.dumps(header, ensure_ascii=False).encode("utf-8")
        with Path(path).open("wb") as fh:
            fh.write(INDEX_MAGIC)
            fh.write(struct.pack("<II", INDEX_FORMAT_VERSION, len(header_bytes)))
            fh.write(header_bytes)
            fh.write(self._vectors.astype(np.float64).tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        with Path(path).open("rb") as fh:
            magic = fh.read(len(INDEX_MAGIC))
            if magic != INDEX_MAGIC:
                raise IndexError_(f"bad index magic {magic!r}")
            version, header_len = struct.unpack("<II", fh.read(8))
            if version != INDEX_FORMAT_VERSION:
                raise IndexError_(f"unsupported index version {version}")
            header = json.loads(fh.read(header_len).decode("utf-8"))
            index = cls(dim=header["dim"], params=HnswParams(**header["params"]))
            index.ids = list(header["ids"])
            index._id_to_idx = {eid: i for i, eid in enumerate(index.ids)}
            index.entry_point = header["entry_point"]
            index.layers = [
                {int(k): list(v) for k, v in layer.items()} for layer in header["layers"]
            ]
            raw = fh.read(len(index.ids) * index.dim * 8)
            index._store = np.frombuffer(raw, dtype=np.float64).reshape(
                len(index.ids), index.dim
            ).copy()
        return index


def build_vector_index(items: dict[str, Sequence[float]],
                       params: Optional[HnswParams] = None) -> VectorIndex:
    """Build from id->vector, inserting in ascending id order so the result
    is independent of input ordering."""
    if not items:
        return VectorIndex(dim=1, params=params)
    first = next(iter(items.values()))
    index = VectorIndex(dim=len(first), params=params)
    for entry_id in sorted(items):
        index.add(entry_id, items[entry_id])
    return index


@dataclass
class KeywordIndex:
    postings: dict[str, set[str]] = field(default_factory=dict)
    triple_tokens: dict[str, set[str]] = field(default_factory=dict)
    tokenizer_id: str = DEFAULT_TOKENIZER_ID

    def save(self, path: str | Path) -> None:
        payload = {
            "tokenizer_id": self.tokenizer_id,
            "postings": {tok: sorted(ids) for tok, ids in self.postings.items()},
            "triple_tokens": {tid: sorted(toks) for tid, toks in self.triple_tokens.items()},
        }
        Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "KeywordIndex":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            postings={tok: set(ids) for tok, ids in payload["postings"].items()},
            triple_tokens={tid: set(toks) for tid, toks in payload["triple_tokens"].items()},
            tokenizer_id=payload["tokenizer_id"],
        )


def build_keyword_index(triples: Sequence[SpoTriple],
                        tokenizer_id: str = DEFAULT_TOKENIZER_ID) -> KeywordIndex:
    """Index each triple under its subject and object tokens (predicates
    excluded: they are vocabulary, not content)."""
    index = KeywordIndex(tokenizer_id=tokenizer_id)
    for triple in triples:
        tokens = set(tokenize(triple.subject)) | set(tokenize(triple.object))
        index.triple_tokens[triple.id] = tokens
        for token in tokens:
            index.postings.setdefault(token, set()).add(triple.id)
    return index


def keyword_match(index: KeywordIndex, question: str, limit: int,
                  tokenizer_id: str = DEFAULT_TOKENIZER_ID) -> list[tuple[str, int]]:
    """Score triples by distinct question tokens hit; descending score,
    ties by ascending triple id."""
    if tokenizer_id != index.tokenizer_id:
        raise TokenizerMismatch(f"index built with {index.tokenizer_id}, got {tokenizer_id}")
    question_tokens = set(tokenize(question))
    scores: dict[str, int] = {}
    for token in question_tokens:
        for triple_id in index.postings.get(token, ()):
            scores[triple_id] = scores.get(triple_id, 0) + 1
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[: max(limit, 0)]
