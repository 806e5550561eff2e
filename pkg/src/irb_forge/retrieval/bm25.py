"""Okapi BM25 over corpus chunks with a persisted inverted index."""
from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable

from ..evidence.chunking import CorpusChunk
from ..textutil import atomic_write_text, tokenize

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_TOP_M = 100
INDEX_FORMAT = 1


def analyze(text: str) -> list[str]:
    """The chunking tokenizer, case-folded."""
    return tokenize(text.casefold())


class BM25Index:
    """Inverted index; IDF is ln(1 + (N - df + 0.5) / (df + 0.5)), which stays non-negative."""

    def __init__(self, k1: float = DEFAULT_K1, b: float = DEFAULT_B):
        self.k1 = k1
        self.b = b
        self.chunk_ids: list[str] = []
        self.doc_ids: list[str] = []
        self.lengths: list[int] = []
        self.postings: dict[str, dict[int, int]] = {}
        self.avgdl = 0.0

    @classmethod
    def build(cls, chunks: Iterable[CorpusChunk], k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> "BM25Index":
        idx = cls(k1, b)
        postings: dict[str, dict[int, int]] = defaultdict(dict)
        for i, chunk in enumerate(sorted(chunks, key=lambda c: (c.doc_id, c.chunk_index))):
            terms = analyze(chunk.text)
            idx.chunk_ids.append(chunk.chunk_id)
            idx.doc_ids.append(chunk.doc_id)
            idx.lengths.append(len(terms))
            for term, tf in Counter(terms).items():
                postings[term][i] = tf
        idx.postings = dict(postings)
        idx.avgdl = sum(idx.lengths) / len(idx.lengths) if idx.lengths else 0.0
        return idx

    @property
    def num_chunks(self) -> int:
        return len(self.chunk_ids)

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        n = self.num_chunks
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def scores(self, query: str) -> dict[int, float]:
        """Per-chunk scores; repeated query terms contribute once per occurrence."""
        out: dict[int, float] = defaultdict(float)
        for term in analyze(query):
            posting = self.postings.get(term)
            if not posting:
                continue
            idf = self.idf(term)
            for i, tf in posting.items():
                norm = tf + self.k1 * (1.0 - self.b + self.b * self.lengths[i] / self.avgdl)
                out[i] += idf * tf * (self.k1 + 1.0) / norm
        return dict(out)

    def search(self, query: str, top_m: int = DEFAULT_TOP_M) -> list[tuple[str, str, float]]:
        """Top chunks as (chunk_id, doc_id, score), score-descending, ties by chunk_id."""
        scored = self.scores(query)
        order = sorted(scored, key=lambda i: (-scored[i], self.chunk_ids[i]))[:top_m]
        return [(self.chunk_ids[i], self.doc_ids[i], scored[i]) for i in order]

    def to_dict(self) -> dict:
        return {
            "format": INDEX_FORMAT,
            "k1": self.k1,
            "b": self.b,
            "chunk_ids": self.chunk_ids,
            "doc_ids": self.doc_ids,
            "lengths": self.lengths,
            "postings": {t: {str(i): tf for i, tf in p.items()} for t, p in sorted(self.postings.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BM25Index":
        if d.get("format") != INDEX_FORMAT:
            raise ValueError(f"unsupported index format {d.get('format')!r}")
        idx = cls(d["k1"], d["b"])
        idx.chunk_ids = list(d["chunk_ids"])
        idx.doc_ids = list(d["doc_ids"])
        idx.lengths = list(d["lengths"])
        idx.postings = {t: {int(i): tf for i, tf in p.items()} for t, p in d["postings"].items()}
        idx.avgdl = sum(idx.lengths) / len(idx.lengths) if idx.lengths else 0.0
        return idx

    def save(self, path: str | Path) -> None:
        atomic_write_text(Path(path), json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "BM25Index":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def rank_documents(chunk_hits: Iterable[tuple[str, float]]) -> list[tuple[str, float]]:
    """Collapse (doc_id, chunk score) hits to documents scored by their best chunk."""
    best: dict[str, float] = {}
    for doc_id, score in chunk_hits:
        if doc_id not in best or score > best[doc_id]:
            best[doc_id] = score
    return sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
