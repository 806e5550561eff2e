"""Retriever and reranker plug-in points; only the lexical retriever ships."""
from __future__ import annotations

from typing import Iterable, Mapping, Protocol

from .bm25 import DEFAULT_TOP_M, BM25Index, rank_documents
from .run import RetrievalRun, normalize_ranking


class NotConfiguredError(RuntimeError):
    pass


class Retriever(Protocol):
    retriever_id: str

    def retrieve(self, query: str, depth: int) -> list[tuple[str, float]]: ...


class Reranker(Protocol):
    def rerank(self, query: str, candidates: list[tuple[str, float]]) -> list[tuple[str, float]]: ...


class BM25Retriever:
    retriever_id = "bm25"

    def __init__(self, index: BM25Index, top_m: int = DEFAULT_TOP_M):
        self.index = index
        self.top_m = top_m

    def retrieve(self, query: str, depth: int) -> list[tuple[str, float]]:
        hits = self.index.search(query, self.top_m)
        return rank_documents((doc, score) for _, doc, score in hits)[:depth]


class UnconfiguredRetriever:
    """Placeholder for dense retrievers; the artifact bundles no embedding model."""

    def __init__(self, name: str):
        self.retriever_id = name

    def retrieve(self, query: str, depth: int) -> list[tuple[str, float]]:
        raise NotConfiguredError(f"retriever {self.retriever_id!r} is not configured in this build")


class UnconfiguredReranker:
    def __init__(self, name: str):
        self.name = name

    def rerank(self, query: str, candidates: list[tuple[str, float]]) -> list[tuple[str, float]]:
        raise NotConfiguredError(f"reranker {self.name!r} is not configured in this build")


class IdentityReranker:
    def rerank(self, query: str, candidates: list[tuple[str, float]]) -> list[tuple[str, float]]:
        return list(candidates)


def make_retriever(name: str, index: BM25Index | None = None, top_m: int = DEFAULT_TOP_M) -> Retriever:
    if name == "bm25":
        if index is None:
            raise NotConfiguredError("bm25 needs an index; run the index stage first")
        return BM25Retriever(index, top_m)
    return UnconfiguredRetriever(name)


def make_reranker(name: str | None) -> Reranker | None:
    if name in (None, "", "none"):
        return None
    if name == "identity":
        return IdentityReranker()
    return UnconfiguredReranker(name)


def run_retrieval(
    retriever: Retriever,
    queries: Mapping[str, str],
    *,
    depth: int = DEFAULT_TOP_M,
    k_eval: int = 5,
    reranker: Reranker | None = None,
) -> RetrievalRun:
    rankings = {}
    for qid in sorted(queries):
        ranking = retriever.retrieve(queries[qid], depth)
        if reranker is not None:
            ranking = reranker.rerank(queries[qid], ranking)
        rankings[qid] = normalize_ranking(ranking)
    tag = retriever.retriever_id + ("" if reranker is None else f"+{type(reranker).__name__}")
    return RetrievalRun(tag, k_eval, rankings)
