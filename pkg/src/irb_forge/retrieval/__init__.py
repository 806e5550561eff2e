"""Lexical retrieval, nDCG scoring and plug-in interfaces."""
from .bm25 import DEFAULT_B, DEFAULT_K1, DEFAULT_TOP_M, BM25Index, analyze, rank_documents
from .metrics import all_relevant_retrieved, dcg, ndcg_at_k
from .plugins import (
    BM25Retriever,
    IdentityReranker,
    NotConfiguredError,
    Reranker,
    Retriever,
    make_reranker,
    make_retriever,
    run_retrieval,
)
from .run import DEFAULT_K, RetrievalRun, ScoredSlices, normalize_ranking, score_run, slice_names

__all__ = [
    "BM25Index",
    "BM25Retriever",
    "DEFAULT_B",
    "DEFAULT_K",
    "DEFAULT_K1",
    "DEFAULT_TOP_M",
    "IdentityReranker",
    "NotConfiguredError",
    "Reranker",
    "RetrievalRun",
    "Retriever",
    "ScoredSlices",
    "all_relevant_retrieved",
    "analyze",
    "dcg",
    "make_reranker",
    "make_retriever",
    "ndcg_at_k",
    "normalize_ranking",
    "rank_documents",
    "run_retrieval",
    "score_run",
    "slice_names",
]
