"""Evidence documents: fetching, extraction, chunking and the corpus store."""
from .chunking import MAX_CHUNK_TOKENS, CorpusChunk, WordPunctTokenizer, chunk_document, chunk_text
from .documents import EvidenceDocument, FetchStatus, doc_id_for
from .extract import detect_language, extract_main_text, extract_publication_date
from .fetch import (
    FetchCache,
    Fetcher,
    HttpTransport,
    RawFetch,
    SnapshotTransport,
    document_from_raw,
    fetch_document,
)
from .store import CorpusStore, CorpusWriteError

__all__ = [
    "MAX_CHUNK_TOKENS",
    "CorpusChunk",
    "CorpusStore",
    "CorpusWriteError",
    "EvidenceDocument",
    "FetchCache",
    "FetchStatus",
    "Fetcher",
    "HttpTransport",
    "RawFetch",
    "SnapshotTransport",
    "WordPunctTokenizer",
    "chunk_document",
    "chunk_text",
    "detect_language",
    "doc_id_for",
    "document_from_raw",
    "extract_main_text",
    "extract_publication_date",
    "fetch_document",
]
