from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

from ..textutil import token_spans
from .documents import EvidenceDocument

MAX_CHUNK_TOKENS = 512


class Tokenizer(Protocol):
    def spans(self, text: str) -> list[tuple[int, int]]: ...


class WordPunctTokenizer:
    """Word runs and single punctuation marks; the artifact's fixed tokenizer."""

    name = "word-punct"

    def spans(self, text: str) -> list[tuple[int, int]]:
        return token_spans(text)

    def tokenize(self, text: str) -> list[str]:
        return [text[s:e] for s, e in self.spans(text)]


@dataclass(frozen=True)
class CorpusChunk:
    doc_id: str
    chunk_index: int
    token_count: int
    text: str

    @property
    def chunk_id(self) -> str:
        return f"{self.doc_id}#{self.chunk_index}"

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "chunk_index": self.chunk_index,
            "token_count": self.token_count,
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusChunk":
        return cls(d["doc_id"], int(d["chunk_index"]), int(d["token_count"]), d["text"])


def chunk_text(doc_id: str, text: str, max_tokens: int = MAX_CHUNK_TOKENS,
               tokenizer: Tokenizer | None = None) -> list[CorpusChunk]:
    if max_tokens < 1:
        raise ValueError("max_tokens must be positive")
    spans = (tokenizer or WordPunctTokenizer()).spans(text)
    chunks = []
    for index, i in enumerate(range(0, len(spans), max_tokens)):
        window = spans[i:i + max_tokens]
        # Slice the source between the first and last token so the chunk
        # re-tokenizes to exactly this window.
        chunks.append(CorpusChunk(doc_id, index, len(window), text[window[0][0]:window[-1][1]]))
    return chunks


def chunk_document(doc: EvidenceDocument, max_tokens: int = MAX_CHUNK_TOKENS,
                   tokenizer: Tokenizer | None = None) -> list[CorpusChunk]:
    if not doc.ok:
        raise ValueError(f"cannot chunk {doc.doc_id}: fetch_status={doc.fetch_status.value}")
    return chunk_text(doc.doc_id, doc.content, max_tokens, tokenizer)
