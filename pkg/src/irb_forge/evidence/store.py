"""On-disk corpus: ``docs.jsonl``, ``chunks.jsonl`` and the raw fetch cache."""
from __future__ import annotations

import threading
from pathlib import Path
from typing import Iterable

from ..textutil import atomic_write_text, dumps_jsonl, read_jsonl, sha256_hex
from .chunking import CorpusChunk
from .documents import EvidenceDocument
from .fetch import FetchCache


class CorpusWriteError(OSError):
    def __init__(self, message: str, written: list[str], pending: list[str]):
        super().__init__(f"{message}; written={written} pending={pending}")
        self.written = written
        self.pending = pending


class CorpusStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.docs_path = self.root / "docs.jsonl"
        self.chunks_path = self.root / "chunks.jsonl"
        self.cache = FetchCache(self.root / "cache")
        self._write_lock = threading.Lock()

    def exists(self) -> bool:
        return self.docs_path.exists() and self.chunks_path.exists()

    def save(self, docs: Iterable[EvidenceDocument], chunks: Iterable[CorpusChunk]) -> None:
        """Write both files sorted by id so identical inputs give identical bytes."""
        docs = sorted({d.doc_id: d for d in docs}.values(), key=lambda d: d.doc_id)
        chunks = sorted(chunks, key=lambda c: (c.doc_id, c.chunk_index))
        known = {d.doc_id for d in docs}
        stray = {c.doc_id for c in chunks} - known
        if stray:
            raise ValueError(f"chunks reference unknown documents: {sorted(stray)}")
        payloads = [
            (self.docs_path, dumps_jsonl(d.to_dict() for d in docs)),
            (self.chunks_path, dumps_jsonl(c.to_dict() for c in chunks)),
        ]
        written: list[str] = []
        with self._write_lock:
            for i, (path, text) in enumerate(payloads):
                try:
                    atomic_write_text(path, text)
                except OSError as exc:
                    raise CorpusWriteError(
                        f"failed writing {path}: {exc}", written, [str(p) for p, _ in payloads[i:]]
                    ) from exc
                written.append(str(path))

    def load_documents(self) -> list[EvidenceDocument]:
        return [EvidenceDocument.from_dict(r) for r in read_jsonl(self.docs_path)]

    def load_chunks(self) -> list[CorpusChunk]:
        return [CorpusChunk.from_dict(r) for r in read_jsonl(self.chunks_path)]

    def load(self) -> tuple[list[EvidenceDocument], list[CorpusChunk]]:
        return self.load_documents(), self.load_chunks()

    def manifest(self) -> dict:
        docs = self.load_documents()
        return {
            "docs_file": self.docs_path.name,
            "chunks_file": self.chunks_path.name,
            "docs_sha256": sha256_hex(self.docs_path.read_bytes()),
            "chunks_sha256": sha256_hex(self.chunks_path.read_bytes()),
            "num_documents": len(docs),
            "num_ok_documents": sum(d.ok for d in docs),
            "num_chunks": sum(1 for _ in read_jsonl(self.chunks_path)),
            "doc_ids": [d.doc_id for d in docs if d.ok],
        }
