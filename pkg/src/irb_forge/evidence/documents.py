from __future__ import annotations

import datetime as dt
import enum
from dataclasses import dataclass

from ..textutil import sha256_hex


class FetchStatus(str, enum.Enum):
    OK = "ok"
    OFFLINE = "offline"
    EMPTY_EXTRACTION = "empty_extraction"
    NON_TEXT = "non_text"


def doc_id_for(url: str) -> str:
    return sha256_hex(url)[:16]


@dataclass(frozen=True)
class EvidenceDocument:
    doc_id: str
    url: str
    content: str
    language: str
    published: dt.date | None
    fetch_status: FetchStatus

    def __post_init__(self) -> None:
        if self.doc_id != doc_id_for(self.url):
            raise ValueError("doc_id must be derived from the URL")
        if bool(self.content) != (self.fetch_status is FetchStatus.OK):
            raise ValueError("content must be non-empty exactly when fetch_status is ok")

    @classmethod
    def failed(cls, url: str, status: FetchStatus) -> "EvidenceDocument":
        return cls(doc_id_for(url), url, "", "und", None, status)

    @property
    def ok(self) -> bool:
        return self.fetch_status is FetchStatus.OK

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "url": self.url,
            "content": self.content,
            "language": self.language,
            "published": self.published.isoformat() if self.published else None,
            "fetch_status": self.fetch_status.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvidenceDocument":
        return cls(
            doc_id=d["doc_id"],
            url=d["url"],
            content=d["content"],
            language=d["language"],
            published=dt.date.fromisoformat(d["published"]) if d.get("published") else None,
            fetch_status=FetchStatus(d["fetch_status"]),
        )
