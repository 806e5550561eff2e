"""Fetching cited URLs into EvidenceDocuments, with a URL-keyed raw cache."""
from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol
from urllib.parse import urlsplit

from ..textutil import atomic_write_text, sha256_hex, stable_json
from .documents import EvidenceDocument, FetchStatus, doc_id_for
from .extract import detect_language, extract_main_text, extract_publication_date

logger = logging.getLogger(__name__)

DEFAULT_USER_AGENT = "irb-forge/0.1 (benchmark builder)"
NON_TEXT_EXTENSIONS = (
    ".pdf", ".mp4", ".mp3", ".m4a", ".wav", ".ogg", ".webm", ".mov", ".avi", ".mkv",
    ".jpg", ".jpeg", ".png", ".gif", ".svg", ".zip", ".doc", ".docx", ".xls", ".xlsx", ".ppt", ".pptx",
)
NON_TEXT_TYPES = ("application/pdf", "video/", "audio/", "image/", "application/octet-stream",
                  "application/zip", "application/msword", "application/vnd.")


@dataclass(frozen=True)
class RawFetch:
    url: str
    status_code: int | None
    content_type: str
    body: str
    error: str | None = None


class Transport(Protocol):
    requests_made: int

    def get(self, url: str) -> RawFetch: ...


def _looks_non_text(url: str, content_type: str) -> bool:
    ctype = content_type.split(";")[0].strip().lower()
    if ctype.startswith(NON_TEXT_TYPES):
        return True
    return urlsplit(url).path.lower().endswith(NON_TEXT_EXTENSIONS)


class HttpTransport:
    def __init__(self, user_agent: str = DEFAULT_USER_AGENT, timeout: float = 20.0, session=None):
        import requests

        self._requests = requests
        self.session = session or requests.Session()
        self.session.headers["User-Agent"] = user_agent
        self.timeout = timeout
        self.requests_made = 0
        self._lock = threading.Lock()

    def get(self, url: str) -> RawFetch:
        with self._lock:
            self.requests_made += 1
        try:
            resp = self.session.get(url, timeout=self.timeout, stream=True)
        except self._requests.RequestException as exc:
            return RawFetch(url, None, "", "", f"{type(exc).__name__}: {exc}")
        with resp:
            ctype = resp.headers.get("Content-Type", "")
            if _looks_non_text(url, ctype):
                return RawFetch(url, resp.status_code, ctype, "")
            try:
                body = resp.text
            except self._requests.RequestException as exc:
                return RawFetch(url, resp.status_code, ctype, "", f"{type(exc).__name__}: {exc}")
            return RawFetch(url, resp.status_code, ctype, body)


class SnapshotTransport:
    """Serves pages from a local snapshot directory with an ``index.json`` URL map.

    Index entries: ``{url: {"file": relpath, "content_type": ..., "status": 200}}``;
    URLs absent from the index behave like unreachable hosts.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.index = json.loads((self.root / "index.json").read_text(encoding="utf-8"))
        self.requests_made = 0

    def get(self, url: str) -> RawFetch:
        self.requests_made += 1
        entry = self.index.get(url)
        if entry is None:
            return RawFetch(url, None, "", "", "ConnectionError: host unreachable (not in snapshot)")
        ctype = entry.get("content_type", "text/html")
        status = int(entry.get("status", 200))
        body = ""
        if entry.get("file") and not _looks_non_text(url, ctype):
            body = (self.root / entry["file"]).read_text(encoding="utf-8")
        return RawFetch(url, status, ctype, body)


class FetchCache:
    """Raw fetches keyed by URL hash; each entry carries a checksum of its payload."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _path(self, url: str) -> Path:
        return self.root / f"{sha256_hex(url)}.json"

    def get(self, url: str) -> RawFetch | None:
        path = self._path(url)
        if not path.exists():
            return None
        try:
            entry = json.loads(path.read_text(encoding="utf-8"))
            checksum = entry.pop("checksum")
            if checksum != sha256_hex(stable_json(entry)) or entry["url"] != url:
                raise ValueError("checksum mismatch")
            return RawFetch(**entry)
        except (ValueError, KeyError, TypeError) as exc:
            logger.warning("corrupted cache entry for %s (%s); will re-fetch", url, exc)
            path.unlink(missing_ok=True)
            return None

    def put(self, raw: RawFetch) -> None:
        entry = asdict(raw)
        entry["checksum"] = sha256_hex(stable_json(entry))
        atomic_write_text(self._path(raw.url), json.dumps(entry, ensure_ascii=False, sort_keys=True))


def document_from_raw(raw: RawFetch, extractor: Callable[[str], str] = extract_main_text) -> EvidenceDocument:
    """Map one raw fetch onto an EvidenceDocument and its failure class."""
    url = raw.url
    if raw.error is not None or raw.status_code is None or raw.status_code >= 400:
        return EvidenceDocument.failed(url, FetchStatus.OFFLINE)
    if _looks_non_text(url, raw.content_type):
        return EvidenceDocument.failed(url, FetchStatus.NON_TEXT)
    ctype = raw.content_type.split(";")[0].strip().lower()
    if ctype == "text/plain":
        content, published = raw.body.strip(), None
    else:
        content = extractor(raw.body)
        published = extract_publication_date(raw.body, url) if content else None
    if not content:
        return EvidenceDocument.failed(url, FetchStatus.EMPTY_EXTRACTION)
    return EvidenceDocument(doc_id_for(url), url, content, detect_language(content), published, FetchStatus.OK)


class Fetcher:
    """Cache-first fetching with bounded parallelism and a per-host politeness delay."""

    def __init__(
        self,
        transport: Transport,
        cache: FetchCache | None = None,
        concurrency: int = 1,
        politeness_ms: int = 0,
        extractor: Callable[[str], str] = extract_main_text,
        refetch_failures: bool = False,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        self.transport = transport
        self.cache = cache
        self.concurrency = concurrency
        self.politeness = politeness_ms / 1000.0
        self.extractor = extractor
        self.refetch_failures = refetch_failures
        self._sleep = sleep
        self._host_locks: dict[str, threading.Lock] = {}
        self._host_last: dict[str, float] = {}
        self._guard = threading.Lock()

    def _polite(self, url: str) -> threading.Lock:
        host = urlsplit(url).netloc
        with self._guard:
            return self._host_locks.setdefault(host, threading.Lock())

    def fetch_raw(self, url: str) -> RawFetch:
        if self.cache is not None:
            cached = self.cache.get(url)
            if cached is not None and not (self.refetch_failures and cached.error):
                return cached
        host = urlsplit(url).netloc
        with self._polite(url):
            last = self._host_last.get(host)
            if last is not None and self.politeness:
                wait = self.politeness - (time.monotonic() - last)
                if wait > 0:
                    self._sleep(wait)
            try:
                raw = self.transport.get(url)
            except TimeoutError as exc:
                raw = RawFetch(url, None, "", "", f"Timeout: {exc}")
            self._host_last[host] = time.monotonic()
        if self.cache is not None:
            self.cache.put(raw)
        return raw

    def fetch(self, url: str) -> EvidenceDocument:
        return document_from_raw(self.fetch_raw(url), self.extractor)

    def fetch_many(self, urls: Iterable[str]) -> list[EvidenceDocument]:
        unique = list(dict.fromkeys(urls))
        if self.concurrency == 1:
            return [self.fetch(u) for u in unique]
        with ThreadPoolExecutor(max_workers=self.concurrency) as pool:
            return list(pool.map(self.fetch, unique))


def fetch_document(url: str, transport: Transport | None = None, cache: FetchCache | None = None) -> EvidenceDocument:
    return Fetcher(transport or HttpTransport(), cache).fetch(url)
