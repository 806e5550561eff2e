from __future__ import annotations

import datetime as dt
import json

import pytest

from irb_forge.evidence import (
    CorpusChunk,
    CorpusStore,
    CorpusWriteError,
    EvidenceDocument,
    FetchCache,
    Fetcher,
    FetchStatus,
    RawFetch,
    SnapshotTransport,
    chunk_document,
    chunk_text,
    detect_language,
    doc_id_for,
    document_from_raw,
    extract_main_text,
)
from irb_forge.textutil import tokenize

ARTICLE_HTML = """<html><head><title>Gas cut</title>
<meta property="article:published_time" content="2025-01-02T08:00:00Z"></head>
<body><nav>Home | World | Sport</nav>
<article><h1>Gas supply cut in Bender</h1>
<p>Tiraspoltransgaz cut off gas supply to Bender on 1 January 2025 after the transit deal lapsed.</p>
<p>Local officials said apartment blocks were being heated with electric appliances for now.</p>
</article><footer>Copyright 2025 Example News</footer></body></html>"""


class CountingTransport:
    def __init__(self, pages: dict[str, RawFetch]):
        self.pages = pages
        self.requests_made = 0

    def get(self, url: str) -> RawFetch:
        self.requests_made += 1
        return self.pages.get(url, RawFetch(url, None, "", "", "ConnectionError: refused"))


def test_extraction_strips_boilerplate_and_is_repeatable():
    first = extract_main_text(ARTICLE_HTML)
    assert "Tiraspoltransgaz cut off gas supply" in first
    assert "Copyright" not in first and "Sport" not in first
    assert extract_main_text(ARTICLE_HTML) == first


def test_document_from_raw_ok():
    url = "https://news.example.org/a"
    doc = document_from_raw(RawFetch(url, 200, "text/html; charset=utf-8", ARTICLE_HTML))
    assert doc.ok and doc.doc_id == doc_id_for(url)
    assert doc.language == "en"
    assert doc.published == dt.date(2025, 1, 2)


@pytest.mark.parametrize(
    "raw, status",
    [
        (RawFetch("https://x.example.org/a", None, "", "", "ConnectionError"), FetchStatus.OFFLINE),
        (RawFetch("https://x.example.org/a", 404, "text/html", "<p>gone</p>"), FetchStatus.OFFLINE),
        (RawFetch("https://x.example.org/r.pdf", 200, "application/pdf", ""), FetchStatus.NON_TEXT),
        (RawFetch("https://x.example.org/v", 200, "video/mp4", ""), FetchStatus.NON_TEXT),
        (RawFetch("https://x.example.org/e", 200, "text/html", "<html><body></body></html>"),
         FetchStatus.EMPTY_EXTRACTION),
    ],
)
def test_document_failure_classes(raw, status):
    doc = document_from_raw(raw)
    assert doc.fetch_status is status and doc.content == "" and not doc.ok


def test_plain_text_passthrough():
    doc = document_from_raw(RawFetch("https://x.example.org/t", 200, "text/plain", "  Plain body text here.  "))
    assert doc.content == "Plain body text here." and doc.published is None


def test_document_invariants():
    with pytest.raises(ValueError):
        EvidenceDocument("bad", "https://a.example.org", "x", "en", None, FetchStatus.OK)
    with pytest.raises(ValueError):
        EvidenceDocument(doc_id_for("https://a.example.org"), "https://a.example.org", "", "en", None, FetchStatus.OK)
    doc = EvidenceDocument.failed("https://a.example.org", FetchStatus.OFFLINE)
    assert EvidenceDocument.from_dict(doc.to_dict()) == doc


def test_language_detection():
    assert detect_language("The quick brown fox jumps over the lazy dog near the river bank.") == "en"
    assert detect_language("Парламент Молдовы одобрил введение чрезвычайного положения в энергетике.") == "ru"
    assert detect_language("abc") == "und"


def test_fetcher_cache_first(tmp_path):
    url = "https://news.example.org/a"
    transport = CountingTransport({url: RawFetch(url, 200, "text/html", ARTICLE_HTML)})
    fetcher = Fetcher(transport, FetchCache(tmp_path))
    docs = fetcher.fetch_many([url, url, "https://down.example.org/"])
    assert [d.fetch_status for d in docs] == [FetchStatus.OK, FetchStatus.OFFLINE]
    assert transport.requests_made == 2
    again = Fetcher(transport, FetchCache(tmp_path)).fetch_many([url, "https://down.example.org/"])
    assert again == docs and transport.requests_made == 2
    Fetcher(transport, FetchCache(tmp_path), refetch_failures=True).fetch_many(["https://down.example.org/"])
    assert transport.requests_made == 3


def test_corrupted_cache_entry_is_refetched(tmp_path):
    url = "https://news.example.org/a"
    cache = FetchCache(tmp_path)
    cache.put(RawFetch(url, 200, "text/html", ARTICLE_HTML))
    path = next(tmp_path.glob("*.json"))
    entry = json.loads(path.read_text())
    entry["body"] = "tampered"
    path.write_text(json.dumps(entry))
    assert cache.get(url) is None and not path.exists()


def test_politeness_delay_per_host():
    waits = []
    url1, url2 = "https://h.example.org/1", "https://h.example.org/2"
    transport = CountingTransport({u: RawFetch(u, 200, "text/plain", "Some text body.") for u in (url1, url2)})
    Fetcher(transport, politeness_ms=500, sleep=waits.append).fetch_many([url1, url2])
    assert len(waits) == 1 and 0 < waits[0] <= 0.5


def test_parallel_fetch_matches_serial():
    urls = [f"https://h{i % 3}.example.org/{i}" for i in range(12)]
    pages = {u: RawFetch(u, 200, "text/plain", f"Body of page {u} with words.") for u in urls}
    serial = Fetcher(CountingTransport(pages)).fetch_many(urls)
    parallel = Fetcher(CountingTransport(pages), concurrency=4).fetch_many(urls)
    assert serial == parallel


def test_snapshot_transport(demo_dir):
    t = SnapshotTransport(demo_dir / "pages")
    raw = t.get("https://offline.example.net/never")
    assert raw.error is not None
    pdf = [u for u, e in t.index.items() if e.get("content_type") == "application/pdf"][0]
    assert document_from_raw(t.get(pdf)).fetch_status is FetchStatus.NON_TEXT


def test_chunk_bounds_and_ids():
    text = " ".join(f"w{i}" for i in range(1100))
    chunks = chunk_text("d", text)
    assert [c.token_count for c in chunks] == [512, 512, 76]
    assert [c.chunk_id for c in chunks] == ["d#0", "d#1", "d#2"]
    assert [t for c in chunks for t in tokenize(c.text)] == tokenize(text)
    assert chunk_text("d", "") == []
    with pytest.raises(ValueError):
        chunk_text("d", "x", max_tokens=0)


def test_chunk_document_rejects_failed_docs():
    with pytest.raises(ValueError):
        chunk_document(EvidenceDocument.failed("https://a.example.org", FetchStatus.OFFLINE))


def test_corpus_store_round_trip_and_determinism(tmp_path):
    url = "https://a.example.org"
    doc = EvidenceDocument(doc_id_for(url), url, "Alpha beta gamma.", "en", None, FetchStatus.OK)
    chunks = chunk_document(doc)
    s1, s2 = CorpusStore(tmp_path / "a"), CorpusStore(tmp_path / "b")
    s1.save([doc], chunks)
    s2.save([doc, doc], list(reversed(chunks)))
    assert s1.docs_path.read_bytes() == s2.docs_path.read_bytes()
    assert s1.load() == ([doc], chunks)
    assert s1.manifest()["doc_ids"] == [doc.doc_id]
    with pytest.raises(ValueError):
        s1.save([], chunks)


def test_corpus_write_error_reports_progress(tmp_path, monkeypatch):
    import irb_forge.evidence.store as store_mod

    calls = []

    def failing_write(path, text):
        calls.append(path)
        if len(calls) == 2:
            raise OSError("disk full")

    monkeypatch.setattr(store_mod, "atomic_write_text", failing_write)
    store = CorpusStore(tmp_path)
    with pytest.raises(CorpusWriteError) as info:
        store.save([], [])
    assert info.value.written == [str(store.docs_path)]
    assert info.value.pending == [str(store.chunks_path)]


def test_chunk_round_trip():
    c = CorpusChunk("d", 3, 2, "a b")
    assert CorpusChunk.from_dict(c.to_dict()) == c
