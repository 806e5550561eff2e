"""Citing-sentence extraction, syntactic filtering and citation segmentation."""
from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field

from ..textutil import content_hash, normalize_ws
from .syntax import RuleTagger, Tagger, TaggerUnavailableError, has_svo
from .wikitext import ArticleSource, normalize_url

logger = logging.getLogger(__name__)

CONTEXT_WINDOW = 2


class SegmentationError(ValueError):
    pass


@dataclass(frozen=True)
class CitationGroup:
    urls: tuple[str, ...]
    position: int

    def __post_init__(self) -> None:
        if not self.urls:
            raise ValueError("citation group needs at least one URL")
        if len(set(self.urls)) != len(self.urls):
            raise ValueError("citation group URLs must be unique")
        for u in self.urls:
            if normalize_url(u) != u:
                raise ValueError(f"invalid URL in citation group: {u!r}")

    def to_dict(self) -> dict:
        return {"urls": list(self.urls), "position": self.position}

    @classmethod
    def from_dict(cls, d: dict) -> "CitationGroup":
        return cls(tuple(d["urls"]), int(d["position"]))


@dataclass(frozen=True)
class SentenceContext:
    title: str
    abstract: str
    before: tuple[str, ...]
    after: tuple[str, ...]
    section_path: tuple[str, ...]


@dataclass(frozen=True)
class SourceRef:
    page_id: str
    title: str
    last_updated: dt.date
    cohort_year: int
    categories: tuple[str, ...] = ()


@dataclass
class CitingSentence:
    sentence_id: str
    sentence_text: str
    citations: list[CitationGroup]
    context: SentenceContext
    source: SourceRef
    segments: list[tuple[str, CitationGroup]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.citations:
            raise ValueError("a citing sentence carries at least one citation group")
        if not self.segments:
            self.segments = segment_by_citations(self)

    @property
    def urls(self) -> list[str]:
        return list(dict.fromkeys(u for g in self.citations for u in g.urls))

    def to_dict(self) -> dict:
        return {
            "sentence_id": self.sentence_id,
            "sentence_text": self.sentence_text,
            "segments": [{"text": t, "citation": g.to_dict()} for t, g in self.segments],
            "context": {
                "title": self.context.title,
                "abstract": self.context.abstract,
                "before": list(self.context.before),
                "after": list(self.context.after),
                "section_path": list(self.context.section_path),
            },
            "source": {
                "page_id": self.source.page_id,
                "title": self.source.title,
                "last_updated": self.source.last_updated.isoformat(),
                "cohort_year": self.source.cohort_year,
                "categories": list(self.source.categories),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CitingSentence":
        segments = [(s["text"], CitationGroup.from_dict(s["citation"])) for s in d["segments"]]
        ctx, src = d["context"], d["source"]
        return cls(
            sentence_id=d["sentence_id"],
            sentence_text=d["sentence_text"],
            citations=[g for _, g in segments],
            context=SentenceContext(
                ctx["title"], ctx["abstract"], tuple(ctx["before"]), tuple(ctx["after"]),
                tuple(ctx["section_path"]),
            ),
            source=SourceRef(
                src["page_id"], src["title"], dt.date.fromisoformat(src["last_updated"]),
                int(src["cohort_year"]), tuple(src.get("categories", ())),
            ),
            segments=segments,
        )


def segment_by_citations(sentence: CitingSentence) -> list[tuple[str, CitationGroup]]:
    """Split the sentence at citation positions; each piece keeps the group ending it.

    Text after the last citation (rare: a reference placed mid-clause) is
    folded into the final segment so the segments still partition the sentence.
    """
    text = sentence.sentence_text
    groups = sentence.citations
    if not groups:
        raise SegmentationError("sentence has no citation groups")
    segments: list[tuple[str, CitationGroup]] = []
    prev = 0
    for group in groups:
        if not 0 < group.position <= len(text):
            raise SegmentationError(
                f"citation position {group.position} outside sentence of length {len(text)}"
            )
        if group.position <= prev:
            raise SegmentationError("citation positions must strictly increase")
        segments.append((text[prev:group.position].strip(), group))
        prev = group.position
    tail = text[prev:].strip()
    if tail:
        last_text, last_group = segments[-1]
        segments[-1] = (f"{last_text} {tail}", last_group)
    return segments


def extract_citing_sentences(article: ArticleSource, tagger: Tagger | None = None) -> list[CitingSentence]:
    """Every sentence of the article that carries at least one citation group.

    A reference marker binds to the last sentence starting before it.
    """
    tagger = tagger or RuleTagger()
    # (section_path, sentence text, groups) in document order
    rows: list[tuple[tuple[str, ...], str, list[CitationGroup]]] = []
    for para in article.paragraphs:
        spans = _split_at_cited_stops(para.text, tagger.sentences(para.text), para.markers)
        if not spans:
            continue
        per_sentence: list[list] = [[] for _ in spans]
        for marker in para.markers:
            idx = max((i for i, (s, _) in enumerate(spans) if s < marker.offset), default=0)
            per_sentence[idx].append(marker)
        for (start, end), markers in zip(spans, per_sentence):
            sent = para.text[start:end]
            groups: list[CitationGroup] = []
            for m in markers:
                pos = min(max(m.offset - start, 0), len(sent))
                while pos > 0 and sent[pos - 1].isspace():
                    pos -= 1
                if pos == 0:
                    continue
                if groups and groups[-1].position == pos:
                    urls = tuple(dict.fromkeys(groups[-1].urls + m.urls))
                    groups[-1] = CitationGroup(urls, pos)
                else:
                    groups.append(CitationGroup(m.urls, pos))
            rows.append((para.section_path, sent, groups))

    source = SourceRef(
        article.page_id, article.title, article.last_updated, article.cohort_year,
        tuple(article.categories),
    )
    out: list[CitingSentence] = []
    for i, (path, sent, groups) in enumerate(rows):
        if not groups:
            continue
        same_section = [j for j in range(len(rows)) if rows[j][0] == path]
        k = same_section.index(i)
        before = tuple(rows[j][1] for j in same_section[max(0, k - CONTEXT_WINDOW):k])
        after = tuple(rows[j][1] for j in same_section[k + 1:k + 1 + CONTEXT_WINDOW])
        out.append(
            CitingSentence(
                sentence_id=content_hash([article.page_id, i, sent])[:16],
                sentence_text=sent,
                citations=groups,
                context=SentenceContext(article.title, article.abstract, before, after, path),
                source=source,
            )
        )
    return out


def _split_at_cited_stops(text: str, spans: list[tuple[int, int]], markers) -> list[tuple[int, int]]:
    # A reference right after terminal punctuation followed by a capitalised
    # word ends a sentence even when the sentencizer saw an abbreviation.
    cuts = {
        m.offset for m in markers
        if 0 < m.offset < len(text) and text[m.offset - 1] in ".!?"
        and text[m.offset:].lstrip()[:1].isupper()
    }
    out = []
    for start, end in spans:
        inner = sorted(c for c in cuts if start < c < end)
        prev = start
        for c in inner:
            out.append((prev, c))
            prev = c
            while prev < end and text[prev].isspace():
                prev += 1
        out.append((prev, end))
    return out


def filter_syntactic_completeness(
    sentences: list[CitingSentence], tagger: Tagger | None
) -> list[CitingSentence]:
    """Keep sentences whose parse has a subject, a verbal root and an object/complement."""
    if tagger is None:
        raise TaggerUnavailableError("syntactic completeness filter requires a tagger")
    kept = []
    for s in sentences:
        if has_svo(tagger.parse(s.sentence_text)):
            kept.append(s)
        else:
            logger.debug("dropped fragment: %s", s.sentence_text)
    return kept


def joined_segments(sentence: CitingSentence) -> str:
    return normalize_ws(" ".join(t for t, _ in sentence.segments))
