"""Wikitext article parsing: lead/abstract, headers and inline reference markers."""
from __future__ import annotations

import datetime as dt
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator
from urllib.parse import urlsplit

import mwparserfromhell
import yaml
from mwparserfromhell.nodes import (
    Comment,
    ExternalLink,
    Heading,
    HTMLEntity,
    Tag,
    Template,
    Text,
    Wikilink,
)

logger = logging.getLogger(__name__)

_SKIP_LINK_NS = ("file:", "image:", "media:")
_SKIP_TAGS = frozenset({"table", "gallery", "math", "references", "syntaxhighlight", "timeline", "score"})
_BLOCK_MARKUP = frozenset({"*", "#", ";", ":"})
_INLINE_TEMPLATES = frozenset({"lang", "nowrap", "nobr", "nowrap begin", "script"})
_BARE_URL_RE = re.compile(r"https?://[^\s\]|<>\"]+")


class WikitextParseError(ValueError):
    """Recoverable parse failure; ``partial`` holds what could be parsed."""

    def __init__(self, message: str, skipped_spans: list[str], partial: "ArticleSource | None" = None):
        super().__init__(f"{message}: skipped {len(skipped_spans)} span(s): {skipped_spans}")
        self.skipped_spans = skipped_spans
        self.partial = partial


@dataclass(frozen=True)
class Marker:
    """Reference marker at a character offset of a paragraph's plain text."""

    offset: int
    urls: tuple[str, ...]


@dataclass
class Paragraph:
    text: str
    markers: list[Marker]
    section_path: tuple[str, ...]


@dataclass
class ArticleSource:
    page_id: str
    title: str
    abstract: str
    section_headers: list[str]
    body: str
    last_updated: dt.date
    cohort_year: int
    categories: list[str] = field(default_factory=list)
    skipped_spans: list[str] = field(default_factory=list)
    paragraphs: list[Paragraph] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.title.strip():
            raise ValueError("article title must be non-empty")
        if not isinstance(self.last_updated, dt.date):
            raise TypeError("last_updated must be a date")

    @property
    def citation_markers(self) -> list[Marker]:
        return [m for p in self.paragraphs for m in p.markers]

    def to_dict(self) -> dict:
        return {
            "page_id": self.page_id,
            "title": self.title,
            "abstract": self.abstract,
            "section_headers": self.section_headers,
            "last_updated": self.last_updated.isoformat(),
            "cohort_year": self.cohort_year,
            "categories": self.categories,
        }


def normalize_url(url: str) -> str | None:
    url = url.strip().rstrip(".,;")
    if url.startswith("//"):
        url = "https:" + url
    try:
        parts = urlsplit(url)
    except ValueError:
        return None
    if parts.scheme not in ("http", "https") or not parts.netloc or " " in url:
        return None
    return url


def _dedupe(urls) -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for u in urls:
        norm = normalize_url(u)
        if norm:
            seen.setdefault(norm, None)
    return tuple(seen)


def _ref_urls(code) -> list[str]:
    """URLs cited inside one <ref>: citation-template ``url`` params, links, bare URLs."""
    urls: list[str] = []
    for node in code.nodes:
        if isinstance(node, Template):
            name = str(node.name).strip().lower()
            if name.startswith(("cite", "citation")) or name in {"webarchive", "url"}:
                for key in ("url", "1") if name == "url" else ("url",):
                    if node.has(key):
                        urls.append(str(node.get(key).value).strip())
                        break
        elif isinstance(node, ExternalLink):
            urls.append(str(node.url))
        elif isinstance(node, Tag) and node.contents is not None:
            urls.extend(_ref_urls(node.contents))
        elif isinstance(node, Text):
            urls.extend(_BARE_URL_RE.findall(str(node)))
    return urls


def _tag_name(node: Tag) -> str:
    return str(node.tag).strip().lower()


def _ref_name(node: Tag) -> str | None:
    if node.has("name"):
        return str(node.get("name").value).strip().strip("\"'")
    return None


def _collect_named_refs(code) -> dict[str, tuple[str, ...]]:
    named: dict[str, tuple[str, ...]] = {}
    for tag in code.filter_tags(recursive=True):
        if _tag_name(tag) != "ref" or tag.self_closing or tag.contents is None:
            continue
        name = _ref_name(tag)
        if name and name not in named:
            named[name] = _dedupe(_ref_urls(tag.contents))
    return named


class _Builder:
    """Accumulates plain text blocks with marker offsets while walking nodes."""

    def __init__(self, named_refs: dict[str, tuple[str, ...]]):
        self.named_refs = named_refs
        self.section_path: tuple[str, ...] = ()
        self.headers: list[str] = []
        self.paragraphs: list[Paragraph] = []
        self.categories: list[str] = []
        self.skipped: list[str] = []
        self._text = ""
        self._markers: list[Marker] = []

    def add_text(self, text: str) -> None:
        text = re.sub(r"\s+", " ", text)
        if not self._text:
            text = text.lstrip()
        elif self._text.endswith(" ") and text.startswith(" "):
            text = text.lstrip()
        self._text += text

    def add_marker(self, urls: tuple[str, ...]) -> None:
        if not urls:
            return
        offset = len(self._text.rstrip())
        if self._markers and self._markers[-1].offset == offset:
            merged = _dedupe(self._markers[-1].urls + urls)
            self._markers[-1] = Marker(offset, merged)
        else:
            self._markers.append(Marker(offset, urls))

    def flush(self) -> None:
        text = self._text.rstrip()
        if text:
            markers = [Marker(min(m.offset, len(text)), m.urls) for m in self._markers]
            self.paragraphs.append(Paragraph(text, markers, self.section_path))
        self._text = ""
        self._markers = []

    def walk(self, nodes) -> None:
        for node in nodes:
            if isinstance(node, Heading):
                self.flush()
                title = node.title.strip_code().strip()
                level = max(2, node.level)
                self.section_path = self.section_path[: level - 2] + (title,)
                self.headers.append(title)
            elif isinstance(node, Tag):
                self._tag(node)
            elif isinstance(node, Wikilink):
                target = str(node.title).strip()
                low = target.lower()
                if low.startswith("category:"):
                    self.categories.append(target.split(":", 1)[1].split("|")[0].strip())
                elif not low.startswith(_SKIP_LINK_NS):
                    label = node.text if node.text is not None else node.title
                    self.add_text(label.strip_code() if hasattr(label, "strip_code") else str(label))
            elif isinstance(node, ExternalLink):
                if node.title is not None:
                    self.add_text(node.title.strip_code())
            elif isinstance(node, Template):
                self._template(node)
            elif isinstance(node, HTMLEntity):
                self.add_text(node.normalize())
            elif isinstance(node, Comment):
                continue
            elif isinstance(node, Text):
                self._plain(str(node))

    def _plain(self, text: str) -> None:
        for piece in re.split(r"(<\s*/?\s*ref[^>]*>)", text, flags=re.I):
            if re.fullmatch(r"<\s*/?\s*ref[^>]*>", piece, flags=re.I):
                self.skipped.append(f"unbalanced ref tag {piece!r}")
                continue
            lines = piece.split("\n")
            for i, line in enumerate(lines):
                if i:
                    self.flush()
                self.add_text(line)

    def _tag(self, node: Tag) -> None:
        name = _tag_name(node)
        if name == "ref":
            if node.self_closing or node.contents is None:
                ref = _ref_name(node)
                urls = self.named_refs.get(ref, ()) if ref else ()
                if ref and ref not in self.named_refs:
                    self.skipped.append(f"reference to undefined named ref {ref!r}")
            else:
                urls = _dedupe(_ref_urls(node.contents))
            self.add_marker(urls)
            return
        markup = node.wiki_markup
        if markup in _BLOCK_MARKUP:
            self.flush()
            return
        if name in _SKIP_TAGS or markup == "{|":
            return
        if name == "br":
            self.add_text(" ")
            return
        if node.contents is not None:
            self.walk(node.contents.nodes)

    def _template(self, node: Template) -> None:
        name = str(node.name).strip().lower()
        if name in _INLINE_TEMPLATES and node.params:
            self.add_text(node.params[-1].value.strip_code())
        elif name in ("convert", "cvt") and len(node.params) >= 2:
            self.add_text(f"{node.params[0].value.strip_code()} {node.params[1].value.strip_code()}")


def parse_article(
    raw: str,
    *,
    title: str,
    last_updated: dt.date,
    page_id: str | None = None,
    cohort_year: int | None = None,
    strict: bool = False,
) -> ArticleSource:
    """Parse wikitext into an ArticleSource with paragraph text and reference markers.

    Problems the parser can step over (unbalanced ref tags, dangling named
    refs) are listed in ``skipped_spans``; with ``strict=True`` they raise
    WikitextParseError carrying the partial article instead.
    """
    code = mwparserfromhell.parse(raw)
    builder = _Builder(_collect_named_refs(code))
    builder.walk(code.nodes)
    builder.flush()

    lead = [p for p in builder.paragraphs if not p.section_path]
    article = ArticleSource(
        page_id=page_id or title,
        title=title,
        abstract=" ".join(p.text for p in lead),
        section_headers=builder.headers,
        body=raw,
        last_updated=last_updated,
        cohort_year=cohort_year if cohort_year is not None else last_updated.year,
        categories=builder.categories,
        skipped_spans=builder.skipped,
        paragraphs=builder.paragraphs,
    )
    if builder.skipped:
        if strict:
            raise WikitextParseError("malformed markup", builder.skipped, article)
        logger.warning("%s: skipped %d malformed span(s)", title, len(builder.skipped))
    return article


# --------------------------------------------------------------------------
# Loading from disk

_FRONT_MATTER_RE = re.compile(r"\A---\s*\n(.*?)\n---\s*\n", re.S)
WIKITEXT_SUFFIXES = (".wiki", ".wikitext", ".mediawiki", ".txt")


def _as_date(value) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    return dt.date.fromisoformat(str(value))


def load_article_file(path: str | Path, meta: dict | None = None, strict: bool = False) -> ArticleSource:
    """Read one UTF-8 article; metadata from a YAML front-matter block or ``meta``."""
    path = Path(path)
    raw = path.read_text(encoding="utf-8")
    info = dict(meta or {})
    m = _FRONT_MATTER_RE.match(raw)
    if m:
        info = {**(yaml.safe_load(m.group(1)) or {}), **info}
        raw = raw[m.end():]
    if "last_updated" not in info:
        raise ValueError(f"{path}: missing last_updated metadata")
    return parse_article(
        raw,
        title=str(info.get("title") or path.stem.replace("_", " ")),
        page_id=str(info.get("page_id") or path.stem),
        last_updated=_as_date(info["last_updated"]),
        cohort_year=int(info["cohort_year"]) if info.get("cohort_year") is not None else None,
        strict=strict,
    )


def iter_article_paths(source: str | Path) -> Iterator[tuple[Path, dict]]:
    """Yield (path, metadata) from a directory of wikitext files or a JSON-lines manifest."""
    source = Path(source)
    if source.is_dir():
        for p in sorted(source.iterdir()):
            if p.is_file() and p.suffix in WIKITEXT_SUFFIXES:
                yield p, {}
        return
    with open(source, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                entry = json.loads(line)
                yield (source.parent / entry.pop("path")), entry


def load_articles(source: str | Path, strict: bool = False) -> list[ArticleSource]:
    return [load_article_file(p, meta, strict) for p, meta in iter_article_paths(source)]
