"""Main-text extraction, language identification and publication-date discovery."""
from __future__ import annotations

import datetime as dt
import logging
import re
from typing import Callable

import htmldate
import trafilatura
from langdetect import DetectorFactory, LangDetectException, detect_langs

logger = logging.getLogger(__name__)

DetectorFactory.seed = 0

LANGUAGE_CONFIDENCE = 0.65
MIN_LETTERS = 10
UNDETERMINED = "und"

ContentExtractor = Callable[[str], str]

_SCRIPT_RE = re.compile(r"<(script|style|noscript|nav|header|footer|aside|form)\b.*?</\1\s*>", re.S | re.I)
_TAG_RE = re.compile(r"<[^>]+>")


def _fallback_extract(html: str) -> str:
    # Used only when trafilatura finds nothing: drop boilerplate containers, keep <p> text.
    html = _SCRIPT_RE.sub(" ", html)
    paras = re.findall(r"<p\b[^>]*>(.*?)</p\s*>", html, re.S | re.I)
    texts = [re.sub(r"\s+", " ", _TAG_RE.sub(" ", p)).strip() for p in paras]
    return "\n".join(t for t in texts if len(t.split()) >= 5)


def extract_main_text(html: str) -> str:
    """Boilerplate-free article text, or "" when nothing content-like is found."""
    text = trafilatura.extract(html, include_comments=False, include_tables=False, deduplicate=False)
    if not text:
        text = _fallback_extract(html)
    return (text or "").strip()


def detect_language(content: str, threshold: float = LANGUAGE_CONFIDENCE) -> str:
    """ISO 639-1 code of the dominant language, "und" when unsure."""
    if sum(ch.isalpha() for ch in content) < MIN_LETTERS:
        return UNDETERMINED
    try:
        candidates = detect_langs(content)
    except LangDetectException:
        return UNDETERMINED
    best = candidates[0]
    if best.prob < threshold:
        return UNDETERMINED
    return best.lang.split("-")[0]


def extract_publication_date(raw_html: str, url: str | None = None) -> dt.date | None:
    try:
        found = htmldate.find_date(
            raw_html, url=url, extensive_search=True, original_date=True, outputformat="%Y-%m-%d"
        )
    except Exception as exc:  # htmldate raises a variety of parser errors on junk input
        logger.debug("date extraction failed for %s: %s", url, exc)
        return None
    return dt.date.fromisoformat(found) if found else None
