"""Knowledge-graph extraction from facts and keypoint coverage."""
from __future__ import annotations

import json
import logging
import re
from typing import Iterable

from ..facts import first_json_array
from ..llm.gateway import Gateway
from ..textutil import content_words
from .graph import KnowledgeGraph, Triplet

logger = logging.getLogger(__name__)

_TRAILING_COMMA_RE = re.compile(r",\s*([\]}])")
TRIPLET_KEYS = ("head", "head_type", "relation", "tail", "tail_type")


class KgParseError(ValueError):
    pass


def parse_triplets(text: str) -> list[Triplet]:
    """Triplets from the first JSON array in a model response.

    Trailing commas are tolerated. Malformed entries are dropped; exact
    duplicates collapse to their first occurrence.
    """
    arr = first_json_array(text)
    if arr is None:
        arr = first_json_array(_TRAILING_COMMA_RE.sub(r"\1", text))
    if arr is None:
        raise KgParseError("no JSON array in response")
    out: list[Triplet] = []
    for item in arr:
        if not isinstance(item, dict) or not all(isinstance(item.get(k), str) for k in TRIPLET_KEYS):
            logger.debug("dropping malformed triplet %r", item)
            continue
        try:
            trip = Triplet(*(" ".join(item[k].split()) for k in TRIPLET_KEYS))
        except ValueError:
            continue
        if trip not in out:
            out.append(trip)
    return out


def kg_coverage(triplets: Iterable[Triplet], keypoints: list[str]) -> float:
    """Share of distinct keypoint words that occur in some head, relation or tail."""
    words = set(content_words(" ".join(keypoints)))
    if not words:
        raise ValueError("keypoints contain no words")
    graph_words: set[str] = set()
    for t in triplets:
        graph_words.update(content_words(f"{t.head} {t.relation} {t.tail}"))
    return len(words & graph_words) / len(words)


def extract_kg(gateway: Gateway, fact_id: str, keypoints: list[str]) -> KnowledgeGraph:
    bindings = {"ADD_KEYPOINTS_HERE": " ".join(keypoints)}
    last: Exception | None = None
    for attempt in (1, 2):
        call = gateway.complete("kg_extraction", bindings, meta={"fact_id": fact_id, "attempt": attempt})
        try:
            triplets = parse_triplets(call.response_text)
        except KgParseError as exc:
            last = exc
            continue
        return KnowledgeGraph(fact_id, triplets, kg_coverage(triplets, keypoints))
    raise KgParseError(f"fact {fact_id}: {last}")


def dumps_triplets(triplets: Iterable[Triplet]) -> str:
    return json.dumps([t.to_dict() for t in triplets], ensure_ascii=False, indent=4)
