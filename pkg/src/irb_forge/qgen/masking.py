"""Maskable-node selection, single-hop masking and multi-hop merging."""
from __future__ import annotations

import re
from difflib import SequenceMatcher
from typing import Protocol

from ..textutil import content_words
from .graph import (
    MaskedGraph,
    MaskedNode,
    Triplet,
    Variant,
    distinct_heads,
    distinct_nodes,
    is_mask,
    mask_text,
    node_type_of,
)

FUZZY_THRESHOLD = 0.9
_CONJUNCTION_RE = re.compile(r"\band\b|&|\bet\.?\s+al\b", re.IGNORECASE)
_LOWER_CONNECTORS = frozenset(
    "of the de del della di da van von der den la le du bin al y and for on in at".split()
)


class EntityTagger(Protocol):
    def is_named_entity(self, text: str) -> bool: ...


class CapitalizationTagger:
    """Names are runs of capitalized or numeric words, lowercase connectors allowed inside."""

    def is_named_entity(self, text: str) -> bool:
        words = re.findall(r"[\w'’.-]+", text)
        if not words:
            return False
        if words[0].lower() in _LOWER_CONNECTORS or words[-1].lower() in _LOWER_CONNECTORS:
            return False
        has_name = False
        for w in words:
            if w[0].isupper() or w[0].isdigit():
                has_name = has_name or w[0].isupper()
            elif w.lower() not in _LOWER_CONNECTORS:
                return False
        return has_name


def fuzzy_contained(needle: str, haystack: str, threshold: float = FUZZY_THRESHOLD) -> bool:
    """Containment on case-folded token sequences, tolerant of small differences."""
    a, b = content_words(needle), content_words(haystack)
    if not a or not b:
        return False
    if needle.casefold() in haystack.casefold():
        return True
    width = len(a)
    if width > len(b):
        return SequenceMatcher(None, a, b, autojunk=False).ratio() >= threshold
    return any(
        SequenceMatcher(None, a, b[i : i + width], autojunk=False).ratio() >= threshold
        for i in range(len(b) - width + 1)
    )


def crit_named_entity(node: str, tagger: EntityTagger) -> bool:
    return tagger.is_named_entity(node)


def crit_coverage(node: str, keypoints: list[str]) -> bool:
    return bool(keypoints) and all(node.casefold() in kp.casefold() for kp in keypoints)


def crit_atomicity(node: str) -> bool:
    return _CONJUNCTION_RE.search(node) is None


def crit_non_overlapping(node: str, triplets: list[Triplet]) -> bool:
    return not any(fuzzy_contained(node, other) for other in distinct_nodes(triplets) if other != node)


def crit_non_exclusive(node: str, triplets: list[Triplet]) -> bool:
    """For each relation the node takes part in, it is that relation's only head (or tail)."""
    for t in triplets:
        if t.head == node:
            rel = t.relation.casefold()
            if any(o.relation.casefold() == rel and o.head != node for o in triplets):
                return False
        if t.tail == node:
            rel = t.relation.casefold()
            if any(o.relation.casefold() == rel and o.tail != node for o in triplets):
                return False
    return True


def maskable(node: str, triplets: list[Triplet], keypoints: list[str], tagger: EntityTagger) -> bool:
    return (
        not is_mask(node)
        and crit_named_entity(node, tagger)
        and crit_coverage(node, keypoints)
        and crit_atomicity(node)
        and crit_non_overlapping(node, triplets)
        and crit_non_exclusive(node, triplets)
    )


def select_maskable_node(
    triplets: list[Triplet], keypoints: list[str], tagger: EntityTagger | None = None
) -> tuple[str, int] | None:
    """First head, by first textual occurrence, that meets every masking criterion."""
    tagger = tagger or CapitalizationTagger()
    for head in distinct_heads(triplets):
        if maskable(head, triplets, keypoints, tagger):
            position = next(i for i, t in enumerate(triplets) if t.head == head)
            return head, position
    return None


def mask_single_hop(
    triplets: list[Triplet],
    node: str,
    *,
    fact_id: str,
    gold_doc_ids: list[str],
    keypoints: list[str],
    cohort_year: int | None = None,
) -> MaskedGraph:
    ntype = node_type_of(triplets, node)
    masked = [t.substitute({node: mask_text(1)}) for t in triplets]
    return MaskedGraph(
        Variant.SINGLE_HOP,
        [fact_id],
        masked,
        [MaskedNode(node, ntype, 1)],
        node,
        sorted(set(gold_doc_ids)),
        list(keypoints),
        cohort_year,
    )


def merge_multi_hop(kg1: MaskedGraph, kg2: MaskedGraph) -> MaskedGraph | None:
    """Chain kg2 into kg1 when kg2's answer is an unmasked node of kg1."""
    if kg1.variant is not Variant.SINGLE_HOP or kg2.variant is not Variant.SINGLE_HOP:
        raise ValueError("only single-hop graphs can be merged")
    if set(kg1.fact_ids) & set(kg2.fact_ids):
        return None
    bridge = kg2.answer.casefold()
    if not any(n.casefold() == bridge for n in kg1.unmasked_nodes()):
        return None
    if kg1.answer.casefold() == bridge:
        return None
    part1 = [t.substitute({kg2.answer: mask_text(2)}, casefold=True) for t in kg1.triplets]
    part2 = [
        t.substitute({mask_text(1): mask_text(2)}).substitute({kg1.answer: mask_text(1)}, casefold=True)
        for t in kg2.triplets
    ]
    return MaskedGraph(
        Variant.MULTI_HOP,
        [kg1.fact_id, kg2.fact_id],
        part1 + part2,
        [MaskedNode(kg1.answer, kg1.target.node_type, 1), MaskedNode(kg2.answer, kg2.target.node_type, 2)],
        kg1.answer,
        sorted(set(kg1.gold_doc_ids) | set(kg2.gold_doc_ids)),
        kg1.keypoints + kg2.keypoints,
        kg1.cohort_year,
    )


def pair_multi_hop(singles: list[MaskedGraph]) -> list[MaskedGraph]:
    """Ordered-pair search within a cohort; the first match wins for each kg1."""
    out = []
    for kg1 in singles:
        for kg2 in singles:
            if kg2 is kg1 or kg2.cohort_year != kg1.cohort_year:
                continue
            merged = merge_multi_hop(kg1, kg2)
            if merged is not None:
                out.append(merged)
                break
    return out
