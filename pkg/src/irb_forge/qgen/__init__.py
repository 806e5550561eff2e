"""Question generation: KG extraction, masking, transformations and prompted generation."""
from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass
from typing import Iterable

from ..facts import Fact
from ..llm.gateway import Gateway
from .generation import (
    GenerationError,
    QASample,
    QuestionDraft,
    build_sample,
    check_answerability,
    generate_question_stepwise,
    refine_question,
    reject_record,
)
from .graph import KnowledgeGraph, MaskedGraph, MaskedNode, Triplet, Variant, mask_token
from .kg import KgParseError, extract_kg, kg_coverage, parse_triplets
from .masking import (
    CapitalizationTagger,
    EntityTagger,
    mask_single_hop,
    merge_multi_hop,
    pair_multi_hop,
    select_maskable_node,
)
from .transforms import (
    FALSE_PREMISE_ANSWER,
    paraphrase_nodes,
    perturb_false_premise,
    relative_date,
)

logger = logging.getLogger(__name__)

DEFAULT_COVERAGE_THRESHOLD = 0.8


@dataclass
class QGenSettings:
    reference_date: dt.date
    seed: int = 0
    coverage_threshold: float = DEFAULT_COVERAGE_THRESHOLD


def extract_graphs(gateway: Gateway, facts: Iterable[Fact]) -> tuple[list[KnowledgeGraph], list[dict]]:
    graphs, rejects = [], []
    for fact in facts:
        try:
            graphs.append(extract_kg(gateway, fact.fact_id, fact.keypoint_texts))
        except KgParseError as exc:
            rejects.append(reject_record(fact.fact_id, "generation_fail", str(exc)))
    return graphs, rejects


def mask_graphs(
    graphs: Iterable[KnowledgeGraph],
    facts: dict[str, Fact],
    settings: QGenSettings,
    tagger: EntityTagger | None = None,
) -> tuple[list[MaskedGraph], list[dict]]:
    singles, rejects = [], []
    for kg in graphs:
        fact = facts[kg.fact_id]
        if kg.coverage < settings.coverage_threshold:
            rejects.append(reject_record(kg.fact_id, "coverage_fail", f"coverage {kg.coverage:.3f}"))
            continue
        picked = select_maskable_node(kg.triplets, fact.keypoint_texts, tagger)
        if picked is None:
            rejects.append(reject_record(kg.fact_id, "no_maskable_node"))
            continue
        singles.append(
            mask_single_hop(
                kg.triplets,
                picked[0],
                fact_id=kg.fact_id,
                gold_doc_ids=fact.supporting_doc_ids,
                keypoints=fact.keypoint_texts,
                cohort_year=fact.source.get("cohort_year"),
            )
        )
    return singles, rejects


def build_variants(singles: list[MaskedGraph], settings: QGenSettings) -> list[MaskedGraph]:
    """Paraphrased single-hop, false-premise and paraphrased multi-hop graphs, in that order per fact."""
    out: list[MaskedGraph] = []
    for single in singles:
        out.append(paraphrase_nodes(single, settings.reference_date, settings.seed))
        fp = perturb_false_premise(single, settings.reference_date, settings.seed)
        if fp is not None:
            out.append(fp)
    for multi in pair_multi_hop(singles):
        out.append(paraphrase_nodes(multi, settings.reference_date, settings.seed))
    return out


def generate_samples(
    gateway: Gateway, variants: Iterable[MaskedGraph], settings: QGenSettings
) -> tuple[list[QASample], list[dict]]:
    samples, rejects = [], []
    for masked in variants:
        try:
            samples.append(build_sample(gateway, masked, settings.reference_date))
        except GenerationError as exc:
            rejects.append(reject_record("+".join(masked.fact_ids) + f":{masked.variant.value}", exc.reason, exc.detail))
    return samples, rejects


__all__ = [
    "CapitalizationTagger",
    "DEFAULT_COVERAGE_THRESHOLD",
    "EntityTagger",
    "FALSE_PREMISE_ANSWER",
    "GenerationError",
    "KgParseError",
    "KnowledgeGraph",
    "MaskedGraph",
    "MaskedNode",
    "QASample",
    "QGenSettings",
    "QuestionDraft",
    "Triplet",
    "Variant",
    "build_sample",
    "build_variants",
    "check_answerability",
    "extract_graphs",
    "extract_kg",
    "generate_question_stepwise",
    "generate_samples",
    "kg_coverage",
    "mask_graphs",
    "mask_single_hop",
    "mask_token",
    "merge_multi_hop",
    "pair_multi_hop",
    "paraphrase_nodes",
    "parse_triplets",
    "perturb_false_premise",
    "refine_question",
    "relative_date",
    "select_maskable_node",
]
