"""Stepwise question generation, answerability checks and refinement."""
from __future__ import annotations

import datetime as dt
import json
import logging
import re
from dataclasses import dataclass, field
from typing import Any

from ..llm.gateway import Gateway
from ..textutil import content_hash
from .graph import MaskedGraph, Triplet, Variant, mask_text
from .transforms import FALSE_PREMISE_ANSWER

logger = logging.getLogger(__name__)

_ANSWERABILITY_LEAD_RE = re.compile(r"^\W*([AB])\s*\.")
_ANSWERABILITY_ANY_RE = re.compile(r"\b([AB])\.\s*(Multiple|Single)\b", re.IGNORECASE)


class GenerationError(RuntimeError):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


@dataclass
class QuestionDraft:
    question: str
    trace: list[tuple[Triplet, str]]


@dataclass
class QASample:
    sample_id: str
    question: str
    answer: str
    variant: Variant
    fact_ids: list[str]
    gold_doc_ids: list[str]
    generation_trace: list[dict]
    masked: dict
    cohort_year: int | None = None
    attributes: dict | None = None

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise ValueError("question must be non-empty")

    @property
    def fact_id(self) -> str:
        return self.fact_ids[0]

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "question": self.question,
            "answer": self.answer,
            "variant": self.variant.value,
            "fact_ids": list(self.fact_ids),
            "gold_doc_ids": list(self.gold_doc_ids),
            "generation_trace": list(self.generation_trace),
            "masked": dict(self.masked),
            "cohort_year": self.cohort_year,
            "attributes": self.attributes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QASample":
        return cls(
            d["sample_id"],
            d["question"],
            d["answer"],
            Variant(d["variant"]),
            list(d["fact_ids"]),
            list(d["gold_doc_ids"]),
            list(d["generation_trace"]),
            dict(d["masked"]),
            d.get("cohort_year"),
            d.get("attributes"),
        )


def bfs_order(triplets: list[Triplet]) -> list[Triplet]:
    """Triplets reachable from mask #1 in breadth-first order, then the rest in original order."""
    remaining = list(triplets)
    ordered: list[Triplet] = []
    frontier = {mask_text(1)}
    while True:
        layer = [t for t in remaining if t.head in frontier or t.tail in frontier]
        if not layer:
            break
        for t in layer:
            remaining.remove(t)
            ordered.append(t)
            frontier.update((t.head, t.tail))
    return ordered + remaining


def relation_line(t: Triplet) -> str:
    return f"Relation: {t.head} [{t.head_type}] | {t.relation} | {t.tail} [{t.tail_type}]"


def format_steps(history: list[tuple[Triplet, str]], current: Triplet) -> str:
    blocks = [f"{relation_line(t)}\nGenerated question: {q}" for t, q in history]
    blocks.append(f"{relation_line(current)}\nGenerated question:")
    return "\n\n".join(blocks)


def _clean_question(text: str) -> str:
    for line in text.strip().splitlines():
        line = line.strip()
        if line.lower().startswith("generated question:"):
            line = line.split(":", 1)[1].strip()
        if line:
            return line
    return ""


def generate_question_stepwise(gateway: Gateway, masked: MaskedGraph) -> QuestionDraft:
    target_type = masked.target.node_type
    history: list[tuple[Triplet, str]] = []
    for step, triplet in enumerate(bfs_order(masked.rendered_triplets())):
        bindings = {"ADD_QUESTION_TARGET_TYPE": target_type, "ADD_STEPS_HERE": format_steps(history, triplet)}
        question = ""
        for attempt in (1, 2):
            call = gateway.complete(
                "question_generation", bindings,
                meta={"fact_ids": masked.fact_ids, "variant": masked.variant.value, "step": step, "attempt": attempt},
            )
            question = _clean_question(call.response_text)
            if question:
                break
        if not question:
            raise GenerationError("generation_fail", f"empty output at step {step}")
        history.append((triplet, question))
    if not history:
        raise GenerationError("generation_fail", "graph has no triplets")
    return QuestionDraft(history[-1][1], history)


def parse_answerability(text: str) -> str | None:
    m = _ANSWERABILITY_LEAD_RE.match(text.strip())
    letter = m.group(1) if m else None
    if letter is None:
        m2 = _ANSWERABILITY_ANY_RE.search(text)
        letter = m2.group(1).upper() if m2 else None
    return {"A": "multiple", "B": "single"}.get(letter) if letter else None


def check_answerability(gateway: Gateway, question: str) -> str | None:
    """"single", "multiple", or None when the label stays unparseable after one re-prompt."""
    for attempt in (1, 2):
        call = gateway.complete("answerability", {"ADD_QUESTION_HERE": question}, meta={"attempt": attempt})
        verdict = parse_answerability(call.response_text)
        if verdict is not None:
            return verdict
    return None


def masked_context(masked: MaskedGraph) -> str:
    """Keypoints with masked entities shown as ``<Unknown #k (type)>``."""
    text = " ".join(masked.keypoints)
    for node in sorted(masked.masked_nodes, key=lambda m: -len(m.text)):
        text = re.sub(re.escape(node.text), f"<Unknown #{node.mask_index} ({node.node_type})>", text, flags=re.IGNORECASE)
    return text


def surface_map(masked: MaskedGraph) -> dict[str, str]:
    return {**masked.paraphrase_map, **masked.perturbation_map}


def refine_question(gateway: Gateway, draft: QuestionDraft, masked: MaskedGraph, question_date: dt.date) -> str:
    """Refined wording, or the draft if refinement dropped a paraphrased or perturbed surface."""
    surfaces = surface_map(masked)
    bindings = {
        "ADD_QUESTION_DATE": question_date.isoformat(),
        "ADD_QUESTION_TARGET_TYPE": masked.target.node_type,
        "ADD_KEYPOINTS_HERE": masked_context(masked),
        "ADD_QUESTION_HERE": draft.question,
        "ADD_PARAPHRASE_MAP": json.dumps(surfaces, ensure_ascii=False) if surfaces else "None",
    }
    call = gateway.complete("refinement", bindings, meta={"fact_ids": masked.fact_ids, "variant": masked.variant.value})
    refined = _clean_question(call.response_text)
    if not refined:
        return draft.question
    required = [s for s in surfaces.values() if s in draft.question]
    if any(s not in refined for s in required):
        logger.info("refinement dropped a surface string; keeping draft")
        return draft.question
    return refined


def answer_leaks(question: str, masked: MaskedGraph) -> bool:
    return masked.answer.casefold() in question.casefold()


def sample_id_for(masked: MaskedGraph) -> str:
    return "q" + content_hash([masked.variant.value, masked.fact_ids])[:12]


def build_sample(gateway: Gateway, masked: MaskedGraph, question_date: dt.date) -> QASample:
    draft = generate_question_stepwise(gateway, masked)
    verdict = check_answerability(gateway, draft.question)
    if verdict is None:
        raise GenerationError("multiple_answers", "answerability label unparseable")
    if verdict == "multiple":
        raise GenerationError("multiple_answers", draft.question)
    question = refine_question(gateway, draft, masked, question_date)
    if answer_leaks(question, masked):
        question = draft.question
        if answer_leaks(question, masked):
            raise GenerationError("generation_fail", "answer appears in question")
    answer = FALSE_PREMISE_ANSWER if masked.variant is Variant.FALSE_PREMISE else masked.answer
    trace = [{"triplet": t.to_dict(), "question": q} for t, q in draft.trace]
    return QASample(
        sample_id_for(masked),
        question,
        answer,
        masked.variant,
        list(masked.fact_ids),
        list(masked.gold_doc_ids),
        trace,
        masked.to_dict(),
        masked.cohort_year,
    )


def reject_record(unit_id: Any, reason: str, detail: str = "") -> dict:
    return {"id": unit_id, "reason": reason, "detail": detail}
