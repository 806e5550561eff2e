"""Keypoint decontextualization, groundedness checks and Fact assembly."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .evidence.documents import EvidenceDocument, doc_id_for
from .ingest.sentences import CitingSentence
from .llm.gateway import ContextLengthError, Gateway, count_tokens
from .llm.templates import load_template
from .textutil import token_spans

logger = logging.getLogger(__name__)

KP_MARKER = "[KP]"
_LABEL_RE = re.compile(r"^\W*(not\s+grounded|grounded)\b", re.IGNORECASE)


@dataclass
class Keypoint:
    text: str
    source_segment: int
    candidate_doc_ids: list[str]
    supporting_doc_ids: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not set(self.supporting_doc_ids) <= set(self.candidate_doc_ids):
            raise ValueError("supporting_doc_ids must be a subset of candidate_doc_ids")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "source_segment": self.source_segment,
            "candidate_doc_ids": list(self.candidate_doc_ids),
            "supporting_doc_ids": list(self.supporting_doc_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Keypoint":
        return cls(d["text"], d["source_segment"], list(d["candidate_doc_ids"]), list(d["supporting_doc_ids"]))


@dataclass
class Fact:
    fact_id: str
    keypoints: list[Keypoint]
    source: dict[str, Any]
    topic_headers: list[str]

    def __post_init__(self) -> None:
        if not self.keypoints:
            raise ValueError("a Fact needs at least one keypoint")
        if any(not kp.supporting_doc_ids for kp in self.keypoints):
            raise ValueError("every keypoint of a Fact must have supporting documents")
        order = [kp.source_segment for kp in self.keypoints]
        if order != sorted(order):
            raise ValueError("keypoint order must follow segment order")

    @property
    def supporting_doc_ids(self) -> list[str]:
        return sorted({d for kp in self.keypoints for d in kp.supporting_doc_ids})

    @property
    def keypoint_texts(self) -> list[str]:
        return [kp.text for kp in self.keypoints]

    def to_dict(self) -> dict:
        return {
            "fact_id": self.fact_id,
            "keypoints": [kp.to_dict() for kp in self.keypoints],
            "source": dict(self.source),
            "topic_headers": list(self.topic_headers),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Fact":
        return cls(d["fact_id"], [Keypoint.from_dict(k) for k in d["keypoints"]], dict(d["source"]), list(d["topic_headers"]))


@dataclass(frozen=True)
class Reject:
    unit_id: str
    reason: str
    detail: str = ""

    def to_dict(self) -> dict:
        return {"id": self.unit_id, "reason": self.reason, "detail": self.detail}


class DecontextualizationError(ValueError):
    def __init__(self, reason: str, detail: str):
        super().__init__(f"{reason}: {detail}")
        self.reason = reason
        self.detail = detail


def first_json_array(text: str) -> list | None:
    """First well-formed JSON array embedded anywhere in ``text``."""
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch != "[":
            continue
        try:
            value, _ = decoder.raw_decode(text, i)
        except json.JSONDecodeError:
            continue
        if isinstance(value, list):
            return value
    return None


def parse_grounded_label(text: str) -> bool | None:
    m = _LABEL_RE.match(text.strip())
    if not m:
        return None
    return not m.group(1).lower().startswith("not")


def build_claim(sentence: CitingSentence) -> str:
    return " ".join(f"{seg} {KP_MARKER}" for seg, _ in sentence.segments)


def build_context(sentence: CitingSentence) -> str:
    ctx = sentence.context
    lines = [f"Title: {ctx.title}"]
    if ctx.section_path:
        lines.append("Section: " + " > ".join(ctx.section_path))
    if ctx.abstract:
        lines.append(f"Abstract: {ctx.abstract}")
    surrounding = " ".join([*ctx.before, sentence.sentence_text, *ctx.after])
    lines.append(f"Surrounding text: {surrounding}")
    return "\n".join(lines)


def _truncate_tokens(text: str, keep: int) -> str:
    spans = token_spans(text)
    if keep <= 0 or not spans:
        return ""
    if keep >= len(spans):
        return text
    return text[: spans[keep - 1][1]]


class FactBuilder:
    def __init__(self, gateway: Gateway, documents: Mapping[str, EvidenceDocument]):
        self.gateway = gateway
        self.documents = documents

    def decontextualize(self, sentence: CitingSentence) -> list[Keypoint]:
        count = len(sentence.segments)
        bindings = {
            "ADD_LAST_UPDATED_DATE": sentence.source.last_updated.strftime("%Y-%m-%d"),
            "ADD_CLAIM_HERE": build_claim(sentence),
            "ADD_CONTEXT_HERE": build_context(sentence),
            "ADD_KEYPOINTS_COUNT_HERE": str(count),
        }
        problem = ("keypoint_parse", "")
        for attempt in (1, 2):
            call = self.gateway.complete(
                "keypoints", bindings, meta={"sentence_id": sentence.sentence_id, "attempt": attempt}
            )
            parsed = first_json_array(call.response_text)
            if parsed is None or not all(isinstance(x, str) and x.strip() for x in parsed):
                problem = ("keypoint_parse", "no JSON array of strings in response")
                continue
            if len(parsed) != count:
                problem = ("keypoint_count", f"expected {count}, got {len(parsed)}")
                continue
            return [
                Keypoint(text.strip(), i, list(dict.fromkeys(doc_id_for(u) for u in group.urls)))
                for i, (text, (_, group)) in enumerate(zip(parsed, sentence.segments))
            ]
        raise DecontextualizationError(*problem)

    def _groundedness_bindings(self, keypoint: str, doc: EvidenceDocument, content: str) -> dict[str, str]:
        return {
            "ADD_KEYPOINT_HERE": keypoint,
            "ADD_CONTEXT_LANGUAGE_HERE": doc.language,
            "ADD_CONTEXT_PUBLISHED_DATE_HERE": doc.published.isoformat() if doc.published else "unknown",
            "ADD_CONTEXT_HERE": content,
        }

    def _ask_grounded(self, keypoint: str, doc: EvidenceDocument, attempt: int) -> str:
        meta = {"doc_id": doc.doc_id, "attempt": attempt}
        bindings = self._groundedness_bindings(keypoint, doc, doc.content)
        try:
            return self.gateway.complete("groundedness", bindings, meta=meta).response_text
        except ContextLengthError:
            budget = self.gateway.prompt_budget()
            if budget is None:
                raise
            overhead = count_tokens(load_template("groundedness").render(self._groundedness_bindings(keypoint, doc, "")))
            keep = budget - overhead
            content = _truncate_tokens(doc.content, keep)
            meta.update(truncated=True, original_tokens=count_tokens(doc.content), kept_tokens=max(keep, 0))
            bindings = self._groundedness_bindings(keypoint, doc, content)
            return self.gateway.complete("groundedness", bindings, meta=meta).response_text

    def check_groundedness(self, keypoint: str, doc: EvidenceDocument) -> bool:
        if not doc.ok:
            return False
        for attempt in (1, 2):
            verdict = parse_grounded_label(self._ask_grounded(keypoint, doc, attempt))
            if verdict is not None:
                return verdict
        logger.info("unparseable groundedness label for doc %s; treating as not grounded", doc.doc_id)
        return False

    def validate(self, keypoints: list[Keypoint]) -> list[Keypoint]:
        out = []
        for kp in keypoints:
            supported = [
                d for d in kp.candidate_doc_ids
                if d in self.documents and self.check_groundedness(kp.text, self.documents[d])
            ]
            out.append(Keypoint(kp.text, kp.source_segment, kp.candidate_doc_ids, supported))
        return out

    def build(self, sentence: CitingSentence) -> tuple[Fact | None, Reject | None]:
        try:
            candidates = self.decontextualize(sentence)
        except DecontextualizationError as exc:
            return None, Reject(sentence.sentence_id, exc.reason, exc.detail)
        validated = self.validate(candidates)
        fact = assemble_fact(sentence, validated)
        if fact is None:
            dead = [kp.source_segment for kp in validated if not kp.supporting_doc_ids]
            return None, Reject(sentence.sentence_id, "ungrounded_keypoint", f"segments without support: {dead}")
        return fact, None

    def run(self, sentences: Iterable[CitingSentence]) -> tuple[list[Fact], list[Reject]]:
        facts: list[Fact] = []
        rejects: list[Reject] = []
        for fact, reject in self.gateway.map(self.build, sentences):
            if fact is not None:
                facts.append(fact)
            if reject is not None:
                rejects.append(reject)
        return facts, rejects


def assemble_fact(sentence: CitingSentence, keypoints: list[Keypoint]) -> Fact | None:
    """A Fact only when every keypoint kept at least one supporting document."""
    if not keypoints or len(keypoints) != len(sentence.segments):
        return None
    if any(not kp.supporting_doc_ids for kp in keypoints):
        return None
    src = sentence.source
    source = {
        "sentence_id": sentence.sentence_id,
        "sentence_text": sentence.sentence_text,
        "page_id": src.page_id,
        "title": src.title,
        "last_updated": src.last_updated.isoformat(),
        "cohort_year": src.cohort_year,
        "categories": list(src.categories),
    }
    return Fact(sentence.sentence_id, list(keypoints), source, list(sentence.context.section_path))
