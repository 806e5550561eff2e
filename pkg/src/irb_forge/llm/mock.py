"""Deterministic offline provider: a fixture table first, then per-template rules.

Fixture file: JSON list of entries
``{"template_id": ..., "match": {binding: text}, "contains": {binding: text},
"response": ..., "usage": {...}}``. ``match`` compares whitespace-normalized
values exactly; ``contains`` is a substring test. The first matching entry wins.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

from ..textutil import content_words, normalize_ws, tokenize
from .gateway import LlmRequest, ProviderResponse, Usage

Rule = Callable[[Mapping[str, str]], str]


@dataclass(frozen=True)
class FixtureEntry:
    template_id: str
    response: str
    match: Mapping[str, str] = field(default_factory=dict)
    contains: Mapping[str, str] = field(default_factory=dict)
    usage: Mapping[str, int] | None = None

    def matches(self, request: LlmRequest) -> bool:
        if request.template_id != self.template_id:
            return False
        b = request.bindings
        for k, v in self.match.items():
            if normalize_ws(b.get(k, "")) != normalize_ws(v):
                return False
        for k, v in self.contains.items():
            if normalize_ws(v) not in normalize_ws(b.get(k, "")):
                return False
        return True


def _norm_for_containment(text: str) -> str:
    return normalize_ws(text).casefold().rstrip(" .!?;:")


def rule_keypoints(b: Mapping[str, str]) -> str:
    parts = [p.strip() for p in b["ADD_CLAIM_HERE"].split("[KP]")]
    return json.dumps([p for p in parts if p], ensure_ascii=False)


def rule_groundedness(b: Mapping[str, str]) -> str:
    kp = _norm_for_containment(b["ADD_KEYPOINT_HERE"])
    ctx = normalize_ws(b["ADD_CONTEXT_HERE"]).casefold()
    return "Grounded" if kp and kp in ctx else "Not Grounded"


_UNKNOWN_RE = re.compile(r"^<Unknown> #(\d+) \[(.+)\]$")
_TRAILING_PREP_RE = re.compile(r"\s+(?:on|in|at|since)$")
_REL_RE = re.compile(r"^Relation: (.+?) \[([^\]]+)\] \| (.+?) \| (.+?) \[([^\]]+)\]$")


def _surface(node: str, ntype: str) -> tuple[int | None, str]:
    m = _UNKNOWN_RE.match(f"{node} [{ntype}]")
    if m:
        idx = int(m.group(1))
        return idx, "it" if idx == 1 else f"a specific {ntype.lower()}"
    return None, node


def _wh(target: str) -> str:
    return "Who" if target.lower() in ("person", "people") else f"What {target.lower()}"


def rule_question_generation(b: Mapping[str, str]) -> str:
    target = b["ADD_QUESTION_TARGET_TYPE"]
    relations: list[tuple[str, str, str, str, str]] = []
    previous = ""
    for line in b["ADD_STEPS_HERE"].splitlines():
        line = line.strip()
        m = _REL_RE.match(line)
        if m:
            relations.append(m.groups())
        elif line.startswith("Generated question:"):
            q = line[len("Generated question:"):].strip()
            if q:
                previous = q
    if not relations:
        return ""
    h, ht, rel, t, tt = relations[-1]
    hi, hs = _surface(h, ht)
    ti, ts = _surface(t, tt)
    if ts.endswith(" ago") or ts == "today":
        rel = _TRAILING_PREP_RE.sub("", rel)
    if not previous:
        if hi == 1:
            return f"{_wh(target)} {rel} {ts}?"
        if ti == 1:
            return f"{_wh(target)} is the one that {hs} {rel}?"
        return f"{_wh(target)} relates to a case where {hs} {rel} {ts}?"
    stem = previous.rstrip("?").rstrip()
    if hi == 1:
        return f"{stem}, and {rel} {ts}?"
    if ti == 1:
        return f"{stem}, and is the one that {hs} {rel}?"
    return f"{stem}, where {hs} {rel} {ts}?"


def rule_answerability(b: Mapping[str, str]) -> str:
    return "B."


def rule_refinement(b: Mapping[str, str]) -> str:
    return b["ADD_QUESTION_HERE"]


_CAP_RUN_RE = re.compile(r"\b[A-Z][\w'-]+(?: +(?:of|the|de) +[A-Z][\w'-]+| +[A-Z][\w'-]+)*")
_SENT_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")
_BLOCK_HEADER_RE = re.compile(r"^(?:\[\d+\] Source: |Published date: )")
_NOT_ANSWERS = frozenset(
    "the a an it its this that these those he she they we in on at by for from of and but as "
    "source published content january february march april may june july august september "
    "october november december".split()
)


def rule_qa_with_retrieval(b: Mapping[str, str]) -> str:
    """Extractive reader: the sentence sharing most words with the question, then its first new name."""
    question = b["ADD QUESTION HERE"]
    q_words = set(content_words(question))
    best: tuple[int, str] | None = None
    for line in b["ADD CONTEXT HERE"].splitlines():
        if _BLOCK_HEADER_RE.match(line):
            continue
        line = line.removeprefix("Content: ")
        for sent in _SENT_SPLIT_RE.split(line):
            overlap = len(q_words & set(content_words(sent)))
            if overlap and (best is None or overlap > best[0]):
                best = (overlap, sent)
    if best is None:
        return "I don't know"
    for m in _CAP_RUN_RE.finditer(best[1]):
        cand = m.group(0)
        if cand.casefold() not in question.casefold() and cand.casefold() not in _NOT_ANSWERS:
            return cand
    return "I don't know"


def rule_qa_without_retrieval(b: Mapping[str, str]) -> str:
    return "I don't know"


FALSE_PREMISE_GOLD = "false premise question"


def rule_judge(b: Mapping[str, str]) -> str:
    gold = normalize_ws(b["ADD_GOLD_TARGET_HERE"]).casefold()
    pred = normalize_ws(b["ADD_PREDICTED_ANSWER_HERE"]).casefold()
    if not pred or "i don't know" in pred or "i do not know" in pred:
        return "NOT_ATTEMPTED"
    if gold.rstrip(".") == FALSE_PREMISE_GOLD:
        return "CORRECT" if "false premise" in pred else "INCORRECT"
    gold_words = set(content_words(gold))
    if gold_words and gold_words <= set(content_words(pred)):
        return "CORRECT"
    return "INCORRECT"


DEFAULT_RULES: dict[str, Rule] = {
    "keypoints": rule_keypoints,
    "groundedness": rule_groundedness,
    "kg_extraction": lambda b: "[]",
    "question_generation": rule_question_generation,
    "answerability": rule_answerability,
    "refinement": rule_refinement,
    "qa_with_retrieval": rule_qa_with_retrieval,
    "qa_without_retrieval": rule_qa_without_retrieval,
    "judge": rule_judge,
}


class MockProvider:
    def __init__(self, fixtures: list[FixtureEntry] | None = None, rules: Mapping[str, Rule] | None = None):
        self.fixtures = list(fixtures or [])
        self.rules = {**DEFAULT_RULES, **(rules or {})}
        self.requests: list[LlmRequest] = []

    @classmethod
    def from_file(cls, path: str | Path, rules: Mapping[str, Rule] | None = None) -> "MockProvider":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls([FixtureEntry(**e) for e in raw], rules)

    def send(self, request: LlmRequest) -> ProviderResponse:
        self.requests.append(request)
        for entry in self.fixtures:
            if entry.matches(request):
                usage = None
                if entry.usage is not None:
                    usage = Usage(**entry.usage)
                return ProviderResponse(entry.response, usage)
        rule = self.rules.get(request.template_id)
        text = rule(request.bindings) if rule else ""
        return ProviderResponse(text, Usage(len(tokenize(request.prompt)), len(tokenize(text))))
