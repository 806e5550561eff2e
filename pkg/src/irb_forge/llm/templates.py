"""Prompt templates with bracketed ``[ADD_...]`` placeholders."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Mapping

PLACEHOLDER_RE = re.compile(r"\[(ADD(?:[_ ][A-Z0-9]+)+)\]")

TEMPLATE_IDS = (
    "keypoints",
    "groundedness",
    "kg_extraction",
    "question_generation",
    "answerability",
    "refinement",
    "qa_with_retrieval",
    "qa_without_retrieval",
    "judge",
)


class MissingPlaceholderError(KeyError):
    def __init__(self, template_id: str, missing: list[str]):
        super().__init__(f"template {template_id!r} missing bindings: {', '.join(missing)}")
        self.template_id = template_id
        self.missing = missing


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str
    required_placeholders: frozenset[str] = field(default=frozenset())

    def __post_init__(self) -> None:
        if not self.required_placeholders:
            object.__setattr__(self, "required_placeholders", frozenset(PLACEHOLDER_RE.findall(self.body)))

    def render(self, bindings: Mapping[str, str]) -> str:
        """Single-pass substitution; bound values are inserted verbatim and never re-scanned."""
        missing = sorted(self.required_placeholders - set(bindings))
        if missing:
            raise MissingPlaceholderError(self.template_id, missing)

        def sub(m: re.Match) -> str:
            name = m.group(1)
            return str(bindings[name]) if name in self.required_placeholders else m.group(0)

        return PLACEHOLDER_RE.sub(sub, self.body)


@lru_cache(maxsize=None)
def load_template(template_id: str) -> PromptTemplate:
    if template_id not in TEMPLATE_IDS:
        raise KeyError(f"unknown template {template_id!r}")
    text = resources.files("irb_forge.prompts").joinpath(f"{template_id}.txt").read_text(encoding="utf-8")
    return PromptTemplate(template_id, text.rstrip("\n"))
