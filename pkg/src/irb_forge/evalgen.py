"""Answer generation, LLM-judge grading, interplay cells and sliced reports."""
from __future__ import annotations

import datetime as dt
import enum
import json
import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .bench import SampleAttributes
from .evidence.documents import EvidenceDocument
from .llm.gateway import Gateway, ProviderError
from .llm.templates import load_template
from .retrieval.metrics import all_relevant_retrieved
from .retrieval.run import RetrievalRun, ordered_slices, slice_names

logger = logging.getLogger(__name__)

LABELS = ("correct", "incorrect", "not_attempted")
_JUDGE_RE = re.compile(r"\b(NOT[_ ]ATTEMPTED|INCORRECT|CORRECT)\b")
INTERNAL_CORRECT_THRESHOLD = 0.5


class Mode(str, enum.Enum):
    RAG = "rag"
    CLOSED_BOOK = "closed_book"


class Interplay(str, enum.Enum):
    REDUNDANT = "redundant"
    RESILIENCE = "resilience"
    AUGMENTATION = "augmentation"
    HOPELESS = "hopeless"


# --- prompting -------------------------------------------------------------

def format_context_blocks(docs: Sequence[EvidenceDocument]) -> str:
    blocks = []
    for rank, doc in enumerate(docs, 1):
        published = doc.published.isoformat() if doc.published else "unknown"
        blocks.append(f"[{rank}] Source: {doc.url}\nPublished date: {published}\nContent: {doc.content}")
    return "\n\n".join(blocks)


def rag_bindings(question: str, docs: Sequence[EvidenceDocument], current_date: dt.date) -> dict[str, str]:
    return {
        "ADD CONTEXT HERE": format_context_blocks(docs),
        "ADD_QUESTION_DATE": current_date.strftime("%Y-%m-%d"),
        "ADD QUESTION HERE": question,
    }


def closed_book_bindings(question: str, current_date: dt.date) -> dict[str, str]:
    return {"ADD_QUESTION_DATE": current_date.strftime("%Y-%m-%d"), "ADD QUESTION HERE": question}


def format_rag_prompt(question: str, docs: Sequence[EvidenceDocument], current_date: dt.date) -> str:
    return load_template("qa_with_retrieval").render(rag_bindings(question, docs, current_date))


@dataclass
class AnswerRecord:
    query_id: str
    mode: Mode
    context_doc_ids: list[str]
    answer_text: str
    model_id: str
    usage: dict | None
    failed: bool = False
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "mode": self.mode.value,
            "context_doc_ids": list(self.context_doc_ids),
            "answer_text": self.answer_text,
            "model_id": self.model_id,
            "usage": self.usage,
            "failed": self.failed,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnswerRecord":
        return cls(d["query_id"], Mode(d["mode"]), list(d["context_doc_ids"]), d["answer_text"],
                   d["model_id"], d.get("usage"), d.get("failed", False), d.get("error"))


def answer_query(
    gateway: Gateway,
    query_id: str,
    question: str,
    mode: Mode,
    current_date: dt.date,
    docs: Sequence[EvidenceDocument] = (),
) -> AnswerRecord:
    if mode is Mode.RAG:
        template, bindings = "qa_with_retrieval", rag_bindings(question, docs, current_date)
        ctx = [d.doc_id for d in docs]
    else:
        template, bindings = "qa_without_retrieval", closed_book_bindings(question, current_date)
        ctx = []
    try:
        call = gateway.complete(template, bindings, meta={"query_id": query_id, "mode": mode.value})
    except ProviderError as exc:
        return AnswerRecord(query_id, mode, ctx, "", gateway.model_id, None, True, str(exc))
    return AnswerRecord(query_id, mode, ctx, call.response_text.strip(), call.model_id, call.usage.to_dict())


# --- grading ---------------------------------------------------------------

def parse_judge_label(text: str) -> str | None:
    m = _JUDGE_RE.search(text.upper())
    if not m:
        return None
    return m.group(1).lower().replace(" ", "_")


@dataclass
class Grade:
    query_id: str
    per_judge: list[tuple[str, str | None]]
    combined: tuple[float, float, float] | None = field(default=None)

    def __post_init__(self) -> None:
        if self.combined is None:
            self.combined = combine_labels([lab for _, lab in self.per_judge])

    @property
    def graded(self) -> bool:
        return self.combined is not None

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "per_judge": [[j, lab] for j, lab in self.per_judge],
            "combined": list(self.combined) if self.combined is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Grade":
        combined = tuple(d["combined"]) if d.get("combined") is not None else None
        return cls(d["query_id"], [(j, lab) for j, lab in d["per_judge"]], combined)


def combine_labels(labels: Iterable[str | None]) -> tuple[float, float, float] | None:
    """Mean of one-hot label vectors over judges that produced a label."""
    usable = [lab for lab in labels if lab is not None]
    if not usable:
        return None
    n = len(usable)
    return tuple(sum(lab == name for lab in usable) / n for name in LABELS)  # type: ignore[return-value]


def judge_once(judge: Gateway, query_id: str, question: str, prediction: str, gold: str) -> str | None:
    bindings = {
        "ADD_QUESTION_HERE": question,
        "ADD_GOLD_TARGET_HERE": gold,
        "ADD_PREDICTED_ANSWER_HERE": prediction,
    }
    for attempt in (1, 2):
        try:
            call = judge.complete("judge", bindings, meta={"query_id": query_id, "attempt": attempt})
        except ProviderError:
            return None
        label = parse_judge_label(call.response_text)
        if label is not None:
            return label
    return None


def grade_answer(
    judges: Sequence[Gateway], query_id: str, question: str, prediction: str, gold: str
) -> Grade:
    per_judge = [(j.model_id, judge_once(j, query_id, question, prediction, gold)) for j in judges]
    return Grade(query_id, per_judge)


# --- retrieval conditioning and interplay ----------------------------------

def retrieval_correct(run: RetrievalRun, qrels: Mapping[str, Iterable[str]], query_id: str, k: int) -> bool:
    if query_id not in run.rankings:
        return False
    return all_relevant_retrieved(run.doc_ids(query_id), set(qrels[query_id]), k)


def internal_correct(closed_book: Grade) -> bool:
    return closed_book.combined is not None and closed_book.combined[0] >= INTERNAL_CORRECT_THRESHOLD


def interplay_classify(closed_book: Grade | bool, retrieval_ok: bool) -> Interplay:
    internal = closed_book if isinstance(closed_book, bool) else internal_correct(closed_book)
    if internal:
        return Interplay.REDUNDANT if retrieval_ok else Interplay.RESILIENCE
    return Interplay.AUGMENTATION if retrieval_ok else Interplay.HOPELESS


# --- aggregation -----------------------------------------------------------

def _rates(grades: list[Grade]) -> dict:
    n = len(grades)
    if n == 0:
        return {"correct": 0.0, "incorrect": 0.0, "not_attempted": 0.0, "count": 0}
    sums = [sum(g.combined[i] for g in grades) for i in range(3)]
    return {"correct": sums[0] / n, "incorrect": sums[1] / n, "not_attempted": sums[2] / n, "count": n}


@dataclass
class EvalReport:
    slices: dict[str, dict]
    retrieval_conditioned: dict[str, dict[str, dict]]
    interplay: dict[str, dict[str, dict]]
    failed_answers: list[str]
    ungraded: list[str]
    usage: dict

    def to_dict(self) -> dict:
        return {
            "slices": self.slices,
            "retrieval_conditioned": self.retrieval_conditioned,
            "interplay": self.interplay,
            "failed_answers": self.failed_answers,
            "ungraded": self.ungraded,
            "usage": self.usage,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_markdown(self) -> str:
        out = ["## Correctness by slice (%)", "", "| Slice | C | I | N | Count |", "|---|---:|---:|---:|---:|"]
        for name in ordered_slices(set(self.slices)):
            r = self.slices[name]
            out.append(f"| {name} | {100 * r['correct']:.1f} | {100 * r['incorrect']:.1f} | "
                       f"{100 * r['not_attempted']:.1f} | {r['count']} |")
        if self.retrieval_conditioned:
            out += ["", "## Retrieval-conditioned split (%)", "",
                    "| Premise | Retrieval | C | I | N | Count |", "|---|---|---:|---:|---:|---:|"]
            for premise, cells in self.retrieval_conditioned.items():
                for cond, r in cells.items():
                    out.append(f"| {premise} | {cond} | {100 * r['correct']:.1f} | {100 * r['incorrect']:.1f} | "
                               f"{100 * r['not_attempted']:.1f} | {r['count']} |")
        if self.interplay:
            out += ["", "## Interplay correctness (%)", "",
                    "| Premise | Redundant | Resilience | Augmentation | Hopeless |", "|---|---:|---:|---:|---:|"]
            for premise, cells in self.interplay.items():
                vals = " | ".join(
                    f"{100 * cells[c.value]['correct']:.1f} (n={cells[c.value]['count']})" for c in Interplay
                )
                out.append(f"| {premise} | {vals} |")
        out += ["", f"Failed answers: {len(self.failed_answers)}; ungraded: {len(self.ungraded)}"]
        return "\n".join(out) + "\n"


def aggregate_report(
    grades: Mapping[str, Grade],
    attributes: Mapping[str, SampleAttributes],
    *,
    retrieval_ok: Mapping[str, bool] | None = None,
    closed_book: Mapping[str, Grade] | None = None,
    failed: Iterable[str] = (),
    usage: dict | None = None,
) -> EvalReport:
    failed = sorted(set(failed))
    missing = sorted(set(attributes) - set(grades) - set(failed))
    if missing:
        raise KeyError(f"missing grades for queries: {missing}")
    ungraded = sorted(q for q, g in grades.items() if q in attributes and not g.graded)
    usable = {q: g for q, g in grades.items() if q in attributes and g.graded and q not in failed}

    members: dict[str, list[Grade]] = {}
    for q in sorted(usable):
        for name in [*slice_names(attributes[q]), "all"]:
            members.setdefault(name, []).append(usable[q])
    slices = {name: _rates(gs) for name, gs in members.items()}

    conditioned: dict[str, dict[str, dict]] = {}
    interplay: dict[str, dict[str, dict]] = {}
    if retrieval_ok is not None:
        for premise in ("valid_premise", "false_premise"):
            qs = [q for q in sorted(usable) if attributes[q].false_premise == (premise == "false_premise")]
            conditioned[premise] = {
                "retrieval_correct": _rates([usable[q] for q in qs if retrieval_ok.get(q, False)]),
                "retrieval_incorrect": _rates([usable[q] for q in qs if not retrieval_ok.get(q, False)]),
            }
            if closed_book is not None:
                cells: dict[str, list[Grade]] = {c.value: [] for c in Interplay}
                for q in qs:
                    cb = closed_book.get(q)
                    if cb is None or not cb.graded:
                        continue
                    cells[interplay_classify(cb, retrieval_ok.get(q, False)).value].append(usable[q])
                interplay[premise] = {c: _rates(gs) for c, gs in cells.items()}
    return EvalReport(slices, conditioned, interplay, failed, ungraded, usage or {})
