"""Retrieval runs, TREC run files and attribute-sliced scoring."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from ..bench import TOPIC_BUCKETS, SampleAttributes
from ..textutil import atomic_write_text
from .metrics import ndcg_at_k

DEFAULT_K = 5


@dataclass
class RetrievalRun:
    retriever_id: str
    k_eval: int
    rankings: dict[str, list[tuple[str, float]]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for qid, ranking in self.rankings.items():
            check_ranking(qid, ranking)

    def doc_ids(self, qid: str) -> list[str]:
        return [d for d, _ in self.rankings[qid]]

    def to_trec(self) -> str:
        lines = []
        for qid in sorted(self.rankings):
            for rank, (doc, score) in enumerate(self.rankings[qid], 1):
                lines.append(f"{qid} Q0 {doc} {rank} {score!r} {self.retriever_id}")
        return "\n".join(lines) + ("\n" if lines else "")

    def save(self, path: str | Path) -> None:
        atomic_write_text(Path(path), self.to_trec())

    @classmethod
    def from_trec(cls, text: str, k_eval: int = DEFAULT_K) -> "RetrievalRun":
        rows: dict[str, list[tuple[int, str, float]]] = {}
        tag = ""
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ValueError(f"line {n}: expected 6 TREC columns, got {len(parts)}")
            qid, _, doc, rank, score, tag = parts
            rows.setdefault(qid, []).append((int(rank), doc, float(score)))
        rankings = {q: [(d, s) for _, d, s in sorted(r)] for q, r in rows.items()}
        return cls(tag, k_eval, rankings)

    @classmethod
    def load(cls, path: str | Path, k_eval: int = DEFAULT_K) -> "RetrievalRun":
        return cls.from_trec(Path(path).read_text(encoding="utf-8"), k_eval)


def normalize_ranking(ranking: list[tuple[str, float]]) -> list[tuple[str, float]]:
    """Deduplicate (keeping each doc's best score) and order by score, then doc_id."""
    best: dict[str, float] = {}
    for doc, score in ranking:
        if doc not in best or score > best[doc]:
            best[doc] = score
    return sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))


def check_ranking(qid: str, ranking: list[tuple[str, float]]) -> None:
    docs = [d for d, _ in ranking]
    if len(docs) != len(set(docs)):
        raise ValueError(f"duplicate doc ids in ranking for {qid}")
    for (d1, s1), (d2, s2) in zip(ranking, ranking[1:]):
        if s1 < s2 or (s1 == s2 and d1 > d2):
            raise ValueError(f"ranking for {qid} is not score-descending with doc_id tie-break")


def slice_names(attrs: SampleAttributes) -> list[str]:
    """Slices a query belongs to; false-premise queries sit only in their own column."""
    if attrs.false_premise:
        return ["false_premise"]
    names = [
        "valid_premise",
        f"language:{attrs.language}",
        f"freshness:{attrs.freshness_year}",
        *(f"topic:{t}" for t in attrs.topics),
        "hops:single" if attrs.hops == 1 else "hops:multi",
    ]
    return names


def ordered_slices(present: set[str]) -> list[str]:
    order = ["language:english", "language:cross"]
    order += sorted(s for s in present if s.startswith("freshness:"))
    order += [f"topic:{t}" for t in TOPIC_BUCKETS]
    order += ["hops:single", "hops:multi", "valid_premise", "false_premise", "all"]
    return [s for s in order if s in present]


@dataclass
class ScoredSlices:
    k: int
    values: dict[str, float]
    counts: dict[str, int]
    per_query: dict[str, float]

    def to_dict(self) -> dict:
        return {"k": self.k, "values": self.values, "counts": self.counts, "per_query": self.per_query}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_markdown(self, label: str = "run") -> str:
        cols = [s for s in ordered_slices(set(self.values)) if s not in ("valid_premise", "all")]
        header = "| Retriever | " + " | ".join(_pretty(c) for c in cols) + " |"
        sep = "|---|" + "---:|" * len(cols)
        row = f"| {label} | " + " | ".join(f"{100 * self.values[c]:.1f}" for c in cols) + " |"
        return f"nDCG@{self.k}\n\n{header}\n{sep}\n{row}\n"


def _pretty(name: str) -> str:
    if name == "false_premise":
        return "False-premise"
    kind, _, value = name.partition(":")
    if kind == "language":
        return value.capitalize()
    if kind == "hops":
        return value.capitalize()
    if value == "History&Society":
        return "H & S"
    return value


def score_run(
    run: RetrievalRun,
    qrels: Mapping[str, list[str]],
    attributes: Mapping[str, SampleAttributes],
    k: int | None = None,
) -> ScoredSlices:
    k = k or run.k_eval
    missing = sorted(set(qrels) - set(run.rankings))
    if missing:
        raise KeyError(f"queries missing from run: {missing}")
    per_query = {q: ndcg_at_k(run.doc_ids(q), qrels[q], k) for q in sorted(qrels)}
    members: dict[str, list[float]] = {}
    for q, value in per_query.items():
        for name in [*slice_names(attributes[q]), "all"]:
            members.setdefault(name, []).append(value)
    values = {name: sum(v) / len(v) for name, v in members.items()}
    counts = {name: len(v) for name, v in members.items()}
    return ScoredSlices(k, values, counts, per_query)
