"""Typed triplets, knowledge graphs and masked graphs."""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from typing import Iterator

MASK_RE = re.compile(r"^<Unknown> #(\d+)$")


def mask_text(index: int) -> str:
    return f"<Unknown> #{index}"


def mask_token(index: int, node_type: str) -> str:
    return f"{mask_text(index)} [{node_type}]"


def is_mask(text: str) -> bool:
    return MASK_RE.match(text) is not None


@dataclass(frozen=True)
class Triplet:
    head: str
    head_type: str
    relation: str
    tail: str
    tail_type: str

    def __post_init__(self) -> None:
        for name in ("head", "head_type", "relation", "tail", "tail_type"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value.strip():
                raise ValueError(f"triplet field {name!r} must be non-empty text")

    def nodes(self) -> tuple[tuple[str, str], tuple[str, str]]:
        return (self.head, self.head_type), (self.tail, self.tail_type)

    def substitute(self, mapping: dict[str, str], *, casefold: bool = False) -> "Triplet":
        def sub(text: str) -> str:
            if casefold:
                for k, v in mapping.items():
                    if k.casefold() == text.casefold():
                        return v
                return text
            return mapping.get(text, text)

        return replace(self, head=sub(self.head), tail=sub(self.tail))

    def to_dict(self) -> dict:
        return {
            "head": self.head,
            "head_type": self.head_type,
            "relation": self.relation,
            "tail": self.tail,
            "tail_type": self.tail_type,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Triplet":
        return cls(d["head"], d["head_type"], d["relation"], d["tail"], d["tail_type"])


def iter_nodes(triplets: list[Triplet]) -> Iterator[tuple[str, str]]:
    """(text, type) of every node occurrence in triplet order, head before tail."""
    for t in triplets:
        yield t.head, t.head_type
        yield t.tail, t.tail_type


def distinct_nodes(triplets: list[Triplet]) -> list[str]:
    return list(dict.fromkeys(text for text, _ in iter_nodes(triplets)))


def distinct_heads(triplets: list[Triplet]) -> list[str]:
    return list(dict.fromkeys(t.head for t in triplets))


def node_type_of(triplets: list[Triplet], node: str) -> str:
    for text, ntype in iter_nodes(triplets):
        if text == node:
            return ntype
    raise KeyError(node)


@dataclass
class KnowledgeGraph:
    fact_id: str
    triplets: list[Triplet]
    coverage: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError("coverage must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {"fact_id": self.fact_id, "triplets": [t.to_dict() for t in self.triplets], "coverage": self.coverage}

    @classmethod
    def from_dict(cls, d: dict) -> "KnowledgeGraph":
        return cls(d["fact_id"], [Triplet.from_dict(t) for t in d["triplets"]], d["coverage"])


class Variant(str, enum.Enum):
    SINGLE_HOP = "single_hop"
    MULTI_HOP = "multi_hop"
    FALSE_PREMISE = "false_premise"


@dataclass(frozen=True)
class MaskedNode:
    text: str
    node_type: str
    mask_index: int

    def to_dict(self) -> dict:
        return {"text": self.text, "node_type": self.node_type, "mask_index": self.mask_index}


@dataclass
class MaskedGraph:
    variant: Variant
    fact_ids: list[str]
    triplets: list[Triplet]
    masked_nodes: list[MaskedNode]
    answer: str
    gold_doc_ids: list[str]
    keypoints: list[str]
    cohort_year: int | None = None
    paraphrase_map: dict[str, str] = field(default_factory=dict)
    perturbation_map: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        indices = [m.mask_index for m in self.masked_nodes]
        if indices.count(1) != 1:
            raise ValueError("exactly one masked node must carry mask index 1")
        if self.variant is Variant.MULTI_HOP and sorted(indices) != [1, 2]:
            raise ValueError("multi-hop graphs carry exactly masks #1 and #2")
        if self.variant is Variant.FALSE_PREMISE and not self.perturbation_map:
            raise ValueError("false-premise graphs need a perturbation")
        unmasked = set(self.unmasked_nodes())
        if not set(self.paraphrase_map) <= unmasked or not set(self.perturbation_map) <= unmasked:
            raise ValueError("only unmasked nodes may be paraphrased or perturbed")

    @property
    def hop_count(self) -> int:
        return len(self.masked_nodes)

    @property
    def target(self) -> MaskedNode:
        return next(m for m in self.masked_nodes if m.mask_index == 1)

    @property
    def fact_id(self) -> str:
        return self.fact_ids[0]

    def unmasked_nodes(self) -> list[str]:
        return [n for n in distinct_nodes(self.triplets) if not is_mask(n)]

    def unmask(self) -> list[Triplet]:
        mapping = {mask_text(m.mask_index): m.text for m in self.masked_nodes}
        return [t.substitute(mapping) for t in self.triplets]

    def surface(self, node: str) -> str:
        """Node text as shown in questions; perturbations win over paraphrases."""
        if node in self.perturbation_map:
            return self.perturbation_map[node]
        return self.paraphrase_map.get(node, node)

    def rendered_triplets(self) -> list[Triplet]:
        return [replace(t, head=self.surface(t.head), tail=self.surface(t.tail)) for t in self.triplets]

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "fact_ids": list(self.fact_ids),
            "triplets": [t.to_dict() for t in self.triplets],
            "masked_nodes": [m.to_dict() for m in self.masked_nodes],
            "answer": self.answer,
            "hop_count": self.hop_count,
            "gold_doc_ids": list(self.gold_doc_ids),
            "keypoints": list(self.keypoints),
            "cohort_year": self.cohort_year,
            "paraphrase_map": dict(self.paraphrase_map),
            "perturbation_map": dict(self.perturbation_map),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MaskedGraph":
        return cls(
            Variant(d["variant"]),
            list(d["fact_ids"]),
            [Triplet.from_dict(t) for t in d["triplets"]],
            [MaskedNode(**m) for m in d["masked_nodes"]],
            d["answer"],
            list(d["gold_doc_ids"]),
            list(d["keypoints"]),
            d.get("cohort_year"),
            dict(d.get("paraphrase_map", {})),
            dict(d.get("perturbation_map", {})),
        )
