"""nDCG with binary gains."""
from __future__ import annotations

import math
from typing import Collection, Sequence


def dcg(gains: Sequence[float]) -> float:
    return sum(g / math.log2(i + 2) for i, g in enumerate(gains))


def ndcg_at_k(ranking: Sequence[str], relevant: Collection[str], k: int) -> float:
    """DCG over the top k with rel in {0,1} and discount log2(i+1), over the ideal for min(|rel|, k)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = set(relevant)
    if not relevant:
        raise ValueError("relevant set must be non-empty")
    gains = [1.0 if d in relevant else 0.0 for d in list(ranking)[:k]]
    ideal = dcg([1.0] * min(len(relevant), k))
    return dcg(gains) / ideal


def all_relevant_retrieved(ranking: Sequence[str], relevant: Collection[str], k: int) -> bool:
    top = set(list(ranking)[:k])
    return bool(top) and set(relevant) <= top
