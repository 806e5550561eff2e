"""Attribute annotation, qrels, sampling, statistics and dataset serialization."""
from __future__ import annotations

import datetime as dt
import json
import random
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .evidence.documents import EvidenceDocument
from .facts import Fact
from .qgen.generation import QASample
from .qgen.graph import Variant
from .textutil import atomic_write_text, dumps_jsonl, read_jsonl, sha256_hex

SCHEMA_VERSION = 1
TOPIC_BUCKETS = ("Culture", "Geo", "History&Society", "STEM")
LANG_ENGLISH = "english"
LANG_CROSS = "cross"
DATASET_FILES = ("queries.jsonl", "qrels.tsv", "corpus.manifest.json", "config.snapshot.json", "stats.md")


class SchemaVersionError(ValueError):
    def __init__(self, found, expected: int):
        super().__init__(f"dataset schema version {found!r} is not supported (expected {expected})")
        self.found = found
        self.expected = expected


class DatasetLoadError(ValueError):
    pass


@dataclass(frozen=True)
class SampleAttributes:
    language: str
    freshness_year: int
    topics: tuple[str, ...]
    hops: int
    false_premise: bool

    def __post_init__(self) -> None:
        if self.language not in (LANG_ENGLISH, LANG_CROSS):
            raise ValueError(f"bad language attribute {self.language!r}")
        if not self.topics or not set(self.topics) <= set(TOPIC_BUCKETS):
            raise ValueError(f"bad topics {self.topics!r}")
        if self.hops not in (1, 2):
            raise ValueError("hops must be 1 or 2")

    def to_dict(self) -> dict:
        return {
            "language": self.language,
            "freshness_year": self.freshness_year,
            "topics": list(self.topics),
            "hops": self.hops,
            "false_premise": self.false_premise,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SampleAttributes":
        return cls(d["language"], int(d["freshness_year"]), tuple(d["topics"]), int(d["hops"]), bool(d["false_premise"]))


# --- topics ----------------------------------------------------------------

@lru_cache(maxsize=None)
def load_topic_table() -> tuple[str, dict[str, tuple[str, ...]]]:
    raw = json.loads(resources.files("irb_forge.data").joinpath("topic_keywords.json").read_text(encoding="utf-8"))
    return raw["default"], {k: tuple(v) for k, v in raw["buckets"].items()}


def map_topics(texts: Iterable[str]) -> tuple[str, ...]:
    """Multi-label keyword match of headers/categories onto the four buckets."""
    default, table = load_topic_table()
    blob = " ".join(texts).casefold()
    hits = {
        bucket
        for bucket, words in table.items()
        if any(re.search(rf"\b{re.escape(w.casefold())}s?\b", blob) for w in words)
    }
    return tuple(b for b in TOPIC_BUCKETS if b in hits) or (default,)


# --- attributes and qrels --------------------------------------------------

def annotate_attributes(
    sample: QASample, facts: Mapping[str, Fact], docs: Mapping[str, EvidenceDocument]
) -> SampleAttributes:
    gold = [docs[d] for d in sample.gold_doc_ids if d in docs]
    language = LANG_CROSS if any(d.language != "en" for d in gold) else LANG_ENGLISH
    years = [d.published.year for d in gold if d.published is not None]
    src_facts = [facts[f] for f in sample.fact_ids if f in facts]
    if years:
        freshness = max(years)
    elif sample.cohort_year is not None:
        freshness = sample.cohort_year
    else:
        freshness = max(int(f.source["cohort_year"]) for f in src_facts)
    texts: list[str] = []
    for f in src_facts:
        texts.extend(f.topic_headers)
        texts.extend(f.source.get("categories", []))
    hops = 2 if sample.variant is Variant.MULTI_HOP else 1
    return SampleAttributes(language, freshness, map_topics(texts), hops, sample.variant is Variant.FALSE_PREMISE)


def build_qrels(
    samples: Iterable[QASample], facts: Mapping[str, Fact], corpus_doc_ids: set[str] | None = None
) -> tuple[dict[str, list[str]], list[str]]:
    """Relevant docs = union of the supporting docs of the sample's facts; empty sets are dropped."""
    qrels: dict[str, list[str]] = {}
    dropped: list[str] = []
    for s in samples:
        rel = {d for fid in s.fact_ids for d in facts[fid].supporting_doc_ids}
        if corpus_doc_ids is not None:
            missing = rel - corpus_doc_ids
            if missing:
                raise ValueError(f"qrels for {s.sample_id} reference unknown docs {sorted(missing)}")
        if rel:
            qrels[s.sample_id] = sorted(rel)
        else:
            dropped.append(s.sample_id)
    return qrels, dropped


def sample_ids(pool_ids: Iterable[str], n: int, seed: int) -> list[str]:
    ids = sorted(set(pool_ids))
    if n > len(ids):
        raise ValueError(f"cannot sample {n} from a pool of {len(ids)}")
    if n < 0:
        raise ValueError("n must be non-negative")
    return sorted(random.Random(seed).sample(ids, n))


# --- statistics ------------------------------------------------------------

def stats_rows(queries: list[QASample]) -> list[tuple[str, str, int, float]]:
    """(group, label, count, percentage of all queries) in the benchmark statistics row scheme."""
    total = len(queries)
    attrs = [SampleAttributes.from_dict(q.attributes) for q in queries]
    valid = [a for a in attrs if not a.false_premise]

    def pct(count: int) -> float:
        return round(100.0 * count / total, 1) if total else 0.0

    rows: list[tuple[str, str, int, float]] = []
    for label, lang in (("English", LANG_ENGLISH), ("Cross", LANG_CROSS)):
        c = sum(a.language == lang for a in valid)
        rows.append(("Language", label, c, pct(c)))
    for year in sorted({a.freshness_year for a in valid}):
        c = sum(a.freshness_year == year for a in valid)
        rows.append(("Freshness", str(year), c, pct(c)))
    for bucket in TOPIC_BUCKETS:
        c = sum(bucket in a.topics for a in valid)
        rows.append(("Topics", bucket, c, pct(c)))
    for label, hops in (("Single", 1), ("Multi", 2)):
        c = sum(a.hops == hops for a in valid)
        rows.append(("# Hops", label, c, pct(c)))
    c = sum(a.false_premise for a in attrs)
    rows.append(("False-premise", "", c, pct(c)))
    return rows


def stats_markdown(queries: list[QASample]) -> str:
    lines = [
        f"Total queries: {len(queries)}",
        "",
        "| Premise | Attribute | Value | Count | Percentage |",
        "|---|---|---|---:|---:|",
    ]
    for group, label, count, pct in stats_rows(queries):
        premise = "False-premise" if group == "False-premise" else "Valid-premise"
        attr = "" if group == "False-premise" else group
        lines.append(f"| {premise} | {attr} | {label} | {count} | {pct:.1f} |")
    return "\n".join(lines) + "\n"


def parse_stats_markdown(text: str) -> list[tuple[str, str, int, float]]:
    rows = []
    for line in text.splitlines():
        if not line.startswith("| ") or line.startswith("| Premise") or line.startswith("|---"):
            continue
        premise, attr, label, count, pct = [c.strip() for c in line.strip("|").split("|")]
        group = "False-premise" if premise == "False-premise" else attr
        rows.append((group, label, int(count), float(pct)))
    return rows


# --- dataset ---------------------------------------------------------------

@dataclass
class BenchmarkDataset:
    queries: list[QASample]
    qrels: dict[str, list[str]]
    corpus_manifest: dict
    reference_date: dt.date
    config_snapshot: str
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        ids = [q.sample_id for q in self.queries]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate sample ids")
        if set(ids) != set(self.qrels):
            raise ValueError("qrels keys must equal query ids")
        if any(not v for v in self.qrels.values()):
            raise ValueError("every query needs at least one relevant document")
        if any(q.attributes is None for q in self.queries):
            raise ValueError("every query needs attributes")
        self.queries = sorted(self.queries, key=lambda q: q.sample_id)


def assemble_dataset(
    pool: list[QASample],
    facts: Mapping[str, Fact],
    docs: Mapping[str, EvidenceDocument],
    *,
    n: int | None,
    seed: int,
    reference_date: dt.date,
    corpus_manifest: dict,
    config_snapshot: str,
) -> tuple[BenchmarkDataset, list[str]]:
    corpus_ids = set(corpus_manifest.get("doc_ids", [])) or None
    qrels, dropped = build_qrels(pool, facts, corpus_ids)
    kept = [s for s in pool if s.sample_id in qrels]
    for s in kept:
        s.attributes = annotate_attributes(s, facts, docs).to_dict()
    chosen = set(sample_ids([s.sample_id for s in kept], len(kept) if n is None else n, seed))
    queries = [s for s in kept if s.sample_id in chosen]
    dataset = BenchmarkDataset(
        queries,
        {k: v for k, v in qrels.items() if k in chosen},
        corpus_manifest,
        reference_date,
        config_snapshot,
    )
    return dataset, dropped


def _query_record(q: QASample) -> dict:
    rec = q.to_dict()
    rec["id"] = rec.pop("sample_id")
    return rec


def save_dataset(dataset: BenchmarkDataset, out_dir: str | Path) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payloads = {
        "queries.jsonl": dumps_jsonl(_query_record(q) for q in dataset.queries),
        "qrels.tsv": "".join(
            f"{qid}\t{doc}\t1\n" for qid in sorted(dataset.qrels) for doc in dataset.qrels[qid]
        ),
        "corpus.manifest.json": json.dumps(dataset.corpus_manifest, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        "config.snapshot.json": dataset.config_snapshot,
        "stats.md": stats_markdown(dataset.queries),
    }
    for name, text in payloads.items():
        atomic_write_text(out / name, text)
    manifest = {
        "schema_version": dataset.schema_version,
        "reference_date": dataset.reference_date.isoformat(),
        "num_queries": len(dataset.queries),
        "files": {name: sha256_hex(text) for name, text in payloads.items()},
    }
    atomic_write_text(out / "dataset.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_dataset(in_dir: str | Path) -> BenchmarkDataset:
    root = Path(in_dir)
    try:
        manifest = json.loads((root / "dataset.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetLoadError(f"unreadable dataset manifest: {exc}") from exc
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(version, SCHEMA_VERSION)
    texts: dict[str, str] = {}
    for name in DATASET_FILES:
        try:
            text = (root / name).read_text(encoding="utf-8")
        except OSError as exc:
            raise DatasetLoadError(f"missing dataset file {name}") from exc
        if sha256_hex(text) != manifest["files"].get(name):
            raise DatasetLoadError(f"checksum mismatch for {name} (truncated or modified)")
        texts[name] = text
    queries = []
    for rec in read_jsonl(root / "queries.jsonl"):
        rec["sample_id"] = rec.pop("id")
        queries.append(QASample.from_dict(rec))
    qrels: dict[str, list[str]] = {}
    for line in texts["qrels.tsv"].splitlines():
        qid, doc, _ = line.split("\t")
        qrels.setdefault(qid, []).append(doc)
    return BenchmarkDataset(
        queries,
        qrels,
        json.loads(texts["corpus.manifest.json"]),
        dt.date.fromisoformat(manifest["reference_date"]),
        texts["config.snapshot.json"],
        version,
    )


def attributes_by_query(dataset: BenchmarkDataset) -> dict[str, SampleAttributes]:
    return {q.sample_id: SampleAttributes.from_dict(q.attributes) for q in dataset.queries}
