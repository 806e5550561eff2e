"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""
from __future__ import annotations

import datetime as dt
import hashlib
import json
import math
import random
import re
import time
from importlib import resources
from pathlib import Path

import pytest

from irb_forge.bench import SampleAttributes, parse_stats_markdown
from irb_forge.cli import main as cli_main
from irb_forge.evalgen import Grade, Interplay, aggregate_report, grade_answer, interplay_classify
from irb_forge.evidence import chunk_text
from irb_forge.llm import Gateway, MockProvider
from irb_forge.llm.mock import FixtureEntry
from irb_forge.qgen import (
    CapitalizationTagger,
    MaskedGraph,
    Triplet,
    extract_kg,
    mask_single_hop,
    merge_multi_hop,
    relative_date,
    select_maskable_node,
)
from irb_forge.qgen.graph import distinct_heads, distinct_nodes
from irb_forge.qgen.transforms import (
    abbreviate_person,
    country_flag_phrase,
    perturb_country,
    perturb_person,
    perturb_quantity,
    perturb_relative_date,
    verbalize_quantity,
)
from irb_forge.retrieval import BM25Index, ndcg_at_k
from irb_forge.textutil import tokenize


@pytest.fixture
def verdict(capsys):
    """Print one line per criterion to the real terminal, then assert."""

    def emit(number: int, ok: bool, text: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}: {text}")
        assert ok, text

    return emit


# --- 1. transformation rules -------------------------------------------------

def test_c01_transformation_examples(verdict):
    ref = dt.date(2025, 9, 29)
    t0 = time.perf_counter()
    cases = [
        (abbreviate_person("Cristiano Ronaldo"), "C. Ronaldo"),
        (relative_date(dt.date(2024, 11, 30), ref), "9 months ago"),
        (country_flag_phrase("Japan"), "the country whose flag is \U0001F1EF\U0001F1F5"),
        (verbalize_quantity("1.5"), "one point five"),
        (perturb_person("Cristiano Ronaldo", "Smith"), "C. Smith"),
        (perturb_relative_date(dt.date(2024, 11, 30), ref, 15), "2 years ago"),
        (perturb_country("Japan", "Vietnam"), "Vietnam"),
        (perturb_quantity("1.5", 1.87), "2.8"),
    ]
    # The wrong relative date is wrong: it differs from the true interval.
    wrong = perturb_relative_date(dt.date(2024, 11, 30), ref, 7)
    elapsed = time.perf_counter() - t0
    hits = sum(got == want for got, want in cases)
    ok = hits == 8 and wrong == "1 year 4 months ago" and wrong != cases[1][0] and elapsed < 1.0
    verdict(1, ok, f"{hits}/8 table examples exact, date perturbation {wrong!r}, {elapsed * 1000:.1f} ms (< 1 s)")


# --- 2. nDCG oracle ------------------------------------------------------------

def _ndcg_oracle(ranking: list[str], relevant: set[str], k: int) -> float:
    dcg = 0.0
    for pos in range(1, min(k, len(ranking)) + 1):
        if ranking[pos - 1] in relevant:
            dcg += 1.0 / math.log2(pos + 1)
    idcg = sum(1.0 / math.log2(pos + 1) for pos in range(1, min(k, len(relevant)) + 1))
    return dcg / idcg


def test_c02_ndcg_oracle(verdict):
    rng = random.Random(2)
    worst = 0.0
    for _ in range(200):
        pool = [f"d{i}" for i in range(rng.randint(1, 30))]
        relevant = set(rng.sample(pool, rng.randint(1, len(pool))))
        ranking = rng.sample(pool + [f"x{i}" for i in range(5)], rng.randint(0, len(pool) + 5))
        k = rng.randint(1, 20)
        worst = max(worst, abs(ndcg_at_k(ranking, relevant, k) - _ndcg_oracle(ranking, relevant, k)))
    hand = ndcg_at_k(["d1", "d3", "d2"], {"d1", "d2"}, 3)
    ok = worst <= 1e-9 and abs(hand - 0.9197) <= 1e-4
    verdict(2, ok, f"200 random instances max |delta| = {worst:.2e} (<= 1e-9); hand case = {hand:.6f} (0.9197 +- 1e-4)")


# --- 3. BM25 -------------------------------------------------------------------

BM25_DOCS = {
    "d1": "the cat sat on the mat",
    "d2": "the dog sat",
    "d3": "cat and dog",
    "d4": "a bird in the sky",
    "d5": "the cat the cat the cat",
}


def test_c03_bm25_hand_computed(verdict):
    # Hand-tabulated statistics for the query "cat sat".
    n_docs, avgdl, k1, b = 5, 23 / 5, 1.2, 0.75
    lengths = {"d1": 6, "d2": 3, "d3": 3, "d4": 5, "d5": 6}
    tf = {"cat": {"d1": 1, "d3": 1, "d5": 3}, "sat": {"d1": 1, "d2": 1}}
    df = {"cat": 3, "sat": 2}
    expected = {}
    for doc, dl in lengths.items():
        score = 0.0
        for term in ("cat", "sat"):
            f = tf[term].get(doc, 0)
            idf = math.log(1 + (n_docs - df[term] + 0.5) / (df[term] + 0.5))
            score += idf * f * (k1 + 1) / (f + k1 * (1 - b + b * dl / avgdl))
        expected[doc] = score
    chunks = [c for doc, text in BM25_DOCS.items() for c in chunk_text(doc, text)]
    index = BM25Index.build(chunks, k1=k1, b=b)
    hits = index.search("cat sat", top_m=10)
    got = {doc: score for _, doc, score in hits}
    worst = max(abs(got.get(d, 0.0) - s) for d, s in expected.items())
    want_order = [d for d, s in sorted(expected.items(), key=lambda kv: (-kv[1], kv[0])) if s > 0]
    got_order = [doc for _, doc, _ in hits]
    ok = worst <= 1e-6 and got_order == want_order
    verdict(3, ok, f"5-doc Okapi max |delta| = {worst:.2e} (<= 1e-6); order {got_order} vs {want_order}")


# --- 4. masking criteria ---------------------------------------------------------

NAMES = ["Ada Lovelace", "Bender", "Transnistria", "Gazprom", "Kyoto", "Nile River", "Marie Curie",
         "Lake Baikal", "Tesla Motors", "Oslo", "Rio de Janeiro", "Hamlet", "Mount Fuji", "Vienna"]
COMMONS = ["a small town", "the river", "many engineers", "an old bridge", "winter", "a new law"]
CONJUNCTIONS = ["Tom and Jerry", "Simon & Garfunkel", "Smith et al"]
RELATIONS = ["founded", "visited", "is located in", "wrote about", "was born in", "praised"]


def _random_graph(rng: random.Random) -> tuple[list[Triplet], list[str], dict[str, dict]]:
    """Triplets, keypoints and per-node ground truth known by construction."""
    truth: dict[str, dict] = {}
    picks = rng.sample(NAMES, rng.randint(2, 5))
    nodes = list(picks)
    for n in picks:
        truth[n] = {"entity": True, "atomic": True}
    for c in rng.sample(COMMONS, rng.randint(0, 2)):
        nodes.append(c)
        truth[c] = {"entity": False, "atomic": True}
    if rng.random() < 0.3:
        c = rng.choice(CONJUNCTIONS)
        nodes.append(c)
        truth[c] = {"entity": True, "atomic": False}
    if rng.random() < 0.4:
        base = rng.choice(picks)
        longer = f"{base} Museum"
        nodes.append(longer)
        truth[longer] = {"entity": True, "atomic": True}
    triplets: list[Triplet] = []
    for _ in range(rng.randint(1, 6)):
        h, t = rng.sample(nodes, 2)
        trip = Triplet(h, "Thing", rng.choice(RELATIONS), t, "Thing")
        if trip not in triplets:
            triplets.append(trip)
    used = distinct_nodes(triplets)
    kps = []
    for _ in range(rng.randint(1, 3)):
        chosen = [n for n in used if rng.random() < 0.7]
        kps.append(" ".join(chosen) + " appear in this keypoint.")
    return triplets, kps, truth


def _oracle_passes(node: str, triplets: list[Triplet], keypoints: list[str], truth: dict) -> bool:
    if not truth[node]["entity"] or not truth[node]["atomic"]:
        return False
    if not all(node.lower() in kp.lower() for kp in keypoints):
        return False
    words = node.lower().split()
    for other in distinct_nodes(triplets):
        ow = other.lower().split()
        if other != node and any(ow[i:i + len(words)] == words for i in range(len(ow) - len(words) + 1)):
            return False
    for rel in {t.relation for t in triplets}:
        members = [t for t in triplets if t.relation == rel]
        heads, tails = {t.head for t in members}, {t.tail for t in members}
        if node in heads and len(heads) > 1:
            return False
        if node in tails and len(tails) > 1:
            return False
    return True


def test_c04_masking_criteria(verdict):
    rng = random.Random(4)
    tagger = CapitalizationTagger()
    bad = 0
    selected = 0
    for _ in range(500):
        triplets, kps, truth = _random_graph(rng)
        picked = select_maskable_node(triplets, kps, tagger)
        heads = distinct_heads(triplets)
        passing = [h for h in heads if _oracle_passes(h, triplets, kps, truth)]
        if picked is None:
            bad += bool(passing)
            continue
        selected += 1
        node = picked[0]
        if not _oracle_passes(node, triplets, kps, truth) or (passing and passing[0] != node):
            bad += 1
    ok = bad == 0 and selected > 100
    verdict(4, ok, f"500 graphs, {selected} with a selection, {bad} disagreements with the exhaustive checker")


# --- 5. multi-hop merge ------------------------------------------------------------

def test_c05_multi_hop_merge(verdict):
    rng = random.Random(5)
    failures = 0
    for i in range(100):
        a1, bridge, extra1, extra2 = rng.sample(NAMES, 4)
        r1, r2, r3 = rng.sample(RELATIONS, 3)
        kg1_trips = [Triplet(a1, "Thing", r1, bridge, "Place"), Triplet(a1, "Thing", r2, extra1, "Thing")]
        kg2_trips = [Triplet(bridge, "Place", r3, extra2, "Thing")]
        kg1 = mask_single_hop(kg1_trips, a1, fact_id=f"f{i}a", gold_doc_ids=["x", f"a{i}"], keypoints=["k1"])
        kg2 = mask_single_hop(kg2_trips, bridge, fact_id=f"f{i}b", gold_doc_ids=["x", f"b{i}"], keypoints=["k2"])
        merged = merge_multi_hop(kg1, kg2)
        if merged is None:
            failures += 1
            continue
        union = set(kg1_trips) | set(kg2_trips)
        no_leak = all(bridge.casefold() != n.casefold() for n in merged.unmasked_nodes())
        ok = (
            set(merged.unmask()) == union
            and len(merged.triplets) == len(union)
            and merged.answer == a1
            and no_leak
            and merged.gold_doc_ids == sorted({"x", f"a{i}", f"b{i}"})
        )
        failures += not ok
    verdict(5, failures == 0, f"100 constructed pairs, {failures} violating union/answer/no-leak/qrels-union")


# --- 6. KG prompt examples -----------------------------------------------------------

EXAMPLE_1 = [
    ("Cristiano Ronaldo", "Person", "made his debut at", "La Liga", "Tournament"),
    ("Cristiano Ronaldo", "Person", "made his debut against", "Deportivo La Coruna", "Soccer team"),
    ("Cristiano Ronaldo", "Person", "made his debut on", "29 August", "Date"),
    ("Cristiano Ronaldo", "Person", "scored a penalty in", "A 3-2 home win", "Event"),
]
EXAMPLE_2 = [
    ("The idea of using computers to search for relevant pieces of information", "Scientific idea",
     "was popularized in", "As We May Think", "Article"),
    ("As We May Think", "Article", "was authored by", "Vannevar Bush", "Person"),
    ("As We May Think", "Article", "was authored in", "1945", "Year"),
]


def _prompt_examples() -> list[tuple[str, str]]:
    body = resources.files("irb_forge.prompts").joinpath("kg_extraction.txt").read_text(encoding="utf-8")
    pattern = re.compile(r"Example \d:\nText: ```(.*?)```\nKnowledge Graph:\s*\n```json\n(.*?)\n```", re.S)
    return pattern.findall(body)[:2]


def test_c06_kg_prompt_examples(verdict):
    examples = _prompt_examples()
    fixtures = [
        FixtureEntry("kg_extraction", response, match={"ADD_KEYPOINTS_HERE": text})
        for text, response in examples
    ]
    gw = Gateway(MockProvider(fixtures), "mock")
    got = [
        [tuple(t.to_dict().values()) for t in extract_kg(gw, f"ex{i}", [text]).triplets]
        for i, (text, _) in enumerate(examples)
    ]
    ok = len(examples) == 2 and got == [EXAMPLE_1, EXAMPLE_2]
    verdict(6, ok, f"examples replayed: {len(examples)}; triplet lists exact: {got == [EXAMPLE_1, EXAMPLE_2]}")


# --- 7. golden run ---------------------------------------------------------------------

class SimulatedCrash(Exception):
    pass


def _crashing_factory(after: int, base: Path):
    state = {"calls": 0}

    def factory(role, cfg):
        provider = MockProvider.from_file(base / cfg.fixtures)

        class Crashing:
            def send(self, request):
                state["calls"] += 1
                if state["calls"] > after:
                    raise SimulatedCrash(f"killed after {after} calls")
                return provider.send(request)

        return Crashing()

    return factory


def _tree_digest(work: Path) -> dict[str, str]:
    out = {}
    for sub in ("benchmark", "eval"):
        for p in sorted((work / sub).rglob("*")):
            if p.is_file():
                out[str(p.relative_to(work))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def test_c07_golden_run(verdict, demo_dir, tmp_path):
    cfg = str(demo_dir / "config.yaml")
    t0 = time.perf_counter()
    rc1 = cli_main(["run", "--config", cfg, "--work-dir", str(tmp_path / "w1"), "--log-level", "error"])
    elapsed = time.perf_counter() - t0
    rc2 = cli_main(["run", "--config", cfg, "--work-dir", str(tmp_path / "w2"), "--log-level", "error"])
    d1, d2 = _tree_digest(tmp_path / "w1"), _tree_digest(tmp_path / "w2")

    resumed_ok = True
    for i, after in enumerate((3, 17, 40)):
        work = str(tmp_path / f"crash{i}")
        rc_crash = cli_main(["run", "--config", cfg, "--work-dir", work, "--log-level", "error"],
                            provider_factory=_crashing_factory(after, demo_dir))
        rc_resume = cli_main(["run", "--config", cfg, "--work-dir", work, "--log-level", "error"])
        resumed_ok &= rc_crash == 1 and rc_resume == 0 and _tree_digest(Path(work)) == d1

    variants = [json.loads(line)["variant"] for line in (tmp_path / "w1/benchmark/queries.jsonl").open()]
    has_all = all(v in variants for v in ("single_hop", "multi_hop", "false_premise"))
    report = (tmp_path / "w1/eval/report.json").exists()
    ok = rc1 == 0 and rc2 == 0 and d1 == d2 and resumed_ok and has_all and report and elapsed < 10
    verdict(7, ok, (
        f"variants {sorted(set(variants))}, {len(d1)} output files byte-identical across runs: {d1 == d2}, "
        f"identical after 3 interrupt/resume cycles: {resumed_ok}, run time {elapsed:.2f} s (< 10 s)"
    ))


# --- 8. chunking ------------------------------------------------------------------------

def test_c08_chunking_reconstruction(verdict):
    rng = random.Random(8)
    alphabet = ["word", "Zürich", "naïve", "42", "3.14", ",", ".", "—", "(", ")", "东京", "e-mail", "don't"]
    bad = 0
    for i in range(1000):
        n = rng.choice([0, 1, 5, 511, 512, 513, rng.randint(1, 2000)])
        text = "".join(rng.choice(alphabet) + rng.choice([" ", "", "\n", "  "]) for _ in range(n))
        chunks = chunk_text(f"doc{i}", text)
        stream = [tok for c in chunks for tok in tokenize(c.text)]
        if stream != tokenize(text) or any(len(tokenize(c.text)) > 512 or c.token_count > 512 for c in chunks):
            bad += 1
    verdict(8, bad == 0, f"1000 synthetic documents, {bad} failing reconstruction or the 512-token bound")


# --- 9. grading aggregation ---------------------------------------------------------------

# (qid, language, year, topics, hops, false_premise, prediction, gold, judge A, judge B); None = rubric rule
GRADING_FIXTURE = [
    ("q01", "english", 2025, ("Geo",), 1, False, "Bender", "Bender", "CORRECT", "CORRECT"),
    ("q02", "english", 2024, ("Culture",), 1, False, "Hamlet", "Hamlet", "CORRECT", "INCORRECT"),
    ("q03", "cross", 2025, ("STEM",), 1, False, "Oslo", "Kyoto", "INCORRECT", "INCORRECT"),
    ("q04", "english", 2025, ("History&Society", "Geo"), 2, False, "I don't know", "Gazprom",
     "NOT_ATTEMPTED", "NOT_ATTEMPTED"),
    ("q05", "cross", 2024, ("Geo",), 2, False, "maybe Vienna", "Vienna", "CORRECT", "NOT_ATTEMPTED"),
    ("q06", "english", 2025, ("STEM",), 1, False, "Marie Curie", "Marie Curie", "CORRECT", "CORRECT"),
    ("q07", "english", 2025, ("Geo",), 1, True, "I don't know", "False premise question", None, None),
    ("q08", "cross", 2024, ("Culture",), 1, True, "That is a false premise.", "False premise question", None, None),
    ("q09", "english", 2024, ("History&Society",), 1, True, "Kyoto", "False premise question",
     "CORRECT", "INCORRECT"),
    ("q10", "english", 2025, ("Geo",), 2, False, "Nile", "Nile River", "INCORRECT", "CORRECT"),
]

# Hand-computed (correct, incorrect, not_attempted) per slice.
GRADING_EXPECTED = {
    "all": (5.0 / 10, 2.5 / 10, 2.5 / 10),
    "valid_premise": (3.5 / 7, 2.0 / 7, 1.5 / 7),
    "false_premise": (1.5 / 3, 0.5 / 3, 1.0 / 3),
    "language:english": (3.0 / 5, 1.0 / 5, 1.0 / 5),
    "language:cross": (0.5 / 2, 1.0 / 2, 0.5 / 2),
    "freshness:2024": (1.0 / 2, 0.5 / 2, 0.5 / 2),
    "freshness:2025": (2.5 / 5, 1.5 / 5, 1.0 / 5),
    "topic:Geo": (2.0 / 4, 0.5 / 4, 1.5 / 4),
    "topic:Culture": (0.5, 0.5, 0.0),
    "topic:STEM": (0.5, 0.5, 0.0),
    "topic:History&Society": (0.0, 0.0, 1.0),
    "hops:single": (2.5 / 4, 1.5 / 4, 0.0),
    "hops:multi": (1.0 / 3, 0.5 / 3, 1.5 / 3),
}


def test_c09_grading_aggregation(verdict):
    judges = []
    for j in (8, 9):
        fixtures = [
            FixtureEntry("judge", row[j], match={"ADD_QUESTION_HERE": f"question {row[0]}"})
            for row in GRADING_FIXTURE if row[j] is not None
        ]
        judges.append(Gateway(MockProvider(fixtures), f"judge-{j}"))
    grades, attrs = {}, {}
    for qid, lang, year, topics, hops, fp, pred, gold, _, _ in GRADING_FIXTURE:
        grades[qid] = grade_answer(judges, qid, f"question {qid}", pred, gold)
        attrs[qid] = SampleAttributes(lang, year, topics, hops, fp)
    report = aggregate_report(grades, attrs)
    mismatches = [
        name for name, want in GRADING_EXPECTED.items()
        if (report.slices[name]["correct"], report.slices[name]["incorrect"], report.slices[name]["not_attempted"])
        != want
    ]
    split = grades["q02"].combined == (0.5, 0.5, 0.0)
    rubric = grades["q07"].per_judge == [("judge-8", "not_attempted"), ("judge-9", "not_attempted")]
    ok = not mismatches and split and rubric and set(report.slices) == set(GRADING_EXPECTED)
    verdict(9, ok, (
        f"{len(GRADING_EXPECTED) - len(mismatches)}/{len(GRADING_EXPECTED)} slices exact; "
        f"split judges -> (0.5, 0.5, 0): {split}; false-premise + \"I don't know\" -> NOT_ATTEMPTED: {rubric}"
    ))


# --- 10. interplay -----------------------------------------------------------------------

def test_c10_interplay_cells(verdict):
    correct = Grade("q", [("a", "correct"), ("b", "correct")])
    wrong = Grade("q", [("a", "not_attempted"), ("b", "incorrect")])
    got = {
        (True, True): interplay_classify(correct, True),
        (True, False): interplay_classify(correct, False),
        (False, True): interplay_classify(wrong, True),
        (False, False): interplay_classify(wrong, False),
    }
    want = {
        (True, True): Interplay.REDUNDANT,
        (True, False): Interplay.RESILIENCE,
        (False, True): Interplay.AUGMENTATION,
        (False, False): Interplay.HOPELESS,
    }
    verdict(10, got == want, f"(internal, retrieval) -> cell: {sum(got[k] == want[k] for k in want)}/4 as defined")


# --- 11. relative dates ----------------------------------------------------------------------

def _months_oracle(d: dt.date, ref: dt.date) -> int:
    """Largest n with (month index of d + n, day of d) <= (month index of ref, day of ref)."""
    start, end = d.year * 12 + d.month - 1, ref.year * 12 + ref.month - 1
    n = 0
    while (start + n + 1, d.day) <= (end, ref.day):
        n += 1
    return n


def _phrase_oracle(d: dt.date, ref: dt.date) -> str:
    if d == ref:
        return "today"
    n = _months_oracle(d, ref)
    if n == 0:
        return "less than a month ago"
    years, months = n // 12, n % 12
    parts = []
    if years:
        parts.append(f"{years} year" + ("s" if years > 1 else ""))
    if months:
        parts.append(f"{months} month" + ("s" if months > 1 else ""))
    return " ".join(parts) + " ago"


def test_c11_relative_date_oracle(verdict):
    rng = random.Random(11)
    mismatches = 0
    base = dt.date(2015, 1, 1).toordinal()
    for _ in range(1000):
        ref = dt.date.fromordinal(base + rng.randint(0, 4000))
        d = dt.date.fromordinal(ref.toordinal() - rng.choice([0, 1, 27, 28, 29, 30, 31, rng.randint(0, 3000)]))
        mismatches += relative_date(d, ref) != _phrase_oracle(d, ref)
    anchor = relative_date(dt.date(2024, 11, 30), dt.date(2025, 9, 29))
    ok = mismatches == 0 and anchor == "9 months ago"
    verdict(11, ok, f"1000 random pairs, {mismatches} mismatches; 2024-11-30 @ 2025-09-29 -> {anchor!r}")


# --- 12. statistics table ------------------------------------------------------------------------

def test_c12_statistics_table(verdict, demo_dir, tmp_path):
    work = tmp_path / "w"
    rc = cli_main(["run", "--config", str(demo_dir / "config.yaml"), "--work-dir", str(work), "--log-level", "error"])
    records = [json.loads(line) for line in (work / "benchmark/queries.jsonl").open(encoding="utf-8")]
    total = len(records)
    valid = [r["attributes"] for r in records if not r["attributes"]["false_premise"]]

    def pct(c: int) -> float:
        return round(100.0 * c / total, 1)

    expected = []
    for label, lang in (("English", "english"), ("Cross", "cross")):
        c = sum(a["language"] == lang for a in valid)
        expected.append(("Language", label, c, pct(c)))
    for year in sorted({a["freshness_year"] for a in valid}):
        c = sum(a["freshness_year"] == year for a in valid)
        expected.append(("Freshness", str(year), c, pct(c)))
    for bucket in ("Culture", "Geo", "History&Society", "STEM"):
        c = sum(bucket in a["topics"] for a in valid)
        expected.append(("Topics", bucket, c, pct(c)))
    for label, hops in (("Single", 1), ("Multi", 2)):
        c = sum(a["hops"] == hops for a in valid)
        expected.append(("# Hops", label, c, pct(c)))
    c = sum(r["attributes"]["false_premise"] for r in records)
    expected.append(("False-premise", "", c, pct(c)))

    text = (work / "benchmark/stats.md").read_text(encoding="utf-8")
    got = parse_stats_markdown(text)
    header_total = f"Total queries: {total}" in text
    ok = rc == 0 and got == expected and header_total
    verdict(12, ok, f"{len(got)} rows recomputed from {total} raw records: exact match {got == expected}")
