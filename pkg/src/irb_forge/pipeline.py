"""Stage orchestration: work-dir layout, stage state, unit caches and the run lock."""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .bench import assemble_dataset, attributes_by_query, load_dataset, save_dataset
from .config import PipelineConfig
from .evalgen import AnswerRecord, Grade, Mode, aggregate_report, answer_query, grade_answer, retrieval_correct
from .evidence import (
    CorpusStore,
    EvidenceDocument,
    Fetcher,
    HttpTransport,
    SnapshotTransport,
    chunk_document,
    doc_id_for,
)
from .facts import Fact, FactBuilder
from .ingest import (
    CitingSentence,
    WikitextParseError,
    extract_citing_sentences,
    filter_syntactic_completeness,
    load_article_file,
    load_tagger,
)
from .ingest.wikitext import iter_article_paths
from .llm.gateway import Gateway, Ledger, Provider
from .llm.providers import ProviderConfig, build_gateway
from .qgen import (
    GenerationError,
    KgParseError,
    KnowledgeGraph,
    MaskedGraph,
    QASample,
    QGenSettings,
    build_sample,
    build_variants,
    extract_kg,
    mask_graphs,
)
from .qgen.generation import reject_record
from .retrieval import BM25Index, RetrievalRun, make_reranker, make_retriever, run_retrieval, score_run
from .textutil import (
    append_jsonl,
    atomic_write_text,
    content_hash,
    read_jsonl,
    sha256_hex,
    write_jsonl,
)

logger = logging.getLogger(__name__)

STAGES = ("ingest", "fetch", "facts", "generate", "assemble", "index", "eval-retrieval", "eval-generation", "report")
PREREQUISITES: dict[str, tuple[str, ...]] = {
    "ingest": (),
    "fetch": ("ingest",),
    "facts": ("ingest", "fetch"),
    "generate": ("facts",),
    "assemble": ("generate", "fetch"),
    "index": ("fetch",),
    "eval-retrieval": ("assemble", "index"),
    "eval-generation": ("assemble", "eval-retrieval"),
    "report": ("eval-retrieval", "eval-generation"),
}
OUTPUTS: dict[str, tuple[str, ...]] = {
    "ingest": ("ingest/sentences.jsonl", "ingest/rejects.jsonl"),
    "fetch": ("corpus/docs.jsonl", "corpus/chunks.jsonl"),
    "facts": ("facts/facts.jsonl", "facts/facts.rejects.jsonl"),
    "generate": ("qgen/graphs.jsonl", "qgen/samples.raw.jsonl", "qgen/qgen.rejects.jsonl"),
    "assemble": (
        "benchmark/dataset.json", "benchmark/queries.jsonl", "benchmark/qrels.tsv",
        "benchmark/corpus.manifest.json", "benchmark/config.snapshot.json", "benchmark/stats.md",
    ),
    "index": ("index/bm25.json",),
    "eval-retrieval": ("eval/run.trec", "eval/retrieval.json", "eval/retrieval.md"),
    "eval-generation": ("eval/answers.jsonl", "eval/grades.jsonl"),
    "report": ("eval/report.json", "eval/report.md"),
}
# Config sections each stage's outputs depend on.
CONFIG_VIEWS: dict[str, tuple[str, ...]] = {
    "ingest": ("paths.articles", "cohort_years", "ingest"),
    "fetch": ("paths.snapshot", "fetch.refetch_failures"),
    "facts": ("llm",),
    "generate": ("llm", "reference_date", "seed", "qgen"),
    "assemble": ("bench", "seed", "reference_date"),
    "index": ("retrieval.k1", "retrieval.b"),
    "eval-retrieval": ("retrieval", "eval.k"),
    "eval-generation": ("llm", "eval"),
    "report": ("eval.k",),
}

ProviderFactory = Callable[[str, ProviderConfig], Provider]


class PipelineError(RuntimeError):
    pass


class PrerequisiteError(PipelineError):
    def __init__(self, stage: str, missing: str):
        super().__init__(
            f"stage {stage!r} needs the outputs of {missing!r}; run `irb-forge {missing}` first"
        )
        self.stage = stage
        self.missing = missing


class LockError(PipelineError):
    pass


@dataclass
class StageResult:
    stage: str
    status: str  # "ran" | "skipped" | "planned" | "blocked"
    detail: dict = field(default_factory=dict)


class RunLock:
    """One pipeline run per work dir; a lock left by a dead process is taken over."""

    def __init__(self, path: Path):
        self.path = path
        self.held = False

    def acquire(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        for _ in range(2):
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                if self._stale():
                    self.path.unlink(missing_ok=True)
                    continue
                raise LockError(f"another run holds {self.path}; remove it if no run is active")
            with os.fdopen(fd, "w") as fh:
                fh.write(str(os.getpid()))
            self.held = True
            return
        raise LockError(f"could not acquire {self.path}")

    def _stale(self) -> bool:
        try:
            pid = int(self.path.read_text().strip())
        except (OSError, ValueError):
            return True
        if pid == os.getpid():
            return False
        try:
            os.kill(pid, 0)
        except ProcessLookupError:
            return True
        except PermissionError:
            return False
        return False

    def release(self) -> None:
        if self.held:
            self.path.unlink(missing_ok=True)
            self.held = False

    def __enter__(self) -> "RunLock":
        self.acquire()
        return self

    def __exit__(self, *exc) -> None:
        self.release()


class UnitCache:
    """Completed per-unit results keyed by a content hash of the unit's inputs."""

    def __init__(self, root: Path):
        self.root = root

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            entry = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            return None
        return entry if entry.get("key") == key else None

    def put(self, key: str, value: dict) -> None:
        atomic_write_text(self._path(key), json.dumps({"key": key, **value}, ensure_ascii=False, sort_keys=True))

    def through(self, key: str, compute: Callable[[], dict]) -> dict:
        hit = self.get(key)
        if hit is not None:
            hit.pop("key")
            return hit
        value = compute()
        self.put(key, value)
        return value


def _file_sha(path: Path) -> str | None:
    return sha256_hex(path.read_bytes()) if path.exists() else None


class Pipeline:
    def __init__(
        self,
        config: PipelineConfig,
        *,
        provider_factory: ProviderFactory | None = None,
        echo: Callable[[str], None] = print,
    ):
        self.config = config
        self.work = config.work_dir
        self.provider_factory = provider_factory
        self.echo = echo
        self._ledger: Ledger | None = None

    # --- paths and bookkeeping ---------------------------------------------

    def p(self, rel: str) -> Path:
        return self.work / rel

    @property
    def ledger_path(self) -> Path:
        return self.p("llm.ledger.jsonl")

    def _state_path(self, stage: str) -> Path:
        return self.p(f"state/{stage}.json")

    def _log(self, event: str, stage: str, **extra) -> None:
        append_jsonl(self.p("run.log.jsonl"), {"ts": round(time.time(), 3), "event": event, "stage": stage, **extra})

    def _read_state(self, stage: str) -> dict | None:
        path = self._state_path(stage)
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            return None

    def _outputs_intact(self, stage: str, state: dict | None) -> bool:
        if state is None:
            return False
        recorded = state.get("outputs", {})
        return set(recorded) == set(OUTPUTS[stage]) and all(
            _file_sha(self.p(rel)) == sha for rel, sha in recorded.items()
        )

    def _input_hash(self, stage: str) -> str:
        upstream = {}
        for pre in PREREQUISITES[stage]:
            state = self._read_state(pre) or {}
            upstream[pre] = state.get("outputs")
        return content_hash({
            "stage": stage,
            "config": self.config.stage_view(*CONFIG_VIEWS[stage]),
            "upstream": upstream,
        })

    def check_prerequisites(self, stage: str) -> None:
        for pre in PREREQUISITES[stage]:
            if not self._outputs_intact(pre, self._read_state(pre)):
                raise PrerequisiteError(stage, pre)

    def is_current(self, stage: str) -> bool:
        state = self._read_state(stage)
        return (
            state is not None
            and state.get("input_hash") == self._input_hash(stage)
            and self._outputs_intact(stage, state)
        )

    # --- gateways ----------------------------------------------------------

    def _gateway_for(self, role: str, cfg: ProviderConfig) -> Gateway:
        gw = build_gateway(cfg, None, self.config.base_dir)
        if self._ledger is None:
            self._ledger = Ledger(self.ledger_path)
        gw.ledger = self._ledger
        if self.provider_factory is not None:
            gw.provider = self.provider_factory(role, cfg)
        return gw

    def gateway(self, stage: str) -> Gateway:
        return self._gateway_for(stage, self.config.provider(stage))

    def judges(self) -> list[Gateway]:
        return [self._gateway_for(f"judge{i}", self.config.judge(i)) for i in range(2)]

    # --- driving -----------------------------------------------------------

    def plan(self, stages: list[str]) -> list[StageResult]:
        out = []
        done: set[str] = set()
        for stage in stages:
            if self.is_current(stage):
                out.append(StageResult(stage, "skipped"))
                done.add(stage)
                continue
            blocked = [
                pre for pre in PREREQUISITES[stage]
                if pre not in done and pre not in stages and not self._outputs_intact(pre, self._read_state(pre))
            ]
            if blocked:
                out.append(StageResult(stage, "blocked", {"missing": blocked}))
            else:
                out.append(StageResult(stage, "planned"))
                done.add(stage)
        return out

    def run(self, stages: list[str] | None = None, *, dry_run: bool = False) -> list[StageResult]:
        stages = list(stages or STAGES)
        for s in stages:
            if s not in STAGES:
                raise PipelineError(f"unknown stage {s!r}")
        if dry_run:
            plan = self.plan(stages)
            for r in plan:
                extra = f" (missing: {', '.join(r.detail['missing'])})" if r.status == "blocked" else ""
                label = {"planned": "would run", "skipped": "up to date", "blocked": "blocked"}[r.status]
                self.echo(f"{r.stage}: {label}{extra}")
            return plan
        results = []
        with RunLock(self.p(".lock")):
            for stage in stages:
                results.append(self.run_stage(stage))
        return results

    def run_stage(self, stage: str) -> StageResult:
        self.check_prerequisites(stage)
        input_hash = self._input_hash(stage)
        state = self._read_state(stage)
        if state is not None and state.get("input_hash") == input_hash and self._outputs_intact(stage, state):
            logger.info("%s: up to date", stage)
            self._log("stage_skipped", stage)
            return StageResult(stage, "skipped")
        self._state_path(stage).unlink(missing_ok=True)
        self._log("stage_start", stage)
        t0 = time.perf_counter()
        try:
            detail = getattr(self, "stage_" + stage.replace("-", "_"))() or {}
        except BaseException as exc:
            self._log("stage_failed", stage, error=f"{type(exc).__name__}: {exc}")
            raise
        outputs = {rel: _file_sha(self.p(rel)) for rel in OUTPUTS[stage]}
        atomic_write_text(
            self._state_path(stage),
            json.dumps({"stage": stage, "input_hash": input_hash, "outputs": outputs}, indent=2, sort_keys=True) + "\n",
        )
        self._log("stage_done", stage, seconds=round(time.perf_counter() - t0, 3), **detail)
        logger.info("%s: done %s", stage, detail)
        return StageResult(stage, "ran", detail)

    # --- loaders -----------------------------------------------------------

    def load_sentences(self) -> list[CitingSentence]:
        return [CitingSentence.from_dict(r) for r in read_jsonl(self.p("ingest/sentences.jsonl"))]

    def corpus(self) -> CorpusStore:
        return CorpusStore(self.p("corpus"))

    def load_docs(self) -> dict[str, EvidenceDocument]:
        return {d.doc_id: d for d in self.corpus().load_documents()}

    def load_facts(self) -> list[Fact]:
        return [Fact.from_dict(r) for r in read_jsonl(self.p("facts/facts.jsonl"))]

    # --- stages ------------------------------------------------------------

    def stage_ingest(self) -> dict:
        cfg = self.config.section("ingest")
        cohorts = self.config.section("cohort_years")
        tagger = load_tagger(cfg["tagger"])
        sentences: list[dict] = []
        rejects: list[dict] = []
        for path, meta in iter_article_paths(self.config.path("articles")):
            try:
                article = load_article_file(path, meta, strict=bool(cfg["strict"]))
            except (WikitextParseError, ValueError) as exc:
                rejects.append({"id": path.name, "reason": "parse_error", "detail": str(exc)})
                continue
            if cohorts and article.cohort_year not in cohorts:
                continue
            found = extract_citing_sentences(article, tagger)
            kept = filter_syntactic_completeness(found, tagger)
            kept_ids = {s.sentence_id for s in kept}
            for s in found:
                if s.sentence_id not in kept_ids:
                    rejects.append({"id": s.sentence_id, "reason": "fragment", "detail": s.sentence_text})
            sentences.extend(s.to_dict() for s in kept)
        write_jsonl(self.p("ingest/sentences.jsonl"), sentences)
        write_jsonl(self.p("ingest/rejects.jsonl"), rejects)
        return {"sentences": len(sentences), "rejects": len(rejects)}

    def stage_fetch(self) -> dict:
        cfg = self.config.section("fetch")
        snapshot = self.config.path("snapshot")
        transport = SnapshotTransport(snapshot) if snapshot else HttpTransport(cfg["user_agent"], float(cfg["timeout"]))
        store = self.corpus()
        fetcher = Fetcher(
            transport,
            store.cache,
            concurrency=int(cfg["concurrency"]),
            politeness_ms=int(cfg["politeness_ms"]),
            refetch_failures=bool(cfg["refetch_failures"]),
        )
        urls = sorted({u for s in self.load_sentences() for u in s.urls})
        docs = fetcher.fetch_many(urls)
        chunks = [c for d in docs if d.ok for c in chunk_document(d)]
        store.save(docs, chunks)
        status: dict[str, int] = {}
        for d in docs:
            status[d.fetch_status.value] = status.get(d.fetch_status.value, 0) + 1
        return {"documents": len(docs), "chunks": len(chunks), "status": status}

    def stage_facts(self) -> dict:
        gateway = self.gateway("facts")
        docs = self.load_docs()
        builder = FactBuilder(gateway, docs)
        cache = UnitCache(self.p("cache/facts"))
        provider = self.config.provider("facts")

        def unit(sentence: CitingSentence) -> dict:
            doc_ids = sorted({d for _, g in sentence.segments for d in (doc_id_for(u) for u in g.urls)})
            key = content_hash([
                "facts", sentence.to_dict(), [docs[d].to_dict() for d in doc_ids if d in docs], provider.__dict__,
            ])

            def compute() -> dict:
                fact, reject = builder.build(sentence)
                return {"fact": fact.to_dict() if fact else None, "reject": reject.to_dict() if reject else None}

            return cache.through(key, compute)

        results = gateway.map(unit, self.load_sentences())
        facts = [r["fact"] for r in results if r["fact"]]
        rejects = [r["reject"] for r in results if r["reject"]]
        write_jsonl(self.p("facts/facts.jsonl"), facts)
        write_jsonl(self.p("facts/facts.rejects.jsonl"), rejects)
        return {"facts": len(facts), "rejects": len(rejects)}

    def qgen_settings(self) -> QGenSettings:
        return QGenSettings(
            self.config.reference_date, self.config.seed, float(self.config.section("qgen")["coverage_threshold"])
        )

    def stage_generate(self) -> dict:
        gateway = self.gateway("generate")
        provider = self.config.provider("generate").__dict__
        settings = self.qgen_settings()
        facts = self.load_facts()
        by_id = {f.fact_id: f for f in facts}
        kg_cache = UnitCache(self.p("cache/kg"))
        sample_cache = UnitCache(self.p("cache/qgen"))

        def kg_unit(fact: Fact) -> dict:
            key = content_hash(["kg", fact.fact_id, fact.keypoint_texts, provider])

            def compute() -> dict:
                try:
                    return {"graph": extract_kg(gateway, fact.fact_id, fact.keypoint_texts).to_dict()}
                except KgParseError as exc:
                    return {"reject": reject_record(fact.fact_id, "generation_fail", str(exc))}

            return kg_cache.through(key, compute)

        rejects: list[dict] = []
        graphs: list[KnowledgeGraph] = []
        for r in gateway.map(kg_unit, facts):
            if "graph" in r:
                graphs.append(KnowledgeGraph.from_dict(r["graph"]))
            else:
                rejects.append(r["reject"])
        singles, mask_rejects = mask_graphs(graphs, by_id, settings)
        rejects.extend(mask_rejects)
        variants = build_variants(singles, settings)

        def sample_unit(masked: MaskedGraph) -> dict:
            key = content_hash(["qgen", masked.to_dict(), settings.reference_date.isoformat(), provider])

            def compute() -> dict:
                try:
                    return {"sample": build_sample(gateway, masked, settings.reference_date).to_dict()}
                except GenerationError as exc:
                    unit_id = "+".join(masked.fact_ids) + f":{masked.variant.value}"
                    return {"reject": reject_record(unit_id, exc.reason, exc.detail)}

            return sample_cache.through(key, compute)

        samples = []
        for r in gateway.map(sample_unit, variants):
            if "sample" in r:
                samples.append(r["sample"])
            else:
                rejects.append(r["reject"])
        write_jsonl(self.p("qgen/graphs.jsonl"), [g.to_dict() for g in graphs])
        write_jsonl(self.p("qgen/samples.raw.jsonl"), samples)
        write_jsonl(self.p("qgen/qgen.rejects.jsonl"), rejects)
        variants_count: dict[str, int] = {}
        for s in samples:
            variants_count[s["variant"]] = variants_count.get(s["variant"], 0) + 1
        return {"graphs": len(graphs), "samples": len(samples), "rejects": len(rejects), "variants": variants_count}

    def stage_assemble(self) -> dict:
        pool = [QASample.from_dict(r) for r in read_jsonl(self.p("qgen/samples.raw.jsonl"))]
        facts = {f.fact_id: f for f in self.load_facts()}
        size = self.config.section("bench")["sample_size"]
        dataset, dropped = assemble_dataset(
            pool,
            facts,
            self.load_docs(),
            n=None if size is None else min(int(size), len(pool)),
            seed=self.config.bench_seed,
            reference_date=self.config.reference_date,
            corpus_manifest=self.corpus().manifest(),
            config_snapshot=self.config.snapshot(),
        )
        save_dataset(dataset, self.p("benchmark"))
        return {"queries": len(dataset.queries), "dropped_empty_qrels": dropped}

    def stage_index(self) -> dict:
        r = self.config.section("retrieval")
        index = BM25Index.build(self.corpus().load_chunks(), float(r["k1"]), float(r["b"]))
        index.save(self.p("index/bm25.json"))
        return {"chunks": index.num_chunks}

    def stage_eval_retrieval(self) -> dict:
        r = self.config.section("retrieval")
        k = int(self.config.section("eval")["k"])
        dataset = load_dataset(self.p("benchmark"))
        retriever = make_retriever(r["retriever"], BM25Index.load(self.p("index/bm25.json")), int(r["top_m"]))
        run = run_retrieval(
            retriever,
            {q.sample_id: q.question for q in dataset.queries},
            depth=int(r["top_m"]),
            k_eval=k,
            reranker=make_reranker(r["reranker"]),
        )
        run.save(self.p("eval/run.trec"))
        scored = score_run(run, dataset.qrels, attributes_by_query(dataset), k)
        atomic_write_text(self.p("eval/retrieval.json"), scored.to_json())
        atomic_write_text(self.p("eval/retrieval.md"), scored.to_markdown(run.retriever_id))
        return {"queries": len(run.rankings), f"ndcg@{k}": round(scored.values.get("all", 0.0), 6)}

    def stage_eval_generation(self) -> dict:
        ev = self.config.section("eval")
        k = int(ev["k"])
        current = self.config.current_date
        dataset = load_dataset(self.p("benchmark"))
        run = RetrievalRun.load(self.p("eval/run.trec"), k)
        docs = self.load_docs()
        generator = self.gateway("eval")
        judges = self.judges()
        gen_cfg = self.config.provider("eval").__dict__
        judge_cfg = [self.config.judge(i).__dict__ for i in range(2)]
        answer_cache = UnitCache(self.p("cache/answers"))
        grade_cache = UnitCache(self.p("cache/grades"))
        answers: list[dict] = []
        grades: list[dict] = []
        for mode in [Mode(m) for m in ev["modes"]]:
            for q in dataset.queries:
                ctx = [docs[d] for d in run.doc_ids(q.sample_id)[:k]] if mode is Mode.RAG else []
                akey = content_hash([
                    "answer", mode.value, q.question, [d.to_dict() for d in ctx], current.isoformat(), gen_cfg,
                ])
                rec = AnswerRecord.from_dict(answer_cache.through(
                    akey, lambda: answer_query(generator, q.sample_id, q.question, mode, current, ctx).to_dict()
                ))
                if rec.failed:
                    # Provider failures are not cached so a later run retries them.
                    answer_cache.root.joinpath(akey[:2], f"{akey}.json").unlink(missing_ok=True)
                answers.append(rec.to_dict())
                if rec.failed:
                    continue
                gkey = content_hash(["grade", q.question, rec.answer_text, q.answer, judge_cfg])
                grade = Grade.from_dict(grade_cache.through(
                    gkey, lambda: grade_answer(judges, q.sample_id, q.question, rec.answer_text, q.answer).to_dict()
                ))
                grades.append({"mode": mode.value, **grade.to_dict()})
        write_jsonl(self.p("eval/answers.jsonl"), answers)
        write_jsonl(self.p("eval/grades.jsonl"), grades)
        return {"answers": len(answers), "grades": len(grades), "failed": sum(a["failed"] for a in answers)}

    def stage_report(self) -> dict:
        k = int(self.config.section("eval")["k"])
        dataset = load_dataset(self.p("benchmark"))
        attrs = attributes_by_query(dataset)
        run = RetrievalRun.load(self.p("eval/run.trec"), k)
        retrieval = json.loads(self.p("eval/retrieval.json").read_text(encoding="utf-8"))
        answers = [AnswerRecord.from_dict(r) for r in read_jsonl(self.p("eval/answers.jsonl"))]
        grades: dict[str, dict[str, Grade]] = {}
        for r in read_jsonl(self.p("eval/grades.jsonl")):
            mode = r.pop("mode")
            grades.setdefault(mode, {})[r["query_id"]] = Grade.from_dict(r)
        modes = sorted({a.mode.value for a in answers}, key=[m.value for m in Mode].index)
        ok = {q: retrieval_correct(run, dataset.qrels, q, k) for q in dataset.qrels}
        reports = {}
        for mode in modes:
            mode_answers = [a for a in answers if a.mode.value == mode]
            usage: dict[str, int] = {"calls": len(mode_answers)}
            for a in mode_answers:
                for key, value in (a.usage or {}).items():
                    if isinstance(value, int):
                        usage[key] = usage.get(key, 0) + value
            reports[mode] = aggregate_report(
                grades.get(mode, {}),
                attrs,
                retrieval_ok=ok if mode == Mode.RAG.value else None,
                closed_book=grades.get(Mode.CLOSED_BOOK.value) if mode == Mode.RAG.value else None,
                failed=[a.query_id for a in mode_answers if a.failed],
                usage=usage,
            )
        payload = {
            "k": k,
            "retriever": run.retriever_id,
            "num_queries": len(dataset.queries),
            "retrieval": {"values": retrieval["values"], "counts": retrieval["counts"]},
            "generation": {m: r.to_dict() for m, r in reports.items()},
        }
        atomic_write_text(self.p("eval/report.json"), json.dumps(payload, indent=2, sort_keys=True) + "\n")
        md = ["# Evaluation report", "", f"Queries: {len(dataset.queries)}", "",
              self.p("eval/retrieval.md").read_text(encoding="utf-8")]
        for mode, rep in reports.items():
            md += [f"# Generation: {mode}", "", rep.to_markdown()]
        atomic_write_text(self.p("eval/report.md"), "\n".join(md))
        return {"modes": modes}
