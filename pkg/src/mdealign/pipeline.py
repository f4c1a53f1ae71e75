"""End-to-end orchestration: segment, embed, align, measure, analyze,
encode and render, with per-stage caching and a machine-readable report.

Every stage is keyed by a content hash of its inputs and parameters;
completed stages land in the cache directory, so an interrupted run resumes
from where it failed and an unchanged rerun is all cache hits.  The
rendered site, TEI files and work artifacts are deterministic byte for
byte; the run report carries timings and therefore lives next to (not
inside) the output tree.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

from . import dataio
from .alignment import align
from .analysis import (ClusterConfig, ProjectionConfig, analysis_to_dict,
                       analyze)
from .dataio import RawDocument, SCHEMA
from .embedding import (BlockEmbedder, FileEmbeddingProvider,
                        HttpEmbeddingProvider, MockEmbeddingProvider, embed,
                        read_vectors, write_vectors)
from .metrics import (compare_granularities, comparison_to_dict,
                      compute_metrics, metrics_to_dict)
from .model import (AlignParams, AlignmentResult, Chapter, Document,
                    assign_token_spans, tokenize)
from .render import render_chapter, render_site
from .segmentation import (HttpSegmentationService, SegmenterConfig,
                           llm_segment, split_punctuation, split_sentences)
from .tei import encode_source_tei, encode_translation_tei, parse_source_tei

STAGES = ("segment", "embed", "align", "metrics", "analyze", "encode-tei", "render")

DEFAULT_WORKERS = 4


class PipelineError(Exception):
    pass


class ConfigError(PipelineError):
    pass


class StageFailure(PipelineError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# --- configuration -----------------------------------------------------------

def load_config(path: str | Path) -> dict:
    cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: configuration must be an object")
    cfg.setdefault("_config_dir", str(Path(path).resolve().parent))
    return cfg


def apply_overrides(cfg: dict, pairs: Sequence[str]) -> dict:
    """``a.b.c=value`` overrides; values parse as JSON when they can."""
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        dotted, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        keys = dotted.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {pair!r} crosses a non-object key")
        node[keys[-1]] = value
    return cfg


def _resolve_path(cfg: dict, value: str) -> Path:
    p = Path(value)
    if not p.is_absolute() and "_config_dir" in cfg:
        p = Path(cfg["_config_dir"]) / p
    return p


def align_params_from_config(cfg: dict) -> AlignParams:
    a = dict(cfg.get("align", {}))
    aliases = {"S": "max_src", "T": "max_tgt", "lambda": "merge_penalty",
               "sigma": "gap_score", "band": "band_width", "margin": "margin_mode"}
    for old, new in aliases.items():
        if old in a:
            a[new] = a.pop(old)
    allowed = {"max_src", "max_tgt", "merge_penalty", "gap_score", "band_width",
               "margin_mode"}
    unknown = set(a) - allowed
    if unknown:
        raise ConfigError(f"unknown align keys: {sorted(unknown)}")
    return AlignParams(**a)


def build_provider(cfg: dict):
    p = cfg.get("provider", {"kind": "mock"})
    kind = p.get("kind", "mock")
    if kind == "mock":
        return MockEmbeddingProvider(dimension=p.get("dimension", 128))
    if kind == "file":
        return FileEmbeddingProvider(_resolve_path(cfg, p["vectors"]),
                                     _resolve_path(cfg, p["texts"]),
                                     provider_id=p.get("id", "file"))
    if kind == "http":
        return HttpEmbeddingProvider(p["endpoint"], p.get("id", "http"),
                                     p["dimension"], batch_size=p.get("batch_size", 64),
                                     timeout=p.get("timeout", 30.0))
    raise ConfigError(f"unknown provider kind {kind!r}")


def build_llm_client(cfg: dict, cache_dir: Path):
    llm = cfg.get("segmentation", {}).get("llm")
    if not llm:
        return None
    token = os.environ.get(llm["auth_token_env"]) if llm.get("auth_token_env") else None
    llm_cache = _resolve_path(cfg, llm["cache_dir"]) if llm.get("cache_dir") \
        else cache_dir / "llm"
    return HttpSegmentationService(llm["endpoint"], model=llm.get("model", "default"),
                                   auth_token=token, cache_dir=llm_cache)


def granularity_plan(cfg: dict) -> list[tuple[str, str]]:
    """(strategy, granularity) variants to produce, first one is default."""
    strategies = cfg.get("segmentation", {}).get("strategies", ["sentence"])
    plan = []
    for s in strategies:
        if s == "sentence":
            plan.append(("sentence", "sentence"))
        elif s in ("punctuation", "llm"):
            plan.append((s, "phrase"))
        else:
            raise ConfigError(f"unknown segmentation strategy {s!r}")
    if len({g for _, g in plan}) != len(plan):
        raise ConfigError("at most one strategy per granularity")
    return plan


# --- hashing and the stage engine ---------------------------------------------

def _digest(obj: Any) -> str:
    return hashlib.sha256(
        json.dumps(obj, ensure_ascii=False, sort_keys=True).encode("utf-8")
    ).hexdigest()[:16]


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


@dataclass
class StageRecord:
    name: str
    key: str
    cache_hit: bool
    duration_s: float
    summary: dict


@dataclass
class RunState:
    """Everything stages share within one run."""

    cfg: dict
    out_dir: Path
    cache_dir: Path
    provider: Any
    records: list[StageRecord] = field(default_factory=list)
    source_from_tei: bool = False
    # granularity -> doc_id -> Document (source and translations)
    docs: dict[str, dict[str, Document]] = field(default_factory=dict)
    embedders: dict[str, BlockEmbedder] = field(default_factory=dict)
    alignments: dict[tuple[str, int, str], AlignmentResult] = field(default_factory=dict)
    viz: dict[tuple[str, int, str], dict] = field(default_factory=dict)
    llm_fallbacks: list[dict] = field(default_factory=list)

    def translation_ids(self) -> list[str]:
        return [t["id"] for t in self.cfg.get("translations", [])]

    def source_at(self, gran: str) -> Document:
        translation_ids = set(self.translation_ids())
        for doc_id, doc in self.docs[gran].items():
            if doc_id not in translation_ids:
                return doc
        raise PipelineError(f"no source document at granularity {gran}")

    def default_granularity(self) -> str:
        return granularity_plan(self.cfg)[0][1]


class StageRunner:
    def __init__(self, state: RunState):
        self.state = state

    def run(self, name: str, key_parts: dict,
            compute: Callable[[], tuple[dict, list[str]]]) -> StageRecord:
        key = _digest({"stage": name, **key_parts})
        stage_dir = self.state.cache_dir / "stages" / name / key
        index = stage_dir / "index.json"
        started = time.monotonic()
        if index.exists():
            meta = json.loads(index.read_text(encoding="utf-8"))
            for rel in meta["files"]:
                src = stage_dir / "files" / rel
                dst = self.state.out_dir / rel
                dst.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(src, dst)
            record = StageRecord(name=name, key=key, cache_hit=True,
                                 duration_s=time.monotonic() - started,
                                 summary=meta["summary"])
        else:
            try:
                summary, files = compute()
            except Exception as exc:
                raise StageFailure(name, exc) from exc
            for rel in files:
                src = self.state.out_dir / rel
                dst = stage_dir / "files" / rel
                dst.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(src, dst)
            tmp = stage_dir / "index.json.tmp"
            tmp.write_text(dataio.dumps({"summary": summary, "files": files}),
                           encoding="utf-8")
            tmp.replace(index)
            record = StageRecord(name=name, key=key, cache_hit=False,
                                 duration_s=time.monotonic() - started,
                                 summary=summary)
        self.state.records.append(record)
        return record

    def key_of(self, name: str) -> str:
        for r in self.state.records:
            if r.name == name:
                return r.key
        raise KeyError(name)


def _map_units(fn, units, workers: int):
    if workers <= 1 or len(units) <= 1:
        return [fn(u) for u in units]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, units))


# --- input loading -------------------------------------------------------------

def load_source(cfg: dict) -> tuple[Document | None, RawDocument | None, bool]:
    src = cfg.get("source")
    if not src:
        raise ConfigError("config needs a source entry")
    if "tei" in src:
        doc = parse_source_tei(_resolve_path(cfg, src["tei"]).read_bytes())
        return doc, None, True
    raw = dataio.load_raw_document(_resolve_path(cfg, src["text"]),
                                   _resolve_path(cfg, src["meta"]) if src.get("meta") else None)
    return None, raw, False


def load_translation(cfg: dict, entry: dict) -> RawDocument:
    raw = dataio.load_raw_document(_resolve_path(cfg, entry["text"]),
                                   _resolve_path(cfg, entry["meta"]) if entry.get("meta") else None)
    return RawDocument(doc_id=entry["id"], language=entry.get("language", raw.language),
                       text=raw.text, chapter_spans=raw.chapter_spans)


MAX_EXEMPLARS = 3


def _llm_split_sentences(sentences, cfg_seg, llm_client, fallbacks, doc_id, n,
                         exemplars=(), exemplar_sink=None):
    """Service-driven splitting with the punctuation fallback; successful
    multi-piece splits can be harvested as few-shot exemplars."""
    segments = []
    for sent in sentences:
        out = llm_segment(llm_client, sent, exemplars=exemplars, cfg=cfg_seg)
        if out.fallback:
            fallbacks.append({"doc": doc_id, "chapter": n,
                              "sentence": sent.index, "reason": out.reason})
        elif (exemplar_sink is not None and len(exemplar_sink) < MAX_EXEMPLARS
              and len(out.segments) > 1):
            exemplar_sink.append((sent.text, [s.text for s in out.segments]))
        segments.extend(out.segments)
    return [replace(s, index=i) for i, s in enumerate(segments)]


def _segment_raw(raw: RawDocument, strategy: str, granularity: str,
                 cfg_seg: SegmenterConfig, llm_client, fallbacks: list[dict],
                 tokens=None, exemplars=(), exemplar_sink=None) -> Document:
    """Chapter-wise segmentation of a raw document at one granularity."""
    chapters = []
    for n, a, b in raw.chapter_spans:
        sentences = split_sentences(raw.text[a:b], cfg_seg, doc_id=raw.doc_id,
                                    chapter=n, offset=a)
        if strategy == "sentence":
            segments = sentences
        elif strategy == "punctuation":
            segments = split_punctuation(sentences, cfg_seg, source_text=raw.text,
                                         offset=0)
        else:  # llm
            segments = _llm_split_sentences(sentences, cfg_seg, llm_client,
                                            fallbacks, raw.doc_id, n,
                                            exemplars, exemplar_sink)
        if tokens is not None:
            segments = assign_token_spans(segments, tokens)
        chapters.append(Chapter(n=n, segments=tuple(segments)))
    return Document(doc_id=raw.doc_id, language=raw.language, text=raw.text,
                    chapters=tuple(chapters),
                    tokens=tuple(tokens) if tokens is not None else ())


def _document_at(source_doc: Document, strategy: str, granularity: str,
                 cfg_seg: SegmenterConfig, llm_client, fallbacks,
                 exemplar_sink=None) -> Document:
    """Re-derive a parsed TEI source at another granularity by splitting its
    sentence segments."""
    if strategy == "sentence":
        return source_doc
    chapters = []
    for ch in source_doc.chapters:
        if strategy == "punctuation":
            segments = split_punctuation(ch.segments, cfg_seg,
                                         source_text=source_doc.text, offset=0)
        else:
            segments = _llm_split_sentences(ch.segments, cfg_seg, llm_client,
                                            fallbacks, source_doc.doc_id, ch.n,
                                            exemplar_sink=exemplar_sink)
        segments = assign_token_spans(segments, source_doc.tokens)
        chapters.append(Chapter(n=ch.n, segments=tuple(segments)))
    return Document(doc_id=source_doc.doc_id, language=source_doc.language,
                    text=source_doc.text, chapters=tuple(chapters),
                    tokens=source_doc.tokens)


# --- stages ---------------------------------------------------------------------

def _stage_segment(runner: StageRunner) -> None:
    state = runner.state
    cfg = state.cfg
    plan = granularity_plan(cfg)
    tei_doc, raw_source, from_tei = load_source(cfg)
    state.source_from_tei = from_tei
    translations = [load_translation(cfg, t) for t in cfg.get("translations", [])]

    seg_cfg_keys = {k: v for k, v in cfg.get("segmentation", {}).items()
                    if k not in ("strategies",)}
    input_hashes = {
        "source": _file_digest(_resolve_path(cfg, cfg["source"].get("tei") or
                                             cfg["source"]["text"])),
        "translations": {t.doc_id: _digest(t.text) for t in translations},
    }
    key_parts = {"plan": plan, "segmentation": seg_cfg_keys, "inputs": input_hashes}

    def compute():
        llm_client = build_llm_client(cfg, state.cache_dir)
        min_chars = cfg.get("segmentation", {}).get("min_segment_chars", 15)
        files: list[str] = []
        counts: dict[str, dict[str, int]] = {}
        for strategy, gran in plan:
            gran_docs: dict[str, Document] = {}
            # approved source splits become few-shot exemplars downstream
            exemplars: list = []
            if from_tei:
                cfg_seg = SegmenterConfig.for_language(
                    tei_doc.language, strategy=strategy, min_segment_chars=min_chars)
                src_doc = _document_at(tei_doc, strategy, gran, cfg_seg,
                                       llm_client, state.llm_fallbacks,
                                       exemplar_sink=exemplars)
            else:
                cfg_seg = SegmenterConfig.for_language(
                    raw_source.language, strategy=strategy, min_segment_chars=min_chars)
                tokens = tokenize(raw_source.text)
                src_doc = _segment_raw(raw_source, strategy, gran, cfg_seg,
                                       llm_client, state.llm_fallbacks,
                                       tokens=tokens, exemplar_sink=exemplars)
            gran_docs[src_doc.doc_id] = src_doc
            for raw in translations:
                t_cfg = SegmenterConfig.for_language(
                    raw.language, strategy=strategy, min_segment_chars=min_chars)
                gran_docs[raw.doc_id] = _segment_raw(raw, strategy, gran, t_cfg,
                                                     llm_client, state.llm_fallbacks,
                                                     exemplars=tuple(exemplars))
            state.docs[gran] = gran_docs
            for doc in gran_docs.values():
                rel = f"work/segments/{doc.doc_id}.{gran}.json"
                dataio.write_document(state.out_dir / rel, doc, gran)
                files.append(rel)
                counts.setdefault(gran, {})[doc.doc_id] = sum(
                    len(c.segments) for c in doc.chapters)
        summary = {"segments": counts,
                   "llm_fallbacks": len(state.llm_fallbacks)}
        return summary, files

    source_id = tei_doc.doc_id if from_tei else raw_source.doc_id
    expected_ids = {source_id, *state.translation_ids()}
    record = runner.run("segment", key_parts, compute)
    if record.cache_hit:
        _reload_segment_outputs(state, plan, expected_ids)


def _reload_segment_outputs(state: RunState, plan, expected_ids: set[str]) -> None:
    for _strategy, gran in plan:
        gran_docs = {}
        for doc_id in sorted(expected_ids):
            path = state.out_dir / f"work/segments/{doc_id}.{gran}.json"
            gran_docs[doc_id] = dataio.read_document(path)
        state.docs[gran] = gran_docs


def _stage_embed(runner: StageRunner) -> None:
    state = runner.state
    provider = state.provider
    key_parts = {"deps": runner.key_of("segment"), "provider": provider.provider_id}

    def compute():
        files: list[str] = []
        total = 0
        for gran in sorted(state.docs):
            for doc_id in sorted(state.docs[gran]):
                doc = state.docs[gran][doc_id]
                for ch in doc.chapters:
                    texts = [s.text for s in ch.segments]
                    if not texts:
                        continue
                    matrix = embed(provider, texts)
                    rel = f"work/embeddings/{doc_id}.ch{ch.n}.{gran}.mdev"
                    path = state.out_dir / rel
                    path.parent.mkdir(parents=True, exist_ok=True)
                    write_vectors(matrix.rows, path)
                    files.append(rel)
                    total += matrix.n
        return {"vectors": total, "provider": provider.provider_id}, files

    runner.run("embed", key_parts, compute)
    # seed block embedders from the persisted single-segment vectors
    for gran in state.docs:
        embedder = state.embedders.setdefault(gran, BlockEmbedder(state.provider))
        for doc_id, doc in state.docs[gran].items():
            for ch in doc.chapters:
                rel = state.out_dir / f"work/embeddings/{doc_id}.ch{ch.n}.{gran}.mdev"
                if rel.exists() and ch.segments:
                    rows = read_vectors(rel)
                    embedder.warm([s.text for s in ch.segments], rows)


def _alignment_units(state: RunState) -> list[tuple[str, int, str]]:
    units = []
    for gran in sorted(state.docs):
        src = state.source_at(gran)
        for tid in state.translation_ids():
            for ch in src.chapters:
                units.append((tid, ch.n, gran))
    return units


def _stage_align(runner: StageRunner) -> None:
    state = runner.state
    params = align_params_from_config(state.cfg)
    workers = state.cfg.get("workers", DEFAULT_WORKERS)
    key_parts = {"deps": runner.key_of("embed"),
                 "params": dataio.params_to_dict(params)}

    def compute():
        units = _alignment_units(state)

        def one(unit):
            tid, n, gran = unit
            src_segments = list(state.source_at(gran).chapter(n).segments)
            tgt_segments = list(state.docs[gran][tid].chapter(n).segments)
            if not src_segments or not tgt_segments:
                raise PipelineError(f"empty chapter {n} for {tid} at {gran}")
            result = align(src_segments, tgt_segments, state.embedders[gran], params)
            result = replace(result, granularity=gran)
            return unit, result

        files = []
        for unit, result in _map_units(one, units, workers):
            state.alignments[unit] = result
            tid, n, gran = unit
            rel = f"work/alignments/{tid}.ch{n}.{gran}.json"
            dataio.write_alignment(state.out_dir / rel, result, state.source_at(gran))
            files.append(rel)
        beads = sum(len(r.beads) for r in state.alignments.values())
        return {"alignments": len(files), "beads": beads}, files

    record = runner.run("align", key_parts, compute)
    if record.cache_hit:
        for unit in _alignment_units(state):
            tid, n, gran = unit
            rel = state.out_dir / f"work/alignments/{tid}.ch{n}.{gran}.json"
            state.alignments[unit] = dataio.read_alignment(rel)


def _stage_metrics(runner: StageRunner) -> None:
    state = runner.state
    threshold = state.cfg.get("metrics", {}).get("length_threshold", 60)
    key_parts = {"deps": runner.key_of("align"), "length_threshold": threshold}

    def compute():
        files = []
        worst = {"pair_count_ratio": None, "overlong": 0}
        for unit in sorted(state.alignments):
            tid, n, gran = unit
            result = state.alignments[unit]
            report = compute_metrics(result,
                                     list(state.source_at(gran).chapter(n).segments),
                                     list(state.docs[gran][tid].chapter(n).segments),
                                     threshold)
            rel = f"work/metrics/{tid}.ch{n}.{gran}.json"
            dataio.write_json(state.out_dir / rel, metrics_to_dict(report))
            files.append(rel)
            ratio = report.pair_count_ratio
            if worst["pair_count_ratio"] is None or ratio < worst["pair_count_ratio"]:
                worst["pair_count_ratio"] = ratio
            worst["overlong"] += len(report.overlong_beads)

        grans = sorted({g for _, _, g in state.alignments})
        if grans == ["phrase", "sentence"]:
            for tid in state.translation_ids():
                for ch in state.source_at("sentence").chapters:
                    n = ch.n
                    cmp = compare_granularities(
                        state.alignments[(tid, n, "sentence")],
                        state.alignments[(tid, n, "phrase")],
                        list(state.source_at("sentence").chapter(n).segments),
                        list(state.source_at("phrase").chapter(n).segments),
                        list(state.docs["sentence"][tid].chapter(n).segments),
                        list(state.docs["phrase"][tid].chapter(n).segments),
                        threshold)
                    rel = f"work/compare/{tid}.ch{n}.json"
                    dataio.write_json(state.out_dir / rel, comparison_to_dict(cmp))
                    files.append(rel)
        return {"reports": len(files), **worst}, files

    runner.run("metrics", key_parts, compute)


def _stage_analyze(runner: StageRunner) -> None:
    state = runner.state
    a = state.cfg.get("analysis", {})
    projection = ProjectionConfig(perplexity=a.get("perplexity"),
                                  iterations=a.get("iterations", 1000),
                                  seed=a.get("seed", 0))
    clustering = ClusterConfig(eps=a.get("eps", 0.30), min_pts=a.get("min_pts", 2))
    outlier_threshold = a.get("outlier_threshold", 0.4)
    workers = state.cfg.get("workers", DEFAULT_WORKERS)
    key_parts = {"deps": runner.key_of("align"),
                 "analysis": {"perplexity": projection.perplexity,
                              "iterations": projection.iterations,
                              "seed": projection.seed, "eps": clustering.eps,
                              "min_pts": clustering.min_pts,
                              "outlier_threshold": outlier_threshold}}

    def compute():
        units = sorted(state.alignments)

        def one(unit):
            tid, n, gran = unit
            result = state.alignments[unit]
            report = analyze(result,
                             list(state.source_at(gran).chapter(n).segments),
                             list(state.docs[gran][tid].chapter(n).segments),
                             state.embedders[gran], projection, clustering,
                             outlier_threshold)
            return unit, analysis_to_dict(report, result, projection, clustering,
                                          outlier_threshold)

        files = []
        outliers = 0
        for unit, viz in _map_units(one, units, workers):
            state.viz[unit] = viz
            tid, n, gran = unit
            rel = f"work/viz/{tid}.ch{n}.{gran}.json"
            dataio.write_json(state.out_dir / rel, viz)
            files.append(rel)
            outliers += len(viz["outliers"])
        return {"reports": len(files), "outliers": outliers}, files

    record = runner.run("analyze", key_parts, compute)
    if record.cache_hit:
        for unit in sorted(state.alignments):
            tid, n, gran = unit
            rel = state.out_dir / f"work/viz/{tid}.ch{n}.{gran}.json"
            state.viz[unit] = dataio.read_json(rel, kind="viz")


def _stage_encode_tei(runner: StageRunner) -> None:
    state = runner.state
    key_parts = {"deps": runner.key_of("align"), "source_from_tei": state.source_from_tei}

    def compute():
        files = []
        if not state.source_from_tei:
            rel = "tei/source.xml"
            path = state.out_dir / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(encode_source_tei(state.source_at(state.default_granularity())))
            files.append(rel)
        for unit in sorted(state.alignments):
            tid, n, gran = unit
            result = state.alignments[unit]
            src_doc = state.source_at(gran)
            tgt_segments = list(state.docs[gran][tid].chapter(n).segments)
            suffix = "" if gran == state.default_granularity() else f".{gran}"
            rel = f"tei/{tid}/chapter-{n}{suffix}.xml"
            path = state.out_dir / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(encode_translation_tei(result, src_doc, tgt_segments))
            files.append(rel)
        return {"files": len(files)}, files

    runner.run("encode-tei", key_parts, compute)


def _stage_render(runner: StageRunner) -> None:
    state = runner.state
    cfg = state.cfg
    default_gran = state.default_granularity()
    viewer_cfg = cfg.get("viewer", {})
    viewer_bundle = None
    if viewer_cfg.get("bundle"):
        viewer_bundle = _resolve_path(cfg, viewer_cfg["bundle"]).read_bytes()
    key_parts = {"deps": [runner.key_of("align"), runner.key_of("analyze"),
                          runner.key_of("metrics")],
                 "viewer": hashlib.sha256(viewer_bundle).hexdigest()[:16]
                 if viewer_bundle else None}
    languages = {t["id"]: t.get("language", "und")
                 for t in cfg.get("translations", [])}

    def compute():
        entries = []
        for unit in sorted(state.alignments):
            tid, n, gran = unit
            result = state.alignments[unit]
            src_doc = state.source_at(gran)
            tgt_segments = list(state.docs[gran][tid].chapter(n).segments)
            entries.append(render_chapter(
                src_doc, result, tgt_segments,
                dataio.alignment_to_dict(result, src_doc), state.viz.get(unit),
                translation_id=tid, language=languages.get(tid, "und"),
                default_granularity=(gran == default_gran)))
        site_dir = state.out_dir / "site"
        render_site(site_dir, state.source_at(default_gran), entries,
                    viewer_bundle=viewer_bundle)
        files = [str(p.relative_to(state.out_dir))
                 for p in sorted(site_dir.rglob("*")) if p.is_file()]
        return {"pages": sum(1 for f in files if f.endswith(".html"))}, files

    runner.run("render", key_parts, compute)


# --- the run -------------------------------------------------------------------

STAGE_FUNCS = {
    "segment": _stage_segment,
    "embed": _stage_embed,
    "align": _stage_align,
    "metrics": _stage_metrics,
    "analyze": _stage_analyze,
    "encode-tei": _stage_encode_tei,
    "render": _stage_render,
}


@dataclass
class RunReport:
    status: str
    records: list[StageRecord]
    failed_stage: str | None
    llm_fallbacks: list[dict]

    def to_dict(self, cfg: dict) -> dict:
        return {
            "schema": SCHEMA,
            "kind": "report",
            "status": self.status,
            "failed_stage": self.failed_stage,
            "stages": [
                {"name": r.name, "key": r.key, "cache_hit": r.cache_hit,
                 "duration_s": round(r.duration_s, 6), "summary": r.summary}
                for r in self.records
            ],
            "llm_fallbacks": self.llm_fallbacks,
            "config": {k: v for k, v in cfg.items() if not k.startswith("_")},
        }


def resolve_cache_dir(out_dir: Path, cache_dir: str | Path | None) -> Path:
    env = os.environ.get("MDE_CACHE_DIR")
    if cache_dir is not None:
        return Path(cache_dir)
    if env:
        return Path(env)
    return out_dir / ".cache"


def run_pipeline(cfg: dict, out_dir: str | Path, cache_dir: str | Path | None = None,
                 through_stage: str | None = None, provider=None) -> RunReport:
    """Execute the stages in order, writing artifacts under ``out_dir`` and
    the report to ``out_dir/report.json``.  ``through_stage`` stops after
    the named stage (prerequisites run or cache-hit as needed)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = resolve_cache_dir(out_dir, cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    if through_stage is not None and through_stage not in STAGES:
        raise ConfigError(f"unknown stage {through_stage!r}")

    state = RunState(cfg=cfg, out_dir=out_dir, cache_dir=cache,
                     provider=provider if provider is not None else build_provider(cfg))
    runner = StageRunner(state)
    failed: str | None = None
    try:
        for name in STAGES:
            STAGE_FUNCS[name](runner)
            if name == through_stage:
                break
    except StageFailure as exc:
        failed = exc.stage
        report = RunReport(status="failed", records=state.records,
                           failed_stage=failed, llm_fallbacks=state.llm_fallbacks)
        dataio.write_json(out_dir / "report.json", report.to_dict(cfg))
        raise
    report = RunReport(status="ok", records=state.records, failed_stage=None,
                       llm_fallbacks=state.llm_fallbacks)
    dataio.write_json(out_dir / "report.json", report.to_dict(cfg))
    return report
