"""The ``mde`` command: run the whole pipeline or any single stage, build
synthetic corpora, and score alignments against gold.

Exit codes: 0 on success, 1 when a stage fails, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dataio
from .metrics import compute_metrics, gold_score_to_dict, metrics_to_dict, score_against_gold
from .pipeline import (STAGES, ConfigError, PipelineError, StageFailure,
                       apply_overrides, load_config, run_pipeline)
from .synth import write_synthetic_inputs

PARAM_ALIASES = {"S": "S", "T": "T", "lambda": "lambda", "sigma": "sigma",
                 "band": "band", "margin": "margin",
                 "max_src": "max_src", "max_tgt": "max_tgt",
                 "merge_penalty": "merge_penalty", "gap_score": "gap_score"}


def _parse_params(text: str) -> dict:
    out = {}
    for piece in text.split(","):
        piece = piece.strip()
        if not piece:
            continue
        if "=" not in piece:
            raise ConfigError(f"--params entry {piece!r} is not key=value")
        key, raw = piece.split("=", 1)
        if key not in PARAM_ALIASES:
            raise ConfigError(f"unknown aligner parameter {key!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _add_run_flags(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required,
                   help="pipeline configuration file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--cache-dir", default=None,
                   help="stage cache location (MDE_CACHE_DIR also works)")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config key (dotted path)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mde",
        description="Build aligned multilingual editions: segment, embed, "
                    "align, measure, analyze, encode TEI and render.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute every stage")
    _add_run_flags(run)

    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the pipeline through the {stage} stage")
        _add_run_flags(p, config_required=(stage != "metrics"))
        if stage == "align":
            p.add_argument("--params", default=None,
                           help="aligner parameters, e.g. S=3,T=3,lambda=0.15,sigma=0.10")
        if stage == "metrics":
            p.add_argument("--alignment", default=None,
                           help="score one committed alignment file instead")
            p.add_argument("--src-segments", default=None)
            p.add_argument("--tgt-segments", default=None)
            p.add_argument("--out-file", default=None,
                           help="where to write the report (default: stdout)")

    synth = sub.add_parser("synth", help="generate a synthetic book with gold alignments")
    synth.add_argument("--config", default=None,
                       help="synthetic corpus configuration (optional)")
    synth.add_argument("--out", default="synthetic", help="directory for the inputs")

    ev = sub.add_parser("eval", help="score a predicted alignment against gold")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gold", required=True)
    ev.add_argument("--mode", choices=("strict", "lax"), default="strict")
    ev.add_argument("--out-file", default=None)
    return parser


def _metrics_direct(args) -> int:
    result = dataio.read_alignment(args.alignment)
    src_doc = dataio.read_document(args.src_segments)
    tgt_doc = dataio.read_document(args.tgt_segments)
    report = compute_metrics(result, list(src_doc.chapter(result.chapter).segments),
                             list(tgt_doc.chapter(result.chapter).segments))
    payload = dataio.dumps(metrics_to_dict(report))
    if args.out_file:
        Path(args.out_file).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        if args.command == "synth":
            synth_cfg = None
            if args.config:
                loaded = load_config(args.config)
                synth_cfg = loaded.get("synth", {k: v for k, v in loaded.items()
                                                 if not k.startswith(("schema", "kind", "_"))})
            write_synthetic_inputs(args.out, synth_cfg)
            print(f"synthetic inputs written to {args.out}")
            return 0

        if args.command == "eval":
            score = score_against_gold(dataio.read_alignment(args.pred),
                                       dataio.read_alignment(args.gold), args.mode)
            payload = dataio.dumps(gold_score_to_dict(score))
            if args.out_file:
                Path(args.out_file).write_text(payload, encoding="utf-8")
            else:
                sys.stdout.write(payload)
            return 0

        if args.command == "metrics":
            if args.alignment:
                if not (args.src_segments and args.tgt_segments):
                    parser.error("--alignment needs --src-segments and --tgt-segments")
                return _metrics_direct(args)
            if not args.config:
                parser.error("metrics needs --config or --alignment")

        cfg = load_config(args.config)
        apply_overrides(cfg, args.overrides)
        if args.command == "align" and getattr(args, "params", None):
            cfg.setdefault("align", {}).update(_parse_params(args.params))
        through = None if args.command == "run" else args.command
        report = run_pipeline(cfg, args.out, cache_dir=args.cache_dir,
                              through_stage=through)
        for r in report.records:
            hit = "cache" if r.cache_hit else f"{r.duration_s:.2f}s"
            print(f"  {r.name:<10} {hit:>8}  {json.dumps(r.summary, sort_keys=True)}")
        print(f"done: {args.out}")
        return 0
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (PipelineError, dataio.SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
