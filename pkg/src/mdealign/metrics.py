"""Readability-oriented alignment quality metrics plus gold-based scoring.

The report centers on what matters for a side-by-side edition: how bead
types distribute, whether the bead count stays close to the source segment
count, and whether any pair is too long to compare at a glance.  Classical
precision/recall/F1/AER against a gold alignment is kept as the baseline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataio import SCHEMA, bead_id
from .model import AlignmentResult, Bead, Segment, tokenize

DEFAULT_LENGTH_THRESHOLD = 60
HISTOGRAM_BUCKET = 10


class MetricsError(Exception):
    pass


@dataclass(frozen=True)
class LengthStats:
    mean: float
    median: float
    p95: float
    max: int
    histogram: dict[int, int]  # bucket start (multiples of 10) -> count


@dataclass(frozen=True)
class OverlongBead:
    bead: str
    src_tokens: int
    tgt_tokens: int


@dataclass(frozen=True)
class MetricsReport:
    type_distribution: dict[str, tuple[int, float]]  # type -> (count, share)
    pair_count: int
    gap_count: int
    pair_count_ratio: float
    src_lengths: LengthStats
    tgt_lengths: LengthStats
    overlong_beads: tuple[OverlongBead, ...]
    length_threshold: int


def _block_tokens(segments: Sequence[Segment], indices: Sequence[int]) -> int:
    return len(tokenize(" ".join(segments[i].text for i in indices)))


def _length_stats(lengths: Sequence[int]) -> LengthStats:
    if not lengths:
        return LengthStats(mean=0.0, median=0.0, p95=0.0, max=0, histogram={})
    arr = np.asarray(lengths, dtype=np.float64)
    hist: dict[int, int] = {}
    for v in lengths:
        bucket = (v // HISTOGRAM_BUCKET) * HISTOGRAM_BUCKET
        hist[bucket] = hist.get(bucket, 0) + 1
    return LengthStats(
        mean=float(arr.mean()), median=float(np.median(arr)),
        p95=float(np.percentile(arr, 95)), max=int(arr.max()),
        histogram=dict(sorted(hist.items())),
    )


def compute_metrics(result: AlignmentResult, src_segments: Sequence[Segment],
                    tgt_segments: Sequence[Segment],
                    length_threshold: int = DEFAULT_LENGTH_THRESHOLD) -> MetricsReport:
    """Distribution, pair-count and length profile of one alignment.

    Length stats cover non-gap beads (the human-comparable pairs); gap
    beads are tallied separately.  Token counts come from the shared
    tokenizer.
    """
    if src_segments and result.src_doc_id != src_segments[0].doc_id:
        raise MetricsError(
            f"result source {result.src_doc_id!r} does not match segments "
            f"{src_segments[0].doc_id!r}")
    if tgt_segments and result.tgt_doc_id != tgt_segments[0].doc_id:
        raise MetricsError(
            f"result target {result.tgt_doc_id!r} does not match segments "
            f"{tgt_segments[0].doc_id!r}")

    counts: dict[str, int] = {}
    for b in result.beads:
        counts[b.type] = counts.get(b.type, 0) + 1
    total = len(result.beads)
    distribution = {t: (c, c / total if total else 0.0) for t, c in sorted(counts.items())}

    src_lengths: list[int] = []
    tgt_lengths: list[int] = []
    overlong: list[OverlongBead] = []
    for i, b in enumerate(result.beads):
        if b.is_gap:
            continue
        ns = _block_tokens(src_segments, b.src)
        nt = _block_tokens(tgt_segments, b.tgt)
        src_lengths.append(ns)
        tgt_lengths.append(nt)
        if ns > length_threshold or nt > length_threshold:
            overlong.append(OverlongBead(bead=bead_id(i), src_tokens=ns, tgt_tokens=nt))

    pair_count = result.pair_count
    return MetricsReport(
        type_distribution=distribution,
        pair_count=pair_count,
        gap_count=result.gap_count,
        pair_count_ratio=pair_count / len(src_segments) if src_segments else 0.0,
        src_lengths=_length_stats(src_lengths),
        tgt_lengths=_length_stats(tgt_lengths),
        overlong_beads=tuple(overlong),
        length_threshold=length_threshold,
    )


# --- gold-based scoring -----------------------------------------------------

@dataclass(frozen=True)
class GoldScore:
    precision: float
    recall: float
    f1: float
    aer: float
    mode: str


def _non_gap(beads: Sequence[Bead]) -> list[Bead]:
    return [b for b in beads if not b.is_gap]


def _overlaps(a: Bead, b: Bead) -> bool:
    return bool(set(a.src) & set(b.src)) and bool(set(a.tgt) & set(b.tgt))


def score_against_gold(predicted: AlignmentResult, gold: AlignmentResult,
                       mode: str = "strict") -> GoldScore:
    """Precision/recall/F1 and AER (= 1 - F1, sure-only gold).

    strict: a predicted pair counts only when an identical pair exists in
    gold.  lax: a predicted pair counts when it shares at least one segment
    on each side with some gold pair, and recall symmetrically counts gold
    pairs touched by some prediction.
    """
    if mode not in ("strict", "lax"):
        raise ValueError(f"unknown mode {mode!r}")
    if (predicted.src_doc_id, predicted.tgt_doc_id, predicted.chapter) != \
       (gold.src_doc_id, gold.tgt_doc_id, gold.chapter):
        raise MetricsError("predicted and gold alignments cover different documents")

    pred = _non_gap(predicted.beads)
    true = _non_gap(gold.beads)
    if mode == "strict":
        gold_set = {(b.src, b.tgt) for b in true}
        tp = sum(1 for b in pred if (b.src, b.tgt) in gold_set)
        precision = tp / len(pred) if pred else 0.0
        recall = tp / len(true) if true else 0.0
    else:
        matched_pred = sum(1 for p in pred if any(_overlaps(p, g) for g in true))
        matched_gold = sum(1 for g in true if any(_overlaps(p, g) for p in pred))
        precision = matched_pred / len(pred) if pred else 0.0
        recall = matched_gold / len(true) if true else 0.0

    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return GoldScore(precision=precision, recall=recall, f1=f1, aer=1.0 - f1, mode=mode)


# --- granularity comparison ------------------------------------------------

@dataclass(frozen=True)
class GranularityComparison:
    sentence: MetricsReport
    phrase: MetricsReport
    pair_count_delta: int      # phrase - sentence
    max_length_delta: int      # phrase - sentence, worst side
    p95_delta: float
    overlong_delta: int


def compare_granularities(sentence_result: AlignmentResult, phrase_result: AlignmentResult,
                          src_sentences: Sequence[Segment], src_phrases: Sequence[Segment],
                          tgt_sentences: Sequence[Segment], tgt_phrases: Sequence[Segment],
                          length_threshold: int = DEFAULT_LENGTH_THRESHOLD
                          ) -> GranularityComparison:
    """Side-by-side metric reports for the same chapter aligned at sentence
    and at phrase granularity, with the deltas a finer split should move:
    more pairs, shorter pairs, fewer overlong ones."""
    sent = compute_metrics(sentence_result, src_sentences, tgt_sentences, length_threshold)
    phra = compute_metrics(phrase_result, src_phrases, tgt_phrases, length_threshold)

    def worst_max(r: MetricsReport) -> int:
        return max(r.src_lengths.max, r.tgt_lengths.max)

    def worst_p95(r: MetricsReport) -> float:
        return max(r.src_lengths.p95, r.tgt_lengths.p95)

    return GranularityComparison(
        sentence=sent, phrase=phra,
        pair_count_delta=phra.pair_count - sent.pair_count,
        max_length_delta=worst_max(phra) - worst_max(sent),
        p95_delta=worst_p95(phra) - worst_p95(sent),
        overlong_delta=len(phra.overlong_beads) - len(sent.overlong_beads),
    )


# --- serialization ----------------------------------------------------------

def length_stats_to_dict(s: LengthStats) -> dict:
    return {"mean": s.mean, "median": s.median, "p95": s.p95, "max": s.max,
            "histogram": {str(k): v for k, v in s.histogram.items()}}


def metrics_to_dict(report: MetricsReport) -> dict:
    return {
        "schema": SCHEMA,
        "kind": "metrics",
        "type_distribution": {
            t: {"count": c, "share": share}
            for t, (c, share) in report.type_distribution.items()
        },
        "pair_count": report.pair_count,
        "gap_count": report.gap_count,
        "pair_count_ratio": report.pair_count_ratio,
        "length": {
            "src": length_stats_to_dict(report.src_lengths),
            "tgt": length_stats_to_dict(report.tgt_lengths),
        },
        "overlong": [
            {"bead": o.bead, "src_tokens": o.src_tokens, "tgt_tokens": o.tgt_tokens}
            for o in report.overlong_beads
        ],
        "length_threshold": report.length_threshold,
    }


def gold_score_to_dict(score: GoldScore) -> dict:
    return {"schema": SCHEMA, "kind": "gold-score", "mode": score.mode,
            "precision": score.precision, "recall": score.recall,
            "f1": score.f1, "aer": score.aer}


def comparison_to_dict(c: GranularityComparison) -> dict:
    return {
        "schema": SCHEMA,
        "kind": "granularity-comparison",
        "sentence": metrics_to_dict(c.sentence),
        "phrase": metrics_to_dict(c.phrase),
        "deltas": {
            "pair_count": c.pair_count_delta,
            "max_length": c.max_length_delta,
            "p95": c.p95_delta,
            "overlong": c.overlong_delta,
        },
    }
