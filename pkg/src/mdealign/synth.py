"""Pseudo-translations with known gold alignments.

The generator copies source segments and applies at most one structural
operation per segment (merge, split, omit, insert, reorder), rewriting
sentence junctions so that the sentence splitter recovers exactly the
segments the gold alignment refers to.  Copied text plus character noise
preserves the similarity structure a real multilingual embedder would
provide, because the offline embedding provider is compositional over
character trigrams.  Inserted segments draw from a letter range disjoint
from the source words, guaranteeing low cosine against everything real.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import Sequence

from .alignment import align
from .dataio import RawDocument
from .embedding import MockEmbeddingProvider
from .metrics import score_against_gold
from .model import (AlignParams, AlignmentResult, Bead, Segment, SENTENCE)

SOURCE_LETTERS = "abcdefghijklm"
ALIEN_LETTERS = "nopqrstuvwxyz"


@dataclass(frozen=True)
class NoiseProfile:
    merge_rate: float = 0.0
    split_rate: float = 0.0
    omit_rate: float = 0.0
    insert_rate: float = 0.0
    reorder_rate: float = 0.0
    char_noise: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        rates = (self.merge_rate, self.split_rate, self.omit_rate,
                 self.insert_rate, self.reorder_rate)
        if any(not 0.0 <= r <= 1.0 for r in rates + (self.char_noise,)):
            raise ValueError("rates must be probabilities")
        if sum(rates) > 1.0:
            raise ValueError("structural rates must sum to at most 1")


def _word(rng: random.Random, letters: str) -> str:
    return "".join(rng.choice(letters) for _ in range(rng.randint(3, 8)))


def _sentence(rng: random.Random, letters: str, min_words: int = 6, max_words: int = 14) -> str:
    words = [_word(rng, letters) for _ in range(rng.randint(min_words, max_words))]
    words[0] = words[0].capitalize()
    if len(words) >= 6 and rng.random() < 0.7:
        # one or two soft breaks so phrase splitting has somewhere to cut
        for pos in sorted(rng.sample(range(2, len(words) - 1), rng.randint(1, 2))):
            words[pos - 1] = words[pos - 1] + ","
    return " ".join(words) + "."


def make_source_texts(seed: int, count: int) -> list[str]:
    rng = random.Random(seed)
    return [_sentence(rng, SOURCE_LETTERS) for _ in range(count)]


def texts_to_segments(texts: Sequence[str], doc_id: str, chapter: int,
                      offset: int = 0, granularity: str = SENTENCE) -> list[Segment]:
    segments = []
    pos = offset
    for i, t in enumerate(texts):
        segments.append(Segment(doc_id=doc_id, chapter=chapter, index=i, text=t,
                                char_start=pos, char_end=pos + len(t),
                                granularity=granularity))
        pos += len(t) + 1
    return segments


def make_book(seed: int, chapters: int, segments_per_chapter: int,
              doc_id: str = "source", language: str = "xx") -> RawDocument:
    """Synthetic source book: one chapter per line, sentences with soft
    breaks, words over a letter range the alien-insertion pool avoids."""
    lines = []
    for c in range(chapters):
        texts = make_source_texts(seed * 1000 + c, segments_per_chapter)
        lines.append(" ".join(texts))
    text = "\n".join(lines) + "\n"
    spans = []
    pos = 0
    for c, line in enumerate(lines):
        spans.append((c + 1, pos, pos + len(line)))
        pos += len(line) + 1
    return RawDocument(doc_id=doc_id, language=language, text=text,
                       chapter_spans=tuple(spans))


# --- the generator -----------------------------------------------------------

def _merge_texts(left: str, right: str) -> str:
    """Fuse two sentences into one: terminator becomes a soft break and the
    second sentence loses its capital, so the sentence splitter sees one
    sentence."""
    fused_left = left[:-1] + "," if left and left[-1] in ".!?…" else left + ","
    chars = list(right)
    for k, ch in enumerate(chars):
        if ch.isalpha():
            chars[k] = ch.lower()
            break
    return fused_left + " " + "".join(chars)


def _split_text(text: str) -> tuple[str, str] | None:
    """Split a sentence at its most central soft break, promoting the break
    to a real sentence boundary.  None when there is nothing to split at."""
    positions = [i for i, ch in enumerate(text[:-1]) if ch == ","]
    if not positions:
        return None
    mid = len(text) / 2
    pos = min(positions, key=lambda p: abs(p - mid))
    left = text[:pos] + "."
    right = text[pos + 1:].lstrip()
    chars = list(right)
    for k, ch in enumerate(chars):
        if ch.isalpha():
            chars[k] = ch.upper()
            break
    return left, "".join(chars)


def _apply_char_noise(text: str, rate: float, rng: random.Random) -> str:
    if rate <= 0.0:
        return text
    chars = list(text)
    for k in range(1, len(chars)):
        if chars[k].isalpha() and chars[k].islower() and rng.random() < rate:
            chars[k] = rng.choice(SOURCE_LETTERS)
    return "".join(chars)


@dataclass(frozen=True)
class SyntheticChapter:
    tgt_segments: list[Segment]
    gold: AlignmentResult
    notes: tuple[str, ...]


def generate(src_segments: Sequence[Segment], profile: NoiseProfile,
             tgt_doc_id: str = "pseudo") -> SyntheticChapter:
    """Walk the source applying at most one structural operation per
    segment; returns the pseudo-translation segments and the exact gold
    bead sequence.  Deterministic per profile seed."""
    if not src_segments:
        raise ValueError("source segments must be non-empty")
    rng = random.Random(profile.seed)
    notes: list[str] = []

    texts: list[str] = []
    beads: list[Bead] = []
    thresholds = (profile.merge_rate,
                  profile.merge_rate + profile.split_rate,
                  profile.merge_rate + profile.split_rate + profile.omit_rate,
                  profile.merge_rate + profile.split_rate + profile.omit_rate
                  + profile.insert_rate,
                  profile.merge_rate + profile.split_rate + profile.omit_rate
                  + profile.insert_rate + profile.reorder_rate)

    def draw(u: float) -> str:
        for op, limit in zip(("merge", "split", "omit", "insert", "reorder"), thresholds):
            if u < limit:
                return op
        return "copy"

    i = 0
    n = len(src_segments)
    while i < n:
        op = draw(rng.random())
        text = src_segments[i].text
        if op == "merge":
            if i + 1 < n:
                texts.append(_merge_texts(text, src_segments[i + 1].text))
                beads.append(Bead(src=(i, i + 1), tgt=(len(texts) - 1,)))
                i += 2
                continue
            notes.append(f"segment {i}: merge requested at chapter end; copied")
            op = "copy"
        if op == "split":
            pieces = _split_text(text)
            if pieces is None:
                notes.append(f"segment {i}: split requested but no soft break; copied")
                texts.append(text)
                beads.append(Bead(src=(i,), tgt=(len(texts) - 1,)))
            else:
                texts.extend(pieces)
                beads.append(Bead(src=(i,), tgt=(len(texts) - 2, len(texts) - 1)))
        elif op == "omit":
            beads.append(Bead(src=(i,), tgt=()))
        elif op == "insert":
            texts.append(text)
            beads.append(Bead(src=(i,), tgt=(len(texts) - 1,)))
            texts.append(_sentence(rng, ALIEN_LETTERS))
            beads.append(Bead(src=(), tgt=(len(texts) - 1,)))
        elif op == "reorder":
            texts.append(text)
            beads.append(Bead(src=(i,), tgt=(len(texts) - 1,)))
            prev = beads[-2] if len(beads) >= 2 else None
            if (prev is not None and len(prev.src) == 1 and len(prev.tgt) == 1
                    and not prev.reordered and prev.tgt[0] == len(texts) - 2):
                texts[-2], texts[-1] = texts[-1], texts[-2]
                beads[-2] = Bead(src=prev.src, tgt=(len(texts) - 1,), reordered=True)
                beads[-1] = Bead(src=(i,), tgt=(len(texts) - 2,), reordered=True)
            else:
                notes.append(f"segment {i}: reorder requested but no swappable "
                             f"neighbor; copied")
        else:
            texts.append(text)
            beads.append(Bead(src=(i,), tgt=(len(texts) - 1,)))
        i += 1

    texts = [_apply_char_noise(t, profile.char_noise, rng) for t in texts]
    chapter = src_segments[0].chapter
    tgt_segments = texts_to_segments(texts, tgt_doc_id, chapter)
    gold = AlignmentResult(
        beads=tuple(beads), src_doc_id=src_segments[0].doc_id,
        tgt_doc_id=tgt_doc_id, chapter=chapter, params=AlignParams(),
        provider_id="gold", granularity=src_segments[0].granularity,
    )
    return SyntheticChapter(tgt_segments=tgt_segments, gold=gold, notes=tuple(notes))


def generate_translation(src: RawDocument, src_chapters: dict[int, list[Segment]],
                         profile: NoiseProfile, tgt_doc_id: str
                         ) -> tuple[RawDocument, dict[int, AlignmentResult]]:
    """Book-level wrapper: a pseudo-translation document (one chapter per
    line) plus per-chapter gold alignments; chapter c uses seed + c."""
    lines: list[str] = []
    gold: dict[int, AlignmentResult] = {}
    for n, _, _ in src.chapter_spans:
        chapter_profile = replace(profile, seed=profile.seed + n)
        made = generate(src_chapters[n], chapter_profile, tgt_doc_id=tgt_doc_id)
        lines.append(" ".join(s.text for s in made.tgt_segments))
        gold[n] = made.gold
    text = "\n".join(lines) + "\n"
    spans = []
    pos = 0
    for (n, _, _), line in zip(src.chapter_spans, lines):
        spans.append((n, pos, pos + len(line)))
        pos += len(line) + 1
    raw = RawDocument(doc_id=tgt_doc_id, language="yy", text=text,
                      chapter_spans=tuple(spans))
    return raw, gold


DEFAULT_SYNTH = {
    "seed": 1,
    "chapters": 3,
    "segments_per_chapter": 12,
    "translations": [
        {"id": "pseudo-a", "profile": {"merge_rate": 0.1, "split_rate": 0.1,
                                       "omit_rate": 0.1, "insert_rate": 0.05,
                                       "char_noise": 0.01, "seed": 100}},
    ],
}


def write_synthetic_inputs(out_dir, synth_cfg: dict | None = None) -> dict:
    """Materialize a synthetic book, pseudo-translations and gold files,
    plus a ready-to-run pipeline configuration; returns that configuration."""
    from pathlib import Path

    from . import dataio
    from .segmentation import SegmenterConfig, split_sentences

    out_dir = Path(out_dir)
    cfg = dict(DEFAULT_SYNTH)
    cfg.update(synth_cfg or {})
    book = make_book(cfg["seed"], cfg["chapters"], cfg["segments_per_chapter"])
    dataio.write_raw_document(out_dir, book)

    seg_cfg = SegmenterConfig.for_language(book.language)
    chapters = {n: split_sentences(book.text[a:b], seg_cfg, doc_id=book.doc_id,
                                   chapter=n, offset=a)
                for n, a, b in book.chapter_spans}

    translations = []
    for entry in cfg["translations"]:
        profile = NoiseProfile(**entry.get("profile", {}))
        raw, gold = generate_translation(book, chapters, profile, entry["id"])
        dataio.write_raw_document(out_dir, raw)
        for n, result in gold.items():
            dataio.write_alignment(out_dir / "gold" / f"{entry['id']}.ch{n}.json", result)
        translations.append({"id": entry["id"], "language": raw.language,
                             "text": f"{entry['id']}.txt",
                             "meta": f"{entry['id']}.meta.json"})

    pipeline_cfg = {
        "source": {"text": f"{book.doc_id}.txt", "meta": f"{book.doc_id}.meta.json"},
        "translations": translations,
        "segmentation": {"strategies": ["sentence", "punctuation"],
                         "min_segment_chars": 15},
        "provider": {"kind": "mock"},
        "align": {},
        "analysis": {"seed": 0},
        "synth": cfg,
    }
    dataio.write_json(out_dir / "config.json",
                      {"schema": dataio.SCHEMA, "kind": "config", **pipeline_cfg})
    return pipeline_cfg


# --- closing the loop ---------------------------------------------------------

@dataclass(frozen=True)
class RecoveryScore:
    mean_f1: float
    min_f1: float
    mean_omission_recall: float
    min_omission_recall: float


def omission_recall(predicted: AlignmentResult, gold: AlignmentResult) -> float:
    """Fraction of gold-omitted source segments the prediction also leaves
    unpaired (an identical 1-0 bead).  1.0 when gold has no omissions."""
    omitted = {b.src for b in gold.beads if b.type == "1-0"}
    if not omitted:
        return 1.0
    found = {b.src for b in predicted.beads if b.type == "1-0"}
    return len(omitted & found) / len(omitted)


def recovery_score(profile: NoiseProfile, params: AlignParams = AlignParams(),
                   trials: int = 20, segments_per_trial: int = 30) -> RecoveryScore:
    """Generator -> aligner -> gold scoring, averaged over seeded trials
    with the offline provider."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    provider = MockEmbeddingProvider()
    f1s: list[float] = []
    recalls: list[float] = []
    for t in range(trials):
        src = texts_to_segments(make_source_texts(10_000 + t, segments_per_trial),
                                "source", chapter=1)
        made = generate(src, replace(profile, seed=profile.seed + t))
        if not made.tgt_segments:
            recalls.append(omission_recall(made.gold, made.gold))
            f1s.append(0.0)
            continue
        predicted = align(src, made.tgt_segments, provider, params)
        f1s.append(score_against_gold(predicted, made.gold, "strict").f1)
        recalls.append(omission_recall(predicted, made.gold))
    return RecoveryScore(
        mean_f1=sum(f1s) / len(f1s), min_f1=min(f1s),
        mean_omission_recall=sum(recalls) / len(recalls),
        min_omission_recall=min(recalls),
    )
