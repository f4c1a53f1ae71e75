"""Canonical data types shared by every pipeline stage.

Everything here is immutable after construction (frozen dataclasses holding
tuples), so documents, beads and alignment results can be shared freely
between worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

SENTENCE = "sentence"
PHRASE = "phrase"
GRANULARITIES = (SENTENCE, PHRASE)

BEAD_TYPES = ("1-1", "1-N", "N-1", "N-M", "1-0", "0-1")
GAP_TYPES = ("1-0", "0-1")


@dataclass(frozen=True, slots=True)
class Token:
    """Smallest addressable unit of a source text; ``id`` is the TEI anchor."""

    id: str
    text: str
    char_start: int
    char_end: int


@dataclass(frozen=True, slots=True)
class Segment:
    """Contiguous span of a document at sentence or phrase granularity.

    ``char_start``/``char_end`` are offsets into the owning document's text
    (Unicode scalar values), which is how inter-segment whitespace is
    recorded: the gap between two segments is whatever the document text
    holds between their spans.  ``token_span`` is the inclusive
    ``(first_token_index, last_token_index)`` pair and is only present on
    token-bearing (source) documents.
    """

    doc_id: str
    chapter: int
    index: int
    text: str
    char_start: int
    char_end: int
    granularity: str = SENTENCE
    token_span: tuple[int, int] | None = None


@dataclass(frozen=True, slots=True)
class Chapter:
    n: int
    segments: tuple[Segment, ...]


@dataclass(frozen=True, slots=True)
class Document:
    doc_id: str
    language: str
    text: str
    chapters: tuple[Chapter, ...]
    tokens: tuple[Token, ...] = ()

    def chapter(self, n: int) -> Chapter:
        for ch in self.chapters:
            if ch.n == n:
                return ch
        raise KeyError(f"document {self.doc_id!r} has no chapter {n}")


def classify_bead(n_src: int, n_tgt: int) -> str:
    """Alignment type as a pure function of the two block sizes."""
    if n_src == 0 and n_tgt == 0:
        raise ValueError("a bead needs at least one segment on one side")
    if n_tgt == 0:
        return "1-0"
    if n_src == 0:
        return "0-1"
    if n_src == 1:
        return "1-1" if n_tgt == 1 else "1-N"
    return "N-1" if n_tgt == 1 else "N-M"


@dataclass(frozen=True, slots=True)
class Bead:
    """One aligned pair: a contiguous block of source segment indices mapped
    to a contiguous block of target segment indices.  Gap beads have one
    empty side and no similarity.  ``reordered`` is set only on synthetic
    gold beads whose target block was swapped out of monotone order.
    """

    src: tuple[int, ...]
    tgt: tuple[int, ...]
    similarity: float | None = None
    reordered: bool = False

    @property
    def type(self) -> str:
        return classify_bead(len(self.src), len(self.tgt))

    @property
    def is_gap(self) -> bool:
        return not self.src or not self.tgt


@dataclass(frozen=True, slots=True)
class AlignParams:
    """Aligner knobs.

    ``max_src``/``max_tgt`` bound the block sizes considered on each side,
    ``merge_penalty`` is charged once per segment beyond the first two in a
    bead, ``gap_score`` is the fixed score of an omission/insertion step.
    ``band_width`` switches on anchor-banded search; ``margin_mode`` divides
    raw cosines by a neighborhood mean (off by default).
    """

    max_src: int = 3
    max_tgt: int = 3
    merge_penalty: float = 0.15
    gap_score: float = 0.10
    band_width: int | None = None
    margin_mode: bool = False
    margin_top_k: int = 4
    margin_sample: int = 32
    margin_seed: int = 7

    def __post_init__(self) -> None:
        if self.max_src < 1 or self.max_tgt < 1:
            raise ValueError("block limits must be >= 1")
        if self.merge_penalty < 0:
            raise ValueError("merge_penalty must be >= 0")
        if not -1.0 < self.gap_score < 1.0:
            raise ValueError("gap_score must lie in (-1, 1)")
        if self.band_width is not None and self.band_width < self.max_src + self.max_tgt:
            raise ValueError("band_width must be >= max_src + max_tgt")


@dataclass(frozen=True, slots=True)
class AlignmentResult:
    """Ordered bead sequence for one (translation, chapter) pair plus the
    parameters and provider that produced it."""

    beads: tuple[Bead, ...]
    src_doc_id: str
    tgt_doc_id: str
    chapter: int
    params: AlignParams
    provider_id: str
    granularity: str = SENTENCE

    @property
    def pair_count(self) -> int:
        return sum(1 for b in self.beads if not b.is_gap)

    @property
    def gap_count(self) -> int:
        return sum(1 for b in self.beads if b.is_gap)


def partition_violations(beads: Sequence[Bead], n_src: int, n_tgt: int) -> list[str]:
    """Check that the beads partition both index ranges exactly once."""
    out = []
    for side, n, key in (("src", n_src, lambda b: b.src), ("tgt", n_tgt, lambda b: b.tgt)):
        seen: list[int] = []
        for b in beads:
            idxs = key(b)
            if idxs and list(idxs) != list(range(idxs[0], idxs[-1] + 1)):
                out.append(f"bead {side} indices {idxs} not contiguous")
            seen.extend(idxs)
        if sorted(seen) != list(range(n)):
            out.append(f"{side} indices do not partition 0..{n - 1}: got {sorted(seen)}")
    for b in beads:
        if not b.src and not b.tgt:
            out.append("bead with both sides empty")
    return out


def monotonicity_violations(beads: Sequence[Bead]) -> list[str]:
    """Bead blocks must be strictly increasing on both sides (gaps skipped
    on their empty side)."""
    out = []
    last_src = last_tgt = -1
    for i, b in enumerate(beads):
        if b.src:
            if b.src[0] <= last_src:
                out.append(f"bead {i} src block starts at {b.src[0]}, not after {last_src}")
            last_src = b.src[-1]
        if b.tgt:
            if b.tgt[0] <= last_tgt:
                out.append(f"bead {i} tgt block starts at {b.tgt[0]}, not after {last_tgt}")
            last_tgt = b.tgt[-1]
    return out


# --- tokenization ---------------------------------------------------------

_CJK_RANGES = (
    (0x3400, 0x4DBF),   # ideograph extension A
    (0x4E00, 0x9FFF),   # unified ideographs
    (0xF900, 0xFAFF),   # compatibility ideographs
    (0x20000, 0x2A6DF),
)


def is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def token_id(ordinal: int) -> str:
    """1-based sequential token id, zero-padded for human-checkable spans."""
    return f"w{ordinal:05d}"


def tokenize(text: str) -> list[Token]:
    """Split ``text`` into word and punctuation tokens with offsets.

    Maximal runs of letters/digits form word tokens, every punctuation mark
    is its own token, and whitespace never appears inside a token.  CJK
    ideographs are one token each, so Chinese text needs no word segmenter.
    """
    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if is_cjk(ch):
            end = i + 1
        elif ch.isalnum():
            end = i + 1
            while end < n and text[end].isalnum() and not is_cjk(text[end]):
                end += 1
        else:
            end = i + 1
        tokens.append(Token(token_id(len(tokens) + 1), text[i:end], i, end))
        i = end
    return tokens


def assign_token_spans(segments: Sequence[Segment], tokens: Sequence[Token]) -> list[Segment]:
    """Attach inclusive token spans to segments by offset containment.

    Segment boundaries always fall between tokens, so every token lands in
    exactly one segment; segments that cover no token keep ``token_span``
    None.
    """
    out = []
    t = 0
    for seg in segments:
        while t < len(tokens) and tokens[t].char_start < seg.char_start:
            t += 1
        first = t
        while t < len(tokens) and tokens[t].char_end <= seg.char_end:
            t += 1
        span = (first, t - 1) if t > first else None
        out.append(replace(seg, token_span=span))
    return out


# --- document validation --------------------------------------------------

def validate_document(doc: Document) -> list[str]:
    """Return the list of violated invariants (empty means valid)."""
    violations: list[str] = []

    seen_ids: set[str] = set()
    prev_end = 0
    for tok in doc.tokens:
        if tok.id in seen_ids:
            violations.append(f"duplicate token id {tok.id}")
        seen_ids.add(tok.id)
        if tok.char_start >= tok.char_end:
            violations.append(f"token {tok.id} has empty or negative span")
        if tok.char_start < prev_end:
            violations.append(f"token {tok.id} overlaps or precedes its predecessor")
        prev_end = max(prev_end, tok.char_end)
        if doc.text[tok.char_start:tok.char_end] != tok.text:
            violations.append(
                f"token {tok.id} text {tok.text!r} does not match document "
                f"substring at [{tok.char_start}, {tok.char_end})"
            )

    for ch in doc.chapters:
        prev_seg: Segment | None = None
        for pos, seg in enumerate(ch.segments):
            if seg.index != pos:
                violations.append(
                    f"chapter {ch.n} segment at position {pos} carries index {seg.index}"
                )
            if doc.text[seg.char_start:seg.char_end] != seg.text:
                violations.append(
                    f"chapter {ch.n} segment {seg.index} text does not match its span"
                )
            if prev_seg is not None:
                gap = doc.text[prev_seg.char_end:seg.char_start]
                if seg.char_start < prev_seg.char_end:
                    violations.append(
                        f"chapter {ch.n} segments {prev_seg.index} and {seg.index} overlap"
                    )
                elif gap.strip():
                    violations.append(
                        f"chapter {ch.n} segments {prev_seg.index} and {seg.index} "
                        f"drop non-whitespace text {gap!r}"
                    )
                if seg.token_span and prev_seg.token_span:
                    if seg.token_span[0] <= prev_seg.token_span[1]:
                        violations.append(
                            f"chapter {ch.n} segment {seg.index} token_span overlaps "
                            f"segment {prev_seg.index}"
                        )
            if seg.token_span:
                first, last = seg.token_span
                if not (0 <= first <= last < len(doc.tokens)):
                    violations.append(
                        f"chapter {ch.n} segment {seg.index} token_span {seg.token_span} "
                        f"out of range"
                    )
            prev_seg = seg
    return violations
