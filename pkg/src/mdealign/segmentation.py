"""Segment production at sentence or phrase granularity.

Three strategies: rule-based sentence splitting, punctuation sub-splitting
of sentences, and delegation to a remote segmentation service with a
punctuation fallback.  All of them are lossless: segment offsets index the
original text, so concatenating segments with the whitespace between their
spans reproduces the input exactly.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .abbreviations import abbreviations_for
from .model import PHRASE, SENTENCE, Segment

DEFAULT_TERMINATORS = frozenset({".", "!", "?", "…", "。", "！", "？"})
DEFAULT_SOFT_BREAKS = frozenset({",", ";", ":", "、", "，", "；", "："})
CJK_TERMINATORS = frozenset({"。", "！", "？"})
CLOSING_QUOTES = "»”’\"'›)]」』"
OPENING_QUOTES = "«“‘\"'‹([「『—–-"

STRATEGIES = ("sentence", "punctuation", "llm")


class SegmentationError(Exception):
    pass


class SegmentationServiceError(SegmentationError):
    """Remote segmentation service unreachable after retries."""


@dataclass(frozen=True)
class SegmenterConfig:
    strategy: str = "sentence"
    terminators: frozenset[str] = DEFAULT_TERMINATORS
    soft_breaks: frozenset[str] = DEFAULT_SOFT_BREAKS
    min_segment_chars: int = 15
    abbreviations: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.terminators & self.soft_breaks:
            raise ValueError("terminator and soft-break sets must be disjoint")
        if self.min_segment_chars < 1:
            raise ValueError("min_segment_chars must be >= 1")

    @classmethod
    def for_language(cls, language: str, **kwargs) -> "SegmenterConfig":
        kwargs.setdefault("abbreviations", abbreviations_for(language))
        return cls(**kwargs)


def _preceding_chunk(text: str, dot_pos: int) -> str:
    """The whitespace-delimited chunk ending at (and including) text[dot_pos]."""
    start = dot_pos
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    return text[start:dot_pos + 1]


def _is_boundary(text: str, run_start: int, cfg: SegmenterConfig) -> int | None:
    """Decide whether the terminator run starting at ``run_start`` ends a
    sentence.  Returns the exclusive end offset of the sentence (after any
    closing quotes), or None."""
    n = len(text)
    j = run_start
    while j < n and text[j] in cfg.terminators:
        j += 1
    run = text[run_start:j]

    # protected abbreviation: only a bare period can be one
    if run == "." and _preceding_chunk(text, run_start) in cfg.abbreviations:
        return None

    k = j
    while k < n and text[k] in CLOSING_QUOTES:
        k += 1

    if any(c in CJK_TERMINATORS for c in run):
        return k

    # need whitespace, then (skipping opening quotes) an uppercase letter
    w = k
    while w < n and text[w] in " \t":
        w += 1
    if w == k and w < n:
        return None
    if w >= n or text[w] == "\n":
        return k
    u = w
    while u < n and text[u] in OPENING_QUOTES:
        u += 1
    if u < n and (text[u].isupper() or _is_cjk_start(text[u])):
        return k
    return None


def _is_cjk_start(ch: str) -> bool:
    from .model import is_cjk
    return is_cjk(ch)


def split_sentences(text: str, cfg: SegmenterConfig, *, doc_id: str = "",
                    chapter: int = 1, offset: int = 0) -> list[Segment]:
    """Rule-based sentence boundaries.

    A boundary follows a terminator run (plus any closing quotes) when the
    next material starts a new sentence with an uppercase letter, or
    unconditionally for CJK terminators.  Newline runs also close the
    current sentence, respecting the line-oriented input format.  ``offset``
    shifts recorded spans so chapter substrings keep document-absolute
    offsets.
    """
    segments: list[Segment] = []
    n = len(text)
    i = 0

    def emit(start: int, end: int) -> None:
        while start < end and text[start].isspace():
            start += 1
        while end > start and text[end - 1].isspace():
            end -= 1
        if start < end:
            segments.append(Segment(
                doc_id=doc_id, chapter=chapter, index=len(segments),
                text=text[start:end], char_start=offset + start,
                char_end=offset + end, granularity=SENTENCE,
            ))

    start = 0
    while i < n:
        ch = text[i]
        if ch == "\n":
            emit(start, i)
            start = i + 1
            i += 1
            continue
        if ch in cfg.terminators:
            end = _is_boundary(text, i, cfg)
            if end is not None:
                emit(start, end)
                start = end
                i = end
                continue
            # skip the whole terminator run we just rejected
            while i < n and text[i] in cfg.terminators:
                i += 1
            continue
        i += 1
    emit(start, n)
    return segments


def _merge_spans(a: Segment, b: Segment, full_text: str, text_offset: int) -> Segment:
    return Segment(
        doc_id=a.doc_id, chapter=a.chapter, index=a.index,
        text=full_text[a.char_start - text_offset:b.char_end - text_offset],
        char_start=a.char_start, char_end=b.char_end, granularity=PHRASE,
    )


def split_punctuation(sentences: Sequence[Segment], cfg: SegmenterConfig, *,
                      source_text: str | None = None, offset: int = 0) -> list[Segment]:
    """Split each sentence after soft-break punctuation into phrases.

    Fragments shorter than ``cfg.min_segment_chars`` are merged with the
    following fragment (with the preceding one if they end the sentence).
    Punctuation stays attached to the left fragment and sentence boundaries
    are never crossed.  ``source_text``/``offset`` let merged spans recover
    the exact text between fragments; when omitted, each sentence's own text
    serves.
    """
    phrases: list[Segment] = []
    for sent in sentences:
        if sent.granularity not in (SENTENCE, PHRASE):
            raise SegmentationError(f"unexpected granularity {sent.granularity!r}")
        text = sent.text
        base = sent.char_start
        raw: list[Segment] = []
        frag_start = 0
        for pos, ch in enumerate(text):
            if ch in cfg.soft_breaks:
                piece = text[frag_start:pos + 1]
                if piece.strip():
                    raw.append(Segment(
                        doc_id=sent.doc_id, chapter=sent.chapter, index=0,
                        text=piece.strip(),
                        char_start=base + frag_start + _lead_ws(piece),
                        char_end=base + frag_start + _lead_ws(piece) + len(piece.strip()),
                        granularity=PHRASE,
                    ))
                frag_start = pos + 1
        tail = text[frag_start:]
        if tail.strip():
            raw.append(Segment(
                doc_id=sent.doc_id, chapter=sent.chapter, index=0,
                text=tail.strip(),
                char_start=base + frag_start + _lead_ws(tail),
                char_end=base + frag_start + _lead_ws(tail) + len(tail.strip()),
                granularity=PHRASE,
            ))

        if source_text is None:
            lookup_text, lookup_off = sent.text, sent.char_start
        else:
            lookup_text, lookup_off = source_text, offset

        merged: list[Segment] = []
        pending: Segment | None = None
        for frag in raw:
            cur = _merge_spans(pending, frag, lookup_text, lookup_off) if pending else frag
            if len(cur.text) >= cfg.min_segment_chars:
                merged.append(cur)
                pending = None
            else:
                pending = cur
        if pending is not None:
            if merged:
                merged[-1] = _merge_spans(merged[-1], pending, lookup_text, lookup_off)
            else:
                merged.append(pending)
        phrases.extend(merged)

    return [Segment(doc_id=p.doc_id, chapter=p.chapter, index=i, text=p.text,
                    char_start=p.char_start, char_end=p.char_end, granularity=PHRASE)
            for i, p in enumerate(phrases)]


def _lead_ws(s: str) -> int:
    return len(s) - len(s.lstrip())


# --- LLM segmentation -------------------------------------------------------

PROMPT_TEMPLATE = """Split the sentence below into short self-contained segments at \
clause boundaries. Keep every character of the sentence, do not rephrase, \
and reply with a numbered list only, one segment per line.
{exemplars}
Sentence: {sentence}
Segments:
"""

_NUMBERED_LINE = re.compile(r"^\s*\d+[.)]\s*(.*\S)\s*$")


def build_prompt(sentence: str, exemplars: Sequence[tuple[str, Sequence[str]]]) -> str:
    shots = []
    for ex_sentence, ex_segments in exemplars:
        lines = "\n".join(f"{i + 1}. {s}" for i, s in enumerate(ex_segments))
        shots.append(f"\nSentence: {ex_sentence}\nSegments:\n{lines}\n")
    return PROMPT_TEMPLATE.format(exemplars="".join(shots), sentence=sentence)


def parse_numbered_list(response: str) -> list[str]:
    pieces = []
    for line in response.splitlines():
        m = _NUMBERED_LINE.match(line)
        if m:
            pieces.append(m.group(1))
    return pieces


def _map_pieces_to_spans(text: str, pieces: Sequence[str]) -> list[tuple[int, int]] | None:
    """Locate each piece inside ``text`` ignoring whitespace differences.
    Returns per-piece [start, end) spans, or None when the pieces do not
    tile the text."""
    spans = []
    t = 0
    n = len(text)
    for piece in pieces:
        p = 0
        while t < n and text[t].isspace():
            t += 1
        start = t
        while p < len(piece):
            if piece[p].isspace():
                p += 1
                continue
            while t < n and text[t].isspace():
                t += 1
            if t >= n or text[t] != piece[p]:
                return None
            t += 1
            p += 1
        if t == start:
            return None
        spans.append((start, t))
    while t < n and text[t].isspace():
        t += 1
    if t != n:
        return None
    return spans


@dataclass(frozen=True)
class LlmSplit:
    segments: list[Segment]
    fallback: bool = False
    reason: str | None = None


def llm_segment(client, sentence: Segment, exemplars: Sequence[tuple[str, Sequence[str]]] = (),
                cfg: SegmenterConfig | None = None) -> LlmSplit:
    """Ask the segmentation service to split one sentence.

    The returned pieces must tile the sentence text exactly (whitespace
    aside); otherwise the punctuation strategy takes over and the sentence
    is flagged for the run report.  Responses are cached by (model id,
    prompt hash) as transcript files.
    """
    cfg = cfg or SegmenterConfig(strategy="punctuation")
    prompt = build_prompt(sentence.text, exemplars)
    response = client.complete(prompt)

    pieces = parse_numbered_list(response)
    reason = None
    if not pieces:
        reason = "response is not a numbered list"
    else:
        spans = _map_pieces_to_spans(sentence.text, pieces)
        if spans is None:
            reason = "segments do not reproduce the sentence text"
        else:
            segments = [Segment(
                doc_id=sentence.doc_id, chapter=sentence.chapter, index=i,
                text=sentence.text[a:b], char_start=sentence.char_start + a,
                char_end=sentence.char_start + b, granularity=PHRASE,
            ) for i, (a, b) in enumerate(spans)]
            return LlmSplit(segments=segments)

    fallback = split_punctuation([sentence], cfg)
    return LlmSplit(segments=fallback, fallback=True, reason=reason)


class TranscriptCache:
    """Request-hash-named transcript files; concurrent reads, serialized
    writes."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self._lock = threading.Lock()

    def key(self, model: str, prompt: str) -> str:
        digest = hashlib.sha256()
        digest.update(model.encode("utf-8"))
        digest.update(b"\x00")
        digest.update(prompt.encode("utf-8"))
        return digest.hexdigest()[:32]

    def path(self, model: str, prompt: str) -> Path:
        return self.directory / f"{self.key(model, prompt)}.json"

    def get(self, model: str, prompt: str) -> str | None:
        path = self.path(model, prompt)
        if not path.exists():
            return None
        record = json.loads(path.read_text(encoding="utf-8"))
        return record["response"]

    def put(self, model: str, prompt: str, response: str) -> None:
        record = {"model": model, "prompt": prompt, "response": response}
        payload = json.dumps(record, ensure_ascii=False, indent=2, sort_keys=True)
        with self._lock:
            self.directory.mkdir(parents=True, exist_ok=True)
            tmp = self.path(model, prompt).with_suffix(".tmp")
            tmp.write_text(payload, encoding="utf-8")
            tmp.replace(self.path(model, prompt))


class HttpSegmentationService:
    """Remote segmentation endpoint: POST the prompt as a text body, read a
    numbered list back."""

    def __init__(self, endpoint: str, model: str, auth_token: str | None = None,
                 cache_dir: str | Path | None = None, max_attempts: int = 3,
                 timeout: float = 30.0, retry_wait: float = 0.5):
        self.endpoint = endpoint
        self.model = model
        self.auth_token = auth_token
        self.cache = TranscriptCache(cache_dir) if cache_dir else None
        self.max_attempts = max_attempts
        self.timeout = timeout
        self.retry_wait = retry_wait

    def complete(self, prompt: str) -> str:
        if self.cache:
            cached = self.cache.get(self.model, prompt)
            if cached is not None:
                return cached
        response = self._post(prompt)
        if self.cache:
            self.cache.put(self.model, prompt, response)
        return response

    def _post(self, prompt: str) -> str:
        import requests

        headers = {"Content-Type": "text/plain; charset=utf-8", "X-Model": self.model}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                resp = requests.post(self.endpoint, data=prompt.encode("utf-8"),
                                     headers=headers, timeout=self.timeout)
                resp.raise_for_status()
                return resp.text
            except requests.RequestException as exc:
                last_error = exc
                if attempt + 1 < self.max_attempts:
                    time.sleep(self.retry_wait)
        raise SegmentationServiceError(
            f"segmentation service failed after {self.max_attempts} attempts: {last_error}"
        ) from last_error
