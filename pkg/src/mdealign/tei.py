"""Token-anchored TEI: parse the token-identified source edition, emit
translation files whose segments point back at source token ids.

Conventions: tokens are ``w`` elements with unique ``xml:id`` inside ``s``
sentence containers inside ``div type="chapter"`` chapters.  Translation
segments are ``seg`` elements carrying ``from``/``to`` anchors (first and
last source token id), a ``type`` attribute (the bead type, or
``omission``/``insertion`` for gaps) and a ``sim`` attribute with the
similarity to three decimals.  Omissions are self-closing and carry the
untranslated span; insertions carry text but no anchors, since a fabricated
anchor would misrender highlights.  Elements other than div/s/w pass
through parsing as opaque text and are never emitted.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from typing import Sequence
from xml.sax.saxutils import escape

from .model import (AlignmentResult, Chapter, Document, Segment, Token)

TEI_NS = "http://www.tei-c.org/ns/1.0"
XML_ID = "{http://www.w3.org/XML/1998/namespace}id"


class TeiError(Exception):
    pass


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _parse_xml(data: bytes) -> ET.Element:
    try:
        return ET.fromstring(data)
    except ET.ParseError as exc:
        line, col = exc.position
        raise TeiError(f"malformed XML at line {line}, column {col}: {exc.msg}") from exc


def parse_source_tei(data: bytes) -> Document:
    """Read a token-identified source file into a Document.

    The document text is the concatenation of all body text nodes in
    document order, so token offsets are exact within it.  One linear walk
    collects tokens, sentences and chapters; anything else contributes its
    text and nothing more.
    """
    root = _parse_xml(data)
    body = None
    for el in root.iter():
        if _local(el.tag) == "body":
            body = el
            break
    if body is None:
        raise TeiError("no body element found")

    doc_id = root.get("n") or "source"
    buf: list[str] = []
    pos = 0
    tokens: list[Token] = []
    seen_ids: set[str] = set()
    chapters: list[Chapter] = []
    cur_segments: list[Segment] | None = None
    cur_n: int | None = None
    sent_tokens: list[int] | None = None

    def emit(piece: str | None) -> None:
        nonlocal pos
        if piece:
            buf.append(piece)
            pos += len(piece)

    def walk(el, in_sentence: bool) -> None:
        nonlocal cur_segments, cur_n, sent_tokens
        tag = _local(el.tag)
        if tag == "w":
            if not in_sentence:
                raise TeiError(f"w element outside any s element "
                               f"(id {el.get(XML_ID)!r})")
            wid = el.get(XML_ID)
            if not wid:
                raise TeiError("w element without xml:id")
            if wid in seen_ids:
                raise TeiError(f"duplicate xml:id {wid}")
            seen_ids.add(wid)
            text = el.text or ""
            if not text:
                raise TeiError(f"empty token {wid}")
            tokens.append(Token(wid, text, pos, pos + len(text)))
            sent_tokens.append(len(tokens) - 1)
            emit(text)
            return

        is_chapter = tag == "div" and el.get("type") == "chapter"
        is_sentence = tag == "s"
        outer = (cur_segments, cur_n)
        if is_chapter:
            cur_segments, cur_n = [], int(el.get("n", len(chapters) + 1))
        if is_sentence:
            sent_tokens = []
        emit(el.text)
        for child in el:
            walk(child, in_sentence or is_sentence)
            emit(child.tail)
        if is_sentence:
            if sent_tokens:
                if cur_segments is None:
                    raise TeiError("s element outside any chapter div")
                first, last = sent_tokens[0], sent_tokens[-1]
                cur_segments.append(Segment(
                    doc_id=doc_id, chapter=cur_n, index=len(cur_segments),
                    text="", char_start=tokens[first].char_start,
                    char_end=tokens[last].char_end, token_span=(first, last)))
            sent_tokens = None
        if is_chapter:
            chapters.append(Chapter(n=cur_n, segments=tuple(cur_segments)))
            cur_segments, cur_n = outer

    emit(body.text)
    for child in body:
        walk(child, False)
        emit(child.tail)

    text = "".join(buf)
    fixed_chapters = tuple(
        Chapter(n=ch.n, segments=tuple(
            Segment(doc_id=s.doc_id, chapter=s.chapter, index=s.index,
                    text=text[s.char_start:s.char_end], char_start=s.char_start,
                    char_end=s.char_end, token_span=s.token_span)
            for s in ch.segments))
        for ch in chapters
    )
    lang = None
    for el in root.iter():
        lang = lang or el.get("{http://www.w3.org/XML/1998/namespace}lang")
    return Document(doc_id=doc_id, language=lang or "und", text=text,
                    chapters=fixed_chapters, tokens=tuple(tokens))


# --- emission ---------------------------------------------------------------

def _header(doc_id: str, language: str) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<TEI xmlns="{TEI_NS}" n="{escape(doc_id)}" xml:lang="{escape(language)}">',
        "  <text>",
        "    <body>",
    ]


_FOOTER = ["    </body>", "  </text>", "</TEI>", ""]


def encode_source_tei(doc: Document) -> bytes:
    """Serialize a tokenized source document with stable w ids, the inverse
    of parse_source_tei up to inter-element whitespace."""
    lines = _header(doc.doc_id, doc.language)
    for ch in doc.chapters:
        lines.append(f'      <div type="chapter" n="{ch.n}">')
        for seg in ch.segments:
            if seg.token_span is None:
                raise TeiError(f"chapter {ch.n} segment {seg.index} has no token span")
            first, last = seg.token_span
            parts = [f'        <s n="{seg.index + 1}">']
            for k in range(first, last + 1):
                tok = doc.tokens[k]
                gap = "" if k == first else doc.text[doc.tokens[k - 1].char_end:tok.char_start]
                parts.append(f'{gap}<w xml:id="{tok.id}">{escape(tok.text)}</w>')
            parts.append("</s>")
            lines.append("".join(parts))
        lines.append("      </div>")
    lines.extend(_FOOTER)
    return "\n".join(lines).encode("utf-8")


def encode_translation_tei(result: AlignmentResult, src_doc: Document,
                           tgt_segments: Sequence[Segment]) -> bytes:
    """One seg per bead, anchored to the source token range of its source
    block; deterministic byte-for-byte."""
    src_segments = src_doc.chapter(result.chapter).segments
    lines = _header(result.tgt_doc_id, "und")
    lines.append(f'      <div type="chapter" n="{result.chapter}">')
    for b in result.beads:
        attrs = []
        if b.src:
            first_span = src_segments[b.src[0]].token_span
            last_span = src_segments[b.src[-1]].token_span
            if first_span is None or last_span is None:
                raise TeiError(
                    f"bead over source segments {b.src} lacks token spans")
            attrs.append(f'from="#{src_doc.tokens[first_span[0]].id}"')
            attrs.append(f'to="#{src_doc.tokens[last_span[1]].id}"')
        if b.is_gap:
            attrs.append(f'type="{"omission" if b.src else "insertion"}"')
        else:
            attrs.append(f'type="{b.type}"')
        if b.similarity is not None:
            attrs.append(f'sim="{b.similarity:.3f}"')
        attr_text = " ".join(attrs)
        if b.tgt:
            text = escape(" ".join(tgt_segments[k].text for k in b.tgt))
            lines.append(f"        <seg {attr_text}>{text}</seg>")
        else:
            lines.append(f"        <seg {attr_text}/>")
    lines.append("      </div>")
    lines.extend(_FOOTER)
    return "\n".join(lines).encode("utf-8")


# --- link validation ----------------------------------------------------------

def validate_links(data: bytes, src_doc: Document) -> list[str]:
    """Check every anchor resolves, spans are well-formed, and anchored
    segs progress monotonically.  Violations are returned, not raised."""
    root = _parse_xml(data)
    index = {tok.id: k for k, tok in enumerate(src_doc.tokens)}
    violations: list[str] = []
    prev_pos: int | None = None
    prev_end: int | None = None
    position = 0
    for el in root.iter():
        if _local(el.tag) != "seg":
            continue
        position += 1
        from_ref, to_ref = el.get("from"), el.get("to")
        if from_ref is None and to_ref is None:
            continue  # insertion: anchorless by design
        refs = []
        for label, ref in (("from", from_ref), ("to", to_ref)):
            if ref is None or not ref.startswith("#") or ref[1:] not in index:
                violations.append(f"seg {position}: unresolved {label} reference {ref!r}")
                refs.append(None)
            else:
                refs.append(index[ref[1:]])
        if refs[0] is None or refs[1] is None:
            continue
        start, end = refs
        if start > end:
            violations.append(f"seg {position}: from follows to ({start} > {end})")
            continue
        if prev_end is not None and start <= prev_end:
            violations.append(
                f"seg {position} span overlaps or crosses seg {prev_pos}")
        prev_pos, prev_end = position, end
    return violations
