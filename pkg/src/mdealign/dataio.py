"""Reading and writing of every pipeline artifact.

One self-describing schema (``mde-report/1``) covers segments, alignments,
metrics, viz data, the site manifest and the run report, so tests and the
viewer consume the same files.  Raw inputs are line-oriented UTF-8 text
plus a JSON sidecar giving chapter line ranges.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .model import (AlignParams, AlignmentResult, Bead, Chapter, Document,
                    Segment, Token)

SCHEMA = "mde-report/1"


class SchemaError(Exception):
    pass


def dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n"


def write_json(path: str | Path, obj: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8", newline="\n")


def read_json(path: str | Path, kind: str | None = None) -> dict:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(obj, dict) or obj.get("schema") != SCHEMA:
        raise SchemaError(f"{path}: expected schema {SCHEMA}")
    if kind is not None and obj.get("kind") != kind:
        raise SchemaError(f"{path}: expected kind {kind!r}, found {obj.get('kind')!r}")
    return obj


# --- raw documents ----------------------------------------------------------

@dataclass(frozen=True)
class RawDocument:
    """A document before segmentation: full text plus chapter spans
    (chapter number, char start, char end)."""

    doc_id: str
    language: str
    text: str
    chapter_spans: tuple[tuple[int, int, int], ...]


def load_raw_document(text_path: str | Path, meta_path: str | Path | None = None) -> RawDocument:
    text_path = Path(text_path)
    text = text_path.read_text(encoding="utf-8")
    if meta_path is None:
        candidate = text_path.with_suffix(".meta.json")
        meta_path = candidate if candidate.exists() else None
    if meta_path is None:
        return RawDocument(doc_id=text_path.stem, language="und", text=text,
                           chapter_spans=((1, 0, len(text)),))

    meta = read_json(meta_path, kind="document")
    line_starts = [0]
    for line in text.split("\n")[:-1]:
        line_starts.append(line_starts[-1] + len(line) + 1)
    line_starts.append(len(text))

    def line_offset(line_no: int) -> int:
        return line_starts[min(line_no, len(line_starts) - 1)]

    spans = tuple(
        (int(ch["n"]), line_offset(int(ch["start_line"])), line_offset(int(ch["end_line"])))
        for ch in meta["chapters"]
    )
    return RawDocument(doc_id=meta["doc_id"], language=meta["language"],
                       text=text, chapter_spans=spans)


def write_raw_document(directory: str | Path, raw: RawDocument) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    text_path = directory / f"{raw.doc_id}.txt"
    text_path.write_text(raw.text, encoding="utf-8", newline="\n")

    line_starts = [0]
    for line in raw.text.split("\n")[:-1]:
        line_starts.append(line_starts[-1] + len(line) + 1)

    def offset_line(offset: int) -> int:
        lo = 0
        for i, s in enumerate(line_starts):
            if s <= offset:
                lo = i
        return lo

    chapters = [{"n": n, "start_line": offset_line(a),
                 "end_line": offset_line(b - 1) + 1 if b > a else offset_line(a)}
                for n, a, b in raw.chapter_spans]
    meta_path = directory / f"{raw.doc_id}.meta.json"
    write_json(meta_path, {"schema": SCHEMA, "kind": "document", "doc_id": raw.doc_id,
                           "language": raw.language, "chapters": chapters})
    return text_path, meta_path


# --- segmented documents ----------------------------------------------------

def document_to_dict(doc: Document, granularity: str) -> dict:
    return {
        "schema": SCHEMA,
        "kind": "segments",
        "doc_id": doc.doc_id,
        "language": doc.language,
        "granularity": granularity,
        "text": doc.text,
        "tokens": [[t.id, t.char_start, t.char_end] for t in doc.tokens],
        "chapters": [
            {
                "n": ch.n,
                "segments": [
                    {
                        "index": s.index,
                        "text": s.text,
                        "char_start": s.char_start,
                        "char_end": s.char_end,
                        "token_span": list(s.token_span) if s.token_span else None,
                    }
                    for s in ch.segments
                ],
            }
            for ch in doc.chapters
        ],
    }


def document_from_dict(obj: dict) -> Document:
    text = obj["text"]
    tokens = tuple(Token(tid, text[a:b], a, b) for tid, a, b in obj.get("tokens", []))
    chapters = []
    granularity = obj.get("granularity", "sentence")
    for ch in obj["chapters"]:
        segs = tuple(
            Segment(
                doc_id=obj["doc_id"], chapter=ch["n"], index=s["index"], text=s["text"],
                char_start=s["char_start"], char_end=s["char_end"],
                granularity=granularity,
                token_span=tuple(s["token_span"]) if s.get("token_span") else None,
            )
            for s in ch["segments"]
        )
        chapters.append(Chapter(n=ch["n"], segments=segs))
    return Document(doc_id=obj["doc_id"], language=obj["language"], text=text,
                    chapters=tuple(chapters), tokens=tokens)


def write_document(path: str | Path, doc: Document, granularity: str) -> None:
    write_json(path, document_to_dict(doc, granularity))


def read_document(path: str | Path) -> Document:
    return document_from_dict(read_json(path, kind="segments"))


# --- alignment results ------------------------------------------------------

def bead_id(position: int) -> str:
    return f"b{position + 1:04d}"


def params_to_dict(p: AlignParams) -> dict:
    return {
        "max_src": p.max_src, "max_tgt": p.max_tgt,
        "merge_penalty": p.merge_penalty, "gap_score": p.gap_score,
        "band_width": p.band_width, "margin_mode": p.margin_mode,
    }


def params_from_dict(obj: dict) -> AlignParams:
    return AlignParams(
        max_src=obj.get("max_src", 3), max_tgt=obj.get("max_tgt", 3),
        merge_penalty=obj.get("merge_penalty", 0.15),
        gap_score=obj.get("gap_score", 0.10),
        band_width=obj.get("band_width"), margin_mode=obj.get("margin_mode", False),
    )


def alignment_to_dict(result: AlignmentResult, src_doc: Document | None = None) -> dict:
    """Serialize beads with their token anchors (when the source document
    carries tokens)."""
    beads = []
    src_segs = None
    if src_doc is not None:
        src_segs = src_doc.chapter(result.chapter).segments
    for i, b in enumerate(result.beads):
        from_token = to_token = None
        if src_segs is not None and b.src:
            first_span = src_segs[b.src[0]].token_span
            last_span = src_segs[b.src[-1]].token_span
            if first_span and last_span and src_doc.tokens:
                from_token = src_doc.tokens[first_span[0]].id
                to_token = src_doc.tokens[last_span[1]].id
        entry = {
            "id": bead_id(i),
            "src": list(b.src),
            "tgt": list(b.tgt),
            "type": b.type,
            "sim": None if b.similarity is None else round(float(b.similarity), 6),
            "from_token": from_token,
            "to_token": to_token,
        }
        if b.reordered:
            entry["reordered"] = True
        beads.append(entry)
    return {
        "schema": SCHEMA,
        "kind": "alignment",
        "src_doc": result.src_doc_id,
        "tgt_doc": result.tgt_doc_id,
        "chapter": result.chapter,
        "granularity": result.granularity,
        "provider": result.provider_id,
        "params": params_to_dict(result.params),
        "beads": beads,
    }


def alignment_from_dict(obj: dict) -> AlignmentResult:
    beads = tuple(
        Bead(
            src=tuple(b["src"]), tgt=tuple(b["tgt"]),
            similarity=b.get("sim"), reordered=bool(b.get("reordered", False)),
        )
        for b in obj["beads"]
    )
    return AlignmentResult(
        beads=beads, src_doc_id=obj["src_doc"], tgt_doc_id=obj["tgt_doc"],
        chapter=obj["chapter"], params=params_from_dict(obj.get("params", {})),
        provider_id=obj.get("provider", "unknown"),
        granularity=obj.get("granularity", "sentence"),
    )


def write_alignment(path: str | Path, result: AlignmentResult,
                    src_doc: Document | None = None) -> None:
    write_json(path, alignment_to_dict(result, src_doc))


def read_alignment(path: str | Path) -> AlignmentResult:
    return alignment_from_dict(read_json(path, kind="alignment"))
