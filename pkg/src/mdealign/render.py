"""Static web edition: two-column chapter pages plus the data files the
viewer consumes.

Every bead appears exactly once per column: beads with text on a side
render their segments there, gap beads render a marker element in the
column where the text is missing (omissions in the target column,
insertions in the source column).  Pages reference only relative assets,
so the output tree works from a file system with no server-side anything.
"""

from __future__ import annotations

import html as html_mod
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .dataio import SCHEMA, bead_id, dumps
from .model import AlignmentResult, Document, Segment

OMISSION_MARK = "∅ omitted in translation"
INSERTION_MARK = "+ inserted by translator"


class RenderError(Exception):
    pass


def esc(s: str) -> str:
    return html_mod.escape(s, quote=True)


def page_name(chapter: int, granularity: str, default: bool) -> str:
    suffix = "" if default else f".{granularity}"
    return f"chapter-{chapter}{suffix}.html"


def data_name(chapter: int, granularity: str, default: bool, kind: str) -> str:
    suffix = "" if default else f".{granularity}"
    return f"chapter-{chapter}{suffix}.{kind}"


def _bead_attrs(i: int, bead) -> str:
    attrs = f'data-bead="{bead_id(i)}" data-type="{bead.type}"'
    if bead.similarity is not None:
        attrs += f' data-sim="{bead.similarity:.3f}"'
    return attrs


def _column(result: AlignmentResult, segments: Sequence[Segment], side: str) -> list[str]:
    lines = [f'      <section class="column {side}" data-side="{side}">']
    for i, b in enumerate(result.beads):
        own = b.src if side == "src" else b.tgt
        if own:
            lines.append(f'        <div class="bead" {_bead_attrs(i, b)}>')
            for k in own:
                lines.append(f'          <span class="segment" data-seg="{k}">'
                             f'{esc(segments[k].text)}</span>')
            lines.append("        </div>")
        else:
            kind = "omission" if side == "tgt" else "insertion"
            mark = OMISSION_MARK if kind == "omission" else INSERTION_MARK
            lines.append(f'        <div class="bead gap-marker {kind}" '
                         f'{_bead_attrs(i, b)} role="note">{esc(mark)}</div>')
    lines.append("      </section>")
    return lines


@dataclass(frozen=True)
class RenderedChapter:
    translation_id: str
    language: str
    granularity: str
    default: bool
    chapter: int
    html: bytes
    alignment: dict
    viz: dict | None


def render_chapter(src_doc: Document, result: AlignmentResult,
                   tgt_segments: Sequence[Segment], alignment_data: dict,
                   viz_data: dict | None, *, translation_id: str,
                   language: str = "und", default_granularity: bool = True,
                   source_label: str | None = None,
                   translation_label: str | None = None) -> RenderedChapter:
    """One chapter page: source and target columns with bead identifiers,
    markers for gaps, and pointers to the chapter's data files."""
    chapter = src_doc.chapter(result.chapter)
    if result.src_doc_id != src_doc.doc_id:
        raise RenderError(f"result is for {result.src_doc_id!r}, "
                          f"document is {src_doc.doc_id!r}")
    gran = result.granularity
    default = default_granularity
    alignment_ref = f"../data/{translation_id}/{data_name(result.chapter, gran, default, 'alignment')}"
    viz_attr = ""
    if viz_data is not None:
        viz_ref = f"../data/{translation_id}/{data_name(result.chapter, gran, default, 'viz')}"
        viz_attr = f'data-viz="{viz_ref}" '
    src_label = source_label or src_doc.doc_id
    tgt_label = translation_label or translation_id

    lines = [
        "<!DOCTYPE html>",
        f'<html lang="{esc(src_doc.language)}">',
        "  <head>",
        '    <meta charset="utf-8"/>',
        f"    <title>{esc(src_label)} · {esc(tgt_label)} — chapter {result.chapter}</title>",
        '    <link rel="stylesheet" href="../assets/site.css"/>',
        "  </head>",
        f'  <body data-alignment="{alignment_ref}" {viz_attr}'
        f'data-manifest="../data/manifest.json" data-translation="{esc(translation_id)}" '
        f'data-chapter="{result.chapter}" data-granularity="{gran}">',
        "    <header>",
        f'      <a href="../index.html">index</a>',
        f"      <h1>{esc(src_label)} · {esc(tgt_label)}</h1>",
        f'      <p class="meta">chapter {result.chapter} · {gran} granularity · '
        f'{result.pair_count} pairs · {result.gap_count} gaps</p>',
        '      <nav id="viewer-controls"></nav>',
        "    </header>",
        '    <main class="columns">',
        *_column(result, chapter.segments, "src"),
        *_column(result, tgt_segments, "tgt"),
        "    </main>",
        '    <aside id="viewer-panel"></aside>',
        '    <script src="../assets/viewer.js"></script>',
        "  </body>",
        "</html>",
        "",
    ]
    return RenderedChapter(
        translation_id=translation_id, language=language, granularity=gran,
        default=default, chapter=result.chapter, html="\n".join(lines).encode("utf-8"),
        alignment=alignment_data, viz=viz_data,
    )


def _default_assets() -> dict[str, bytes]:
    out = {}
    base = resources.files("mdealign").joinpath("assets")
    for name in ("site.css", "viewer.js"):
        out[name] = base.joinpath(name).read_bytes()
    return out


def render_site(out_dir: str | Path, source: Document,
                entries: Sequence[RenderedChapter],
                viewer_bundle: bytes | None = None) -> dict:
    """Write the final tree: index, chapter pages, data files, assets and
    the manifest enumerating every granularity of every translation."""
    out_dir = Path(out_dir)
    if not entries:
        raise RenderError("nothing to render")
    seen: set[tuple[str, str, int]] = set()
    for e in entries:
        key = (e.translation_id, e.granularity, e.chapter)
        if key in seen:
            raise RenderError(f"duplicate chapter {key}")
        seen.add(key)

    (out_dir / "assets").mkdir(parents=True, exist_ok=True)
    assets = _default_assets()
    if viewer_bundle is not None:
        assets["viewer.js"] = viewer_bundle
    for name, payload in assets.items():
        (out_dir / "assets" / name).write_bytes(payload)

    translations: dict[str, dict] = {}
    for e in sorted(entries, key=lambda e: (e.translation_id, e.granularity, e.chapter)):
        page = f"{e.translation_id}/{page_name(e.chapter, e.granularity, e.default)}"
        alignment_path = (f"data/{e.translation_id}/"
                          f"{data_name(e.chapter, e.granularity, e.default, 'alignment')}")
        viz_path = (f"data/{e.translation_id}/"
                    f"{data_name(e.chapter, e.granularity, e.default, 'viz')}")

        (out_dir / page).parent.mkdir(parents=True, exist_ok=True)
        (out_dir / page).write_bytes(e.html)
        (out_dir / alignment_path).parent.mkdir(parents=True, exist_ok=True)
        (out_dir / alignment_path).write_text(dumps(e.alignment), encoding="utf-8",
                                              newline="\n")
        if e.viz is not None:
            (out_dir / viz_path).write_text(dumps(e.viz), encoding="utf-8", newline="\n")

        tr = translations.setdefault(e.translation_id, {
            "id": e.translation_id, "language": e.language, "granularities": {}})
        gran = tr["granularities"].setdefault(e.granularity, {
            "granularity": e.granularity, "default": e.default, "chapters": []})
        gran["chapters"].append({
            "n": e.chapter,
            "page": page,
            "alignment": alignment_path,
            "viz": viz_path if e.viz is not None else None,
        })

    manifest = {
        "schema": SCHEMA,
        "kind": "manifest",
        "source": {"doc_id": source.doc_id, "language": source.language},
        "translations": [
            {
                "id": tr["id"],
                "language": tr["language"],
                "granularities": [tr["granularities"][g]
                                  for g in sorted(tr["granularities"])],
            }
            for tr in (translations[t] for t in sorted(translations))
        ],
    }
    (out_dir / "data").mkdir(parents=True, exist_ok=True)
    (out_dir / "data" / "manifest.json").write_text(dumps(manifest), encoding="utf-8",
                                                    newline="\n")

    index = [
        "<!DOCTYPE html>",
        '<html lang="en">',
        "  <head>",
        '    <meta charset="utf-8"/>',
        f"    <title>{esc(source.doc_id)} — aligned edition</title>",
        '    <link rel="stylesheet" href="assets/site.css"/>',
        "  </head>",
        "  <body>",
        f"    <h1>{esc(source.doc_id)}</h1>",
        '    <main class="toc">',
    ]
    for tr in manifest["translations"]:
        index.append(f'      <section class="translation">')
        index.append(f'        <h2>{esc(tr["id"])} <small>({esc(tr["language"])})</small></h2>')
        for gran in tr["granularities"]:
            label = gran["granularity"]
            index.append(f'        <h3>{esc(label)} granularity</h3>')
            index.append("        <ul>")
            for ch in gran["chapters"]:
                index.append(f'          <li><a href="{ch["page"]}">chapter {ch["n"]}</a></li>')
            index.append("        </ul>")
        index.append("      </section>")
    index.extend([
        "    </main>",
        "  </body>",
        "</html>",
        "",
    ])
    (out_dir / "index.html").write_text("\n".join(index), encoding="utf-8", newline="\n")
    return manifest
