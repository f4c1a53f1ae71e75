import re

import pytest
from hypothesis import given, strategies as st

from mdealign.model import (AlignParams, Bead, Chapter, Document, Segment,
                            Token, assign_token_spans, classify_bead,
                            monotonicity_violations, partition_violations,
                            tokenize, validate_document)

from conftest import FIXTURES

# independent one-pass scanner: CJK singletons, alnum runs (CJK excluded),
# any other non-space mark on its own
ORACLE_TOKEN_RE = re.compile(
    r"[㐀-䶿一-鿿豈-﫿]"
    r"|[^\W_㐀-䶿一-鿿豈-﫿]+"
    r"|[^\w\s]|_",
    re.UNICODE,
)


def test_tokenize_empty():
    assert tokenize("") == []


def test_tokenize_simple():
    tokens = tokenize("Quel ramo.")
    assert [t.text for t in tokens] == ["Quel", "ramo", "."]
    assert [t.id for t in tokens] == ["w00001", "w00002", "w00003"]
    assert [(t.char_start, t.char_end) for t in tokens] == [(0, 4), (5, 9), (9, 10)]


def test_tokenize_cjk_per_character():
    tokens = tokenize("中文测试 abc。")
    assert [t.text for t in tokens] == ["中", "文", "测", "试", "abc", "。"]


def test_tokenize_apostrophes_split():
    assert [t.text for t in tokenize("un'ampia")] == ["un", "'", "ampia"]


def test_tokenize_count_matches_regex_oracle():
    text = (FIXTURES / "chapter1_it.txt").read_text(encoding="utf-8")
    assert len(tokenize(text)) == len(ORACLE_TOKEN_RE.findall(text))


@given(st.text(max_size=200))
def test_tokenize_round_trip(text):
    tokens = tokenize(text)
    # every character outside a token span is whitespace, and concatenating
    # tokens with the recorded gaps reproduces the input
    rebuilt = []
    pos = 0
    for t in tokens:
        gap = text[pos:t.char_start]
        assert gap.strip() == ""
        rebuilt.append(gap)
        rebuilt.append(t.text)
        assert text[t.char_start:t.char_end] == t.text
        pos = t.char_end
    tail = text[pos:]
    assert tail.strip() == ""
    rebuilt.append(tail)
    assert "".join(rebuilt) == text


@given(st.text(max_size=200))
def test_tokenize_ids_sequential(text):
    tokens = tokenize(text)
    assert [t.id for t in tokens] == [f"w{i + 1:05d}" for i in range(len(tokens))]


def test_classify_bead():
    assert classify_bead(1, 1) == "1-1"
    assert classify_bead(1, 2) == "1-N"
    assert classify_bead(3, 1) == "N-1"
    assert classify_bead(2, 3) == "N-M"
    assert classify_bead(1, 0) == "1-0"
    assert classify_bead(0, 1) == "0-1"
    with pytest.raises(ValueError):
        classify_bead(0, 0)


def test_bead_type_property():
    assert Bead(src=(0, 1), tgt=(0,)).type == "N-1"
    assert Bead(src=(2,), tgt=()).is_gap


def _doc(text, seg_texts):
    tokens = tuple(tokenize(text))
    segs = []
    pos = 0
    for i, s in enumerate(seg_texts):
        start = text.index(s, pos)
        segs.append(Segment(doc_id="d", chapter=1, index=i, text=s,
                            char_start=start, char_end=start + len(s)))
        pos = start + len(s)
    segs = assign_token_spans(segs, tokens)
    return Document(doc_id="d", language="it", text=text,
                    chapters=(Chapter(n=1, segments=tuple(segs)),), tokens=tokens)


def test_validate_document_ok():
    doc = _doc("Era bello. Pareva vero.", ["Era bello.", "Pareva vero."])
    assert validate_document(doc) == []


def test_validate_document_duplicate_token_id():
    doc = _doc("Era bello. Pareva vero.", ["Era bello.", "Pareva vero."])
    tokens = list(doc.tokens)
    tokens[1] = Token(tokens[0].id, tokens[1].text, tokens[1].char_start,
                      tokens[1].char_end)
    bad = Document(doc_id="d", language="it", text=doc.text, chapters=doc.chapters,
                   tokens=tuple(tokens))
    violations = validate_document(bad)
    assert any(tokens[0].id in v for v in violations)


def test_validate_document_overlapping_token_span():
    doc = _doc("Era bello. Pareva vero.", ["Era bello.", "Pareva vero."])
    segs = list(doc.chapters[0].segments)
    first_span = segs[0].token_span
    segs[1] = Segment(doc_id="d", chapter=1, index=1, text=segs[1].text,
                      char_start=segs[1].char_start, char_end=segs[1].char_end,
                      token_span=(first_span[1], first_span[1] + 1))
    bad = Document(doc_id="d", language="it", text=doc.text,
                   chapters=(Chapter(n=1, segments=tuple(segs)),), tokens=doc.tokens)
    violations = validate_document(bad)
    assert any("token_span overlaps" in v and "segment 1" in v for v in violations)


def test_assign_token_spans_monotone():
    doc = _doc("Era bello. Pareva vero.", ["Era bello.", "Pareva vero."])
    spans = [s.token_span for s in doc.chapters[0].segments]
    assert spans == [(0, 2), (3, 5)]


def test_partition_violations():
    beads = (Bead(src=(0,), tgt=(0,)), Bead(src=(1, 2), tgt=(1,)))
    assert partition_violations(beads, 3, 2) == []
    assert partition_violations(beads, 4, 2)  # missing src 3
    gappy = (Bead(src=(0,), tgt=()), Bead(src=(1,), tgt=(0,)))
    assert partition_violations(gappy, 2, 1) == []
    non_contig = (Bead(src=(0, 2), tgt=(0,)), Bead(src=(1,), tgt=(1,)))
    assert partition_violations(non_contig, 3, 2)


def test_monotonicity_violations():
    ok = (Bead(src=(0,), tgt=(0,)), Bead(src=(1,), tgt=(1,)))
    assert monotonicity_violations(ok) == []
    crossed = (Bead(src=(0,), tgt=(1,)), Bead(src=(1,), tgt=(0,)))
    assert monotonicity_violations(crossed)


def test_align_params_validation():
    with pytest.raises(ValueError):
        AlignParams(max_src=0)
    with pytest.raises(ValueError):
        AlignParams(gap_score=1.5)
    with pytest.raises(ValueError):
        AlignParams(band_width=2)  # below max_src + max_tgt
    AlignParams(band_width=6)
