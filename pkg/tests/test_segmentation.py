import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from mdealign.model import PHRASE, SENTENCE, Segment
from mdealign.segmentation import (HttpSegmentationService, SegmenterConfig,
                                   SegmentationServiceError, TranscriptCache,
                                   build_prompt, llm_segment, split_punctuation,
                                   split_sentences)
from mdealign.synth import make_source_texts

from conftest import FIXTURES


def seg_texts(segments):
    return [s.text for s in segments]


def check_lossless(text, segments, offset=0):
    pos = 0
    for s in segments:
        a, b = s.char_start - offset, s.char_end - offset
        assert text[a:b] == s.text
        assert text[pos:a].strip() == ""
        pos = b
    assert text[pos:].strip() == ""


def test_two_plain_sentences():
    cfg = SegmenterConfig()
    segs = split_sentences("Era bello. Pareva vero.", cfg)
    assert seg_texts(segs) == ["Era bello.", "Pareva vero."]
    assert [s.index for s in segs] == [0, 1]


def test_protected_abbreviation():
    cfg = SegmenterConfig.for_language("en")
    segs = split_sentences("Mr. Smith arrived. He left.", cfg)
    assert seg_texts(segs) == ["Mr. Smith arrived.", "He left."]


def test_abbreviation_not_protected_without_list():
    cfg = SegmenterConfig(abbreviations=frozenset())
    segs = split_sentences("Mr. Smith arrived. He left.", cfg)
    assert len(segs) == 3


def test_terminator_before_lowercase_keeps_going():
    cfg = SegmenterConfig()
    segs = split_sentences("Aspetta... poi venne. Dopo.", cfg)
    assert seg_texts(segs) == ["Aspetta... poi venne.", "Dopo."]


def test_quote_closing_after_terminator():
    cfg = SegmenterConfig.for_language("it")
    text = "«Signor curato!» disse un uomo. «Non si lasci sfuggire!» Rispose lui."
    segs = split_sentences(text, cfg)
    assert seg_texts(segs) == [
        "«Signor curato!» disse un uomo.",
        "«Non si lasci sfuggire!»",
        "Rispose lui.",
    ]


def test_cjk_terminators_unconditional():
    cfg = SegmenterConfig()
    segs = split_sentences("第一句。第二句！第三句", cfg)
    assert seg_texts(segs) == ["第一句。", "第二句！", "第三句"]


def test_chapter_fixture_hand_count():
    # hand-applied boundary rules on the committed fixture give 8 sentences
    text = (FIXTURES / "chapter1_it.txt").read_text(encoding="utf-8")
    cfg = SegmenterConfig.for_language("it")
    segs = split_sentences(text, cfg)
    assert len(segs) == 8
    check_lossless(text, segs)


def test_offsets_record_whitespace():
    cfg = SegmenterConfig()
    text = "Uno due.   Tre quattro.  "
    segs = split_sentences(text, cfg, doc_id="d", chapter=2, offset=100)
    assert [s.char_start for s in segs] == [100, 111]
    check_lossless(text, segs, offset=100)
    assert all(s.chapter == 2 and s.doc_id == "d" for s in segs)


def test_split_punctuation_minimal():
    cfg = SegmenterConfig(strategy="punctuation", min_segment_chars=1)
    sent = Segment(doc_id="d", chapter=1, index=0, text="a, b", char_start=0, char_end=4)
    parts = split_punctuation([sent], cfg)
    assert seg_texts(parts) == ["a,", "b"]
    assert all(p.granularity == PHRASE for p in parts)


def test_split_punctuation_merge_rule():
    # hand-applied merge rule with min 10 over the three soft-break fragments
    text = "a ogni modo, Dio vi provvederà, per il vostro meglio;"
    cfg = SegmenterConfig(strategy="punctuation", min_segment_chars=10)
    sent = Segment(doc_id="d", chapter=1, index=0, text=text, char_start=0,
                   char_end=len(text))
    parts = split_punctuation([sent], cfg)
    assert seg_texts(parts) == [
        "a ogni modo,", "Dio vi provvederà,", "per il vostro meglio;",
    ]


def test_split_punctuation_merges_short_tail_left():
    text = "una frase piuttosto lunga, poi x"
    cfg = SegmenterConfig(strategy="punctuation", min_segment_chars=10)
    sent = Segment(doc_id="d", chapter=1, index=0, text=text, char_start=0,
                   char_end=len(text))
    parts = split_punctuation([sent], cfg)
    assert seg_texts(parts) == ["una frase piuttosto lunga, poi x"]


def test_split_punctuation_no_soft_breaks_identity():
    cfg = SegmenterConfig(strategy="punctuation")
    sent = Segment(doc_id="d", chapter=1, index=0, text="niente da spezzare qui",
                   char_start=0, char_end=22)
    parts = split_punctuation([sent], cfg)
    assert seg_texts(parts) == ["niente da spezzare qui"]


def test_split_punctuation_idempotent():
    cfg = SegmenterConfig(strategy="punctuation", min_segment_chars=8)
    text = "primo pezzo, secondo pezzo; terzo, e un finale piuttosto lungo."
    sent = Segment(doc_id="d", chapter=1, index=0, text=text, char_start=0,
                   char_end=len(text))
    once = split_punctuation([sent], cfg)
    twice = split_punctuation(once, cfg)
    assert seg_texts(twice) == seg_texts(once)
    assert [(s.char_start, s.char_end) for s in twice] == \
           [(s.char_start, s.char_end) for s in once]


def test_phrase_boundaries_refine_sentences():
    text = " ".join(make_source_texts(5, 12))
    cfg = SegmenterConfig.for_language("xx")
    sentences = split_sentences(text, cfg)
    phrases = split_punctuation(sentences, SegmenterConfig(strategy="punctuation"))
    check_lossless(text, sentences)
    check_lossless(text, phrases)
    starts = {s.char_start for s in phrases}
    ends = {s.char_end for s in phrases}
    for s in sentences:
        assert s.char_start in starts
        assert s.char_end in ends


# --- segmentation service ----------------------------------------------------

class FakeService:
    def __init__(self, response):
        self.response = response
        self.calls = 0
        self.model = "fake"

    def complete(self, prompt):
        self.calls += 1
        return self.response


def _sentence(text):
    return Segment(doc_id="d", chapter=1, index=0, text=text, char_start=0,
                   char_end=len(text))


def test_llm_segment_valid_split():
    sent = _sentence("Diceva il suo ufizio, e si fermava a guardare il lago.")
    svc = FakeService("1. Diceva il suo ufizio,\n2. e si fermava a guardare il lago.")
    out = llm_segment(svc, sent)
    assert not out.fallback
    assert seg_texts(out.segments) == [
        "Diceva il suo ufizio,", "e si fermava a guardare il lago."]
    assert [s.granularity for s in out.segments] == [PHRASE, PHRASE]
    # offsets are real spans of the sentence
    for s in out.segments:
        assert sent.text[s.char_start:s.char_end] == s.text


def test_llm_segment_echo_unsplit():
    sent = _sentence("Niente da dividere qui oggi.")
    svc = FakeService("1. Niente da dividere qui oggi.")
    out = llm_segment(svc, sent)
    assert not out.fallback
    assert seg_texts(out.segments) == ["Niente da dividere qui oggi."]


def test_llm_segment_bad_concatenation_falls_back():
    sent = _sentence("Una frase abbastanza lunga, con una virgola interna.")
    svc = FakeService("1. Testo inventato di sana pianta\n2. che non corrisponde.")
    out = llm_segment(svc, sent, cfg=SegmenterConfig(strategy="punctuation",
                                                     min_segment_chars=5))
    assert out.fallback
    assert out.reason
    assert seg_texts(out.segments) == [
        "Una frase abbastanza lunga,", "con una virgola interna."]


def test_llm_segment_malformed_response_falls_back():
    sent = _sentence("Un altro esempio, ancora con virgola.")
    svc = FakeService("non so cosa rispondere")
    out = llm_segment(svc, sent, cfg=SegmenterConfig(strategy="punctuation",
                                                     min_segment_chars=5))
    assert out.fallback
    assert out.reason == "response is not a numbered list"


def test_llm_transcript_replayed_from_cache(fixtures_dir):
    # committed transcript; the service object refuses to answer, so a pass
    # proves the response came from the cache file
    sentence = _sentence(
        "Diceva tranquillamente il suo ufizio, e talvolta si fermava a guardare il lago.")

    class Refusing:
        model = "test-model"

        def __init__(self):
            self.cache = TranscriptCache(fixtures_dir / "llm_cache")

        def complete(self, prompt):
            cached = self.cache.get(self.model, prompt)
            assert cached is not None, "expected a cache hit"
            return cached

    out = llm_segment(Refusing(), sentence)
    assert not out.fallback
    assert seg_texts(out.segments) == [
        "Diceva tranquillamente il suo ufizio,",
        "e talvolta si fermava a guardare il lago.",
    ]


class _SegmentHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        body = self.rfile.read(int(self.headers["Content-Length"])).decode("utf-8")
        sentence = body.rsplit("Sentence: ", 1)[1].split("\nSegments:")[0]
        parts = [p.strip() for p in sentence.split(",")]
        pieces = []
        for i, p in enumerate(parts):
            pieces.append(p + ("," if i < len(parts) - 1 else ""))
        payload = "\n".join(f"{i + 1}. {p}" for i, p in enumerate(pieces)).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "text/plain; charset=utf-8")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def segment_server():
    server = HTTPServer(("127.0.0.1", 0), _SegmentHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/segment"
    server.shutdown()


def test_http_segmentation_service(segment_server, tmp_path):
    svc = HttpSegmentationService(segment_server, model="m1", cache_dir=tmp_path)
    sent = _sentence("Prima parte della frase, seconda parte della frase.")
    out = llm_segment(svc, sent)
    assert not out.fallback
    assert seg_texts(out.segments) == [
        "Prima parte della frase,", "seconda parte della frase."]
    # second call is served from the transcript cache
    cache_files = list(tmp_path.glob("*.json"))
    assert len(cache_files) == 1
    out2 = llm_segment(svc, sent)
    assert seg_texts(out2.segments) == seg_texts(out.segments)


def test_http_segmentation_service_unreachable():
    svc = HttpSegmentationService("http://127.0.0.1:9/none", model="m1",
                                  max_attempts=2, timeout=0.2, retry_wait=0.01)
    with pytest.raises(SegmentationServiceError):
        svc.complete("anything")


def test_config_validation():
    with pytest.raises(ValueError):
        SegmenterConfig(min_segment_chars=0)
    with pytest.raises(ValueError):
        SegmenterConfig(terminators=frozenset({"."}), soft_breaks=frozenset({"."}))
    with pytest.raises(ValueError):
        SegmenterConfig(strategy="magic")


def test_few_shot_prompt_contains_exemplars():
    prompt = build_prompt("Frase nuova.", [("Vecchia frase, divisa.",
                                            ["Vecchia frase,", "divisa."])])
    assert "Vecchia frase, divisa." in prompt
    assert "1. Vecchia frase," in prompt
    assert prompt.rstrip().endswith("Segments:")
