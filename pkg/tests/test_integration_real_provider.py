"""Integration test against real multilingual embeddings.

Needs tests/fixtures/real_provider/vectors.mdev (see the README there);
skipped when absent, since no neural model runs in this environment.
"""

from pathlib import Path

import pytest

from mdealign.alignment import align
from mdealign.embedding import FileEmbeddingProvider

from conftest import FIXTURES, make_segments

VECTORS = FIXTURES / "real_provider" / "vectors.mdev"
TEXTS = FIXTURES / "real_provider" / "texts.txt"

needs_vectors = pytest.mark.skipif(not VECTORS.exists(),
                                   reason="no committed real-provider vectors")


@needs_vectors
def test_untranslated_segment_becomes_omission():
    lines = TEXTS.read_text(encoding="utf-8").splitlines()
    # block order: 4 source singles, 3 pairs, 2 triples, then target blocks
    src_texts = lines[:4]
    tgt_texts = lines[9:12]
    provider = FileEmbeddingProvider(VECTORS, TEXTS, provider_id="labse-file")
    src = make_segments(src_texts, doc_id="italian-1840")
    tgt = make_segments(tgt_texts, doc_id="russian-1854")
    result = align(src, tgt, provider)

    # the soldiers' misdeeds sentence has no Russian counterpart
    by_segment = {k: b for b in result.beads for k in b.src}
    assert by_segment[2].type == "1-0"
    assert by_segment[0].tgt and by_segment[1].tgt
