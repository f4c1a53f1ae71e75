from pathlib import Path

import pytest

from mdealign.embedding import MockEmbeddingProvider
from mdealign.model import Segment

FIXTURES = Path(__file__).parent / "fixtures"


def make_segments(texts, doc_id="doc", chapter=1, granularity="sentence"):
    """Segments laid out as if joined by single spaces."""
    out = []
    pos = 0
    for i, t in enumerate(texts):
        out.append(Segment(doc_id=doc_id, chapter=chapter, index=i, text=t,
                           char_start=pos, char_end=pos + len(t),
                           granularity=granularity))
        pos += len(t) + 1
    return out


@pytest.fixture
def provider():
    return MockEmbeddingProvider()


@pytest.fixture
def fixtures_dir():
    return FIXTURES
