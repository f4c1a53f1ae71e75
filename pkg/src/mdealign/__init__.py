"""mdealign: alignment pipeline for multilingual digital editions.

Segment literary texts, align them through multilingual embeddings and
monotone dynamic programming, score the result with readability-oriented
metrics, diagnose it in embedding space, and publish token-anchored TEI
plus a static side-by-side edition.
"""

from .alignment import align, anchor_banded_align, enumerate_optimal, score_bead
from .analysis import (AnalysisReport, ClusterConfig, CosineDBSCAN, ExactTSNE,
                       ProjectionConfig, analyze)
from .embedding import (BlockEmbedder, EmbeddingMatrix, FileEmbeddingProvider,
                        HttpEmbeddingProvider, MockEmbeddingProvider, embed,
                        mock_embed, read_vectors, write_vectors)
from .metrics import (GoldScore, MetricsReport, compare_granularities,
                      compute_metrics, score_against_gold)
from .model import (AlignParams, AlignmentResult, Bead, Chapter, Document,
                    Segment, Token, classify_bead, tokenize, validate_document)
from .pipeline import run_pipeline
from .segmentation import (SegmenterConfig, llm_segment, split_punctuation,
                           split_sentences)
from .synth import NoiseProfile, generate, make_book, recovery_score
from .tei import (encode_source_tei, encode_translation_tei, parse_source_tei,
                  validate_links)

__version__ = "0.1.0"

__all__ = [
    "AlignParams", "AlignmentResult", "AnalysisReport", "Bead", "BlockEmbedder",
    "Chapter", "ClusterConfig", "CosineDBSCAN", "Document", "EmbeddingMatrix",
    "ExactTSNE", "FileEmbeddingProvider", "GoldScore", "HttpEmbeddingProvider",
    "MetricsReport", "MockEmbeddingProvider", "NoiseProfile", "ProjectionConfig",
    "Segment", "SegmenterConfig", "Token", "align", "analyze",
    "anchor_banded_align", "classify_bead", "compare_granularities",
    "compute_metrics", "embed", "encode_source_tei", "encode_translation_tei",
    "enumerate_optimal", "generate", "llm_segment", "make_book", "mock_embed",
    "parse_source_tei", "read_vectors", "recovery_score", "run_pipeline",
    "score_against_gold", "score_bead", "split_punctuation", "split_sentences",
    "tokenize", "validate_document", "validate_links", "write_vectors",
]
