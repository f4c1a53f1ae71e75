"""Monotone dynamic-programming alignment of segment sequences into beads.

The aligner partitions both sequences into contiguous blocks and gaps,
maximizing the summed block scores (cosine of block embeddings minus a
merge penalty) plus a fixed score per gap step.  Gaps are how omissions
(source side) and insertions (target side) surface.  A brute-force
enumerator over all monotone partitions doubles as the correctness oracle
for small instances.
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Sequence

import numpy as np

from .embedding import BlockEmbedder, EmbeddingProvider
from .model import (AlignParams, AlignmentResult, Bead, Segment,
                    monotonicity_violations, partition_violations)

GAP_SRC = (1, 0)
GAP_TGT = (0, 1)


def transition_order(max_src: int, max_tgt: int) -> list[tuple[int, int]]:
    """All DP transitions in tie-break preference order: smaller total block
    first, then smaller source block, with the source-gap step ahead of the
    target-gap step."""
    blocks = sorted(
        ((s, t) for s in range(1, max_src + 1) for t in range(1, max_tgt + 1)),
        key=lambda st: (st[0] + st[1], st[0]),
    )
    return [GAP_SRC, GAP_TGT] + blocks


def _as_embedder(provider) -> BlockEmbedder:
    return provider if isinstance(provider, BlockEmbedder) else BlockEmbedder(provider)


def score_bead(src_block: Sequence[str], tgt_block: Sequence[str],
               provider, params: AlignParams = AlignParams()) -> float:
    """Score one candidate bead: cosine of the two block embeddings minus
    the merge penalty for every segment beyond the first two."""
    if not 1 <= len(src_block) <= params.max_src:
        raise ValueError(f"source block size {len(src_block)} outside 1..{params.max_src}")
    if not 1 <= len(tgt_block) <= params.max_tgt:
        raise ValueError(f"target block size {len(tgt_block)} outside 1..{params.max_tgt}")
    embedder = _as_embedder(provider)
    u = embedder.embed_block(src_block).astype(np.float64)
    v = embedder.embed_block(tgt_block).astype(np.float64)
    cosine = float(u @ v)
    return cosine - params.merge_penalty * (len(src_block) + len(tgt_block) - 2)


class _ScoreTable:
    """Precomputed cosines and penalized scores for every (block, block)
    pair, backed by one matrix product over all contiguous spans."""

    def __init__(self, src_texts: Sequence[str], tgt_texts: Sequence[str],
                 embedder: BlockEmbedder, params: AlignParams):
        self.params = params
        n, m = len(src_texts), len(tgt_texts)
        src_spans = [(i0, s) for s in range(1, params.max_src + 1)
                     for i0 in range(n - s + 1)]
        tgt_spans = [(j0, t) for t in range(1, params.max_tgt + 1)
                     for j0 in range(m - t + 1)]
        A = np.stack([embedder.embed_block(src_texts[i0:i0 + s])
                      for i0, s in src_spans]).astype(np.float64)
        B = np.stack([embedder.embed_block(tgt_texts[j0:j0 + t])
                      for j0, t in tgt_spans]).astype(np.float64)
        raw = A @ B.T
        cos = self._margin_normalize(raw, A, B, params) if params.margin_mode else raw
        self._raw = raw
        srow = {span: r for r, span in enumerate(src_spans)}
        trow = {span: c for c, span in enumerate(tgt_spans)}
        self.cosine: dict[tuple[int, int], list[list[float]]] = {}
        self.score: dict[tuple[int, int], list[list[float]]] = {}
        for s in range(1, params.max_src + 1):
            for t in range(1, params.max_tgt + 1):
                rows = [srow[(i0, s)] for i0 in range(n - s + 1)]
                cols = [trow[(j0, t)] for j0 in range(m - t + 1)]
                if not rows or not cols:
                    continue
                block = cos[np.ix_(rows, cols)]
                penalty = params.merge_penalty * (s + t - 2)
                self.cosine[(s, t)] = self._raw[np.ix_(rows, cols)].tolist()
                self.score[(s, t)] = (block - penalty).tolist()

    @staticmethod
    def _margin_normalize(cos: np.ndarray, A: np.ndarray, B: np.ndarray,
                          params: AlignParams) -> np.ndarray:
        rng = np.random.default_rng(params.margin_seed)
        k = params.margin_top_k

        def top_k_mean(block_rows: np.ndarray, opposite: np.ndarray) -> np.ndarray:
            take = min(params.margin_sample, opposite.shape[0])
            idx = rng.choice(opposite.shape[0], size=take, replace=False)
            sims = block_rows @ opposite[idx].T
            kk = min(k, sims.shape[1])
            top = np.sort(sims, axis=1)[:, -kk:]
            return top.mean(axis=1)

        m_src = top_k_mean(A, B)
        m_tgt = top_k_mean(B, A)
        denom = (m_src[:, None] + m_tgt[None, :]) / 2.0
        return cos / np.maximum(denom, 1e-6)


def _run_dp(n: int, m: int, table: _ScoreTable, params: AlignParams,
            allowed=None) -> list[tuple[int, int]] | None:
    """Forward DP plus backtrack.  Returns the transition sequence (first
    bead first) or None when no path fits inside ``allowed``."""
    transitions = transition_order(params.max_src, params.max_tgt)
    gap = params.gap_score
    score = table.score
    neg = -math.inf
    D = [[neg] * (m + 1) for _ in range(n + 1)]
    choice: list[list[tuple[int, int] | None]] = [[None] * (m + 1) for _ in range(n + 1)]
    D[0][0] = 0.0
    for i in range(n + 1):
        Di = D[i]
        for j in range(m + 1):
            if i == 0 and j == 0:
                continue
            if allowed is not None and not allowed(i, j):
                continue
            best = neg
            best_tr = None
            for s, t in transitions:
                if s > i or t > j:
                    continue
                prev = D[i - s][j - t]
                if prev == neg:
                    continue
                if t == 0 or s == 0:
                    v = prev + gap
                else:
                    v = prev + score[(s, t)][i - s][j - t]
                if v > best:
                    best = v
                    best_tr = (s, t)
            Di[j] = best
            choice[i][j] = best_tr

    if D[n][m] == neg:
        return None
    path: list[tuple[int, int]] = []
    i, j = n, m
    while i or j:
        tr = choice[i][j]
        assert tr is not None
        path.append(tr)
        i, j = i - tr[0], j - tr[1]
    path.reverse()
    return path


def _beads_from_path(path: Sequence[tuple[int, int]], table: _ScoreTable) -> tuple[Bead, ...]:
    beads = []
    i = j = 0
    for s, t in path:
        if s and t:
            sim = table.cosine[(s, t)][i][j]
            beads.append(Bead(src=tuple(range(i, i + s)), tgt=tuple(range(j, j + t)),
                              similarity=sim))
        elif s:
            beads.append(Bead(src=tuple(range(i, i + s)), tgt=()))
        else:
            beads.append(Bead(src=(), tgt=tuple(range(j, j + t))))
        i, j = i + s, j + t
    return tuple(beads)


def _result(beads: tuple[Bead, ...], src: Sequence[Segment], tgt: Sequence[Segment],
            provider_id: str, params: AlignParams) -> AlignmentResult:
    result = AlignmentResult(
        beads=beads, src_doc_id=src[0].doc_id, tgt_doc_id=tgt[0].doc_id,
        chapter=src[0].chapter, params=params, provider_id=provider_id,
        granularity=src[0].granularity,
    )
    problems = partition_violations(beads, len(src), len(tgt)) + monotonicity_violations(beads)
    if problems:
        raise AssertionError(f"aligner produced an invalid partition: {problems}")
    return result


def align(src_segments: Sequence[Segment], tgt_segments: Sequence[Segment],
          provider: EmbeddingProvider | BlockEmbedder,
          params: AlignParams = AlignParams()) -> AlignmentResult:
    """Optimal monotone bead partition of the two segment sequences.

    Provider failures propagate; single-segment embeddings already written
    to the pipeline's disk cache survive for a resumed run.
    """
    if not src_segments or not tgt_segments:
        raise ValueError("both segment sequences must be non-empty")
    if params.band_width is not None:
        return anchor_banded_align(src_segments, tgt_segments, provider, params)
    embedder = _as_embedder(provider)
    table = _ScoreTable([s.text for s in src_segments], [t.text for t in tgt_segments],
                        embedder, params)
    path = _run_dp(len(src_segments), len(tgt_segments), table, params)
    assert path is not None
    return _result(_beads_from_path(path, table), src_segments, tgt_segments,
                   embedder.provider_id, params)


def enumerate_optimal(src_segments: Sequence[Segment], tgt_segments: Sequence[Segment],
                      provider: EmbeddingProvider | BlockEmbedder,
                      params: AlignParams = AlignParams()) -> AlignmentResult:
    """Brute-force oracle: exhaustively enumerate every monotone bead
    partition and return the best under the same scores and tie-break."""
    n, m = len(src_segments), len(tgt_segments)
    if not src_segments or not tgt_segments:
        raise ValueError("both segment sequences must be non-empty")
    if n + m > 14:
        raise ValueError(f"enumeration domain is |src|+|tgt| <= 14, got {n + m}")
    embedder = _as_embedder(provider)
    table = _ScoreTable([s.text for s in src_segments], [t.text for t in tgt_segments],
                        embedder, params)
    transitions = transition_order(params.max_src, params.max_tgt)
    rank = {tr: r for r, tr in enumerate(transitions)}
    gap = params.gap_score
    score = table.score

    complete: list[tuple[float, list[tuple[int, int]]]] = []
    path: list[tuple[int, int]] = []

    def walk(i: int, j: int, total: float) -> None:
        if i == n and j == m:
            complete.append((total, path.copy()))
            return
        for s, t in transitions:
            if i + s > n or j + t > m:
                continue
            step = gap if (s == 0 or t == 0) else score[(s, t)][i][j]
            path.append((s, t))
            walk(i + s, j + t, total + step)
            path.pop()

    walk(0, 0, 0.0)
    best_score = max(sc for sc, _ in complete)
    tied = [p for sc, p in complete if sc == best_score]
    best = min(tied, key=lambda p: [rank[tr] for tr in reversed(p)])
    return _result(_beads_from_path(best, table), src_segments, tgt_segments,
                   embedder.provider_id, params)


# --- anchor-banded search ---------------------------------------------------

ANCHOR_MIN_COSINE = 0.6


def _mutual_anchors(cos: np.ndarray) -> list[tuple[int, int]]:
    """1-1 anchor candidates: mutual top-1 pairs with cosine >= 0.6, thinned
    to a jointly monotone subset (longest increasing subsequence on j)."""
    top_for_src = cos.argmax(axis=1)
    top_for_tgt = cos.argmax(axis=0)
    cands = [(i, int(top_for_src[i])) for i in range(cos.shape[0])
             if int(top_for_tgt[top_for_src[i]]) == i
             and cos[i, top_for_src[i]] >= ANCHOR_MIN_COSINE]
    if not cands:
        return []
    # LIS over j, candidates already sorted by i
    js = [j for _, j in cands]
    best_len = [1] * len(js)
    parent = [-1] * len(js)
    for a in range(len(js)):
        for b in range(a):
            if js[b] < js[a] and best_len[b] + 1 > best_len[a]:
                best_len[a] = best_len[b] + 1
                parent[a] = b
    end = max(range(len(js)), key=lambda a: best_len[a])
    chain = []
    while end != -1:
        chain.append(cands[end])
        end = parent[end]
    chain.reverse()
    return chain


def anchor_banded_align(src_segments: Sequence[Segment], tgt_segments: Sequence[Segment],
                        provider: EmbeddingProvider | BlockEmbedder,
                        params: AlignParams) -> AlignmentResult:
    """Exact DP restricted to a monotone band around high-confidence 1-1
    anchors; falls back to the full DP when no anchors exist."""
    if params.band_width is None:
        raise ValueError("anchor_banded_align needs params.band_width set")
    if not src_segments or not tgt_segments:
        raise ValueError("both segment sequences must be non-empty")
    embedder = _as_embedder(provider)
    n, m = len(src_segments), len(tgt_segments)

    singles_src = np.stack([embedder.embed_block([s.text]) for s in src_segments]).astype(np.float64)
    singles_tgt = np.stack([embedder.embed_block([t.text]) for t in tgt_segments]).astype(np.float64)
    anchors = _mutual_anchors(singles_src @ singles_tgt.T)

    full = replace(params, band_width=None)
    if not anchors:
        inner = align(src_segments, tgt_segments, embedder, full)
        return AlignmentResult(beads=inner.beads, src_doc_id=inner.src_doc_id,
                               tgt_doc_id=inner.tgt_doc_id, chapter=inner.chapter,
                               params=params, provider_id=inner.provider_id,
                               granularity=inner.granularity)

    # interpolation line through anchor prefix points, pinned at the corners
    points = [(0.0, 0.0)] + [(a + 1.0, b + 1.0) for a, b in anchors] + [(float(n), float(m))]
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]

    def j_hat(i: int) -> float:
        return float(np.interp(i, xs, ys))

    w = params.band_width

    def allowed(i: int, j: int) -> bool:
        return abs(j - j_hat(i)) <= w

    table = _ScoreTable([s.text for s in src_segments], [t.text for t in tgt_segments],
                        embedder, params)
    path = _run_dp(n, m, table, params, allowed=allowed)
    if path is None:
        path = _run_dp(n, m, table, params)
        assert path is not None
    return _result(_beads_from_path(path, table), src_segments, tgt_segments,
                   embedder.provider_id, params)
