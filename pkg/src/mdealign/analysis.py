"""Embedding-space diagnostics: 2-D projection, density clustering and the
omission/outlier report.

The two numerical workhorses are sklearn-compatible estimators so they can
be poked at with the usual ecosystem tooling: :class:`ExactTSNE` (the full
O(n^2) algorithm, deterministic under a seed — chapters are small enough
that no approximation is warranted, and the exact gradient stays checkable
against finite differences) and :class:`CosineDBSCAN` (density clustering
under the cosine distance with a deterministic labeling order).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from ._validation import check_matrix, check_random_state, normalize_rows
from .dataio import SCHEMA, bead_id
from .embedding import BlockEmbedder
from .model import AlignmentResult, Segment

ENTROPY_TOL = 1e-5
MACHINE_EPS = 1e-12


@dataclass(frozen=True)
class ProjectionConfig:
    perplexity: float | None = None  # None -> min(30, (n - 1) / 3)
    iterations: int = 1000
    learning_rate: float = 200.0
    early_exaggeration: float = 12.0
    exploration_iters: int = 250
    seed: int = 0

    def __post_init__(self) -> None:
        if self.iterations < 250:
            raise ValueError("iterations must be >= 250")


@dataclass(frozen=True)
class ClusterConfig:
    eps: float = 0.30
    min_pts: int = 2

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.min_pts < 2:
            raise ValueError("min_pts must be >= 2")


def pairwise_sq_dists(X: np.ndarray) -> np.ndarray:
    sq = np.sum(X * X, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def conditional_affinities(d2: np.ndarray, perplexity: float) -> np.ndarray:
    """Per-point Gaussian affinities whose entropy matches log(perplexity)
    via binary search on the bandwidth.  Each row sums to 1 and the
    diagonal is zero."""
    n = d2.shape[0]
    target = math.log(perplexity)
    P = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        beta, beta_min, beta_max = 1.0, -np.inf, np.inf
        row = d2[i]
        for _ in range(100):
            p = np.exp(-row * beta)
            p[i] = 0.0
            sum_p = p.sum()
            if sum_p <= 0.0:
                sum_p = MACHINE_EPS
            entropy = math.log(sum_p) + beta * float((row * p).sum()) / sum_p
            diff = entropy - target
            if abs(diff) <= ENTROPY_TOL:
                break
            if diff > 0:
                beta_min = beta
                beta = beta * 2.0 if beta_max == np.inf else (beta + beta_max) / 2.0
            else:
                beta_max = beta
                beta = beta / 2.0 if beta_min == -np.inf else (beta + beta_min) / 2.0
        P[i] = p / sum_p
    return P


def joint_affinities(X: np.ndarray, perplexity: float) -> np.ndarray:
    cond = conditional_affinities(pairwise_sq_dists(X), perplexity)
    return (cond + cond.T) / (2.0 * X.shape[0])


def kl_divergence_and_grad(P: np.ndarray, Y: np.ndarray) -> tuple[float, np.ndarray]:
    """Objective and analytic gradient of the heavy-tailed embedding loss."""
    d2 = pairwise_sq_dists(Y)
    num = 1.0 / (1.0 + d2)
    np.fill_diagonal(num, 0.0)
    z = num.sum()
    Q = np.maximum(num / z, MACHINE_EPS)
    mask = P > 0
    kl = float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))
    W = (P - Q) * num
    grad = 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)
    return kl, grad


class ExactTSNE(BaseEstimator):
    """Exact (non-approximated) 2-D t-SNE.

    Plain momentum gradient descent: momentum 0.5 while the affinities are
    exaggerated (the first ``exploration_iters`` iterations), 0.8 after.
    Deterministic for a fixed ``random_state``.
    """

    def __init__(self, perplexity: float | None = None, n_iter: int = 1000,
                 learning_rate: float = 200.0, early_exaggeration: float = 12.0,
                 exploration_iters: int = 250, random_state: int = 0):
        self.perplexity = perplexity
        self.n_iter = n_iter
        self.learning_rate = learning_rate
        self.early_exaggeration = early_exaggeration
        self.exploration_iters = exploration_iters
        self.random_state = random_state

    def _resolved_perplexity(self, n: int) -> float:
        limit = (n - 1) / 3.0
        if self.perplexity is None:
            return min(30.0, float(math.floor(limit)))
        if not 1.0 <= self.perplexity <= limit:
            raise ValueError(
                f"perplexity {self.perplexity} infeasible for n={n}; "
                f"use a value in [1, {limit:.2f}]")
        return float(self.perplexity)

    def fit(self, X, y=None):
        self.embedding_ = self._fit_transform(X)
        return self

    def fit_transform(self, X, y=None) -> np.ndarray:
        self.embedding_ = self._fit_transform(X)
        return self.embedding_

    def _fit_transform(self, X) -> np.ndarray:
        X = check_matrix(X, "X", min_rows=4)
        if self.n_iter < 250:
            raise ValueError("n_iter must be >= 250")
        n = X.shape[0]
        perplexity = self._resolved_perplexity(n)
        P = joint_affinities(X, perplexity)

        rng = check_random_state(self.random_state)
        Y = rng.normal(0.0, 1e-4, size=(n, 2))
        update = np.zeros_like(Y)
        exaggerated = P * self.early_exaggeration
        for it in range(self.n_iter):
            running = exaggerated if it < self.exploration_iters else P
            momentum = 0.5 if it < self.exploration_iters else 0.8
            _, grad = kl_divergence_and_grad(running, Y)
            update = momentum * update - self.learning_rate * grad
            Y = Y + update
            Y = Y - Y.mean(axis=0)
        return Y


class CosineDBSCAN(ClusterMixin, BaseEstimator):
    """Density clustering under cosine distance (1 - cosine similarity).

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``.  Clusters are the connected components of core points;
    border points join the cluster of their lowest-indexed core neighbor,
    which makes labels deterministic: components are numbered by their
    lowest member index.  Noise is labeled -1.
    """

    def __init__(self, eps: float = 0.30, min_pts: int = 2):
        self.eps = eps
        self.min_pts = min_pts

    def fit(self, X, y=None):
        X = check_matrix(X, "X", min_rows=1)
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.min_pts < 2:
            raise ValueError("min_pts must be >= 2")
        Xn = normalize_rows(X)
        dist = 1.0 - Xn @ Xn.T
        within = dist <= self.eps
        n = X.shape[0]
        core = within.sum(axis=1) >= self.min_pts

        parent = list(range(n))

        def find(a: int) -> int:
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        core_idx = np.where(core)[0]
        for ai, a in enumerate(core_idx):
            for b in core_idx[ai + 1:]:
                if within[a, b]:
                    ra, rb = find(int(a)), find(int(b))
                    if ra != rb:
                        parent[max(ra, rb)] = min(ra, rb)

        labels = np.full(n, -1, dtype=int)
        roots: dict[int, int] = {}
        for a in core_idx:
            root = find(int(a))
            if root not in roots:
                roots[root] = len(roots)
            labels[a] = roots[root]
        for p in range(n):
            if core[p] or not within[p].any():
                continue
            neighbors = np.where(within[p] & core)[0]
            if neighbors.size:
                labels[p] = labels[neighbors[0]]

        self.labels_ = labels
        return self

    def fit_predict(self, X, y=None) -> np.ndarray:
        return self.fit(X).labels_


# --- the per-chapter report --------------------------------------------------

DEFAULT_OUTLIER_THRESHOLD = 0.4


@dataclass(frozen=True)
class VizPoint:
    x: float
    y: float
    side: str       # "src" | "tgt"
    bead: str
    cluster: int


@dataclass(frozen=True)
class AnalysisReport:
    points: tuple[VizPoint, ...]
    cluster_count: int
    ideal_pair_fraction: float
    avg_intra_cluster_similarity: float | None
    outliers: tuple[str, ...]


def analyze(result: AlignmentResult, src_segments: Sequence[Segment],
            tgt_segments: Sequence[Segment], provider,
            projection: ProjectionConfig = ProjectionConfig(),
            clustering: ClusterConfig = ClusterConfig(),
            outlier_threshold: float = DEFAULT_OUTLIER_THRESHOLD) -> AnalysisReport:
    """Project and cluster every bead side, then report how pair-like the
    clusters are and which beads look like omissions, insertions or weak
    matches.

    Clustering runs in the original embedding space; the 2-D coordinates
    are for the reader-facing scatter only.  Gap beads contribute a single
    point (their present side) and are always reported as outliers.
    """
    embedder = provider if isinstance(provider, BlockEmbedder) else BlockEmbedder(provider)
    vectors: list[np.ndarray] = []
    owners: list[tuple[int, str]] = []
    for i, b in enumerate(result.beads):
        if b.src:
            vectors.append(embedder.embed_block([src_segments[k].text for k in b.src]))
            owners.append((i, "src"))
        if b.tgt:
            vectors.append(embedder.embed_block([tgt_segments[k].text for k in b.tgt]))
            owners.append((i, "tgt"))
    X = np.stack(vectors).astype(np.float64)

    tsne = ExactTSNE(perplexity=projection.perplexity, n_iter=projection.iterations,
                     learning_rate=projection.learning_rate,
                     early_exaggeration=projection.early_exaggeration,
                     exploration_iters=projection.exploration_iters,
                     random_state=projection.seed)
    coords = tsne.fit_transform(X)
    labels = CosineDBSCAN(eps=clustering.eps, min_pts=clustering.min_pts).fit_predict(X)

    points = tuple(
        VizPoint(x=float(coords[r, 0]), y=float(coords[r, 1]), side=side,
                 bead=bead_id(i), cluster=int(labels[r]))
        for r, (i, side) in enumerate(owners)
    )

    by_bead: dict[int, dict[str, int]] = {}
    for r, (i, side) in enumerate(owners):
        by_bead.setdefault(i, {})[side] = r

    non_gap = [i for i, b in enumerate(result.beads) if not b.is_gap]
    shared = 0
    for i in non_gap:
        rs, rt = by_bead[i]["src"], by_bead[i]["tgt"]
        if labels[rs] != -1 and labels[rs] == labels[rt]:
            shared += 1
    ideal = shared / len(non_gap) if non_gap else 0.0

    Xn = normalize_rows(X)
    sims: list[float] = []
    for label in sorted(set(labels[labels >= 0].tolist())):
        members = np.where(labels == label)[0]
        for a_pos, a in enumerate(members):
            for b in members[a_pos + 1:]:
                sims.append(float(Xn[a] @ Xn[b]))
    avg_sim = float(np.mean(sims)) if sims else None

    outliers = tuple(
        bead_id(i) for i, b in enumerate(result.beads)
        if b.is_gap or (b.similarity is not None and b.similarity < outlier_threshold)
    )

    return AnalysisReport(
        points=points,
        cluster_count=int(labels.max()) + 1 if (labels >= 0).any() else 0,
        ideal_pair_fraction=ideal,
        avg_intra_cluster_similarity=avg_sim,
        outliers=outliers,
    )


def pivot_disagreement(a: AlignmentResult, b: AlignmentResult) -> int:
    """How many source segments two alignments of the same chapter group
    differently.  A rough cross-translation consistency signal, not a
    calibrated metric."""
    if (a.src_doc_id, a.chapter) != (b.src_doc_id, b.chapter):
        raise ValueError("alignments do not share a source chapter")

    def blocks(r: AlignmentResult) -> dict[int, tuple[int, ...]]:
        return {i: bead.src for bead in r.beads for i in bead.src}

    blocks_a, blocks_b = blocks(a), blocks(b)
    indices = set(blocks_a) | set(blocks_b)
    return sum(1 for i in indices if blocks_a.get(i) != blocks_b.get(i))


def analysis_to_dict(report: AnalysisReport, result: AlignmentResult | None = None,
                     projection: ProjectionConfig | None = None,
                     clustering: ClusterConfig | None = None,
                     outlier_threshold: float = DEFAULT_OUTLIER_THRESHOLD) -> dict:
    obj = {
        "schema": SCHEMA,
        "kind": "viz",
        "points": [
            {"x": p.x, "y": p.y, "side": p.side, "bead": p.bead, "cluster": p.cluster}
            for p in report.points
        ],
        "cluster_count": report.cluster_count,
        "ideal_pair_fraction": report.ideal_pair_fraction,
        "avg_intra_cluster_similarity": report.avg_intra_cluster_similarity,
        "outliers": list(report.outliers),
        "outlier_threshold": outlier_threshold,
    }
    if result is not None:
        obj["chapter"] = result.chapter
        obj["granularity"] = result.granularity
    if projection is not None:
        obj["projection"] = {"perplexity": projection.perplexity,
                             "iterations": projection.iterations,
                             "seed": projection.seed}
    if clustering is not None:
        obj["clustering"] = {"eps": clustering.eps, "min_pts": clustering.min_pts}
    return obj
