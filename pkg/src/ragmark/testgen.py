"""Held-out test set construction from a sentence index.

Sentence embeddings are projected to 2D, density-clustered into topics,
outliers and over-budget clusters dropped, and each surviving cluster's
concatenated text becomes a reference answer with generated questions. The
reducer and clusterer are contracts; the shipped baselines (exact PCA,
DBSCAN) are deterministic so a fixed seed reproduces the set byte for byte.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .corpus import TokenCounter, max_token_count
from .embed import EmbeddingVector
from .errors import DegenerateCloudError, EmptyTestSetError, NoClustersError
from .index import IndexedDataset, IndexKind
from .qagen import QAPair, QuestionGenClient, _usable_questions

log = logging.getLogger(__name__)

CLUSTER_TOKEN_BUDGET = 256

# When density clustering yields more clusters than this, the smallest are
# merged into their nearest neighbor by centroid distance.
DEFAULT_MAX_CLUSTERS = 15
DEFAULT_MIN_PTS = 6


@dataclass
class ClusterParams:
    eps: float = 0.5
    min_pts: int = DEFAULT_MIN_PTS  # neighborhood size that makes a core point (self included)
    max_clusters: int = DEFAULT_MAX_CLUSTERS


@dataclass
class Cluster:
    id: int
    sentence_refs: list[int]  # entry indices into the source index
    concatenated_text: str
    token_count: int


@dataclass
class TestSet:
    pairs: list[QAPair]
    params: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Dimensionality reduction
# ---------------------------------------------------------------------------

class Reducer(Protocol):
    name: str

    def reduce(self, matrix: np.ndarray, target_dim: int) -> np.ndarray: ...


class PcaReducer:
    """Exact PCA via eigendecomposition of the covariance matrix.

    Deterministic sign convention: each principal axis is flipped so its
    largest-magnitude component is positive. After ``reduce`` the instance
    exposes ``explained_variance_ratio_`` for the selected components.
    """

    name = "pca"

    def __init__(self):
        self.explained_variance_ratio_: np.ndarray | None = None

    def reduce(self, matrix: np.ndarray, target_dim: int) -> np.ndarray:
        x = np.asarray(matrix, dtype=np.float64)
        centered = x - x.mean(axis=0)
        cov = centered.T @ centered / (len(x) - 1)
        total = float(np.trace(cov))
        if total <= 1e-12:
            raise DegenerateCloudError("all points are identical; nothing to project")
        eigenvalues, eigenvectors = np.linalg.eigh(cov)
        order = np.argsort(-eigenvalues, kind="stable")[:target_dim]
        components = eigenvectors[:, order].T
        for i, component in enumerate(components):
            pivot = int(np.argmax(np.abs(component)))
            if component[pivot] < 0:
                components[i] = -component
        self.explained_variance_ratio_ = np.maximum(eigenvalues[order], 0.0) / total
        return centered @ components.T


def reduce_dim(
    vectors: Sequence[EmbeddingVector],
    target_dim: int = 2,
    reducer: Reducer | None = None,
) -> list[tuple[float, ...]]:
    """Project embedding vectors to ``target_dim`` coordinates (PCA by default)."""
    if len(vectors) < target_dim + 1:
        raise ValueError(f"need more than {target_dim} vectors to reduce")
    reducer = reducer or PcaReducer()
    matrix = np.array([v.values for v in vectors], dtype=np.float64)
    points = reducer.reduce(matrix, target_dim)
    return [tuple(float(c) for c in row) for row in points]


# ---------------------------------------------------------------------------
# Density clustering
# ---------------------------------------------------------------------------

def cluster_points(
    points: Sequence[Sequence[float]], params: ClusterParams
) -> tuple[list[list[int]], list[int]]:
    """DBSCAN over 2D points: (clusters as sorted index lists, outlier indices).

    Deterministic for a fixed input order: seeds are visited in index order
    and ties always resolve to the lowest index. If more clusters form than
    ``params.max_clusters``, the smallest is merged into the cluster with the
    nearest centroid until the cap holds.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n < params.min_pts:
        raise ValueError(f"need at least min_pts={params.min_pts} points, got {n}")

    diff = pts[:, None, :] - pts[None, :, :]
    within = (diff ** 2).sum(axis=2) <= params.eps ** 2
    neighbor_counts = within.sum(axis=1)  # includes the point itself
    core = neighbor_counts >= params.min_pts

    labels = np.full(n, -1, dtype=int)
    cluster_id = 0
    for seed in range(n):
        if labels[seed] != -1 or not core[seed]:
            continue
        frontier = [seed]
        labels[seed] = cluster_id
        while frontier:
            point = frontier.pop()
            if not core[point]:
                continue
            for neighbor in np.flatnonzero(within[point]):
                if labels[neighbor] == -1:
                    labels[neighbor] = cluster_id
                    frontier.append(int(neighbor))
        cluster_id += 1

    clusters = [sorted(np.flatnonzero(labels == c).tolist()) for c in range(cluster_id)]
    outliers = sorted(np.flatnonzero(labels == -1).tolist())
    if not clusters:
        raise NoClustersError("every point is an outlier at these parameters")

    clusters = _merge_to_cap(clusters, pts, params.max_clusters)
    return clusters, outliers


def _merge_to_cap(
    clusters: list[list[int]], pts: np.ndarray, max_clusters: int
) -> list[list[int]]:
    clusters = [sorted(c) for c in clusters]
    while len(clusters) > max_clusters:
        centroids = [pts[c].mean(axis=0) for c in clusters]
        smallest = min(range(len(clusters)), key=lambda i: (len(clusters[i]), i))
        others = [i for i in range(len(clusters)) if i != smallest]
        nearest = min(
            others,
            key=lambda i: (float(np.linalg.norm(centroids[i] - centroids[smallest])), i),
        )
        clusters[nearest] = sorted(clusters[nearest] + clusters[smallest])
        del clusters[smallest]
    return clusters


class DbscanClusterer:
    name = "dbscan"

    def __init__(self, params: ClusterParams | None = None):
        self.params = params or ClusterParams()

    def cluster(self, points: Sequence[Sequence[float]]) -> tuple[list[list[int]], list[int]]:
        return cluster_points(points, self.params)

    def describe(self) -> dict:
        return {
            "clusterer": self.name,
            "eps": self.params.eps,
            "min_pts": self.params.min_pts,
            "max_clusters": self.params.max_clusters,
        }


class Clusterer(Protocol):
    name: str

    def cluster(self, points: Sequence[Sequence[float]]) -> tuple[list[list[int]], list[int]]: ...

    def describe(self) -> dict: ...


# ---------------------------------------------------------------------------
# Test set assembly
# ---------------------------------------------------------------------------

def assemble_test_set(
    ds: IndexedDataset,
    reducer: Reducer,
    clusterer: Clusterer,
    counters: Sequence[TokenCounter],
    qg_client: QuestionGenClient,
    *,
    questions_per_cluster: int = 5,
) -> TestSet:
    """reduce -> cluster -> drop outliers and over-budget clusters -> questions.

    Cluster text concatenates member sentences in their original corpus
    order. A cluster over the token budget under any registered counter is
    dropped; questions follow the same dedup and fallback rules as the
    training pipeline.
    """
    if ds.kind is not IndexKind.SENTENCES:
        raise ValueError("test set generation needs a sentence-keyed index")
    points = reduce_dim([e.key_vector for e in ds.entries], 2, reducer)
    raw_clusters, outliers = clusterer.cluster(points)
    if outliers:
        log.info("dropping %d outlier sentences", len(outliers))

    clusters: list[Cluster] = []
    for members in raw_clusters:
        ordered = sorted(members)
        text = " ".join(ds.entries[i].key_text for i in ordered)
        tokens = max_token_count(text, counters)
        if tokens > CLUSTER_TOKEN_BUDGET:
            log.info("dropping %d-token cluster (budget %d)", tokens, CLUSTER_TOKEN_BUDGET)
            continue
        clusters.append(
            Cluster(
                id=len(clusters),
                sentence_refs=ordered,
                concatenated_text=text,
                token_count=tokens,
            )
        )
    if not clusters:
        raise EmptyTestSetError("no cluster survived the token budget")

    pairs = []
    for cluster in clusters:
        questions, synthetic = _usable_questions(
            cluster.concatenated_text, qg_client, questions_per_cluster
        )
        for q in questions:
            pairs.append(
                QAPair(
                    question=q,
                    paragraph_ref=("cluster", cluster.id),
                    answer_text=cluster.concatenated_text,
                    synthetic=synthetic,
                )
            )

    params = {
        "reducer": reducer.name,
        **clusterer.describe(),
        "token_budget": CLUSTER_TOKEN_BUDGET,
        "embedder": ds.embedder_name,
        "questions_per_cluster": questions_per_cluster,
        "source_entries": len(ds.entries),
        "clusters": len(clusters),
        "outliers": len(outliers),
    }
    return TestSet(pairs=pairs, params=params)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def write_test_set_jsonl(ts: TestSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"params": ts.params}, sort_keys=True) + "\n")
        for pair in ts.pairs:
            rec = {
                "question": pair.question,
                "answer_text": pair.answer_text,
                "cluster_id": pair.paragraph_ref[1],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_test_set_jsonl(path: str | Path) -> TestSet:
    pairs = []
    params: dict = {}
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            rec = json.loads(line)
            if i == 0 and "params" in rec:
                params = rec["params"]
                continue
            pairs.append(
                QAPair(
                    question=rec["question"],
                    paragraph_ref=("cluster", int(rec["cluster_id"])),
                    answer_text=rec["answer_text"],
                )
            )
    return TestSet(pairs=pairs, params=params)
