"""
1-D k-means and the recursive 2-means codebook tree
"""
import logging
from typing import NamedTuple

import numpy as np
from sklearn.cluster import kmeans_plusplus

from models import Codebook, CodebookTree, nearest_index
from validators import ValidationError

logger = logging.getLogger(__name__)

MAX_ITER = 100


class KMeansResult(NamedTuple):
    codebook: Codebook
    wcss: float
    history: list
    labels: np.ndarray


def wcss(samples, centroids, labels):
    """Within-cluster sum of squares"""
    return float(np.sum((samples - centroids[labels]) ** 2))


def _clean_samples(samples):
    values = np.asarray(samples, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValidationError("k-means needs at least one sample")
    if not np.all(np.isfinite(values)):
        raise ValidationError("k-means samples must be finite")
    return values


def _lloyd(values, centroids, max_iter):
    centroids = np.sort(centroids)
    history = []
    labels = None

    for _ in range(max_iter):
        new_labels = nearest_index(centroids, values)
        history.append(wcss(values, centroids, new_labels))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels

        k = len(centroids)
        counts = np.bincount(labels, minlength=k)
        sums = np.bincount(labels, weights=values, minlength=k)
        updated = centroids.copy()
        filled = counts > 0
        updated[filled] = sums[filled] / counts[filled]

        empty = np.flatnonzero(~filled)
        if len(empty):
            # Re-seed empty clusters at the points farthest from their centroid
            distance = np.abs(values - centroids[labels])
            farthest = np.argsort(-distance, kind='stable')[:len(empty)]
            updated[empty] = values[farthest]
            logger.debug(f"⚠️  Re-seeded {len(empty)} empty cluster(s)")

        centroids = np.sort(updated)
    else:
        labels = nearest_index(centroids, values)

    return centroids, labels, history


def kmeans(samples, k, seed=0, n_init=1, max_iter=MAX_ITER):
    """Sorted k-means codebook of scalar samples; ties go to the lower centroid"""
    values = _clean_samples(samples)
    if int(k) < 1:
        raise ValidationError(f"k must be at least 1, got {k}")
    k = int(k)

    distinct = np.unique(values)
    if len(distinct) <= k:
        # Every distinct value is its own centroid
        labels = nearest_index(distinct, values)
        return KMeansResult(Codebook(distinct), 0.0, [0.0], labels)

    rng = np.random.default_rng(seed)
    column = values.reshape(-1, 1)
    best = None

    for _ in range(max(1, int(n_init))):
        init, _ = kmeans_plusplus(column, k, random_state=int(rng.integers(2 ** 31 - 1)))
        centroids, labels, history = _lloyd(values, init.ravel(), max_iter)
        score = wcss(values, centroids, labels)
        if best is None or score < best[1]:
            best = (centroids, score, history, labels)

    centroids, score, history, labels = best
    return KMeansResult(Codebook(centroids), score, history, labels)


def build_tree(samples, depth, seed=0, n_init=1):
    """Codebooks for levels 0..depth by recursive 2-means; level l has 2**l centroids"""
    values = _clean_samples(samples)
    if int(depth) < 1:
        raise ValidationError(f"Tree depth must be at least 1, got {depth}")

    rng = np.random.default_rng(seed)
    root = float(np.mean(values))
    levels = [Codebook([root], level=0)]
    parents = [np.zeros(1, dtype=np.int64)]
    nodes = [(root, values)]

    for level in range(1, int(depth) + 1):
        centroids = []
        children = []
        for centroid, members in nodes:
            child_seed = int(rng.integers(2 ** 31 - 1))
            if len(np.unique(members)) < 2:
                # Degenerate node: both children carry the parent's centroid
                centroids.extend([centroid, centroid])
                children.extend([(centroid, members), (centroid, members[:0])])
                continue

            result = kmeans(members, 2, seed=child_seed, n_init=n_init)
            low, high = result.codebook.centroids
            centroids.extend([low, high])
            children.extend([(low, members[result.labels == 0]), (high, members[result.labels == 1])])

        levels.append(Codebook(centroids, level=level))
        parents.append(np.arange(len(centroids), dtype=np.int64) >> 1)
        nodes = children

    logger.debug(f"📊 Built codebook tree of depth {depth} over {values.size} samples")
    return CodebookTree(levels=levels, parents=parents)
