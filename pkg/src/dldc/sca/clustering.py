"""k-means on scalar or vector features.

Scalar features are clustered exactly by dynamic programming over the sorted
values (optimal 1-D clusters are intervals); vector features use seeded
k-means++ initialisation and Lloyd iterations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..optim import ContractError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    objective: float
    objectives: list[float]     # per Lloyd iteration of the returned restart
    reseeded: int


def _as_2d(features) -> np.ndarray:
    f = np.asarray(features, dtype=float)
    return f[:, None] if f.ndim == 1 else f


def _sqdist(X, centers):
    return np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)


def _plusplus(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d = np.sum((X - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        tot = d.sum()
        idx = rng.choice(n, p=d / tot) if tot > 0 else rng.integers(n)
        centers[j] = X[idx]
        d = np.minimum(d, np.sum((X - centers[j]) ** 2, axis=1))
    return centers


def _lloyd(X, centers, max_iter):
    k = centers.shape[0]
    objectives = []
    reseeded = 0
    labels = None
    for _ in range(max_iter):
        D = _sqdist(X, centers)
        new = np.argmin(D, axis=1)
        counts = np.bincount(new, minlength=k)
        while np.any(counts == 0):
            # move an empty centre onto the point farthest from its current centre
            j = int(np.nonzero(counts == 0)[0][0])
            far = int(np.argmax(D[np.arange(X.shape[0]), new]))
            log.info("k-means: cluster %d empty, re-seeded at point %d", j, far)
            centers[j] = X[far]
            reseeded += 1
            D = _sqdist(X, centers)
            new = np.argmin(D, axis=1)
            counts = np.bincount(new, minlength=k)
        objectives.append(float(np.sum(D[np.arange(X.shape[0]), new])))
        for d in range(X.shape[1]):
            centers[:, d] = np.bincount(new, X[:, d], minlength=k) / counts
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
    labels = np.argmin(_sqdist(X, centers), axis=1)
    obj = float(np.sum((X - centers[labels]) ** 2))
    objectives.append(obj)
    return labels, centers, objectives, reseeded


def _exact_1d(v: np.ndarray, k: int):
    """Globally optimal 1-D k-means: ``best[c, j]`` is the least cost of ``c`` intervals over the ``j`` smallest values."""
    n = v.size
    order = np.argsort(v, kind="stable")
    s = v[order]
    s1 = np.concatenate([[0.0], np.cumsum(s)])
    s2 = np.concatenate([[0.0], np.cumsum(s * s)])
    i, j = np.arange(n + 1)[:, None], np.arange(n + 1)[None, :]
    m = j - i
    with np.errstate(divide="ignore", invalid="ignore"):
        cost = s2[j] - s2[i] - (s1[j] - s1[i]) ** 2 / m
    cost = np.where(m > 0, np.maximum(cost, 0.0), np.inf)   # segment i..j-1
    best = cost[0].copy()
    split = np.zeros((k + 1, n + 1), dtype=int)
    for c in range(2, k + 1):
        tot = best[:, None] + cost
        split[c] = np.argmin(tot, axis=0)
        best = tot[split[c], np.arange(n + 1)]
    labels_sorted = np.empty(n, dtype=int)
    end = n
    for c in range(k, 0, -1):
        start = split[c, end] if c > 1 else 0
        labels_sorted[start:end] = c - 1
        end = start
    labels = np.empty(n, dtype=int)
    labels[order] = labels_sorted
    counts = np.bincount(labels, minlength=k)
    centers = (np.bincount(labels, v, minlength=k) / counts)[:, None]
    obj = float(np.sum((v - centers[labels, 0]) ** 2))
    return labels, centers, [obj], 0


def kmeans(features, k: int, seed: int = 0, max_iter: int = 300, n_init: int = 10,
           method: str = "auto") -> KMeansResult:
    """k-means partition of ``features``.

    ``method="auto"`` solves scalar features exactly and uses the best of
    ``n_init`` seeded k-means++ / Lloyd runs otherwise; ``"lloyd"`` forces the
    heuristic.  Labels are renumbered by ascending first feature of the centres
    so that results do not depend on the restart that produced them.
    """
    X = _as_2d(features)
    n = X.shape[0]
    if method not in ("auto", "lloyd"):
        raise ContractError(f"unknown k-means method {method!r}")
    if k < 1:
        raise ContractError("k must be >= 1")
    if k > np.unique(X, axis=0).shape[0]:
        raise ContractError(f"k={k} exceeds the number of distinct feature values")
    if method == "auto" and X.shape[1] == 1:
        labels, centers, objectives, reseeded = _exact_1d(X[:, 0], k)
        return KMeansResult(labels, centers, objectives[-1], objectives, reseeded)
    best = None
    for r in range(n_init):
        rng = np.random.default_rng([seed, r])
        out = _lloyd(X, _plusplus(X, k, rng), max_iter)
        if best is None or out[2][-1] < best[2][-1]:
            best = out
        if k == n:
            break
    labels, centers, objectives, reseeded = best
    order = np.lexsort(centers.T[::-1])
    rank = np.empty(k, dtype=int)
    rank[order] = np.arange(k)
    return KMeansResult(rank[labels], centers[order], objectives[-1], objectives, reseeded)
