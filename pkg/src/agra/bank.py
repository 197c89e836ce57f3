"""Per-class, per-domain, per-region mean feature bank.

The bank is refreshed two ways: every ``recluster_period`` epochs it is rebuilt
from scratch (labels for the source, K-means for the target), and on every
training iteration each cluster's means move toward the batch means with an
exponential moving average.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, NumericError, StateError
from .graph import DOMAINS, N_REGIONS


@dataclass
class ClusterAssignment:
    sample_index: int
    cluster: int
    distance: float


def kmeans(points, n_clusters, init=None, max_iter=100, tol=1e-8, seed=0, n_init=4):
    """Lloyd's algorithm with k-means++ seeding.

    Parameters
    ----------
    points : (N, D) array
    n_clusters : int
    init : (C, D) array, optional
        Starting centroids. When given, ``n_init`` is ignored.
    max_iter, tol : stopping rule; stops once no centroid moves more than ``tol``.
    seed : int
        Seeds k-means++ initialisation.
    n_init : int
        Number of seeded restarts; the lowest-distortion result is kept. A
        single k-means++ start occasionally merges two planted clusters.

    Returns
    -------
    assignments : (N,) int array
    centroids : (C, D) array
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("points must be a non-empty 2-D array")
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    if n_clusters > len(X):
        raise ValueError(f"n_clusters={n_clusters} exceeds the number of points ({len(X)})")

    if init is not None:
        return _lloyd(X, np.array(init, dtype=float), max_iter, tol)

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        labels, centroids = _lloyd(X, _kmeanspp(X, n_clusters, rng), max_iter, tol)
        cost = distortion(X, labels, centroids)
        if best is None or cost < best[0]:
            best = (cost, labels, centroids)
    return best[1], best[2]


def distortion(X, labels, centroids):
    return float(((X - centroids[labels]) ** 2).sum())


def _sq_dists(X, centroids):
    return ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _kmeanspp(X, k, rng):
    centroids = [X[rng.integers(len(X))]]
    d2 = ((X - centroids[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(len(X), p=d2 / total)
        else:
            idx = rng.integers(len(X))
        centroids.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centroids)


def _lloyd(X, centroids, max_iter, tol):
    k = len(centroids)
    labels = np.argmin(_sq_dists(X, centroids), axis=1)
    for _ in range(max_iter):
        new = centroids.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new[c] = X[members].mean(axis=0)
        # empty clusters take the point lying farthest from its own centroid
        for c in range(k):
            if not (labels == c).any():
                far = int(np.argmax(((X - new[labels]) ** 2).sum(axis=1)))
                new[c] = X[far]
                labels[far] = c
        shift = np.abs(new - centroids).max()
        centroids = new
        labels = np.argmin(_sq_dists(X, centroids), axis=1)
        if shift < tol:
            break
    return labels, centroids


@dataclass
class ClassDistributionBank:
    """Mean region features indexed ``[domain, cluster, region, dim]``.

    Domain 0 is the source and domain 1 the target; cluster ``c`` of the target
    is aligned with source class ``c``.
    """

    means: np.ndarray
    alpha: float = 0.1
    recluster_period: int = 10
    source_mode: str = "labels"
    seed: int = 0

    def __post_init__(self):
        if self.means.ndim != 4 or self.means.shape[0] != 2 or self.means.shape[2] != N_REGIONS:
            raise ConfigError(f"bank means must have shape (2, C, 6, d), got {self.means.shape}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not np.isfinite(self.means).all():
            raise NumericError("bank means must be finite")

    @property
    def n_clusters(self) -> int:
        return self.means.shape[1]

    def domain_means(self, domain: str) -> np.ndarray:
        return self.means[DOMAINS.index(domain)]

    def copy(self) -> "ClassDistributionBank":
        return copy.deepcopy(self)


def _flat(features):
    F = np.asarray(features, dtype=float)
    if F.ndim != 3 or F.shape[1] != N_REGIONS:
        raise ConfigError(f"features must have shape (N, 6, d), got {F.shape}")
    return F


def _cluster_means(F, labels, C):
    means = np.empty((C,) + F.shape[1:])
    for c in range(C):
        members = labels == c
        if not members.any():
            raise StateError(f"cluster {c} has no samples")
        means[c] = F[members].mean(axis=0)
    return means


def align_clusters(reference, means):
    """Permute ``means`` so cluster ``c`` sits next to ``reference[c]``.

    Minimises the summed squared distance over all pairings (Hungarian method).
    """
    C = len(reference)
    cost = ((reference[:, None] - means[None, :]) ** 2).reshape(C, C, -1).sum(axis=2)
    _, cols = linear_sum_assignment(cost)
    return means[cols]


def initialize_bank(
    source_features,
    source_labels,
    target_features,
    n_clusters,
    mode="labels",
    alpha=0.1,
    recluster_period=10,
    seed=0,
    n_init=4,
) -> ClassDistributionBank:
    """Build a bank from extracted region features of both domains.

    ``mode="labels"`` averages source features per ground-truth class;
    ``mode="kmeans"`` clusters the source the same way the target is always
    clustered (K-means on the concatenated region vector). Target clusters are
    then re-indexed to best match the source class means.
    """
    Fs, Ft = _flat(source_features), _flat(target_features)
    C = int(n_clusters)
    if mode == "labels":
        y = np.asarray(source_labels)
        if C > 1:
            if y.min() < 0 or y.max() >= C:
                raise ConfigError(f"source labels span {y.min()}..{y.max()} but C={C}")
        else:
            y = np.zeros(len(Fs), dtype=int)
        src = _cluster_means(Fs, y, C)
    elif mode == "kmeans":
        ys, _ = kmeans(Fs.reshape(len(Fs), -1), C, seed=seed, n_init=n_init)
        src = _cluster_means(Fs, ys, C)
    else:
        raise ConfigError(f"unknown bank mode {mode!r}")

    yt, _ = kmeans(Ft.reshape(len(Ft), -1), C, seed=seed + 1, n_init=n_init)
    tgt = align_clusters(src, _cluster_means(Ft, yt, C))
    return ClassDistributionBank(np.stack([src, tgt]), alpha, recluster_period, mode, seed)


def cluster_distances(features, bank: ClassDistributionBank, domain: str) -> np.ndarray:
    """Squared Euclidean distance summed over regions, shape ``(N, C)``."""
    F = _flat(features)
    if not np.isfinite(F).all():
        raise NumericError("non-finite features")
    mu = bank.domain_means(domain)
    return ((F[:, None] - mu[None]) ** 2).sum(axis=(2, 3))


def assign_clusters(features, bank, domain) -> np.ndarray:
    # argmin returns the first minimum, so ties go to the lowest index
    return np.argmin(cluster_distances(features, bank, domain), axis=1)


def assign_cluster(sample_regions, bank, domain) -> int:
    return int(assign_clusters(np.asarray(sample_regions)[None], bank, domain)[0])


def assignment_records(features, bank, domain) -> list[ClusterAssignment]:
    d = cluster_distances(features, bank, domain)
    c = np.argmin(d, axis=1)
    return [ClusterAssignment(i, int(ci), float(d[i, ci])) for i, ci in enumerate(c)]


def update_moving_average(bank, batch_features, batch_assignments, domain) -> ClassDistributionBank:
    """Return a bank whose clusters present in the batch moved toward the batch means.

    Clusters that received no sample are left untouched.
    """
    F = _flat(batch_features)
    a = np.asarray(batch_assignments)
    if len(F) == 0 or len(a) != len(F):
        raise ConfigError("batch must be non-empty with one assignment per sample")
    if not np.isfinite(F).all():
        raise NumericError("non-finite batch features")
    out = bank.copy()
    mu = out.means[DOMAINS.index(domain)]
    for c in np.unique(a):
        mu[c] = (1.0 - bank.alpha) * mu[c] + bank.alpha * F[a == c].mean(axis=0)
    return out


def maybe_recluster(
    bank,
    epoch,
    source_features,
    target_features,
    source_labels,
    enabled=True,
) -> ClassDistributionBank:
    """Rebuild ``bank`` on epochs that are positive multiples of its period."""
    if not enabled or epoch <= 0 or bank.recluster_period <= 0 or epoch % bank.recluster_period:
        return bank
    return initialize_bank(
        source_features,
        source_labels,
        target_features,
        bank.n_clusters,
        mode=bank.source_mode,
        alpha=bank.alpha,
        recluster_period=bank.recluster_period,
        seed=bank.seed,
    )
