"""Evaluation metrics, principal-component embedding export and bank statistics."""
from __future__ import annotations

import numpy as np

from . import model as M
from .bank import ClassDistributionBank, assign_clusters
from .errors import ConfigError
from .graph import REGIONS
from .losses import proxy_a_distance
from .synth import DomainDataset
from .training import discriminator_logits, extract_all, predict


def features(params, model_config, bank, dataset: DomainDataset, batch_size=512) -> np.ndarray:
    """Classifier-input features of every sample, shape ``(N, feature_dim)``."""
    out = []
    for i in range(0, len(dataset), batch_size):
        f, _ = M.features_forward(dataset.regions[i:i + batch_size], dataset.domain, params, model_config, bank)
        out.append(f)
    return np.concatenate(out) if out else np.zeros((0, model_config.feature_dim))


def per_class_accuracy(pred, labels, n_classes) -> list[float]:
    """Accuracy within each true class; ``nan`` for classes with no samples."""
    out = []
    for c in range(n_classes):
        members = labels == c
        out.append(float(np.mean(pred[members] == c)) if members.any() else float("nan"))
    return out


def evaluate(params, model_config, bank, source: DomainDataset | None = None,
             target: DomainDataset | None = None) -> dict:
    """Summary metrics for one checkpoint.

    ``d_acc`` pools the discriminator's decisions over both domains and the
    proxy A-distance uses its error rate, so both need source and target.
    Entries that cannot be computed from the given data are ``nan``.
    """
    report = {"src_acc": float("nan"), "tgt_acc": float("nan"), "d_acc": float("nan"),
              "proxy_a_distance": float("nan"), "per_class_tgt_acc": []}
    if source is not None:
        if source.domain != "s":
            raise ConfigError("source dataset must hold domain 's' samples")
        y = source.any_labels
        if y is not None:
            report["src_acc"] = float(np.mean(predict(params, model_config, bank, source.regions, "s") == y))
    if target is not None:
        if target.domain != "t":
            raise ConfigError("target dataset must hold domain 't' samples")
        y = target.any_labels
        if y is not None:
            pred = predict(params, model_config, bank, target.regions, "t")
            report["tgt_acc"] = float(np.mean(pred == y))
            report["per_class_tgt_acc"] = per_class_accuracy(pred, y, model_config.n_classes)
    if source is not None and target is not None:
        ss = discriminator_logits(params, model_config, bank, source.regions, "s")
        st = discriminator_logits(params, model_config, bank, target.regions, "t")
        d_acc = float((np.sum(ss > 0) + np.sum(st <= 0)) / (len(ss) + len(st)))
        report["d_acc"] = d_acc
        report["proxy_a_distance"] = proxy_a_distance(1.0 - d_acc)
    return report


def pca_2d(X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project rows of ``X`` on the top two principal components.

    Returns ``(projection (N, 2), components (2, D), variances (2,))``. Each
    component's sign is fixed so its largest-magnitude entry is positive,
    which makes the export reproducible across eigen-solvers.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) < 2:
        raise ConfigError("need at least two feature rows for a projection")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (len(X) - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:2]
    comps = vecs[:, order].T
    if comps.shape[0] < 2:
        comps = np.vstack([comps, np.zeros_like(comps)])
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    return Xc @ comps.T, comps, np.maximum(vals[order], 0.0)


def embedding_rows(params, model_config, bank, datasets) -> list[dict]:
    """One row per sample of every dataset: id, domain, label, pc1, pc2."""
    feats, meta = [], []
    for ds in datasets:
        feats.append(features(params, model_config, bank, ds))
        labels = ds.any_labels
        for i, sid in enumerate(ds.ids):
            meta.append((sid, ds.domain, "" if labels is None else int(labels[i])))
    proj, _, _ = pca_2d(np.concatenate(feats))
    return [{"id": sid, "domain": d, "label": y, "pc1": float(p[0]), "pc2": float(p[1])}
            for (sid, d, y), p in zip(meta, proj)]


def cluster_stats(bank: ClassDistributionBank, params=None, model_config=None, datasets=()) -> list[dict]:
    """Per-domain, per-cluster mean norms and (optionally) member counts.

    Samples are counted in the nearest cluster of their own domain.
    """
    counts = {}
    for ds in datasets:
        f = extract_all(params, model_config, ds.regions)
        a = assign_clusters(f, bank, ds.domain)
        counts[ds.domain] = np.bincount(a, minlength=bank.n_clusters)
    rows = []
    for domain in ("s", "t"):
        means = bank.domain_means(domain)
        for c in range(bank.n_clusters):
            row = {"domain": domain, "cluster": c, "mean_norm": float(np.linalg.norm(means[c]))}
            for k, name in enumerate(REGIONS):
                row[f"norm_{name}"] = float(np.linalg.norm(means[c, k]))
            row["count"] = int(counts[domain][c]) if domain in counts else ""
            rows.append(row)
    return rows
