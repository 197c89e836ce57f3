"""Classification and domain losses.

Sign convention for the adversarial game: the classifier loss is always
minimised; the discriminator minimises the domain loss below; the feature
extractor maximises it (it minimises ``cross_entropy - adv_weight * domain_loss``).
Only the domain term changes sign between the players; negating the
cross-entropy too would make the features maximise classification error.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericError
from .model import sigmoid

EPS = 1e-12


def cross_entropy(probabilities, label: int) -> float:
    """``-log p[label]`` with the probability floored at ``1e-12``."""
    p = np.asarray(probabilities, dtype=float)
    if not 0 <= label < len(p):
        raise ConfigError(f"label {label} outside 0..{len(p) - 1}")
    return float(-np.log(max(p[label], EPS)))


def cross_entropy_logits(logits, labels):
    """Mean cross-entropy over a batch and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    B, C = logits.shape
    if labels.min() < 0 or labels.max() >= C:
        raise ConfigError(f"labels must lie in 0..{C - 1}")
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-log_p[np.arange(B), labels].mean())
    p = np.exp(log_p)
    dlogits = p.copy()
    dlogits[np.arange(B), labels] -= 1.0
    return loss, dlogits / B


def domain_loss(d_source, d_target) -> float:
    """Mean binary cross-entropy over both batches; source is label 1, target label 0."""
    ds = np.asarray(d_source, dtype=float).ravel()
    dt = np.asarray(d_target, dtype=float).ravel()
    both = np.concatenate([ds, dt])
    if not np.all((both > 0) & (both < 1)):
        raise NumericError("discriminator outputs must lie strictly inside (0, 1)")
    return float(-(np.log(ds).sum() + np.log1p(-dt).sum()) / len(both))


def _softplus(x):
    return np.logaddexp(0.0, x)


def domain_loss_logits(s_source, s_target):
    """:func:`domain_loss` evaluated from discriminator logits.

    Returns ``(loss, d_loss/d_s_source, d_loss/d_s_target)``.
    """
    n = len(s_source) + len(s_target)
    loss = (_softplus(-s_source).sum() + _softplus(s_target).sum()) / n
    return float(loss), (sigmoid(s_source) - 1.0) / n, sigmoid(s_target) / n


def confusion_loss_logits(s_source, s_target):
    """Mean cross-entropy of every discriminator output against the label 1/2.

    Returns ``(loss, d_loss/d_s_source, d_loss/d_s_target)``. The minimum,
    ``ln 2``, is reached exactly when every output equals 1/2.
    """
    s = np.concatenate([np.ravel(s_source), np.ravel(s_target)])
    n = len(s)
    loss = 0.5 * (_softplus(s) + _softplus(-s)).sum() / n
    return float(loss), (sigmoid(s_source) - 0.5) / n, (sigmoid(s_target) - 0.5) / n


def proxy_a_distance(error: float) -> float:
    """``2 (1 - 2 eps)`` for domain-classification error ``eps``.

    Errors above one half are folded (a classifier that is wrong more often
    than not is as informative as its negation), keeping the result in [0, 2].
    """
    if not 0.0 <= error <= 1.0:
        raise ValueError(f"error must lie in [0, 1], got {error}")
    eps = min(error, 1.0 - error)
    return 2.0 * (1.0 - 2.0 * eps)
