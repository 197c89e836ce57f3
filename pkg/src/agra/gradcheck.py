"""Finite-difference verification of every differentiable path of the model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M
from .bank import ClassDistributionBank
from .losses import cross_entropy_logits, domain_loss_logits

TOLERANCE = 1e-4


@dataclass
class GroupReport:
    group: str
    n_entries: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def miniature(seed=0, raw_dim=3, n_classes=3, node_dim=4, hidden_dim=5, disc_hidden=(6, 5), batch=4,
              extractor="linear", mode="full"):
    """A small model, bank and batch pair for gradient checking."""
    cfg = M.ModelConfig(raw_dim=raw_dim, n_classes=n_classes, node_dim=node_dim, hidden_dim=hidden_dim,
                        disc_hidden=tuple(disc_hidden), extractor=extractor, extractor_hidden=hidden_dim,
                        mode=mode)
    rng = np.random.default_rng(seed)
    params = M.init_params(cfg, seed)
    if cfg.uses_graph:
        # perturb the priors so every adjacency entry sits away from zero
        params["A_intra"] = params["A_intra"] + 0.1 * rng.standard_normal(params["A_intra"].shape)
        params["A_inter"] = params["A_inter"] + 0.1 * rng.standard_normal(params["A_inter"].shape)
    for k in ("ext_b", "ext_b1", "ext_b2", "cls_b", "D_b1", "D_b2", "D_b3"):
        if k in params:
            params[k] = 0.1 * rng.standard_normal(params[k].shape)
    # small inputs keep the unnormalised propagation away from saturated softmax
    # and sigmoid regions, where finite differences lose all precision
    bank = ClassDistributionBank(0.3 * rng.standard_normal((2, n_classes, 6, node_dim)))
    Xs = 0.3 * rng.standard_normal((batch, 6, raw_dim))
    Xt = 0.3 * rng.standard_normal((batch, 6, raw_dim))
    ys = rng.integers(0, n_classes, size=batch)
    return cfg, params, bank, Xs, ys, Xt


def total_loss(params, cfg, bank, Xs, ys, Xt):
    """Source cross-entropy plus domain loss."""
    fs, _ = M.features_forward(Xs, "s", params, cfg, bank)
    ft, _ = M.features_forward(Xt, "t", params, cfg, bank)
    ce, _ = cross_entropy_logits(M.classifier_logits(fs, params), ys)
    ss, _ = M.discriminator_forward(fs, params)
    st, _ = M.discriminator_forward(ft, params)
    dl, _, _ = domain_loss_logits(ss, st)
    return ce + dl


def analytic_gradients(params, cfg, bank, Xs, ys, Xt):
    fs, cache_s = M.features_forward(Xs, "s", params, cfg, bank)
    ft, cache_t = M.features_forward(Xt, "t", params, cfg, bank)
    _, dlogits = cross_entropy_logits(M.classifier_logits(fs, params), ys)
    grads, dfs = M.classifier_backward(dlogits, fs)
    dfs = dfs @ params["cls_W"].T
    ss, c_s = M.discriminator_forward(fs, params)
    st, c_t = M.discriminator_forward(ft, params)
    _, ds_s, ds_t = domain_loss_logits(ss, st)
    g_s, dfs_d = M.discriminator_backward(ds_s, c_s, params)
    g_t, dft_d = M.discriminator_backward(ds_t, c_t, params)
    grads.update({k: g_s[k] + g_t[k] for k in g_s})
    gs = M.features_backward(dfs + dfs_d, cache_s, params, cfg)
    gt = M.features_backward(dft_d, cache_t, params, cfg)
    grads.update({k: gs[k] + gt[k] for k in gs})
    return grads


def numeric_gradient(loss_fn, params, name, step=1e-5):
    p = params[name]
    g = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        orig = p[idx]
        p[idx] = orig + step
        up = loss_fn(params)
        p[idx] = orig - step
        down = loss_fn(params)
        p[idx] = orig
        g[idx] = (up - down) / (2 * step)
    return g


def relative_error(a, b, floor=1e-7):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))) if a.size else 0.0


def run_gradcheck(seed=0, step=1e-5, **dims) -> list[GroupReport]:
    """One report row per parameter group of the miniature model."""
    cfg, params, bank, Xs, ys, Xt = miniature(seed, **dims)
    analytic = analytic_gradients(params, cfg, bank, Xs, ys, Xt)
    loss_fn = lambda p: total_loss(p, cfg, bank, Xs, ys, Xt)
    reports = []
    for group, names in M.parameter_groups(cfg).items():
        errs, n = [], 0
        for name in names:
            numeric = numeric_gradient(loss_fn, params, name, step)
            errs.append(relative_error(analytic[name], numeric))
            n += params[name].size
        reports.append(GroupReport(group, n, max(errs)))
    return reports
