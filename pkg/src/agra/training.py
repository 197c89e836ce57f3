"""Two-stage training.

Stage 1 fits extractor, graph and classifier on labelled source data. Stage 2
alternates, per pair of source/target batches, one discriminator step that
lowers the domain loss and one feature/classifier step that lowers
``cross_entropy - adv_weight * domain_loss`` with the discriminator frozen,
then refreshes the distribution bank.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .bank import (
    ClassDistributionBank,
    assign_clusters,
    initialize_bank,
    maybe_recluster,
    update_moving_average,
)
from .errors import ConfigError
from .losses import confusion_loss_logits, cross_entropy_logits, domain_loss_logits
from .optim import OptimizerState, sgd_step
from .synth import DomainDataset

log = logging.getLogger(__name__)

METRICS_COLUMNS = ("epoch", "stage", "cls_loss", "dom_loss", "src_acc", "tgt_acc", "d_acc", "lr_fg", "lr_d")
METRICS_VERSION = 1
ADV_LOSSES = ("minimax", "confusion")


@dataclass
class TrainConfig:
    lr_fg: float = 1e-4
    lr_d: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    stage1_epochs: int = 15
    stage2_epochs: int = 20
    lr_drop_epoch_fg: int = 10
    d_plateau_patience: int = 3
    d_plateau_threshold: float = 1e-3
    batch_size: int = 32
    adv_weight: float = 1.0
    adv_loss: str = "minimax"
    alpha: float = 0.1
    recluster_period: int = 10
    bank_clusters: int | None = None
    bank_source_mode: str = "labels"
    recluster: bool = True
    ema: bool = True
    train_adjacency: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("lr_fg", "lr_d"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.adv_loss not in ADV_LOSSES:
            raise ConfigError(f"adv_loss must be one of {ADV_LOSSES}")


@dataclass
class TrainResult:
    params: dict
    bank: ClassDistributionBank | None
    history: list[dict] = field(default_factory=list)


def trainable_names(model_config: M.ModelConfig, train_config: TrainConfig, include_discriminator=False):
    groups = M.parameter_groups(model_config)
    names = []
    for g, members in groups.items():
        if g == "discriminator" and not include_discriminator:
            continue
        if g in ("A_intra", "A_inter") and not train_config.train_adjacency:
            continue
        names.extend(members)
    return names


def _discriminator_names(model_config):
    return M.parameter_groups(model_config)["discriminator"]


def epoch_batches(n_primary, n_secondary, batch_size, rng_primary, rng_secondary):
    """Yield index batches pairing two sets of different sizes.

    Iterations cover the larger set once per epoch; each side walks its own
    shuffled permutation and the smaller one starts a fresh permutation when
    exhausted.
    """
    n_iter = math.ceil(max(n_primary, n_secondary) / batch_size)

    def stream(n, rng):
        while True:
            yield from rng.permutation(n)

    def take(it, k):
        return np.fromiter((next(it) for _ in range(k)), dtype=int, count=k)

    sp = stream(n_primary, rng_primary)
    ss = stream(n_secondary, rng_secondary) if n_secondary else None
    for i in range(n_iter):
        k = min(batch_size, max(n_primary, n_secondary) - i * batch_size)
        yield take(sp, k), (take(ss, k) if ss is not None else None)


def extract_all(params, model_config, X):
    return M.extract(X, params, model_config.extractor)


def build_bank(params, model_config, train_config, source: DomainDataset, target: DomainDataset):
    C = train_config.bank_clusters or model_config.n_classes
    return initialize_bank(
        extract_all(params, model_config, source.regions),
        source.labels,
        extract_all(params, model_config, target.regions),
        C,
        mode=train_config.bank_source_mode,
        alpha=train_config.alpha,
        recluster_period=train_config.recluster_period,
        seed=train_config.seed,
    )


def predict(params, model_config, bank, X, domain, batch_size=512):
    out = []
    for i in range(0, len(X), batch_size):
        feat, _ = M.features_forward(X[i:i + batch_size], domain, params, model_config, bank)
        out.append(np.argmax(M.classifier_logits(feat, params), axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def discriminator_logits(params, model_config, bank, X, domain, batch_size=512):
    out = []
    for i in range(0, len(X), batch_size):
        feat, _ = M.features_forward(X[i:i + batch_size], domain, params, model_config, bank)
        out.append(M.discriminator_forward(feat, params)[0])
    return np.concatenate(out) if out else np.zeros(0)


def accuracy(params, model_config, bank, dataset: DomainDataset):
    y = dataset.any_labels
    if y is None:
        return float("nan")
    return float(np.mean(predict(params, model_config, bank, dataset.regions, dataset.domain) == y))


def discriminator_accuracy(params, model_config, bank, source, target):
    """Fraction of pooled samples whose domain D gets right (logit > 0 means source)."""
    ss = discriminator_logits(params, model_config, bank, source.regions, "s")
    st = discriminator_logits(params, model_config, bank, target.regions, "t")
    return float((np.sum(ss > 0) + np.sum(st <= 0)) / (len(ss) + len(st)))


# ---------------------------------------------------------------- stage 1

def source_step(params, opt, model_config, train_config, X, y, bank, lr):
    """One supervised step on a source batch; returns the batch loss."""
    feat, cache = M.features_forward(X, "s", params, model_config, bank)
    logits = M.classifier_logits(feat, params)
    loss, dlogits = cross_entropy_logits(logits, y)
    grads, dfeat = M.classifier_backward(dlogits, feat)
    grads.update(M.features_backward(dfeat @ params["cls_W"].T, cache, params, model_config))
    sgd_step(params, grads, opt, lr, train_config.momentum, train_config.weight_decay,
             names=trainable_names(model_config, train_config))
    return loss


def train_stage1(source, target, model_config, train_config, params=None, eval_target=None, batch_seed=None,
                 eval_source=None):
    """Supervised source training.

    The bank is rebuilt from the current extractor at the start of every epoch
    so graph nodes of the other domain are populated, and once more at the end
    from the trained extractor; that final bank is what stage 2 starts from.
    """
    if len(source) == 0:
        raise ConfigError("empty source dataset")
    params = M.init_params(model_config, train_config.seed) if params is None else params
    opt = OptimizerState()
    seed = train_config.seed if batch_seed is None else batch_seed
    rng_s = np.random.default_rng([seed, 1, 0])
    rng_t = np.random.default_rng([seed, 1, 1])
    history = []
    bank = None
    uses_graph = model_config.uses_graph
    for epoch in range(1, train_config.stage1_epochs + 1):
        if uses_graph:
            bank = build_bank(params, model_config, train_config, source, target)
        losses = []
        for bs, _ in epoch_batches(len(source), 0, train_config.batch_size, rng_s, rng_t):
            losses.append(source_step(params, opt, model_config, train_config,
                                      source.regions[bs], source.labels[bs], bank, train_config.lr_fg))
        shown = source if eval_source is None else eval_source
        history.append(_row(epoch, 1, np.mean(losses), float("nan"), params, model_config, bank,
                            shown, eval_target, None, train_config.lr_fg, float("nan")))
        log.info("stage1 epoch %d loss %.4f src_acc %.3f", epoch, history[-1]["cls_loss"], history[-1]["src_acc"])
    if uses_graph:
        bank = build_bank(params, model_config, train_config, source, target)
    return TrainResult(params, bank, history)


def _row(epoch, stage, cls_loss, dom_loss, params, model_config, bank, source, eval_target, heldout, lr_fg, lr_d):
    d_acc = float("nan")
    if stage == 2 and heldout is not None:
        d_acc = discriminator_accuracy(params, model_config, bank, *heldout)
    return {
        "epoch": epoch,
        "stage": stage,
        "cls_loss": float(cls_loss),
        "dom_loss": float(dom_loss),
        "src_acc": accuracy(params, model_config, bank, source),
        "tgt_acc": accuracy(params, model_config, bank, eval_target) if eval_target is not None else float("nan"),
        "d_acc": d_acc,
        "lr_fg": lr_fg,
        "lr_d": lr_d,
    }


# ---------------------------------------------------------------- stage 2

@dataclass
class Stage2State:
    opt_fg: OptimizerState = field(default_factory=OptimizerState)
    opt_d: OptimizerState = field(default_factory=OptimizerState)
    lr_fg: float = 0.0
    lr_d: float = 0.0


def discriminator_step(params, state, model_config, train_config, feat_s, feat_t):
    """Sub-step (b): one SGD step on D only. Returns the domain loss before the step."""
    s_s, c_s = M.discriminator_forward(feat_s, params)
    s_t, c_t = M.discriminator_forward(feat_t, params)
    loss, ds_s, ds_t = domain_loss_logits(s_s, s_t)
    g_s, _ = M.discriminator_backward(ds_s, c_s, params)
    g_t, _ = M.discriminator_backward(ds_t, c_t, params)
    grads = {k: g_s[k] + g_t[k] for k in g_s}
    sgd_step(params, grads, state.opt_d, state.lr_d, train_config.momentum, train_config.weight_decay)
    return loss


def feature_step(params, state, model_config, train_config, Xs, ys, Xt, cache_s, cache_t, feat_s, feat_t):
    """Sub-step (c): one SGD step on F and G against the frozen discriminator.

    Returns ``(cls_loss, dom_loss)`` evaluated before the step.
    """
    logits = M.classifier_logits(feat_s, params)
    cls_loss, dlogits = cross_entropy_logits(logits, ys)
    grads, dfeat_s = M.classifier_backward(dlogits, feat_s)
    dfeat_s = dfeat_s @ params["cls_W"].T

    s_s, c_s = M.discriminator_forward(feat_s, params)
    s_t, c_t = M.discriminator_forward(feat_t, params)
    dom_loss, ds_s, ds_t = domain_loss_logits(s_s, s_t)
    lam = train_config.adv_weight
    if train_config.adv_loss == "confusion":
        # cross-entropy against a 0.5 domain label, minimised by F: its gradient
        # does not vanish when D is confident and its optimum is D = 1/2
        _, ds_s, ds_t = confusion_loss_logits(s_s, s_t)
        lam = -lam
    _, dfs_dom = M.discriminator_backward(-lam * ds_s, c_s, params)
    _, dft_dom = M.discriminator_backward(-lam * ds_t, c_t, params)

    gs = M.features_backward(dfeat_s + dfs_dom, cache_s, params, model_config)
    gt = M.features_backward(dft_dom, cache_t, params, model_config)
    for k in gs:
        grads[k] = gs[k] + gt[k]
    sgd_step(params, grads, state.opt_fg, state.lr_fg, train_config.momentum, train_config.weight_decay,
             names=trainable_names(model_config, train_config))
    return cls_loss, dom_loss


def bank_step(bank, params, model_config, train_config, Xs, ys, Xt):
    """Sub-step (d): EMA update of both bank domains from post-step features."""
    if bank is None or not train_config.ema:
        return bank
    fs = extract_all(params, model_config, Xs)
    ft = extract_all(params, model_config, Xt)
    if bank.n_clusters == 1:
        a_s = np.zeros(len(fs), dtype=int)
        a_t = np.zeros(len(ft), dtype=int)
    else:
        a_s = ys if bank.source_mode == "labels" else assign_clusters(fs, bank, "s")
        # target samples are indexed through the source bank so clusters stay class-aligned
        a_t = assign_clusters(ft, bank, "s")
    bank = update_moving_average(bank, fs, a_s, "s")
    return update_moving_average(bank, ft, a_t, "t")


def stage2_step(params, bank, state, model_config, train_config, Xs, ys, Xt):
    """Run sub-steps (a)-(d) on one source/target batch pair.

    Returns ``(bank, cls_loss, d_loss)``; ``params`` is updated in place.
    """
    feat_s, cache_s = M.features_forward(Xs, "s", params, model_config, bank)
    feat_t, cache_t = M.features_forward(Xt, "t", params, model_config, bank)
    d_loss = discriminator_step(params, state, model_config, train_config, feat_s, feat_t)
    cls_loss, _ = feature_step(params, state, model_config, train_config, Xs, ys, Xt,
                               cache_s, cache_t, feat_s, feat_t)
    bank = bank_step(bank, params, model_config, train_config, Xs, ys, Xt)
    return bank, cls_loss, d_loss


def train_stage2(source, target, params, bank, model_config, train_config, eval_target=None, heldout=None,
                 batch_seed=None, eval_source=None):
    """Adversarial adaptation.

    ``heldout`` is an optional ``(source, target)`` pair kept out of training,
    used for the per-epoch discriminator accuracy. The feature/classifier rate
    drops tenfold after ``lr_drop_epoch_fg`` epochs; the discriminator rate
    drops tenfold whenever its epoch-mean loss has improved by less than
    ``d_plateau_threshold`` (relative) for ``d_plateau_patience`` epochs.
    """
    if model_config.uses_graph and bank is None:
        raise ConfigError("stage 2 needs the bank produced by stage 1")
    params = dict(params)  # updates rebind entries, so the caller's stage-1 params stay intact
    seed = train_config.seed if batch_seed is None else batch_seed
    rng_s = np.random.default_rng([seed, 2, 0])
    rng_t = np.random.default_rng([seed, 2, 1])
    state = Stage2State(lr_fg=train_config.lr_fg, lr_d=train_config.lr_d)
    history = []
    prev_d = None
    stale = 0
    for epoch in range(1, train_config.stage2_epochs + 1):
        if epoch == train_config.lr_drop_epoch_fg + 1:
            state.lr_fg = train_config.lr_fg / 10
        cls_losses, d_losses = [], []
        for bs, bt in epoch_batches(len(source), len(target), train_config.batch_size, rng_s, rng_t):
            bank, cl, dl = stage2_step(params, bank, state, model_config, train_config,
                                       source.regions[bs], source.labels[bs], target.regions[bt])
            cls_losses.append(cl)
            d_losses.append(dl)
        d_mean = float(np.mean(d_losses))
        if bank is not None:
            bank = maybe_recluster(bank, epoch, extract_all(params, model_config, source.regions),
                                   extract_all(params, model_config, target.regions), source.labels,
                                   enabled=train_config.recluster)
        # metrics use the bank as it leaves the epoch, i.e. the one a checkpoint would hold
        shown = source if eval_source is None else eval_source
        history.append(_row(epoch, 2, np.mean(cls_losses), d_mean, params, model_config, bank,
                            shown, eval_target, heldout, state.lr_fg, state.lr_d))
        log.info("stage2 epoch %d cls %.4f dom %.4f tgt_acc %.3f", epoch, history[-1]["cls_loss"], d_mean,
                 history[-1]["tgt_acc"])

        if prev_d is not None and (prev_d - d_mean) / max(abs(prev_d), 1e-12) < train_config.d_plateau_threshold:
            stale += 1
        else:
            stale = 0
        if stale >= train_config.d_plateau_patience:
            state.lr_d /= 10
            stale = 0
        prev_d = d_mean
    return TrainResult(params, bank, history)


def fit(source, target, model_config, train_config, eval_target=None, heldout=None, eval_source=None):
    """Stage 1 followed by stage 2; the returned history spans both."""
    r1 = train_stage1(source, target, model_config, train_config, eval_target=eval_target, eval_source=eval_source)
    r2 = train_stage2(source, target, r1.params, r1.bank, model_config, train_config,
                      eval_target=eval_target, heldout=heldout, eval_source=eval_source)
    return TrainResult(r2.params, r2.bank, r1.history + r2.history)
