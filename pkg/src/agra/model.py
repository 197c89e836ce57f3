"""Differentiable model: region extractors, graph propagation, classifier, discriminator.

All parameters live in one flat ``dict[str, ndarray]``. Forward functions return
a cache that the matching backward function consumes; gradients come back as
dicts keyed like the parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import graph
from .bank import ClassDistributionBank, assign_clusters
from .errors import ConfigError, DimensionError, StateError
from .graph import N_REGIONS, GcnStackConfig, domain_rows, other_domain

FORWARD_MODES = ("full", "hf_only", "hlf_concat", "intra_only", "inter_only", "single_gcn")
ADJACENCY_INITS = ("prior", "random", "ones")


@dataclass(frozen=True)
class ModelConfig:
    raw_dim: int = 32
    n_classes: int = 7
    node_dim: int = 64
    hidden_dim: int = 128
    t_intra: int = 2
    t_inter: int = 1
    extractor: str = "linear"
    extractor_hidden: int = 64
    disc_hidden: tuple[int, int] = (128, 64)
    mode: str = "full"
    adjacency_init: str = "prior"
    intra_edges: dict = field(default_factory=lambda: dict(graph.DEFAULT_INTRA_EDGES))
    inter_edges: dict = field(default_factory=lambda: dict(graph.DEFAULT_INTER_EDGES))
    inter_all_local_pairs: bool = False
    inter_self_loop: float = 1.0

    def __post_init__(self):
        if self.mode not in FORWARD_MODES:
            raise ConfigError(f"unknown forward mode {self.mode!r}; expected one of {FORWARD_MODES}")
        if self.extractor not in ("linear", "mlp"):
            raise ConfigError(f"unknown extractor kind {self.extractor!r}")
        if self.adjacency_init not in ADJACENCY_INITS:
            raise ConfigError(f"unknown adjacency init {self.adjacency_init!r}")

    @property
    def stacks(self) -> GcnStackConfig:
        """Stack depths after the forward mode has switched stacks off."""
        t_intra, t_inter = self.t_intra, self.t_inter
        if self.mode == "intra_only":
            t_inter = 0
        elif self.mode == "inter_only":
            t_intra = 0
        elif self.mode == "single_gcn":
            t_inter = 0
        elif self.mode in ("hf_only", "hlf_concat"):
            t_intra = t_inter = 0
        return GcnStackConfig(t_intra, t_inter, self.node_dim, self.hidden_dim)

    @property
    def uses_graph(self) -> bool:
        return self.mode not in ("hf_only", "hlf_concat")

    @property
    def feature_dim(self) -> int:
        return self.node_dim if self.mode == "hf_only" else N_REGIONS * self.node_dim


def parameter_groups(config: ModelConfig) -> dict[str, list[str]]:
    """Named parameter groups, one per trainable component."""
    if config.extractor == "linear":
        ext = ["ext_W", "ext_b"]
    else:
        ext = ["ext_W1", "ext_b1", "ext_W2", "ext_b2"]
    groups = {"extractor": ext}
    for name in config.stacks.weight_shapes():
        groups[name] = [name]
    if config.uses_graph:
        groups["A_intra"] = ["A_intra"]
        groups["A_inter"] = ["A_inter"]
    groups["classifier"] = ["cls_W", "cls_b"]
    groups["discriminator"] = ["D_W1", "D_b1", "D_W2", "D_b2", "D_W3", "D_b3"]
    return groups


F_GROUPS_EXCLUDE = ("classifier", "discriminator")


def feature_param_names(config) -> list[str]:
    groups = parameter_groups(config)
    return [n for g, names in groups.items() if g not in F_GROUPS_EXCLUDE for n in names]


def _xavier(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Xavier-uniform weights, zero biases, adjacency from ``config.adjacency_init``."""
    rng = np.random.default_rng(seed)
    R, d = config.raw_dim, config.node_dim
    p: dict[str, np.ndarray] = {}
    if config.extractor == "linear":
        p["ext_W"] = _xavier(rng, R, d, (N_REGIONS, R, d))
        p["ext_b"] = np.zeros((N_REGIONS, d))
    else:
        h = config.extractor_hidden
        p["ext_W1"] = _xavier(rng, R, h, (N_REGIONS, R, h))
        p["ext_b1"] = np.zeros((N_REGIONS, h))
        p["ext_W2"] = _xavier(rng, h, d, (N_REGIONS, h, d))
        p["ext_b2"] = np.zeros((N_REGIONS, d))
    for name, (a, b) in config.stacks.weight_shapes().items():
        p[name] = _xavier(rng, a, b)
    if config.uses_graph:
        p["A_intra"], p["A_inter"] = initial_adjacency(config, rng)
    F = config.feature_dim
    h1, h2 = config.disc_hidden
    p["cls_W"] = _xavier(rng, F, config.n_classes)
    p["cls_b"] = np.zeros(config.n_classes)
    p["D_W1"] = _xavier(rng, F, h1)
    p["D_b1"] = np.zeros(h1)
    p["D_W2"] = _xavier(rng, h1, h2)
    p["D_b2"] = np.zeros(h2)
    p["D_W3"] = _xavier(rng, h2, 1)
    p["D_b3"] = np.zeros(1)
    return p


def initial_adjacency(config: ModelConfig, rng=None) -> tuple[np.ndarray, np.ndarray]:
    n = graph.N_NODES
    if config.adjacency_init == "prior":
        return (graph.build_prior_intra(config.intra_edges),
                graph.build_prior_inter(config.inter_edges, config.inter_all_local_pairs))
    if config.adjacency_init == "ones":
        return np.ones((n, n)), np.ones((n, n))
    rng = rng or np.random.default_rng(0)
    # random matrices matched to the prior's overall mass so activations stay on scale
    out = []
    for prior in (graph.build_prior_intra(config.intra_edges),
                  graph.build_prior_inter(config.inter_edges, config.inter_all_local_pairs)):
        M = rng.uniform(0.0, 1.0, size=(n, n))
        M = (M + M.T) / 2
        out.append(M * prior.sum() / M.sum())
    return tuple(out)


# ---------------------------------------------------------------- extractor

def extract_forward(raw, params, kind="linear"):
    X = np.asarray(raw, dtype=float)
    squeeze = X.ndim == 2
    if squeeze:
        X = X[None]
    W = params["ext_W"] if kind == "linear" else params["ext_W1"]
    if X.ndim != 3 or X.shape[1] != N_REGIONS or X.shape[2] != W.shape[1]:
        raise DimensionError(f"raw regions of shape {np.shape(raw)} do not match extractor input {W.shape[1]}")
    if kind == "linear":
        f = np.einsum("bkr,krd->bkd", X, params["ext_W"]) + params["ext_b"]
        cache = (kind, X, None, None)
    else:
        z1 = np.einsum("bkr,krh->bkh", X, params["ext_W1"]) + params["ext_b1"]
        a1 = np.maximum(z1, 0.0)
        f = np.einsum("bkh,khd->bkd", a1, params["ext_W2"]) + params["ext_b2"]
        cache = (kind, X, z1, a1)
    return (f[0] if squeeze else f), (cache, squeeze)


def extract_backward(df, cache, params):
    (kind, X, z1, a1), squeeze = cache
    if squeeze:
        df = df[None]
    if kind == "linear":
        return {"ext_W": np.einsum("bkr,bkd->krd", X, df), "ext_b": df.sum(axis=0)}
    da1 = np.einsum("bkd,khd->bkh", df, params["ext_W2"])
    dz1 = da1 * (z1 > 0)
    return {
        "ext_W2": np.einsum("bkh,bkd->khd", a1, df),
        "ext_b2": df.sum(axis=0),
        "ext_W1": np.einsum("bkr,bkh->krh", X, dz1),
        "ext_b1": dz1.sum(axis=0),
    }


def extract(raw_regions, params, kind="linear"):
    """Apply each region's own extractor to that region: ``(..., 6, R) -> (..., 6, d)``."""
    return extract_forward(raw_regions, params, kind)[0]


# ---------------------------------------------------------------- graph nodes

def init_nodes(features, domain, bank: ClassDistributionBank | None):
    """Place extracted features in their own-domain rows and bank means in the other rows.

    The other-domain rows come from the bank cluster nearest to the sample
    (distance measured against the other domain's means). Returns
    ``(H0, c_star)``; for a single ``(6, d)`` sample both are unbatched.
    """
    if bank is None:
        raise StateError("distribution bank has not been initialised")
    f = np.asarray(features, dtype=float)
    squeeze = f.ndim == 2
    if squeeze:
        f = f[None]
    other = other_domain(domain)
    c_star = assign_clusters(f, bank, other)
    H0 = np.empty((len(f), graph.N_NODES, f.shape[2]))
    H0[:, domain_rows(domain)] = f
    H0[:, domain_rows(other)] = bank.domain_means(other)[c_star]
    if squeeze:
        return H0[0], int(c_star[0])
    return H0, c_star


def features_forward(raw, domain, params, config: ModelConfig, bank=None):
    """Map raw regions to the classifier/discriminator input feature.

    Returns ``(feature, cache)`` with cache fields usable by
    :func:`features_backward`; ``cache["H_intra"]`` and ``cache["H_final"]``
    hold the graph states when the mode uses the graph.
    """
    f, ext_cache = extract_forward(raw, params, config.extractor)
    squeeze = f.ndim == 2
    if squeeze:
        f = f[None]
    cache = {"ext": ext_cache, "squeeze": squeeze, "f": f, "domain": domain}
    B = len(f)
    if config.mode == "hf_only":
        feat = f[:, 0, :].copy()
    elif config.mode == "hlf_concat":
        feat = f.reshape(B, -1)
    else:
        H0, c_star = init_nodes(f, domain, bank)
        H_intra, H_final, gcache = graph.propagate_forward(
            H0, params["A_intra"], params["A_inter"], config.stacks, params,
            single_gcn=config.mode == "single_gcn", inter_self_loop=config.inter_self_loop,
        )
        feat = H_final[:, domain_rows(domain)].reshape(B, -1)
        cache.update(gcn=gcache, c_star=c_star, H_intra=H_intra, H_final=H_final)
    if squeeze:
        feat = feat[0]
    return feat, cache


def features_backward(dfeat, cache, params, config: ModelConfig):
    squeeze, f = cache["squeeze"], cache["f"]
    dfeat = np.asarray(dfeat)
    if squeeze:
        dfeat = dfeat[None]
    B = len(f)
    grads = {}
    if config.mode == "hf_only":
        df = np.zeros_like(f)
        df[:, 0, :] = dfeat
    elif config.mode == "hlf_concat":
        df = dfeat.reshape(f.shape)
    else:
        dH = np.zeros_like(cache["H_final"])
        dH[:, domain_rows(cache["domain"])] = dfeat.reshape(B, N_REGIONS, -1)
        dH0, grads = graph.propagate_backward(dH, cache["gcn"])
        # other-domain rows are bank constants and receive no gradient
        df = dH0[:, domain_rows(cache["domain"])]
    ext_grads = extract_backward(df[0] if cache["ext"][1] else df, cache["ext"], params)
    grads.update(ext_grads)
    return grads


def forward(sample, sample_domain, params, bank, config: ModelConfig):
    """Single-sample or batched forward returning ``(feature, H_intra, H_final)``.

    The graph states are ``None`` in modes that bypass the graph.
    """
    feat, cache = features_forward(sample, sample_domain, params, config, bank)
    H_intra, H_final = cache.get("H_intra"), cache.get("H_final")
    if cache["squeeze"] and H_final is not None:
        H_intra, H_final = H_intra[0], H_final[0]
    return feat, H_intra, H_final


# ---------------------------------------------------------------- classifier

def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def classifier_logits(feature, params):
    W = params["cls_W"]
    if np.shape(feature)[-1] != W.shape[0]:
        raise DimensionError(f"feature dim {np.shape(feature)[-1]} != classifier input {W.shape[0]}")
    return np.asarray(feature) @ W + params["cls_b"]


def classify(feature, params):
    """Class probabilities (softmax of an affine map)."""
    return softmax(classifier_logits(feature, params))


def classifier_backward(dlogits, feature):
    return {"cls_W": feature.T @ dlogits, "cls_b": dlogits.sum(axis=0)}, dlogits


# ---------------------------------------------------------------- discriminator

def discriminator_forward(feature, params):
    """Returns ``(logit, cache)``; the source probability is ``sigmoid(logit)``."""
    x = np.atleast_2d(feature)
    if x.shape[1] != params["D_W1"].shape[0]:
        raise DimensionError(f"feature dim {x.shape[1]} != discriminator input {params['D_W1'].shape[0]}")
    z1 = x @ params["D_W1"] + params["D_b1"]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params["D_W2"] + params["D_b2"]
    a2 = np.maximum(z2, 0.0)
    s = (a2 @ params["D_W3"] + params["D_b3"])[:, 0]
    return s, (x, z1, a1, z2, a2)


def discriminator_backward(ds, cache, params):
    """Gradients of the D parameters and of the input features for upstream ``ds``."""
    x, z1, a1, z2, a2 = cache
    ds = ds[:, None]
    grads = {"D_W3": a2.T @ ds, "D_b3": ds.sum(axis=0)}
    dz2 = (ds @ params["D_W3"].T) * (z2 > 0)
    grads["D_W2"] = a1.T @ dz2
    grads["D_b2"] = dz2.sum(axis=0)
    dz1 = (dz2 @ params["D_W2"].T) * (z1 > 0)
    grads["D_W1"] = x.T @ dz1
    grads["D_b1"] = dz1.sum(axis=0)
    return grads, dz1 @ params["D_W1"].T


def sigmoid(s):
    s = np.asarray(s, dtype=float)
    return np.where(s >= 0, 1.0 / (1.0 + np.exp(-np.abs(s))), np.exp(-np.abs(s)) / (1.0 + np.exp(-np.abs(s))))


def discriminate(feature, params):
    """Probability that ``feature`` came from the source domain."""
    s, _ = discriminator_forward(feature, params)
    # keep probabilities strictly inside (0, 1) even for saturated logits
    out = np.clip(sigmoid(s), np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    return float(out[0]) if np.ndim(feature) == 1 else out


def with_mode(config: ModelConfig, mode: str) -> ModelConfig:
    return replace(config, mode=mode)
