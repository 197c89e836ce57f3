"""Holistic-local node topology, prior adjacencies and dense graph convolution.

Nodes are laid out as six source rows followed by six target rows, each block
ordered ``h, le, re, no, lm, rm``. Every matrix in the package (adjacency,
node features, checkpoint arrays) uses this ordering.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NumericError

REGIONS = ("h", "le", "re", "no", "lm", "rm")
DOMAINS = ("s", "t")
N_REGIONS = len(REGIONS)
N_NODES = 2 * N_REGIONS
NODE_IDS = tuple(f"{r}_{d}" for d in DOMAINS for r in REGIONS)

DEFAULT_INTRA_EDGES = {"holistic_local": 1.0, "local_local": 0.5, "self_loop": 1.0}
DEFAULT_INTER_EDGES = {"global_global": 1.0, "global_local": 0.5, "local_local": 0.75}


def region_of(i: int) -> str:
    return REGIONS[_check_node(i) % N_REGIONS]


def domain_of(i: int) -> str:
    return DOMAINS[_check_node(i) // N_REGIONS]


def node_index(region: str, domain: str) -> int:
    return DOMAINS.index(domain) * N_REGIONS + REGIONS.index(region)


def domain_rows(domain: str) -> slice:
    """Row slice holding the six nodes of ``domain``."""
    d = DOMAINS.index(domain)
    return slice(d * N_REGIONS, (d + 1) * N_REGIONS)


def other_domain(domain: str) -> str:
    return "t" if domain == "s" else "s"


def _check_node(i: int) -> int:
    if not 0 <= i < N_NODES:
        raise IndexError(f"node index {i} outside 0..{N_NODES - 1}")
    return i


def _require(edge_values: Mapping[str, float], keys: Sequence[str]) -> dict[str, float]:
    missing = [k for k in keys if k not in edge_values]
    if missing:
        raise ConfigError(f"missing edge value(s): {', '.join(missing)}")
    out = {k: float(edge_values[k]) for k in keys}
    if not all(np.isfinite(v) for v in out.values()):
        raise ConfigError(f"edge values must be finite, got {out}")
    return out


def build_prior_intra(edge_values: Mapping[str, float] = DEFAULT_INTRA_EDGES) -> np.ndarray:
    """Within-domain prior: holistic-local, local-local and self-loop weights.

    Cross-domain entries are zero.
    """
    ev = _require(edge_values, ("holistic_local", "local_local", "self_loop"))
    block = np.full((N_REGIONS, N_REGIONS), ev["local_local"])
    block[0, :] = ev["holistic_local"]
    block[:, 0] = ev["holistic_local"]
    np.fill_diagonal(block, ev["self_loop"])
    A = np.zeros((N_NODES, N_NODES))
    for d in DOMAINS:
        rows = domain_rows(d)
        A[rows, rows] = block
    return A


def build_prior_inter(
    edge_values: Mapping[str, float] = DEFAULT_INTER_EDGES, all_local_pairs: bool = False
) -> np.ndarray:
    """Cross-domain prior: global-global, global-local and local-local weights.

    Local-local edges join same-region pairs only unless ``all_local_pairs``.
    Same-domain entries (including the diagonal) are zero.
    """
    ev = _require(edge_values, ("global_global", "global_local", "local_local"))
    block = np.zeros((N_REGIONS, N_REGIONS))
    block[0, 0] = ev["global_global"]
    block[0, 1:] = ev["global_local"]
    block[1:, 0] = ev["global_local"]
    if all_local_pairs:
        block[1:, 1:] = ev["local_local"]
    else:
        block[range(1, N_REGIONS), range(1, N_REGIONS)] = ev["local_local"]
    A = np.zeros((N_NODES, N_NODES))
    A[domain_rows("s"), domain_rows("t")] = block
    A[domain_rows("t"), domain_rows("s")] = block.T
    return A


ACTIVATIONS: dict[str, tuple[Callable[[np.ndarray], np.ndarray], Callable[[np.ndarray], np.ndarray]]] = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(z.dtype)),
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
}


@dataclass
class GcnLayerParams:
    W: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class GcnStackConfig:
    """Depths and channel widths of the intra- and inter-domain stacks.

    The intra stack widens to ``hidden_dim`` and returns to ``node_dim`` on its
    last layer (64 -> 128 -> 64 at the default depth of two); the inter stack
    keeps ``node_dim`` throughout.
    """

    t_intra: int = 2
    t_inter: int = 1
    node_dim: int = 64
    hidden_dim: int = 128

    def __post_init__(self):
        if self.t_intra < 0 or self.t_inter < 0:
            raise ConfigError("stack depths must be non-negative")

    @property
    def intra_dims(self) -> list[int]:
        if self.t_intra == 0:
            return [self.node_dim]
        return [self.node_dim] + [self.hidden_dim] * (self.t_intra - 1) + [self.node_dim]

    @property
    def inter_dims(self) -> list[int]:
        return [self.node_dim] * (self.t_inter + 1)

    def weight_shapes(self) -> dict[str, tuple[int, int]]:
        shapes = {}
        d = self.intra_dims
        for l in range(self.t_intra):
            shapes[f"W_intra_{l}"] = (d[l], d[l + 1])
        d = self.inter_dims
        for l in range(self.t_inter):
            shapes[f"W_inter_{l}"] = (d[l], d[l + 1])
        return shapes


def _as_batch(H: np.ndarray) -> tuple[np.ndarray, bool]:
    if H.ndim == 2:
        return H[None], True
    if H.ndim == 3:
        return H, False
    raise DimensionError(f"node features must be 2-D or batched 3-D, got shape {H.shape}")


def gcn_layer(H: np.ndarray, A_hat: np.ndarray, layer: GcnLayerParams) -> np.ndarray:
    """``sigma(A_hat @ H @ W)`` with no normalisation of ``A_hat``.

    ``H`` may carry a leading batch axis; ``A_hat`` and ``W`` are shared.
    """
    out, _ = gcn_layer_forward(H, A_hat, layer.W, layer.activation)
    return out


def gcn_layer_forward(H, A_hat, W, activation="relu"):
    Hb, squeeze = _as_batch(np.asarray(H, dtype=float))
    n = Hb.shape[1]
    if A_hat.shape != (n, n):
        raise DimensionError(f"adjacency shape {A_hat.shape} does not match {n} nodes")
    if W.ndim != 2 or W.shape[0] != Hb.shape[2]:
        raise DimensionError(f"weight shape {W.shape} does not match feature dim {Hb.shape[2]}")
    if not (np.isfinite(Hb).all() and np.isfinite(A_hat).all() and np.isfinite(W).all()):
        raise NumericError("non-finite value entering graph convolution")
    M = np.einsum("ij,bjd->bid", A_hat, Hb)
    Z = M @ W
    act, _ = ACTIVATIONS[activation]
    out = act(Z)
    cache = (Hb, A_hat, W, M, Z, activation, squeeze)
    return (out[0] if squeeze else out), cache


def gcn_layer_backward(dOut, cache):
    """Return ``(dH, dA_hat, dW)`` for upstream gradient ``dOut``."""
    Hb, A_hat, W, M, Z, activation, squeeze = cache
    dOut = dOut[None] if squeeze else dOut
    _, dact = ACTIVATIONS[activation]
    dZ = dOut * dact(Z)
    dW = np.einsum("bid,bie->de", M, dZ)
    dM = dZ @ W.T
    dA = np.einsum("bid,bjd->ij", dM, Hb)
    dH = np.einsum("ij,bid->bjd", A_hat, dM)
    return (dH[0] if squeeze else dH), dA, dW


@dataclass
class AdjacencyParams:
    A_intra: np.ndarray
    A_inter: np.ndarray
    trainable: dict[str, bool] = field(default_factory=lambda: {"A_intra": True, "A_inter": True})

    @classmethod
    def from_priors(cls, intra_edges=DEFAULT_INTRA_EDGES, inter_edges=DEFAULT_INTER_EDGES, trainable=True):
        return cls(
            build_prior_intra(intra_edges),
            build_prior_inter(inter_edges),
            {"A_intra": trainable, "A_inter": trainable},
        )


def propagate(
    H0: np.ndarray,
    adjacency: AdjacencyParams,
    stacks: GcnStackConfig,
    params: Mapping[str, np.ndarray],
    single_gcn: bool = False,
    activation: str = "relu",
    inter_self_loop: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Run the intra stack then the inter stack; return ``(H_intra, H_final)``.

    Inter layers propagate over ``A_inter + inter_self_loop * I``: the inter
    prior has no same-domain entries, so without the fixed self-loop a node's
    own feature would be replaced entirely by its cross-domain neighbours.
    With ``single_gcn`` one stack of depth ``t_intra`` runs over the summed
    adjacency ``A_intra + A_inter`` and no inter stack follows.
    """
    H_intra, H_final, _ = propagate_forward(H0, adjacency.A_intra, adjacency.A_inter, stacks, params,
                                            single_gcn, activation, inter_self_loop)
    return H_intra, H_final


def propagate_forward(H0, A_intra, A_inter, stacks, params, single_gcn=False, activation="relu",
                      inter_self_loop=1.0):
    caches = []
    H = H0
    A = A_intra + A_inter if single_gcn else A_intra
    for l in range(stacks.t_intra):
        H, c = gcn_layer_forward(H, A, params[f"W_intra_{l}"], activation)
        caches.append((f"W_intra_{l}", c))
    H_intra = H
    if not single_gcn and stacks.t_inter:
        A = A_inter + inter_self_loop * np.eye(len(A_inter))
        for l in range(stacks.t_inter):
            H, c = gcn_layer_forward(H, A, params[f"W_inter_{l}"], activation)
            caches.append((f"W_inter_{l}", c))
    return H_intra, H, (caches, single_gcn)


def propagate_backward(dH_final, cache):
    """Backprop through the stacks. Returns ``(dH0, grads)`` with adjacency grads keyed ``A_intra``/``A_inter``."""
    caches, single_gcn = cache
    grads: dict[str, np.ndarray] = {}
    dA_intra = dA_inter = None
    dH = dH_final
    for name, c in reversed(caches):
        dH, dA, dW = gcn_layer_backward(dH, c)
        grads[name] = dW
        if name.startswith("W_intra"):
            dA_intra = dA if dA_intra is None else dA_intra + dA
        if single_gcn or name.startswith("W_inter"):
            # the merged graph feeds A_intra + A_inter, so both receive dA
            dA_inter = dA if dA_inter is None else dA_inter + dA
    zeros = np.zeros((N_NODES, N_NODES))
    grads["A_intra"] = zeros.copy() if dA_intra is None else dA_intra
    grads["A_inter"] = zeros.copy() if dA_inter is None else dA_inter
    return dH, grads
