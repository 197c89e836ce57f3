"""SGD with classical momentum and L2 weight decay folded into the gradient."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


@dataclass
class OptimizerState:
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(params, grads, opt_state: OptimizerState, lr, momentum=0.9, weight_decay=5e-4, names=None):
    """Update ``params`` in place for every name in ``names`` (default: all of ``grads``).

    ``v <- momentum * v + grad + weight_decay * param``; ``param <- param - lr * v``.
    Returns ``params`` for chaining.
    """
    for name in names if names is not None else grads:
        p, g = params[name], grads[name]
        if p.shape != g.shape:
            raise DimensionError(f"{name}: parameter {p.shape} vs gradient {g.shape}")
        v = opt_state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
        v = momentum * v + g + weight_decay * p
        opt_state.velocity[name] = v
        params[name] = p - lr * v
    return params
