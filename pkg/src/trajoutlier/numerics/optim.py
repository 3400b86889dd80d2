"""Adam and the step-decay learning-rate schedule."""

from dataclasses import dataclass, field

import numpy as np


def lr_at(epoch, base=5e-3, decay=0.9, every=50):
    """Learning rate for a zero-based epoch: ``base * decay ** (epoch // every)``."""
    return base * decay ** (int(epoch) // int(every))


@dataclass
class AdamState:
    lr: float = 5e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def init(cls, params, lr=5e-3, betas=(0.9, 0.999), eps=1e-8):
        return cls(lr=lr, betas=tuple(betas), eps=eps,
                   m=[np.zeros_like(p.data) for p in params],
                   v=[np.zeros_like(p.data) for p in params])


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place on ``params[i].data``.

    A ``None`` gradient is treated as zero, which leaves a parameter with
    zero moment history exactly where it is.
    """
    if len(params) != len(state.m):
        raise ValueError(f"AdamState tracks {len(state.m)} parameters, got {len(params)}")
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = 0.0
        m = state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        v = state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        if m.shape != p.data.shape:
            raise ValueError(f"moment buffer shape {m.shape} does not match parameter {p.data.shape}")
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
