"""Adam with classic (coupled) L2 weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(0, {k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()})


def clip_grad_norm(grads: dict[str, np.ndarray | None], max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values() if g is not None)))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            if g is not None:
                g *= scale
    return norm


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0) -> None:
    """In-place Adam update of ``params``.

    Weight decay is added to the gradient before the moment updates (L2 form).
    Swapping to decoupled decay means subtracting ``lr * weight_decay * p``
    from the parameter instead.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    step_size = lr / bc1
    inv_sqrt_bc2 = 1.0 / np.sqrt(bc2)
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if weight_decay:
            g = g + weight_decay * p.data
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        # in place with one scratch buffer; the update is lr*m_hat/(sqrt(v_hat)+eps)
        buf = np.multiply(g, 1.0 - beta1)
        m *= beta1
        m += buf
        np.multiply(g, g, out=buf)
        buf *= 1.0 - beta2
        v *= beta2
        v += buf
        np.sqrt(v, out=buf)
        buf *= inv_sqrt_bc2
        buf += eps
        np.divide(m, buf, out=buf)
        buf *= step_size
        p.data -= buf


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = AdamState.zeros_like(params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, {k: p.grad for k, p in self.params.items()}, self.state,
                  self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)
