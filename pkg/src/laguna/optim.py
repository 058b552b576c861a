"""AdamW with decoupled weight decay and an optional cosine learning-rate
schedule anchored to a known total step budget."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Node
from .errors import EmptyParameterListError


class AdamW:
    """Adam with weight decay applied directly to parameters (not folded
    into the gradient).

    When ``total_steps`` is given, the effective learning rate follows a
    half-cosine from ``lr`` down to 0 over that many steps:
    lr_t = lr * 0.5 * (1 + cos(pi * t / total_steps)), evaluated at the
    step being applied, so the final step uses lr 0 and steps beyond the
    budget stay there.
    """

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0,
                 total_steps: int | None = None):
        params = list(params)
        if not params:
            raise EmptyParameterListError("AdamW needs at least one parameter")
        for p in params:
            if not isinstance(p, Node):
                raise TypeError(f"parameters must be Node, got {type(p).__name__}")
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.total_steps = total_steps
        self.step_count = 0
        self._m = [np.zeros_like(p.value) for p in params]
        self._v = [np.zeros_like(p.value) for p in params]

    def current_lr(self) -> float:
        """Learning rate the *next* call to step() will apply."""
        return self._lr_at(self.step_count + 1)

    def _lr_at(self, t: int) -> float:
        if self.total_steps is None:
            return self.lr
        frac = min(t, self.total_steps) / self.total_steps
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * frac))

    def step(self):
        """Apply one update from accumulated grads, then zero them."""
        self.step_count += 1
        t = self.step_count
        lr_t = self._lr_at(t)
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self._m, self._v):
            if self.weight_decay:
                p.value -= lr_t * self.weight_decay * p.value
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            p.value -= lr_t * m_hat / (np.sqrt(v_hat) + self.eps)
        self.zero_grad()

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
