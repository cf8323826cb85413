"""Adam optimizer over the autodiff parameter tensors."""

from __future__ import annotations

import numpy as np


class Adam:
    """Classic Adam with bias correction; L2 weight decay is added to the

    gradient (not decoupled). State arrays m/v are kept per parameter.
    """

    def __init__(self, params, lr=0.05, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = np.zeros_like(p.values)

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise RuntimeError(f"parameter {i}: gradient not populated")
            if not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"parameter {i}: non-finite gradient")
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.values
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
