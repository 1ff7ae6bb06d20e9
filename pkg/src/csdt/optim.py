"""Adam optimizer with bias correction for the autodiff parameters."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class NonFiniteGradientError(RuntimeError):
    """A gradient contained NaN or infinity; the step was rejected."""


class Adam:
    """Standard Adam over a name -> Tensor parameter mapping.

    State (first/second moments, step counter) lives on the optimizer. A
    step with any non-finite gradient is rejected before touching any
    parameter. ``lr`` may be changed between steps (schedules).
    """

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if isinstance(params, dict):
            params = params.items()
        self.params = [(name, p) for name, p in params]
        for name, p in self.params:
            if not isinstance(p, Tensor) or not p.requires_grad:
                raise ValueError(f"parameter '{name}' must be a Tensor with requires_grad")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()

    def step(self):
        for name, p in self.params:
            if p.grad is None or not np.isfinite(p.grad).all():
                raise NonFiniteGradientError(f"non-finite gradient for parameter '{name}'")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
