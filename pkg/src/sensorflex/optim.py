"""AdamW with bias-corrected moments and decoupled weight decay.

A tensor is updated only when its gradient slot was actually touched this
step. Tensors on no computation path (embeddings of never-present channel
groups) therefore keep their exact initial values, weight decay included;
frozen tensors are skipped unconditionally.
"""

import numpy as np

from .errors import NumericError
from .params import ParamStore


class AdamW:
    def __init__(self, params: ParamStore, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {n: np.zeros_like(params[n]) for n in params.trainable_names()}
        self.v = {n: np.zeros_like(params[n]) for n in params.trainable_names()}

    def step(self):
        """Apply one update from the accumulated gradients, then clear them."""
        p = self.params
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name in p.trainable_names():
            g = p.grads[name]
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for {name}; step aborted")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            theta = p.tensors[name]
            theta -= self.lr * (m_hat / (np.sqrt(v_hat) + self.eps)
                                + self.weight_decay * theta)
        p.zero_grads()
