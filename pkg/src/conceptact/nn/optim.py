"""AdamW: Adam moments with decoupled weight decay."""
from __future__ import annotations

import numpy as np

from .params import ParameterStore


class AdamW:
    variant = "adamw(bias-corrected, decoupled decay)"

    def __init__(self, store: ParameterStore, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        self.store = store
        self.lr, self.eps, self.weight_decay = lr, eps, weight_decay
        self.b1, self.b2 = betas
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        step_size = self.lr / c1
        inv_sqrt_c2 = 1.0 / np.sqrt(c2)
        for name, p in self.store.trainable():
            g = p.grad
            if g is None:
                continue
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            # in place: m, v are updated and buf holds the step
            m *= self.b1
            m += (1.0 - self.b1) * g
            buf = g * g
            buf *= 1.0 - self.b2
            v *= self.b2
            v += buf
            np.sqrt(v, out=buf)
            buf *= inv_sqrt_c2
            buf += self.eps
            np.divide(m, buf, out=buf)
            buf *= step_size
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= buf
