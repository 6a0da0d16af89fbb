from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Adam:
    """Adaptive moment estimation over a fixed, ordered parameter list."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params: list[Tensor] = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            dt = p.data.dtype
            self.m[i] = (self.b1 * self.m[i] + (1.0 - self.b1) * g).astype(dt, copy=False)
            self.v[i] = (self.b2 * self.v[i] + (1.0 - self.b2) * g * g).astype(dt, copy=False)
            upd = self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.data = (p.data - upd).astype(dt, copy=False)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    def load_state_arrays(self, t: int, arrays: dict[str, np.ndarray]):
        self.t = int(t)
        for i in range(len(self.params)):
            self.m[i] = arrays[f"m{i}"].astype(self.params[i].dtype).reshape(self.params[i].shape)
            self.v[i] = arrays[f"v{i}"].astype(self.params[i].dtype).reshape(self.params[i].shape)
