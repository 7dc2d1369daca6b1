"""Adam with decoupled weight decay."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamW:
    def __init__(self, named_params: list[tuple[str, Tensor]], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p.data = p.data * (1.0 - self.lr * self.weight_decay)
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        state = {"step": self.step_count}
        for name, m, v in zip(self.names, self.m, self.v):
            state[f"m.{name}"] = m.copy()
            state[f"v.{name}"] = v.copy()
        return state

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step"])
        for i, name in enumerate(self.names):
            self.m[i] = np.array(state[f"m.{name}"], dtype=np.float64)
            self.v[i] = np.array(state[f"v.{name}"], dtype=np.float64)
