"""AdamW with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamW:
    def __init__(self, params: dict, lr: float = 5e-4, betas=(0.8, 0.99), eps: float = 1e-8,
                 weight_decay: float = 0.01, grad_clip: float | None = None):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float(np.sum(p.grad * p.grad))
        return float(np.sqrt(total))

    def step(self) -> None:
        self.step_count += 1
        scale = 1.0
        if self.grad_clip is not None:
            norm = self.grad_norm()
            if norm > self.grad_clip:
                scale = self.grad_clip / (norm + 1e-12)
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad * scale
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_tensors(self, prefix: str = "adam") -> dict:
        out = {f"{prefix}.step": np.array([float(self.step_count)])}
        for k in self.params:
            out[f"{prefix}.m.{k}"] = self.m[k]
            out[f"{prefix}.v.{k}"] = self.v[k]
        return out

    def load_state_tensors(self, tensors: dict, prefix: str = "adam") -> None:
        self.step_count = int(tensors[f"{prefix}.step"][0])
        for k in self.params:
            self.m[k] = np.array(tensors[f"{prefix}.m.{k}"], dtype=np.float64)
            self.v[k] = np.array(tensors[f"{prefix}.v.{k}"], dtype=np.float64)


def as_params(arrays: dict) -> dict:
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
