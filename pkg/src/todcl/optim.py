"""Gradient-descent optimizers operating in place on ``Tensor`` parameters."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor


class PoisonedGradientError(FloatingPointError):
    """A parameter received a NaN or infinite gradient."""

    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.parameter = name


@dataclass
class OptimizerState:
    kind: str
    lr: float
    clip_norm: float | None = None
    step: int = 0
    moments: dict[int, list[np.ndarray]] = field(default_factory=dict)


def clip_gradients(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        return [g * scale for g in grads]
    return grads


class Optimizer:
    kind = "base"

    def __init__(self, params: list[Tensor], lr: float, clip_norm: float | None = None):
        self.params = list(params)
        self.state = OptimizerState(kind=self.kind, lr=lr, clip_norm=clip_norm)

    @property
    def lr(self) -> float:
        return self.state.lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def _collect(self) -> list[np.ndarray]:
        grads = []
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {p.name or i} {p.data.shape}")
            if not np.all(np.isfinite(g)):
                raise PoisonedGradientError(p.name or f"param[{i}]")
            grads.append(g)
        if self.state.clip_norm is not None:
            grads = clip_gradients(grads, self.state.clip_norm)
        return grads

    def step(self) -> None:
        grads = self._collect()
        self.state.step += 1
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self._update(i, p, g)

    def _update(self, i: int, p: Tensor, g: np.ndarray) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    kind = "sgd"

    def __init__(self, params, lr: float, momentum: float = 0.0, clip_norm: float | None = None):
        super().__init__(params, lr, clip_norm)
        self.momentum = momentum

    def _update(self, i, p, g):
        if self.momentum:
            buf = self.state.moments.get(i)
            if buf is None:
                buf = [np.zeros_like(p.data)]
                self.state.moments[i] = buf
            buf[0] = self.momentum * buf[0] + g
            g = buf[0]
        p.data -= self.state.lr * g


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 clip_norm: float | None = 1.0):
        super().__init__(params, lr, clip_norm)
        self.betas = betas
        self.eps = eps

    def _update(self, i, p, g):
        b1, b2 = self.betas
        buf = self.state.moments.get(i)
        if buf is None:
            buf = [np.zeros_like(p.data), np.zeros_like(p.data)]
            self.state.moments[i] = buf
        m, v = buf
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        t = self.state.step
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p.data -= self.state.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(kind: str, params, lr: float, clip_norm: float | None = 1.0) -> Optimizer:
    if kind == "adam":
        return Adam(params, lr=lr, clip_norm=clip_norm)
    if kind == "sgd":
        return SGD(params, lr=lr, momentum=0.9, clip_norm=clip_norm)
    raise ValueError(f"unknown optimizer {kind!r}")
