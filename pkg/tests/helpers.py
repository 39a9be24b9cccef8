"""Shared test utilities: finite differences and tiny configurations."""
from __future__ import annotations

import numpy as np

from todcl.harness import RunConfig


def numerical_grad(f, arrays, eps=1e-6):
    """Central differences of scalar ``f()`` with respect to every array in ``arrays``."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + eps
            up = f()
            a[i] = old - eps
            down = f()
            a[i] = old
            g[i] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def rel_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    # the floor keeps exactly-zero gradients (e.g. key biases under softmax) from reading as 100% error
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(build, tensors, eps=1e-6):
    """Max relative error between autograd and finite differences for ``build() -> scalar Tensor``."""
    for t in tensors:
        t.grad = None
    build().backward()
    analytic = [t.grad.copy() for t in tensors]
    numeric = numerical_grad(lambda: build().item(), [t.data for t in tensors], eps)
    return max(rel_error(a, n) for a, n in zip(analytic, numeric))


def tiny_config(**kw) -> RunConfig:
    base = dict(setting="INTENT", n_domains=2, dialogues_low=20, dialogues_high=24, epochs=3,
                d_model=16, n_heads=2, d_ff=32, max_seq_len=64, pretrain_domains=1,
                pretrain_dialogues=12, pretrain_epochs=1, max_test_per_task=12)
    base.update(kw)
    return RunConfig(**base)
