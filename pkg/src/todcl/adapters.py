"""Per-task residual adapters and perplexity-based adapter selection."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data.vocab import BOS_ID
from .model import TransformerLM


class AdapterConflictError(ValueError):
    pass


@dataclass
class AdapterParams:
    """Bottleneck blocks ``ReLU(LN(H) W_E) W_D + H``, one per transformer layer."""

    task_label: str
    bottleneck: int
    weights: dict[str, Tensor]
    n_layers: int

    @classmethod
    def init(cls, task_label: str, d_model: int, n_layers: int, bottleneck: int, seed: int = 0):
        if bottleneck < 1:
            raise ValueError("bottleneck must be >= 1")
        rng = np.random.default_rng(seed)
        w = {}
        for l in range(n_layers):
            w[f"l{l}.ln.g"] = np.ones(d_model)
            w[f"l{l}.ln.b"] = np.zeros(d_model)
            w[f"l{l}.w_e"] = rng.normal(0.0, 0.01, size=(d_model, bottleneck))
            # zero up-projection: a new adapter is an exact identity
            w[f"l{l}.w_d"] = np.zeros((bottleneck, d_model))
        weights = {k: Tensor(v, requires_grad=True, name=f"{task_label}:{k}") for k, v in w.items()}
        return cls(task_label, bottleneck, weights, n_layers)

    def forward(self, h: Tensor, layer: int) -> Tensor:
        return adapter_forward(h, self, layer)

    def parameters(self) -> list[Tensor]:
        return list(self.weights.values())

    def num_params(self) -> int:
        return sum(p.size for p in self.weights.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([p.data.reshape(-1) for p in self.weights.values()])

    def fingerprint(self) -> str:
        return hashlib.sha256(self.flat().tobytes()).hexdigest()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.weights.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in snap.items():
            self.weights[k].data = v.copy()


def adapter_forward(h: Tensor, a: AdapterParams, layer: int) -> Tensor:
    if not 0 <= layer < a.n_layers:
        raise IndexError(f"adapter {a.task_label!r} has {a.n_layers} layers, got layer {layer}")
    w = a.weights
    if h.shape[-1] != w[f"l{layer}.w_e"].shape[0]:
        raise ag.ShapeError(f"hidden size {h.shape[-1]} does not match adapter {w[f'l{layer}.w_e'].shape}")
    z = ag.layer_norm(h, w[f"l{layer}.ln.g"], w[f"l{layer}.ln.b"])
    z = ag.relu(ag.linear(z, w[f"l{layer}.w_e"]))
    return ag.linear(z, w[f"l{layer}.w_d"]) + h


@dataclass
class AdapterBank:
    base: TransformerLM
    adapters: list[AdapterParams] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.adapters)

    @property
    def labels(self) -> list[str]:
        return [a.task_label for a in self.adapters]

    def get(self, label: str) -> AdapterParams:
        for a in self.adapters:
            if a.task_label == label:
                return a
        raise KeyError(label)

    def spawn(self, task_label: str, bottleneck: int = 50, init_seed: int = 0) -> AdapterParams:
        if task_label in self.labels:
            raise AdapterConflictError(f"adapter {task_label!r} already exists")
        cfg = self.base.config
        a = AdapterParams.init(task_label, cfg.d_model, cfg.n_layers, bottleneck, init_seed)
        self.adapters.append(a)
        return a

    def added_params(self) -> int:
        return sum(a.num_params() for a in self.adapters)

    def perplexities(self, inputs, include_specials: bool = True, special_ids=None,
                     upto: int | None = None) -> np.ndarray:
        """``alpha[i, t]``: perplexity of adapter ``t`` on input token sequence ``i``.

        Each input is scored as ``[BOS] + tokens``.
        """
        adapters = self.adapters[:upto] if upto is not None else self.adapters
        seqs = [np.concatenate([[BOS_ID], np.asarray(x, dtype=np.int64)]) for x in inputs]
        alpha = np.empty((len(seqs), len(adapters)))
        for t, a in enumerate(adapters):
            nlls = self.base.token_nll(seqs, a)
            for i, (s, nll) in enumerate(zip(seqs, nlls)):
                if not include_specials and special_ids:
                    keep = ~np.isin(s[1:], list(special_ids))
                    nll = nll[keep] if keep.any() else nll
                alpha[i, t] = np.exp(nll.mean())
        return alpha

    def select(self, x_tokens, include_specials: bool = True, special_ids=None):
        """Index of the lowest-perplexity adapter for one input and every alpha."""
        if not self.adapters:
            raise ValueError("adapter bank is empty")
        alpha = self.perplexities([x_tokens], include_specials, special_ids)[0]
        return int(np.argmin(alpha)), alpha


def select_adapter(bank: AdapterBank, x_tokens, include_specials: bool = True, special_ids=None):
    # np.argmin returns the first minimum: ties go to the earliest-trained task
    return bank.select(x_tokens, include_specials, special_ids)
