"""Mini-batch training loop shared by every strategy."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autograd import Tensor, no_grad
from .model import EncodedPair, TransformerLM
from .optim import PoisonedGradientError, make_optimizer


class DivergenceError(FloatingPointError):
    def __init__(self, message: str, task_index: int | None = None):
        super().__init__(message if task_index is None else f"task {task_index}: {message}")
        self.task_index = task_index


class EmptyDataError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 3e-3
    adapter_lr: float = 1e-2
    batch_size: int = 16
    epochs: int = 5
    optimizer: str = "adam"
    clip_norm: float | None = 1.0
    include_input_loss: bool = True
    best_on_valid: bool = True
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainLog:
    step_losses: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    valid_losses: list[float] = field(default_factory=list)
    best_epoch: int | None = None


def batches(pairs: Sequence, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(len(pairs))
    for i in range(0, len(order), batch_size):
        yield [pairs[j] for j in order[i:i + batch_size]]


def eval_loss(model: TransformerLM, pairs: Sequence[EncodedPair], adapter=None, batch_size: int = 64) -> float:
    total, count = 0.0, 0
    with no_grad():
        for i in range(0, len(pairs), batch_size):
            chunk = pairs[i:i + batch_size]
            n = sum(int((p.targets != -100).sum()) for p in chunk)
            total += model.loss(chunk, adapter).item() * n
            count += n
    return total / max(count, 1)


def fit(model: TransformerLM, params: list[Tensor], pairs: Sequence[EncodedPair], cfg: TrainConfig,
        rng: np.random.Generator, *, adapter=None, lr: float | None = None,
        valid_pairs: Sequence[EncodedPair] | None = None,
        extra_loss: Callable[[], Tensor] | None = None,
        batch_loss: Callable[[list], Tensor] | None = None,
        grad_hook: Callable[[], None] | None = None,
        task_index: int | None = None) -> TrainLog:
    """Optimise ``params`` on ``pairs`` for ``cfg.epochs`` epochs.

    ``batch_loss`` replaces the plain LM loss on a batch, ``extra_loss`` is
    added to it (regularisers), and ``grad_hook`` may rewrite gradients after
    backward (gradient projection).  With ``best_on_valid`` the parameters of
    the epoch with lowest validation loss are restored at the end.
    """
    if not pairs:
        raise EmptyDataError("no training examples")
    opt = make_optimizer(cfg.optimizer, params, cfg.lr if lr is None else lr, cfg.clip_norm)
    log = TrainLog()
    best, best_snapshot = np.inf, None
    track = cfg.best_on_valid and valid_pairs
    for epoch in range(cfg.epochs):
        running = []
        for batch in batches(pairs, cfg.batch_size, rng):
            opt.zero_grad()
            loss = batch_loss(batch) if batch_loss is not None else model.loss(batch, adapter)
            if extra_loss is not None:
                loss = loss + extra_loss()
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError("training loss is not finite", task_index)
            loss.backward()
            if grad_hook is not None:
                grad_hook()
            try:
                opt.step()
            except PoisonedGradientError as exc:
                raise DivergenceError(str(exc), task_index) from exc
            log.step_losses.append(value)
            running.append(value)
        log.epoch_losses.append(float(np.mean(running)))
        if track:
            v = eval_loss(model, valid_pairs, adapter)
            log.valid_losses.append(v)
            if v < best:
                best, log.best_epoch = v, epoch
                best_snapshot = [p.data.copy() for p in params]
    if track and best_snapshot is not None:
        for p, d in zip(params, best_snapshot):
            p.data = d
    return log


def train_adapter(bank, task_label: str, pairs: Sequence[EncodedPair], cfg: TrainConfig,
                  rng: np.random.Generator | None = None, valid_pairs=None) -> TrainLog:
    """Train adapter ``task_label`` with the base model frozen."""
    adapter = bank.get(task_label)
    if not pairs:
        raise EmptyDataError(f"no training data for {task_label!r}")
    bank.base.freeze(True)
    for a in bank.adapters:
        for p in a.parameters():
            p.requires_grad = a is adapter
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    return fit(bank.base, adapter.parameters(), pairs, cfg, rng, adapter=adapter,
               lr=cfg.adapter_lr, valid_pairs=valid_pairs)
