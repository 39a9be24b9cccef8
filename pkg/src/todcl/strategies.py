"""Continual-learning strategies and the curriculum driver.

Regularisation (L2, EWC), rehearsal (REPLAY, A-GEM, LAMOL), the per-task
adapter method, plus the sequential (VANILLA) and multitask (MULTI) bounds.
"""
from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .adapters import AdapterBank
from .autograd import Tensor
from .data.dialogue import API_TOKEN, OUT_TOKEN, Example, Setting
from .data.vocab import BOS_ID, GEN_ID, Tokenizer
from .evaluation import TaskData, evaluate_task
from .metrics import MetricMatrix
from .model import EncodedPair, TransformerLM, encode_pair
from .training import EmptyDataError, TrainConfig, TrainLog, fit, train_adapter

log = logging.getLogger(__name__)


class StrategyKind(str, enum.Enum):
    VANILLA = "VANILLA"
    L2 = "L2"
    EWC = "EWC"
    AGEM = "AGEM"
    REPLAY = "REPLAY"
    LAMOL = "LAMOL"
    MULTI = "MULTI"
    ADAPTER = "ADAPTER"


class MemoryConflictError(ValueError):
    pass


# -- episodic memory ---------------------------------------------------------------
class EpisodicMemory:
    """Per-task store of at most ``capacity_per_task`` examples (``None``: keep all)."""

    def __init__(self, capacity_per_task: int | None = 50, seed: int = 0):
        if capacity_per_task is not None and capacity_per_task < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity_per_task = capacity_per_task
        self.seed = seed
        self.store: dict[str, list] = {}

    def __len__(self) -> int:
        return sum(len(v) for v in self.store.values())

    @property
    def tasks(self) -> list[str]:
        return list(self.store)

    def examples(self) -> list:
        return [e for v in self.store.values() for e in v]

    def insert(self, task_label: str, data: Sequence) -> "EpisodicMemory":
        """Keep a seeded uniform sample without replacement of ``data``."""
        if task_label in self.store:
            raise MemoryConflictError(f"task {task_label!r} already in memory")
        cap = len(data) if self.capacity_per_task is None else min(self.capacity_per_task, len(data))
        rng = np.random.default_rng([self.seed, len(self.store)])
        idx = np.sort(rng.choice(len(data), size=cap, replace=False)) if cap else []
        self.store[task_label] = [data[i] for i in idx]
        return self

    def sample(self, k: int, rng: np.random.Generator) -> list:
        pool = self.examples()
        if not pool:
            return []
        idx = rng.choice(len(pool), size=min(k, len(pool)), replace=False)
        return [pool[i] for i in idx]


def memory_insert(memory: EpisodicMemory, data: Sequence, task_label: str) -> EpisodicMemory:
    return memory.insert(task_label, data)


def replay_dataset(data: Sequence, memory: EpisodicMemory, seed: int = 0) -> list:
    """Current task data plus every stored example, shuffled; unchanged when memory is empty."""
    stored = memory.examples()
    if not stored:
        return list(data)
    combined = list(data) + stored
    order = np.random.default_rng(seed).permutation(len(combined))
    return [combined[i] for i in order]


# -- regularisation ----------------------------------------------------------------
@dataclass
class RegularizerState:
    theta_star: list[np.ndarray]
    omega: list[np.ndarray]
    lam: float

    def __post_init__(self):
        for t, o in zip(self.theta_star, self.omega):
            if t.shape != o.shape:
                raise ag.ShapeError(f"omega {o.shape} does not match theta* {t.shape}")
            if np.any(o < 0):
                raise ValueError("omega must be non-negative")

    def stored_values(self) -> int:
        return sum(t.size for t in self.theta_star)


def reg_penalty(params: Sequence[Tensor], state: RegularizerState) -> Tensor:
    """``lam * sum_j omega_j (theta_j - theta*_j)^2`` as a differentiable scalar."""
    if len(params) != len(state.theta_star):
        raise ag.ShapeError(f"{len(params)} parameters but {len(state.theta_star)} anchors")
    total = None
    for p, ts, om in zip(params, state.theta_star, state.omega):
        if p.shape != ts.shape:
            raise ag.ShapeError(f"parameter {p.name} {p.shape} does not match anchor {ts.shape}")
        diff = ag.sub(p, Tensor(ts))
        term = ag.tensor_sum(ag.mul(ag.mul(diff, diff), Tensor(om)))
        total = term if total is None else total + term
    return ag.mul(total, state.lam)


def estimate_fisher(params: Sequence[Tensor], data: Sequence, nll_fn: Callable[[object], Tensor],
                    n_samples: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Diagonal empirical Fisher: mean squared per-example NLL gradient."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if not data:
        raise EmptyDataError("cannot estimate the Fisher information without data")
    k = min(n_samples, len(data))
    idx = np.sort(rng.choice(len(data), size=k, replace=False))
    fisher = [np.zeros_like(p.data) for p in params]
    for i in idx:
        for p in params:
            p.grad = None
        nll_fn(data[i]).backward()
        for f, p in zip(fisher, params):
            if p.grad is not None:
                f += p.grad * p.grad
    for p in params:
        p.grad = None
    return [f / k for f in fisher]


# -- gradient projection -----------------------------------------------------------
def agem_project(g: np.ndarray, g_ref: np.ndarray) -> np.ndarray:
    """Project ``g`` so it no longer conflicts with the memory gradient ``g_ref``."""
    if g.shape != g_ref.shape:
        raise ag.ShapeError(f"gradient shapes differ: {g.shape} vs {g_ref.shape}")
    dot = float(g @ g_ref)
    if dot >= 0:
        return g
    return g - (dot / float(g_ref @ g_ref)) * g_ref


# -- LAMOL pseudo samples ----------------------------------------------------------
def split_generated(text: str) -> tuple[str, str] | None:
    """Recover ``(input, output)`` from an unconditional sample, or ``None``."""
    words = text.split()
    if API_TOKEN in words:
        cut = len(words) - words[::-1].index(API_TOKEN)
    elif OUT_TOKEN in words:
        start = len(words) - words[::-1].index(OUT_TOKEN)
        if ")" not in words[start:]:
            return None
        cut = start + words[start:].index(")") + 1
    else:
        return None
    x, y = " ".join(words[:cut]), " ".join(words[cut:])
    if not y or len(words[:cut]) < 2:
        return None
    return x, y


@dataclass
class GenerationReport:
    requested: int
    parsed: int

    @property
    def dropped(self) -> int:
        return self.requested - self.parsed


def lamol_generate(model: TransformerLM, tokenizer: Tokenizer, count: int, rng: np.random.Generator,
                   setting: Setting, top_k: int = 20, max_new: int | None = None):
    """Sample ``count`` sequences from the generic begin token and keep the parseable ones."""
    if count <= 0:
        return [], GenerationReport(0, 0)
    max_new = max_new or model.config.max_seq_len - 1
    out = []
    results = []
    for i in range(0, count, 32):
        results += model.sample_batch([[GEN_ID]] * min(32, count - i), rng, max_new=max_new, top_k=top_k)
    for r in results:
        if r.truncated:
            continue
        pair = split_generated(tokenizer.decode(r.tokens))
        if pair is not None:
            kind = "api" if pair[0].split()[-1] == API_TOKEN else "response"
            out.append(Example(pair[0], pair[1], "pseudo", setting, kind=kind))
    report = GenerationReport(count, len(out))
    if count and len(out) < 0.1 * count:
        log.warning("degenerate generator: only %d of %d samples parsed", len(out), count)
    return out, report


# -- curriculum driver -------------------------------------------------------------
@dataclass
class StrategyConfig:
    kind: StrategyKind = StrategyKind.VANILLA
    lam: float = 1.0
    ewc_accumulate: bool = False
    fisher_samples: int = 200
    memory_capacity: int | None = 50
    bottleneck: int = 50
    lamol_gamma: float = 0.2
    lamol_top_k: int = 20
    selection_include_specials: bool = True

    def __post_init__(self):
        self.kind = StrategyKind(self.kind)


@dataclass
class CurriculumResult:
    model: TransformerLM
    matrices: dict[str, MetricMatrix]
    logs: list[TrainLog]
    wall_times: list[float]
    resources: dict
    bank: AdapterBank | None = None
    memory: EpisodicMemory | None = None
    selection: MetricMatrix | None = None
    extras: dict = field(default_factory=dict)


def _encode(tokenizer, examples, cfg: TrainConfig, start_id=BOS_ID, include_input=None) -> list[EncodedPair]:
    inc = cfg.include_input_loss if include_input is None else include_input
    return [encode_pair(tokenizer, e.input, e.output, inc, start_id) for e in examples]


def train_curriculum(strategy: StrategyConfig, curriculum: Sequence[TaskData], base: TransformerLM,
                     tokenizer: Tokenizer, cfg: TrainConfig, setting: Setting | str,
                     metrics: Sequence[str] | None = None,
                     on_row: Callable[[int, dict], None] | None = None) -> CurriculumResult:
    """Learn ``curriculum`` in order and fill one metric-matrix row per task.

    ``base`` is not modified; every strategy works on its own copy.
    """
    if not curriculum:
        raise ValueError("empty curriculum")
    setting = Setting(setting)
    kind = strategy.kind
    labels = [t.label for t in curriculum]
    T = len(curriculum)
    rng = np.random.default_rng(cfg.seed)
    aux_rng = np.random.default_rng([cfg.seed, 1])
    model = base.copy()
    model.freeze(False)
    params = model.parameters()
    logs, walls = [], []
    memory = EpisodicMemory(strategy.memory_capacity, cfg.seed) if kind in (
        StrategyKind.REPLAY, StrategyKind.AGEM) else None
    bank = AdapterBank(model) if kind is StrategyKind.ADAPTER else None
    reg_states: list[RegularizerState] = []
    extras: dict = {"lamol": [], "fingerprints": []}
    matrices: dict[str, MetricMatrix] = {}
    selection = MetricMatrix("selection", labels) if bank is not None else None

    def record_row(i: int, learner):
        for j, task in enumerate(curriculum):
            gold = j if bank is not None and j <= i else None
            scores = evaluate_task(learner, tokenizer, task.test, setting, metrics=metrics,
                                   gold_index=gold, upto=i + 1 if bank is not None else None,
                                   include_specials=strategy.selection_include_specials)
            for name, value in scores.items():
                if name == "selection":
                    selection.set(i, j, value)
                    continue
                matrices.setdefault(name, MetricMatrix(name, labels)).set(i, j, value)
        if selection is not None:
            for j in range(i + 1, T):
                selection.set(i, j, np.nan)
        if on_row is not None:
            on_row(i, {k: m.R[i].tolist() for k, m in matrices.items()})

    if kind is StrategyKind.MULTI:
        start = time.perf_counter()
        pool = sorted((e for t in curriculum for e in t.train), key=lambda e: (e.task, e.input, e.output))
        valid = [e for t in sorted(curriculum, key=lambda t: t.label) for e in t.valid]
        logs.append(fit(model, params, _encode(tokenizer, pool, cfg), cfg, rng,
                        valid_pairs=_encode(tokenizer, valid, cfg) or None, task_index=0))
        walls.append(time.perf_counter() - start)
        record_row(0, model)
        for m in matrices.values():
            m.R[1:] = m.R[0]
            m._filled[:] = True
        return CurriculumResult(model, matrices, logs, walls, {"added_params": 0, "memory_examples": 0})

    for i, task in enumerate(curriculum):
        start = time.perf_counter()
        if not task.train:
            raise EmptyDataError(f"task {task.label!r} has no training data")
        valid = _encode(tokenizer, task.valid, cfg) or None
        if kind is StrategyKind.ADAPTER:
            bank.spawn(task.label, strategy.bottleneck, init_seed=cfg.seed + i)
            tlog = train_adapter(bank, task.label, _encode(tokenizer, task.train, cfg), cfg, rng, valid)
            learner = bank
        else:
            extra = grad_hook = None
            train = list(task.train)
            if kind in (StrategyKind.L2, StrategyKind.EWC) and reg_states:
                states = reg_states if strategy.ewc_accumulate else reg_states[-1:]

                def penalty():
                    total = reg_penalty(params, states[0])
                    for s in states[1:]:
                        total = total + reg_penalty(params, s)
                    return total
                extra = penalty
            elif kind is StrategyKind.REPLAY:
                train = replay_dataset(train, memory, seed=cfg.seed + i)
            elif kind is StrategyKind.AGEM and len(memory):
                grad_hook = _agem_hook(model, memory, tokenizer, cfg, aux_rng)
            pairs = _encode(tokenizer, train, cfg)
            if kind is StrategyKind.LAMOL:
                if i > 0:
                    count = math.ceil(strategy.lamol_gamma * len(task.train))
                    pseudo, report = lamol_generate(model, tokenizer, count, aux_rng, setting,
                                                    strategy.lamol_top_k)
                    extras["lamol"].append({"task": task.label, "requested": report.requested,
                                            "parsed": report.parsed})
                    train = train + pseudo
                    pairs = _encode(tokenizer, train, cfg)
                pairs = pairs + _encode(tokenizer, train, cfg, start_id=GEN_ID, include_input=True)
            tlog = fit(model, params, pairs, cfg, rng, valid_pairs=valid,
                       extra_loss=extra, grad_hook=grad_hook, task_index=i)
            if kind is StrategyKind.L2:
                reg_states.append(RegularizerState([p.data.copy() for p in params],
                                                   [np.ones_like(p.data) for p in params], strategy.lam))
            elif kind is StrategyKind.EWC:
                fisher_rng = np.random.default_rng([cfg.seed, 2, i])
                enc = _encode(tokenizer, task.train, cfg)
                omega = estimate_fisher(params, enc, lambda pair: model.loss([pair]),
                                        strategy.fisher_samples, fisher_rng)
                reg_states.append(RegularizerState([p.data.copy() for p in params], omega, strategy.lam))
            if memory is not None:
                memory.insert(task.label, list(task.train))
            learner = model
        logs.append(tlog)
        walls.append(time.perf_counter() - start)
        extras["fingerprints"].append({
            "base": model.fingerprint(),
            "adapters": {a.task_label: a.fingerprint() for a in bank.adapters} if bank is not None else {},
        })
        record_row(i, learner)

    resources = resource_report(kind, model, bank, memory, reg_states, strategy)
    result = CurriculumResult(model, matrices, logs, walls, resources, bank, memory, selection, extras)
    return result


def _agem_hook(model: TransformerLM, memory: EpisodicMemory, tokenizer, cfg: TrainConfig, rng):
    params = model.parameters()

    def hook():
        g = model.flat_grad()
        ref = memory.sample(cfg.batch_size, rng)
        for p in params:
            p.grad = None
        model.loss(_encode(tokenizer, ref, cfg)).backward()
        g_ref = model.flat_grad()
        model.set_flat_grad(agem_project(g, g_ref))

    return hook


def resource_report(kind: StrategyKind, model: TransformerLM, bank, memory, reg_states, strategy) -> dict:
    """Extra parameters and stored examples, by the same accounting as the results table."""
    theta = model.num_params()
    added = 0
    if kind is StrategyKind.L2:
        added = theta * (len(reg_states) if strategy.ewc_accumulate else min(len(reg_states), 1))
    elif kind is StrategyKind.EWC:
        added = 2 * theta * (len(reg_states) if strategy.ewc_accumulate else min(len(reg_states), 1))
    elif kind is StrategyKind.ADAPTER:
        added = bank.added_params()
    return {"added_params": int(added), "memory_examples": len(memory) if memory is not None else 0,
            "base_params": int(theta)}
