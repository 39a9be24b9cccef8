"""Experiment orchestration: configs, data preparation, runs, grids and the memory ablation."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data.dialogue import Example, Setting, build_task_examples
from .data.io import load_dataset
from .data.synthetic import ALL_DOMAINS, DESK_DOMAINS, generate_domain, make_curriculum_specs, mixed_sizes
from .data.vocab import Tokenizer, build_vocab
from .evaluation import TaskData
from .metrics import MetricMatrix, avg_metric
from .model import LmConfig, TransformerLM
from .strategies import StrategyConfig, StrategyKind, _encode, train_curriculum
from .training import DivergenceError, TrainConfig, fit

log = logging.getLogger(__name__)

OUTPUT_ENV = "TODCL_OUTPUT_ROOT"
ALL = "ALL"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    setting: str = "INTENT"
    strategy: str = "VANILLA"
    seed: int = 0
    permute: bool = True
    # model
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 64
    max_seq_len: int = 96
    emb_std: float = 0.5
    # training
    lr: float = 3e-3
    adapter_lr: float = 1e-2
    batch_size: int = 16
    epochs: int = 20
    optimizer: str = "adam"
    clip_norm: float | None = 1.0
    # strategy-specific
    lam: float | None = None
    ewc_accumulate: bool = False
    fisher_samples: int = 200
    memory_capacity: int | str | None = None
    bottleneck: int | None = None
    lamol_gamma: float = 0.2
    # data
    data_path: str | None = None
    n_domains: int = 8
    dialogues_low: int = 40
    dialogues_high: int = 100
    data_seed: int = 0
    max_train_per_task: int | None = None
    max_test_per_task: int | None = 40
    # warm start of the shared base on held-out domains
    pretrain_domains: int = 6
    pretrain_dialogues: int = 60
    pretrain_epochs: int = 10
    metrics: list[str] | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        try:
            self.setting = Setting(str(self.setting).upper()).value
            kind = StrategyKind(str(self.strategy).upper())
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.strategy = kind.value
        if kind in (StrategyKind.L2, StrategyKind.EWC) and self.lam is None:
            self.lam = 1.0
        if kind in (StrategyKind.REPLAY, StrategyKind.AGEM) and self.memory_capacity is None:
            self.memory_capacity = 50
        if kind is StrategyKind.ADAPTER and self.bottleneck is None:
            self.bottleneck = 50
        if isinstance(self.memory_capacity, str):
            if self.memory_capacity.upper() != ALL:
                try:
                    self.memory_capacity = int(self.memory_capacity)
                except ValueError:
                    raise ConfigError(f"memory_capacity must be an integer or {ALL}") from None
            else:
                self.memory_capacity = ALL
        checks = [
            (self.d_model % self.n_heads == 0, "d_model must be divisible by n_heads"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (0 < self.lr < float("inf"), "lr must be positive and finite"),
            (self.lam is None or 0 <= self.lam < float("inf"), "lam must be non-negative and finite"),
            (self.bottleneck is None or self.bottleneck >= 1, "bottleneck must be >= 1"),
            (not isinstance(self.memory_capacity, int) or self.memory_capacity >= 0,
             "memory_capacity must be non-negative"),
            (self.data_path is not None or 1 <= self.n_domains <= len(ALL_DOMAINS),
             f"n_domains must be in 1..{len(ALL_DOMAINS)}"),
            (1 <= self.dialogues_low <= self.dialogues_high, "need 1 <= dialogues_low <= dialogues_high"),
            (0 < self.lamol_gamma <= 1, "lamol_gamma must be in (0, 1]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def kind(self) -> StrategyKind:
        return StrategyKind(self.strategy)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "RunConfig":
        return RunConfig.from_dict({**self.to_dict(), **changes})

    def lm_config(self, vocab_size: int) -> LmConfig:
        return LmConfig(vocab_size, self.d_model, self.n_layers, self.n_heads, self.d_ff,
                        self.max_seq_len, emb_std=self.emb_std)

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, adapter_lr=self.adapter_lr, batch_size=self.batch_size,
                           epochs=self.epochs, optimizer=self.optimizer, clip_norm=self.clip_norm,
                           seed=self.seed)

    def strategy_config(self) -> StrategyConfig:
        cap = None if self.memory_capacity == ALL else self.memory_capacity
        return StrategyConfig(self.kind, lam=self.lam or 0.0, ewc_accumulate=self.ewc_accumulate,
                              fisher_samples=self.fisher_samples, memory_capacity=cap,
                              bottleneck=self.bottleneck or 50, lamol_gamma=self.lamol_gamma)


def load_config_file(path) -> dict:
    """Read a JSON or YAML key-value config."""
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        import yaml
        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return data


# -- hashing -----------------------------------------------------------------------
def code_hash() -> str:
    h = hashlib.sha256()
    root = Path(__file__).parent
    for p in sorted(root.rglob("*.py")):
        h.update(str(p.relative_to(root)).encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def content_hash(config: RunConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(code_hash().encode() + blob).hexdigest()


# -- data --------------------------------------------------------------------------
def permute_curriculum(tasks: Sequence, seed: int) -> list:
    """Seeded Fisher-Yates shuffle."""
    if not tasks:
        raise ValueError("empty task list")
    out = list(tasks)
    rng = np.random.default_rng(seed)
    for i in range(len(out) - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        out[i], out[j] = out[j], out[i]
    return out


@dataclass
class PreparedData:
    tasks: list[TaskData]
    pretrain: list[Example]
    tokenizer: Tokenizer
    dropped: int = 0


def _cap(examples: list, n: int | None, seed: int) -> list:
    if n is None or len(examples) <= n:
        return examples
    idx = np.sort(np.random.default_rng(seed).choice(len(examples), n, replace=False))
    return [examples[i] for i in idx]


def prepare_data(cfg: RunConfig) -> PreparedData:
    """Build examples for the curriculum (unordered) and the warm-start pool."""
    setting = Setting(cfg.setting)
    limit = cfg.max_seq_len
    dropped = 0
    tasks, pretrain = [], []
    if cfg.data_path is not None:
        splits = load_dataset(cfg.data_path)
    else:
        domains = list(DESK_DOMAINS[: cfg.n_domains]) if cfg.n_domains <= len(DESK_DOMAINS) else \
            list(DESK_DOMAINS) + [d for d in ALL_DOMAINS if d not in DESK_DOMAINS][: cfg.n_domains - len(DESK_DOMAINS)]
        held_out = [d for d in ALL_DOMAINS if d not in domains][: cfg.pretrain_domains]
        specs = make_curriculum_specs(domains + held_out, seed=cfg.data_seed)
        sizes = mixed_sizes(len(domains), cfg.dialogues_low, cfg.dialogues_high, cfg.data_seed)
        splits = {}
        for spec, n in zip(specs, sizes + [cfg.pretrain_dialogues] * len(held_out)):
            dialogues = generate_domain(spec, n)
            parts = {s: [d for d in dialogues if d.split == s] for s in ("train", "valid", "test")}
            if (spec.corpus, spec.name) in held_out:
                ex, n_drop = build_task_examples(parts["train"] + parts["valid"], setting, limit)
                pretrain += ex
                dropped += n_drop
            else:
                splits[spec.task_label] = parts
    for i, (label, parts) in enumerate(sorted(splits.items())):
        built = {}
        for split in ("train", "valid", "test"):
            ex, n_drop = build_task_examples(parts.get(split, []), setting, limit)
            built[split] = ex
            dropped += n_drop
        tasks.append(TaskData(label, _cap(built["train"], cfg.max_train_per_task, cfg.data_seed + i),
                              built["valid"], _cap(built["test"], cfg.max_test_per_task, cfg.data_seed + i)))
    every = [e for t in tasks for e in t.train + t.valid + t.test] + pretrain
    return PreparedData(tasks, pretrain, build_vocab(every), dropped)


# -- warm start --------------------------------------------------------------------
_BASE_CACHE: dict[str, TransformerLM] = {}


def pretrain_key(cfg: RunConfig, tokenizer: Tokenizer) -> str:
    keys = ("setting", "d_model", "n_layers", "n_heads", "d_ff", "max_seq_len", "emb_std", "lr",
            "batch_size", "optimizer", "clip_norm", "pretrain_domains", "pretrain_dialogues",
            "pretrain_epochs", "data_seed", "n_domains", "data_path")
    blob = json.dumps({k: getattr(cfg, k) for k in keys}, sort_keys=True) + tokenizer.fingerprint()
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_base(cfg: RunConfig, data: PreparedData, cache_dir: Path | None = None) -> TransformerLM:
    """The shared starting point: random init, then a few epochs on held-out domains."""
    key = pretrain_key(cfg, data.tokenizer)
    if key in _BASE_CACHE:
        return _BASE_CACHE[key].copy()
    path = cache_dir / f"base-{key}.ckpt" if cache_dir is not None else None
    if path is not None and path.exists():
        model = load_checkpoint(path).model
    else:
        model = TransformerLM(cfg.lm_config(len(data.tokenizer)), seed=0)
        if data.pretrain and cfg.pretrain_epochs > 0:
            tc = cfg.train_config()
            tc.epochs, tc.seed, tc.best_on_valid = cfg.pretrain_epochs, 0, False
            fit(model, model.parameters(), _encode(data.tokenizer, data.pretrain, tc), tc,
                np.random.default_rng(0))
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            save_checkpoint(path, model, tokenizer=data.tokenizer)
    _BASE_CACHE[key] = model
    return model.copy()


# -- manifests ---------------------------------------------------------------------
@dataclass
class RunManifest:
    config: dict
    content_hash: str
    status: str = "ok"
    wall_times: list[float] = field(default_factory=list)
    resources: dict = field(default_factory=dict)
    matrices: dict[str, MetricMatrix] = field(default_factory=dict)
    curriculum: list[str] = field(default_factory=list)
    selection: MetricMatrix | None = None
    memory_hashes: dict[str, str] = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    created: float = field(default_factory=time.time)
    error: str | None = None

    @property
    def setting(self) -> str:
        return self.config["setting"]

    @property
    def strategy(self) -> str:
        return self.config["strategy"]

    def avg(self, metric: str) -> float:
        return avg_metric(self.matrices[metric])

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("config", "content_hash", "status", "wall_times", "resources",
                                          "curriculum", "memory_hashes", "extras", "created", "error")}
        d["matrices"] = {k: m.to_dict() for k, m in self.matrices.items()}
        d["selection"] = self.selection.to_dict() if self.selection is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        d = dict(d)
        d["matrices"] = {k: MetricMatrix.from_dict(m) for k, m in d.get("matrices", {}).items()}
        d["selection"] = MetricMatrix.from_dict(d["selection"]) if d.get("selection") else None
        return cls(**d)

    def save(self, directory: Path) -> Path:
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "manifest.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=1, allow_nan=False, default=_jsonable))
        tmp.replace(path)
        for name, m in self.matrices.items():
            write_matrix(directory / f"R_{name}.tsv", m)
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        return cls.from_dict(json.loads(path.read_text()))


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


def write_matrix(path: Path, m: MetricMatrix) -> None:
    lines = ["after\\task\t" + "\t".join(m.labels)]
    for label, row in zip(m.labels, m.R):
        lines.append(label + "\t" + "\t".join("nan" if not np.isfinite(v) else f"{v:.4f}" for v in row))
    path.write_text("\n".join(lines) + "\n")


def output_root(explicit: str | os.PathLike | None = None) -> Path:
    return Path(explicit or os.environ.get(OUTPUT_ENV) or "runs")


def run_dir_name(cfg: RunConfig, digest: str) -> str:
    return f"{cfg.setting.lower()}-{cfg.strategy.lower()}-s{cfg.seed}-{digest[:8]}"


# -- runs --------------------------------------------------------------------------
def run(cfg: RunConfig, out: str | os.PathLike | None = None, save: bool = True,
        data: PreparedData | None = None) -> RunManifest:
    """Execute one curriculum and write manifest, matrices and checkpoint under ``out``."""
    cfg.validate()
    digest = content_hash(cfg)
    root = output_root(out)
    directory = root / run_dir_name(cfg, digest)
    data = data or prepare_data(cfg)
    tasks = permute_curriculum(data.tasks, cfg.seed) if cfg.permute else list(data.tasks)
    manifest = RunManifest(cfg.to_dict(), digest, status="running", curriculum=[t.label for t in tasks])
    manifest.extras["dropped_examples"] = data.dropped
    base = build_base(cfg, data, root / "cache" if save else None)

    def flush(i, rows):
        manifest.extras["rows_done"] = i + 1
        if save:
            manifest.save(directory)

    try:
        result = train_curriculum(cfg.strategy_config(), tasks, base, data.tokenizer, cfg.train_config(),
                                  cfg.setting, metrics=cfg.metrics, on_row=flush)
    except DivergenceError as exc:
        manifest.status, manifest.error = "diverged", str(exc)
        if save:
            manifest.save(directory)
        raise
    manifest.status = "ok"
    manifest.wall_times = result.wall_times
    manifest.resources = result.resources
    manifest.matrices = result.matrices
    manifest.selection = result.selection
    manifest.extras.update({k: v for k, v in result.extras.items() if v})
    if result.memory is not None:
        manifest.memory_hashes = {
            task: hashlib.sha256("\n".join(f"{e.input}\t{e.output}" for e in ex).encode()).hexdigest()
            for task, ex in result.memory.store.items()}
    manifest.extras["memory_sizes"] = ({t: len(v) for t, v in result.memory.store.items()}
                                       if result.memory is not None else {})
    if save:
        adapters = result.bank.adapters if result.bank is not None else ()
        directory.mkdir(parents=True, exist_ok=True)
        save_checkpoint(directory / "model.ckpt", result.model, adapters, data.tokenizer,
                        extra={"strategy": cfg.strategy, "curriculum": manifest.curriculum})
        manifest.save(directory)
    manifest.extras["directory"] = str(directory)
    return manifest


def _run_worker(args):
    cfg_dict, out = args
    return run(RunConfig.from_dict(cfg_dict), out).to_dict()


def grid(configs: Iterable[RunConfig], out=None, workers: int = 1) -> list[RunManifest]:
    """Independent runs over a bounded process pool (in-process when ``workers`` is 1)."""
    configs = list(configs)
    if workers <= 1:
        return [run(c, out) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = pool.map(_run_worker, [(c.to_dict(), str(output_root(out))) for c in configs])
        return [RunManifest.from_dict(r) for r in results]


def strategy_grid(base: RunConfig, strategies: Sequence[str], seeds: Sequence[int],
                  lams: Sequence[float] | None = None) -> list[RunConfig]:
    out = []
    for s in strategies:
        for seed in seeds:
            if StrategyKind(s) in (StrategyKind.L2, StrategyKind.EWC) and lams:
                out += [base.replace(strategy=s, seed=seed, lam=lam) for lam in lams]
            else:
                out.append(base.replace(strategy=s, seed=seed))
    return out


@dataclass
class AblationReport:
    metric: str
    capacities: list
    values: list[float]
    multi: float | None = None

    def rows(self) -> list[tuple]:
        return list(zip(self.capacities, self.values))


def ablate_memory(base: RunConfig, capacities: Sequence = (10, 50, 100, 500, ALL), metric: str | None = None,
                  out=None, include_multi: bool = True, save: bool = True) -> AblationReport:
    if base.kind is not StrategyKind.REPLAY:
        raise ConfigError("memory ablation needs strategy REPLAY")
    metric = metric or SETTING_HEADLINE[Setting(base.setting)]
    data = prepare_data(base)
    values = []
    for cap in capacities:
        m = run(base.replace(memory_capacity=cap), out, save=save, data=data)
        values.append(m.avg(metric))
    multi = run(base.replace(strategy="MULTI"), out, save=save, data=data).avg(metric) if include_multi else None
    return AblationReport(metric, list(capacities), values, multi)


SETTING_HEADLINE = {Setting.INTENT: "intent", Setting.DST: "jga", Setting.NLG: "bleu", Setting.E2E: "intent"}


def summarize(manifests: Sequence[RunManifest], metric: str) -> dict[str, tuple[float, float, int]]:
    """``strategy -> (mean, std, n)`` of the final-row Avg. Metric across runs."""
    groups: dict[str, list[float]] = {}
    for m in manifests:
        groups.setdefault(m.strategy, []).append(m.avg(metric))
    return {k: (float(np.mean(v)), float(np.std(v)), len(v)) for k, v in groups.items()}
