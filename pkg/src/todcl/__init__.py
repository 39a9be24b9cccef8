"""Continual learning for task-oriented dialogue on a small numpy transformer."""
from .adapters import AdapterBank, AdapterParams, select_adapter
from .harness import RunConfig, RunManifest, ablate_memory, permute_curriculum, run
from .metrics import MetricMatrix, avg_metric, corpus_bleu, joint_goal_accuracy, slot_error_rate
from .model import LmConfig, TransformerLM
from .strategies import EpisodicMemory, StrategyConfig, StrategyKind, train_curriculum

__version__ = "0.1.0"

__all__ = [
    "AdapterBank", "AdapterParams", "select_adapter",
    "RunConfig", "RunManifest", "ablate_memory", "permute_curriculum", "run",
    "MetricMatrix", "avg_metric", "corpus_bleu", "joint_goal_accuracy", "slot_error_rate",
    "LmConfig", "TransformerLM",
    "EpisodicMemory", "StrategyConfig", "StrategyKind", "train_curriculum",
]
