"""Evaluation metrics: intent accuracy, JGA, slot error rate, BLEU, Avg. Metric."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data.api import ApiCall, try_parse_api
from .data.dialogue import Setting

BINARY_VALUES = frozenset({"yes", "no", "true", "false"})
UNDEFINED = float("nan")


@dataclass(frozen=True)
class TurnPrediction:
    generated: str
    setting: Setting
    gold_api: ApiCall | None = None
    gold_response: str | None = None
    gold_act: ApiCall | None = None


def _norm(s: str) -> str:
    return " ".join(s.split()).casefold()


def predicted_intent(p: TurnPrediction) -> str:
    if p.setting is Setting.INTENT:
        return _norm(p.generated)
    return _norm(p.generated.split("(")[0])


def intent_accuracy(preds: Sequence[TurnPrediction]) -> float:
    preds = [p for p in preds if p.gold_api is not None]
    if not preds:
        raise ValueError("no predictions with a gold intent")
    hits = sum(predicted_intent(p) == _norm(p.gold_api.intent) for p in preds)
    return hits / len(preds)


def _state(call: ApiCall) -> tuple[str, frozenset]:
    return _norm(call.intent), frozenset((_norm(s), _norm(v)) for s, v in call.slots)


def joint_goal_accuracy(preds: Sequence[TurnPrediction]) -> float:
    """Fraction of turns whose parsed (intent, slot-value set) equals gold; parse failures score 0."""
    preds = [p for p in preds if p.gold_api is not None]
    if not preds:
        raise ValueError("no predictions with a gold api-call")
    hits = 0
    for p in preds:
        parsed = try_parse_api(p.generated)
        hits += parsed is not None and _state(parsed) == _state(p.gold_api)
    return hits / len(preds)


def slot_error_rate(preds: Sequence[TurnPrediction]) -> float:
    """Share of gold speech-act values missing from the generated response.

    Binary values are not counted.  Returns ``UNDEFINED`` (NaN) when no
    countable slot exists.
    """
    missing = total = 0
    for p in preds:
        if p.gold_act is None:
            continue
        text = _norm(p.generated)
        for _, v in p.gold_act.slots:
            v = _norm(v)
            if v in BINARY_VALUES:
                continue
            total += 1
            missing += v not in text
    return missing / total if total else UNDEFINED


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses: Sequence[str], references: Sequence[str], max_n: int = 4) -> float:
    """Corpus BLEU in [0, 100]; an order with no matches is smoothed as (0+1)/(total+1)."""
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references differ in length")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for h, r in zip(hypotheses, references):
        ht, rt = h.split(), r.split()
        hyp_len += len(ht)
        ref_len += len(rt)
        for n in range(1, max_n + 1):
            hc, rc = _ngrams(ht, n), _ngrams(rt, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(ht) - n + 1, 0)
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        if m == 0:
            m, t = m + 1, t + 1
        log_p += math.log(m / t) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p)


def bleu(preds: Sequence[TurnPrediction]) -> float:
    preds = [p for p in preds if p.gold_response is not None]
    if not preds:
        raise ValueError("no predictions with a gold response")
    return corpus_bleu([p.generated for p in preds], [p.gold_response for p in preds])


def selection_accuracy(selected: Sequence[int], gold: Sequence[int]) -> float:
    if len(selected) != len(gold):
        raise ValueError("selections and gold task ids are not aligned")
    if not gold:
        raise ValueError("no selections")
    return float(np.mean([int(s) == int(g) for s, g in zip(selected, gold)]))


@dataclass
class MetricMatrix:
    """``R[i, j]``: metric on task ``j`` after training through task ``i``."""

    metric: str
    labels: list[str]
    R: np.ndarray = field(default=None)

    def __post_init__(self):
        T = len(self.labels)
        given = self.R is not None
        self.R = np.asarray(self.R, dtype=np.float64) if given else np.full((T, T), np.nan)
        if self.R.shape != (T, T):
            raise ValueError(f"R must be {T}x{T}, got {self.R.shape}")
        # a matrix passed in whole counts as complete; NaN then means "undefined metric"
        self._filled = np.full((T, T), given)

    @property
    def T(self) -> int:
        return len(self.labels)

    def set(self, i: int, j: int, value: float) -> None:
        self.R[i, j] = value
        self._filled[i, j] = True

    def row_complete(self, i: int) -> bool:
        return bool(self._filled[i].all())

    def prefix_avg(self, t: int) -> float:
        """Mean of R[t, :t+1]: average over the tasks seen after learning task ``t``."""
        if not self._filled[t, : t + 1].all():
            raise ValueError(f"row {t} is incomplete")
        return float(self.R[t, : t + 1].mean())

    def to_dict(self) -> dict:
        return {"metric": self.metric, "labels": list(self.labels),
                "R": [[None if not np.isfinite(v) else float(v) for v in row] for row in self.R]}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricMatrix":
        R = np.array([[np.nan if v is None else v for v in row] for row in d["R"]], dtype=np.float64)
        return cls(d["metric"], list(d["labels"]), R)


def avg_metric(m: MetricMatrix) -> float:
    """Mean of the last row of ``R``."""
    last = m.T - 1
    if not m.row_complete(last):
        raise ValueError("last row of the metric matrix is incomplete")
    return float(m.R[last].mean())
