"""Decode test sets and score them for a setting."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .adapters import AdapterBank
from .data.dialogue import Example, Setting
from .data.vocab import BOS_ID, Tokenizer
from .metrics import TurnPrediction, bleu, intent_accuracy, joint_goal_accuracy, slot_error_rate

SETTING_METRICS = {
    Setting.INTENT: ("intent",),
    Setting.DST: ("jga",),
    Setting.NLG: ("eer", "bleu"),
    Setting.E2E: ("intent", "jga", "eer", "bleu"),
}
API_METRICS = frozenset({"intent", "jga"})
RESPONSE_METRICS = frozenset({"eer", "bleu"})


@dataclass
class TaskData:
    label: str
    train: list[Example]
    valid: list[Example] = field(default_factory=list)
    test: list[Example] = field(default_factory=list)


def _max_new(tokenizer: Tokenizer, examples: Sequence[Example], limit: int) -> int:
    longest = max(len(tokenizer.encode(e.output)) for e in examples)
    return min(longest + 4, limit)


def generate(learner, tokenizer: Tokenizer, examples: Sequence[Example], *, upto: int | None = None,
             include_specials: bool = True, batch_size: int = 64, halt_after=()):
    """Greedy outputs for ``examples``; with an adapter bank also the selected adapter per example."""
    base = learner.base if isinstance(learner, AdapterBank) else learner
    prefixes = [[BOS_ID] + tokenizer.encode(e.input) for e in examples]
    limit = base.config.max_seq_len
    max_new = _max_new(tokenizer, examples, limit)
    outputs: list[str | None] = [None] * len(examples)
    chosen = np.zeros(len(examples), dtype=np.int64)
    if isinstance(learner, AdapterBank):
        alpha = learner.perplexities([p[1:] for p in prefixes], include_specials,
                                     tokenizer.special_ids, upto=upto)
        chosen = np.argmin(alpha, axis=1)
        groups = {int(a): np.flatnonzero(chosen == a) for a in np.unique(chosen)}
    else:
        groups = {-1: np.arange(len(examples))}
    for a, idx in groups.items():
        adapter = learner.adapters[a] if a >= 0 else None
        for s in range(0, len(idx), batch_size):
            part = idx[s:s + batch_size]
            room = min(max_new, limit - max(len(prefixes[i]) for i in part))
            res = base.greedy_decode_batch([prefixes[i] for i in part], adapter, max_new=max(room, 0),
                                           halt_after=halt_after)
            for i, r in zip(part, res):
                outputs[i] = tokenizer.decode(r.tokens)
    return outputs, chosen


def predictions(examples: Sequence[Example], outputs: Sequence[str]) -> list[TurnPrediction]:
    preds = []
    for e, out in zip(examples, outputs):
        if e.kind == "api":
            preds.append(TurnPrediction(out, e.setting, gold_api=e.api))
        else:
            preds.append(TurnPrediction(out, e.setting, gold_response=e.output, gold_act=e.act))
    return preds


def score(preds: Sequence[TurnPrediction], setting: Setting, metrics: Sequence[str] | None = None) -> dict:
    """Metric values in percent (BLEU on its usual 0-100 scale); NaN when undefined."""
    setting = Setting(setting)
    wanted = metrics or SETTING_METRICS[setting]
    api = [p for p in preds if p.gold_api is not None]
    resp = [p for p in preds if p.gold_response is not None]
    out = {}
    for name in wanted:
        if name == "intent":
            out[name] = 100 * intent_accuracy(api) if api else np.nan
        elif name == "jga":
            out[name] = 100 * joint_goal_accuracy(api) if api else np.nan
        elif name == "eer":
            out[name] = 100 * slot_error_rate(resp) if resp else np.nan
        elif name == "bleu":
            out[name] = bleu(resp) if resp else np.nan
        else:
            raise KeyError(f"unknown metric {name!r}")
    return out


def evaluate_task(learner, tokenizer: Tokenizer, examples: Sequence[Example], setting: Setting,
                  metrics: Sequence[str] | None = None, gold_index: int | None = None,
                  upto: int | None = None, include_specials: bool = True) -> dict:
    """Score one task's test set; adds ``selection`` accuracy when ``gold_index`` is given."""
    if not examples:
        raise ValueError("empty test set")
    setting = Setting(setting)
    wanted = set(metrics or SETTING_METRICS[setting])
    halt = ()
    if wanted <= API_METRICS:
        examples = [e for e in examples if e.kind == "api"]
        if wanted == {"intent"} and setting is not Setting.INTENT and "(" in tokenizer.stoi:
            # the intent is everything before "(": nothing after it is scored
            halt = (tokenizer.stoi["("],)
    elif wanted <= RESPONSE_METRICS:
        examples = [e for e in examples if e.kind == "response"]
    outputs, chosen = generate(learner, tokenizer, examples, upto=upto, include_specials=include_specials,
                               halt_after=halt)
    result = score(predictions(examples, outputs), setting, metrics)
    if gold_index is not None and isinstance(learner, AdapterBank):
        result["selection"] = 100 * float(np.mean(chosen == gold_index))
    return result
