"""Unified line-delimited dialogue format.

One JSON object per line::

    {"corpus": "mwoz", "domain": "taxi", "split": "train", "id": "...",
     "turns": [{"speaker": "USER", "utterance": "...",
                "api_call": {"intent": "find_taxi", "slots": [{"name": "area", "value": "north"}]}},
               {"speaker": "SYSTEM", "utterance": "...", "api_out": {...}}]}

``split`` and ``id`` are optional.  Lines without a split are assigned
80/10/10 train/valid/test by their order within the domain.
"""
from __future__ import annotations

import json
import os
from collections import defaultdict

from .api import ApiCall
from .dialogue import Dialogue, DialogueTurn, FormatError, check_alternating

SPLITS = ("train", "valid", "test")


class DatasetError(ValueError):
    """Unified-format file is missing, empty or malformed."""

    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


def dialogue_to_record(d: Dialogue) -> dict:
    turns = []
    for t in d.turns:
        rec = {"speaker": t.speaker.value, "utterance": t.utterance}
        if t.api_call is not None:
            rec["api_call"] = t.api_call.to_dict()
        if t.api_out is not None:
            rec["api_out"] = t.api_out.to_dict()
        turns.append(rec)
    out = {"corpus": d.corpus, "domain": d.domain, "split": d.split, "turns": turns}
    if d.dialogue_id:
        out["id"] = d.dialogue_id
    return out


def record_to_dialogue(rec: dict) -> Dialogue:
    if not isinstance(rec, dict):
        raise FormatError("record is not an object")
    for key in ("corpus", "domain", "turns"):
        if key not in rec:
            raise FormatError(f"missing field {key!r}")
    if not isinstance(rec["turns"], list) or not rec["turns"]:
        raise FormatError("'turns' must be a non-empty list")
    split = rec.get("split")
    if split is not None and split not in SPLITS:
        raise FormatError(f"unknown split {split!r}")
    turns = []
    for t in rec["turns"]:
        try:
            turns.append(DialogueTurn(
                t["speaker"], t["utterance"],
                ApiCall.from_dict(t["api_call"]) if t.get("api_call") else None,
                ApiCall.from_dict(t["api_out"]) if t.get("api_out") else None,
            ))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad turn: {exc}") from exc
    check_alternating(turns)
    return Dialogue(str(rec["corpus"]), str(rec["domain"]), turns, split or "", str(rec.get("id", "")))


def save_dataset(path, dialogues) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(json.dumps(dialogue_to_record(d), sort_keys=True) + "\n")


def read_dialogues(path) -> list[Dialogue]:
    """Parse every line of ``path``; errors cite the 1-based line number."""
    if not os.path.exists(path):
        raise DatasetError(f"no such file: {path}")
    dialogues = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                dialogues.append(record_to_dialogue(json.loads(line)))
            except (json.JSONDecodeError, ValueError) as exc:
                raise DatasetError(str(exc), line=lineno) from exc
    if not dialogues:
        raise DatasetError(f"empty dataset: {path}")
    return dialogues


def split_by_task(dialogues) -> dict[str, dict[str, list[Dialogue]]]:
    by_task: dict[str, list[Dialogue]] = defaultdict(list)
    for d in dialogues:
        by_task[d.task_label].append(d)
    out = {}
    for task, ds in by_task.items():
        unassigned = [d for d in ds if not d.split]
        n = len(unassigned)
        for i, d in enumerate(unassigned):
            d.split = "train" if i < int(0.8 * n) else "valid" if i < int(0.9 * n) else "test"
        out[task] = {s: [d for d in ds if d.split == s] for s in SPLITS}
    return out


def load_dataset(path) -> dict[str, dict[str, list[Dialogue]]]:
    """Per-task ``{"train": [...], "valid": [...], "test": [...]}`` dialogues."""
    return split_by_task(read_dialogues(path))
