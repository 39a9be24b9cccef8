"""Dialogue records and their conversion into input/output training pairs."""
from __future__ import annotations

import enum
from dataclasses import dataclass

from .api import ApiCall, serialize_api

USER_TOKEN = "USER:"
SYSTEM_TOKEN = "SYSTEM:"
API_TOKEN = "API:"
OUT_TOKEN = "OUT:"


class FormatError(ValueError):
    """Dialogue does not have the expected turn structure."""


class Setting(str, enum.Enum):
    INTENT = "INTENT"
    DST = "DST"
    NLG = "NLG"
    E2E = "E2E"


class Speaker(str, enum.Enum):
    USER = "USER"
    SYSTEM = "SYSTEM"


@dataclass(frozen=True)
class DialogueTurn:
    speaker: Speaker
    utterance: str
    api_call: ApiCall | None = None
    api_out: ApiCall | None = None

    def __post_init__(self):
        object.__setattr__(self, "speaker", Speaker(self.speaker))
        if not self.utterance.strip():
            raise FormatError("empty utterance")


@dataclass
class Dialogue:
    corpus: str
    domain: str
    turns: list[DialogueTurn]
    split: str = "train"
    dialogue_id: str = ""

    @property
    def task_label(self) -> str:
        # corpus is part of the label so same-named domains never merge
        return f"{self.corpus}/{self.domain}"


@dataclass(frozen=True)
class Example:
    input: str
    output: str
    task: str
    setting: Setting
    kind: str = "api"  # "api" or "response"
    api: ApiCall | None = None  # gold api-call for api pairs
    act: ApiCall | None = None  # speech-act that produced a response pair

    @property
    def gold_intent(self) -> str | None:
        return self.api.intent if self.api is not None else None


def _speaker_token(turn: DialogueTurn) -> str:
    return USER_TOKEN if turn.speaker is Speaker.USER else SYSTEM_TOKEN


def _history(turns: list[DialogueTurn]) -> list[str]:
    return [f"{_speaker_token(t)} {' '.join(t.utterance.split())}" for t in turns]


def _fit(history: list[str], tail: str, output: str, max_len: int | None) -> str | None:
    """Join history + tail, dropping the oldest turns until it fits ``max_len`` tokens."""
    if max_len is None:
        return " ".join(history + ([tail] if tail else []))
    budget = max_len - 2 - len(output.split())  # BOS and EOS
    tail_len = len(tail.split()) if tail else 0
    lengths = [len(h.split()) for h in history]
    start = 0
    while start < len(history) and sum(lengths[start:]) + tail_len > budget:
        start += 1
    if start == len(history) or sum(lengths[start:]) + tail_len > budget:
        return None
    return " ".join(history[start:] + ([tail] if tail else []))


def check_alternating(turns: list[DialogueTurn]) -> None:
    for a, b in zip(turns, turns[1:]):
        if a.speaker == b.speaker:
            raise FormatError(f"two consecutive {a.speaker.value} turns")


def build_examples(dialogue: Dialogue, setting: Setting | str, max_len: int | None = None,
                   stats: dict | None = None) -> list[Example]:
    """Turn one dialogue into the input/output pairs of ``setting``.

    ``max_len`` is a token budget for the encoded pair; the oldest turns are
    dropped first, and pairs that still do not fit are skipped and counted in
    ``stats["dropped"]``.
    """
    setting = Setting(setting)
    turns = dialogue.turns
    check_alternating(turns)
    task = dialogue.task_label
    out: list[Example] = []

    def emit(history, tail, y, **kw):
        x = _fit(history, tail, y, max_len)
        if not x:
            if stats is not None:
                stats["dropped"] = stats.get("dropped", 0) + 1
            return
        out.append(Example(x, y, task, setting, **kw))

    for i, turn in enumerate(turns):
        history = _history(turns[: i + 1]) if turn.speaker is Speaker.USER else _history(turns[:i])
        if turn.speaker is Speaker.USER and turn.api_call is not None:
            if setting is Setting.INTENT:
                emit(history, API_TOKEN, turn.api_call.intent, kind="api", api=turn.api_call)
            elif setting in (Setting.DST, Setting.E2E):
                emit(history, API_TOKEN, serialize_api(turn.api_call), kind="api", api=turn.api_call)
        elif turn.speaker is Speaker.SYSTEM:
            response = " ".join(turn.utterance.split())
            if setting is Setting.NLG and turn.api_out is not None:
                emit([], f"{OUT_TOKEN} {serialize_api(turn.api_out)}", response,
                     kind="response", act=turn.api_out)
            elif setting is Setting.E2E:
                if turn.api_out is not None:
                    emit(history, f"{OUT_TOKEN} {serialize_api(turn.api_out)}", response,
                         kind="response", act=turn.api_out)
                else:
                    emit(history, "", response, kind="response")
    return out


def build_task_examples(dialogues: list[Dialogue], setting, max_len: int | None = None):
    """Examples for a list of dialogues plus the number dropped for length."""
    stats: dict = {"dropped": 0}
    examples = [ex for d in dialogues for ex in build_examples(d, setting, max_len, stats)]
    return examples, stats["dropped"]
