"""Api-call grammar: ``intent ( slot = value , slot = value )``.

Serialisation is canonical (slots sorted by name, single spaces between
tokens).  Parsing is tolerant about spacing but strict about structure, since
its main consumer is free-form model output.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

_RESERVED = set("(),=")
_PUNCT = re.compile(r"([(),=])")


class ApiParseError(ValueError):
    """Text does not follow the api-call grammar."""

    def __init__(self, message: str, text: str):
        super().__init__(f"{message}: {text!r}")
        self.text = text


def _clean(token: str) -> str:
    return " ".join(token.split())


def _valid_name(name: str) -> bool:
    return bool(name) and " " not in name and not (_RESERVED & set(name))


def _valid_value(value: str) -> bool:
    return bool(value) and not (_RESERVED & set(value))


@dataclass(frozen=True)
class ApiCall:
    intent: str
    slots: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        intent = _clean(self.intent)
        if not _valid_name(intent):
            raise ValueError(f"invalid intent {self.intent!r}")
        pairs = [(_clean(s), _clean(v)) for s, v in self.slots]
        names = [s for s, _ in pairs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate slot names in {names}")
        for s, v in pairs:
            if not _valid_name(s):
                raise ValueError(f"invalid slot name {s!r}")
            if not _valid_value(v):
                raise ValueError(f"invalid value {v!r} for slot {s!r}")
        object.__setattr__(self, "intent", intent)
        object.__setattr__(self, "slots", tuple(sorted(pairs)))

    @classmethod
    def from_dict(cls, d: dict) -> "ApiCall":
        return cls(d["intent"], tuple((s["name"], s["value"]) for s in d.get("slots", [])))

    def to_dict(self) -> dict:
        return {"intent": self.intent, "slots": [{"name": s, "value": v} for s, v in self.slots]}

    def slot_dict(self) -> dict[str, str]:
        return dict(self.slots)

    def __str__(self) -> str:
        return serialize_api(self)


def serialize_api(call: ApiCall) -> str:
    if not call.slots:
        return f"{call.intent} ( )"
    body = " , ".join(f"{s} = {v}" for s, v in call.slots)
    return f"{call.intent} ( {body} )"


def parse_api(text: str) -> ApiCall:
    """Parse ``text`` into an :class:`ApiCall`.

    Values may span several words and run until the next ``,`` or ``)``.
    A repeated slot name keeps its last value.
    """
    tokens = _PUNCT.sub(r" \1 ", text).split()
    if len(tokens) < 3 or tokens[1] != "(":
        raise ApiParseError("expected 'intent ( ... )'", text)
    intent = tokens[0]
    if not _valid_name(intent):
        raise ApiParseError("bad intent", text)
    slots: dict[str, str] = {}
    i = 2
    if tokens[i] == ")":
        i += 1
    else:
        while True:
            if i + 1 >= len(tokens):
                raise ApiParseError("unterminated slot list", text)
            name = tokens[i]
            if not _valid_name(name) or tokens[i + 1] != "=":
                raise ApiParseError("expected 'slot ='", text)
            i += 2
            value = []
            while i < len(tokens) and tokens[i] not in _RESERVED:
                value.append(tokens[i])
                i += 1
            if not value or i >= len(tokens) or tokens[i] not in (",", ")"):
                raise ApiParseError("expected value followed by ',' or ')'", text)
            slots.pop(name, None)
            slots[name] = " ".join(value)
            sep = tokens[i]
            i += 1
            if sep == ")":
                break
    if i != len(tokens):
        raise ApiParseError("trailing tokens after ')'", text)
    return ApiCall(intent, tuple(slots.items()))


def try_parse_api(text: str) -> ApiCall | None:
    try:
        return parse_api(text)
    except ApiParseError:
        return None
