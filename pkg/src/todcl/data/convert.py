"""Mapping notes for the public corpora into the unified format.

Conversion itself is not implemented; these notes fix how each source field
would land in a unified record (see :mod:`todcl.data.io`).

Taskmaster-2019 / Taskmaster-2020
    ``corpus`` = "tm19"/"tm20", ``domain`` = the instruction/api domain.
    Each utterance becomes a turn; user turns carrying annotated segments get
    ``api_call`` = {intent: api name, slots: segment annotations up to that
    turn}.  System turns with annotations get ``api_out``.

MultiWOZ 2.x
    Only single-domain dialogues are kept.  ``api_call`` on user turns is the
    active intent plus the cumulative belief state of that domain; ``api_out``
    on system turns is the dialogue act of the turn (act type as intent,
    slot/value pairs as slots).

Schema-Guided Dialogue
    ``domain`` is the service name without its numeric suffix.  User frames
    give ``api_call`` (active intent + slot values); system actions give
    ``api_out``.  Boolean slot values stay as ``yes``/``no`` so the slot
    error rate can exclude them.

In all cases values keep their surface form: responses are not delexicalised.
"""
from __future__ import annotations

SOURCES = ("tm19", "tm20", "mwoz", "sgd")


def convert(source: str, path: str, out_path: str) -> None:
    if source not in SOURCES:
        raise ValueError(f"unknown source corpus {source!r}")
    raise NotImplementedError(
        f"converting {source} is outside this package; see the module docstring for the field mapping"
    )
