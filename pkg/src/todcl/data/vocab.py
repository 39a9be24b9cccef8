"""Whitespace word-level tokenizer with a fixed block of special tokens."""
from __future__ import annotations

import hashlib
from typing import Iterable

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
GEN = "<gen>"
SPECIALS = (PAD, BOS, EOS, UNK, "USER:", "SYSTEM:", "API:", "OUT:", GEN)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
USER_ID, SYSTEM_ID, API_ID, OUT_ID, GEN_ID = 4, 5, 6, 7, 8
_CONTROL = {PAD_ID, BOS_ID, EOS_ID, GEN_ID}


class Tokenizer:
    """Frozen vocabulary mapping whitespace tokens to ids.

    Ids 0-8 are always the special tokens in ``SPECIALS`` order.
    """

    def __init__(self, tokens: Iterable[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}
        if len(self.stoi) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(range(len(SPECIALS)))

    def encode(self, text: str) -> list[int]:
        return [self.stoi.get(w, UNK_ID) for w in text.split()]

    def decode(self, ids: Iterable[int], skip_control: bool = True) -> str:
        words = []
        for i in ids:
            i = int(i)
            if skip_control and i in _CONTROL:
                continue
            words.append(self.itos[i] if 0 <= i < len(self.itos) else UNK)
        return " ".join(words)

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode()).hexdigest()


def build_vocab(examples) -> Tokenizer:
    """Vocabulary over every input and output of ``examples`` (sorted, specials first)."""
    examples = list(examples)
    if not examples:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    words: set[str] = set()
    for ex in examples:
        words.update(ex.input.split())
        words.update(ex.output.split())
    words.difference_update(SPECIALS)
    return Tokenizer(list(SPECIALS) + sorted(words))
