"""Seeded synthetic task-oriented dialogue domains.

Each domain has its own intents, a slot schema with value pools, and surface
templates.  Value pools are drawn from a registry of pronounceable pseudo-words
so that, when requested, no two domains share a value.
"""
from __future__ import annotations

import math
import random
import string
from dataclasses import dataclass, field

from .api import ApiCall
from .dialogue import Dialogue, DialogueTurn, Speaker


class SpecError(ValueError):
    """Domain specification is internally inconsistent."""


SLOT_PHRASES = {
    "area": "in the {area}",
    "time": "at {time}",
    "day": "on {day}",
    "price": "with {price} prices",
    "people": "for {people} people",
    "name": "called {name}",
    "kind": "of kind {kind}",
    "stars": "with {stars} stars",
    "origin": "from {origin}",
    "destination": "to {destination}",
    "parking": "with parking {parking}",
}
BINARY_SLOTS = ("parking",)
VERBS = ("find", "book", "cancel", "check", "order", "change", "rate", "track")

USER_OPEN = (
    "i want to {cue} a {domain} {details}",
    "please {cue} a {domain} {details}",
    "can you {cue} a {domain} {details}",
)
USER_MORE = ("also {details}", "make it {details}", "i would like it {details}")
USER_BYE = ("thanks that is all", "great thank you bye")
SYSTEM_TEMPLATES = {
    "inform": (
        "there is a {domain} {details} . anything else ?",
        "i have a {domain} {details} . any other preference ?",
    ),
    "confirm": (
        "your {domain} is set {details} .",
        "done , the {domain} {details} is confirmed .",
    ),
}
SYSTEM_ASK = ("sure , tell me more about the {domain} .",)
SYSTEM_BYE = ("you are welcome , goodbye .", "happy to help , bye .")

# The 37 benchmark domains across four corpora; names only, content is synthetic.
ALL_DOMAINS = (
    ("tm19", "movie"), ("tm19", "auto"), ("tm19", "restaurant"), ("tm19", "pizza"),
    ("tm19", "uber"), ("tm19", "coffee"), ("tm20", "flight"), ("tm20", "food-ordering"),
    ("tm20", "hotel"), ("tm20", "music"), ("tm20", "restaurant"), ("tm20", "sport"),
    ("tm20", "movie"), ("mwoz", "taxi"), ("mwoz", "train"), ("mwoz", "restaurant"),
    ("mwoz", "hotel"), ("mwoz", "attraction"), ("sgd", "restaurants"), ("sgd", "media"),
    ("sgd", "events"), ("sgd", "music"), ("sgd", "movies"), ("sgd", "flights"),
    ("sgd", "ridesharing"), ("sgd", "rentalcars"), ("sgd", "buses"), ("sgd", "hotels"),
    ("sgd", "services"), ("sgd", "homes"), ("sgd", "banks"), ("sgd", "calendar"),
    ("sgd", "alarm"), ("sgd", "weather"), ("sgd", "travel"), ("sgd", "payment"),
    ("sgd", "trains"),
)
DESK_DOMAINS = (
    ("tm19", "movie"), ("tm19", "uber"), ("tm20", "flight"), ("tm20", "hotel"),
    ("mwoz", "taxi"), ("mwoz", "train"), ("sgd", "weather"), ("sgd", "banks"),
)

_ONSETS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass
class DomainSpec:
    corpus: str
    name: str
    intents: dict[str, str]  # intent -> cue verb spoken by the user
    slots: dict[str, list[str]]  # slot name -> value pool
    slot_phrases: dict[str, str] = field(default_factory=dict)
    user_open: tuple[str, ...] = USER_OPEN
    user_more: tuple[str, ...] = USER_MORE
    system_templates: dict[str, tuple[str, ...]] = field(default_factory=lambda: dict(SYSTEM_TEMPLATES))
    seed: int = 0

    @property
    def task_label(self) -> str:
        return f"{self.corpus}/{self.name}"

    @property
    def domain_word(self) -> str:
        return self.name.replace("-", " ")

    def validate(self) -> None:
        if not self.intents or not self.slots:
            raise SpecError(f"{self.task_label}: needs at least one intent and one slot")
        for slot in self.slots:
            phrase = self.slot_phrases.get(slot)
            if phrase is None:
                raise SpecError(f"{self.task_label}: no phrase template for slot {slot!r}")
            refs = _placeholders(phrase)
            if refs != {slot}:
                raise SpecError(f"{self.task_label}: phrase for {slot!r} references {sorted(refs)}")
            if not self.slots[slot]:
                raise SpecError(f"{self.task_label}: empty value pool for {slot!r}")
        allowed = {"cue", "domain", "details"}
        templates = list(self.user_open) + list(self.user_more)
        templates += [t for ts in self.system_templates.values() for t in ts]
        for t in templates:
            unknown = _placeholders(t) - allowed
            if unknown:
                raise SpecError(f"{self.task_label}: template {t!r} references unknown slot(s) {sorted(unknown)}")


def _placeholders(template: str) -> set[str]:
    return {name for _, name, _, _ in string.Formatter().parse(template) if name}


class WordRegistry:
    """Hands out pseudo-words, never the same word twice."""

    def __init__(self, seed: int = 0, reserved=()):
        self.rng = random.Random(seed)
        self.used = set(reserved)

    def word(self, syllables: int = 2) -> str:
        for _ in range(1000):
            w = "".join(self.rng.choice(_ONSETS) + self.rng.choice(_VOWELS) for _ in range(syllables))
            if w not in self.used:
                self.used.add(w)
                return w
        return self.word(syllables + 1)


def make_domain_spec(corpus: str, name: str, registry: WordRegistry, seed: int = 0,
                     n_intents: int = 3, n_slots: int = 3, n_values: int = 6,
                     binary_slot: bool = False) -> DomainSpec:
    rng = random.Random(f"{corpus}/{name}/{seed}")
    stem = name.replace("-", "_")
    verbs = rng.sample(VERBS, n_intents)
    intents = {f"{v}_{stem}": v for v in verbs}
    regular = [s for s in SLOT_PHRASES if s not in BINARY_SLOTS]
    slot_names = rng.sample(regular, n_slots)
    slots = {s: [registry.word() for _ in range(n_values)] for s in slot_names}
    if binary_slot:
        slots["parking"] = ["yes", "no"]
    phrases = {s: SLOT_PHRASES[s] for s in slots}
    spec = DomainSpec(corpus, name, intents, slots, phrases, seed=seed)
    spec.validate()
    return spec


def make_curriculum_specs(domains=DESK_DOMAINS, seed: int = 0, disjoint: bool = True,
                          **kwargs) -> list[DomainSpec]:
    """Domain specs for ``domains``; ``disjoint`` keeps value pools domain-private."""
    reserved = {w for t in USER_OPEN + USER_MORE + USER_BYE for w in t.split()}
    shared = WordRegistry(seed, reserved)
    specs = []
    for i, (corpus, name) in enumerate(domains):
        registry = shared if disjoint else WordRegistry(seed, reserved)
        kw = dict(kwargs)
        kw.setdefault("binary_slot", i % 3 == 2)
        specs.append(make_domain_spec(corpus, name, registry, seed=seed, **kw))
    return specs


def _details(spec: DomainSpec, slots: list[tuple[str, str]]) -> str:
    return " ".join(spec.slot_phrases[s].format(**{s: v}) for s, v in slots)


def _dialogue(spec: DomainSpec, rng: random.Random, idx: int) -> Dialogue:
    intent = rng.choice(sorted(spec.intents))
    names = sorted(spec.slots)
    k = rng.randint(1, len(names))
    chosen = rng.sample(names, k)
    goal = [(s, rng.choice(spec.slots[s])) for s in chosen]
    m = rng.randint(0, k)
    first, rest = goal[:m], goal[m:]
    dom = spec.domain_word
    turns = []

    def user(template, slots_so_far, **kw):
        text = template.format(domain=dom, details=_details(spec, kw.pop("new")), **kw)
        turns.append(DialogueTurn(Speaker.USER, " ".join(text.split()), ApiCall(intent, tuple(slots_so_far))))

    def system(act, slots):
        if act is None:
            turns.append(DialogueTurn(Speaker.SYSTEM, rng.choice(SYSTEM_ASK).format(domain=dom)))
            return
        text = rng.choice(spec.system_templates[act]).format(domain=dom, details=_details(spec, slots))
        turns.append(DialogueTurn(Speaker.SYSTEM, " ".join(text.split()), api_out=ApiCall(act, tuple(slots))))

    user(rng.choice(spec.user_open), first, new=first, cue=spec.intents[intent])
    if rest:
        system("inform" if first else None, first)
        user(rng.choice(spec.user_more), goal, new=rest)
    system("confirm", goal)
    turns.append(DialogueTurn(Speaker.USER, rng.choice(USER_BYE)))
    turns.append(DialogueTurn(Speaker.SYSTEM, rng.choice(SYSTEM_BYE)))
    return Dialogue(spec.corpus, spec.name, turns, dialogue_id=f"{spec.task_label}#{idx}")


def generate_domain(spec: DomainSpec, n_dialogues: int, splits=(0.8, 0.1, 0.1)) -> list[Dialogue]:
    """Deterministic dialogues for ``spec``; ``split`` is assigned by position."""
    spec.validate()
    rng = random.Random(f"dialogues/{spec.task_label}/{spec.seed}")
    dialogues = [_dialogue(spec, rng, i) for i in range(n_dialogues)]
    n_train = int(math.floor(splits[0] * n_dialogues))
    n_valid = int(math.floor(splits[1] * n_dialogues))
    for i, d in enumerate(dialogues):
        d.split = "train" if i < n_train else "valid" if i < n_train + n_valid else "test"
    return dialogues


def mixed_sizes(n_domains: int, low: int, high: int, seed: int = 0) -> list[int]:
    """Log-uniform dialogue counts in [low, high], mimicking the spread of real corpora."""
    rng = random.Random(seed)
    return [int(round(math.exp(rng.uniform(math.log(low), math.log(high))))) for _ in range(n_domains)]
