from .api import ApiCall, ApiParseError, parse_api, serialize_api, try_parse_api
from .dialogue import (
    API_TOKEN, OUT_TOKEN, SYSTEM_TOKEN, USER_TOKEN, Dialogue, DialogueTurn, Example,
    FormatError, Setting, Speaker, build_examples, build_task_examples,
)
from .io import DatasetError, load_dataset, read_dialogues, save_dataset, split_by_task
from .synthetic import (
    ALL_DOMAINS, DESK_DOMAINS, DomainSpec, SpecError, generate_domain, make_curriculum_specs,
    make_domain_spec, mixed_sizes,
)
from .vocab import SPECIALS, Tokenizer, build_vocab

__all__ = [
    "ApiCall", "ApiParseError", "parse_api", "serialize_api", "try_parse_api",
    "API_TOKEN", "OUT_TOKEN", "SYSTEM_TOKEN", "USER_TOKEN", "Dialogue", "DialogueTurn",
    "Example", "FormatError", "Setting", "Speaker", "build_examples", "build_task_examples",
    "DatasetError", "load_dataset", "read_dialogues", "save_dataset", "split_by_task",
    "ALL_DOMAINS", "DESK_DOMAINS", "DomainSpec", "SpecError", "generate_domain",
    "make_curriculum_specs", "make_domain_spec", "mixed_sizes",
    "SPECIALS", "Tokenizer", "build_vocab",
]
