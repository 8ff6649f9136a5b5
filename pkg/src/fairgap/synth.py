"""Seeded synthetic corpora with explicit gender indicators and a hidden gender proxy.

Each document has a class, a gender drawn from that class's skew, a bag of
class-leaning content words, optionally a sentence carrying lexicon gender
indicators, and optionally a per-gender proxy word. Proxy words are absent
from the lexicon, so gender interventions cannot touch them: they are the
confounder that statistical gaps see and causal gaps do not.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

from fairgap.corpus import Dataset, Document, Gender

PROXY_TOKENS = {Gender.FEMALE: "zqvelf", Gender.MALE: "zqvolm"}

# Only bidirectional indicators plus possessive his/her, so a counterfactual of
# a counterfactual reproduces the original text exactly.
_INDICATORS = {
    Gender.FEMALE: {"title": "ms", "subj": "she", "poss": "her"},
    Gender.MALE: {"title": "mr", "subj": "he", "poss": "his"},
}


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 2
    docs_per_class: int = 500
    gender_skew: tuple[float, ...] = (0.5, 0.5)
    explicit_rate: float = 1.0
    proxy_strength: float = 0.0
    content_tokens_per_class: int = 12
    doc_length: int = 6
    # probability a content word comes from the document's own class pool
    # rather than the pool shared by all classes
    content_signal: float = 0.25
    seed: int = 0
    class_names: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "gender_skew", tuple(float(s) for s in self.gender_skew))
        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(self.class_names))
        if self.num_classes < 1 or self.docs_per_class < 1:
            raise ValueError("num_classes and docs_per_class must be positive")
        if self.content_tokens_per_class < 1 or self.doc_length < 1:
            raise ValueError("content_tokens_per_class and doc_length must be positive")
        if len(self.gender_skew) != self.num_classes:
            raise ValueError(
                f"gender_skew has {len(self.gender_skew)} entries for {self.num_classes} classes"
            )
        for name in ("explicit_rate", "proxy_strength", "content_signal"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for s in self.gender_skew:
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"gender_skew entries must lie in [0, 1], got {s}")
        if self.class_names is not None and len(self.class_names) != self.num_classes:
            raise ValueError("class_names length must equal num_classes")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown synth config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: str | Path) -> "SynthConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["gender_skew"] = list(self.gender_skew)
        if self.class_names is not None:
            d["class_names"] = list(self.class_names)
        return d


def content_vocabulary(config: SynthConfig) -> list[list[str]]:
    return [
        [f"k{y}w{i}" for i in range(config.content_tokens_per_class)] for y in range(config.num_classes)
    ]


def _render(words: Sequence[str], gender: Gender, explicit: bool, proxy: str | None) -> str:
    half = max(1, len(words) // 2)
    if explicit:
        ind = _INDICATORS[gender]
        text = (
            f"{ind['title'].capitalize()}. Lee says {ind['subj']} likes {' '.join(words[:half])}"
            f" and {ind['poss']} {' '.join(words[half:]) or 'work'}."
        )
    else:
        text = f"Lee says they like {' '.join(words[:half])} and {' '.join(words[half:]) or 'work'}."
    if proxy is not None:
        text += f" {proxy.capitalize()}."
    return text


def generate(config: SynthConfig) -> Dataset:
    rng = random.Random(config.seed)
    pools = content_vocabulary(config)
    shared = [w for pool in pools for w in pool]
    slots = [y for y in range(config.num_classes) for _ in range(config.docs_per_class)]
    rng.shuffle(slots)
    docs = []
    for i, y in enumerate(slots):
        gender = Gender.FEMALE if rng.random() < config.gender_skew[y] else Gender.MALE
        words = [
            rng.choice(pools[y]) if rng.random() < config.content_signal else rng.choice(shared)
            for _ in range(config.doc_length)
        ]
        explicit = rng.random() < config.explicit_rate
        proxy = PROXY_TOKENS[gender] if rng.random() < config.proxy_strength else None
        docs.append(
            Document(id=f"s{i}", text=_render(words, gender, explicit, proxy), label=y, gender=gender)
        )
    names = config.class_names or tuple(f"c{y}" for y in range(config.num_classes))
    return Dataset(tuple(docs), names, {"synth": config.to_dict()})
