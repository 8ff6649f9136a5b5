"""Rule-based gender detection and gender intervention on text.

The intervention rewrites every explicit gender indicator in a text so it
expresses the target gender, leaving all other bytes untouched. Indicators and
their swaps come from a :class:`GenderLexicon`; the default one ships as
``data/lexicon.tsv``. Names are never changed.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

from fairgap.corpus import Dataset, Document, Gender

POSSESSIVE = "possessive"
OBJECTIVE = "objective"

# letters and digits (no underscore) plus straight/curly apostrophes
_TOKEN_RE = re.compile(r"(?:[^\W_]|['’])+")
# clitics kept attached to the token ("He's" -> "She's")
_CLITIC_RE = re.compile(r"^(.*?)(['’](?:s|d|ll|re|ve|m))$", re.IGNORECASE)

Token = tuple[str, tuple[int, int]]
Resolver = Callable[[Sequence[Token], int, str], str]


def tokenize(text: str) -> list[Token]:
    """Split text into word tokens with their ``(start, end)`` character spans.

    Everything between tokens (whitespace, punctuation) is a gap, so
    ``text`` is recovered exactly by interleaving gaps and tokens.
    """
    return [(m.group(), m.span()) for m in _TOKEN_RE.finditer(text)]


def _split_clitic(token: str) -> tuple[str, str]:
    m = _CLITIC_RE.match(token)
    if m and m.group(1):
        return m.group(1), m.group(2)
    return token, ""


def match_case(source: str, target: str) -> str:
    if len(source) > 1 and source.isupper():
        return target.upper()
    if source[:1].isupper():
        return target[:1].upper() + target[1:]
    return target


@dataclass(frozen=True)
class Rule:
    source: str
    source_gender: Gender
    targets: tuple[str, ...]
    kind: str  # "bi", "uni" or "ambiguous"


@dataclass(frozen=True)
class GenderLexicon:
    bidirectional_pairs: tuple[tuple[str, str], ...]
    unidirectional_rules: tuple[tuple[str, Gender, str], ...]
    ambiguous_rules: tuple[tuple[str, str, tuple[str, ...]], ...]
    rules: dict[str, Rule] = field(init=False, repr=False, compare=False)
    indicator_sets: dict[Gender, frozenset[str]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rules: dict[str, Rule] = {}
        genders: dict[str, Gender] = {}

        def add(rule: Rule):
            if rule.source in rules:
                raise ValueError(f"lexicon token {rule.source!r} is the source of more than one rule")
            rules[rule.source] = rule
            genders[rule.source] = rule.source_gender

        for male, female in self.bidirectional_pairs:
            add(Rule(male, Gender.MALE, (female,), "bi"))
            add(Rule(female, Gender.FEMALE, (male,), "bi"))
        for source, gender, target in self.unidirectional_rules:
            add(Rule(source, gender, (target,), "uni"))
        for source, _resolver, targets in self.ambiguous_rules:
            # an ambiguous source is whatever gender its targets are not
            target_genders = {genders.get(t) for t in targets} - {None}
            gender = (
                next(iter(target_genders)).opposite if len(target_genders) == 1 else Gender.FEMALE
            )
            add(Rule(source, gender, tuple(targets), "ambiguous"))

        for rule in rules.values():
            for t in rule.targets:
                tg = genders.get(t)
                if tg is not None and tg is rule.source_gender:
                    raise ValueError(f"rule {rule.source!r} -> {t!r} does not change gender")
        sets = {
            g: frozenset(tok for tok, tg in genders.items() if tg is g)
            for g in (Gender.FEMALE, Gender.MALE)
        }
        object.__setattr__(self, "rules", rules)
        object.__setattr__(self, "indicator_sets", sets)

    def gender_of(self, token: str) -> Gender | None:
        rule = self.rules.get(token.lower())
        return rule.source_gender if rule else None

    @property
    def all_indicators(self) -> frozenset[str]:
        return self.indicator_sets[Gender.FEMALE] | self.indicator_sets[Gender.MALE]

    @classmethod
    def from_tsv(cls, path: str | Path) -> "GenderLexicon":
        return cls.parse_tsv(Path(path).read_text(encoding="utf-8"), source=str(path))

    @classmethod
    def parse_tsv(cls, content: str, source: str = "<lexicon>") -> "GenderLexicon":
        """Parse ``source<TAB>source_gender<TAB>target<TAB>rule_kind`` rows.

        Bidirectional rows are written once, from the male side or the female
        side. Ambiguous rows list their target options separated by ``|``.
        """
        bi, uni, amb = [], [], []
        for line_no, line in enumerate(content.splitlines(), start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = [c.strip() for c in line.split("\t")]
            if len(cols) != 4:
                raise ValueError(f"{source}: line {line_no}: expected 4 tab-separated columns")
            src, gender_s, target, kind = cols
            src, target = src.lower(), target.lower()
            gender = Gender.parse(gender_s)
            if not gender.is_binary:
                raise ValueError(f"{source}: line {line_no}: source gender must be female or male")
            if kind == "bi":
                bi.append((src, target) if gender is Gender.MALE else (target, src))
            elif kind == "uni":
                uni.append((src, gender, target))
            elif kind == "ambiguous":
                amb.append((src, src, tuple(target.split("|"))))
            else:
                raise ValueError(f"{source}: line {line_no}: unknown rule kind {kind!r}")
        lex = cls(tuple(bi), tuple(uni), tuple(amb))
        for src, gender, _ in uni:
            if lex.rules[src].source_gender is not gender:
                raise ValueError(f"{source}: conflicting gender for {src!r}")
        return lex

    def to_tsv(self) -> str:
        rows = [f"{m}\tmale\t{f}\tbi" for m, f in self.bidirectional_pairs]
        rows += [f"{s}\t{g.value}\t{t}\tuni" for s, g, t in self.unidirectional_rules]
        rows += [
            f"{s}\t{self.rules[s].source_gender.value}\t{'|'.join(ts)}\tambiguous"
            for s, _, ts in self.ambiguous_rules
        ]
        return "\n".join(rows) + "\n"


@lru_cache(maxsize=1)
def default_lexicon() -> GenderLexicon:
    return GenderLexicon.parse_tsv(
        resources.files("fairgap").joinpath("data/lexicon.tsv").read_text(encoding="utf-8"),
        source="fairgap:data/lexicon.tsv",
    )


def load_lexicon(path: str | Path | None = None) -> GenderLexicon:
    """Lexicon from ``path``, else from ``$FAIRGAP_LEXICON``, else the shipped default."""
    path = path or os.environ.get("FAIRGAP_LEXICON")
    if path:
        return GenderLexicon.from_tsv(path)
    return default_lexicon()


@lru_cache(maxsize=1)
def _her_stoplist() -> frozenset[str]:
    text = resources.files("fairgap").joinpath("data/her_stoplist.txt").read_text(encoding="utf-8")
    return frozenset(
        line.strip().lower() for line in text.splitlines() if line.strip() and not line.startswith("#")
    )


def resolve_her(tokens: Sequence[Token], position: int, text: str | None = None) -> str:
    """Decide whether the ``her`` at ``position`` is possessive or an object.

    Possessive when the next token is a word outside the stoplist and nothing
    but whitespace separates them; objective at end of text, before
    punctuation, or before a stoplisted function word or verb.
    """
    if not 0 <= position < len(tokens):
        raise IndexError(f"position {position} out of range for {len(tokens)} tokens")
    if _split_clitic(tokens[position][0])[0].lower() != "her":
        raise ValueError(f"token at {position} is {tokens[position][0]!r}, not 'her'")
    if position + 1 >= len(tokens):
        return OBJECTIVE
    if text is not None:
        gap = text[tokens[position][1][1] : tokens[position + 1][1][0]]
        if gap.strip():
            return OBJECTIVE
    nxt = tokens[position + 1][0].lower()
    if nxt in _her_stoplist() or _split_clitic(nxt)[0] in _her_stoplist():
        return OBJECTIVE
    return POSSESSIVE


def detect_gender(text: str, lexicon: GenderLexicon | None = None) -> tuple[Gender, dict[Gender, int]]:
    """Strict-majority gender of the indicator tokens in ``text``; ties and no indicators give Unknown."""
    lexicon = lexicon or default_lexicon()
    counts = {Gender.FEMALE: 0, Gender.MALE: 0}
    for tok, _ in tokenize(text):
        g = lexicon.gender_of(_split_clitic(tok)[0])
        if g is not None:
            counts[g] += 1
    f, m = counts[Gender.FEMALE], counts[Gender.MALE]
    if f > m:
        return Gender.FEMALE, counts
    if m > f:
        return Gender.MALE, counts
    return Gender.UNKNOWN, counts


def perturb(
    text: str,
    target: Gender,
    lexicon: GenderLexicon | None = None,
    resolver: Resolver | None = None,
) -> tuple[str, list[tuple[tuple[int, int], str]]]:
    """Rewrite ``text`` so every gender indicator expresses ``target``.

    Returns the new text and the list of ``((start, end), replacement)`` edits,
    spans referring to the original text. ``resolver`` picks the sense of an
    ambiguous source token and defaults to :func:`resolve_her`.
    """
    if not target.is_binary:
        raise ValueError("perturbation target must be female or male")
    lexicon = lexicon or default_lexicon()
    resolver = resolver or resolve_her
    tokens = tokenize(text)
    edits = []
    for i, (tok, span) in enumerate(tokens):
        stem, clitic = _split_clitic(tok)
        rule = lexicon.rules.get(stem.lower())
        if rule is None or rule.source_gender is target:
            continue
        if rule.kind == "ambiguous":
            sense = resolver(tokens, i, text)
            replacement = rule.targets[0] if sense == POSSESSIVE else rule.targets[-1]
        else:
            replacement = rule.targets[0]
        edits.append((span, match_case(stem, replacement) + clitic))
    if not edits:
        return text, []
    pieces, cursor = [], 0
    for (start, end), new in edits:
        pieces.append(text[cursor:start])
        pieces.append(new)
        cursor = end
    pieces.append(text[cursor:])
    return "".join(pieces), edits


@dataclass(frozen=True)
class PerturbedPair:
    original: Document
    female_version: str
    male_version: str
    edits: tuple[tuple[tuple[int, int], str], ...]


def perturbed_pair(doc: Document, lexicon: GenderLexicon | None = None) -> PerturbedPair:
    female, f_edits = perturb(doc.text, Gender.FEMALE, lexicon)
    male, m_edits = perturb(doc.text, Gender.MALE, lexicon)
    return PerturbedPair(doc, female, male, tuple(f_edits + m_edits))


def counterfactual(doc: Document, lexicon: GenderLexicon | None = None, id_suffix: str = "#cf") -> Document:
    if not doc.gender.is_binary:
        raise ValueError(f"document {doc.id!r} has unknown gender; no counterfactual defined")
    target = doc.gender.opposite
    text, _ = perturb(doc.text, target, lexicon)
    return replace(
        doc,
        id=f"{doc.id}{id_suffix}",
        text=text,
        gender=target,
        is_counterfactual=True,
        source_id=doc.id,
    )


def augment_cda(dataset: Dataset, lexicon: GenderLexicon | None = None) -> Dataset:
    """Originals in order, followed by one counterfactual per gendered original."""
    cfs = [counterfactual(d, lexicon) for d in dataset.documents if d.gender.is_binary]
    return dataset.with_documents(list(dataset.documents) + cfs, augmented="cda")


def perturb_many(texts: Iterable[str], target: Gender, lexicon: GenderLexicon | None = None) -> list[str]:
    return [perturb(t, target, lexicon)[0] for t in texts]
