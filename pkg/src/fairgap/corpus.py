"""Labeled, gender-annotated text datasets: ingestion, preprocessing and splits."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence


class Gender(str, Enum):
    FEMALE = "female"
    MALE = "male"
    UNKNOWN = "unknown"

    @classmethod
    def parse(cls, value: Any) -> "Gender":
        if value is None:
            return cls.UNKNOWN
        if isinstance(value, Gender):
            return value
        key = str(value).strip().lower()
        aliases = {"f": "female", "m": "male", "": "unknown", "none": "unknown"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unrecognised gender {value!r}") from None

    @property
    def opposite(self) -> "Gender":
        if self is Gender.FEMALE:
            return Gender.MALE
        if self is Gender.MALE:
            return Gender.FEMALE
        raise ValueError("Unknown gender has no opposite")

    @property
    def is_binary(self) -> bool:
        return self is not Gender.UNKNOWN


GENDERS = (Gender.FEMALE, Gender.MALE)


class CorpusError(ValueError):
    """Raised for malformed or inconsistent dataset input."""


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    label: int
    gender: Gender = Gender.UNKNOWN
    gender_confidence: float = 1.0
    weight: float = 1.0
    is_counterfactual: bool = False
    source_id: str | None = None

    def __post_init__(self):
        if not self.weight > 0 or not math.isfinite(self.weight):
            raise CorpusError(f"document {self.id!r}: weight must be positive, got {self.weight}")
        if not 0.0 <= self.gender_confidence <= 1.0:
            raise CorpusError(
                f"document {self.id!r}: gender_confidence must lie in [0, 1], got {self.gender_confidence}"
            )
        if self.is_counterfactual and self.source_id is None:
            raise CorpusError(f"document {self.id!r}: counterfactual without source_id")
        if self.label < 0:
            raise CorpusError(f"document {self.id!r}: negative label {self.label}")


@dataclass(frozen=True, eq=True)
class Dataset:
    documents: tuple[Document, ...]
    class_names: tuple[str, ...]
    provenance: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "documents", tuple(self.documents))
        object.__setattr__(self, "class_names", tuple(str(c) for c in self.class_names))
        if not self.class_names:
            raise CorpusError("class_names must be non-empty")
        if len(set(self.class_names)) != len(self.class_names):
            raise CorpusError(f"duplicate class names: {self.class_names}")
        seen: set[str] = set()
        for doc in self.documents:
            if doc.id in seen:
                raise CorpusError(f"duplicate document id {doc.id!r}")
            seen.add(doc.id)
            if doc.label >= len(self.class_names):
                raise CorpusError(
                    f"document {doc.id!r}: label {doc.label} out of range for {len(self.class_names)} classes"
                )

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def with_documents(self, documents: Iterable[Document], **provenance: Any) -> "Dataset":
        prov = dict(self.provenance)
        prov.update(provenance)
        return Dataset(tuple(documents), self.class_names, prov)

    def gendered(self) -> "Dataset":
        return self.with_documents(d for d in self.documents if d.gender.is_binary)

    def by_id(self) -> dict[str, Document]:
        return {d.id: d for d in self.documents}


@dataclass(frozen=True)
class JointCounts:
    """Female/Male x class contingency table; Unknown-gender documents are not counted."""

    table: Mapping[tuple[Gender, int], int]
    num_classes: int

    def cell(self, gender: Gender, label: int) -> int:
        return self.table.get((gender, label), 0)

    def gender_total(self, gender: Gender) -> int:
        return sum(self.cell(gender, y) for y in range(self.num_classes))

    def class_total(self, label: int) -> int:
        return sum(self.cell(g, label) for g in GENDERS)

    @property
    def total(self) -> int:
        return sum(self.table.values())


def joint_counts(dataset: Dataset) -> JointCounts:
    table = {(g, y): 0 for g in GENDERS for y in range(dataset.num_classes)}
    for doc in dataset.documents:
        if doc.gender.is_binary:
            table[(doc.gender, doc.label)] += 1
    return JointCounts(table, dataset.num_classes)


# -- JSONL ingestion ---------------------------------------------------------


def _resolve_label(raw: Any, class_names: list[str], fixed: bool, line_no: int) -> int:
    if isinstance(raw, bool) or raw is None:
        raise CorpusError(f"line {line_no}: invalid label {raw!r}")
    if isinstance(raw, int):
        if fixed and raw >= len(class_names):
            raise CorpusError(f"line {line_no}: label index {raw} out of range")
        if not fixed:
            while len(class_names) <= raw:
                class_names.append(str(len(class_names)))
        return raw
    key = str(raw)
    if key in class_names:
        return class_names.index(key)
    if fixed:
        raise CorpusError(f"line {line_no}: unknown label {key!r} (classes: {class_names})")
    class_names.append(key)
    return len(class_names) - 1


def document_from_record(record: Mapping[str, Any], label: int, default_id: str) -> Document:
    return Document(
        id=str(record.get("id", default_id)),
        text=record["text"],
        label=label,
        gender=Gender.parse(record.get("gender")),
        gender_confidence=float(record.get("gender_confidence", 1.0)),
        weight=float(record.get("weight", 1.0)),
        is_counterfactual=bool(record.get("is_counterfactual", False)),
        source_id=record.get("source_id"),
    )


def parse_jsonl_lines(
    lines: Iterable[str], class_names: Sequence[str] | None = None, source: str = "<stream>"
) -> Dataset:
    fixed = class_names is not None
    names = list(class_names) if fixed else []
    docs = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{source}: line {line_no}: malformed JSON ({exc.msg})") from None
        if not isinstance(record, dict) or "text" not in record or "label" not in record:
            raise CorpusError(f"{source}: line {line_no}: expected an object with 'text' and 'label'")
        if not isinstance(record["text"], str):
            raise CorpusError(f"{source}: line {line_no}: 'text' must be a string")
        try:
            label = _resolve_label(record["label"], names, fixed, line_no)
            docs.append(document_from_record(record, label, default_id=str(line_no - 1)))
        except CorpusError as exc:
            raise CorpusError(f"{source}: {exc}") from None
        except ValueError as exc:
            raise CorpusError(f"{source}: line {line_no}: {exc}") from None
    if not names:
        raise CorpusError(f"{source}: no labels found and no class names given")
    return Dataset(tuple(docs), tuple(names), {"source": source})


def load_jsonl(path: str | Path, class_names: Sequence[str] | None = None) -> Dataset:
    """Read a JSONL dataset.

    String labels resolve against ``class_names`` when given; otherwise
    classes are collected in first-seen order. A missing ``gender`` field
    yields :attr:`Gender.UNKNOWN`.
    """
    path = Path(path)
    try:
        content = path.read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusError(f"{path}: not valid UTF-8 (byte {exc.start})") from None
    return parse_jsonl_lines(content.splitlines(), class_names, source=str(path))


def document_record(doc: Document, class_names: Sequence[str]) -> dict[str, Any]:
    return {
        "id": doc.id,
        "text": doc.text,
        "label": class_names[doc.label],
        "gender": None if doc.gender is Gender.UNKNOWN else doc.gender.value,
        "gender_confidence": doc.gender_confidence,
        "weight": doc.weight,
        "is_counterfactual": doc.is_counterfactual,
        "source_id": doc.source_id,
    }


def dumps_jsonl(dataset: Dataset) -> str:
    lines = [
        json.dumps(document_record(d, dataset.class_names), ensure_ascii=False)
        for d in dataset.documents
    ]
    return "".join(line + "\n" for line in lines)


def save_jsonl(dataset: Dataset, path: str | Path) -> None:
    from fairgap._io import atomic_write_text

    atomic_write_text(path, dumps_jsonl(dataset))


# -- Jigsaw-style raw records -------------------------------------------------

# Float subtraction turns e.g. 0.8 - 0.3 into 0.5000000000000001; scores are
# annotator fractions, so differences this small are representation noise.
_BOUNDARY_EPS = 1e-9

JIGSAW_CLASSES = ("nontoxic", "toxic")


def binarize_jigsaw_style(
    records: Iterable[Mapping[str, Any]],
    toxicity_threshold: float = 0.5,
    agreement_gap: float = 0.5,
) -> Dataset:
    """Binarize toxicity and gender annotations.

    A record is toxic iff ``toxicity > toxicity_threshold``. Its gender is the
    identity with the larger annotator score; records whose female and male
    scores differ by at most ``agreement_gap`` are dropped.
    """
    docs = []
    for i, rec in enumerate(records):
        tox = float(rec["toxicity"])
        f = float(rec.get("female_score", rec.get("female")))
        m = float(rec.get("male_score", rec.get("male")))
        for name, v in (("toxicity", tox), ("female", f), ("male", m)):
            if not 0.0 <= v <= 1.0:
                raise CorpusError(f"record {i}: {name} score {v} outside [0, 1]")
        if abs(f - m) <= agreement_gap + _BOUNDARY_EPS:
            continue
        if f > m:
            gender = Gender.FEMALE
        elif m > f:
            gender = Gender.MALE
        else:
            gender = Gender.UNKNOWN
        docs.append(
            Document(
                id=str(rec.get("id", i)),
                text=str(rec.get("text", "")),
                label=1 if tox > toxicity_threshold else 0,
                gender=gender,
                gender_confidence=max(f, m),
            )
        )
    return Dataset(
        tuple(docs),
        JIGSAW_CLASSES,
        {"binarized": {"toxicity_threshold": toxicity_threshold, "agreement_gap": agreement_gap}},
    )


def load_jigsaw_jsonl(path: str | Path, **kwargs: Any) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    return binarize_jigsaw_style(records, **kwargs)


# -- label-token masking -------------------------------------------------------


def mask_label_tokens(
    dataset: Dataset, label_terms: Mapping[int | str, Sequence[str]], mask: str = "_"
) -> Dataset:
    """Replace whole-token, case-insensitive mentions of each document's own class terms."""
    from fairgap.perturb import tokenize

    terms_by_class: dict[int, list[tuple[str, ...]]] = {}
    for key, terms in label_terms.items():
        idx = key if isinstance(key, int) else dataset.class_names.index(key)
        seqs = []
        for term in terms:
            toks = tuple(t.lower() for t, _ in tokenize(term))
            if toks:
                seqs.append(toks)
        # longest first so multiword terms win over their prefixes
        terms_by_class[idx] = sorted(seqs, key=len, reverse=True)

    out = []
    for doc in dataset.documents:
        seqs = terms_by_class.get(doc.label)
        if not seqs:
            out.append(doc)
            continue
        toks = tokenize(doc.text)
        lowered = [t.lower() for t, _ in toks]
        spans = []
        i = 0
        while i < len(toks):
            for seq in seqs:
                if tuple(lowered[i : i + len(seq)]) == seq:
                    spans.append((toks[i][1][0], toks[i + len(seq) - 1][1][1]))
                    i += len(seq)
                    break
            else:
                i += 1
        if not spans:
            out.append(doc)
            continue
        pieces, cursor = [], 0
        for start, end in spans:
            pieces.append(doc.text[cursor:start])
            pieces.append(mask)
            cursor = end
        pieces.append(doc.text[cursor:])
        out.append(replace(doc, text="".join(pieces)))
    return dataset.with_documents(out)


# -- splitting -----------------------------------------------------------------


def split(
    dataset: Dataset, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0
) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle into train/val/test; floor sizes, remainder to train."""
    if len(fractions) != 3 or any(not f > 0 for f in fractions):
        raise CorpusError(f"fractions must be three positive numbers, got {tuple(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise CorpusError(f"fractions must sum to 1, got {sum(fractions)}")
    n = len(dataset)
    order = list(range(n))
    random.Random(seed).shuffle(order)
    # the epsilon keeps e.g. 0.29 * 100 = 28.999999999999996 from flooring to 28
    n_val = math.floor(n * fractions[1] + 1e-9)
    n_test = math.floor(n * fractions[2] + 1e-9)
    n_train = n - n_val - n_test
    parts = (order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :])
    names = ("train", "val", "test")
    return tuple(  # type: ignore[return-value]
        dataset.with_documents(
            (dataset.documents[i] for i in idx), split={"part": name, "seed": seed}
        )
        for name, idx in zip(names, parts)
    )

