"""Pre-processing debiasers: resampling, reweighting, CDA and their compositions.

Resampling balances gender within each class. Unknown-gender documents pass
through every method untouched.
"""

from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, replace
from enum import Enum

from fairgap.corpus import GENDERS, Dataset, Document, Gender, joint_counts
from fairgap.perturb import GenderLexicon, augment_cda, default_lexicon


class DebiasError(ValueError):
    pass


class Method(str, Enum):
    NONE = "none"
    OS = "os"
    US = "us"
    RW = "rw"
    CDA = "cda"
    OS_CDA = "os-cda"
    US_CDA = "us-cda"
    RW_CDA = "rw-cda"

    @property
    def is_composed(self) -> bool:
        return self in (Method.OS_CDA, Method.US_CDA, Method.RW_CDA)


class CompositionOrder(str, Enum):
    RESAMPLE_THEN_CDA = "resample-first"
    CDA_THEN_RESAMPLE = "cda-first"


class CfWeight(str, Enum):
    SAME_AS_ORIGINAL = "same"
    COUNTERFACTUAL_GENDER = "cf-gender"
    UNIT = "unit"


@dataclass(frozen=True)
class DebiasPlan:
    method: Method = Method.NONE
    composition_order: CompositionOrder = CompositionOrder.RESAMPLE_THEN_CDA
    cf_weight_strategy: CfWeight = CfWeight.UNIT
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "composition_order", CompositionOrder(self.composition_order))
        object.__setattr__(self, "cf_weight_strategy", CfWeight(self.cf_weight_strategy))

    @property
    def name(self) -> str:
        if self.method in (Method.OS_CDA, Method.US_CDA):
            return f"{self.method.value}[{self.composition_order.value}]"
        if self.method is Method.RW_CDA:
            return f"{self.method.value}[{self.cf_weight_strategy.value}]"
        return self.method.value


def _cells(dataset: Dataset) -> dict[tuple[int, Gender], list[Document]]:
    cells: dict[tuple[int, Gender], list[Document]] = defaultdict(list)
    for doc in dataset.documents:
        if doc.gender.is_binary:
            cells[(doc.label, doc.gender)].append(doc)
    return cells


def _check_balanceable(dataset: Dataset, cells) -> None:
    bad = []
    for y in range(dataset.num_classes):
        nf, nm = len(cells[(y, Gender.FEMALE)]), len(cells[(y, Gender.MALE)])
        if (nf == 0) != (nm == 0):
            missing = "female" if nf == 0 else "male"
            bad.append(f"class {dataset.class_names[y]!r} has no {missing} documents")
    if bad:
        raise DebiasError("cannot balance: " + "; ".join(bad))


def oversample(dataset: Dataset, seed: int = 0) -> Dataset:
    """Duplicate minority-gender documents within each class until both genders match.

    Duplicates are drawn with replacement, appended after the originals in
    class order, and carry the id ``<source>#os<k>`` and ``source_id``.
    """
    cells = _cells(dataset)
    _check_balanceable(dataset, cells)
    rng = random.Random(seed)
    extra = []
    for y in range(dataset.num_classes):
        f, m = cells[(y, Gender.FEMALE)], cells[(y, Gender.MALE)]
        minority, need = (f, len(m) - len(f)) if len(f) < len(m) else (m, len(f) - len(m))
        for k in range(need):
            src = rng.choice(minority)
            extra.append(replace(src, id=f"{src.id}#os{k}", source_id=src.source_id or src.id))
    return dataset.with_documents(list(dataset.documents) + extra, debias={"method": "os", "seed": seed})


def undersample(dataset: Dataset, seed: int = 0) -> Dataset:
    """Drop majority-gender documents within each class (seeded, without replacement); order preserved."""
    cells = _cells(dataset)
    _check_balanceable(dataset, cells)
    rng = random.Random(seed)
    drop: set[str] = set()
    for y in range(dataset.num_classes):
        f, m = cells[(y, Gender.FEMALE)], cells[(y, Gender.MALE)]
        majority, keep = (m, len(f)) if len(m) > len(f) else (f, len(m))
        kept = set(d.id for d in rng.sample(majority, keep))
        drop.update(d.id for d in majority if d.id not in kept)
    return dataset.with_documents(
        (d for d in dataset.documents if d.id not in drop), debias={"method": "us", "seed": seed}
    )


def reweight_table(dataset: Dataset) -> dict[tuple[Gender, int], float]:
    """``N(g) * N(y) / (N * N(g, y))`` for every Female/Male cell."""
    jc = joint_counts(dataset)
    table = {}
    empty = []
    for g in GENDERS:
        for y in range(dataset.num_classes):
            n_gy = jc.cell(g, y)
            if n_gy == 0:
                empty.append(f"({g.value}, {dataset.class_names[y]!r})")
                continue
            table[(g, y)] = jc.gender_total(g) * jc.class_total(y) / (jc.total * n_gy)
    if empty:
        raise DebiasError("cannot reweight, empty cells: " + ", ".join(empty))
    return table


def reweight(dataset: Dataset) -> Dataset:
    """Assign every Female/Male document its :func:`reweight_table` weight.

    Worked example with 8 documents, one per (gender, class) cell count below::

        counts          weights
                y=0 y=1         y=0     y=1
        F        1   3      F   2.0     0.6667
        M        3   1      M   0.6667  2.0

    e.g. ``w(F, 0) = N(F) * N(0) / (N * N(F, 0)) = 4 * 4 / (8 * 1) = 2``.
    After reweighting every cell carries total weight 2 = N(g) * N(y) / N.
    """
    table = reweight_table(dataset)
    docs = [
        replace(d, weight=table[(d.gender, d.label)]) if d.gender.is_binary else d
        for d in dataset.documents
    ]
    return dataset.with_documents(docs, debias={"method": "rw"})


# -- composition --------------------------------------------------------------------


def _resample(dataset: Dataset, method: Method, seed: int) -> Dataset:
    return oversample(dataset, seed) if method in (Method.OS, Method.OS_CDA) else undersample(dataset, seed)


def compose(dataset: Dataset, plan: DebiasPlan, lexicon: GenderLexicon | None = None) -> Dataset:
    lexicon = lexicon or default_lexicon()
    method = plan.method
    if not method.is_composed:
        raise DebiasError(f"{method.value} is not a composed method")

    if method in (Method.OS_CDA, Method.US_CDA):
        if plan.composition_order is CompositionOrder.RESAMPLE_THEN_CDA:
            out = augment_cda(_resample(dataset, method, plan.seed), lexicon)
        else:
            augmented = augment_cda(dataset, lexicon)
            originals = augmented.with_documents(d for d in augmented.documents if not d.is_counterfactual)
            cfs = augmented.with_documents(d for d in augmented.documents if d.is_counterfactual)
            # counterfactuals balance on their own (flipped) gender tag
            r_orig = _resample(originals, method, plan.seed)
            r_cf = _resample(cfs, method, plan.seed + 1)
            out = dataset.with_documents(list(r_orig.documents) + list(r_cf.documents))
        return out.with_documents(out.documents, debias={"plan": plan.name, "seed": plan.seed})

    table = reweight_table(dataset)
    weighted = reweight(dataset)
    by_id = weighted.by_id()
    docs = list(weighted.documents)
    for cf in augment_cda(dataset, lexicon).documents[len(dataset) :]:
        if plan.cf_weight_strategy is CfWeight.SAME_AS_ORIGINAL:
            weight = by_id[cf.source_id].weight
        elif plan.cf_weight_strategy is CfWeight.COUNTERFACTUAL_GENDER:
            weight = table[(cf.gender, cf.label)]
        else:
            weight = 1.0
        docs.append(replace(cf, weight=weight))
    return dataset.with_documents(docs, debias={"plan": plan.name})


def apply_plan(dataset: Dataset, plan: DebiasPlan, lexicon: GenderLexicon | None = None) -> Dataset:
    method = plan.method
    if method is Method.NONE:
        return dataset
    if method is Method.OS:
        return oversample(dataset, plan.seed)
    if method is Method.US:
        return undersample(dataset, plan.seed)
    if method is Method.RW:
        return reweight(dataset)
    if method is Method.CDA:
        return augment_cda(dataset, lexicon or default_lexicon())
    return compose(dataset, plan, lexicon)
