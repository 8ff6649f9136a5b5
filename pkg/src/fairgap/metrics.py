"""Statistical and causal gender-gap metrics, aggregation and bias reports.

Every gap is signed female minus male: a positive value means the event
(positive prediction, true positive, false positive) happens more often for
female inputs. Statistical gaps compare observed groups; causal gaps compare
the predictions on the two gender interventions of the same text.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Mapping, Protocol, Sequence

import numpy as np
from scipy.stats import rankdata

from fairgap.corpus import Dataset, Document, Gender
from fairgap.perturb import GenderLexicon, default_lexicon, perturb

REPORT_SCHEMA_VERSION = 1
DEFAULT_CONFIDENCE_BUCKETS = ((0.5, 0.85), (0.85, 0.95), (0.95, 1.0))


class GapKind(str, Enum):
    SG_PPR = "sg_ppr"
    SG_TPR = "sg_tpr"
    SG_FPR = "sg_fpr"
    CG_PPR = "cg_ppr"
    CG_TPR = "cg_tpr"
    CG_FPR = "cg_fpr"

    @property
    def is_causal(self) -> bool:
        return self.value.startswith("cg")

    @property
    def rate(self) -> str:
        return self.value[3:]


PER_CLASS_KINDS = (GapKind.SG_TPR, GapKind.CG_TPR, GapKind.SG_FPR, GapKind.CG_FPR)
PPR_KINDS = (GapKind.SG_PPR, GapKind.CG_PPR)
ALL_KINDS = (GapKind.SG_PPR, GapKind.CG_PPR, GapKind.SG_TPR, GapKind.CG_TPR, GapKind.SG_FPR, GapKind.CG_FPR)


class EmptyGroupError(ValueError):
    pass


@dataclass(frozen=True)
class Prediction:
    doc_id: str
    predicted_class: int
    scores: tuple[float, ...] | None = None


@dataclass(frozen=True)
class GapScore:
    kind: GapKind
    value: float | None
    cls: int | None
    support: tuple[int, int]
    reason: str | None = None

    @property
    def missing(self) -> bool:
        return self.value is None


class Classifier(Protocol):
    concurrent_predict_safe: bool

    def predict_proba(self, texts: Sequence[str]) -> np.ndarray: ...


class FunctionClassifier:
    """Wrap a ``text -> class`` function as a classifier with one-hot scores."""

    concurrent_predict_safe = True

    def __init__(self, fn: Callable[[str], int], num_classes: int):
        self.fn = fn
        self.num_classes = num_classes

    def predict_proba(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.num_classes))
        for i, t in enumerate(texts):
            out[i, self.fn(t)] = 1.0
        return out


def predict_proba(model: Classifier, texts: Sequence[str], workers: int = 1) -> np.ndarray:
    texts = list(texts)
    if workers > 1 and getattr(model, "concurrent_predict_safe", False) and len(texts) > workers:
        bounds = np.linspace(0, len(texts), workers + 1).astype(int)
        chunks = [texts[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(model.predict_proba, chunks))
        return np.vstack(parts)
    return np.asarray(model.predict_proba(texts), dtype=float)


def predict(model: Classifier, dataset: Dataset, workers: int = 1) -> list[Prediction]:
    scores = predict_proba(model, [d.text for d in dataset.documents], workers)
    classes = np.argmax(scores, axis=1) if len(scores) else np.zeros(0, dtype=int)
    return [
        Prediction(d.id, int(c), tuple(float(s) for s in row))
        for d, c, row in zip(dataset.documents, classes, scores)
    ]


# -- statistical gaps -----------------------------------------------------------


def _predicted(preds: Sequence[Prediction]) -> dict[str, int]:
    return {p.doc_id: p.predicted_class for p in preds}


def _group_rate(pairs: list[tuple[Document, int]], event: Callable[[int], bool]) -> float:
    return sum(1 for _, yhat in pairs if event(yhat)) / len(pairs)


def _split_by_gender(
    preds: Sequence[Prediction], dataset: Dataset, population: Callable[[Document], bool]
) -> tuple[list, list]:
    yhat = _predicted(preds)
    female, male = [], []
    for doc in dataset.documents:
        if not doc.gender.is_binary or not population(doc):
            continue
        if doc.id not in yhat:
            raise KeyError(f"no prediction for document {doc.id!r}")
        (female if doc.gender is Gender.FEMALE else male).append((doc, yhat[doc.id]))
    return female, male


def statistical_ppr_gap(
    preds: Sequence[Prediction], dataset: Dataset, positive_class: int = 1
) -> GapScore:
    female, male = _split_by_gender(preds, dataset, lambda d: True)
    for name, group in (("female", female), ("male", male)):
        if not group:
            raise EmptyGroupError(f"empty group: {name}")
    is_pos = lambda c: c == positive_class  # noqa: E731
    value = _group_rate(female, is_pos) - _group_rate(male, is_pos)
    return GapScore(GapKind.SG_PPR, value, positive_class, (len(female), len(male)))


def _conditional_gap(
    kind: GapKind, preds: Sequence[Prediction], dataset: Dataset, y: int, population
) -> GapScore:
    female, male = _split_by_gender(preds, dataset, population)
    support = (len(female), len(male))
    empty = [name for name, group in (("female", female), ("male", male)) if not group]
    if empty:
        return GapScore(kind, None, y, support, f"no {' or '.join(empty)} documents in population")
    hit = lambda c: c == y  # noqa: E731
    return GapScore(kind, _group_rate(female, hit) - _group_rate(male, hit), y, support)


def statistical_tpr_gap(preds: Sequence[Prediction], dataset: Dataset, y: int) -> GapScore:
    return _conditional_gap(GapKind.SG_TPR, preds, dataset, y, lambda d: d.label == y)


def statistical_fpr_gap(preds: Sequence[Prediction], dataset: Dataset, y: int) -> GapScore:
    return _conditional_gap(GapKind.SG_FPR, preds, dataset, y, lambda d: d.label != y)


# -- causal gaps -------------------------------------------------------------------


@dataclass(frozen=True)
class InterventionPredictions:
    """Predicted classes for the female and male intervention of each document."""

    documents: tuple[Document, ...]
    female: np.ndarray
    male: np.ndarray


def intervention_predictions(
    model: Classifier,
    documents: Sequence[Document],
    lexicon: GenderLexicon | None = None,
    workers: int = 1,
) -> InterventionPredictions:
    lexicon = lexicon or default_lexicon()
    for doc in documents:
        if not doc.gender.is_binary:
            raise ValueError(f"document {doc.id!r} has unknown gender; causal gaps need gendered documents")
    f_texts = [perturb(d.text, Gender.FEMALE, lexicon)[0] for d in documents]
    m_texts = [perturb(d.text, Gender.MALE, lexicon)[0] for d in documents]
    both = predict_proba(model, f_texts + m_texts, workers)
    classes = np.argmax(both, axis=1) if len(both) else np.zeros(0, dtype=int)
    n = len(documents)
    return InterventionPredictions(tuple(documents), classes[:n], classes[n:])


def _causal_from(
    ip: InterventionPredictions, kind: GapKind, target: int
) -> GapScore:
    if kind.rate == "ppr":
        mask = np.ones(len(ip.documents), dtype=bool)
    else:
        labels = np.array([d.label for d in ip.documents], dtype=int)
        mask = labels == target if kind.rate == "tpr" else labels != target
    n = int(mask.sum())
    if n == 0:
        return GapScore(kind, None, target, (0, 0), "empty population")
    diff = (ip.female[mask] == target).astype(np.int64) - (ip.male[mask] == target).astype(np.int64)
    return GapScore(kind, float(diff.sum()) / n, target, (n, n))


def causal_gap(
    model: Classifier,
    dataset: Dataset,
    lexicon: GenderLexicon | None,
    kind: GapKind | str,
    target_class: int,
    workers: int = 1,
) -> GapScore:
    """Average difference in the event indicator between the two interventions.

    ``kind`` (a :class:`GapKind` or a bare rate name such as ``"tpr"``) selects the population and event: PPR uses every document and
    the event "predicted ``target_class``"; TPR restricts to documents labeled
    ``target_class``; FPR to documents with any other label. The result is
    signed (female intervention minus male intervention).
    """
    rate = kind if kind in ("ppr", "tpr", "fpr") else GapKind(kind).rate
    kind = GapKind("cg_" + rate)
    ip = intervention_predictions(model, dataset.documents, lexicon, workers)
    return _causal_from(ip, kind, target_class)


# -- aggregation and overall performance ------------------------------------------------


def rms(values: Sequence[float]) -> float:
    if len(values) == 0:
        raise ValueError("rms of an empty list")
    return math.sqrt(sum(v * v for v in values) / len(values))


def accuracy(preds: Sequence[Prediction], dataset: Dataset) -> float:
    """Fraction correct over all documents, Unknown gender included."""
    if not len(dataset):
        raise ValueError("accuracy of an empty dataset")
    yhat = _predicted(preds)
    return sum(1 for d in dataset.documents if yhat[d.id] == d.label) / len(dataset)


def auc(preds: Sequence[Prediction], dataset: Dataset, positive_class: int = 1) -> float:
    """Rank-sum AUC; tied scores count one half."""
    if dataset.num_classes != 2:
        raise ValueError("auc needs a binary task")
    by_id = {p.doc_id: p for p in preds}
    scores, is_pos = [], []
    for doc in dataset.documents:
        p = by_id[doc.id]
        if p.scores is None:
            raise ValueError(f"prediction for {doc.id!r} carries no scores")
        scores.append(p.scores[positive_class])
        is_pos.append(doc.label == positive_class)
    is_pos = np.array(is_pos, dtype=bool)
    n_pos, n_neg = int(is_pos.sum()), int((~is_pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs at least one positive and one negative document")
    ranks = rankdata(scores)
    return float((ranks[is_pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


# -- reports ---------------------------------------------------------------------------


@dataclass
class ReportOptions:
    positive_class: int | None = None
    confidence_buckets: Sequence[tuple[float, float]] | None = None
    workers: int = 1
    metadata: Mapping[str, Any] = field(default_factory=dict)


@dataclass
class BiasReport:
    class_names: tuple[str, ...]
    gaps: dict[GapKind, list[GapScore]]
    rms: dict[GapKind, float | None]
    accuracy: float
    auc: float | None = None
    buckets: dict[str, dict[str, Any]] | None = None
    metadata: dict[str, Any] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def missing(self) -> list[GapScore]:
        return [g for scores in self.gaps.values() for g in scores if g.missing]

    @property
    def has_missing(self) -> bool:
        return bool(self.missing()) or any(v is None for v in self.rms.values())

    def to_json_dict(self) -> dict[str, Any]:
        def gap_json(g: GapScore) -> dict[str, Any]:
            out = {
                "class": g.cls,
                "class_name": self.class_names[g.cls] if g.cls is not None else None,
                "value": g.value,
                "support_f": g.support[0],
                "support_m": g.support[1],
            }
            if g.missing:
                out["missing"] = True
                out["reason"] = g.reason
            return out

        doc: dict[str, Any] = {"schema_version": REPORT_SCHEMA_VERSION, "class_names": list(self.class_names)}
        for kind in ALL_KINDS:
            scores = self.gaps.get(kind)
            if scores is None:
                doc[kind.value] = None
            elif kind in PPR_KINDS:
                doc[kind.value] = gap_json(scores[0])
            else:
                doc[kind.value] = [gap_json(g) for g in scores]
        doc["rms"] = {k.value: v for k, v in self.rms.items()}
        doc["accuracy"] = self.accuracy
        doc["auc"] = self.auc
        if self.buckets is None:
            doc["buckets"] = None
        else:
            doc["buckets"] = {
                name: {
                    "range": b["range"],
                    "count": b["count"],
                    **{k: (gap_json(v) if isinstance(v, GapScore) else v) for k, v in b["gaps"].items()},
                }
                for name, b in self.buckets.items()
            }
        doc["missing"] = [
            {"metric": g.kind.value, "class": g.cls, "reason": g.reason} for g in self.missing()
        ]
        doc["notes"] = list(self.notes)
        doc["metadata"] = dict(self.metadata)
        return doc

    def csv_rows(self) -> list[dict[str, Any]]:
        rows = []
        for kind in ALL_KINDS:
            for g in self.gaps.get(kind, []):
                rows.append(
                    {
                        "metric": kind.value,
                        "class": self.class_names[g.cls] if g.cls is not None else "",
                        "value": g.value,
                        "support_f": g.support[0],
                        "support_m": g.support[1],
                    }
                )
        for kind, value in self.rms.items():
            rows.append({"metric": f"rms_{kind.value}", "class": "", "value": value, "support_f": "", "support_m": ""})
        rows.append({"metric": "accuracy", "class": "", "value": self.accuracy, "support_f": "", "support_m": ""})
        if self.auc is not None:
            rows.append({"metric": "auc", "class": "", "value": self.auc, "support_f": "", "support_m": ""})
        return rows

    def to_csv(self) -> str:
        return rows_to_csv(self.csv_rows(), ["metric", "class", "value", "support_f", "support_m"])


def format_value(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: Sequence[Mapping[str, Any]], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row.get(c)) for c in columns])
    return buf.getvalue()


def _bucket_name(lo: float, hi: float, last: bool) -> str:
    return f"[{lo:g}, {hi:g}{']' if last else ')'}"


def _safe(fn: Callable[[], GapScore], kind: GapKind, cls: int | None) -> GapScore:
    try:
        return fn()
    except (EmptyGroupError, ValueError) as exc:
        return GapScore(kind, None, cls, (0, 0), str(exc))


def bias_report(
    model: Classifier,
    dataset: Dataset,
    lexicon: GenderLexicon | None = None,
    options: ReportOptions | None = None,
) -> BiasReport:
    """Audit ``model`` on ``dataset``: every gap kind per class, RMS, accuracy and AUC.

    Undefined gaps are kept as missing values with a reason; they never abort
    the report and are excluded from the RMS.
    """
    if not len(dataset):
        raise ValueError("cannot audit an empty dataset")
    options = options or ReportOptions()
    lexicon = lexicon or default_lexicon()
    preds = predict(model, dataset, options.workers)
    gendered = dataset.gendered()
    ip = intervention_predictions(model, gendered.documents, lexicon, options.workers)

    gaps: dict[GapKind, list[GapScore]] = {}
    pc = options.positive_class
    if pc is not None:
        gaps[GapKind.SG_PPR] = [_safe(lambda: statistical_ppr_gap(preds, dataset, pc), GapKind.SG_PPR, pc)]
        gaps[GapKind.CG_PPR] = [_causal_from(ip, GapKind.CG_PPR, pc)]
    classes = range(dataset.num_classes)
    gaps[GapKind.SG_TPR] = [statistical_tpr_gap(preds, dataset, y) for y in classes]
    gaps[GapKind.CG_TPR] = [_causal_from(ip, GapKind.CG_TPR, y) for y in classes]
    gaps[GapKind.SG_FPR] = [statistical_fpr_gap(preds, dataset, y) for y in classes]
    gaps[GapKind.CG_FPR] = [_causal_from(ip, GapKind.CG_FPR, y) for y in classes]

    rms_by_kind: dict[GapKind, float | None] = {}
    for kind in ALL_KINDS:
        if kind not in gaps:
            continue
        values = [g.value for g in gaps[kind] if g.value is not None]
        rms_by_kind[kind] = rms(values) if values else None

    notes = []
    auc_value = None
    if dataset.num_classes == 2:
        try:
            auc_value = auc(preds, dataset, 1 if pc is None else pc)
        except ValueError as exc:
            notes.append(f"auc not computed: {exc}")

    buckets = None
    if options.confidence_buckets is not None:
        buckets = {}
        position = {d.id: i for i, d in enumerate(gendered.documents)}
        edges = list(options.confidence_buckets)
        for i, (lo, hi) in enumerate(edges):
            last = i == len(edges) - 1
            members = [
                d for d in gendered.documents
                if lo <= d.gender_confidence and (d.gender_confidence <= hi if last else d.gender_confidence < hi)
            ]
            sub = gendered.with_documents(members)
            entry: dict[str, Any] = {"range": [lo, hi], "count": len(members), "gaps": {}}
            if pc is None:
                entry["gaps"]["reason"] = "positive_class not set"
            else:
                entry["gaps"]["sg_ppr"] = _safe(lambda: statistical_ppr_gap(preds, sub, pc), GapKind.SG_PPR, pc)
                rows = np.array([position[d.id] for d in members], dtype=int)
                sub_ip = InterventionPredictions(sub.documents, ip.female[rows], ip.male[rows])
                entry["gaps"]["cg_ppr"] = _causal_from(sub_ip, GapKind.CG_PPR, pc)
            buckets[_bucket_name(lo, hi, last)] = entry

    return BiasReport(
        class_names=dataset.class_names,
        gaps=gaps,
        rms=rms_by_kind,
        accuracy=accuracy(preds, dataset),
        auc=auc_value,
        buckets=buckets,
        metadata=dict(options.metadata),
        notes=notes,
    )
