"""Bag-of-words multinomial logistic regression with gender-token weight surgery."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import softmax

from fairgap.corpus import Dataset, Document, Gender
from fairgap.metrics import Prediction
from fairgap.perturb import GenderLexicon, _split_clitic, default_lexicon, tokenize

MODEL_FORMAT = "fairgap-bow"
MODEL_VERSION = 1


class TrainingError(RuntimeError):
    pass


def terms(text: str) -> list[str]:
    """Lowercased feature terms; a trailing clitic becomes its own term ("she's" -> "she", "'s")."""
    out = []
    for tok, _ in tokenize(text):
        stem, clitic = _split_clitic(tok.replace("’", "'"))
        out.append(stem.lower())
        if clitic:
            out.append(clitic.lower())
    return out


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    min_frequency: int = 1
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        index = {t: i for i, t in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        object.__setattr__(self, "index", index)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index


def build_vocab(dataset: Dataset | Iterable[Document], min_frequency: int = 1) -> Vocabulary:
    docs = dataset.documents if isinstance(dataset, Dataset) else tuple(dataset)
    if not docs:
        raise ValueError("cannot build a vocabulary from an empty dataset")
    counts: Counter[str] = Counter()
    order: dict[str, None] = {}
    for doc in docs:
        for t in terms(doc.text):
            counts[t] += 1
            order.setdefault(t, None)
    tokens = tuple(t for t in order if counts[t] >= min_frequency)
    if not tokens:
        raise ValueError(f"no token reaches min_frequency={min_frequency}")
    return Vocabulary(tokens, min_frequency)


def featurize(text: str, vocab: Vocabulary) -> dict[int, int]:
    """Sparse term counts over ``vocab``; out-of-vocabulary terms are dropped."""
    out: dict[int, int] = {}
    for t in terms(text):
        j = vocab.index.get(t)
        if j is not None:
            out[j] = out.get(j, 0) + 1
    return out


def featurize_matrix(texts: Sequence[str], vocab: Vocabulary) -> sp.csr_matrix:
    indptr, indices, data = [0], [], []
    for text in texts:
        counts = featurize(text, vocab)
        for j in sorted(counts):
            indices.append(j)
            data.append(float(counts[j]))
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.array(data, dtype=float), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(texts), len(vocab)),
    )


@dataclass(frozen=True)
class TrainConfig:
    l2: float = 1e-3
    max_iters: int = 5000
    tolerance: float = 1e-8
    seed: int = 0
    init: str = "zeros"

    def __post_init__(self):
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")
        if self.init != "zeros":
            raise ValueError(f"unsupported init {self.init!r}")


@dataclass(frozen=True)
class BowModel:
    vocab: Vocabulary
    W: np.ndarray
    b: np.ndarray
    classes: tuple[str, ...]
    meta: dict[str, Any] = field(default_factory=dict, compare=False)
    concurrent_predict_safe: bool = True

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        b = np.array(self.b, dtype=float)
        if W.shape != (len(self.classes), len(self.vocab)):
            raise ValueError(f"W has shape {W.shape}, expected {(len(self.classes), len(self.vocab))}")
        if b.shape != (len(self.classes),):
            raise ValueError(f"b has shape {b.shape}, expected {(len(self.classes),)}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("model parameters must be finite")
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "classes", tuple(self.classes))

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def logits(self, texts: Sequence[str]) -> np.ndarray:
        X = featurize_matrix(texts, self.vocab)
        return np.asarray(X @ self.W.T) + self.b

    def predict_proba(self, texts: Sequence[str]) -> np.ndarray:
        if len(texts) == 0:
            return np.zeros((0, self.num_classes))
        return softmax(self.logits(texts), axis=1)

    def predict(self, doc: Document | str) -> Prediction:
        text = doc if isinstance(doc, str) else doc.text
        scores = self.predict_proba([text])[0]
        return Prediction(
            doc_id="" if isinstance(doc, str) else doc.id,
            predicted_class=int(np.argmax(scores)),
            scores=tuple(float(s) for s in scores),
        )


# -- training -----------------------------------------------------------------


def objective(
    W: np.ndarray,
    b: np.ndarray,
    X: sp.csr_matrix | np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    l2: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted multinomial cross-entropy plus ``l2/2 * ||W||^2``, with its gradient."""
    Z = np.asarray(X @ W.T) + b
    zmax = Z.max(axis=1, keepdims=True)
    E = np.exp(Z - zmax)
    S = E.sum(axis=1, keepdims=True)
    rows = np.arange(len(y))
    nll = (zmax[:, 0] + np.log(S[:, 0])) - Z[rows, y]
    loss = float(weights @ nll) + 0.5 * l2 * float(np.sum(W * W))
    R = E / S
    R[rows, y] -= 1.0
    R *= weights[:, None]
    gW = np.asarray(X.T @ R).T + l2 * W
    gb = R.sum(axis=0)
    return loss, gW, gb


def _training_arrays(dataset: Dataset, vocab: Vocabulary):
    X = featurize_matrix([d.text for d in dataset.documents], vocab)
    y = np.array([d.label for d in dataset.documents], dtype=np.int64)
    weights = np.array([d.weight for d in dataset.documents], dtype=float)
    return X, y, weights


_NONMONOTONE_WINDOW = 10


def train(dataset: Dataset, vocab: Vocabulary, config: TrainConfig | None = None) -> BowModel:
    """Full-batch gradient descent with Armijo backtracking from a zero start.

    The trial step each iteration is the Barzilai-Borwein step of the last
    two iterates (the first trial is 1); it is halved until the sufficient
    decrease condition holds against the largest of the last few losses.
    Stops when the gradient max-norm, divided by the total document weight,
    drops below ``config.tolerance``, or after ``config.max_iters`` iterations.
    """
    config = config or TrainConfig()
    C = dataset.num_classes
    counts = np.bincount([d.label for d in dataset.documents], minlength=C)
    empty = [dataset.class_names[c] for c in range(C) if counts[c] == 0]
    if empty:
        raise TrainingError(f"classes without training documents: {empty}")
    X, y, weights = _training_arrays(dataset, vocab)
    V = len(vocab)

    theta = np.zeros(C * V + C)
    # the loss sums over documents, so the gradient scales with total weight
    grad_scale = max(1.0, float(weights.sum()))

    def f(th):
        loss, gW, gb = objective(th[: C * V].reshape(C, V), th[C * V :], X, y, weights, config.l2)
        return loss, np.concatenate([gW.ravel(), gb])

    loss, grad = f(theta)
    recent = [loss]
    step = 1.0
    prev_theta = prev_grad = None
    iterations = 0
    converged = float(np.max(np.abs(grad))) < config.tolerance * grad_scale
    while not converged and iterations < config.max_iters:
        if prev_theta is not None:
            s, r = theta - prev_theta, grad - prev_grad
            sr = float(np.dot(s, r))
            if sr > 0:
                step = float(np.dot(s, s)) / sr
        gg = float(np.dot(grad, grad))
        while True:
            cand = theta - step * grad
            cand_loss, cand_grad = f(cand)
            if not math.isfinite(cand_loss):
                if step < 1e-30:
                    raise TrainingError(f"non-finite loss at iteration {iterations}, step {step:g}")
                step *= 0.5
                continue
            if cand_loss <= max(recent) - 1e-4 * step * gg:
                break
            step *= 0.5
            if step < 1e-30:
                break
        if step < 1e-30:
            # no representable decrease left
            break
        prev_theta, prev_grad = theta, grad
        theta, loss, grad = cand, cand_loss, cand_grad
        recent = (recent + [loss])[-_NONMONOTONE_WINDOW:]
        iterations += 1
        converged = float(np.max(np.abs(grad))) < config.tolerance * grad_scale
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite final loss after {iterations} iterations")

    meta = {
        "l2": config.l2,
        "max_iters": config.max_iters,
        "tolerance": config.tolerance,
        "seed": config.seed,
        "init": config.init,
        "iterations": iterations,
        "final_loss": loss,
        "grad_max_norm": float(np.max(np.abs(grad))),
        "converged": converged,
        "num_train_docs": len(dataset),
    }
    return BowModel(vocab, theta[: C * V].reshape(C, V), theta[C * V :], dataset.class_names, meta)


# -- gender-token weight surgery -------------------------------------------------------


class Which(str, Enum):
    FEMALE = "female"
    MALE = "male"
    BOTH = "both"


def gender_columns(vocab: Vocabulary, lexicon: GenderLexicon, which: Which | str) -> list[int]:
    which = Which(which)
    genders = {
        Which.FEMALE: (Gender.FEMALE,),
        Which.MALE: (Gender.MALE,),
        Which.BOTH: (Gender.FEMALE, Gender.MALE),
    }[which]
    tokens = set().union(*(lexicon.indicator_sets[g] for g in genders))
    return sorted(vocab.index[t] for t in tokens if t in vocab.index)


def adjust_gender_weights(
    model: BowModel, w: float, which: Which | str = Which.BOTH, lexicon: GenderLexicon | None = None
) -> BowModel:
    """Copy of ``model`` with the selected gender's indicator columns of W multiplied by ``w``."""
    lexicon = lexicon or default_lexicon()
    which = Which(which)
    W = np.array(model.W)
    cols = gender_columns(model.vocab, lexicon, which)
    W[:, cols] *= w
    meta = dict(model.meta)
    meta["adjustments"] = list(meta.get("adjustments", [])) + [{"w": w, "which": which.value}]
    return replace(model, W=W, meta=meta)


def gender_weight_summary(
    model: BowModel, dataset: Dataset, lexicon: GenderLexicon | None = None
) -> dict[tuple[int, Gender], float]:
    """Per (class, gender): sum of that gender's token weights for the class, times token frequency in the class's documents."""
    lexicon = lexicon or default_lexicon()
    freq = np.zeros((model.num_classes, len(model.vocab)))
    for doc in dataset.documents:
        for j, c in featurize(doc.text, model.vocab).items():
            freq[doc.label, j] += c
    out = {}
    for y in range(model.num_classes):
        for g, which in ((Gender.FEMALE, Which.FEMALE), (Gender.MALE, Which.MALE)):
            cols = gender_columns(model.vocab, lexicon, which)
            out[(y, g)] = float(np.dot(model.W[y, cols], freq[y, cols])) if cols else 0.0
    return out


# -- serialization ------------------------------------------------------------------


def model_to_json_dict(model: BowModel) -> dict[str, Any]:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "classes": list(model.classes),
        "vocab": list(model.vocab.tokens),
        "min_frequency": model.vocab.min_frequency,
        "W": [float(v) for v in model.W.ravel()],
        "b": [float(v) for v in model.b],
        "meta": model.meta,
    }


def model_from_json_dict(doc: dict[str, Any]) -> BowModel:
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a {MODEL_FORMAT} model file")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')}")
    vocab = Vocabulary(tuple(doc["vocab"]), int(doc.get("min_frequency", 1)))
    C, V = len(doc["classes"]), len(vocab)
    W = np.array(doc["W"], dtype=float)
    if W.size != C * V:
        raise ValueError(f"W has {W.size} entries, expected {C * V}")
    return BowModel(vocab, W.reshape(C, V), np.array(doc["b"], dtype=float), tuple(doc["classes"]), doc.get("meta", {}))


def save_model(model: BowModel, path: str | Path) -> None:
    from fairgap._io import atomic_write_text

    atomic_write_text(path, json.dumps(model_to_json_dict(model), indent=1, sort_keys=True) + "\n")


def load_model(path: str | Path) -> BowModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_json_dict(json.load(fh))
