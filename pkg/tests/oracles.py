"""Brute-force reference implementations used to check the metrics module.

Everything here is exact rational arithmetic over explicit enumeration, and
the model is queried one text at a time, so it shares no code path with the
vectorised implementation beyond the perturbation rules themselves.
"""

from fractions import Fraction
import hashlib
import math

import numpy as np

from fairgap.corpus import Gender
from fairgap.perturb import perturb


def first_argmax(scores):
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best]:
            best = i
    return best


def oracle_predict(model, text):
    scores = list(model.predict_proba([text])[0])
    return first_argmax(scores), scores


def _rate(pairs, target):
    hits = sum(1 for _, yhat in pairs if yhat == target)
    return Fraction(hits, len(pairs))


def statistical_gap(docs, yhat, rate, target):
    female, male = [], []
    for d in docs:
        if d.gender is Gender.UNKNOWN:
            continue
        if rate == "tpr" and d.label != target:
            continue
        if rate == "fpr" and d.label == target:
            continue
        (female if d.gender is Gender.FEMALE else male).append((d, yhat[d.id]))
    if not female or not male:
        return None
    return _rate(female, target) - _rate(male, target)


def causal_gap(docs, model, lexicon, rate, target):
    total = Fraction(0)
    n = 0
    for d in docs:
        if d.gender is Gender.UNKNOWN:
            continue
        if rate == "tpr" and d.label != target:
            continue
        if rate == "fpr" and d.label == target:
            continue
        as_female = oracle_predict(model, perturb(d.text, Gender.FEMALE, lexicon)[0])[0]
        as_male = oracle_predict(model, perturb(d.text, Gender.MALE, lexicon)[0])[0]
        total += int(as_female == target) - int(as_male == target)
        n += 1
    if n == 0:
        return None
    return total / n


def rms(values):
    return math.sqrt(sum(Fraction(v) ** 2 for v in values) / len(values))


def accuracy(docs, yhat):
    return Fraction(sum(1 for d in docs if yhat[d.id] == d.label), len(docs))


def auc(docs, scores, positive):
    pos = [scores[d.id][positive] for d in docs if d.label == positive]
    neg = [scores[d.id][positive] for d in docs if d.label != positive]
    if not pos or not neg:
        return None
    won = Fraction(0)
    for p in pos:
        for q in neg:
            won += 1 if p > q else Fraction(1, 2) if p == q else 0
    return won / (len(pos) * len(neg))


class HashClassifier:
    """Deterministic pseudo-random classifier keyed on the exact text.

    Scores are quantised to tenths before normalising, so ties (both in
    argmax and in AUC ranking) occur regularly.
    """

    concurrent_predict_safe = True

    def __init__(self, num_classes, salt=""):
        self.num_classes = num_classes
        self.salt = salt

    def predict_proba(self, texts):
        out = np.zeros((len(texts), self.num_classes))
        for i, t in enumerate(texts):
            h = hashlib.sha256((self.salt + "|" + t).encode()).digest()
            raw = np.array([1 + h[k] % 4 for k in range(self.num_classes)], dtype=float)
            out[i] = raw / raw.sum()
        return out
