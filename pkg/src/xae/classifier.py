"""Fully connected classifier heads over frozen XAE features.

With no hidden layers the head is multinomial logistic regression (a
softmax classifier); otherwise hidden layers use sigmoid units.
"""

from __future__ import annotations

import base64
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .metrics import EvalReport, evaluate_scores
from .model import XaeModel, encode, sigmoid
from .trainer import TrainConfig


class ClassifierError(ValueError):
    pass


@dataclass
class FcnModel:
    widths: list[int]  # input, hidden..., output
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    classes: list[int]
    label_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.widths) < 2 or len(self.weights) != len(self.widths) - 1:
            raise ClassifierError("layer widths and weight count disagree")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.widths[k], self.widths[k + 1]) or b.shape != (self.widths[k + 1],):
                raise ClassifierError(f"layer {k} has inconsistent shapes")
        if self.widths[-1] != len(self.classes):
            raise ClassifierError("output width must equal the number of classes")

    @property
    def is_softmax(self) -> bool:
        return len(self.widths) == 2

    def class_index(self, label: int) -> int:
        try:
            return self.classes.index(int(label))
        except ValueError:
            raise ClassifierError(f"class {label} unknown to the classifier") from None


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def extract_features(xae: XaeModel, x) -> np.ndarray:
    """Full hidden activation vector (every segment, no masking)."""
    return encode(xae, x).values


def _forward(clf: FcnModel, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    last = len(clf.weights) - 1
    for k, (w, b) in enumerate(zip(clf.weights, clf.biases)):
        pre = acts[-1] @ w + b
        acts.append(softmax(pre) if k == last else sigmoid(pre))
    return acts


def predict_proba(clf: FcnModel, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != clf.widths[0]:
        raise ClassifierError(f"expected {clf.widths[0]} features, got {x.shape[1]}")
    p = _forward(clf, x)[-1]
    return p[0] if single else p


def predict(clf: FcnModel, features) -> np.ndarray:
    return np.asarray(clf.classes)[np.argmax(np.atleast_2d(predict_proba(clf, features)), axis=1)]


def init_classifier(widths: Sequence[int], classes: Sequence[int], seed: int = 0, label_names=None) -> FcnModel:
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        r = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-r, r, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return FcnModel(list(widths), weights, biases, [int(c) for c in classes], dict(label_names or {}))


def cross_entropy(clf: FcnModel, x, y_index) -> float:
    p = _forward(clf, np.atleast_2d(x))[-1]
    return float(-np.mean(np.log(np.maximum(p[np.arange(len(p)), y_index], 1e-300))))


def _backward(clf: FcnModel, x: np.ndarray, y_index: np.ndarray):
    acts = _forward(clf, x)
    n = len(x)
    delta = acts[-1].copy()
    delta[np.arange(n), y_index] -= 1.0
    delta /= n
    gw, gb = [None] * len(clf.weights), [None] * len(clf.weights)
    for k in range(len(clf.weights) - 1, -1, -1):
        gw[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ clf.weights[k].T) * acts[k] * (1.0 - acts[k])
    return gw, gb


def train_classifier(features, labels, hidden: Sequence[int] = (), cfg: TrainConfig | None = None,
                     classes: Sequence[int] | None = None, label_names=None) -> FcnModel:
    """Minibatch gradient descent on mean cross-entropy."""
    cfg = cfg or TrainConfig(learning_rate=0.5, epochs=100, batch_size=32)
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    classes = sorted(set(y.tolist())) if classes is None else [int(c) for c in classes]
    if len(classes) < 2:
        raise ClassifierError("need at least two classes to train a classifier")
    for c in classes:
        if not np.any(y == c):
            raise ClassifierError(f"class {c} has no training samples")
    y_index = np.searchsorted(np.asarray(classes), y)
    clf = init_classifier([x.shape[1], *hidden, len(classes)], classes, cfg.seed, label_names)
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(x))
        for s in range(0, len(x), cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            gw, gb = _backward(clf, x[idx], y_index[idx])
            for k in range(len(clf.weights)):
                clf.weights[k] -= cfg.learning_rate * gw[k]
                clf.biases[k] -= cfg.learning_rate * gb[k]
    return clf


def evaluate(clf: FcnModel, features, labels, positive_class=None) -> EvalReport:
    proba = np.atleast_2d(predict_proba(clf, features))
    rep = evaluate_scores(labels, proba, clf.classes, positive_class, clf.label_names)
    return rep


# -- classifier file ---------------------------------------------------------

def _b64(a) -> str:
    return base64.b64encode(np.asarray(a, dtype="<f8").tobytes(order="C")).decode("ascii")


def save_classifier(clf: FcnModel, path) -> None:
    d = {
        "format": "xae-classifier",
        "format_version": 1,
        "widths": clf.widths,
        "classes": clf.classes,
        "label_names": {str(k): v for k, v in sorted(clf.label_names.items())},
        "weights": [_b64(w) for w in clf.weights],
        "biases": [_b64(b) for b in clf.biases],
    }
    Path(path).write_text(json.dumps(d, indent=1, sort_keys=True) + "\n")


def load_classifier(path) -> FcnModel:
    d = json.loads(Path(path).read_text())
    if d.get("format") != "xae-classifier":
        raise ClassifierError(f"{path}: not a classifier file")
    widths = [int(w) for w in d["widths"]]

    def arr(text, shape):
        return np.frombuffer(base64.b64decode(text), dtype="<f8").reshape(shape).copy()

    weights = [arr(t, (widths[k], widths[k + 1])) for k, t in enumerate(d["weights"])]
    biases = [arr(t, (widths[k + 1],)) for k, t in enumerate(d["biases"])]
    names = {int(k): v for k, v in d.get("label_names", {}).items()}
    return FcnModel(widths, weights, biases, [int(c) for c in d["classes"]], names)


# -- cross-validation ----------------------------------------------------------

def stratified_folds(labels, k: int, seed: int = 0, stratified: bool = True) -> list[np.ndarray]:
    """Split record indices into ``k`` folds.

    Stratified: records are shuffled within each class, classes are laid end
    to end, and position p goes to fold p mod k. Fold sizes then differ by at
    most one and every fold holds each class to within one record.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ClassifierError("k must be >= 2")
    if len(labels) < k:
        raise ClassifierError(f"dataset of {len(labels)} records cannot be split into {k} folds")
    rng = np.random.default_rng(seed)
    if stratified:
        order = []
        for c in sorted(set(labels.tolist())):
            idx = np.flatnonzero(labels == c)
            if len(idx) < k:
                raise ClassifierError(f"class {c} has {len(idx)} records, fewer than k={k}")
            order.append(idx[rng.permutation(len(idx))])
        order = np.concatenate(order)
    else:
        order = rng.permutation(len(labels))
    return [np.sort(order[f::k]) for f in range(k)]


@dataclass
class CrossValResult:
    folds: list[EvalReport]
    mean: dict[str, float]
    std: dict[str, float]
    pooled: EvalReport | None = None

    def write_csv(self, path) -> None:
        keys = list(self.mean)
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["fold"] + keys)
            for i, rep in enumerate(self.folds):
                s = rep.scalars()
                w.writerow([i] + [repr(s.get(k, float("nan"))) for k in keys])
            w.writerow(["mean"] + [repr(self.mean[k]) for k in keys])
            w.writerow(["std"] + [repr(self.std[k]) for k in keys])


def kfold_crossval(features_or_dataset, labels, k: int, seed: int,
                   fit: Callable[[np.ndarray, np.ndarray, int], Callable[[np.ndarray], np.ndarray]],
                   classes: Sequence[int] | None = None, positive_class=None,
                   stratified: bool = True, label_names=None) -> CrossValResult:
    """k-fold cross-validation of a whole pipeline.

    ``fit(x_train, y_train, fold)`` trains everything that needs training
    (XAE features and the classifier head) on the training folds only and
    returns a function mapping raw inputs to class probabilities ordered by
    ``classes``.
    """
    x = np.asarray(features_or_dataset, dtype=np.float64)
    y = np.asarray(labels)
    classes = sorted(set(y.tolist())) if classes is None else list(classes)
    folds = stratified_folds(y, k, seed, stratified)
    reports, all_idx, all_proba = [], [], []
    for f, test in enumerate(folds):
        train = np.setdiff1d(np.arange(len(y)), test, assume_unique=True)
        predict_fn = fit(x[train], y[train], f)
        proba = np.atleast_2d(predict_fn(x[test]))
        reports.append(evaluate_scores(y[test], proba, classes, positive_class, label_names))
        all_idx.append(test)
        all_proba.append(proba)
    keys = list(reports[0].scalars())
    table = np.array([[r.scalars()[key] for key in keys] for r in reports])
    order = np.concatenate(all_idx)
    pooled = evaluate_scores(y[order], np.concatenate(all_proba), classes, positive_class, label_names)
    # a metric undefined in every fold (e.g. AUC with one-record folds) stays nan
    defined = [bool(np.any(~np.isnan(table[:, c]))) for c in range(len(keys))]
    return CrossValResult(
        reports,
        {key: float(np.nanmean(table[:, c])) if defined[c] else float("nan") for c, key in enumerate(keys)},
        {key: float(np.nanstd(table[:, c])) if defined[c] else float("nan") for c, key in enumerate(keys)},
        pooled,
    )
