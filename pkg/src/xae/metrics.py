"""Classification metrics: confusion matrix, precision/recall/F1, average
precision, one-vs-rest ROC curves and AUC."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass
class EvalReport:
    classes: list[int]
    confusion: np.ndarray  # rows = true class, columns = predicted class
    row_accuracy: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f_score: np.ndarray
    support: np.ndarray
    weighted_f: float
    accuracy: float
    positive_class: int | None = None
    average_precision: np.ndarray | None = None
    roc: dict[int, np.ndarray] = field(default_factory=dict)  # class -> (k, 3) threshold, fpr, tpr
    auc: np.ndarray | None = None
    macro_auc: float | None = None
    label_names: dict[int, str] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def _pos(self) -> int | None:
        return None if self.positive_class is None else self.classes.index(self.positive_class)

    @property
    def headline_f(self) -> float:
        """Binary F1 of the positive class when one is set, otherwise support-weighted F1."""
        p = self._pos()
        return float(self.f_score[p]) if p is not None else self.weighted_f

    def scalars(self) -> dict[str, float]:
        p = self._pos()
        out = {
            "f_score": self.headline_f,
            "weighted_f": self.weighted_f,
            "accuracy": self.accuracy,
            "precision": float(self.precision[p]) if p is not None else float(np.average(self.precision, weights=self.support)),
            "recall": float(self.recall[p]) if p is not None else float(np.average(self.recall, weights=self.support)),
        }
        if self.average_precision is not None:
            out["average_precision"] = (float(self.average_precision[p]) if p is not None
                                        else float(np.nanmean(self.average_precision)))
        if self.auc is not None:
            out["auc"] = float(self.auc[p]) if p is not None else float(self.macro_auc)
            out["macro_auc"] = float(self.macro_auc)
        return out

    def name(self, c: int) -> str:
        return self.label_names.get(c, str(c))

    def write_csv(self, path) -> None:
        """Per-class metric table followed by summary rows."""
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["class", "support", "row_accuracy", "precision", "recall", "f_score",
                        "average_precision", "auc"] + [f"pred_{self.name(c)}" for c in self.classes])
            for k, c in enumerate(self.classes):
                ap = "" if self.average_precision is None else _fmt(self.average_precision[k])
                auc = "" if self.auc is None else _fmt(self.auc[k])
                w.writerow([self.name(c), int(self.support[k]), _fmt(self.row_accuracy[k]),
                            _fmt(self.precision[k]), _fmt(self.recall[k]), _fmt(self.f_score[k]), ap, auc]
                           + [int(v) for v in self.confusion[k]])
            for key, val in self.scalars().items():
                w.writerow([f"summary:{key}", "", _fmt(val)])
            for note in self.notes:
                w.writerow(["note", "", note])

    def write_roc_csv(self, directory, prefix: str = "roc") -> list[Path]:
        paths = []
        for c, pts in sorted(self.roc.items()):
            p = Path(directory) / f"{prefix}_{self.name(c)}.csv"
            with open(p, "w", newline="") as f:
                w = csv.writer(f, lineterminator="\n")
                w.writerow(["threshold", "fpr", "tpr"])
                for thr, fpr, tpr in pts:
                    w.writerow([_fmt(thr), _fmt(fpr), _fmt(tpr)])
            paths.append(p)
        return paths


def _fmt(v) -> str:
    v = float(v)
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def confusion_matrix(y_true, y_pred, classes: Sequence[int]) -> np.ndarray:
    pos = {c: k for k, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(np.asarray(y_true).tolist(), np.asarray(y_pred).tolist()):
        cm[pos[t], pos[p]] += 1
    return cm


def _safe_div(num, den):
    num, den = np.asarray(num, dtype=np.float64), np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def report_from_confusion(cm, classes: Sequence[int] | None = None, positive_class=None,
                          label_names=None) -> EvalReport:
    cm = np.asarray(cm, dtype=np.int64)
    classes = list(range(len(cm))) if classes is None else list(classes)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    precision = _safe_div(tp, predicted)
    recall = _safe_div(tp, support)
    f = _safe_div(2 * precision * recall, precision + recall)
    notes = []
    for k, c in enumerate(classes):
        if support[k] == 0 and predicted[k] == 0:
            notes.append(f"class {c} absent from truth and predictions: precision/recall set to 0")
        elif predicted[k] == 0:
            notes.append(f"class {c} never predicted: precision set to 0")
    total = cm.sum()
    weighted = float(np.average(f, weights=support)) if support.sum() else 0.0
    return EvalReport(
        classes=classes, confusion=cm, row_accuracy=recall.copy(), precision=precision, recall=recall,
        f_score=f, support=support, weighted_f=weighted, accuracy=float(tp.sum() / total) if total else 0.0,
        positive_class=positive_class, label_names=dict(label_names or {}), notes=notes,
    )


def roc_curve(y_binary, scores) -> np.ndarray:
    """ROC points (threshold, fpr, tpr); every distinct score is a threshold.

    Starts at (inf, 0, 0). Scores >= threshold count as positive.
    """
    y = np.asarray(y_binary).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    distinct = np.flatnonzero(np.diff(s)) if len(s) else np.array([], dtype=int)
    ends = np.r_[distinct, len(s) - 1] if len(s) else np.array([], dtype=int)
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps
    P, N = y.sum(), (~y).sum()
    tpr = tps / P if P else np.zeros_like(tps, dtype=np.float64)
    fpr = fps / N if N else np.zeros_like(fps, dtype=np.float64)
    pts = np.column_stack([s[ends], fpr, tpr]) if len(s) else np.zeros((0, 3))
    return np.vstack([[np.inf, 0.0, 0.0], pts])


def auc_trapezoid(fpr, tpr) -> float:
    fpr, tpr = np.asarray(fpr, dtype=np.float64), np.asarray(tpr, dtype=np.float64)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def average_precision(y_binary, scores) -> float:
    """sum_n (R_n - R_{n-1}) P_n over distinct score thresholds, descending."""
    y = np.asarray(y_binary).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    if not y.any():
        return float("nan")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    ends = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps = np.cumsum(y)[ends]
    precision = tps / (ends + 1)
    recall = tps / y.sum()
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def evaluate_scores(y_true, proba, classes: Sequence[int], positive_class=None, label_names=None) -> EvalReport:
    """Full report from true labels and an (n, C) probability matrix."""
    y_true = np.asarray(y_true)
    proba = np.asarray(proba, dtype=np.float64)
    classes = list(classes)
    y_pred = np.asarray(classes)[np.argmax(proba, axis=1)]
    rep = report_from_confusion(confusion_matrix(y_true, y_pred, classes), classes, positive_class, label_names)
    aps, aucs = [], []
    for k, c in enumerate(classes):
        yb = y_true == c
        pts = roc_curve(yb, proba[:, k])
        rep.roc[c] = pts
        if yb.all() or not yb.any():
            rep.notes.append(f"class {c}: ROC undefined (one-sided truth), AUC set to nan")
            aucs.append(float("nan"))
        else:
            aucs.append(auc_trapezoid(pts[:, 1], pts[:, 2]))
        aps.append(average_precision(yb, proba[:, k]))
    rep.average_precision = np.array(aps)
    rep.auc = np.array(aucs)
    rep.macro_auc = float(np.nanmean(rep.auc)) if not np.all(np.isnan(rep.auc)) else float("nan")
    return rep
