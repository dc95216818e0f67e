"""Confusion matrices, macro-averaged metrics and report writers."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import GENRES
from .errors import DataError

N_CLASSES = len(GENRES)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows indexed by the true genre and columns by the prediction."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.shape != (N_CLASSES, N_CLASSES) or np.any(c < 0):
            raise DataError("confusion counts must be a non-negative 10 x 10 matrix")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def total(self):
        return int(self.counts.sum())


@dataclass
class ClassMetrics:
    recall: float
    precision: float
    f1: float
    accuracy: float
    support: int
    predicted: int
    flags: list = field(default_factory=list)


@dataclass
class MetricsReport:
    recall: float
    precision: float
    accuracy: float
    f1: float
    per_class: list
    total: int
    counts: list

    def to_dict(self):
        return {
            "recall": self.recall, "precision": self.precision, "accuracy": self.accuracy, "f1": self.f1,
            "total": self.total, "confusion": self.counts,
            "per_class": [dict(genre=GENRES[i], **vars(c)) for i, c in enumerate(self.per_class)],
        }


def confusion(true_labels, pred_labels) -> ConfusionMatrix:
    t = np.asarray(true_labels)
    p = np.asarray(pred_labels)
    if t.ndim != 1 or t.shape != p.shape:
        raise DataError("true and predicted labels must be 1-D and of equal length")
    if t.size == 0:
        raise DataError("no labels to evaluate")
    for name, a in (("true", t), ("predicted", p)):
        if not np.issubdtype(a.dtype, np.integer) or a.min() < 0 or a.max() >= N_CLASSES:
            raise DataError(f"{name} labels must be integers in [0, {N_CLASSES})")
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class and macro-averaged recall, precision, F1 and accuracy.

    Classes with neither true nor predicted segments are left out of the
    macro averages. A class without support gets recall 0 and a class never
    predicted gets precision 0; both cases are flagged.
    """
    c = cm.counts
    total = c.sum()
    if total == 0:
        raise DataError("empty confusion matrix")
    tp = np.diag(c).astype(np.float64)
    support = c.sum(axis=1)
    predicted = c.sum(axis=0)
    per_class, active = [], []
    for i in range(N_CLASSES):
        flags = []
        if support[i]:
            rec = tp[i] / support[i]
        else:
            rec = 0.0
            flags.append("zero_support")
        if predicted[i]:
            prec = tp[i] / predicted[i]
        else:
            prec = 0.0
            flags.append("never_predicted")
        f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
        # one-vs-rest accuracy for the class
        acc = (total - support[i] - predicted[i] + 2 * tp[i]) / total
        per_class.append(ClassMetrics(float(rec), float(prec), float(f1), float(acc),
                                      int(support[i]), int(predicted[i]), flags))
        if support[i] or predicted[i]:
            active.append(i)
    sel = [per_class[i] for i in active]
    return MetricsReport(
        recall=float(np.mean([m.recall for m in sel])),
        precision=float(np.mean([m.precision for m in sel])),
        accuracy=float(tp.sum() / total),
        f1=float(np.mean([m.f1 for m in sel])),
        per_class=per_class, total=int(total), counts=c.tolist())


def micro_scores(cm: ConfusionMatrix):
    """Micro-averaged (recall, precision); both equal accuracy for single-label data."""
    c = cm.counts
    tp = np.trace(c)
    fn = c.sum() - tp
    fp = c.sum() - tp
    return tp / (tp + fn), tp / (tp + fp)


def clip_majority(segment_parents, segment_probs, segment_labels):
    """Clip-level labels by averaging segment probabilities within each clip."""
    parents = np.asarray(segment_parents)
    probs = np.asarray(segment_probs, dtype=np.float64)
    labels = np.asarray(segment_labels)
    uniq, first, inv = np.unique(parents, return_index=True, return_inverse=True)
    summed = np.zeros((uniq.size, probs.shape[1]))
    np.add.at(summed, inv, probs)
    return labels[first], summed.argmax(axis=1)


def write_report_json(path, name, report: MetricsReport, extra=None):
    d = {"model": name, **report.to_dict(), **(extra or {})}
    with open(path, "w") as fh:
        json.dump(d, fh, indent=1, sort_keys=True)


def write_report_csv(path, report: MetricsReport):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["genre", "recall", "precision", "f1", "support", "predicted"])
        for i, m in enumerate(report.per_class):
            w.writerow([GENRES[i], f"{m.recall:.6f}", f"{m.precision:.6f}", f"{m.f1:.6f}", m.support, m.predicted])
        w.writerow(["macro", f"{report.recall:.6f}", f"{report.precision:.6f}", f"{report.f1:.6f}",
                    report.total, report.total])
        w.writerow(["accuracy", f"{report.accuracy:.6f}", "", "", report.total, ""])


def confusion_svg(cm: ConfusionMatrix, title="") -> str:
    """A confusion heatmap as a standalone SVG document."""
    cell, margin = 36, 90
    size = margin + N_CLASSES * cell + 20
    c = cm.counts
    rows = c.sum(axis=1, keepdims=True)
    frac = np.divide(c, rows, out=np.zeros(c.shape), where=rows > 0)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 20}" '
             f'font-family="sans-serif" font-size="10">',
             f'<text x="{margin}" y="14" font-size="12">{title}</text>']
    for i in range(N_CLASSES):
        y = margin + i * cell
        parts.append(f'<text x="{margin - 4}" y="{y + cell / 2 + 3}" text-anchor="end">{GENRES[i]}</text>')
        parts.append(f'<text transform="translate({margin + i * cell + cell / 2 + 3},{margin - 4}) rotate(-60)">'
                     f'{GENRES[i]}</text>')
        for j in range(N_CLASSES):
            x = margin + j * cell
            shade = int(round(255 * (1.0 - frac[i, j])))
            colour = f"rgb({shade},{shade},255)"
            ink = "white" if frac[i, j] > 0.5 else "black"
            parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{colour}" stroke="#ccc"/>')
            parts.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 3}" text-anchor="middle" fill="{ink}">'
                         f'{c[i, j]}</text>')
    parts.append(f'<text x="{margin + N_CLASSES * cell / 2}" y="{size + 12}" text-anchor="middle">predicted</text>')
    parts.append("</svg>")
    return "\n".join(parts)
