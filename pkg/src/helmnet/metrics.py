"""Binary classification metrics with helmet (label 1) as the positive class."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import batches


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def swapped(self) -> "ConfusionMatrix":
        """The same matrix with no_helmet treated as the positive class."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)

    def format(self) -> str:
        rows = [
            f"{'':>18}{'pred no_helmet':>16}{'pred helmet':>14}",
            f"{'true no_helmet':>18}{self.tn:>16}{self.fp:>14}",
            f"{'true helmet':>18}{self.fn:>16}{self.tp:>14}",
        ]
        return "\n".join(rows)


def confusion(predictions, labels) -> ConfusionMatrix:
    p = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape:
        raise ValueError(f"{p.size} predictions vs {y.size} labels")
    if p.size == 0:
        raise ValueError("confusion matrix of an empty set")
    return ConfusionMatrix(
        tp=int(np.sum((p == 1) & (y == 1))),
        fp=int(np.sum((p == 1) & (y == 0))),
        fn=int(np.sum((p == 0) & (y == 1))),
        tn=int(np.sum((p == 0) & (y == 0))),
    )


def _ratio(num: int, den: int) -> tuple[float, bool]:
    return (num / den, False) if den else (0.0, True)


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    accuracy: float
    confusion: ConfusionMatrix
    overfitting_degree: float
    train_accuracy: float
    val_accuracy: float
    undefined: tuple = ()
    per_class: dict = field(default_factory=dict)

    CSV_HEADER = "precision,recall,f1,accuracy,tp,fp,fn,tn,train_acc,val_acc,overfitting_degree"

    def csv_row(self) -> str:
        c = self.confusion
        return (f"{self.precision:.4f},{self.recall:.4f},{self.f1:.4f},{self.accuracy:.4f},"
                f"{c.tp},{c.fp},{c.fn},{c.tn},{self.train_accuracy:.2f},{self.val_accuracy:.2f},"
                f"{self.overfitting_degree:.2f}")

    def format(self) -> str:
        lines = [
            f"{'precision':<20}{self.precision:>8.3f}",
            f"{'recall':<20}{self.recall:>8.3f}",
            f"{'f1':<20}{self.f1:>8.3f}",
            f"{'accuracy':<20}{self.accuracy:>8.3f}",
            f"{'train accuracy %':<20}{self.train_accuracy:>8.2f}",
            f"{'val accuracy %':<20}{self.val_accuracy:>8.2f}",
            f"{'overfitting (pts)':<20}{self.overfitting_degree:>8.2f}",
        ]
        for cls, vals in self.per_class.items():
            lines.append(f"{cls + ' positive':<20}p={vals['precision']:.3f} r={vals['recall']:.3f} "
                         f"f1={vals['f1']:.3f}")
        if self.undefined:
            lines.append("undefined (reported as 0): " + ", ".join(self.undefined))
        return "\n".join(lines)


def _prf(cm: ConfusionMatrix):
    p, p_undef = _ratio(cm.tp, cm.tp + cm.fp)
    r, r_undef = _ratio(cm.tp, cm.tp + cm.fn)
    f1, f_undef = _ratio(2 * p * r, p + r) if not (p_undef or r_undef) else (0.0, True)
    undefined = tuple(n for n, u in (("precision", p_undef), ("recall", r_undef), ("f1", f_undef)) if u)
    return p, r, f1, undefined


def overfitting_degree(train_accuracy: float, val_accuracy: float) -> float:
    """Training minus validation accuracy, both in percent."""
    return train_accuracy - val_accuracy


def report(cm: ConfusionMatrix, train_accuracy: float, val_accuracy: float) -> EvalReport:
    if cm.total == 0:
        raise ValueError("report of an empty confusion matrix")
    for name, acc in (("train_accuracy", train_accuracy), ("val_accuracy", val_accuracy)):
        if not 0.0 <= acc <= 100.0:
            raise ValueError(f"{name} must be a percentage in [0, 100], got {acc}")
    p, r, f1, undefined = _prf(cm)
    per_class = {}
    for cls, m in (("helmet", cm), ("no_helmet", cm.swapped())):
        cp, cr, cf, _ = _prf(m)
        per_class[cls] = {"precision": cp, "recall": cr, "f1": cf}
    return EvalReport(p, r, f1, (cm.tp + cm.tn) / cm.total, cm,
                      overfitting_degree(train_accuracy, val_accuracy),
                      train_accuracy, val_accuracy, undefined, per_class)


def predict(model, samples: list, batch_size: int = 32) -> np.ndarray:
    """Eval-mode argmax over the two logits; ties go to class 0."""
    if not samples:
        raise ValueError("cannot evaluate an empty subset")
    preds = []
    for batch in batches(samples, batch_size):
        logits = model.forward(batch.inputs, train=False)
        preds.append((logits[:, 1] > logits[:, 0]).astype(np.int64))
    return np.concatenate(preds)


def accuracy(model, samples: list, batch_size: int = 32) -> float:
    """Percentage of correctly classified samples."""
    preds = predict(model, samples, batch_size)
    labels = np.array([s.label for s in samples])
    return 100.0 * int(np.sum(preds == labels)) / len(samples)


def evaluate(model, samples: list, batch_size: int = 32):
    """Return (predictions, confusion matrix) for ``samples``."""
    preds = predict(model, samples, batch_size)
    return preds, confusion(preds, [s.label for s in samples])
