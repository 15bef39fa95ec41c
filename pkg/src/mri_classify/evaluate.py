"""Evaluation: confusion matrix, threshold metrics, ROC/AUC, and report
files.

Metric formulas:
    precision   = TP / (TP + FP)
    recall      = TP / (TP + FN)
    accuracy    = (TP + TN) / (TP + TN + FP + FN)
    f1          = 2 * precision * recall / (precision + recall)
    specificity = TN / (TN + FP)

A zero denominator yields ``None`` rather than a made-up number, so
degenerate evaluations stay visible. The positive class is ``tumor`` and a
probability >= threshold counts as positive.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .train import TrainingCurves


@dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def confusion(predictions, threshold: float = 0.5) -> ConfusionMatrix:
    """Count (probability, label) pairs against a decision threshold.

    A probability exactly at the threshold counts as a positive call.
    """
    m = ConfusionMatrix()
    for p, y in predictions:
        if y not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {y!r}")
        positive = p >= threshold
        if positive and y == 1:
            m.tp += 1
        elif positive and y == 0:
            m.fp += 1
        elif not positive and y == 1:
            m.fn += 1
        else:
            m.tn += 1
    return m


def _ratio(num: int, den: int):
    return num / den if den else None


def metrics(matrix: ConfusionMatrix) -> dict:
    """The five threshold metrics; ``None`` where a denominator is zero."""
    precision = _ratio(matrix.tp, matrix.tp + matrix.fp)
    recall = _ratio(matrix.tp, matrix.tp + matrix.fn)
    accuracy = _ratio(matrix.tp + matrix.tn, matrix.total)
    specificity = _ratio(matrix.tn, matrix.tn + matrix.fp)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return {
        "precision": precision,
        "recall": recall,
        "accuracy": accuracy,
        "f1": f1,
        "specificity": specificity,
    }


def roc_points(predictions) -> list[tuple[float, float]]:
    """(fpr, tpr) pairs over all score thresholds, from (0,0) to (1,1).

    Tied scores advance as one group, producing the diagonal segments that
    make the trapezoidal area equal to pairwise concordance with half
    credit for ties.
    """
    scores = np.asarray([p for p, _ in predictions], dtype=np.float64)
    labels = np.asarray([y for _, y in predictions], dtype=np.int64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    scores, labels = scores[order], labels[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    n = len(scores)
    while i < n:
        j = i
        while j < n and scores[j] == scores[i]:
            j += 1
        tp += int(labels[i:j].sum())
        fp += (j - i) - int(labels[i:j].sum())
        points.append((fp / n_neg, tp / n_pos))
        i = j
    return points


def roc_auc(predictions) -> float:
    """Area under the ROC curve by trapezoidal integration."""
    pts = roc_points(predictions)
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


@dataclass
class EvalReport:
    matrix: ConfusionMatrix
    precision: float | None
    recall: float | None
    f1: float | None
    specificity: float | None
    accuracy: float | None
    auc: float
    roc: list[tuple[float, float]] = field(default_factory=list)
    curves: TrainingCurves | None = None

    def as_dict(self) -> dict:
        return {
            "matrix": self.matrix.as_dict(),
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "specificity": self.specificity,
            "accuracy": self.accuracy,
            "auc": self.auc,
            "curves": self.curves.as_dict() if self.curves is not None else None,
        }


def report_from_predictions(predictions, threshold: float = 0.5,
                            curves: TrainingCurves | None = None) -> EvalReport:
    matrix = confusion(predictions, threshold)
    m = metrics(matrix)
    return EvalReport(
        matrix=matrix,
        precision=m["precision"],
        recall=m["recall"],
        f1=m["f1"],
        specificity=m["specificity"],
        accuracy=m["accuracy"],
        auc=roc_auc(predictions),
        roc=roc_points(predictions),
        curves=curves,
    )


def evaluate_model(model, data, threshold: float = 0.5, workers: int = 1,
                   curves: TrainingCurves | None = None) -> EvalReport:
    """Run inference over (image, label) pairs and build the full report."""
    if len(data) == 0:
        raise ValueError("evaluation split is empty")

    def infer(i: int):
        image, label = data[i]
        return model.predict_proba(image), int(label)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            predictions = list(pool.map(infer, range(len(data))))
    else:
        predictions = [infer(i) for i in range(len(data))]
    return report_from_predictions(predictions, threshold, curves)


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def emit_report(report: EvalReport, out_dir) -> list[Path]:
    """Write metrics.json, confusion.csv, roc.csv, curve CSVs and SVG
    renderings into ``out_dir``. Returns the written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []

        path = out / "metrics.json"
        with open(path, "w", encoding="utf-8") as f:
            json.dump(report.as_dict(), f, indent=1)
            f.write("\n")
        written.append(path)

        path = out / "confusion.csv"
        m = report.matrix
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(",pred_tumor,pred_healthy\n")
            f.write(f"actual_tumor,{m.tp},{m.fn}\n")
            f.write(f"actual_healthy,{m.fp},{m.tn}\n")
        written.append(path)

        path = out / "roc.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("fpr,tpr\n")
            for fpr, tpr in report.roc:
                f.write(f"{_fmt(fpr)},{_fmt(tpr)}\n")
        written.append(path)
        written.append(_plot_roc(report.roc, out / "roc.svg"))

        if report.curves is not None and len(report.curves):
            written.extend(write_curves(report.curves, out))
        return written
    except OSError as e:
        raise OSError(f"cannot write report into {out}: {e}") from e


def write_curves(curves: TrainingCurves, out_dir) -> list[Path]:
    """Write curves.csv and its SVG rendering into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "curves.csv"
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("epoch,train_loss,train_acc,val_loss,val_acc\n")
        for epoch, tl, ta, vl, va in curves.rows():
            f.write(f"{epoch},{_fmt(tl)},{_fmt(ta)},{_fmt(vl)},{_fmt(va)}\n")
    return [path, _plot_curves(curves, out / "curves.svg")]


def _plot_roc(points, path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(xs, ys, marker=".", label="model")
    ax.plot([0, 1], [0, 1], linestyle="--", color="gray", label="chance")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title("ROC")
    ax.legend()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def _plot_curves(curves: TrainingCurves, path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = list(range(1, len(curves) + 1))
    fig, (ax_acc, ax_loss) = plt.subplots(1, 2, figsize=(10, 4))
    ax_acc.plot(epochs, curves.train_acc, label="training")
    ax_acc.plot(epochs, curves.val_acc, label="validation")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_title("Training and Validation Accuracy")
    ax_acc.legend()
    ax_loss.plot(epochs, curves.train_loss, label="training")
    ax_loss.plot(epochs, curves.val_loss, label="validation")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.set_title("Training and Validation Loss")
    ax_loss.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
