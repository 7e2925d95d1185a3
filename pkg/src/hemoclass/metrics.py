"""Confusion-matrix evaluation: accuracy and per-class precision/recall/F1.

Reports render to a markdown table with columns
  Data Split | Classifier | Test Acc (%) | <highlight> (Prec./Rec./F1)
(rows grouped by split, then classifier) or to CSV rows
  split,classifier,test_accuracy,class,precision,recall,f1
carrying full precision. Macro averages are computed for diagnostics and
rendered separately from the headline table.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from hemoclass.errors import DataError, DimensionMismatchError


def confusion(y_true, y_pred, num_classes: int) -> np.ndarray:
    """K x K counts; cell (i, j) = samples of true class i predicted as j."""
    t = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise DimensionMismatchError(
            f"label vectors must be 1-D and equal length, "
            f"got {t.shape} and {p.shape}")
    if t.size and (min(t.min(), p.min()) < 0
                   or max(t.max(), p.max()) >= num_classes):
        raise DataError(f"labels outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def per_class_prf(cm: np.ndarray):
    """Per-class (precision, recall, f1, zero_division_flags) arrays.

    A zero denominator (no predictions for a class, or no true members)
    yields 0.0 for the affected rate and sets that class's flag.
    """
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm).astype(np.float64)
    pred_pos = cm.sum(axis=0).astype(np.float64)
    true_pos = cm.sum(axis=1).astype(np.float64)
    flags = (pred_pos == 0) | (true_pos == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_pos > 0, tp / pred_pos, 0.0)
        recall = np.where(true_pos > 0, tp / true_pos, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    flags = flags | ((denom == 0) & ~flags)
    return precision, recall, f1, flags


@dataclass
class EvalReport:
    """All Table-style quantities for one (split, classifier) evaluation."""

    split_label: str
    classifier_label: str
    class_names: tuple
    confusion_matrix: np.ndarray
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    zero_division_flags: np.ndarray
    support: np.ndarray
    highlight_class: int
    macro_precision: float
    macro_recall: float
    macro_f1: float
    provenance: dict = field(default_factory=dict)


def evaluate(y_true, y_pred, class_names, split_label: str,
             classifier_label: str, highlight_class: int = 0,
             provenance: dict | None = None) -> EvalReport:
    names = tuple(class_names)
    cm = confusion(y_true, y_pred, len(names))
    total = int(cm.sum())
    if total == 0:
        raise DataError("cannot evaluate an empty prediction set")
    if not 0 <= highlight_class < len(names):
        raise DataError(f"highlight class {highlight_class} out of range")
    precision, recall, f1, flags = per_class_prf(cm)
    return EvalReport(
        split_label=split_label,
        classifier_label=classifier_label,
        class_names=names,
        confusion_matrix=cm,
        accuracy=float(np.trace(cm) / total),
        precision=precision,
        recall=recall,
        f1=f1,
        zero_division_flags=flags,
        support=cm.sum(axis=1),
        highlight_class=highlight_class,
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        provenance=dict(provenance or {}),
    )


def _triple(report: EvalReport, c: int) -> str:
    return (f"{report.precision[c]:.3f} / {report.recall[c]:.3f} / "
            f"{report.f1[c]:.3f}")


def render_markdown(reports) -> str:
    """Headline table grouped by split, followed by per-report detail."""
    reports = list(reports)
    if not reports:
        raise DataError("no reports to render")
    highlight_name = reports[0].class_names[reports[0].highlight_class]
    lines = [
        f"| Data Split | Classifier | Test Acc (%) | "
        f"{highlight_name.capitalize()} (Prec./Rec./F1) |",
        "|---|---|---|---|",
    ]
    for rep in reports:
        lines.append(
            f"| {rep.split_label} | {rep.classifier_label} "
            f"| {100.0 * rep.accuracy:.2f} "
            f"| {_triple(rep, rep.highlight_class)} |")
    lines.append("")
    for rep in reports:
        lines.append(f"### {rep.split_label} — {rep.classifier_label}")
        lines.append("")
        lines.append("| Class | Support | Precision | Recall | F1 |")
        lines.append("|---|---|---|---|---|")
        for c, name in enumerate(rep.class_names):
            flag = " *" if rep.zero_division_flags[c] else ""
            lines.append(f"| {name} | {rep.support[c]} "
                         f"| {rep.precision[c]:.3f} | {rep.recall[c]:.3f} "
                         f"| {rep.f1[c]:.3f}{flag} |")
        lines.append(f"| macro | {int(rep.support.sum())} "
                     f"| {rep.macro_precision:.3f} | {rep.macro_recall:.3f} "
                     f"| {rep.macro_f1:.3f} |")
        if rep.zero_division_flags.any():
            lines.append("")
            lines.append("\\* rate forced to 0 by an empty denominator")
        lines.append("")
    return "\n".join(lines)


def render_csv(reports) -> str:
    reports = list(reports)
    if not reports:
        raise DataError("no reports to render")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["split", "classifier", "test_accuracy", "class",
                     "precision", "recall", "f1"])
    for rep in reports:
        for c, name in enumerate(rep.class_names):
            writer.writerow([
                rep.split_label, rep.classifier_label,
                repr(rep.accuracy), name,
                repr(float(rep.precision[c])), repr(float(rep.recall[c])),
                repr(float(rep.f1[c])),
            ])
    return buf.getvalue()


def render_report(reports, fmt: str) -> str:
    if fmt == "markdown":
        return render_markdown(reports)
    if fmt == "csv":
        return render_csv(reports)
    raise DataError(f"unknown report format {fmt!r}")
