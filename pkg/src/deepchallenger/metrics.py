"""Macro-averaged scores, cross-validation, and table rendering.

Conventions, fixed here and relied on by the report goldens:

* Any 0/0 in precision, recall or F1 is defined as 0.
* Macro values are unweighted means over classes; macro-F1 averages the
  per-class F1 values rather than combining macro-P and macro-R.
* Tables render at 3 decimals using Python's float formatting, which
  rounds half to even on the binary value.
* The best value per column is flagged with a ``*``; rows whose rendered
  value ties the best are all flagged.
"""

from __future__ import annotations

import dataclasses
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .corpus import FoldPlan
from .errors import ConfigError, CrossValidationError, InputError

Triple = tuple[float, float, float]


@dataclasses.dataclass(frozen=True)
class ConfusionMatrix:
    """Counts[i][j] = items with true class i predicted as class j."""

    classes: tuple
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_dict(self) -> dict[str, Any]:
        return {"classes": list(self.classes), "counts": self.counts.tolist()}


def confusion(true_labels: Sequence, predicted_labels: Sequence,
              classes: Sequence) -> ConfusionMatrix:
    if len(true_labels) != len(predicted_labels):
        raise InputError(
            f"label sequences differ in length: {len(true_labels)} true,"
            f" {len(predicted_labels)} predicted"
        )
    classes = tuple(classes)
    index = {c: i for i, c in enumerate(classes)}
    if len(index) != len(classes):
        raise InputError("classes contain duplicates")
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        if t not in index:
            raise InputError(f"true label {t!r} not in classes")
        if p not in index:
            raise InputError(f"predicted label {p!r} not in classes")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(classes=classes, counts=counts)


@dataclasses.dataclass(frozen=True)
class MetricsReport:
    """Scores of one evaluation, or the aggregate of several folds.

    A plain evaluation fills per_class and the macro fields.  A
    cross-validation aggregate additionally carries the per-fold reports
    and sets fold_average (== its macro fields, averaged over folds).
    """

    per_class: tuple[Triple, ...]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_fold: tuple["MetricsReport", ...] = ()
    fold_average: Triple | None = None

    @property
    def triple(self) -> Triple:
        return (self.macro_precision, self.macro_recall, self.macro_f1)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "per_class": [list(t) for t in self.per_class],
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
        }
        if self.per_fold:
            out["per_fold"] = [r.to_dict() for r in self.per_fold]
        if self.fold_average is not None:
            out["fold_average"] = list(self.fold_average)
        return out

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "MetricsReport":
        try:
            return cls(
                per_class=tuple(tuple(t) for t in obj["per_class"]),
                macro_precision=float(obj["macro_precision"]),
                macro_recall=float(obj["macro_recall"]),
                macro_f1=float(obj["macro_f1"]),
                per_fold=tuple(cls.from_dict(r) for r in obj.get("per_fold", ())),
                fold_average=(tuple(obj["fold_average"])
                              if obj.get("fold_average") is not None else None),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"malformed metrics report: {e}") from e


def _safe_div(num: float, den: float) -> float:
    return num / den if den else 0.0


def class_scores(cm: ConfusionMatrix) -> list[Triple]:
    """(precision, recall, f1) per class, 0/0 read as 0."""
    scores = []
    for i in range(len(cm.classes)):
        tp = float(cm.counts[i, i])
        fp = float(cm.counts[:, i].sum()) - tp
        fn = float(cm.counts[i, :].sum()) - tp
        p = _safe_div(tp, tp + fp)
        r = _safe_div(tp, tp + fn)
        f1 = _safe_div(2 * p * r, p + r)
        scores.append((p, r, f1))
    return scores


def macro_scores(cm: ConfusionMatrix) -> Triple:
    if not cm.classes:
        raise InputError("confusion matrix has no classes")
    per_class = class_scores(cm)
    return tuple(float(np.mean([s[i] for s in per_class])) for i in range(3))


def report_from_confusion(cm: ConfusionMatrix) -> MetricsReport:
    mp, mr, mf1 = macro_scores(cm)
    return MetricsReport(per_class=tuple(class_scores(cm)),
                         macro_precision=mp, macro_recall=mr, macro_f1=mf1)


def evaluate_labels(true_labels: Sequence, predicted_labels: Sequence,
                    classes: Sequence) -> MetricsReport:
    return report_from_confusion(confusion(true_labels, predicted_labels, classes))


def _as_report(result: Any, fold: int) -> MetricsReport:
    if isinstance(result, MetricsReport):
        return result
    try:
        p, r, f1 = (float(v) for v in result)
    except (TypeError, ValueError) as e:
        raise CrossValidationError(
            f"fold {fold}: runner returned {result!r}, expected a MetricsReport"
            " or a (precision, recall, f1) triple"
        ) from e
    if not all(np.isfinite(v) for v in (p, r, f1)):
        raise CrossValidationError(f"fold {fold}: non-finite scores {(p, r, f1)}")
    return MetricsReport(per_class=(), macro_precision=p, macro_recall=r, macro_f1=f1)


def cross_validate(runner: Callable[[list, list], Any],
                   fold_plan: FoldPlan) -> MetricsReport:
    """Train/evaluate once per fold and average the macro triples.

    ``runner(train_items, test_items)`` must return a MetricsReport or a
    (precision, recall, f1) triple for that fold.  Any runner exception
    aborts the whole validation, naming the fold.
    """
    fold_reports: list[MetricsReport] = []
    for fold in range(fold_plan.k):
        try:
            result = runner(fold_plan.train_items(fold), fold_plan.fold_items(fold))
        except CrossValidationError:
            raise
        except Exception as e:
            raise CrossValidationError(f"fold {fold} failed: {e}") from e
        fold_reports.append(_as_report(result, fold))
    average = tuple(
        float(np.mean([r.triple[i] for r in fold_reports])) for i in range(3)
    )
    return MetricsReport(per_class=(), macro_precision=average[0],
                         macro_recall=average[1], macro_f1=average[2],
                         per_fold=tuple(fold_reports), fold_average=average)


_HEADERS = ("Macro-Prec", "Macro-Rec", "Macro-F1")


def _render_rows(rows: list[tuple[str, Triple]]) -> list[str]:
    cells = [[f"{value:.3f}" for value in triple] for _, triple in rows]
    lines = []
    name_width = max(len("Model"), max(len(name) for name, _ in rows))
    widths = [len(h) + 1 for h in _HEADERS]
    for col in range(3):
        best = max(row[col] for row in cells)
        for row in cells:
            if row[col] == best:
                row[col] += "*"
    header = "Model".ljust(name_width) + "  " + "  ".join(
        h.rjust(w) for h, w in zip(_HEADERS, widths)
    )
    rule = "-" * name_width + "  " + "  ".join("-" * w for w in widths)
    lines.append(header)
    lines.append(rule)
    for (name, _), row in zip(rows, cells):
        lines.append(name.ljust(name_width) + "  " + "  ".join(
            cell.rjust(w) for cell, w in zip(row, widths)
        ))
    return lines


def _display_triple(report: MetricsReport) -> Triple:
    return report.fold_average if report.fold_average is not None else report.triple


def render_report(reports: Sequence[tuple], layout: str) -> str:
    """Render named reports as a fixed-width text table.

    layout='participation_table' takes (name, report) pairs and marks the
    best value per column over all rows.  layout='proxy_table' takes
    (section, name, report) triples, renders one table per section in
    input order, and marks bests within each section.
    """
    if not reports:
        raise InputError("nothing to render: no reports given")
    if layout == "participation_table":
        rows = [(name, _display_triple(report)) for name, report in reports]
        return "\n".join(_render_rows(rows)) + "\n"
    if layout == "proxy_table":
        sections: list[tuple[str, list[tuple[str, Triple]]]] = []
        for section, name, report in reports:
            if not sections or sections[-1][0] != section:
                sections.append((section, []))
            sections[-1][1].append((name, _display_triple(report)))
        blocks = []
        for section, rows in sections:
            blocks.append("\n".join([f"[{section}]"] + _render_rows(rows)))
        return "\n\n".join(blocks) + "\n"
    raise ConfigError(f"unknown table layout {layout!r}")
