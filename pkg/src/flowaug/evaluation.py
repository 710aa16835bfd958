"""Confusion matrices, per-class metrics, run reports and comparison tables.

Report files are line-oriented ``key=value`` records (UTF-8, one per line)::

    flowaug-report=1
    scheme=augmented
    mode=fs-embedding
    parameters=19844
    epochs=20
    accuracy=0.9412
    macro_f1=0.9001
    classes=chat,dns,...
    class.<id>.precision=...    (also .recall, .f1, .support)
    confusion.<row>=<count> <count> ...
    loss.<epoch>=...

Floats are written with ``repr`` so a report parses back to the exact same
values. Wall-clock time is never written, which keeps reports byte-identical
across reruns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import LabelOutOfRange, LengthMismatch

REPORT_VERSION = "1"


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or (c < 0).any():
            raise ValueError("confusion matrix must be square with nonnegative counts")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def to_lines(self) -> list[str]:
        return [f"confusion.{i}=" + " ".join(str(int(v)) for v in row) for i, row in enumerate(self.counts)]


def confusion(y_true: Sequence[int], y_pred: Sequence[int], k: int) -> ConfusionMatrix:
    t = np.asarray(y_true, dtype=np.int64).ravel()
    p = np.asarray(y_pred, dtype=np.int64).ravel()
    if t.size != p.size:
        raise LengthMismatch(f"{t.size} true labels vs {p.size} predictions")
    for name, arr in (("true", t), ("predicted", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise LabelOutOfRange(f"{name} label outside [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    # 0/0 is defined as 0
    out = np.zeros(np.shape(num), dtype=np.float64)
    np.divide(num, den, out=out, where=np.asarray(den) > 0)
    return out


def f1_score(precision, recall):
    """Harmonic mean of precision and recall; 0 when both are 0."""
    p = np.asarray(precision, dtype=np.float64)
    r = np.asarray(recall, dtype=np.float64)
    out = _ratio(2.0 * p * r, p + r)
    return float(out) if out.ndim == 0 else out


def format_score(value: float) -> str:
    """Two decimals, the precision used in rendered tables."""
    return f"{value:.2f}"


@dataclass(frozen=True, eq=False)
class ClassMetrics:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    # one-vs-rest (TP + TN) / total per class
    class_accuracy: np.ndarray
    support: np.ndarray
    accuracy: float
    macro_f1: float

    def macro_f1_of(self, classes: Sequence[int]) -> float:
        classes = list(classes)
        return float(np.mean(self.f1[classes])) if classes else 0.0


def metrics(cm: ConfusionMatrix) -> ClassMetrics:
    c = cm.counts.astype(np.float64)
    total = c.sum()
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    tn = total - tp - fp - fn
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = f1_score(precision, recall)
    return ClassMetrics(
        precision=precision,
        recall=recall,
        f1=np.atleast_1d(f1),
        class_accuracy=_ratio(tp + tn, np.full_like(tp, total)),
        support=cm.counts.sum(axis=1),
        accuracy=float(tp.sum() / total) if total else 0.0,
        macro_f1=float(np.mean(f1)) if cm.k else 0.0,
    )


@dataclass(eq=False)
class RunReport:
    scheme: str
    mode: str
    parameters: int
    epochs: int
    class_names: tuple[str, ...]
    confusion: ConfusionMatrix
    losses: list[float] = field(default_factory=list)
    extra: dict[str, str] = field(default_factory=dict)

    @property
    def metrics(self) -> ClassMetrics:
        return metrics(self.confusion)


def format_report(report: RunReport) -> str:
    m = report.metrics
    lines = [
        f"flowaug-report={REPORT_VERSION}",
        f"scheme={report.scheme}",
        f"mode={report.mode}",
        f"parameters={report.parameters}",
        f"epochs={report.epochs}",
        f"accuracy={m.accuracy!r}",
        f"macro_f1={m.macro_f1!r}",
        "classes=" + ",".join(report.class_names),
    ]
    for i in range(report.confusion.k):
        lines += [
            f"class.{i}.precision={float(m.precision[i])!r}",
            f"class.{i}.recall={float(m.recall[i])!r}",
            f"class.{i}.f1={float(m.f1[i])!r}",
            f"class.{i}.support={int(m.support[i])}",
        ]
    lines += report.confusion.to_lines()
    lines += [f"loss.{i + 1}={float(v)!r}" for i, v in enumerate(report.losses)]
    lines += [f"extra.{k}={v}" for k, v in sorted(report.extra.items())]
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> RunReport:
    values: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"report line {n} is not key=value: {line!r}")
        values[key] = value
    if values.get("flowaug-report") != REPORT_VERSION:
        raise ValueError("not a flowaug report (or unsupported version)")
    names = tuple(values["classes"].split(",")) if values.get("classes") else ()
    rows = [[int(v) for v in values[f"confusion.{i}"].split()] for i in range(len(names))]
    losses = []
    i = 1
    while f"loss.{i}" in values:
        losses.append(float(values[f"loss.{i}"]))
        i += 1
    extra = {k[len("extra.") :]: v for k, v in values.items() if k.startswith("extra.")}
    return RunReport(
        scheme=values["scheme"],
        mode=values["mode"],
        parameters=int(values["parameters"]),
        epochs=int(values["epochs"]),
        class_names=names,
        confusion=ConfusionMatrix(np.array(rows, dtype=np.int64).reshape(len(names), len(names))),
        losses=losses,
        extra=extra,
    )


def write_report(report: RunReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_report(report), encoding="utf-8")
    return path


def read_report(path: str | Path) -> RunReport:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"report not found: {path}")
    return parse_report(path.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class Comparison:
    schemes: tuple[str, ...]
    parameters: tuple[int, ...]
    epochs: tuple[int, ...]
    accuracy: tuple[float, ...]
    class_names: tuple[str, ...]
    # f1[row][class id]
    f1: tuple[tuple[float, ...], ...]
    best: int

    def to_text(self) -> str:
        head = ["scheme", "params", "epochs", "acc"] + list(self.class_names)
        rows = []
        for r, scheme in enumerate(self.schemes):
            acc = f"{self.accuracy[r]:.4f}" + ("*" if r == self.best else "")
            rows.append([scheme, str(self.parameters[r]), str(self.epochs[r]), acc] + [format_score(v) for v in self.f1[r]])
        widths = [max(len(x) for x in col) for col in zip(head, *rows)]
        fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        lines = [fmt(head), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows]
        return "\n".join(lines) + "\n* best accuracy; per-class columns are F1\n"

    def to_lines(self) -> str:
        lines = [f"flowaug-comparison={REPORT_VERSION}", "classes=" + ",".join(self.class_names), f"best={self.schemes[self.best]}"]
        for r, scheme in enumerate(self.schemes):
            lines += [
                f"run.{r}.scheme={scheme}",
                f"run.{r}.parameters={self.parameters[r]}",
                f"run.{r}.epochs={self.epochs[r]}",
                f"run.{r}.accuracy={self.accuracy[r]!r}",
                f"run.{r}.f1=" + " ".join(repr(v) for v in self.f1[r]),
            ]
        return "\n".join(lines) + "\n"


def compare_runs(reports: Sequence[RunReport]) -> Comparison:
    """Tabulate two or more runs; class columns follow class ids."""
    if len(reports) < 2:
        raise ValueError("a comparison needs at least two reports")
    names = reports[0].class_names
    for r in reports[1:]:
        if r.class_names != names:
            raise ValueError("reports cover different class sets")
    ms = [r.metrics for r in reports]
    acc = tuple(m.accuracy for m in ms)
    return Comparison(
        schemes=tuple(r.scheme for r in reports),
        parameters=tuple(r.parameters for r in reports),
        epochs=tuple(r.epochs for r in reports),
        accuracy=acc,
        class_names=names,
        f1=tuple(tuple(float(v) for v in m.f1) for m in ms),
        best=int(np.argmax(acc)),
    )


def per_class_table(report: RunReport) -> str:
    m = report.metrics
    names = report.class_names
    w = max([len("class")] + [len(n) for n in names])
    lines = [f"{'class'.ljust(w)}  precision  recall  f1    support"]
    for i, name in enumerate(names):
        lines.append(
            f"{name.ljust(w)}  {format_score(m.precision[i]).ljust(9)}  {format_score(m.recall[i]).ljust(6)}  "
            f"{format_score(m.f1[i]).ljust(4)}  {int(m.support[i])}"
        )
    lines.append(f"accuracy {m.accuracy:.4f}  macro-F1 {m.macro_f1:.4f}")
    return "\n".join(lines) + "\n"
