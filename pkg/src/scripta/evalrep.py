"""Accuracy summaries, fold aggregation, and report rendering.

Reports land next to each other under a common path prefix: delimited text
(``confusion.csv``, ``metrics.csv``, plus ``history.csv`` for training
histories), hand-written SVG charts, and matplotlib PNG renderings of the
same charts.  Accuracy is reported two ways: the unweighted mean over
classes (classes with no samples are excluded and flagged) and the overall
fraction of correct samples.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError
from .mlp import TrainingHistory

HISTORY_FIELDS = ("epoch", "output_error", "layer1_error", "layer2_error")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    class_list: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        c = len(self.class_list)
        if c == 0:
            raise ValueError("class_list must not be empty")
        if self.counts.shape != (c, c) or self.counts.dtype != np.int64:
            raise ValueError(f"counts must be a ({c}, {c}) int64 array")
        if self.counts.min() < 0:
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ClassSummary:
    name: str
    support: int
    accuracy: float | None  # None when the class has no samples


@dataclass(frozen=True)
class FoldStat:
    name: str
    n_samples: int
    overall_accuracy: float


@dataclass(frozen=True)
class EvalReport:
    confusion: ConfusionMatrix
    per_class: tuple[ClassSummary, ...]
    average_accuracy: float
    overall_accuracy: float
    folds: tuple[FoldStat, ...] | None = None

    @property
    def n_samples(self) -> int:
        return self.confusion.total


def confusion(
    true_labels: Sequence[str],
    predicted_labels: Sequence[str],
    class_list: Sequence[str] | None = None,
) -> ConfusionMatrix:
    """Count (true, predicted) pairs over a shared class list.

    With ``class_list`` omitted the sorted union of observed labels is used.
    """
    true_labels = list(true_labels)
    predicted_labels = list(predicted_labels)
    if len(true_labels) != len(predicted_labels):
        raise ValueError(
            f"got {len(true_labels)} true labels but "
            f"{len(predicted_labels)} predictions"
        )
    if class_list is None:
        class_list = sorted(set(true_labels) | set(predicted_labels))
    class_list = tuple(class_list)
    index = {name: i for i, name in enumerate(class_list)}
    counts = np.zeros((len(class_list), len(class_list)), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        if t not in index:
            raise ValueError(f"true label {t!r} not in class list")
        if p not in index:
            raise ValueError(f"predicted label {p!r} not in class list")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(class_list, counts)


def summarize(cm: ConfusionMatrix, folds: tuple[FoldStat, ...] | None = None) -> EvalReport:
    """Per-class accuracies (diagonal over row sum) and both averages."""
    row_sums = cm.counts.sum(axis=1)
    total = int(row_sums.sum())
    if total == 0:
        raise ValueError("confusion matrix has no samples")
    per_class = []
    defined = []
    for i, name in enumerate(cm.class_list):
        support = int(row_sums[i])
        if support == 0:
            per_class.append(ClassSummary(name, 0, None))
            continue
        acc = float(cm.counts[i, i]) / support
        per_class.append(ClassSummary(name, support, acc))
        defined.append(acc)
    return EvalReport(
        confusion=cm,
        per_class=tuple(per_class),
        average_accuracy=float(np.mean(defined)),
        overall_accuracy=float(np.trace(cm.counts)) / total,
        folds=folds,
    )


def aggregate_folds(
    reports: Sequence[EvalReport], names: Sequence[str] | None = None
) -> EvalReport:
    """Pool fold confusion counts and summarize once over the pooled matrix.

    The returned report keeps a per-fold breakdown; ``names`` labels the
    folds (default ``fold-1``, ``fold-2``, ...).
    """
    if not reports:
        raise ValueError("no reports to aggregate")
    class_list = reports[0].confusion.class_list
    for r in reports[1:]:
        if r.confusion.class_list != class_list:
            raise ValueError("fold reports have different class lists")
    if names is None:
        names = [f"fold-{i + 1}" for i in range(len(reports))]
    elif len(names) != len(reports):
        raise ValueError("one name per fold report expected")
    pooled = ConfusionMatrix(
        class_list, np.sum([r.confusion.counts for r in reports], axis=0)
    )
    folds = tuple(
        FoldStat(str(n), r.n_samples, r.overall_accuracy)
        for n, r in zip(names, reports)
    )
    return summarize(pooled, folds=folds)


# ---------------------------------------------------------------------------
# delimited output


def _fmt(x: float) -> str:
    return repr(float(x))


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _confusion_csv(cm: ConfusionMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([""] + list(cm.class_list))
    for name, row in zip(cm.class_list, cm.counts):
        w.writerow([name] + [int(c) for c in row])
    return buf.getvalue()


def _metrics_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "support", "accuracy"])
    for row in report.per_class:
        acc = "" if row.accuracy is None else _fmt(row.accuracy)
        w.writerow([row.name, row.support, acc])
    w.writerow(["average", "", _fmt(report.average_accuracy)])
    w.writerow(["overall", report.n_samples, _fmt(report.overall_accuracy)])
    return buf.getvalue()


def _folds_csv(folds: Sequence[FoldStat]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fold", "n_test", "accuracy"])
    for f in folds:
        w.writerow([f.name, f.n_samples, _fmt(f.overall_accuracy)])
    return buf.getvalue()


def _history_csv(history: TrainingHistory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_FIELDS)
    for e in range(history.n_epochs):
        w.writerow(
            [
                e + 1,
                _fmt(history.output_error[e]),
                _fmt(history.layer1_error[e]),
                _fmt(history.layer2_error[e]),
            ]
        )
    return buf.getvalue()


def read_confusion_csv(path: str | Path) -> ConfusionMatrix:
    """Inverse of the confusion.csv writer."""
    path = Path(path)
    rows = list(csv.reader(path.read_text(encoding="utf-8").splitlines()))
    if not rows or len(rows[0]) < 2 or rows[0][0] != "":
        raise FormatError(f"{path}: not a confusion matrix CSV")
    classes = tuple(rows[0][1:])
    if len(rows) != len(classes) + 1:
        raise FormatError(
            f"{path}: expected {len(classes)} data rows, found {len(rows) - 1}"
        )
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for i, row in enumerate(rows[1:]):
        if len(row) != len(classes) + 1 or row[0] != classes[i]:
            raise FormatError(f"{path}: row {i + 2} does not match the header")
        try:
            counts[i] = [int(c) for c in row[1:]]
        except ValueError as exc:
            raise FormatError(f"{path}: row {i + 2}: {exc}") from exc
    return ConfusionMatrix(classes, counts)


def read_history_csv(path: str | Path) -> TrainingHistory:
    """Inverse of the history.csv writer; the loss column does not exist in
    the file, so ``train_loss`` comes back as None."""
    path = Path(path)
    rows = list(csv.reader(path.read_text(encoding="utf-8").splitlines()))
    if not rows or tuple(rows[0]) != HISTORY_FIELDS:
        raise FormatError(f"{path}: not a training history CSV")
    cols = [[], [], []]
    for i, row in enumerate(rows[1:]):
        if len(row) != 4:
            raise FormatError(f"{path}: row {i + 2} must have 4 fields")
        try:
            if int(row[0]) != i + 1:
                raise FormatError(f"{path}: epochs must count 1..n in order")
            for j in range(3):
                cols[j].append(float(row[j + 1]))
        except ValueError as exc:
            raise FormatError(f"{path}: row {i + 2}: {exc}") from exc
    return TrainingHistory(
        np.array(cols[0]), np.array(cols[1]), np.array(cols[2])
    )


# ---------------------------------------------------------------------------
# SVG charts (no plotting framework: a handful of rects, lines, and text)

CELL = 48
MARGIN_LEFT = 110
MARGIN_TOP = 70
MARGIN_RIGHT = 20
MARGIN_BOTTOM = 20


def _heat_color(frac: float) -> str:
    # white at 0 to a deep blue at 1
    r = round(255 + (8 - 255) * frac)
    g = round(255 + (72 - 255) * frac)
    b = round(255 + (135 - 255) * frac)
    return f"rgb({r},{g},{b})"


def _esc(s: str) -> str:
    return (
        s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        .replace('"', "&quot;")
    )


def _confusion_svg(cm: ConfusionMatrix) -> str:
    c = len(cm.class_list)
    width = MARGIN_LEFT + c * CELL + MARGIN_RIGHT
    height = MARGIN_TOP + c * CELL + MARGIN_BOTTOM
    row_sums = cm.counts.sum(axis=1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'viewBox="0 0 {width} {height}" width="{width}" height="{height}" '
        f'style="background:#ffffff" font-family="sans-serif" font-size="12">'
    ]
    for j, name in enumerate(cm.class_list):
        x = MARGIN_LEFT + j * CELL + CELL // 2
        parts.append(
            f'<text x="{x}" y="{MARGIN_TOP - 28}" text-anchor="middle" '
            f'fill="#333333">{_esc(name)}</text>'
        )
    parts.append(
        f'<text x="{MARGIN_LEFT + c * CELL // 2}" y="{MARGIN_TOP - 48}" '
        f'text-anchor="middle" fill="#000000" font-size="14">predicted</text>'
    )
    for i, name in enumerate(cm.class_list):
        y = MARGIN_TOP + i * CELL + CELL // 2 + 4
        parts.append(
            f'<text x="{MARGIN_LEFT - 8}" y="{y}" text-anchor="end" '
            f'fill="#333333">{_esc(name)}</text>'
        )
        for j in range(c):
            frac = (
                cm.counts[i, j] / row_sums[i] if row_sums[i] > 0 else 0.0
            )
            x = MARGIN_LEFT + j * CELL
            yy = MARGIN_TOP + i * CELL
            parts.append(
                f'<rect x="{x}" y="{yy}" width="{CELL}" height="{CELL}" '
                f'fill="{_heat_color(frac)}" stroke="#cccccc"/>'
            )
            if row_sums[i] > 0:
                color = "#ffffff" if frac > 0.55 else "#222222"
                parts.append(
                    f'<text x="{x + CELL // 2}" y="{yy + CELL // 2 + 4}" '
                    f'text-anchor="middle" fill="{color}">'
                    f"{100.0 * frac:.1f}%</text>"
                )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


HISTORY_SERIES = (
    ("output_error", "#c23b22"),
    ("layer1_error", "#1f6fb4"),
    ("layer2_error", "#3a9d5d"),
)


def _history_svg(history: TrainingHistory) -> str:
    w, h = 640, 360
    left, top, right, bottom = 60, 30, 160, 40
    pw, ph = w - left - right, h - top - bottom
    n = history.n_epochs
    ymax = max(
        0.05,
        float(
            max(
                history.output_error.max(),
                history.layer1_error.max(),
                history.layer2_error.max(),
            )
        ),
    )
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'viewBox="0 0 {w} {h}" width="{w}" height="{h}" '
        f'style="background:#ffffff" font-family="sans-serif" font-size="12">',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" '
        f'stroke="#444444"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" '
        f'stroke="#444444"/>',
        f'<text x="{left - 8}" y="{top + 4}" text-anchor="end" '
        f'fill="#333333">{ymax:.2f}</text>',
        f'<text x="{left - 8}" y="{top + ph + 4}" text-anchor="end" '
        f'fill="#333333">0</text>',
        f'<text x="{left}" y="{top + ph + 20}" text-anchor="middle" '
        f'fill="#333333">1</text>',
        f'<text x="{left + pw}" y="{top + ph + 20}" text-anchor="middle" '
        f'fill="#333333">{n}</text>',
        f'<text x="{left + pw // 2}" y="{h - 6}" text-anchor="middle" '
        f'fill="#000000">epoch</text>',
    ]

    def x_of(e: int) -> float:
        return left + (pw * e / max(1, n - 1) if n > 1 else pw / 2)

    def y_of(v: float) -> float:
        return top + ph * (1.0 - v / ymax)

    for li, (field, color) in enumerate(HISTORY_SERIES):
        series = getattr(history, field)
        pts = " ".join(
            f"{x_of(e):.2f},{y_of(float(series[e])):.2f}" for e in range(n)
        )
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="2"/>'
        )
        ly = top + 16 + 18 * li
        parts.append(
            f'<line x1="{w - right + 10}" y1="{ly - 4}" x2="{w - right + 34}" '
            f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{w - right + 40}" y="{ly}" fill="#333333">'
            f"{field}</text>"
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# matplotlib renderings


def _confusion_png(cm: ConfusionMatrix, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    c = len(cm.class_list)
    row_sums = np.maximum(cm.counts.sum(axis=1), 1)
    frac = cm.counts / row_sums[:, None]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.7 * c + 2), max(3.5, 0.7 * c + 1.5)))
    ax.imshow(frac, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(c), cm.class_list, rotation=45, ha="right")
    ax.set_yticks(range(c), cm.class_list)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(c):
        for j in range(c):
            if cm.counts.sum(axis=1)[i] > 0:
                color = "white" if frac[i, j] > 0.55 else "#222222"
                ax.text(
                    j, i, f"{100 * frac[i, j]:.1f}%",
                    ha="center", va="center", color=color, fontsize=8,
                )
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=100, metadata={"Software": None})
    plt.close(fig)


def _history_png(history: TrainingHistory, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = np.arange(1, history.n_epochs + 1)
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    for field, color in HISTORY_SERIES:
        ax.plot(epochs, getattr(history, field), label=field, color=color)
    ax.set_xlabel("epoch")
    ax.set_ylabel("error rate")
    ax.set_ylim(bottom=0.0)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=100, metadata={"Software": None})
    plt.close(fig)


# ---------------------------------------------------------------------------
# entry point


def render_report(
    obj: EvalReport | TrainingHistory, prefix: str | Path
) -> list[Path]:
    """Write every rendering of ``obj`` under a path prefix.

    The prefix is textual: ``render_report(r, "out/eval-")`` produces
    ``out/eval-confusion.csv`` and friends; a prefix ending in a path
    separator fills a directory.  Returns the written paths.
    """
    prefix = str(prefix)

    def at(name: str) -> Path:
        return Path(prefix + name)

    written = []
    if isinstance(obj, TrainingHistory):
        written.append(_write(at("history.csv"), _history_csv(obj)))
        written.append(_write(at("history.svg"), _history_svg(obj)))
        png = at("history.png")
        png.parent.mkdir(parents=True, exist_ok=True)
        _history_png(obj, png)
        written.append(png)
        return written

    if not isinstance(obj, EvalReport):
        raise TypeError("render_report takes an EvalReport or TrainingHistory")
    written.append(_write(at("confusion.csv"), _confusion_csv(obj.confusion)))
    written.append(_write(at("metrics.csv"), _metrics_csv(obj)))
    written.append(_write(at("confusion.svg"), _confusion_svg(obj.confusion)))
    if obj.folds is not None:
        written.append(_write(at("folds.csv"), _folds_csv(obj.folds)))
    png = at("confusion.png")
    png.parent.mkdir(parents=True, exist_ok=True)
    _confusion_png(obj.confusion, png)
    written.append(png)
    return written
