"""Tests for metrics, aggregation, and report rendering."""

import xml.etree.ElementTree as ET

import numpy as np
import pytest

from scripta.errors import FormatError
from scripta.evalrep import (
    ConfusionMatrix,
    aggregate_folds,
    confusion,
    read_confusion_csv,
    read_history_csv,
    render_report,
    summarize,
)
from scripta.mlp import TrainingHistory

SVG_NS = "{http://www.w3.org/2000/svg}"


def small_history(n=10, seed=0):
    rng = np.random.default_rng(seed)
    return TrainingHistory(
        rng.random(n), rng.random(n), rng.random(n), rng.random(n)
    )


# ---------------------------------------------------------------------------
# confusion and summaries


def test_confusion_perfect_predictions_diagonal():
    labels = ["a", "b", "b", "c", "c", "c"]
    cm = confusion(labels, labels, ("a", "b", "c"))
    np.testing.assert_array_equal(cm.counts, np.diag([1, 2, 3]))


def test_confusion_single_predicted_class():
    cm = confusion(["a", "b", "c"], ["a", "a", "a"], ("a", "b", "c"))
    np.testing.assert_array_equal(cm.counts.sum(axis=0), [3, 0, 0])


def test_confusion_hand_enumeration():
    true = ["a", "a", "b", "b", "c", "c"]
    pred = ["a", "b", "b", "b", "a", "c"]
    cm = confusion(true, pred, ("a", "b", "c"))
    np.testing.assert_array_equal(
        cm.counts, [[1, 1, 0], [0, 2, 0], [1, 0, 1]]
    )
    assert cm.total == 6


def test_confusion_derives_sorted_class_list():
    cm = confusion(["b", "a"], ["b", "c"])
    assert cm.class_list == ("a", "b", "c")


def test_confusion_errors():
    with pytest.raises(ValueError, match="true labels"):
        confusion(["a"], ["a", "b"])
    with pytest.raises(ValueError, match="not in class list"):
        confusion(["a"], ["zzz"], ("a", "b"))
    with pytest.raises(ValueError, match="not in class list"):
        confusion(["zzz"], ["a"], ("a", "b"))


def test_summarize_diagonal_all_ones():
    report = summarize(confusion(["a", "b", "b"], ["a", "b", "b"], ("a", "b")))
    assert all(r.accuracy == 1.0 for r in report.per_class)
    assert report.average_accuracy == 1.0
    assert report.overall_accuracy == 1.0


def test_summarize_two_class_arithmetic():
    cm = ConfusionMatrix(("x", "y"), np.array([[9, 1], [5, 5]], dtype=np.int64))
    report = summarize(cm)
    assert [r.accuracy for r in report.per_class] == [0.9, 0.5]
    assert report.average_accuracy == pytest.approx(0.7)
    assert report.overall_accuracy == pytest.approx(14 / 20)
    assert report.n_samples == 20


def test_summarize_skips_empty_classes():
    cm = ConfusionMatrix(
        ("a", "b", "ghost"),
        np.array([[3, 0, 0], [1, 1, 0], [0, 0, 0]], dtype=np.int64),
    )
    report = summarize(cm)
    ghost = report.per_class[2]
    assert ghost.support == 0 and ghost.accuracy is None
    assert report.average_accuracy == pytest.approx((1.0 + 0.5) / 2)


def test_summarize_empty_matrix_errors():
    cm = ConfusionMatrix(("a", "b"), np.zeros((2, 2), dtype=np.int64))
    with pytest.raises(ValueError):
        summarize(cm)


def test_overall_accuracy_matches_direct_count():
    rng = np.random.default_rng(3)
    classes = ("a", "b", "c", "d")
    for _ in range(20):
        n = int(rng.integers(1, 60))
        true = [classes[i] for i in rng.integers(0, 4, size=n)]
        pred = [classes[i] for i in rng.integers(0, 4, size=n)]
        report = summarize(confusion(true, pred, classes))
        direct = sum(t == p for t, p in zip(true, pred)) / n
        assert report.overall_accuracy == pytest.approx(direct)


# ---------------------------------------------------------------------------
# fold aggregation


def test_aggregate_pools_counts():
    classes = ("a", "b")
    reports = [
        summarize(confusion(["a"] * 4 + ["b"] * 4, ["a"] * 4 + ["b"] * 4, classes))
        for _ in range(26)
    ]
    pooled = aggregate_folds(reports)
    assert pooled.n_samples == 208
    assert pooled.overall_accuracy == 1.0
    assert len(pooled.folds) == 26
    assert pooled.folds[0].name == "fold-1"


def test_aggregate_single_fold_identity():
    r = summarize(confusion(["a", "b"], ["a", "a"], ("a", "b")))
    pooled = aggregate_folds([r])
    np.testing.assert_array_equal(pooled.confusion.counts, r.confusion.counts)
    assert pooled.overall_accuracy == r.overall_accuracy


def test_aggregate_disjoint_errors_recompute():
    classes = ("a", "b")
    r1 = summarize(confusion(["a", "a", "b"], ["a", "a", "b"], classes))
    r2 = summarize(confusion(["a", "b", "b"], ["b", "b", "b"], classes))
    pooled = aggregate_folds([r1, r2], names=["g1", "g2"])
    # 5 of 6 correct overall
    assert pooled.overall_accuracy == pytest.approx(5 / 6)
    assert [f.name for f in pooled.folds] == ["g1", "g2"]
    assert pooled.folds[1].overall_accuracy == pytest.approx(2 / 3)


def test_aggregate_order_independent():
    classes = ("a", "b")
    r1 = summarize(confusion(["a", "b"], ["a", "a"], classes))
    r2 = summarize(confusion(["b", "b"], ["b", "a"], classes))
    ab = aggregate_folds([r1, r2])
    ba = aggregate_folds([r2, r1])
    np.testing.assert_array_equal(ab.confusion.counts, ba.confusion.counts)


def test_aggregate_rejects_mismatched_classes():
    r1 = summarize(confusion(["a"], ["a"], ("a", "b")))
    r2 = summarize(confusion(["a"], ["a"], ("a", "c")))
    with pytest.raises(ValueError):
        aggregate_folds([r1, r2])
    with pytest.raises(ValueError):
        aggregate_folds([])


# ---------------------------------------------------------------------------
# rendering and round trips


def test_render_report_file_set(tmp_path):
    report = summarize(
        confusion(["a", "a", "b", "c"], ["a", "b", "b", "c"], ("a", "b", "c"))
    )
    written = render_report(report, tmp_path / "eval-")
    names = sorted(p.name for p in written)
    assert names == [
        "eval-confusion.csv",
        "eval-confusion.png",
        "eval-confusion.svg",
        "eval-metrics.csv",
    ]
    for p in written:
        assert p.exists() and p.stat().st_size > 0


def test_confusion_csv_grid_shape(tmp_path):
    report = summarize(
        confusion(["a", "b", "c"], ["a", "b", "c"], ("a", "b", "c"))
    )
    render_report(report, str(tmp_path) + "/")
    lines = (tmp_path / "confusion.csv").read_text().splitlines()
    assert len(lines) == 4  # header + one row per class
    assert lines[0] == ",a,b,c"
    assert all(len(l.split(",")) == 4 for l in lines)


def test_confusion_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    counts = rng.integers(0, 40, size=(5, 5)).astype(np.int64)
    cm = ConfusionMatrix(tuple("abcde"), counts)
    render_report(summarize(cm), tmp_path / "x-")
    again = read_confusion_csv(tmp_path / "x-confusion.csv")
    assert again.class_list == cm.class_list
    np.testing.assert_array_equal(again.counts, cm.counts)


def test_confusion_svg_structure(tmp_path):
    report = summarize(
        confusion(["a", "a", "b", "c"], ["a", "b", "b", "c"], ("a", "b", "c"))
    )
    render_report(report, tmp_path / "s-")
    root = ET.fromstring((tmp_path / "s-confusion.svg").read_text())
    rects = root.findall(f".//{SVG_NS}rect")
    assert len(rects) == 9  # one per cell, nothing else
    texts = [t.text for t in root.findall(f".//{SVG_NS}text")]
    assert any(t and t.endswith("%") for t in texts)


def test_metrics_csv_content(tmp_path):
    cm = ConfusionMatrix(
        ("a", "b", "ghost"),
        np.array([[9, 1, 0], [5, 5, 0], [0, 0, 0]], dtype=np.int64),
    )
    render_report(summarize(cm), tmp_path / "m-")
    lines = (tmp_path / "m-metrics.csv").read_text().splitlines()
    assert lines[0] == "name,support,accuracy"
    assert lines[1] == "a,10,0.9"
    assert lines[2] == "b,10,0.5"
    assert lines[3] == "ghost,0,"  # no samples: accuracy left blank
    assert lines[4].startswith("average,,0.7")
    assert lines[5] == "overall,20,0.7"


def test_folds_csv_written_when_present(tmp_path):
    classes = ("a", "b")
    r1 = summarize(confusion(["a", "b"], ["a", "b"], classes))
    r2 = summarize(confusion(["a", "b"], ["a", "a"], classes))
    pooled = aggregate_folds([r1, r2], names=["w01", "w02"])
    written = render_report(pooled, tmp_path / "cv-")
    folds = tmp_path / "cv-folds.csv"
    assert folds in written
    lines = folds.read_text().splitlines()
    assert lines[0] == "fold,n_test,accuracy"
    assert lines[1] == "w01,2,1.0"
    assert lines[2] == "w02,2,0.5"


def test_history_csv_shape_and_roundtrip(tmp_path):
    hist = small_history(n=10)
    render_report(hist, tmp_path / "h-")
    lines = (tmp_path / "h-history.csv").read_text().splitlines()
    assert lines[0] == "epoch,output_error,layer1_error,layer2_error"
    assert len(lines) == 11
    assert all(len(l.split(",")) == 4 for l in lines)
    again = read_history_csv(tmp_path / "h-history.csv")
    # repr round-trips float64 exactly
    np.testing.assert_array_equal(again.output_error, hist.output_error)
    np.testing.assert_array_equal(again.layer1_error, hist.layer1_error)
    np.testing.assert_array_equal(again.layer2_error, hist.layer2_error)
    assert again.train_loss is None


def test_history_svg_structure(tmp_path):
    render_report(small_history(n=7), tmp_path / "h-")
    root = ET.fromstring((tmp_path / "h-history.svg").read_text())
    polylines = root.findall(f".//{SVG_NS}polyline")
    assert len(polylines) == 3
    for p in polylines:
        assert len(p.attrib["points"].split()) == 7


def test_render_rejects_other_types(tmp_path):
    with pytest.raises(TypeError):
        render_report({"not": "a report"}, tmp_path / "x-")


def test_read_confusion_csv_rejects_garbage(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(FormatError):
        read_confusion_csv(p)
    p.write_text(",a,b\na,1,2\n")
    with pytest.raises(FormatError, match="data rows"):
        read_confusion_csv(p)


def test_read_history_csv_rejects_garbage(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("epoch,out\n1,0.5\n")
    with pytest.raises(FormatError):
        read_history_csv(p)
    p.write_text("epoch,output_error,layer1_error,layer2_error\n2,0.5,0.5,0.5\n")
    with pytest.raises(FormatError, match="1..n"):
        read_history_csv(p)


def test_rendering_is_deterministic(tmp_path):
    report = summarize(
        confusion(["a", "a", "b", "c"], ["a", "b", "b", "c"], ("a", "b", "c"))
    )
    hist = small_history(n=6, seed=4)
    for sub in ("one", "two"):
        render_report(report, tmp_path / sub / "r-")
        render_report(hist, tmp_path / sub / "r-")
    one = sorted((tmp_path / "one").iterdir())
    two = sorted((tmp_path / "two").iterdir())
    assert [p.name for p in one] == [p.name for p in two]
    for a, b in zip(one, two):
        assert a.read_bytes() == b.read_bytes(), a.name
