import numpy as np
import pytest

from flowaug.errors import LabelOutOfRange, LengthMismatch
from flowaug.evaluation import (
    RunReport,
    compare_runs,
    confusion,
    f1_score,
    format_report,
    format_score,
    metrics,
    parse_report,
    per_class_table,
    read_report,
    write_report,
)

NAMES = ("web", "dns", "chat")


def test_f1_rendering():
    assert format_score(f1_score(0.82, 0.57)) == "0.67"
    assert f1_score(0.0, 0.0) == 0.0


def test_perfect_predictions():
    y = [0, 1, 2, 2, 1, 0, 0]
    cm = confusion(y, y, 3)
    assert np.array_equal(cm.counts, np.diag([3, 2, 2]))
    m = metrics(cm)
    assert m.accuracy == 1.0 and m.macro_f1 == 1.0
    assert np.array_equal(m.class_accuracy, np.ones(3))


def test_all_predicted_one_class():
    y = [0, 1, 2, 1]
    m = metrics(confusion(y, [0, 0, 0, 0], 3))
    assert m.precision.tolist() == [0.25, 0.0, 0.0]
    assert m.recall.tolist() == [1.0, 0.0, 0.0]
    assert m.f1[0] == pytest.approx(0.4) and m.f1[1] == 0.0
    assert m.class_accuracy.tolist() == [0.25, 0.5, 0.75]


def test_hand_computed_counts():
    cm = confusion([0, 0, 1, 1, 1], [0, 1, 1, 1, 0], 2)
    assert cm.counts.tolist() == [[1, 1], [1, 2]]
    m = metrics(cm)
    assert m.precision.tolist() == [0.5, 2 / 3]
    assert m.recall.tolist() == [0.5, 2 / 3]
    assert m.accuracy == 0.6


def test_confusion_errors():
    with pytest.raises(LengthMismatch):
        confusion([0, 1], [0], 2)
    with pytest.raises(LabelOutOfRange):
        confusion([0, 3], [0, 1], 2)
    with pytest.raises(LabelOutOfRange):
        confusion([0, 1], [-1, 1], 2)


def report(scheme, y_pred, y_true=(0, 0, 1, 1, 2, 2)):
    return RunReport(
        scheme=scheme,
        mode="fs-embedding",
        parameters=1234,
        epochs=3,
        class_names=NAMES,
        confusion=confusion(y_true, y_pred, 3),
        losses=[1.0986122886681098, 0.5, 0.1 + 0.2],
        extra={"seed": "7"},
    )


def test_report_round_trip(tmp_path):
    r = report("actual", [0, 1, 1, 1, 2, 0])
    back = read_report(write_report(r, tmp_path / "r.rep"))
    assert back.confusion == r.confusion
    assert back.losses == r.losses
    assert back.extra == r.extra
    assert format_report(back) == format_report(r)
    with pytest.raises(FileNotFoundError):
        read_report(tmp_path / "missing.rep")
    with pytest.raises(ValueError):
        parse_report("hello\n")


def test_compare_runs():
    a = report("actual", [0, 0, 1, 0, 2, 0])
    b = report("lstm-kde", [0, 0, 1, 1, 2, 2])
    cmp = compare_runs([a, b])
    assert cmp.schemes == ("actual", "lstm-kde")
    assert cmp.best == 1
    text = cmp.to_text()
    assert "1.0000*" in text and "0.67" in text
    assert "best=lstm-kde" in cmp.to_lines()
    with pytest.raises(ValueError):
        compare_runs([a])


def test_per_class_table():
    text = per_class_table(report("actual", [0, 0, 1, 1, 2, 2]))
    assert "chat" in text and "macro-F1 1.0000" in text
