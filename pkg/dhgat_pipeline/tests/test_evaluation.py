import numpy as np
import pytest

from ..services.evaluation import evaluate_predictions
from ..utils.errors import PipelineError


def one_hot(predicted, classes=6):
    return np.eye(classes)[predicted]


def test_constant_prediction_scores():
    labels = np.arange(6)
    metrics = evaluate_predictions(one_hot([0] * 6), labels, np.arange(6))

    assert metrics.accuracy == pytest.approx(1 / 6)
    assert metrics.macro_f1 == pytest.approx(0.0476, abs=1e-4)
    assert metrics.per_class_accuracy == [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
    assert metrics.ordinal_mae == pytest.approx(2.5)


def test_perfect_predictions():
    labels = np.array([5, 4, 3, 2, 1, 0, 0, 3])
    metrics = evaluate_predictions(one_hot(labels), labels, np.arange(8))

    assert metrics.accuracy == 1.0
    assert metrics.macro_f1 == 1.0
    assert metrics.ordinal_mae == 0.0
    assert np.array_equal(np.diag(metrics.confusion_matrix), np.bincount(labels, minlength=6))


def test_confusion_rows_are_true_classes():
    labels = np.array([0, 0, 1, 5, 5, 5])
    predicted = [0, 1, 1, 5, 4, 0]
    matrix = np.asarray(evaluate_predictions(one_hot(predicted), labels, np.arange(6)).confusion_matrix)

    assert matrix.shape == (6, 6)
    assert matrix.sum(axis=1).tolist() == [2, 1, 0, 0, 0, 3]
    assert matrix[5, 4] == 1
    assert matrix[0, 1] == 1


def test_only_selected_nodes_are_scored():
    labels = np.array([0, 1, 2, 3])
    metrics = evaluate_predictions(one_hot([0, 0, 2, 2]), labels, [0, 2])
    assert metrics.evaluated == 2
    assert metrics.accuracy == 1.0


def test_absent_class_does_not_crash():
    labels = np.array([0, 0, 1])
    metrics = evaluate_predictions(one_hot([0, 0, 1]), labels, np.arange(3))
    assert metrics.per_class_accuracy[3] == 0.0
    assert 0.0 < metrics.macro_f1 < 1.0


def test_empty_node_set_is_an_error():
    with pytest.raises(PipelineError):
        evaluate_predictions(one_hot([0]), [0], [])
