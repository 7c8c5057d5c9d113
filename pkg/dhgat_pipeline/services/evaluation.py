from typing import Sequence

import numpy as np
from sklearn.metrics import confusion_matrix, f1_score

from ..models.news import NUM_CLASSES
from ..models.run import Metrics
from ..utils.errors import PipelineError
from ..utils.metrics import track_stage_time


@track_stage_time("evaluate")
def evaluate_predictions(probs: np.ndarray, labels: Sequence[int], node_ids: Sequence[int]) -> Metrics:
    """Argmax predictions on node_ids scored against labels (confusion rows = true class)."""
    node_ids = np.asarray(node_ids, dtype=np.int64)
    if not len(node_ids):
        raise PipelineError("no nodes to evaluate")
    truth = np.asarray(labels, dtype=np.int64)[node_ids]
    predicted = np.argmax(np.asarray(probs)[node_ids], axis=1)
    classes = list(range(NUM_CLASSES))

    matrix = confusion_matrix(truth, predicted, labels=classes)
    support = matrix.sum(axis=1)
    per_class = np.divide(np.diag(matrix), support, out=np.zeros(NUM_CLASSES), where=support > 0)

    return Metrics(
        accuracy=float(np.trace(matrix) / matrix.sum()),
        macro_f1=float(f1_score(truth, predicted, labels=classes, average="macro", zero_division=0)),
        per_class_accuracy=[float(value) for value in per_class],
        confusion_matrix=matrix.astype(int).tolist(),
        ordinal_mae=float(np.mean(np.abs(predicted - truth))),
        evaluated=int(len(node_ids)),
    )
