import json
import logging

import pytest

from ..utils.logging import LOG_FORMAT, CustomJsonFormatter
from ..utils.metrics import REGISTRY, log_epoch_metrics, track_stage_time, write_metrics


def test_json_formatter_fields():
    record = logging.LogRecord("dhgat_pipeline", logging.WARNING, __file__, 10, "split has %d nodes", (7,), None)
    record.funcName = "make_split"
    payload = json.loads(CustomJsonFormatter(LOG_FORMAT).format(record))

    assert payload["message"] == "split has 7 nodes"
    assert payload["level"] == "WARNING"
    assert payload["function"] == "make_split"
    assert payload["timestamp"].endswith("+00:00")


def stage_count(stage):
    return REGISTRY.get_sample_value("pipeline_stage_seconds_count", {"stage": stage}) or 0.0


def test_stage_timer_counts_failures_too():
    @track_stage_time("unit-test")
    def failing():
        raise RuntimeError("boom")

    before = stage_count("unit-test")
    with pytest.raises(RuntimeError):
        failing()
    assert stage_count("unit-test") == before + 1


def test_epoch_metrics_and_textfile(tmp_path):
    log_epoch_metrics("unit-model", 1.25, 0.01)
    write_metrics(tmp_path / "metrics.prom")

    text = (tmp_path / "metrics.prom").read_text()
    assert 'training_last_loss{model="unit-model"} 1.25' in text
    assert REGISTRY.get_sample_value("training_epochs_total", {"model": "unit-model"}) >= 1
