from pathlib import Path
from typing import Union
import time
from prometheus_client import CollectorRegistry, Counter, Histogram, Gauge, write_to_textfile
from functools import wraps

REGISTRY = CollectorRegistry()

EPOCH_COUNTER = Counter(
    'training_epochs_total',
    'Total number of training epochs run',
    ['model'],
    registry=REGISTRY
)

RUN_COUNTER = Counter(
    'training_runs_total',
    'Total number of training runs',
    ['model', 'status'],
    registry=REGISTRY
)

LAST_LOSS_GAUGE = Gauge(
    'training_last_loss',
    'Loss of the most recent training epoch',
    ['model'],
    registry=REGISTRY
)

EPOCH_TIME_HISTOGRAM = Histogram(
    'training_epoch_seconds',
    'Time spent in one full-batch epoch',
    ['model'],
    registry=REGISTRY
)

STAGE_TIME_HISTOGRAM = Histogram(
    'pipeline_stage_seconds',
    'Time spent in pipeline stages',
    ['stage'],
    registry=REGISTRY
)


def log_epoch_metrics(model: str, loss: float, epoch_time: float) -> None:
    """Record metrics about one training epoch."""
    EPOCH_COUNTER.labels(model=model).inc()
    LAST_LOSS_GAUGE.labels(model=model).set(loss)
    EPOCH_TIME_HISTOGRAM.labels(model=model).observe(epoch_time)


def track_stage_time(stage: str):
    """Decorator to track processing time of a pipeline stage."""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                STAGE_TIME_HISTOGRAM.labels(stage=stage).observe(time.perf_counter() - start_time)
        return wrapper
    return decorator


def write_metrics(path: Union[str, Path]) -> None:
    write_to_textfile(str(path), REGISTRY)
