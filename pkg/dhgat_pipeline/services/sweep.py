"""Cartesian sweeps over edge-type subsets, loss weights, label fractions and model kinds."""
import itertools
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..config.experiment import ExperimentConfig
from ..models.run import RunRecord
from ..utils.errors import ConfigurationError
from ..utils.logging import logger
from .hetero_graph import HeteroGraph
from .training import make_split, train_model

CELL_KEYS = ["relations", "lambda1", "lambda2", "fraction", "model"]


@dataclass(frozen=True)
class SweepCell:
    relations: Tuple[str, ...]
    lambda1: float
    lambda2: float
    fraction: float
    model: str

    @property
    def key(self) -> str:
        return (
            f"{'+'.join(self.relations)}|l1={self.lambda1:g}|l2={self.lambda2:g}"
            f"|frac={self.fraction:g}|{self.model}"
        )


@dataclass
class SweepResult:
    records: List[RunRecord]
    table: pd.DataFrame
    # cell key -> confusion matrix averaged over repeats
    confusion: Dict[str, np.ndarray] = field(default_factory=dict)
    waived: bool = False


def sweep_cells(config: ExperimentConfig) -> List[SweepCell]:
    axes = config.sweep
    if axes.is_empty:
        raise ConfigurationError("a sweep needs at least one non-empty axis", key="sweep")
    relation_sets = axes.relation_sets or [config.graph.relation_names]
    lambdas = axes.lambda_grid or [(config.train.lambda1, config.train.lambda2)]
    fractions = axes.fractions or [config.split.labeled_fraction]
    models = axes.models or [config.train.model]
    return [
        SweepCell(tuple(relations), l1, l2, fraction, model)
        for relations, (l1, l2), fraction, model in itertools.product(relation_sets, lambdas, fractions, models)
    ]


def aggregate(records: Sequence[RunRecord], cells: Sequence[SweepCell]) -> pd.DataFrame:
    """Mean/std (ddof=1) per cell recomputed from the per-run metrics; best mean accuracy flagged."""
    rows = [
        {
            "relations": "+".join(cell.relations),
            "lambda1": cell.lambda1,
            "lambda2": cell.lambda2,
            "fraction": cell.fraction,
            "model": cell.model,
            "accuracy": record.metrics.accuracy,
            "macro_f1": record.metrics.macro_f1,
            "ordinal_mae": record.metrics.ordinal_mae,
        }
        for record, cell in zip(records, cells)
    ]
    frame = pd.DataFrame(rows)
    table = frame.groupby(CELL_KEYS, sort=False).agg(
        acc_mean=("accuracy", "mean"),
        acc_std=("accuracy", "std"),
        f1_mean=("macro_f1", "mean"),
        f1_std=("macro_f1", "std"),
        mae_mean=("ordinal_mae", "mean"),
        runs=("accuracy", "size"),
    ).reset_index()
    # a single repeat has no spread
    table[["acc_std", "f1_std"]] = table[["acc_std", "f1_std"]].fillna(0.0)
    table["best"] = table["acc_mean"] == table["acc_mean"].max()
    return table


def sweep(
    g: HeteroGraph,
    X: np.ndarray,
    labels: Sequence[int],
    config: ExperimentConfig,
    on_run: Optional[Callable[[SweepCell, RunRecord], None]] = None,
) -> SweepResult:
    """Each cell runs `repeats` times with split and model seeds offset by the repeat number."""
    cells = sweep_cells(config)
    repeats = config.sweep.repeats
    records: List[RunRecord] = []
    run_cells: List[SweepCell] = []
    confusion: Dict[str, np.ndarray] = {}
    logger.info(f"Sweeping {len(cells)} cells x {repeats} repeats")

    for cell in cells:
        graph = g.restrict(cell.relations)
        matrices = []
        for repeat in range(repeats):
            split_spec = config.split.model_copy(update={
                "labeled_fraction": cell.fraction,
                "seed": config.split.seed + repeat,
            })
            train_cfg = config.train.model_copy(update={
                "model": cell.model,
                "lambda1": cell.lambda1,
                "lambda2": cell.lambda2,
                "seed": config.train.seed + repeat,
            })
            result = train_model(
                graph, X, labels, make_split(labels, split_spec), train_cfg,
                run_id=f"{len(records):04d}",
                config_snapshot={
                    "cell": cell.key,
                    "repeat": repeat,
                    "train": train_cfg.model_dump(),
                    "split": split_spec.model_dump(),
                },
                config_hash=config.config_hash(),
            )
            records.append(result.record)
            run_cells.append(cell)
            matrices.append(np.asarray(result.record.metrics.confusion_matrix, dtype=np.float64))
            if on_run is not None:
                on_run(cell, result.record)
        confusion[cell.key] = np.mean(matrices, axis=0)

    table = aggregate(records, run_cells)
    waived = config.embedding.source == "fallback"
    if waived:
        logger.warning("No pre-trained embedding configured; LIAR accuracy targets are waived for this sweep")
    return SweepResult(records=records, table=table, confusion=confusion, waived=waived)
