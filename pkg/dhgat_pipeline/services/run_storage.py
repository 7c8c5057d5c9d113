import json
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from ..config.experiment import ExperimentConfig
from ..models.news import OrdinalLabel
from ..models.run import Metrics, RunRecord
from ..networks.checkpoint import save_checkpoint
from ..networks.dhgat import SelectionTrace
from ..utils.logging import logger
from .sweep import SweepResult
from .training import TrainingResult

RESOLVED_CONFIG = "resolved_config.json"
TRACE_COLUMNS = ["phase", "epoch", "layer", "node", "chosen_type"]


def trace_frame(traces: Dict[str, SelectionTrace]) -> pd.DataFrame:
    """One row per (trace, layer, node) with the chosen type name and every ρ entry."""
    frames = []
    for phase_key, trace in traces.items():
        phase, _, epoch = phase_key.partition("-")
        for layer in range(trace.num_layers):
            n = len(trace.chosen[layer])
            frame = pd.DataFrame({
                "phase": phase,
                "epoch": int(epoch) if epoch else -1,
                "layer": layer + 1,
                "node": np.arange(n),
                "chosen_type": [trace.type_names[i] for i in trace.chosen[layer]],
            })
            rho = pd.DataFrame(trace.rho[layer], columns=[f"rho_{name}" for name in trace.type_names])
            frames.append(pd.concat([frame, rho], axis=1))
    if not frames:
        return pd.DataFrame(columns=TRACE_COLUMNS)
    return pd.concat(frames, ignore_index=True)


def export_trace(traces: Dict[str, SelectionTrace], path: Union[str, Path]) -> None:
    trace_frame(traces).to_csv(path, index=False, float_format="%.10g")


def summarize_trace_file(path: Union[str, Path], node: Optional[int] = None) -> pd.DataFrame:
    """Fraction of nodes choosing each type per (phase, epoch, layer), or one node's choices."""
    frame = pd.read_csv(path)
    missing = [column for column in TRACE_COLUMNS if column not in frame.columns]
    if missing:
        raise ValueError(f"{path} is not a selection trace (missing {missing})")
    if node is not None:
        return frame[frame["node"] == node].reset_index(drop=True)
    counts = frame.groupby(["phase", "epoch", "layer", "chosen_type"]).size().rename("count").reset_index()
    totals = counts.groupby(["phase", "epoch", "layer"])["count"].transform("sum")
    return counts.assign(fraction=counts["count"] / totals).drop(columns="count")


def confusion_frame(matrix) -> pd.DataFrame:
    names = list(OrdinalLabel.names())
    return pd.DataFrame(np.asarray(matrix), index=pd.Index(names, name="true"), columns=names)


class RunStorage:
    """Writes run artefacts as plain JSON/CSV under one output directory."""

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.directory / name

    def save_config(self, config: ExperimentConfig) -> Path:
        target = self.path(RESOLVED_CONFIG)
        target.write_text(config.model_dump_json(indent=2), encoding="utf-8")
        return target

    def save_metrics(self, metrics: Metrics, name: str = "metrics.json") -> Path:
        target = self.path(name)
        target.write_text(metrics.model_dump_json(indent=2), encoding="utf-8")
        return target

    def save_record(self, record: RunRecord) -> Path:
        path = self.path("run_record.json")
        path.write_text(record.model_dump_json(indent=2), encoding="utf-8")
        return path

    def save_run(self, result: TrainingResult) -> None:
        record = result.record
        self.save_record(record)
        self.save_metrics(record.metrics)
        pd.DataFrame([epoch.model_dump() for epoch in record.loss_curve]).to_csv(
            self.path("loss_curve.csv"), index=False, float_format="%.17g"
        )
        confusion_frame(record.metrics.confusion_matrix).to_csv(self.path("confusion_matrix.csv"))
        if result.traces:
            export_trace(result.traces, self.path("selection_trace.csv"))
        save_checkpoint(result.model, self.path("checkpoint.npz"), {
            "model": record.model,
            "config_hash": record.config_hash,
            "seed": record.seed,
            "lattice": result.lattice.names,
            "relations": list(result.lattice.registry.names),
        })
        logger.info(f"Stored run {record.run_id} in {self.directory}")

    def save_sweep(self, result: SweepResult) -> None:
        runs = self.directory / "runs"
        runs.mkdir(exist_ok=True)
        for record in result.records:
            (runs / f"{record.run_id}.json").write_text(record.model_dump_json(indent=2), encoding="utf-8")
        result.table.to_csv(self.path("aggregate.csv"), index=False, float_format="%.6f")

        confusion_dir = self.directory / "confusion"
        confusion_dir.mkdir(exist_ok=True)
        for index, (key, matrix) in enumerate(result.confusion.items()):
            frame = confusion_frame(matrix)
            support = np.asarray(matrix).sum(axis=1)
            frame["per_class_accuracy"] = np.divide(
                np.diag(matrix), support, out=np.zeros(len(support)), where=support > 0
            )
            frame.to_csv(confusion_dir / f"cell_{index:03d}.csv", float_format="%.4f")

        report = {
            "cells": list(result.confusion),
            "runs": len(result.records),
            "best": result.table.loc[result.table["best"]].to_dict(orient="records"),
            "liar_targets_waived": result.waived,
        }
        if result.waived:
            report["waiver"] = (
                "no pre-trained embedding file configured; LIAR accuracy criteria replaced by the "
                "planted-graph learning check and the property test suite"
            )
        self.path("sweep_report.json").write_text(json.dumps(report, indent=2, default=str), encoding="utf-8")
        logger.info(f"Stored {len(result.records)} sweep runs in {self.directory}")


def load_run_record(path: Union[str, Path]) -> RunRecord:
    return RunRecord.model_validate_json(Path(path).read_text(encoding="utf-8"))


def list_run_records(directory: Union[str, Path]) -> List[RunRecord]:
    return [load_run_record(path) for path in sorted(Path(directory).glob("runs/*.json"))]
