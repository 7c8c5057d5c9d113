import math
import time
import uuid
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from ..config.experiment import SplitSpec, TrainConfig
from ..models.news import NUM_CLASSES
from ..models.run import EpochLoss, RunRecord, RunStatus
from ..networks.diff_core import DTYPE, AdamState, adam_step
from ..networks.dhgat import DHGAT, GATv2Network, GCNNetwork, GraphInputs, SelectionTrace, dhgat_loss
from ..utils.errors import ConfigurationError, PipelineError
from ..utils.logging import logger
from ..utils.metrics import RUN_COUNTER, log_epoch_metrics, track_stage_time
from .evaluation import evaluate_predictions
from .hetero_graph import HeteroGraph, NeighborhoodLattice, enumerate_lattice


class SplitError(PipelineError):
    pass


class TrainingDivergedError(PipelineError):
    def __init__(self, epoch: int, parameter_norms: Dict[str, float], record: Optional[RunRecord] = None):
        norms = ", ".join(f"{name}={value:.3e}" for name, value in parameter_norms.items())
        super().__init__(f"non-finite loss at epoch {epoch}; parameter norms: {norms}")
        self.epoch = epoch
        self.parameter_norms = parameter_norms
        self.record = record


def make_split(labels: Sequence[int], spec: SplitSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded labeled/unlabeled partition; per class round(fraction · size) labeled when stratified."""
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    rng = np.random.default_rng(spec.seed)

    if spec.stratified:
        chosen = []
        for label in np.unique(labels):
            members = np.flatnonzero(labels == label)
            count = int(spec.labeled_fraction * len(members) + 0.5)
            if count == 0:
                raise SplitError(
                    f"labeled fraction {spec.labeled_fraction} leaves class {label} "
                    f"({len(members)} nodes) without labeled nodes"
                )
            chosen.append(rng.choice(members, size=count, replace=False))
        labeled = np.sort(np.concatenate(chosen))
    else:
        count = int(spec.labeled_fraction * n + 0.5)
        if count == 0:
            raise SplitError(f"labeled fraction {spec.labeled_fraction} of {n} nodes rounds to zero")
        labeled = np.sort(rng.choice(n, size=count, replace=False))

    unlabeled = np.setdiff1d(np.arange(n), labeled)
    if not len(unlabeled):
        raise SplitError("split leaves no unlabeled nodes to evaluate")
    return labeled, unlabeled


def tau_at(cfg: TrainConfig, epoch: int) -> float:
    """Constant τ, or linear anneal from tau to tau_min across epochs 1..E."""
    if not cfg.anneal_tau or cfg.epochs == 1:
        return cfg.tau
    progress = (epoch - 1) / (cfg.epochs - 1)
    return cfg.tau + (cfg.tau_min - cfg.tau) * progress


def resolve_lattice(g: HeteroGraph, cfg: TrainConfig) -> Tuple[NeighborhoodLattice, Optional[int], Optional[int]]:
    """Lattice plus the decision-neighbourhood mask and the forced type index from relation names."""
    lattice = enumerate_lattice(g.registry, cfg.lattice)
    try:
        decision_mask = g.registry.mask_of(cfg.decision_type) if cfg.decision_type is not None else None
        forced = lattice.index_of_relations(cfg.force_selection) if cfg.force_selection is not None else None
    except PipelineError as e:
        raise ConfigurationError(str(e), key="train") from e
    return lattice, decision_mask, forced


def build_model(cfg: TrainConfig, in_dim: int, num_types: int, forced: Optional[int] = None) -> nn.Module:
    generator = torch.Generator().manual_seed(cfg.seed)
    if cfg.model == "dhgat":
        return DHGAT(
            in_dim, cfg.hidden, cfg.heads, num_types,
            mlp_hidden=cfg.mlp_hidden,
            dropout=cfg.dropout,
            straight_through=cfg.straight_through,
            force_selection=forced,
            generator=generator,
        )
    if cfg.model == "gatv2":
        return GATv2Network(in_dim, cfg.hidden, cfg.heads, cfg.mlp_hidden, cfg.dropout, generator=generator)
    return GCNNetwork(in_dim, cfg.hidden, cfg.mlp_hidden, cfg.dropout, generator=generator)


def _parameter_norms(model: nn.Module) -> Dict[str, float]:
    return {name: float(param.detach().norm()) for name, param in model.named_parameters()}


@dataclass
class TrainingResult:
    model: nn.Module
    record: RunRecord
    lattice: NeighborhoodLattice
    graph: GraphInputs
    # evaluation-mode class probabilities for every node
    probs: np.ndarray
    traces: Dict[str, SelectionTrace] = field(default_factory=dict)


def predict(model: nn.Module, X: torch.Tensor, graph: GraphInputs, capture: bool = True):
    model.eval()
    with torch.no_grad():
        return model(X, graph, capture=capture)


@track_stage_time("train")
def train_model(
    g: HeteroGraph,
    X: np.ndarray,
    labels: Sequence[int],
    split: Tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
    run_id: Optional[str] = None,
    config_snapshot: Optional[dict] = None,
    config_hash: str = "",
) -> TrainingResult:
    """Full-batch transductive training; the loss reads labels of labeled nodes only."""
    labeled_ids, unlabeled_ids = split
    labels = np.asarray(labels, dtype=np.int64)
    if X.shape[0] != g.n or len(labels) != g.n:
        raise ConfigurationError(f"graph has {g.n} nodes, features {X.shape[0]}, labels {len(labels)}", key="data")
    if labels.min() < 0 or labels.max() >= NUM_CLASSES:
        raise ConfigurationError(f"labels must lie in 0..{NUM_CLASSES - 1}", key="data")

    started = time.perf_counter()
    lattice, decision_mask, forced = resolve_lattice(g, cfg)
    graph = GraphInputs.build(g, lattice, decision_mask)
    x = torch.as_tensor(X, dtype=DTYPE)
    y = torch.as_tensor(labels, dtype=torch.long)
    labeled = torch.as_tensor(labeled_ids, dtype=torch.long)

    model = build_model(cfg, x.shape[1], len(lattice), forced)
    optimizer = AdamState(model.trainable_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    dropout_generator = torch.Generator().manual_seed(cfg.seed)
    noise_generator = torch.Generator().manual_seed(cfg.seed + 1)
    trace_epochs = set(cfg.trace_epochs or [cfg.epochs])

    record = RunRecord(
        run_id=run_id or uuid.uuid4().hex[:12],
        model=cfg.model,
        config=config_snapshot or cfg.model_dump(),
        config_hash=config_hash,
        seed=cfg.seed,
        labeled=len(labeled_ids),
        unlabeled=len(unlabeled_ids),
    )
    traces: Dict[str, SelectionTrace] = {}
    logger.info(f"Training {cfg.model} on {g.n} nodes, {len(lattice)} neighbourhood types, {len(labeled_ids)} labeled")

    try:
        for epoch in range(1, cfg.epochs + 1):
            epoch_start = time.perf_counter()
            tau = tau_at(cfg, epoch)
            model.train()
            output = model(
                x, graph,
                tau=tau,
                dropout_generator=dropout_generator,
                noise_generator=noise_generator,
                capture=epoch in trace_epochs,
            )
            loss, cross_entropy, ordinal = dhgat_loss(output.probs, y, labeled, cfg.lambda1, cfg.lambda2)
            if not math.isfinite(loss.item()):
                error = TrainingDivergedError(epoch, _parameter_norms(model), record)
                record.status = RunStatus.FAILED
                record.error_message = str(error)
                record.wall_clock_seconds = time.perf_counter() - started
                raise error
            loss.backward()
            adam_step(optimizer)

            if output.trace is not None:
                traces[f"epoch-{epoch}"] = output.trace
            record.loss_curve.append(EpochLoss(
                epoch=epoch,
                loss=loss.item(),
                cross_entropy=cross_entropy.item(),
                ordinal=ordinal.item(),
                tau=tau if cfg.model == "dhgat" else None,
            ))
            log_epoch_metrics(cfg.model, loss.item(), time.perf_counter() - epoch_start)
            if epoch % cfg.log_every == 0 or epoch == cfg.epochs:
                logger.info(
                    f"epoch {epoch}/{cfg.epochs} loss={loss.item():.4f} "
                    f"ce={cross_entropy.item():.4f} ordinal={ordinal.item():.4f} tau={tau:.3f}"
                )
    except PipelineError:
        RUN_COUNTER.labels(model=cfg.model, status=RunStatus.FAILED.value).inc()
        raise

    output = predict(model, x, graph)
    probs = output.probs.numpy()
    if output.trace is not None:
        traces["eval"] = output.trace
        record.selection = output.trace.summary()
    record.metrics = evaluate_predictions(probs, labels, unlabeled_ids)
    record.wall_clock_seconds = time.perf_counter() - started
    RUN_COUNTER.labels(model=cfg.model, status=RunStatus.COMPLETED.value).inc()
    logger.info(
        f"Run {record.run_id} ({cfg.model}) accuracy={record.metrics.accuracy:.4f} "
        f"macro_f1={record.metrics.macro_f1:.4f} in {record.wall_clock_seconds:.1f}s"
    )
    return TrainingResult(model=model, record=record, lattice=lattice, graph=graph, probs=probs, traces=traces)


train_dhgat = train_model
