import json
from functools import wraps
from pathlib import Path
from typing import Optional, Sequence

import click
import torch

from ..config.experiment import ExperimentConfig, load_experiment_config
from ..config.logging_config import configure_logging
from ..config.settings import settings
from ..networks.checkpoint import restore_checkpoint
from ..networks.diff_core import DTYPE, configure_runtime
from ..networks.dhgat import GraphInputs
from ..services.evaluation import evaluate_predictions
from ..services.gradient_checks import run_gradient_checks
from ..services.graph_storage import export_graph
from ..services.hetero_graph import graph_summary
from ..services.liar_ingest import records_frame
from ..services.pipeline import prepare_inputs
from ..services.run_storage import RunStorage, summarize_trace_file
from ..services.sweep import sweep as run_sweep
from ..services.synthetic import make_planted_graph
from ..services.training import TrainingDivergedError, build_model, make_split, resolve_lattice, predict, train_model
from ..utils.errors import PipelineError
from ..utils.logging import logger
from ..utils.metrics import write_metrics


class Context:
    def __init__(self, config: ExperimentConfig, output_dir: Path):
        self.config = config
        self.output_dir = output_dir

    def storage(self, subdirectory: str = "") -> RunStorage:
        storage = RunStorage(self.output_dir / subdirectory)
        storage.save_config(self.config)
        return storage


def pipeline_errors(func):
    """Report pipeline errors as a one-line message with exit status 1."""
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (PipelineError, FileNotFoundError) as e:
            raise click.ClickException(str(e)) from e
    return wrapper


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="Experiment TOML (or JSON echo)")
@click.option("--output-dir", envvar="DHGAT_OUTPUT_DIR", default=None, help="Where artefacts are written")
@click.option("--seed", type=int, default=None, help="Override train and split seeds")
@click.option("--log-level", default=None, help="Logging level (default from DHGAT_LOG_LEVEL)")
@click.pass_context
@pipeline_errors
def cli(ctx: click.Context, config_path: Optional[str], output_dir: Optional[str], seed: Optional[int], log_level: Optional[str]):
    """DHGAT heterogeneous-graph fake news classifier"""
    configure_logging(log_level or settings.LOG_LEVEL)
    configure_runtime(settings.DETERMINISTIC, settings.NUM_THREADS)
    if settings.DTYPE != "float64":
        logger.warning("Only float64 is supported for training; ignoring DHGAT_DTYPE")

    config = load_experiment_config(config_path)
    if seed is not None:
        config = config.model_copy(update={
            "train": config.train.model_copy(update={"seed": seed}),
            "split": config.split.model_copy(update={"seed": seed}),
        })
    directory = Path(output_dir or config.output.directory or settings.OUTPUT_DIR)
    ctx.obj = Context(config, directory)


def _finish(storage: RunStorage) -> None:
    write_metrics(storage.path("metrics.prom"))


@cli.command("build-graph")
@click.pass_obj
@pipeline_errors
def build_graph(obj: Context):
    """Ingest LIAR, embed statements and export the heterogeneous graph"""
    inputs = prepare_inputs(obj.config)
    storage = obj.storage()
    export_graph(inputs.graph, storage.path("graph.txt"))
    records_frame(inputs.records).rename_axis("node").to_csv(storage.path("records.csv"))
    summary = graph_summary(inputs.graph)
    storage.path("graph_summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    _finish(storage)
    click.echo(f"Graph with {inputs.graph.n} nodes and relations {list(inputs.graph.registry.names)}")
    for name, stats in summary.items():
        click.echo(f"  {name}: {stats['edges']} edges, mean degree {stats['mean_degree']:.2f}, {stats['isolated']} isolated")


@cli.command()
@click.option("--planted", is_flag=True, help="Train on the 200-node planted-structure graph instead of LIAR")
@click.pass_obj
@pipeline_errors
def train(obj: Context, planted: bool):
    """Train one model and write its run artefacts"""
    config = obj.config
    if planted:
        planted_graph = make_planted_graph(seed=config.graph.seed)
        graph, X, labels = planted_graph.graph, planted_graph.X, planted_graph.labels
    else:
        inputs = prepare_inputs(config)
        graph, X, labels = inputs.graph, inputs.X, inputs.labels

    split = make_split(labels, config.split)
    storage = obj.storage()
    try:
        result = train_model(
            graph, X, labels, split, config.train,
            config_snapshot=config.model_dump(),
            config_hash=config.config_hash(),
        )
    except TrainingDivergedError as e:
        if e.record is not None:
            storage.save_record(e.record)
        _finish(storage)
        raise
    storage.save_run(result)
    _finish(storage)
    metrics = result.record.metrics
    click.echo(f"{config.train.model}: accuracy {metrics.accuracy:.4f}, macro-F1 {metrics.macro_f1:.4f} ({storage.directory})")


@cli.command()
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.pass_obj
@pipeline_errors
def evaluate(obj: Context, checkpoint_path: str):
    """Score a stored checkpoint on the configured split"""
    config = obj.config
    inputs = prepare_inputs(config)
    lattice, decision_mask, forced = resolve_lattice(inputs.graph, config.train)
    model = build_model(config.train, inputs.X.shape[1], len(lattice), forced)
    restore_checkpoint(model, checkpoint_path, expected_hash=config.config_hash())

    graph = GraphInputs.build(inputs.graph, lattice, decision_mask)
    probs = predict(model, torch.as_tensor(inputs.X, dtype=DTYPE), graph, capture=False).probs.numpy()
    _, unlabeled = make_split(inputs.labels, config.split)
    metrics = evaluate_predictions(probs, inputs.labels, unlabeled)

    storage = obj.storage()
    storage.save_metrics(metrics, "evaluation.json")
    _finish(storage)
    click.echo(f"accuracy {metrics.accuracy:.4f}, macro-F1 {metrics.macro_f1:.4f} on {metrics.evaluated} nodes")


@cli.command()
@click.pass_obj
@pipeline_errors
def sweep(obj: Context):
    """Run the configured sweep grid with repeats and write the aggregate table"""
    inputs = prepare_inputs(obj.config, include_sweep_relations=True)
    result = run_sweep(inputs.graph, inputs.X, inputs.labels, obj.config)
    storage = obj.storage()
    storage.save_sweep(result)
    _finish(storage)
    for row in result.table.itertuples(index=False):
        marker = " *" if row.best else ""
        click.echo(
            f"{row.relations:<24} l1={row.lambda1:<5g} l2={row.lambda2:<5g} frac={row.fraction:<5g} {row.model:<6} "
            f"acc {row.acc_mean:.4f}±{row.acc_std:.4f}  f1 {row.f1_mean:.4f}±{row.f1_std:.4f}{marker}"
        )


@cli.command()
@click.option("--tolerance", type=float, default=1e-4, show_default=True)
@click.pass_obj
@pipeline_errors
def gradcheck(obj: Context, tolerance: float):
    """Finite-difference check of every layer and the end-to-end loss"""
    report = run_gradient_checks(seed=obj.config.train.seed, tolerance=tolerance)
    storage = obj.storage()
    storage.path("gradcheck_report.json").write_text(report.model_dump_json(indent=2), encoding="utf-8")
    _finish(storage)
    for result in report.results:
        status = "ok" if result.passed else "FAIL"
        click.echo(f"{result.name:<22} {result.max_relative_error:.3e} ({result.coordinates_checked} coords) {status}")
    if not report.passed:
        raise click.exceptions.Exit(1)


@cli.command("inspect-trace")
@click.argument("trace_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--node", type=int, default=None, help="Show one node's choices instead of the per-layer summary")
@pipeline_errors
def inspect_trace(trace_path: str, node: Optional[int]):
    """Summarise a selection_trace.csv"""
    try:
        frame = summarize_trace_file(trace_path, node)
    except ValueError as e:
        raise click.ClickException(str(e)) from e
    click.echo(frame.to_string(index=False))


def run_command(argv: Sequence[str]) -> int:
    """Run one CLI invocation in-process and return its exit status."""
    try:
        status = cli.main(args=list(argv), prog_name="dhgat", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        return 1
    return status if isinstance(status, int) else 0


if __name__ == "__main__":
    cli()
