import numpy as np
import pytest
import torch

from ..config.experiment import SplitSpec, TrainConfig
from ..models.run import RunStatus
from ..networks.checkpoint import CheckpointError, restore_checkpoint, save_checkpoint
from ..networks.dhgat import GCNNetwork
from ..services.run_storage import RunStorage, load_run_record
from ..services.synthetic import make_planted_graph
from ..services.training import (
    SplitError,
    TrainingDivergedError,
    build_model,
    make_split,
    predict,
    resolve_lattice,
    tau_at,
    train_model,
)
from ..utils.errors import ConfigurationError


def small_config(**overrides):
    values = dict(hidden=[8, 4], heads=2, epochs=5, lr=0.01, dropout=0.2, log_every=100, seed=3)
    values.update(overrides)
    return TrainConfig(**values)


@pytest.fixture(scope="module")
def planted():
    return make_planted_graph(n=48, num_classes=4, dim=8, seed=1)


@pytest.fixture(scope="module")
def planted_split(planted):
    return make_split(planted.labels, SplitSpec(labeled_fraction=0.25, seed=0))


def test_split_is_stratified_partition():
    labels = np.repeat(np.arange(6), 10)
    labeled, unlabeled = make_split(labels, SplitSpec(labeled_fraction=0.3, seed=2))

    assert len(labeled) == 18
    assert np.all(np.bincount(labels[labeled], minlength=6) == 3)
    assert set(labeled).isdisjoint(unlabeled)
    assert sorted(np.concatenate([labeled, unlabeled]).tolist()) == list(range(60))


def test_split_depends_only_on_seed():
    labels = np.repeat(np.arange(6), 10)
    first = make_split(labels, SplitSpec(labeled_fraction=0.3, seed=7))
    second = make_split(labels, SplitSpec(labeled_fraction=0.3, seed=7))
    other = make_split(labels, SplitSpec(labeled_fraction=0.3, seed=8))

    assert np.array_equal(first[0], second[0])
    assert not np.array_equal(first[0], other[0])


def test_split_unstratified_rounds_half_up():
    labeled, unlabeled = make_split(np.zeros(10, dtype=int), SplitSpec(labeled_fraction=0.25, stratified=False))
    assert len(labeled) == 3
    assert len(unlabeled) == 7


def test_split_rejects_class_without_labeled_nodes():
    labels = np.array([0] * 10 + [1])
    with pytest.raises(SplitError):
        make_split(labels, SplitSpec(labeled_fraction=0.3))


def test_split_rejects_empty_unlabeled_set():
    with pytest.raises(SplitError):
        make_split(np.array([0, 0, 1, 1]), SplitSpec(labeled_fraction=0.9))


def test_tau_schedule():
    constant = TrainConfig(tau=0.7)
    assert tau_at(constant, 1) == tau_at(constant, 200) == 0.7

    annealed = TrainConfig(tau=1.0, tau_min=0.1, anneal_tau=True, epochs=11)
    assert tau_at(annealed, 1) == 1.0
    assert tau_at(annealed, 6) == pytest.approx(0.55)
    assert tau_at(annealed, 11) == pytest.approx(0.1)


def test_resolve_lattice_names(planted):
    cfg = TrainConfig(force_selection=["speaker"], decision_type=["context"])
    lattice, decision_mask, forced = resolve_lattice(planted.graph, cfg)

    assert lattice.names[forced] == "speaker"
    assert decision_mask == planted.graph.registry.mask_of(["context"])
    with pytest.raises(ConfigurationError):
        resolve_lattice(planted.graph, TrainConfig(force_selection=["party"]))


def test_training_is_deterministic(planted, planted_split):
    first = train_model(planted.graph, planted.X, planted.labels, planted_split, small_config())
    second = train_model(planted.graph, planted.X, planted.labels, planted_split, small_config())

    assert [e.loss for e in first.record.loss_curve] == [e.loss for e in second.record.loss_curve]
    assert np.array_equal(first.probs, second.probs)
    assert first.record.metrics == second.record.metrics


def test_training_record_contents(planted, planted_split):
    result = train_model(planted.graph, planted.X, planted.labels, planted_split, small_config(trace_epochs=[1, 5]))

    assert len(result.record.loss_curve) == 5
    assert all(np.isfinite(e.loss) for e in result.record.loss_curve)
    assert set(result.traces) == {"epoch-1", "epoch-5", "eval"}
    assert result.record.labeled == len(planted_split[0])
    assert result.record.metrics.evaluated == len(planted_split[1])
    assert np.allclose(result.probs.sum(axis=1), 1.0)
    assert result.record.selection.type_names == result.lattice.names


def test_unlabeled_labels_never_reach_the_loss(planted, planted_split):
    labeled, unlabeled = planted_split
    poisoned = planted.labels.copy()
    poisoned[unlabeled] = (poisoned[unlabeled] + 3) % 6

    clean = train_model(planted.graph, planted.X, planted.labels, planted_split, small_config())
    dirty = train_model(planted.graph, planted.X, poisoned, planted_split, small_config())

    assert [e.loss for e in clean.record.loss_curve] == [e.loss for e in dirty.record.loss_curve]
    assert np.array_equal(clean.probs, dirty.probs)


def test_forced_union_trains_like_gatv2(planted, planted_split):
    forced = train_model(
        planted.graph, planted.X, planted.labels, planted_split,
        small_config(force_selection=["speaker", "context"], lambda2=0.0),
    )
    gat = train_model(
        planted.graph, planted.X, planted.labels, planted_split,
        small_config(model="gatv2", lambda2=0.0),
    )

    assert np.allclose(
        [e.loss for e in forced.record.loss_curve], [e.loss for e in gat.record.loss_curve], atol=1e-9
    )


@pytest.mark.parametrize("model", ["gatv2", "gcn"])
def test_baselines_train(planted, planted_split, model):
    result = train_model(planted.graph, planted.X, planted.labels, planted_split, small_config(model=model))
    assert result.record.model == model
    assert result.record.selection is None
    assert all(e.tau is None for e in result.record.loss_curve)


def test_non_finite_loss_raises(planted, planted_split):
    X = planted.X.copy()
    X[0, 0] = np.nan
    with pytest.raises(TrainingDivergedError) as exc:
        train_model(planted.graph, X, planted.labels, planted_split, small_config())
    assert exc.value.epoch == 1
    assert exc.value.parameter_norms

    record = exc.value.record
    assert record.status == RunStatus.FAILED
    assert record.error_message == str(exc.value)
    assert record.metrics is None


def test_failed_record_round_trips_through_storage(tmp_path, planted, planted_split):
    X = planted.X.copy()
    X[3, 1] = np.nan
    with pytest.raises(TrainingDivergedError) as exc:
        train_model(planted.graph, X, planted.labels, planted_split, small_config())

    stored = load_run_record(RunStorage(tmp_path).save_record(exc.value.record))
    assert stored.status == RunStatus.FAILED
    assert "non-finite loss" in stored.error_message


def test_mismatched_inputs_are_rejected(planted, planted_split):
    with pytest.raises(ConfigurationError):
        train_model(planted.graph, planted.X[:10], planted.labels, planted_split, small_config())


def test_checkpoint_round_trip(tmp_path, planted, planted_split):
    cfg = small_config()
    result = train_model(planted.graph, planted.X, planted.labels, planted_split, cfg)
    save_checkpoint(result.model, tmp_path / "checkpoint.npz", {"model": "dhgat", "config_hash": "abc"})

    _, _, forced = resolve_lattice(planted.graph, cfg)
    fresh = build_model(cfg.model_copy(update={"seed": 99}), planted.X.shape[1], len(result.lattice), forced)
    manifest = restore_checkpoint(fresh, tmp_path / "checkpoint.npz", expected_hash="abc")
    restored = predict(fresh, torch.as_tensor(planted.X), result.graph)

    assert manifest["config_hash"] == "abc"
    assert np.array_equal(restored.probs.numpy(), result.probs)


def test_checkpoint_rejects_other_model_kind(tmp_path, planted, planted_split):
    result = train_model(planted.graph, planted.X, planted.labels, planted_split, small_config())
    save_checkpoint(result.model, tmp_path / "checkpoint.npz", {"model": "dhgat"})
    with pytest.raises(CheckpointError):
        restore_checkpoint(GCNNetwork(8, [8, 4]), tmp_path / "checkpoint.npz")


@pytest.mark.slow
def test_planted_relation_is_selected():
    planted = make_planted_graph(n=200, num_classes=4, dim=16, seed=0)
    split = make_split(planted.labels, SplitSpec(labeled_fraction=0.3, seed=0))
    cfg = TrainConfig(hidden=[32, 16], heads=2, lr=0.01, dropout=0.0, epochs=200, log_every=50, seed=0)

    dhgat = train_model(planted.graph, planted.X, planted.labels, split, cfg)
    gcn = train_model(planted.graph, planted.X, planted.labels, split, cfg.model_copy(update={"model": "gcn"}))

    eval_trace = dhgat.traces["eval"]
    last_layer = eval_trace.num_layers - 1
    assert eval_trace.fraction_containing(last_layer, dhgat.lattice, planted.signal_relation) >= 0.8
    assert dhgat.record.metrics.accuracy >= 0.9
    assert gcn.record.metrics.accuracy < dhgat.record.metrics.accuracy
