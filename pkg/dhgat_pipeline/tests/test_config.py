from pathlib import Path

import pytest

from ..config.experiment import (
    ExperimentConfig,
    RelationOptions,
    SweepConfig,
    load_experiment_config,
    parse_experiment_config,
)
from ..utils.errors import ConfigurationError

EXPERIMENT_TOML = """
[data]
paths = ["data/liar/train.tsv"]

[embedding]
source = "fallback"
dim = 64

[graph]
relations = [{ name = "speaker" }, { name = "party" }, { name = "knn-5" }]

[train]
model = "dhgat"
hidden = [16, 8]
heads = 2
epochs = 40
lambda2 = 0.5

[split]
labeled_fraction = 0.1
seed = 4

[sweep]
lambda_values = [0, 1]
repeats = 3
"""


def write(tmp_path, text, name="experiment.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_toml_sections(tmp_path):
    config = load_experiment_config(write(tmp_path, EXPERIMENT_TOML))

    assert config.graph.relation_names == ["speaker", "party", "knn-5"]
    assert config.graph.relations[2].knn_k == 5
    assert config.train.hidden == [16, 8]
    assert config.train.num_layers == 2
    assert config.split.labeled_fraction == 0.1
    assert config.sweep.lambda_grid == [(0, 1), (1, 0), (1, 1)]


def test_example_config_matches_defaults():
    example = Path(__file__).resolve().parents[2] / "experiment.example.toml"
    assert load_experiment_config(example).model_dump() == ExperimentConfig().model_dump()


def test_no_path_gives_defaults():
    config = load_experiment_config(None)
    assert config == ExperimentConfig()
    assert config.train.lambda1 == 1.0
    assert config.train.lambda2 == 0.25


def test_party_and_state_are_capped_by_default():
    assert RelationOptions(name="party").max_degree == 100
    assert RelationOptions(name="state").max_degree == 100
    assert RelationOptions(name="speaker").max_degree is None
    assert RelationOptions(name="party", max_degree=7).max_degree == 7


def test_json_echo_round_trip(tmp_path):
    config = load_experiment_config(write(tmp_path, EXPERIMENT_TOML))
    echo = write(tmp_path, config.model_dump_json(indent=2), "resolved_config.json")

    again = load_experiment_config(echo)

    assert again.model_dump() == config.model_dump()
    assert again.config_hash() == config.config_hash()


@pytest.mark.parametrize("raw,key", [
    ({"train": {"hiden": [8]}}, "train.hiden"),
    ({"train": {"heads": 0}}, "train.heads"),
    ({"train": {"hidden": []}}, "train.hidden"),
    ({"train": {"hidden": [6, 4], "heads": 4}}, "train"),
    ({"train": {"lambda1": 0, "lambda2": 0}}, "train"),
    ({"split": {"labeled_fraction": 1.0}}, "split.labeled_fraction"),
    ({"graph": {"relations": [{"name": "hometown"}]}}, "graph.relations.0.name"),
    ({"graph": {"relations": [{"name": "knn-0"}]}}, "graph.relations.0.name"),
    ({"graph": {"relations": []}}, "graph.relations"),
    ({"embedding": {"source": "file"}}, "embedding"),
])
def test_invalid_values_name_their_key(raw, key):
    with pytest.raises(ConfigurationError) as exc:
        parse_experiment_config(raw)
    assert exc.value.key == key
    assert str(exc.value).startswith(f"{key}:")


def test_relation_names_are_normalised():
    config = parse_experiment_config({"graph": {"relations": [{"name": " Job-Title "}]}})
    assert config.graph.relation_names == ["job-title"]


def test_unparsable_file(tmp_path):
    with pytest.raises(ConfigurationError) as exc:
        load_experiment_config(write(tmp_path, "[train\nepochs = 3"))
    assert exc.value.key == "--config"


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_experiment_config(tmp_path / "absent.toml")


def test_check_paths_names_missing_input(tmp_path):
    config = parse_experiment_config({"data": {"paths": [str(tmp_path / "missing.tsv")]}})
    with pytest.raises(ConfigurationError) as exc:
        config.check_paths()
    assert exc.value.key == "data.paths.0"


def test_sweep_axes():
    assert SweepConfig().is_empty
    assert len(SweepConfig(lambda_values=[0, 0.5, 1, 2, 3]).lambda_grid) == 24
    with pytest.raises(ValueError):
        SweepConfig(fractions=[0.0])
