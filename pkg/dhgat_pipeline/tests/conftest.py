import numpy as np
import pytest
import torch

from ..services.hetero_graph import HeteroGraph

LIAR_ROWS = [
    ["2635.json", "false", "Says the Annies List political group supports third-trimester abortions on demand.",
     "abortion", "dwayne-bohac", "State representative", "Texas", "republican",
     "0", "1", "0", "0", "0", "a mailer"],
    ["10540.json", "half-true", "When did the decline of coal start? It started when natural gas took off.",
     "energy,history,job-accomplishments", "scott-surovell", "State delegate", "Virginia", "democrat",
     "0", "0", "1", "1", "0", "a floor speech."],
    ["324.json", "mostly-true", "Hillary Clinton agrees with John McCain by voting to give George Bush the benefit of the doubt on Iran.",
     "foreign-policy", "barack-obama", "President", "Illinois", "democrat",
     "70", "71", "160", "163", "9", "Denver"],
    ["1123.json", "pants-fire", "Health care reform legislation is likely to mandate free sex change surgeries.",
     "health-care", "blog-posting", "", "", "none",
     "7", "19", "3", "5", "44", "a news release"],
    ["9028.json", "true", "The Chicago Bears have had more starting quarterbacks than the total number of tenured professors.",
     "education", "robin-vos", "Wisconsin Assembly speaker", "Wisconsin", "republican",
     "0", "3", "2", "5", "1", "an interview"],
    ["12465.json", "barely-true", "Jim Dunnam has not lived in the district he represents for years now.",
     "candidates-biography,health-care", "donald-mceachin", "State senator", "Virginia", "democrat",
     "0", "0", "0", "1", "0", "a floor speech."],
]


def write_tsv(path, rows):
    path.write_text("\n".join("\t".join(row) for row in rows) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def liar_rows():
    return [list(row) for row in LIAR_ROWS]


@pytest.fixture
def liar_file(tmp_path, liar_rows):
    return write_tsv(tmp_path / "train.tsv", liar_rows)


@pytest.fixture
def two_relation_graph():
    """6 nodes: speaker joins 0-1, 1-2, 3-4; context joins 1-3, 2-5, 0-1."""
    return HeteroGraph.from_edges(6, {
        "speaker": np.array([[0, 1], [1, 2], [3, 4]]),
        "context": np.array([[1, 3], [2, 5], [0, 1]]),
    })


@pytest.fixture
def random_graph():
    def build(n=50, relations=("speaker", "context", "subject"), edges=80, seed=0):
        rng = np.random.default_rng(seed)
        return HeteroGraph.from_edges(n, {name: rng.integers(0, n, size=(edges, 2)) for name in relations})
    return build


@pytest.fixture
def generator():
    return torch.Generator().manual_seed(0)
