import pytest

from ..models.news import OrdinalLabel
from ..services.liar_ingest import (
    LabelValidationError,
    LiarParseError,
    label_distribution,
    normalize_attribute,
    parse_liar_corpus,
    parse_liar_tsv,
    records_frame,
    remap_label,
)
from ..utils.errors import PipelineError
from .conftest import write_tsv


def test_remap_label_follows_veracity_scale():
    assert remap_label("pants-fire") == 0
    assert remap_label("TRUE") == 5
    assert [remap_label(name) for name in OrdinalLabel.names()] == list(range(6))
    for label in OrdinalLabel:
        assert remap_label(label.label_name) is label


def test_remap_label_rejects_unknown():
    with pytest.raises(LabelValidationError):
        remap_label("half-truth")


@pytest.mark.parametrize("raw,expected", [
    ("  President ", "president"),
    ("State senator", "state senator"),
    ("State \t  senator", "state senator"),
    ("", ""),
])
def test_normalize_attribute(raw, expected):
    assert normalize_attribute(raw) == expected


def test_parse_liar_tsv(liar_file):
    records = parse_liar_tsv(liar_file)

    assert len(records) == 6
    obama = records[2]
    assert obama.speaker == "barack-obama"
    assert obama.job_title == "president"
    assert obama.party == "democrat"
    assert obama.label == OrdinalLabel.MOSTLY_TRUE
    assert obama.credit_history.as_tuple() == (70, 71, 160, 163, 9)
    assert records[1].subject == frozenset({"energy", "history", "job-accomplishments"})


def test_empty_cells_become_empty_attributes(liar_file):
    record = parse_liar_tsv(liar_file)[3]
    assert record.job_title == ""
    assert record.state == ""


def test_parse_is_deterministic(liar_file):
    assert parse_liar_tsv(liar_file) == parse_liar_tsv(liar_file)


def test_short_row_reports_row_number(tmp_path, liar_rows):
    liar_rows[4] = liar_rows[4][:3]
    path = write_tsv(tmp_path / "bad.tsv", liar_rows)

    with pytest.raises(LiarParseError) as exc:
        parse_liar_tsv(path)
    assert exc.value.row == 5


def test_three_field_row_is_not_padded(tmp_path, liar_rows):
    path = write_tsv(tmp_path / "bad.tsv", [liar_rows[0], ["2.json", "false", "Only three"]])

    with pytest.raises(LiarParseError, match="expected 14 columns, found 3") as exc:
        parse_liar_tsv(path)
    assert exc.value.row == 2


def test_long_first_row_reports_column_count(tmp_path, liar_rows):
    liar_rows[0] = ["extra"] + liar_rows[0]
    path = write_tsv(tmp_path / "bad.tsv", liar_rows)

    with pytest.raises(LiarParseError, match="found 15") as exc:
        parse_liar_tsv(path)
    assert exc.value.row == 1


def test_blank_lines_are_skipped(tmp_path, liar_rows):
    path = tmp_path / "gaps.tsv"
    path.write_text("\n".join("\t".join(row) for row in liar_rows[:2]) + "\n\n", encoding="utf-8")
    assert [r.id for r in parse_liar_tsv(path)] == [liar_rows[0][0], liar_rows[1][0]]


def test_unknown_label_reports_row(tmp_path, liar_rows):
    liar_rows[1][1] = "half-truth"
    path = write_tsv(tmp_path / "bad.tsv", liar_rows)

    with pytest.raises(LiarParseError) as exc:
        parse_liar_tsv(path)
    assert exc.value.row == 2
    assert "half-truth" in str(exc.value)


def test_negative_credit_count_is_rejected(tmp_path, liar_rows):
    liar_rows[0][8] = "-1"
    with pytest.raises(LiarParseError):
        parse_liar_tsv(write_tsv(tmp_path / "bad.tsv", liar_rows))


def test_corpus_directory_concatenates_splits(tmp_path, liar_rows):
    write_tsv(tmp_path / "train.tsv", liar_rows[:3])
    write_tsv(tmp_path / "valid.tsv", liar_rows[3:5])
    write_tsv(tmp_path / "test.tsv", liar_rows[5:])

    records = parse_liar_corpus(tmp_path)

    assert [r.id for r in records] == [row[0] for row in liar_rows]
    distribution = label_distribution(records)
    assert sum(distribution.values()) == len(records)
    assert all(count == 1 for count in distribution.values())


def test_corpus_rejects_duplicate_ids(tmp_path, liar_rows):
    first = write_tsv(tmp_path / "a.tsv", liar_rows)
    second = write_tsv(tmp_path / "b.tsv", liar_rows[:1])
    with pytest.raises(PipelineError, match="duplicate"):
        parse_liar_corpus([first, second])


def test_records_frame(liar_file):
    frame = records_frame(parse_liar_tsv(liar_file))
    assert list(frame["label"]) == [1, 3, 4, 0, 5, 2]
    assert frame.loc[5, "subject"] == "candidates-biography,health-care"
