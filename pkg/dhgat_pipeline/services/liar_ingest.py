import re
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import pandas as pd
from pydantic import ValidationError

from ..models.news import CreditHistory, NewsRecord, OrdinalLabel
from ..utils.errors import PipelineError
from ..utils.logging import logger
from ..utils.metrics import track_stage_time

LIAR_COLUMNS = [
    "id",
    "label",
    "statement",
    "subject",
    "speaker",
    "job_title",
    "state_info",
    "party_affiliation",
    "barely_true_count",
    "false_count",
    "half_true_count",
    "mostly_true_count",
    "pants_on_fire_count",
    "context",
]
CREDIT_COLUMNS = LIAR_COLUMNS[8:13]
SPLIT_FILES = ("train.tsv", "valid.tsv", "test.tsv")

_WHITESPACE = re.compile(r"\s+")
_LABELS: Dict[str, OrdinalLabel] = {label.label_name: label for label in OrdinalLabel}


class LiarParseError(PipelineError):
    def __init__(self, message: str, path: Union[str, Path], row: int):
        super().__init__(f"{path}: row {row}: {message}")
        self.path = str(path)
        self.row = row


class LabelValidationError(PipelineError):
    def __init__(self, raw: str):
        super().__init__(f"unknown label {raw!r}; expected one of {', '.join(_LABELS)}")
        self.raw = raw


def normalize_attribute(raw: str) -> str:
    """Lowercase, trim and collapse internal whitespace runs."""
    return _WHITESPACE.sub(" ", raw).strip().lower()


def remap_label(raw: str) -> OrdinalLabel:
    label = _LABELS.get(raw.strip().lower())
    if label is None:
        raise LabelValidationError(raw)
    return label


def _split_subjects(raw: str) -> frozenset:
    return frozenset(s for s in (normalize_attribute(part) for part in raw.split(",")) if s)


def _count(raw: str, column: str, path: Path, row: int) -> int:
    raw = raw.strip()
    if not raw:
        return 0
    try:
        return int(float(raw))
    except ValueError:
        raise LiarParseError(f"non-numeric {column} {raw!r}", path, row) from None


def _read_frame(path: Path) -> pd.DataFrame:
    """Split on tabs (no quoting) and check the field count of every non-blank line."""
    rows: List[List[str]] = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != len(LIAR_COLUMNS):
                raise LiarParseError(
                    f"expected {len(LIAR_COLUMNS)} columns, found {len(fields)}", path, len(rows) + 1
                )
            rows.append(fields)
    return pd.DataFrame(rows, columns=LIAR_COLUMNS, dtype=str)


@track_stage_time("ingest")
def parse_liar_tsv(path: Union[str, Path]) -> List[NewsRecord]:
    """Parse one LIAR split file (14 tab-separated columns, no header)."""
    path = Path(path)
    frame = _read_frame(path)
    records: List[NewsRecord] = []

    for position, row in enumerate(frame.itertuples(index=False), start=1):
        try:
            label = remap_label(row.label)
        except LabelValidationError as e:
            raise LiarParseError(str(e), path, position) from e

        counts = {
            column.removesuffix("_count"): _count(getattr(row, column), column, path, position)
            for column in CREDIT_COLUMNS
        }
        try:
            credit = CreditHistory(**counts)
            records.append(NewsRecord(
                id=row.id.strip(),
                statement=row.statement.strip(),
                label=label,
                speaker=normalize_attribute(row.speaker),
                subject=_split_subjects(row.subject),
                job_title=normalize_attribute(row.job_title),
                state=normalize_attribute(row.state_info),
                party=normalize_attribute(row.party_affiliation),
                context=normalize_attribute(row.context),
                credit_history=credit,
            ))
        except ValidationError as e:
            raise LiarParseError(e.errors()[0]["msg"], path, position) from e

    logger.info(f"Parsed {len(records)} records from {path}")
    return records


def resolve_corpus_paths(paths: Union[str, Path, Sequence[Union[str, Path]]]) -> List[Path]:
    if isinstance(paths, (str, Path)):
        paths = [paths]
    resolved: List[Path] = []
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            found = [path / name for name in SPLIT_FILES if (path / name).exists()]
            if not found:
                raise FileNotFoundError(f"no LIAR split files ({', '.join(SPLIT_FILES)}) in {path}")
            resolved.extend(found)
        else:
            resolved.append(path)
    return resolved


def parse_liar_corpus(paths: Union[str, Path, Sequence[Union[str, Path]]]) -> List[NewsRecord]:
    """Concatenate split files in order; ids must stay unique across files."""
    records: List[NewsRecord] = []
    for path in resolve_corpus_paths(paths):
        records.extend(parse_liar_tsv(path))

    duplicates = [record_id for record_id, count in Counter(r.id for r in records).items() if count > 1]
    if duplicates:
        raise PipelineError(f"duplicate record ids across corpus files: {', '.join(sorted(duplicates)[:10])}")

    logger.info(
        f"Loaded corpus with {len(records)} records from "
        f"{len({r.speaker for r in records if r.speaker})} speakers"
    )
    return records


def label_distribution(records: Iterable[NewsRecord]) -> Dict[OrdinalLabel, int]:
    counts = Counter(record.label for record in records)
    return {label: counts.get(label, 0) for label in OrdinalLabel}


def records_frame(records: Sequence[NewsRecord]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "id": [r.id for r in records],
            "label": [int(r.label) for r in records],
            "speaker": [r.speaker for r in records],
            "subject": [",".join(sorted(r.subject)) for r in records],
            "job_title": [r.job_title for r in records],
            "state": [r.state for r in records],
            "party": [r.party for r in records],
            "context": [r.context for r in records],
        }
    )
