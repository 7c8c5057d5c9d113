import re
import struct
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Union

import numpy as np
import pandas as pd
from sklearn.feature_extraction.text import HashingVectorizer
from sklearn.preprocessing import normalize

from ..config.experiment import EmbeddingConfig
from ..models.news import NewsRecord
from ..utils.errors import ConfigurationError, PipelineError
from ..utils.logging import logger
from ..utils.metrics import track_stage_time

BINARY_MAGIC = b"EMB1"
_TOKEN = re.compile(r"\w+|[^\w\s]")


class EmbeddingError(PipelineError):
    def __init__(self, message: str, source: str):
        super().__init__(f"{source}: {message}")
        self.source = source


class MissingEmbeddingError(EmbeddingError):
    def __init__(self, missing: Sequence[str], source: str):
        shown = ", ".join(missing[:20])
        more = f" (+{len(missing) - 20} more)" if len(missing) > 20 else ""
        super().__init__(f"no embedding for record ids: {shown}{more}", source)
        self.missing = list(missing)


class EmbeddingDimensionError(EmbeddingError):
    pass


def _check_finite(matrix: np.ndarray, source: str) -> np.ndarray:
    bad = np.flatnonzero(~np.isfinite(matrix).all(axis=1))
    if len(bad):
        raise EmbeddingError(f"non-finite values in rows {bad[:10].tolist()}", source)
    return matrix


def _read_binary(path: Path, records: Sequence[NewsRecord]) -> np.ndarray:
    payload = path.read_bytes()
    if payload[:4] != BINARY_MAGIC or len(payload) < 12:
        raise EmbeddingError("missing EMB1 header", str(path))
    n, dim = struct.unpack("<II", payload[4:12])
    expected = 12 + 4 * n * dim
    if len(payload) != expected:
        raise EmbeddingDimensionError(f"expected {expected} bytes for {n}x{dim}, found {len(payload)}", str(path))
    if n != len(records):
        raise EmbeddingError(f"binary table has {n} rows, corpus has {len(records)} records", str(path))
    # binary rows carry no ids and follow corpus order
    return np.frombuffer(payload, dtype="<f4", offset=12).reshape(n, dim).astype(np.float64)


def _read_text_table(path: Path, records: Sequence[NewsRecord]) -> np.ndarray:
    sep = "\t" if path.suffix.lower() in (".tsv", ".txt") else ","
    try:
        frame = pd.read_csv(path, sep=sep, header=None, dtype={0: str}, keep_default_na=False, na_values=[""])
    except pd.errors.ParserError as e:
        raise EmbeddingDimensionError(f"ragged rows ({e})", str(path)) from e

    ids = frame.iloc[:, 0].str.strip()
    values = frame.iloc[:, 1:].apply(pd.to_numeric, errors="coerce")
    short = values.isna().any(axis=1)
    if short.any():
        first = short.idxmax()
        raise EmbeddingDimensionError(
            f"row for id {ids[first]!r} has {int(values.loc[first].notna().sum())} values, expected {values.shape[1]}",
            str(path),
        )

    duplicated = ids[ids.duplicated()].tolist()
    if duplicated:
        raise EmbeddingError(f"duplicate ids in table: {', '.join(duplicated[:10])}", str(path))

    position: Dict[str, int] = {record_id: i for i, record_id in enumerate(ids)}
    missing = [r.id for r in records if r.id not in position]
    if missing:
        raise MissingEmbeddingError(missing, str(path))

    table = values.to_numpy(dtype=np.float64)
    return table[[position[r.id] for r in records]]


@track_stage_time("embed")
def load_embedding_table(path: Union[str, Path], records: Sequence[NewsRecord]) -> np.ndarray:
    """Load precomputed vectors; row i of the result belongs to records[i]."""
    path = Path(path)
    with path.open("rb") as handle:
        magic = handle.read(4)
    matrix = _read_binary(path, records) if magic == BINARY_MAGIC else _read_text_table(path, records)
    logger.info(f"Loaded {matrix.shape[0]}x{matrix.shape[1]} embedding table from {path}")
    return _check_finite(matrix, str(path))


def write_embedding_table(matrix: np.ndarray, records: Sequence[NewsRecord], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".bin":
        n, dim = matrix.shape
        with path.open("wb") as handle:
            handle.write(BINARY_MAGIC + struct.pack("<II", n, dim))
            handle.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())
        return
    frame = pd.DataFrame(matrix)
    frame.insert(0, "id", [r.id for r in records])
    sep = "\t" if path.suffix.lower() in (".tsv", ".txt") else ","
    frame.to_csv(path, sep=sep, header=False, index=False, float_format="%.17g")


@track_stage_time("embed")
def fallback_hash_embed(records: Sequence[NewsRecord], dim: int = 300, seed: int = 0) -> np.ndarray:
    """Signed hashing of character 3-5-grams, seeded column permutation, unit rows."""
    if dim < 8:
        raise ConfigurationError(f"fallback embedding needs dim >= 8, got {dim}", key="embedding.dim")

    vectorizer = HashingVectorizer(
        analyzer="char_wb",
        ngram_range=(3, 5),
        n_features=dim,
        alternate_sign=True,
        norm=None,
        lowercase=True,
        dtype=np.float64,
    )
    hashed = vectorizer.transform([r.statement for r in records]).toarray()

    rng = np.random.default_rng(seed)
    permutation = rng.permutation(dim)
    signs = rng.choice(np.array([-1.0, 1.0]), size=dim)
    matrix = hashed[:, permutation] * signs

    # all n-grams cancelling out is possible in principle; pin such rows to a basis vector
    for row in np.flatnonzero(~matrix.any(axis=1)):
        matrix[row, len(records[row].statement) % dim] = 1.0

    return normalize(matrix, norm="l2")


def _tokens(text: str) -> List[str]:
    return _TOKEN.findall(text.lower())


@track_stage_time("embed")
def embed_with_word_vectors(
    records: Sequence[NewsRecord],
    path: Union[str, Path],
    dim: int = 300,
    seed: int = 0,
) -> np.ndarray:
    """Sentence vectors as the mean of unit-normalised word vectors (text .vec format)."""
    path = Path(path)
    tokenized = [_tokens(r.statement) for r in records]
    vocabulary: Set[str] = {token for tokens in tokenized for token in tokens}
    vectors: Dict[str, np.ndarray] = {}

    with path.open(encoding="utf-8", errors="replace") as handle:
        for line_number, line in enumerate(handle, start=1):
            parts = line.rstrip().split(" ")
            if line_number == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            if parts[0] not in vocabulary:
                continue
            if len(parts) - 1 != dim:
                raise EmbeddingDimensionError(f"line {line_number} has {len(parts) - 1} values, expected {dim}", str(path))
            vector = np.asarray(parts[1:], dtype=np.float64)
            norm = np.linalg.norm(vector)
            if norm > 0:
                vectors[parts[0]] = vector / norm

    matrix = np.zeros((len(records), dim), dtype=np.float64)
    uncovered: List[int] = []
    for i, tokens in enumerate(tokenized):
        known = [vectors[t] for t in tokens if t in vectors]
        if known:
            matrix[i] = np.mean(known, axis=0)
        else:
            uncovered.append(i)

    if uncovered:
        logger.warning(f"{len(uncovered)} statements have no known word; using hashed fallback rows")
        matrix[uncovered] = fallback_hash_embed([records[i] for i in uncovered], dim=dim, seed=seed)

    logger.info(f"Built {len(records)}x{dim} sentence vectors from {len(vectors)} word vectors in {path}")
    return _check_finite(matrix, str(path))


class EmbeddingService:
    """Dispatches an embedding config to the matching feature source."""

    def __init__(self, config: EmbeddingConfig):
        self.config = config

    def load(self, records: Sequence[NewsRecord]) -> np.ndarray:
        source = self.config.source
        if source == "file":
            return load_embedding_table(self.config.path, records)
        if source == "word_vectors":
            return embed_with_word_vectors(records, self.config.path, dim=self.config.dim, seed=self.config.seed)
        logger.warning("No pre-trained vectors configured; using the hashed fallback embedder")
        return fallback_hash_embed(records, dim=self.config.dim, seed=self.config.seed)


def knn_indices(X: np.ndarray, k: int, block_size: int = 1024) -> np.ndarray:
    """k most cosine-similar rows per row, self excluded, ties to the lower index."""
    n = X.shape[0]
    if k <= 0 or k >= n:
        raise ConfigurationError(f"knn needs 1 <= k < n (k={k}, n={n})", key="graph.relations")

    norms = np.linalg.norm(X, axis=1, keepdims=True)
    unit = np.divide(X, norms, out=np.zeros_like(X, dtype=np.float64), where=norms > 0)
    neighbours = np.empty((n, k), dtype=np.int64)

    for start in range(0, n, block_size):
        stop = min(start + block_size, n)
        similarity = unit[start:stop] @ unit.T
        similarity[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        # stable sort keeps equal similarities in ascending column order
        order = np.argsort(-similarity, axis=1, kind="stable")
        neighbours[start:stop] = order[:, :k]

    return neighbours


@track_stage_time("knn")
def build_knn_relation(X: np.ndarray, k: int) -> np.ndarray:
    """Symmetrised, deduplicated directed edge list (m, 2) of the k-NN graph."""
    neighbours = knn_indices(X, k)
    n = X.shape[0]
    src = np.repeat(np.arange(n, dtype=np.int64), k)
    dst = neighbours.reshape(-1)
    edges = np.concatenate([np.stack([src, dst], axis=1), np.stack([dst, src], axis=1)])
    edges = np.unique(edges, axis=0)
    logger.info(f"Built knn-{k} relation with {len(edges) // 2} undirected edges")
    return edges
