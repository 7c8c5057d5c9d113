from pathlib import Path
from typing import Dict, List, Union

import numpy as np
import scipy.sparse as sp

from ..config.experiment import validate_relation_name
from ..utils.logging import logger
from .hetero_graph import GraphError, HeteroGraph


class GraphFormatError(GraphError):
    def __init__(self, message: str, path: Union[str, Path], line: int):
        super().__init__(f"{path}: line {line}: {message}")
        self.path = str(path)
        self.line = line


def export_graph(g: HeteroGraph, path: Union[str, Path]) -> None:
    """Write "n <count>", then per relation "relation <name>" and one "edge u v" line per undirected edge (u < v)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        handle.write(f"n {g.n}\n")
        for name in g.registry.names:
            handle.write(f"relation {name}\n")
            upper = sp.triu(g.adjacency(name), k=1).tocsr()
            upper.sort_indices()
            for u in range(g.n):
                for v in upper.indices[upper.indptr[u]:upper.indptr[u + 1]]:
                    handle.write(f"edge {u} {v}\n")
    logger.info(f"Exported graph with {g.n} nodes and {len(g.registry)} relations to {path}")


def import_graph(path: Union[str, Path]) -> HeteroGraph:
    path = Path(path)
    n = None
    current = None
    edges: Dict[str, List[List[int]]] = {}

    with path.open(encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            parts = raw.split()
            if not parts:
                continue
            keyword = parts[0]
            if keyword == "n" and len(parts) == 2 and n is None:
                try:
                    n = int(parts[1])
                except ValueError:
                    raise GraphFormatError(f"bad node count {parts[1]!r}", path, line_number) from None
                if n < 1:
                    raise GraphFormatError("node count must be positive", path, line_number)
            elif n is None:
                raise GraphFormatError("file must start with an 'n <count>' line", path, line_number)
            elif keyword == "relation" and len(parts) == 2:
                try:
                    current = validate_relation_name(parts[1])
                except ValueError as e:
                    raise GraphFormatError(str(e), path, line_number) from None
                if current in edges:
                    raise GraphFormatError(f"relation {current!r} declared twice", path, line_number)
                edges[current] = []
            elif keyword == "edge" and len(parts) == 3:
                if current is None:
                    raise GraphFormatError("edge before any relation line", path, line_number)
                try:
                    u, v = int(parts[1]), int(parts[2])
                except ValueError:
                    raise GraphFormatError(f"bad edge {raw.strip()!r}", path, line_number) from None
                if not (0 <= u < n and 0 <= v < n):
                    raise GraphFormatError(f"edge endpoint outside 0..{n - 1}", path, line_number)
                edges[current].append([u, v])
            else:
                raise GraphFormatError(f"unrecognised line {raw.strip()!r}", path, line_number)

    if n is None:
        raise GraphFormatError("empty graph file", path, 0)
    if not edges:
        raise GraphFormatError("graph declares no relations", path, 0)
    return HeteroGraph.from_edges(
        n, {name: np.asarray(pairs, dtype=np.int64).reshape(-1, 2) for name, pairs in edges.items()}
    )
