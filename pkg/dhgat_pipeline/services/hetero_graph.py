"""Heterogeneous news graph: one symmetric CSR adjacency per relation plus the neighbourhood lattice."""
import zlib
from dataclasses import dataclass
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from ..config.experiment import ATTRIBUTE_RELATIONS, RelationOptions
from ..models.news import NewsRecord
from ..utils.errors import ConfigurationError, PipelineError
from ..utils.logging import logger
from ..utils.metrics import track_stage_time
from .embedding_service import build_knn_relation

RECORD_FIELDS = {
    "speaker": "speaker",
    "context": "context",
    "subject": "subject",
    "party": "party",
    "job-title": "job_title",
    "state": "state",
}


class GraphError(PipelineError):
    pass


class RelationRegistry:
    """Ordered relation names; a relation's id is its position."""

    def __init__(self, names: Iterable[str]):
        self.names: Tuple[str, ...] = tuple(names)
        if not self.names:
            raise GraphError("a graph needs at least one relation")
        if len(set(self.names)) != len(self.names):
            raise GraphError(f"duplicate relation names: {self.names}")
        self.index: Dict[str, int] = {name: i for i, name in enumerate(self.names)}

    def __len__(self) -> int:
        return len(self.names)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RelationRegistry) and self.names == other.names

    def __repr__(self) -> str:
        return f"RelationRegistry({list(self.names)})"

    @property
    def full_mask(self) -> int:
        return (1 << len(self.names)) - 1

    def mask_of(self, names: Iterable[str]) -> int:
        mask = 0
        for name in names:
            if name not in self.index:
                raise GraphError(f"relation {name!r} is not in {list(self.names)}")
            mask |= 1 << self.index[name]
        return mask


@dataclass(frozen=True)
class NeighborhoodType:
    mask: int

    def relations(self, registry: RelationRegistry) -> List[str]:
        return [name for i, name in enumerate(registry.names) if self.mask >> i & 1]

    def name(self, registry: RelationRegistry) -> str:
        return "+".join(self.relations(registry)) or "none"

    def __contains__(self, relation_id: int) -> bool:
        return bool(self.mask >> relation_id & 1)


class NeighborhoodLattice:
    """The candidate neighbourhood types Γ, index 0 always the empty type."""

    def __init__(self, registry: RelationRegistry, types: Sequence[NeighborhoodType]):
        masks = [t.mask for t in types]
        if not masks or masks[0] != 0:
            raise GraphError("the empty neighbourhood type must sit at index 0")
        if len(set(masks)) != len(masks):
            raise GraphError("neighbourhood types must be distinct")
        if any(m & ~registry.full_mask for m in masks):
            raise GraphError("neighbourhood type refers to unknown relations")
        self.registry = registry
        self.types: Tuple[NeighborhoodType, ...] = tuple(types)
        self._position = {m: i for i, m in enumerate(masks)}

    def __len__(self) -> int:
        return len(self.types)

    def __getitem__(self, index: int) -> NeighborhoodType:
        return self.types[index]

    @property
    def names(self) -> List[str]:
        return [t.name(self.registry) for t in self.types]

    def index_of(self, mask: int) -> int:
        if mask not in self._position:
            raise GraphError(f"neighbourhood mask {mask:b} is not in the lattice")
        return self._position[mask]

    def index_of_relations(self, names: Iterable[str]) -> int:
        return self.index_of(self.registry.mask_of(names))

    def compatibility(self, relation_masks: np.ndarray) -> np.ndarray:
        """(|Γ|, len(relation_masks)) 0/1 matrix: type γ activates an edge with mask m iff γ ∩ m ≠ ∅."""
        type_masks = np.array([t.mask for t in self.types], dtype=np.int64)
        return ((type_masks[:, None] & relation_masks[None, :]) != 0).astype(np.float64)


def enumerate_lattice(registry: RelationRegistry, mode: Literal["full", "restricted"] = "full") -> NeighborhoodLattice:
    r = len(registry)
    if mode == "full":
        masks = sorted(range(1 << r), key=lambda m: (bin(m).count("1"), m))
    elif mode == "restricted":
        masks = [0] + [1 << i for i in range(r)]
        if registry.full_mask not in masks:
            masks.append(registry.full_mask)
    else:
        raise ConfigurationError(f"unknown lattice mode {mode!r}", key="train.lattice")
    return NeighborhoodLattice(registry, [NeighborhoodType(m) for m in masks])


def _symmetric_csr(n: int, edges: np.ndarray) -> sp.csr_matrix:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) and (edges.min() < 0 or edges.max() >= n):
        raise GraphError(f"edge endpoint outside 0..{n - 1}")
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    keep = rows != cols
    matrix = sp.coo_matrix(
        (np.ones(int(keep.sum()), dtype=np.int32), (rows[keep], cols[keep])), shape=(n, n)
    ).tocsr()
    matrix.sum_duplicates()
    matrix.data[:] = 1
    matrix.sort_indices()
    return matrix


class HeteroGraph:
    """n news nodes, one symmetric self-loop-free CSR adjacency per relation."""

    def __init__(self, n: int, registry: RelationRegistry, adjacency: Mapping[str, sp.csr_matrix]):
        if set(adjacency) != set(registry.names):
            raise GraphError("adjacency keys must match the relation registry")
        for name, matrix in adjacency.items():
            if matrix.shape != (n, n):
                raise GraphError(f"relation {name!r} has shape {matrix.shape}, expected {(n, n)}")
        self.n = n
        self.registry = registry
        self._adjacency = {name: adjacency[name] for name in registry.names}
        self._unions: Dict[int, sp.csr_matrix] = {}

    @classmethod
    def from_edges(cls, n: int, relations: Mapping[str, np.ndarray]) -> "HeteroGraph":
        registry = RelationRegistry(relations.keys())
        return cls(n, registry, {name: _symmetric_csr(n, edges) for name, edges in relations.items()})

    def adjacency(self, relation: str) -> sp.csr_matrix:
        return self._adjacency[relation]

    def edge_count(self, relation: Optional[str] = None) -> int:
        """Undirected edge count of one relation, or of the union of all."""
        matrix = self._adjacency[relation] if relation else self.union(self.registry.full_mask)
        return matrix.nnz // 2

    def union(self, mask: int) -> sp.csr_matrix:
        if mask & ~self.registry.full_mask:
            raise GraphError(f"mask {mask:b} refers to unknown relations")
        if mask not in self._unions:
            merged = sp.csr_matrix((self.n, self.n), dtype=np.int32)
            for i, name in enumerate(self.registry.names):
                if mask >> i & 1:
                    merged = merged + self._adjacency[name]
            merged = merged.tocsr()
            merged.data[:] = 1
            merged.sort_indices()
            self._unions[mask] = merged
        return self._unions[mask]

    def restrict(self, names: Sequence[str]) -> "HeteroGraph":
        missing = [name for name in names if name not in self._adjacency]
        if missing:
            raise GraphError(f"relations {missing} are not in {list(self.registry.names)}")
        return HeteroGraph(self.n, RelationRegistry(names), {name: self._adjacency[name] for name in names})

    def typed_edge_index(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Union edges as (dst, src, relation bitmask), sorted by (dst, src)."""
        keys, bits = [], []
        for i, name in enumerate(self.registry.names):
            coo = self._adjacency[name].tocoo()
            keys.append(coo.row.astype(np.int64) * self.n + coo.col.astype(np.int64))
            bits.append(np.full(coo.nnz, 1 << i, dtype=np.int64))
        keys_all = np.concatenate(keys)
        bits_all = np.concatenate(bits)
        if not len(keys_all):
            empty = np.empty(0, dtype=np.int64)
            return empty, empty, empty

        order = np.argsort(keys_all, kind="stable")
        keys_all, bits_all = keys_all[order], bits_all[order]
        starts = np.flatnonzero(np.r_[True, keys_all[1:] != keys_all[:-1]])
        unique_keys = keys_all[starts]
        masks = np.bitwise_or.reduceat(bits_all, starts)
        return unique_keys // self.n, unique_keys % self.n, masks


def edges_for_type(g: HeteroGraph, gamma: NeighborhoodType) -> sp.csr_matrix:
    """Merged adjacency over the relations in γ; the empty type has no edges."""
    return g.union(gamma.mask)


def active_neighbors(g: HeteroGraph, v: int, gamma: NeighborhoodType) -> List[int]:
    if not 0 <= v < g.n:
        raise GraphError(f"node {v} outside 0..{g.n - 1}")
    matrix = edges_for_type(g, gamma)
    return matrix.indices[matrix.indptr[v]:matrix.indptr[v + 1]].tolist()


def _attribute_values(records: Sequence[NewsRecord], attribute: str) -> List[frozenset]:
    if attribute not in RECORD_FIELDS:
        raise ConfigurationError(
            f"unknown attribute relation {attribute!r}; expected one of {', '.join(ATTRIBUTE_RELATIONS)}",
            key="graph.relations",
        )
    field = RECORD_FIELDS[attribute]
    if field == "subject":
        return [r.subject for r in records]
    return [frozenset([getattr(r, field)]) if getattr(r, field) else frozenset() for r in records]


def build_attribute_relation(
    records: Sequence[NewsRecord],
    attribute: str,
    max_degree: Optional[int] = None,
    seed: int = 0,
) -> np.ndarray:
    """Edges between records sharing a non-empty value (subject: any shared subject).

    Nodes whose neighbourhood exceeds max_degree keep a seeded uniform sample of
    max_degree neighbours; the sampled edges are then symmetrised by union.
    """
    if not records:
        raise GraphError("cannot build a relation over zero records")
    values = _attribute_values(records, attribute)
    n = len(records)

    groups: Dict[str, List[int]] = {}
    for node, node_values in enumerate(values):
        for value in node_values:
            groups.setdefault(value, []).append(node)
    ordered = sorted(groups)

    if max_degree is None:
        # shared-value incidence: B[v, g] = 1 iff v carries value g
        rows = [node for value in ordered for node in groups[value]]
        cols = [j for j, value in enumerate(ordered) for _ in groups[value]]
        incidence = sp.csr_matrix(
            (np.ones(len(rows), dtype=np.int32), (rows, cols)), shape=(n, len(ordered))
        )
        shared = (incidence @ incidence.T).tocoo()
        keep = shared.row != shared.col
        edges = np.stack([shared.row[keep], shared.col[keep]], axis=1).astype(np.int64)
        return np.unique(edges, axis=0) if len(edges) else edges.reshape(0, 2)

    members = {value: np.asarray(groups[value], dtype=np.int64) for value in ordered}
    rng = np.random.default_rng([seed, zlib.crc32(attribute.encode("utf-8"))])
    sampled: List[np.ndarray] = []
    for node, node_values in enumerate(values):
        if not node_values:
            continue
        candidates = np.unique(np.concatenate([members[value] for value in sorted(node_values)]))
        candidates = candidates[candidates != node]
        if len(candidates) > max_degree:
            candidates = np.sort(rng.choice(candidates, size=max_degree, replace=False))
        if len(candidates):
            sampled.append(np.stack([np.full(len(candidates), node, dtype=np.int64), candidates], axis=1))

    if not sampled:
        return np.empty((0, 2), dtype=np.int64)
    directed = np.concatenate(sampled)
    return np.unique(np.concatenate([directed, directed[:, ::-1]]), axis=0)


@track_stage_time("graph")
def build_hetero_graph(
    records: Sequence[NewsRecord],
    X: Optional[np.ndarray],
    relations: Sequence[RelationOptions],
    seed: int = 0,
) -> HeteroGraph:
    edge_lists: Dict[str, np.ndarray] = {}
    for options in relations:
        if options.knn_k is not None:
            if X is None:
                raise ConfigurationError("knn relations need an embedding matrix", key="graph.relations")
            edge_lists[options.name] = build_knn_relation(X, options.knn_k)
        else:
            edge_lists[options.name] = build_attribute_relation(records, options.name, options.max_degree, seed)
        logger.info(f"Relation {options.name}: {len(edge_lists[options.name]) // 2} undirected edges")
    return HeteroGraph.from_edges(len(records), edge_lists)


def graph_summary(g: HeteroGraph) -> Dict[str, Dict[str, float]]:
    def describe(matrix: sp.csr_matrix) -> Dict[str, float]:
        degree = np.diff(matrix.indptr)
        return {
            "edges": int(matrix.nnz // 2),
            "mean_degree": float(degree.mean()) if g.n else 0.0,
            "max_degree": int(degree.max()) if g.n else 0,
            "isolated": int((degree == 0).sum()),
        }

    summary = {name: describe(g.adjacency(name)) for name in g.registry.names}
    summary["union"] = describe(g.union(g.registry.full_mask))
    return summary
