"""Decision network Φ, straight-through Gumbel selection and representation network Ψ."""
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from ..models.news import NUM_CLASSES
from ..models.run import SelectionSummary
from ..services.hetero_graph import HeteroGraph, NeighborhoodLattice, NeighborhoodType, edges_for_type
from ..utils.errors import ConfigurationError, PipelineError
from .diff_core import DTYPE, safe_log, straight_through
from .layers import EdgeIndex, GATv2Layer, GCNLayer, MlpHead, edge_index_from_csr, layer_widths

GUMBEL_EPS = 1e-12


def gumbel_from_uniform(u: torch.Tensor) -> torch.Tensor:
    u = torch.clamp(u, GUMBEL_EPS, 1.0 - GUMBEL_EPS)
    return -torch.log(-torch.log(u))


def gumbel_sample(count: int, generator: Optional[torch.Generator] = None, types: Optional[int] = None) -> torch.Tensor:
    """Standard Gumbel draws: a vector of count, or a (count, types) matrix."""
    if count < 1:
        raise ConfigurationError(f"gumbel_sample needs count >= 1, got {count}", key="count")
    shape = (count,) if types is None else (count, types)
    return gumbel_from_uniform(torch.rand(shape, generator=generator, dtype=DTYPE))


class GumbelSelection(NamedTuple):
    soft: torch.Tensor
    index: torch.Tensor
    # what gates the edges: exact one-hot (straight-through / eval) or the soft vector
    weights: torch.Tensor


def gumbel_softmax_select(
    rho: torch.Tensor,
    tau: float,
    g: Optional[torch.Tensor] = None,
    training: bool = True,
    straight_through_mode: bool = True,
) -> GumbelSelection:
    if tau <= 0:
        raise ConfigurationError(f"temperature must be positive, got {tau}", key="train.tau")
    logits = safe_log(rho)
    if training and g is not None:
        logits = logits + g
    soft = torch.softmax(logits / tau, dim=-1)
    index = torch.argmax(logits, dim=-1)

    squeeze = soft.dim() == 1
    soft2, index2 = (soft.unsqueeze(0), index.unsqueeze(0)) if squeeze else (soft, index)
    if training and not straight_through_mode:
        weights = soft2
    elif training:
        weights = straight_through(soft2, index2)
    else:
        weights = torch.zeros_like(soft2).scatter_(1, index2.unsqueeze(1), 1.0)
    return GumbelSelection(soft, index, weights.squeeze(0) if squeeze else weights)


@dataclass
class GraphInputs:
    """Tensor view of a graph for one lattice: typed union edges plus the decision neighbourhood."""
    n: int
    lattice: NeighborhoodLattice
    dst: torch.Tensor
    src: torch.Tensor
    relation_masks: np.ndarray
    # (|Γ|, U) compatibility against the U distinct relation masks, and each edge's column
    compatibility: torch.Tensor
    mask_column: torch.Tensor
    decision_edges: EdgeIndex

    @classmethod
    def build(cls, g: HeteroGraph, lattice: NeighborhoodLattice, decision_mask: Optional[int] = None) -> "GraphInputs":
        dst, src, masks = g.typed_edge_index()
        distinct, column = np.unique(masks, return_inverse=True)
        if decision_mask is None:
            decision_mask = g.registry.full_mask
        return cls(
            n=g.n,
            lattice=lattice,
            dst=torch.as_tensor(dst, dtype=torch.long),
            src=torch.as_tensor(src, dtype=torch.long),
            relation_masks=masks,
            compatibility=torch.as_tensor(lattice.compatibility(distinct), dtype=DTYPE),
            mask_column=torch.as_tensor(column.reshape(-1), dtype=torch.long),
            decision_edges=edge_index_from_csr(edges_for_type(g, NeighborhoodType(decision_mask))),
        )

    def edges_of_type(self, type_index: int) -> EdgeIndex:
        active = torch.as_tensor((self.relation_masks & self.lattice[type_index].mask) != 0)
        return self.dst[active], self.src[active]

    def edge_weights(self, selection: torch.Tensor) -> torch.Tensor:
        """Per-edge gate Σ_γ e_v[γ]·[m_e ∩ γ ≠ ∅] for selections e of shape (n, |Γ|)."""
        per_node = selection @ self.compatibility
        return per_node[self.dst, self.mask_column]

    @property
    def union_edges(self) -> EdgeIndex:
        return self.dst, self.src


@dataclass
class SelectionTrace:
    type_names: List[str]
    chosen: List[np.ndarray] = field(default_factory=list)
    rho: List[np.ndarray] = field(default_factory=list)

    def record(self, selection: GumbelSelection, rho: torch.Tensor) -> None:
        self.chosen.append(selection.index.detach().cpu().numpy().astype(np.int64))
        self.rho.append(rho.detach().cpu().numpy().astype(np.float64))

    @property
    def num_layers(self) -> int:
        return len(self.chosen)

    def fractions(self, layer: int) -> Dict[str, float]:
        counts = np.bincount(self.chosen[layer], minlength=len(self.type_names))
        return {name: float(count) / len(self.chosen[layer]) for name, count in zip(self.type_names, counts)}

    def fraction_containing(self, layer: int, lattice: NeighborhoodLattice, relation: str) -> float:
        relation_bit = 1 << lattice.registry.index[relation]
        hits = [bool(lattice[int(i)].mask & relation_bit) for i in self.chosen[layer]]
        return float(np.mean(hits))

    def summary(self) -> SelectionSummary:
        return SelectionSummary(type_names=self.type_names, per_layer=[self.fractions(l) for l in range(self.num_layers)])


class ModelOutput(NamedTuple):
    probs: torch.Tensor
    trace: Optional[SelectionTrace]


def decision_probs(
    decider: GATv2Layer,
    h: torch.Tensor,
    edges: EdgeIndex,
    dropout_rate: float = 0.0,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """ρ^l: row-softmax over the decision layer's |Γ| logits."""
    dst, src = edges
    return torch.softmax(decider(h, dst, src, dropout_rate=dropout_rate, generator=generator), dim=1)


def representation_update(
    layer: GATv2Layer,
    h: torch.Tensor,
    graph: GraphInputs,
    selection: torch.Tensor,
    dropout_rate: float = 0.0,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Ψ^l over the union graph with each edge gated by its destination's selected type."""
    return layer(
        h, graph.dst, graph.src,
        edge_weight=graph.edge_weights(selection),
        dropout_rate=dropout_rate,
        generator=generator,
    )


def _stack(in_dim: int, hidden: Sequence[int], heads: int, generator: Optional[torch.Generator]) -> nn.ModuleList:
    widths = layer_widths(in_dim, hidden)
    return nn.ModuleList([
        # the final representation layer uses a single head
        GATv2Layer(d_in, d_out, heads if i < len(widths) - 1 else 1, generator=generator)
        for i, (d_in, d_out) in enumerate(widths)
    ])


class DHGAT(nn.Module):
    """L blocks of (Φ_l, Ψ_l) followed by the MLP head.

    Ψ and the head are created before Φ, so for a given seed their initial
    values match a GATv2Network built with the same arguments.
    """

    kind = "dhgat"

    def __init__(
        self,
        in_dim: int,
        hidden: Sequence[int],
        heads: int,
        num_types: int,
        mlp_hidden: Sequence[int] = (),
        dropout: float = 0.0,
        straight_through: bool = True,
        force_selection: Optional[int] = None,
        num_classes: int = NUM_CLASSES,
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        if force_selection is not None and not 0 <= force_selection < num_types:
            raise ConfigurationError(f"forced type {force_selection} outside 0..{num_types - 1}", key="train.force_selection")
        self.dropout = dropout
        self.straight_through = straight_through
        self.force_selection = force_selection
        self.num_types = num_types
        self.layers = _stack(in_dim, hidden, heads, generator)
        self.head = MlpHead(hidden[-1], mlp_hidden, num_classes, generator)
        self.deciders = nn.ModuleList([
            GATv2Layer(layer.in_dim, num_types, 1, activation=False, generator=generator) for layer in self.layers
        ])

    def trainable_parameters(self) -> List[Tuple[str, nn.Parameter]]:
        named = list(self.named_parameters())
        if self.force_selection is not None:
            named = [(name, p) for name, p in named if not name.startswith("deciders.")]
        return named

    def forward(
        self,
        x: torch.Tensor,
        graph: GraphInputs,
        tau: float = 1.0,
        dropout_generator: Optional[torch.Generator] = None,
        noise_generator: Optional[torch.Generator] = None,
        noise: Optional[Sequence[torch.Tensor]] = None,
        capture: bool = False,
    ) -> ModelOutput:
        if len(graph.lattice) != self.num_types:
            raise ConfigurationError(f"model has {self.num_types} types, lattice has {len(graph.lattice)}", key="train.lattice")
        rate = self.dropout if self.training else 0.0
        trace = SelectionTrace(graph.lattice.names) if capture else None
        h = x

        for l, (decider, layer) in enumerate(zip(self.deciders, self.layers)):
            if self.force_selection is not None:
                dst, src = graph.edges_of_type(self.force_selection)
                if trace is not None:
                    forced = torch.full((graph.n,), self.force_selection, dtype=torch.long)
                    one_hot = torch.zeros(graph.n, self.num_types, dtype=DTYPE).scatter_(1, forced.unsqueeze(1), 1.0)
                    trace.record(GumbelSelection(one_hot, forced, one_hot), one_hot)
                h = layer(h, dst, src, dropout_rate=rate, generator=dropout_generator)
                continue

            rho = decision_probs(decider, h, graph.decision_edges, rate, dropout_generator)
            g = None
            if self.training:
                g = noise[l] if noise is not None else gumbel_sample(graph.n, noise_generator, self.num_types)
            selection = gumbel_softmax_select(rho, tau, g, self.training, self.straight_through)
            if trace is not None:
                trace.record(selection, rho)
            h = representation_update(layer, h, graph, selection.weights, rate, dropout_generator)

        return ModelOutput(self.head(h), trace)


class GATv2Network(nn.Module):
    """Plain GATv2 stack on the union graph with the same head."""

    kind = "gatv2"

    def __init__(
        self,
        in_dim: int,
        hidden: Sequence[int],
        heads: int,
        mlp_hidden: Sequence[int] = (),
        dropout: float = 0.0,
        num_classes: int = NUM_CLASSES,
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        self.dropout = dropout
        self.layers = _stack(in_dim, hidden, heads, generator)
        self.head = MlpHead(hidden[-1], mlp_hidden, num_classes, generator)

    def trainable_parameters(self) -> List[Tuple[str, nn.Parameter]]:
        return list(self.named_parameters())

    def forward(self, x: torch.Tensor, graph: GraphInputs, dropout_generator: Optional[torch.Generator] = None, **_) -> ModelOutput:
        rate = self.dropout if self.training else 0.0
        h = x
        for layer in self.layers:
            h = layer(h, graph.dst, graph.src, dropout_rate=rate, generator=dropout_generator)
        return ModelOutput(self.head(h), None)


class GCNNetwork(nn.Module):
    kind = "gcn"

    def __init__(
        self,
        in_dim: int,
        hidden: Sequence[int],
        mlp_hidden: Sequence[int] = (),
        dropout: float = 0.0,
        num_classes: int = NUM_CLASSES,
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        self.dropout = dropout
        self.layers = nn.ModuleList([GCNLayer(d_in, d_out, generator) for d_in, d_out in layer_widths(in_dim, hidden)])
        self.head = MlpHead(hidden[-1], mlp_hidden, num_classes, generator)

    def trainable_parameters(self) -> List[Tuple[str, nn.Parameter]]:
        return list(self.named_parameters())

    def forward(self, x: torch.Tensor, graph: GraphInputs, dropout_generator: Optional[torch.Generator] = None, **_) -> ModelOutput:
        rate = self.dropout if self.training else 0.0
        h = x
        for layer in self.layers:
            h = layer(h, graph.dst, graph.src, dropout_rate=rate, generator=dropout_generator)
        return ModelOutput(self.head(h), None)


def dhgat_loss(
    probs: torch.Tensor,
    labels: torch.Tensor,
    labeled: torch.Tensor,
    lambda1: float = 1.0,
    lambda2: float = 0.25,
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """λ₁·mean CE + λ₂·mean |y − Σ_c c·p_c| over the labeled nodes; returns (total, ce, ordinal)."""
    if labeled.numel() == 0:
        raise PipelineError("dhgat_loss needs at least one labeled node")
    p = probs[labeled]
    y = labels[labeled]
    cross_entropy = -safe_log(p.gather(1, y.unsqueeze(1))).mean()
    classes = torch.arange(p.shape[1], dtype=p.dtype)
    ordinal = torch.abs(y.to(p.dtype) - p @ classes).mean()
    return lambda1 * cross_entropy + lambda2 * ordinal, cross_entropy, ordinal
