from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import torch
import torch.nn.functional as F
from torch import nn

from .diff_core import DTYPE, LEAKY_SLOPE, ShapeError, check_width, dropout, glorot_, segment_softmax, segment_sum

EdgeIndex = Tuple[torch.Tensor, torch.Tensor]


def edge_index_from_csr(adjacency: sp.csr_matrix) -> EdgeIndex:
    """(dst, src) long tensors for the stored entries, rows being destinations."""
    coo = adjacency.tocoo()
    order = np.lexsort((coo.col, coo.row))
    return (
        torch.as_tensor(coo.row[order], dtype=torch.long),
        torch.as_tensor(coo.col[order], dtype=torch.long),
    )


def with_self_loops(dst: torch.Tensor, src: torch.Tensor, n: int) -> EdgeIndex:
    nodes = torch.arange(n, dtype=torch.long)
    return torch.cat([dst, nodes]), torch.cat([src, nodes])


class GATv2Layer(nn.Module):
    """Multi-head GATv2 attention over neighbours plus self; heads concatenated."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        heads: int = 1,
        activation: bool = True,
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        if out_dim % heads:
            raise ShapeError("gatv2_layer", f"output width {out_dim} is not divisible by {heads} heads")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.heads = heads
        self.head_dim = out_dim // heads
        self.activation = activation
        self.weight = nn.Parameter(torch.empty(heads, in_dim, self.head_dim, dtype=DTYPE))
        self.attention = nn.Parameter(torch.empty(heads, self.head_dim, dtype=DTYPE))
        self.reset_parameters(generator)

    def reset_parameters(self, generator: Optional[torch.Generator] = None) -> None:
        glorot_(self.weight, self.in_dim, self.head_dim, generator)
        glorot_(self.attention, self.head_dim, 1, generator)

    def forward(
        self,
        h: torch.Tensor,
        dst: torch.Tensor,
        src: torch.Tensor,
        edge_weight: Optional[torch.Tensor] = None,
        dropout_rate: float = 0.0,
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        check_width("gatv2_layer_forward", h, self.in_dim)
        n = h.shape[0]
        x = dropout(h, dropout_rate, self.training, generator)
        z = torch.einsum("ni,kio->nko", x, self.weight)

        dst, src = with_self_loops(dst, src, n)
        if edge_weight is not None:
            edge_weight = torch.cat([edge_weight, torch.ones(n, dtype=edge_weight.dtype)])

        scores = (F.leaky_relu(z[dst] + z[src], LEAKY_SLOPE) * self.attention).sum(dim=-1)
        alpha = segment_softmax(scores, dst, n, edge_weight)
        out = segment_sum(alpha.unsqueeze(-1) * z[src], dst, n)
        if self.activation:
            out = F.elu(out)
        return out.reshape(n, self.out_dim)


class GCNLayer(nn.Module):
    """Symmetric-normalised graph convolution with self-loops, elu output."""

    def __init__(self, in_dim: int, out_dim: int, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = nn.Parameter(glorot_(torch.empty(in_dim, out_dim, dtype=DTYPE), in_dim, out_dim, generator))
        self.bias = nn.Parameter(torch.zeros(out_dim, dtype=DTYPE))

    def forward(
        self,
        h: torch.Tensor,
        dst: torch.Tensor,
        src: torch.Tensor,
        dropout_rate: float = 0.0,
        generator: Optional[torch.Generator] = None,
    ) -> torch.Tensor:
        check_width("gcn_layer_forward", h, self.in_dim)
        n = h.shape[0]
        x = dropout(h, dropout_rate, self.training, generator) @ self.weight

        degree = torch.bincount(dst, minlength=n).to(DTYPE) + 1.0
        dst, src = with_self_loops(dst, src, n)
        norm = torch.rsqrt(degree[dst] * degree[src])
        return F.elu(segment_sum(norm.unsqueeze(1) * x[src], dst, n) + self.bias)


class MlpHead(nn.Module):
    """Hidden layers with elu, softmax over the class logits."""

    def __init__(
        self,
        in_dim: int,
        hidden: Sequence[int],
        num_classes: int,
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        sizes = [in_dim, *hidden, num_classes]
        self.linears = nn.ModuleList()
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            linear = nn.Linear(fan_in, fan_out, dtype=DTYPE)
            glorot_(linear.weight, fan_in, fan_out, generator)
            nn.init.zeros_(linear.bias)
            self.linears.append(linear)

    @property
    def num_classes(self) -> int:
        return self.linears[-1].out_features

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        check_width("mlp_forward", h, self.linears[0].in_features)
        for linear in self.linears[:-1]:
            h = F.elu(linear(h))
        return torch.softmax(self.linears[-1](h), dim=1)


def gatv2_layer_forward(
    layer: GATv2Layer,
    h: torch.Tensor,
    adjacency: sp.csr_matrix,
    dropout_rate: float = 0.0,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    dst, src = edge_index_from_csr(adjacency)
    return layer(h, dst, src, dropout_rate=dropout_rate, generator=generator)


def gcn_layer_forward(
    layer: GCNLayer,
    h: torch.Tensor,
    adjacency: sp.csr_matrix,
    dropout_rate: float = 0.0,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    dst, src = edge_index_from_csr(adjacency)
    return layer(h, dst, src, dropout_rate=dropout_rate, generator=generator)


def mlp_forward(head: MlpHead, h: torch.Tensor) -> torch.Tensor:
    return head(h)


def layer_widths(in_dim: int, hidden: Sequence[int]) -> List[Tuple[int, int]]:
    dims = [in_dim, *hidden]
    return list(zip(dims[:-1], dims[1:]))
