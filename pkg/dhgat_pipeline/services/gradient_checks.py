"""Toy instances for the finite-difference gradient suite."""
from typing import Callable, List, Tuple

import numpy as np
import torch
from torch import nn

from ..models.run import GradCheckReport, GradCheckResult
from ..networks.diff_core import DTYPE, grad_check
from ..networks.dhgat import DHGAT, GraphInputs, dhgat_loss, gumbel_sample
from ..networks.layers import GATv2Layer, GCNLayer, MlpHead
from .hetero_graph import HeteroGraph, enumerate_lattice


def toy_graph(n: int, seed: int) -> HeteroGraph:
    """Ring relation plus a random relation, both over n nodes."""
    rng = np.random.default_rng(seed)
    ring = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1)
    random_pairs = rng.integers(0, n, size=(n, 2))
    return HeteroGraph.from_edges(n, {"speaker": ring, "context": random_pairs})


def _quadratic(seed: int, tolerance: float) -> GradCheckResult:
    generator = torch.Generator().manual_seed(seed)
    A = torch.randn(5, 5, generator=generator, dtype=DTYPE)
    x = nn.Parameter(torch.randn(5, generator=generator, dtype=DTYPE))
    return grad_check("quadratic_form", lambda: x @ A @ x, {"x": x}, tolerance=tolerance)


def _layer_check(name: str, layer: nn.Module, n: int, seed: int, tolerance: float) -> GradCheckResult:
    graph = toy_graph(n, seed)
    dst, src = GraphInputs.build(graph, enumerate_lattice(graph.registry)).union_edges
    generator = torch.Generator().manual_seed(seed + 1)
    h = torch.randn(n, layer.in_dim, generator=generator, dtype=DTYPE)
    target = torch.randn(n, layer.out_dim, generator=generator, dtype=DTYPE)
    return grad_check(name, lambda: ((layer(h, dst, src) - target) ** 2).sum(), layer.named_parameters(), tolerance=tolerance)


def _mlp(seed: int, tolerance: float) -> GradCheckResult:
    generator = torch.Generator().manual_seed(seed)
    head = MlpHead(4, [5], 6, generator)
    h = torch.randn(7, 4, generator=generator, dtype=DTYPE)
    labels = torch.arange(7) % 6
    return grad_check(
        "mlp_head",
        lambda: -torch.log(head(h).gather(1, labels.unsqueeze(1))).mean(),
        head.named_parameters(),
        tolerance=tolerance,
    )


def dhgat_toy_loss(seed: int = 0, n: int = 10) -> Tuple[Callable[[], torch.Tensor], DHGAT]:
    """Relaxed-selection DHGAT loss on a 2-relation toy graph with frozen Gumbel noise.

    Returns (expression, model) so callers can check gradients of every parameter, Φ included.
    """
    graph = toy_graph(n, seed)
    lattice = enumerate_lattice(graph.registry)
    inputs = GraphInputs.build(graph, lattice)
    generator = torch.Generator().manual_seed(seed)
    model = DHGAT(6, [4, 3], 2, len(lattice), straight_through=False, generator=generator)
    model.train()

    x = torch.randn(n, 6, generator=generator, dtype=DTYPE)
    labels = torch.randint(0, 6, (n,), generator=generator)
    labeled = torch.arange(0, n, 2)
    noise = [gumbel_sample(n, generator, len(lattice)) for _ in model.layers]

    def expression() -> torch.Tensor:
        probs = model(x, inputs, tau=0.7, noise=noise).probs
        return dhgat_loss(probs, labels, labeled, 1.0, 0.25)[0]

    return expression, model


def run_gradient_checks(seed: int = 0, tolerance: float = 1e-4) -> GradCheckReport:
    generator = torch.Generator().manual_seed(seed)
    checks: List[Callable[[], GradCheckResult]] = [
        lambda: _quadratic(seed, tolerance),
        lambda: _layer_check("gatv2_layer", GATv2Layer(3, 4, 2, generator=generator), 6, seed, tolerance),
        lambda: _layer_check("gatv2_layer_logits", GATv2Layer(3, 4, 1, activation=False, generator=generator), 6, seed, tolerance),
        lambda: _layer_check("gcn_layer", GCNLayer(3, 4, generator), 6, seed, tolerance),
        lambda: _mlp(seed, tolerance),
    ]
    report = GradCheckReport(results=[check() for check in checks])

    expression, model = dhgat_toy_loss(seed)
    report.results.append(grad_check("dhgat_loss", expression, model.named_parameters(), tolerance=tolerance))
    return report
