"""Differentiable primitives on torch autograd (CPU, float64) plus the optimizer and gradient checker."""
import math
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np
import torch
from torch import nn

from ..models.run import GradCheckResult
from ..utils.errors import PipelineError
from ..utils.logging import logger

DTYPE = torch.float64
LOG_EPS = 1e-10
LEAKY_SLOPE = 0.2
# exponent cap for zero-weight edges, which sit outside the segment peak
GATED_EXP_MAX = 50.0

NamedParameters = Union[Mapping[str, nn.Parameter], Iterable[Tuple[str, nn.Parameter]]]


class ShapeError(PipelineError):
    def __init__(self, primitive: str, message: str):
        super().__init__(f"{primitive}: {message}")
        self.primitive = primitive


class MissingGradientError(PipelineError):
    def __init__(self, names: List[str]):
        super().__init__(f"no gradient for parameters: {', '.join(names)}")
        self.names = names


def configure_runtime(deterministic: bool = True, num_threads: int = 0) -> None:
    """Single-threaded deterministic kernels for reproducible runs."""
    if deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True, warn_only=True)
    elif num_threads > 0:
        torch.set_num_threads(num_threads)


def _named(parameters: NamedParameters) -> List[Tuple[str, nn.Parameter]]:
    if isinstance(parameters, Mapping):
        return list(parameters.items())
    return list(parameters)


def check_width(primitive: str, tensor: torch.Tensor, expected: int) -> None:
    if tensor.dim() != 2 or tensor.shape[1] != expected:
        raise ShapeError(primitive, f"expected (n, {expected}) input, got {tuple(tensor.shape)}")


def glorot_(tensor: torch.Tensor, fan_in: int, fan_out: int, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        return tensor.uniform_(-bound, bound, generator=generator)


def safe_log(x: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.clamp(x, min=LOG_EPS))


def dropout(x: torch.Tensor, rate: float, training: bool, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Inverted dropout with a seeded mask; identity outside training."""
    if not training or rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = torch.rand(x.shape, generator=generator, dtype=x.dtype) < keep
    return x * mask / keep


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    if logits.shape != mask.shape:
        raise ShapeError("masked_softmax", f"mask {tuple(mask.shape)} does not match logits {tuple(logits.shape)}")
    if not mask.any(dim=1).all():
        raise ShapeError("masked_softmax", "every row needs at least one unmasked entry")
    return torch.softmax(logits.masked_fill(~mask, float("-inf")), dim=1)


def segment_softmax(
    scores: torch.Tensor,
    index: torch.Tensor,
    num_segments: int,
    weights: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Softmax of edge scores (E, H) within groups sharing the same destination index.

    With weights w the result is w·exp(s) / Σ w·exp(s); zero-weight edges drop out
    of the forward value but keep a gradient with respect to w. The per-segment
    peak is taken over positively weighted edges only.
    """
    if scores.shape[0] != index.shape[0]:
        raise ShapeError("segment_softmax", f"{scores.shape[0]} scores for {index.shape[0]} indices")
    expanded = index.unsqueeze(1).expand_as(scores)
    peak = torch.full((num_segments, scores.shape[1]), float("-inf"), dtype=scores.dtype)
    live = scores.detach()
    if weights is not None:
        live = live.masked_fill((weights <= 0).unsqueeze(1).expand_as(scores), float("-inf"))
    peak = peak.scatter_reduce(0, expanded, live, reduce="amax", include_self=True)
    exp = torch.exp((scores - peak[index]).clamp(max=GATED_EXP_MAX))
    if weights is not None:
        exp = exp * weights.unsqueeze(1)
    total = torch.zeros((num_segments, scores.shape[1]), dtype=scores.dtype).index_add(0, index, exp)
    return exp / total[index]


def segment_sum(values: torch.Tensor, index: torch.Tensor, num_segments: int) -> torch.Tensor:
    out = torch.zeros((num_segments,) + tuple(values.shape[1:]), dtype=values.dtype)
    return out.index_add(0, index, values)


class StraightThrough(torch.autograd.Function):
    """Forward: exact one-hot rows at the given indices. Backward: identity onto the soft input."""

    @staticmethod
    def forward(ctx, soft: torch.Tensor, index: torch.Tensor) -> torch.Tensor:
        hard = torch.zeros_like(soft)
        hard.scatter_(1, index.unsqueeze(1), 1.0)
        return hard

    @staticmethod
    def backward(ctx, grad_output: torch.Tensor):
        return grad_output, None


def straight_through(soft: torch.Tensor, index: torch.Tensor) -> torch.Tensor:
    return StraightThrough.apply(soft, index)


def evaluate_with_gradients(
    expression: Callable[[], torch.Tensor],
    parameters: NamedParameters,
) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    """Run a scalar expression forward and backward; returns its value and a gradient copy per parameter."""
    named = _named(parameters)
    for _, param in named:
        param.grad = None
    output = expression()
    if output.numel() != 1:
        raise ShapeError("evaluate_with_gradients", f"expression must be scalar, got shape {tuple(output.shape)}")
    output.backward()
    gradients = {
        name: param.grad.detach().clone() if param.grad is not None else torch.zeros_like(param)
        for name, param in named
    }
    return output.detach(), gradients


class AdamState:
    """Adam with decoupled weight decay and bias correction over a fixed parameter list."""

    def __init__(
        self,
        parameters: NamedParameters,
        lr: float = 0.001,
        weight_decay: float = 5e-4,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.named = _named(parameters)
        self.optimizer = torch.optim.AdamW(
            [param for _, param in self.named], lr=lr, betas=betas, eps=eps, weight_decay=weight_decay
        )

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    @property
    def step_count(self) -> int:
        if not self.named:
            return 0
        state = self.optimizer.state.get(self.named[0][1], {})
        return int(state["step"]) if "step" in state else 0


def adam_step(state: AdamState) -> None:
    missing = [name for name, param in state.named if param.grad is None]
    if missing:
        raise MissingGradientError(missing)
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=False)


def _coordinates(named: List[Tuple[str, nn.Parameter]], max_coordinates: int, seed: int) -> List[Tuple[int, int]]:
    sizes = [param.numel() for _, param in named]
    total = sum(sizes)
    offsets = np.cumsum([0] + sizes)
    if total <= max_coordinates:
        flat = np.arange(total)
    else:
        flat = np.sort(np.random.default_rng(seed).choice(total, size=max_coordinates, replace=False))
    owners = np.searchsorted(offsets, flat, side="right") - 1
    return [(int(owner), int(position - offsets[owner])) for owner, position in zip(owners, flat)]


def grad_check(
    name: str,
    expression: Callable[[], torch.Tensor],
    parameters: NamedParameters,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_coordinates: int = 10_000,
    seed: int = 0,
    floor: float = 1e-6,
) -> GradCheckResult:
    """Compare autograd against central differences on every coordinate (or a seeded sample).

    The expression must be a pure function of the parameters: any noise or dropout
    mask it uses has to be frozen across calls.
    """
    named = _named(parameters)
    _, analytic = evaluate_with_gradients(expression, named)

    worst_error, worst_parameter = 0.0, None
    coordinates = _coordinates(named, max_coordinates, seed)
    with torch.no_grad():
        for owner, position in coordinates:
            param_name, param = named[owner]
            flat = param.data.view(-1)
            original = flat[position].item()
            flat[position] = original + step
            upper = expression().item()
            flat[position] = original - step
            lower = expression().item()
            flat[position] = original

            numeric = (upper - lower) / (2 * step)
            exact = analytic[param_name].view(-1)[position].item()
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
            if error > worst_error:
                worst_error, worst_parameter = error, param_name

    result = GradCheckResult(
        name=name,
        max_relative_error=worst_error,
        coordinates_checked=len(coordinates),
        tolerance=tolerance,
        passed=worst_error < tolerance,
        worst_parameter=worst_parameter,
    )
    level = logger.info if result.passed else logger.warning
    level(f"Gradient check {name}: max relative error {worst_error:.3e} over {len(coordinates)} coordinates")
    return result
