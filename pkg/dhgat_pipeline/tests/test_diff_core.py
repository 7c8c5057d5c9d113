import math

import pytest
import torch
import torch.nn.functional as F
from torch import nn

from ..networks.diff_core import (
    DTYPE,
    AdamState,
    MissingGradientError,
    ShapeError,
    adam_step,
    dropout,
    evaluate_with_gradients,
    grad_check,
    masked_softmax,
    safe_log,
    segment_softmax,
    straight_through,
)


def param(*values):
    return nn.Parameter(torch.tensor(values, dtype=DTYPE))


def test_square_gradient():
    x = param(3.0)
    value, grads = evaluate_with_gradients(lambda: (x * x).sum(), {"x": x})
    assert value.item() == 9.0
    assert grads["x"].item() == 6.0


def test_non_scalar_expression_is_rejected():
    x = param(1.0, 2.0)
    with pytest.raises(ShapeError):
        evaluate_with_gradients(lambda: x * 2, {"x": x})


def test_single_unmasked_entry_softmax():
    logits = nn.Parameter(torch.tensor([[0.3, -1.2, 2.0]], dtype=DTYPE))
    mask = torch.tensor([[False, True, False]])
    _, grads = evaluate_with_gradients(lambda: masked_softmax(logits, mask)[0, 1], {"logits": logits})

    assert masked_softmax(logits, mask)[0, 1].item() == 1.0
    assert grads["logits"][0, 1].item() == 0.0


def test_fully_masked_row_is_rejected():
    with pytest.raises(ShapeError):
        masked_softmax(torch.zeros(2, 2, dtype=DTYPE), torch.tensor([[True, False], [False, False]]))


def test_segment_softmax_matches_dense(generator):
    scores = torch.randn(7, 2, generator=generator, dtype=DTYPE)
    index = torch.tensor([0, 0, 1, 1, 1, 2, 0])
    out = segment_softmax(scores, index, 3)

    for segment in range(3):
        rows = index == segment
        assert torch.allclose(out[rows], torch.softmax(scores[rows], dim=0), atol=1e-14)


def test_weighted_segment_softmax_drops_zero_weights():
    scores = torch.tensor([[1.0], [2.0], [0.5]], dtype=DTYPE)
    index = torch.tensor([0, 0, 0])
    out = segment_softmax(scores, index, 1, torch.tensor([1.0, 0.0, 1.0], dtype=DTYPE))

    assert out[1].item() == 0.0
    assert torch.allclose(out[[0, 2]].squeeze(), torch.softmax(torch.tensor([1.0, 0.5], dtype=DTYPE), dim=0))


def test_gated_out_edge_with_huge_score_stays_finite():
    scores = nn.Parameter(torch.tensor([[1.0], [1000.0]], dtype=DTYPE))
    weights = nn.Parameter(torch.tensor([1.0, 0.0], dtype=DTYPE))
    out = segment_softmax(scores, torch.tensor([0, 0]), 1, weights)

    assert out.squeeze().tolist() == [1.0, 0.0]
    out[0, 0].backward()
    assert torch.isfinite(weights.grad).all()
    assert torch.isfinite(scores.grad).all()


def test_safe_log_clamps():
    assert safe_log(torch.tensor([0.0], dtype=DTYPE)).item() == pytest.approx(math.log(1e-10))


def test_dropout_scales_and_is_identity_in_eval(generator):
    x = torch.ones(200, 50, dtype=DTYPE)
    out = dropout(x, 0.5, True, generator)
    kept = out[out != 0]
    assert torch.all(kept == 2.0)
    assert dropout(x, 0.5, False, generator) is x


def test_dropout_is_seeded():
    x = torch.ones(10, 10, dtype=DTYPE)
    first = dropout(x, 0.3, True, torch.Generator().manual_seed(4))
    second = dropout(x, 0.3, True, torch.Generator().manual_seed(4))
    assert torch.equal(first, second)


def test_straight_through_forward_is_exact_one_hot():
    soft = nn.Parameter(torch.tensor([[0.2, 0.5, 0.3], [0.6, 0.3, 0.1]], dtype=DTYPE))
    index = soft.argmax(dim=1)
    hard = straight_through(soft, index)
    assert torch.equal(hard, torch.tensor([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]], dtype=DTYPE))

    weights = torch.tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], dtype=DTYPE)
    _, hard_grads = evaluate_with_gradients(lambda: (straight_through(soft, index) * weights).sum(), {"s": soft})
    _, soft_grads = evaluate_with_gradients(lambda: (soft * weights).sum(), {"s": soft})
    assert torch.equal(hard_grads["s"], soft_grads["s"])


def test_gradient_linearity(generator):
    x = nn.Parameter(torch.randn(4, generator=generator, dtype=DTYPE))
    f = lambda: (x ** 3).sum()
    g = lambda: torch.sin(x).sum()
    _, gf = evaluate_with_gradients(f, {"x": x})
    _, gg = evaluate_with_gradients(g, {"x": x})
    _, combined = evaluate_with_gradients(lambda: 2.0 * f() - 0.5 * g(), {"x": x})
    assert torch.allclose(combined["x"], 2.0 * gf["x"] - 0.5 * gg["x"], atol=1e-12)


def test_grad_check_quadratic(generator):
    A = torch.randn(5, 5, generator=generator, dtype=DTYPE)
    x = nn.Parameter(torch.randn(5, generator=generator, dtype=DTYPE))
    result = grad_check("quadratic", lambda: x @ A @ x, {"x": x})
    assert result.max_relative_error < 1e-8
    assert result.passed


def test_grad_check_matmul_elu_chain(generator):
    W1 = nn.Parameter(torch.randn(4, 3, generator=generator, dtype=DTYPE))
    W2 = nn.Parameter(torch.randn(3, 2, generator=generator, dtype=DTYPE))
    x = torch.randn(5, 4, generator=generator, dtype=DTYPE)
    result = grad_check("chain", lambda: F.elu(F.elu(x @ W1) @ W2).sum(), {"W1": W1, "W2": W2})
    assert result.max_relative_error < 1e-7


def test_grad_check_reports_wrong_gradient():
    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return x * x

        @staticmethod
        def backward(ctx, grad):
            return grad

    x = param(1.5, -2.0)
    result = grad_check("wrong", lambda: Wrong.apply(x).sum(), {"x": x})
    assert not result.passed
    assert result.worst_parameter == "x"


def test_grad_check_samples_large_parameters():
    x = nn.Parameter(torch.ones(120, 100, dtype=DTYPE))
    result = grad_check("big", lambda: (x ** 2).sum(), {"x": x}, max_coordinates=50)
    assert result.coordinates_checked == 50


def test_adam_zero_gradients_without_decay_keep_parameters():
    x = param(1.0, -2.0)
    state = AdamState({"x": x}, lr=0.1, weight_decay=0.0)
    x.grad = torch.zeros_like(x)
    adam_step(state)
    assert torch.equal(x.detach(), torch.tensor([1.0, -2.0], dtype=DTYPE))


def test_adam_first_step_moves_by_lr_sign():
    x = param(0.5, 0.5, 0.5)
    state = AdamState({"x": x}, lr=0.01, weight_decay=0.0)
    x.grad = torch.tensor([3.0, -0.2, 40.0], dtype=DTYPE)
    adam_step(state)
    assert torch.allclose(x.detach(), torch.tensor([0.49, 0.51, 0.49], dtype=DTYPE), atol=1e-6)
    assert torch.equal(x.grad, torch.zeros(3, dtype=DTYPE))
    assert state.step_count == 1


def test_adam_decoupled_weight_decay():
    x = param(2.0, -4.0)
    state = AdamState({"x": x}, lr=0.001, weight_decay=0.01)
    x.grad = torch.zeros_like(x)
    adam_step(state)
    assert torch.allclose(x.detach(), torch.tensor([2.0, -4.0], dtype=DTYPE) * (1 - 0.001 * 0.01), atol=1e-15)


def test_adam_missing_gradient():
    x = param(1.0)
    with pytest.raises(MissingGradientError) as exc:
        adam_step(AdamState({"x": x}))
    assert exc.value.names == ["x"]
