import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from emoda import tensor as T
from emoda.checks import PRIMITIVE_TOL, SUITE, run_check
from emoda.errors import ContractError, DimensionError, DomainError, ParameterError, SequenceTooShortError
from emoda.gradcheck import check_gradients
from emoda.tensor import Tensor

PRIMITIVE_CHECKS = [c for c in SUITE if c[0] in {
    "matmul", "conv1d", "conv1d_batched", "softmax_tau1", "softmax_tau2", "log_softmax_tau1",
    "log_softmax_tau2", "add", "sub", "mul", "neg", "exp", "log", "sigmoid", "tanh", "prelu", "dropout",
    "concat_reshape_sum_mean"}]


def test_matmul_identity():
    out = T.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3, 4], [5, 6]]))
    np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])


def test_matmul_hand_arithmetic():
    assert T.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_gradient_finite_differences(rng):
    a = Tensor(rng.standard_normal((3, 4)))
    b = Tensor(rng.standard_normal((4, 2)))
    errors = check_gradients(lambda: T.sum_(T.matmul(a, b)), [a, b])
    assert max(errors.values()) < 1e-6


def test_conv1d_identity_kernel():
    x = Tensor([[1.0, -2.0, 3.5, 0.25]])
    out = T.conv1d(x, Tensor([[[1.0]]]), Tensor([0.0]), stride=1)
    np.testing.assert_array_equal(out.data, x.data)


def test_conv1d_hand_arithmetic():
    out = T.conv1d(Tensor([[1.0, 2.0, 3.0, 4.0]]), Tensor([[[1.0, 1.0]]]), Tensor([0.0]), stride=2)
    assert out.data.tolist() == [[3.0, 7.0]]


def test_conv1d_output_length():
    out = T.conv1d(Tensor(np.zeros((41, 30))), Tensor(np.zeros((64, 41, 10))), Tensor(np.zeros(64)), stride=2)
    assert out.shape == (64, (30 - 10) // 2 + 1)


def test_conv1d_too_short_names_minimum():
    with pytest.raises(SequenceTooShortError, match="at least 4"):
        T.conv1d(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 1, 4))), Tensor(np.zeros(1)))


def test_conv1d_gradients_spec_extents(rng):
    x = Tensor(rng.standard_normal((3, 16)))
    w = Tensor(rng.standard_normal((2, 3, 4)))
    b = Tensor(rng.standard_normal(2))
    proj = rng.standard_normal((2, 7))
    errors = check_gradients(lambda: T.sum_(T.conv1d(x, w, b, 2) * proj), [x, w, b])
    assert max(errors.values()) < 1e-6


def test_softmax_uniform():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0, 0.0])).data, [0.25] * 4, atol=1e-15)


def test_softmax_temperature_hand_arithmetic():
    out = T.softmax(Tensor([2.0, 0.0]), temperature=2.0).data
    e = math.e
    np.testing.assert_allclose(out, [e / (e + 1), 1 / (e + 1)], rtol=1e-14)
    np.testing.assert_allclose(out, [0.7311, 0.2689], atol=1e-4)


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_softmax_rejects_nonpositive_temperature(tau):
    with pytest.raises(ParameterError):
        T.softmax(Tensor([1.0, 2.0]), tau)


def test_softmax_jacobian_matches_finite_differences(rng):
    z = Tensor(rng.standard_normal(4))
    for i in range(4):
        errors = check_gradients(lambda: T.softmax(z)[i], [z])
        assert errors[0] < 1e-6


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(0.1, 10.0))
def test_softmax_rows_are_distributions(z, tau):
    p = T.softmax(Tensor(z), tau).data
    # large gaps at small tau underflow to exactly 0, so only the row max is guaranteed positive
    assert np.all(p >= 0) and np.all(p.max(axis=1) > 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_prelu_definition():
    assert T.prelu(Tensor([-2.0]), Tensor([0.25])).data.tolist() == [-0.5]
    assert T.prelu(Tensor([3.0]), Tensor([0.25])).data.tolist() == [3.0]


def test_dropout_degenerate_rate_is_identity(rng):
    x = Tensor(rng.standard_normal((4, 4)))
    assert T.dropout(x, 0.0, True, rng) is x
    assert T.dropout(x, 0.5, False) is x


def test_dropout_inverted_scaling(rng):
    x = Tensor(np.ones((200, 200)))
    out = T.dropout(x, 0.25, True, rng).data
    assert set(np.unique(out)) <= {0.0, 1.0 / 0.75}
    assert abs((out == 0).mean() - 0.25) < 0.01


def test_log_of_nonpositive_raises():
    with pytest.raises(DomainError):
        T.log(Tensor([1.0, 0.0]))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_shared_consumer_sums_path_gradients(rng):
    x = Tensor(rng.standard_normal(5), requires_grad=True)
    f = lambda: T.sum_(T.tanh(x) * T.exp(x))
    f().backward()
    tanh, ex = np.tanh(x.data), np.exp(x.data)
    np.testing.assert_allclose(x.grad, (1 - tanh ** 2) * ex + tanh * ex, rtol=1e-12)
    assert check_gradients(f, [x])[0] < 1e-6


def test_backward_twice_doubles_exactly(rng):
    w = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
    x = Tensor(rng.standard_normal((2, 3)))
    loss = T.sum_(T.tanh(T.matmul(x, w)) * T.matmul(x, w))
    loss.backward()
    once = w.grad.copy()
    loss.backward()
    assert np.array_equal(w.grad, 2 * once)


def test_no_grad_builds_no_graph():
    w = Tensor(np.ones(2), requires_grad=True)
    with T.no_grad():
        out = w * 3.0
    assert not out.requires_grad and out.is_leaf


def test_frozen_tensor_passes_gradient_through():
    w = Tensor(np.array([2.0]), requires_grad=True)
    x = Tensor(np.array([3.0]), requires_grad=True)
    with T.frozen([w]):
        T.sum_(w * x).backward()
    assert w.grad is None
    assert x.grad.tolist() == [2.0]
    assert w.requires_grad


def test_tape_order_visits_consumers_first():
    # ids grow with creation, so a node is always newer than its parents
    a = Tensor(np.ones(2), requires_grad=True)
    b = T.exp(a)
    c = b * a
    assert a._id < b._id < c._id


def test_gru_rejects_empty_sequence():
    h = Tensor(np.zeros(2))
    w = [Tensor(np.zeros((2, 1)))] * 3 + [Tensor(np.zeros((2, 2)))] * 3 + [Tensor(np.zeros(2))] * 3
    with pytest.raises(ContractError):
        T.gru(Tensor(np.zeros((0, 1))), h, *w)


@pytest.mark.parametrize("name,build,tol,coords", PRIMITIVE_CHECKS, ids=[c[0] for c in PRIMITIVE_CHECKS])
def test_primitive_gradients(name, build, tol, coords):
    result = run_check(name, build, tol, coords, instances=10)
    assert tol == PRIMITIVE_TOL
    assert result.passed, result.line()
