import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ikdp import tensor as T
from ikdp.tensor import Adam, BackwardError, NonFiniteGradientError, ShapeError, Tensor

from conftest import check_op_grad, numeric_grad, rel_err


def test_matmul_identity_and_hand_product():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), m).data, m.data)
    assert T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    ref = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                ref[i, j] += a[i, k] * b[k, j]
    out = T.matmul(Tensor(a), Tensor(b)).data
    assert np.max(np.abs(out - ref)) < 1e-6


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_rank_cap():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 1, 1, 1)))


@pytest.mark.parametrize("op,args,expected", [
    ("add", ([1.0, 2.0], [3.0, 4.0]), [4.0, 6.0]),
    ("sub", ([1.0, 2.0], [3.0, 5.0]), [-2.0, -3.0]),
    ("mul", ([1.0, 2.0], [3.0, 4.0]), [3.0, 8.0]),
    ("relu", ([-1.0, 2.0],), [0.0, 2.0]),
])
def test_elementwise_values(op, args, expected):
    out = T.elementwise(op, *[Tensor(a) for a in args])
    np.testing.assert_allclose(out.data, expected)


def test_elementwise_scale_and_trig():
    np.testing.assert_allclose(T.elementwise("scale", Tensor([1.0, -2.0]), 3.0).data, [3.0, -6.0])
    np.testing.assert_allclose(T.elementwise("sin", Tensor([0.0])).data, [0.0])
    np.testing.assert_allclose(T.elementwise("cos", Tensor([0.0])).data, [1.0])


def test_elementwise_incompatible_shapes():
    with pytest.raises(ShapeError):
        T.add(Tensor(np.zeros(3)), Tensor(np.zeros(2)))
    with pytest.raises(ValueError):
        T.elementwise("tanh", Tensor([0.0]))


def test_gelu_gradient_at_half():
    with T.precision(np.float64):
        x = Tensor([0.5], requires_grad=True)
        T.backward(T.gelu(x).sum())
        fd = numeric_grad(lambda: float(T.gelu(Tensor(x.data)).data[0]), x.data)
    assert abs(x.grad[0] - fd[0]) < 1e-3


@pytest.mark.parametrize("name,build,shapes", [
    ("add", T.add, [(3, 4), (3, 4)]),
    ("add_bias", T.add, [(2, 3, 4), (4,)]),
    ("sub", T.sub, [(3, 4), (3, 4)]),
    ("mul", T.mul, [(3, 4), (3, 4)]),
    ("scale", lambda a: T.scale(a, -1.7), [(5,)]),
    ("relu", T.relu, [(4, 5)]),
    ("gelu", T.gelu, [(4, 5)]),
    ("sin", T.sin, [(6,)]),
    ("cos", T.cos, [(6,)]),
    ("matmul", T.matmul, [(3, 4), (4, 2)]),
    ("matmul_batched", T.matmul, [(2, 3, 4), (2, 4, 5)]),
    ("matmul_shared", T.matmul, [(2, 3, 4), (4, 5)]),
    ("transpose", T.transpose, [(2, 3, 4)]),
    ("softmax", T.softmax_rows, [(4, 5)]),
    ("layer_norm", T.layer_norm, [(3, 6), (6,), (6,)]),
    ("concat", lambda a, b: T.concat([a, b], axis=-1), [(2, 3), (2, 2)]),
    ("slice", lambda a: T.slice_last(a, 1, 3), [(2, 5)]),
    ("heads", lambda a: T.merge_heads(T.scale(T.split_heads(a, 2), 2.0), 2), [(2, 3, 4)]),
    ("mean", lambda a: T.mean(a, axis=1), [(2, 3, 4)]),
    ("mse", T.mse, [(3, 4), (3, 4)]),
])
def test_isolated_op_gradients(name, build, shapes):
    assert check_op_grad(build, *shapes) < 1e-3, name


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax_rows(Tensor([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3], atol=1e-7)
    np.testing.assert_allclose(T.softmax_rows(Tensor([[1000.0, 0.0]])).data, [[1.0, 0.0]], atol=1e-6)
    rows = T.softmax_rows(Tensor(np.random.default_rng(0).normal(size=(4, 5)))).data
    assert np.all(np.abs(rows.sum(axis=1) - 1) < 1e-6)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=12))
def test_softmax_rows_sum_to_one(row):
    out = T.softmax_rows(Tensor([row])).data
    assert np.all(out >= 0)
    assert abs(float(out.sum(dtype=np.float64)) - 1.0) < 1e-6


def test_layer_norm_examples():
    g, b = Tensor(np.ones(4)), Tensor(np.zeros(4))
    np.testing.assert_array_equal(T.layer_norm(Tensor(np.full((2, 4), 3.0)), g, b).data, 0.0)
    out = T.layer_norm(Tensor(np.random.default_rng(2).normal(size=(5, 4)) * 10 + 3), g, b).data
    assert np.all(np.abs(out.mean(axis=1)) < 1e-6)
    with pytest.raises(ShapeError):
        T.layer_norm(Tensor(np.zeros((2, 1))), Tensor(np.ones(1)), Tensor(np.zeros(1)))


def test_mse_examples_and_gradient():
    assert T.mse(Tensor([1.0, 2.0]), Tensor([1.0, 2.0])).item() == 0.0
    assert T.mse(Tensor([0.0, 0.0]), Tensor([3.0, 4.0])).item() == 12.5
    a, b = Tensor([0.5, -1.0, 2.0], requires_grad=True), Tensor([1.0, 1.0, 1.0])
    T.backward(T.mse(a, b))
    np.testing.assert_allclose(a.grad, 2 * (a.data - b.data) / 3, rtol=1e-6)
    with pytest.raises(ShapeError):
        T.mse(Tensor([1.0]), Tensor([1.0, 2.0]))


def test_backward_square_and_fan_out():
    x = Tensor([3.0], requires_grad=True)
    T.backward((x * x).sum())
    assert x.grad[0] == 6.0
    y = Tensor([1.0], requires_grad=True)
    T.backward((y + y).sum())
    assert y.grad[0] == 2.0


def test_backward_rejects_non_scalar_and_clears_tape():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(BackwardError):
        T.backward(x * x)
    y = Tensor([2.0], requires_grad=True)
    T.backward((y * y).sum())
    assert y.grad[0] == 4.0 and x.grad is None


def test_backward_linear_mse_matches_finite_difference():
    rng = np.random.default_rng(3)
    with T.precision(np.float64):
        w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        x, y = Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(4, 2)))
        T.backward(T.mse(x @ w, y))
        with T.no_grad():
            fd = numeric_grad(lambda: T.mse(x @ w, y).item(), w.data)
    assert rel_err(w.grad, fd) < 1e-3


def test_two_layer_hand_derivation():
    # loss = (b * relu(a * x))^2 with x = 2, a = 0.5, b = -3
    a = Tensor([0.5], requires_grad=True)
    b = Tensor([-3.0], requires_grad=True)
    x = Tensor([2.0])
    h = T.relu(T.mul(a, x))
    out = T.mul(b, h)
    T.backward(T.mul(out, out).sum())
    hv = 1.0
    ov = -3.0 * hv
    assert a.grad[0] == pytest.approx(2 * ov * -3.0 * 2.0)
    assert b.grad[0] == pytest.approx(2 * ov * hv)


def test_adam_zero_gradient_leaves_params():
    p = {"w": Tensor([1.0, -2.0], requires_grad=True)}
    opt = Adam(p)
    p["w"].grad = np.zeros(2, dtype=np.float32)
    opt.step()
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])


def test_adam_first_step_is_signed_lr():
    p = {"w": Tensor([1.0, 1.0], requires_grad=True)}
    opt = Adam(p, lr=0.01)
    p["w"].grad = np.array([5.0, -0.3], dtype=np.float32)
    opt.step()
    np.testing.assert_allclose(p["w"].data, [0.99, 1.01], atol=1e-6)
    assert opt.step_count == 1


def test_adam_decreases_quadratic():
    x = Tensor([2.0], requires_grad=True)
    opt = Adam({"x": x}, lr=0.1)
    values = []
    for _ in range(3):
        loss = (x * x).sum()
        values.append(loss.item())
        T.backward(loss)
        opt.step()
        opt.zero_grad()
    values.append(float(x.data[0] ** 2))
    assert all(b < a for a, b in zip(values, values[1:]))


def test_adam_non_finite_gradient_names_parameter():
    p = {"good": Tensor([1.0], requires_grad=True), "bad": Tensor([1.0], requires_grad=True)}
    p["good"].grad = np.ones(1, dtype=np.float32)
    p["bad"].grad = np.array([np.nan], dtype=np.float32)
    with pytest.raises(NonFiniteGradientError, match="bad"):
        Adam(p).step()
    assert p["good"].data[0] == 1.0


def test_adam_step_state_shape_mismatch():
    p = {"w": Tensor([1.0, 2.0], requires_grad=True)}
    p["w"].grad = np.ones(2, dtype=np.float32)
    with pytest.raises(ShapeError):
        T.adam_step(p, {"w": np.zeros(3)}, {"w": np.zeros(3)}, 1, 1e-3, 0.9, 0.999, 1e-8)


def test_storage_is_float32_with_float64_override():
    assert Tensor([1.0]).data.dtype == np.float32
    with T.precision(np.float64):
        assert Tensor([1.0]).data.dtype == np.float64
    assert T.default_dtype() == np.float32


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        y = x * x
    assert not y.requires_grad


def test_deterministic_replay():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 4))

    def run():
        x = Tensor(a, requires_grad=True)
        out = T.layer_norm(T.gelu(x @ Tensor(b)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
        T.backward(T.softmax_rows(out).sum() + out.sum())
        return out.data.tobytes() + x.grad.tobytes()

    assert run() == run()
