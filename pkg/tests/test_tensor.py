"""Primitive-level checks: forward values, gradients vs central differences,
shape/finiteness errors, and the serialization round trip."""

import math

import numpy as np
import pytest

from ime import tensor as T


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array."""
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = f(x)
        flat[i] = orig - eps
        f_minus = f(x)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2 * eps)
    return grad


def analytic_grad(op, x: np.ndarray) -> tuple[np.ndarray, float]:
    p = T.Parameter(x.copy(), "probe")
    out = op(p)
    T.backward(out)
    return p.grad, out.item()


def check_op_gradient(op, x: np.ndarray, rtol: float = 1e-6):
    got, _ = analytic_grad(op, x)
    want = numeric_grad(lambda arr: op(T.Tensor(arr)).item(), x.copy())
    # atol absorbs finite-difference roundoff on near-zero coordinates
    np.testing.assert_allclose(got, want, rtol=rtol, atol=1e-8)


def weighted(op, w):
    """Scalar-valued composite sum(w * op(x)) to probe full Jacobians."""
    wt = T.Tensor(w)
    return lambda x: T.sum_(op(x) * wt)


# ---------------------------------------------------------------------------
# Forward values
# ---------------------------------------------------------------------------


def test_sigmoid_at_zero():
    assert T.sigmoid(T.Tensor([0.0])).data[0] == 0.5


def test_sigmoid_extremes_stay_finite():
    out = T.sigmoid(T.Tensor([-1000.0, 1000.0])).data
    assert out[0] == 0.0 and out[1] == 1.0


def test_softmax_of_constant_rows():
    out = T.softmax(T.Tensor([[3.0, 3.0, 3.0]])).data
    np.testing.assert_allclose(out, [[1 / 3, 1 / 3, 1 / 3]], rtol=0, atol=1e-15)


def test_softmax_contract():
    rng = np.random.default_rng(11)
    x = T.Tensor(rng.normal(size=(7, 11)) * 5)
    out = T.softmax(x, axis=1).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_sort_desc_worked_example():
    out = T.sort_desc_per_dimension(T.Tensor([[1.0, 2.0], [3.0, 0.0]]))
    np.testing.assert_array_equal(out.data, [[3.0, 2.0], [1.0, 0.0]])


def test_sort_desc_properties():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(9, 6))
    out = T.sort_desc_per_dimension(T.Tensor(x)).data
    assert np.all(np.diff(out, axis=0) <= 0)
    for j in range(x.shape[1]):
        np.testing.assert_array_equal(np.sort(out[:, j]), np.sort(x[:, j]))


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(13)
    a = rng.normal(size=(5, 5))
    b = rng.normal(size=(5, 5))
    got = T.matmul(T.Tensor(a), T.Tensor(b)).data
    want = np.zeros((5, 5))
    for i in range(5):
        for j in range(5):
            for k in range(5):
                want[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_l2_normalize_rows():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(4, 3)) + 0.5
    out = T.l2_normalize(T.Tensor(x), axis=1).data
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)


# ---------------------------------------------------------------------------
# Gradients vs central differences
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "name,op",
    [
        ("sigmoid", T.sigmoid),
        ("tanh", T.tanh),
        ("exp", T.exp),
        ("neg", T.neg),
        ("absolute", T.absolute),
        ("softmax", lambda x: T.softmax(x, axis=1)),
        ("l2_normalize", lambda x: T.l2_normalize(x, axis=1)),
        ("sort", T.sort_desc_per_dimension),
        ("powi3", lambda x: T.powi(x, 3)),
    ],
)
def test_unary_gradients(name, op):
    rng = np.random.default_rng(15)
    x = rng.normal(size=(4, 5)) * 0.8 + 0.1  # away from kinks and saturation
    w = rng.normal(size=(4, 5))
    check_op_gradient(weighted(op, w), x)


def test_log_sqrt_gradients_on_positive_input():
    rng = np.random.default_rng(16)
    x = rng.uniform(0.5, 2.0, size=(3, 4))
    w = rng.normal(size=(3, 4))
    check_op_gradient(weighted(T.log, w), x)
    check_op_gradient(weighted(T.sqrt, w), x)


def test_reduction_gradients():
    rng = np.random.default_rng(17)
    x = rng.normal(size=(4, 5))
    check_op_gradient(lambda t: T.sum_(t), x.copy())
    check_op_gradient(lambda t: T.frobenius_sq(t), x.copy())
    w0 = rng.normal(size=5)
    check_op_gradient(lambda t: T.sum_(T.mean(t, axis=0) * T.Tensor(w0)), x.copy())
    w1 = rng.normal(size=4)
    check_op_gradient(lambda t: T.sum_(T.sum_(t, axis=1) * T.Tensor(w1)), x.copy())


def test_binary_and_matmul_gradients():
    rng = np.random.default_rng(18)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 6))
    w = rng.normal(size=(3, 6))
    check_op_gradient(lambda t: T.sum_(T.matmul(t, T.Tensor(b)) * T.Tensor(w)), a.copy())
    check_op_gradient(lambda t: T.sum_(T.matmul(T.Tensor(a), t) * T.Tensor(w)), b.copy())

    c = rng.normal(size=(3, 4)) + 2.0
    w2 = rng.normal(size=(3, 4))
    check_op_gradient(lambda t: T.sum_((t * T.Tensor(c)) * T.Tensor(w2)), a.copy())
    check_op_gradient(lambda t: T.sum_((T.Tensor(a) / t) * T.Tensor(w2)), c.copy())


def test_broadcast_gradients():
    rng = np.random.default_rng(19)
    x = rng.normal(size=(4, 5))
    row = rng.normal(size=(1, 5))
    w = rng.normal(size=(4, 5))
    # gradient w.r.t. the broadcast operand must sum over the expanded axis
    check_op_gradient(lambda t: T.sum_((T.Tensor(x) + t) * T.Tensor(w)), row.copy())
    check_op_gradient(lambda t: T.sum_((T.Tensor(x) * t) * T.Tensor(w)), row.copy())


def test_concat_take_rows_gradients():
    rng = np.random.default_rng(20)
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(4, 3))
    w = rng.normal(size=(6, 3))
    check_op_gradient(lambda t: T.sum_(T.concat([t, T.Tensor(b)], axis=0) * T.Tensor(w)), a.copy())
    idx = np.array([3, 0, 3, 1])
    w2 = rng.normal(size=(4, 3))
    check_op_gradient(lambda t: T.sum_(T.take_rows(t, idx) * T.Tensor(w2)), b.copy())


def test_repeated_operand_accumulates():
    x = T.Parameter(np.array([3.0]), "x")
    y = x * x  # d/dx = 2x
    T.backward(T.sum_(y))
    assert x.grad[0] == pytest.approx(6.0)


def test_shared_output_gradient_not_aliased():
    # add returns the upstream gradient for both operands; the two leaves
    # must still accumulate independently.
    a = T.Parameter(np.array([1.0, 2.0]), "a")
    b = T.Parameter(np.array([3.0, 4.0]), "b")
    c = a + b
    d = c * a
    T.backward(T.sum_(d))
    np.testing.assert_allclose(a.grad, 2 * a.data + b.data)
    np.testing.assert_allclose(b.grad, a.data)


def test_sum_of_squares_gradient_is_exact():
    x = T.Parameter(np.random.default_rng(21).normal(size=(3, 3)), "x")
    T.backward(T.frobenius_sq(x))
    np.testing.assert_allclose(x.grad, 2 * x.data, rtol=0, atol=0)


# ---------------------------------------------------------------------------
# Error handling
# ---------------------------------------------------------------------------


def test_shape_mismatch_names_shapes():
    with pytest.raises(T.ShapeError) as err:
        T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))
    assert "(2, 3)" in str(err.value)
    with pytest.raises(T.ShapeError):
        T.add(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((4,))))


def test_non_finite_is_an_error():
    with pytest.raises(T.NonFiniteError):
        T.exp(T.Tensor([1000.0]))
    with pytest.raises(ValueError):
        T.log(T.Tensor([0.0]))
    with pytest.raises(ValueError):
        T.l2_normalize(T.Tensor([[0.0, 0.0]]), axis=1)


def test_backward_requires_scalar():
    with pytest.raises(T.ShapeError):
        T.backward(T.Parameter(np.ones(3), "p") * 2.0)


# ---------------------------------------------------------------------------
# GRU cell
# ---------------------------------------------------------------------------


def gru_reference(x, h, p):
    """Scalar-loop GRU oracle mirroring the cell's gate layout."""
    d_in, d_h = len(x), len(h)

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    def affine(w_x, w_h, bias, j):
        acc = bias[0][j]
        for i in range(d_in):
            acc += x[i] * w_x[i][j]
        for i in range(d_h):
            acc += h[i] * w_h[i][j]
        return acc

    out = []
    for j in range(d_h):
        z = sig(affine(p.w_xz.data, p.w_hz.data, p.b_z.data, j))
        r = sig(affine(p.w_xr.data, p.w_hr.data, p.b_r.data, j))
        n = p.b_n.data[0][j]
        for i in range(d_in):
            n += x[i] * p.w_xn.data[i][j]
        hn = 0.0
        for i in range(d_h):
            hn += h[i] * p.w_hn.data[i][j]
        n = math.tanh(n + r * hn)
        out.append((1.0 - z) * n + z * h[j])
    return np.array(out)


def test_gru_zero_everything_gives_zero():
    p = T.GRUCellParams(3, 4, "gru", np.random.default_rng(0))
    for param in p.parameters():
        param.data[...] = 0.0
    out = T.gru_cell(T.Tensor(np.zeros((1, 3))), T.Tensor(np.zeros((1, 4))), p)
    np.testing.assert_array_equal(out.data, np.zeros((1, 4)))


def test_gru_output_bounded():
    rng = np.random.default_rng(22)
    p = T.GRUCellParams(3, 4, "gru", np.random.default_rng(1))
    h = T.Tensor(np.zeros((1, 4)))
    for step in range(20):
        x = T.Tensor(rng.normal(size=(1, 3)) * 3)
        h = T.gru_cell(x, h, p)
        assert np.all(np.abs(h.data) < 1.0)


def test_gru_matches_scalar_reference():
    rng = np.random.default_rng(23)
    p = T.GRUCellParams(5, 7, "gru", np.random.default_rng(2))
    x = rng.normal(size=5)
    h = rng.normal(size=7) * 0.5
    got = T.gru_cell(T.Tensor(x[None, :]), T.Tensor(h[None, :]), p).data[0]
    want = gru_reference(list(x), list(h), p)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_gru_gradient():
    rng = np.random.default_rng(24)
    p = T.GRUCellParams(3, 4, "gru", np.random.default_rng(3))
    x = rng.normal(size=(1, 3))
    h0 = rng.normal(size=(1, 4)) * 0.3
    w = rng.normal(size=(1, 4))

    for param in p.parameters():
        def loss_of(arr, param=param):
            saved = param.data.copy()
            param.data[...] = arr
            out = T.sum_(T.gru_cell(T.Tensor(x), T.Tensor(h0), p) * T.Tensor(w)).item()
            param.data[...] = saved
            return out

        param.zero_grad()
        T.backward(T.sum_(T.gru_cell(T.Tensor(x), T.Tensor(h0), p) * T.Tensor(w)))
        want = numeric_grad(loss_of, param.data.copy())
        np.testing.assert_allclose(param.grad, want, rtol=1e-6, atol=1e-8)


# ---------------------------------------------------------------------------
# no_grad and serialization
# ---------------------------------------------------------------------------


def test_no_grad_blocks_recording():
    x = T.Parameter(np.ones(3), "x")
    with T.no_grad():
        y = T.sum_(x * 2.0)
    assert not y.requires_grad


def test_tensor_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(25)
    arrays = {
        "alpha": rng.normal(size=(3, 4)),
        "beta.gamma": rng.normal(size=(7,)),
        "scalar": np.array(math.pi),
    }
    path = tmp_path / "bank.bin"
    T.save_tensors(path, arrays)
    loaded = T.load_tensors(path)
    assert set(loaded) == set(arrays)
    for name in arrays:
        assert loaded[name].shape == np.asarray(arrays[name]).shape
        assert loaded[name].tobytes() == np.asarray(arrays[name], dtype=np.float64).tobytes()


def test_tensor_save_load_save_identical(tmp_path):
    arrays = {"w": np.random.default_rng(26).normal(size=(5, 5))}
    first = tmp_path / "a.bin"
    second = tmp_path / "b.bin"
    T.save_tensors(first, arrays)
    T.save_tensors(second, T.load_tensors(first))
    assert first.read_bytes() == second.read_bytes()


def test_truncated_tensor_file_errors(tmp_path):
    path = tmp_path / "bank.bin"
    T.save_tensors(path, {"w": np.ones((4, 4))})
    path.write_bytes(path.read_bytes()[:-24])
    with pytest.raises(ValueError, match="truncated"):
        T.load_tensors(path)


def test_wrong_magic_errors(tmp_path):
    path = tmp_path / "bank.bin"
    path.write_bytes(b"not a tensor file")
    with pytest.raises(ValueError):
        T.load_tensors(path)
