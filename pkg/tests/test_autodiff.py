"""Reverse-mode kernel checks: values against numpy oracles, gradients
against central differences computed independently of the package's own
grad_check helper."""

import numpy as np
import pytest

from geofuse import autodiff as ad
from geofuse.autodiff import Parameter, Tensor, backward, constant, zero_grads
from geofuse.errors import ContractError, ShapeError


def numeric_grad(f, param: Parameter, eps: float = 1e-6) -> np.ndarray:
    """Central differences of the scalar f() w.r.t. every entry of param."""
    out = np.zeros_like(param.value)
    flat_v = param.value.ravel()
    flat_g = out.ravel()
    for i in range(flat_v.size):
        keep = flat_v[i]
        flat_v[i] = keep + eps
        hi = float(f().data)
        flat_v[i] = keep - eps
        lo = float(f().data)
        flat_v[i] = keep
        flat_g[i] = (hi - lo) / (2.0 * eps)
    return out


def analytic_grad(f, param: Parameter) -> np.ndarray:
    zero_grads([param])
    backward(f())
    return param.grad.copy()


def check_op(build, value, rng, rtol=1e-6, atol=1e-9):
    """Compare backward() against central differences for one parameter."""
    p = Parameter(value, "p")
    f = lambda: build(p.tensor())
    got = analytic_grad(f, p)
    want = numeric_grad(f, p)
    np.testing.assert_allclose(got, want, rtol=rtol, atol=atol)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


# ---------------------------------------------------------------------------
# graph plumbing
# ---------------------------------------------------------------------------

def test_parameter_tensor_tracks_value_and_trainability():
    p = Parameter([[1.0, 2.0]], "w")
    t = p.tensor()
    assert t.requires_grad and t.param is p
    p.trainable = False
    assert not p.tensor().requires_grad


def test_constant_subgraphs_fold():
    a, b = constant([1.0, 2.0]), constant([3.0, 4.0])
    out = ad.mul(ad.add(a, b), a)
    assert not out.requires_grad and out.parents == () and out.vjp is None


def test_backward_rejects_nonscalar():
    p = Parameter([1.0, 2.0], "p")
    with pytest.raises(ContractError):
        backward(ad.mul(p.tensor(), p.tensor()))


def test_backward_on_constant_is_a_noop():
    backward(ad.sum_all(constant([1.0, 2.0])))  # must not raise


def test_gradients_accumulate_until_cleared():
    p = Parameter([2.0], "p")
    f = lambda: ad.sum_all(ad.mul(p.tensor(), p.tensor()))
    backward(f())
    backward(f())
    np.testing.assert_allclose(p.grad, [8.0])  # 2 * d(x^2)/dx at x=2
    zero_grads([p])
    np.testing.assert_allclose(p.grad, [0.0])


def test_frozen_parameter_gets_exactly_zero_grad():
    w = Parameter([[1.0, -2.0]], "w")
    frozen = Parameter([[3.0, 4.0]], "f", trainable=False)
    backward(ad.sum_all(ad.mul(w.tensor(), frozen.tensor())))
    assert np.all(frozen.grad == 0.0)
    np.testing.assert_allclose(w.grad, frozen.value)


def test_shared_node_gradient_sums_over_uses():
    # y = x*x built by reusing ONE tensor node; both paths must accumulate
    p = Parameter([3.0], "p")
    t = p.tensor()
    backward(ad.sum_all(ad.mul(t, t)))
    np.testing.assert_allclose(p.grad, [6.0])


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def test_same_shape_ops_values(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    np.testing.assert_array_equal(ad.add(constant(a), constant(b)).data, a + b)
    np.testing.assert_array_equal(ad.sub(constant(a), constant(b)).data, a - b)
    np.testing.assert_array_equal(ad.mul(constant(a), constant(b)).data, a * b)
    np.testing.assert_array_equal(ad.neg(constant(a)).data, -a)


@pytest.mark.parametrize("op", [ad.add, ad.sub, ad.mul])
def test_same_shape_ops_reject_broadcast(op):
    with pytest.raises(ShapeError):
        op(constant(np.zeros((3, 4))), constant(np.zeros((4,))))


def test_elementwise_gradients(rng):
    v = rng.standard_normal((2, 3))
    other = constant(rng.standard_normal((2, 3)))
    check_op(lambda t: ad.sum_all(ad.mul(t, other)), v, rng)
    check_op(lambda t: ad.sum_all(ad.sub(other, t)), v, rng)
    check_op(lambda t: ad.sum_all(ad.neg(t)), v, rng)
    check_op(lambda t: ad.mean_all(ad.mul_scalar(t, 2.5)), v, rng)
    check_op(lambda t: ad.sum_all(ad.add_scalar(t, -1.25)), v, rng)


def test_add_bias_value_and_grad(rng):
    x = Parameter(rng.standard_normal((2, 3, 4)), "x")
    b = Parameter(rng.standard_normal(4), "b")
    f = lambda: ad.sum_all(ad.tanh(ad.add_bias(x.tensor(), b.tensor())))
    np.testing.assert_array_equal(
        ad.add_bias(x.tensor(), b.tensor()).data, x.value + b.value
    )
    np.testing.assert_allclose(analytic_grad(f, b), numeric_grad(f, b), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(analytic_grad(f, x), numeric_grad(f, x), rtol=1e-6, atol=1e-9)
    with pytest.raises(ShapeError):
        ad.add_bias(x.tensor(), constant(np.zeros(5)))


def test_const_ops_broadcast_but_never_grow(rng):
    x = rng.standard_normal((2, 5))
    row = rng.standard_normal((1, 5))
    np.testing.assert_array_equal(ad.add_const(constant(x), row).data, x + row)
    np.testing.assert_array_equal(ad.mul_const(constant(x), row).data, x * row)
    check_op(lambda t: ad.sum_all(ad.add_const(t, row)), x, rng)
    check_op(lambda t: ad.sum_all(ad.mul_const(t, row)), x, rng)
    for op in (ad.add_const, ad.mul_const):
        with pytest.raises(ShapeError):
            op(constant(np.zeros(5)), np.zeros((2, 5)))


def test_expand_ops(rng):
    x = rng.standard_normal((2, 3))
    t = ad.expand_leading(constant(x), 4)
    assert t.shape == (4, 2, 3)
    np.testing.assert_array_equal(t.data, np.broadcast_to(x, (4, 2, 3)))
    t2 = ad.expand_axis(constant(x), 1, 5)
    assert t2.shape == (2, 5, 3)
    # gradient of a repeat is a sum over the repeats
    check_op(lambda t: ad.sum_all(ad.tanh(ad.expand_leading(t, 3))), x, rng)
    check_op(lambda t: ad.sum_all(ad.tanh(ad.expand_axis(t, 1, 3))), x, rng)


# ---------------------------------------------------------------------------
# matmul against a triple-loop oracle
# ---------------------------------------------------------------------------

def matmul_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out


def test_matmul_matches_triple_loop(rng):
    a = rng.standard_normal((4, 6))
    b = rng.standard_normal((6, 5))
    np.testing.assert_allclose(
        ad.matmul(constant(a), constant(b)).data, matmul_oracle(a, b), rtol=0, atol=1e-12
    )


def test_matmul_batched_broadcast_value(rng):
    a = rng.standard_normal((3, 2, 4))
    b = rng.standard_normal((4, 5))
    got = ad.matmul(constant(a), constant(b)).data
    for i in range(3):
        np.testing.assert_allclose(got[i], matmul_oracle(a[i], b), atol=1e-12)


def test_matmul_gradients(rng):
    a = Parameter(rng.standard_normal((3, 4)), "a")
    b = Parameter(rng.standard_normal((4, 2)), "b")
    f = lambda: ad.sum_all(ad.tanh(ad.matmul(a.tensor(), b.tensor())))
    np.testing.assert_allclose(analytic_grad(f, a), numeric_grad(f, a), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(analytic_grad(f, b), numeric_grad(f, b), rtol=1e-6, atol=1e-9)


def test_matmul_broadcast_gradient_sums_over_batch(rng):
    # b is shared across the batch: its grad collapses the batch axis
    a = constant(rng.standard_normal((5, 3, 4)))
    b = Parameter(rng.standard_normal((4, 2)), "b")
    f = lambda: ad.sum_all(ad.matmul(a, b.tensor()))
    np.testing.assert_allclose(analytic_grad(f, b), numeric_grad(f, b), rtol=1e-6, atol=1e-9)


def test_matmul_shape_errors():
    with pytest.raises(ShapeError):
        ad.matmul(constant(np.zeros(3)), constant(np.zeros((3, 2))))
    with pytest.raises(ShapeError):
        ad.matmul(constant(np.zeros((2, 3))), constant(np.zeros((4, 2))))
    with pytest.raises(ShapeError):
        ad.matmul(constant(np.zeros((2, 3, 4))), constant(np.zeros((3, 4, 5))))


# ---------------------------------------------------------------------------
# layout ops
# ---------------------------------------------------------------------------

def test_transpose_reshape_roundtrip(rng):
    x = rng.standard_normal((2, 3, 4))
    t = ad.transpose(constant(x), (2, 0, 1))
    assert t.shape == (4, 2, 3)
    np.testing.assert_array_equal(t.data, np.transpose(x, (2, 0, 1)))
    check_op(lambda t: ad.sum_all(ad.tanh(ad.transpose(t, (1, 0, 2)))), x, rng)
    check_op(lambda t: ad.sum_all(ad.tanh(ad.reshape(t, (6, 4)))), x, rng)


def test_gather_rows_selects_and_routes_grads(rng):
    x = rng.standard_normal((2, 5, 3))
    idx = [4, 0, 2]
    t = ad.gather_rows(constant(x), idx)
    np.testing.assert_array_equal(t.data, x[:, idx, :])
    p = Parameter(x, "x")
    backward(ad.sum_all(ad.gather_rows(p.tensor(), idx)))
    want = np.zeros_like(x)
    want[:, idx, :] = 1.0
    np.testing.assert_array_equal(p.grad, want)
    with pytest.raises(ShapeError):
        ad.gather_rows(constant(np.zeros((5, 3))), [0])


def test_put_rows_replaces_and_splits_grads(rng):
    x = Parameter(rng.standard_normal((2, 5, 3)), "x")
    rows = Parameter(rng.standard_normal((2, 2, 3)), "rows")
    idx = [1, 3]
    out = ad.put_rows(x.tensor(), idx, rows.tensor())
    np.testing.assert_array_equal(out.data[:, idx, :], rows.value)
    keep = [0, 2, 4]
    np.testing.assert_array_equal(out.data[:, keep, :], x.value[:, keep, :])
    backward(ad.sum_all(out))
    # overwritten rows contribute nothing to x's grad
    assert np.all(x.grad[:, idx, :] == 0.0) and np.all(x.grad[:, keep, :] == 1.0)
    assert np.all(rows.grad == 1.0)
    with pytest.raises(ShapeError):
        ad.put_rows(x.tensor(), idx, constant(np.zeros((2, 3, 3))))


def test_pick_values_and_errors(rng):
    x = rng.standard_normal((4, 3))
    idx = np.array([2, 0, 1, 2])
    t = ad.pick(constant(x), idx)
    np.testing.assert_array_equal(t.data, x[np.arange(4), idx])
    check_op(lambda t: ad.sum_all(ad.pick(t, idx)), x, rng)
    with pytest.raises(ContractError):
        ad.pick(constant(x), np.array([0, 1, 3, 0]))  # column 3 of 3
    with pytest.raises(ShapeError):
        ad.pick(constant(x), np.array([0, 1]))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def test_reductions_values_and_grads(rng):
    x = rng.standard_normal((3, 4))
    assert float(ad.sum_all(constant(x)).data) == pytest.approx(x.sum())
    assert float(ad.mean_all(constant(x)).data) == pytest.approx(x.mean())
    np.testing.assert_allclose(ad.sum_axis(constant(x), 0).data, x.sum(axis=0))
    np.testing.assert_allclose(ad.mean_axis(constant(x), 1).data, x.mean(axis=1))
    np.testing.assert_allclose(ad.sum_axis(constant(x), -1).data, x.sum(axis=-1))
    check_op(lambda t: ad.sum_all(ad.tanh(ad.sum_axis(t, 1))), x, rng)
    check_op(lambda t: ad.sum_all(ad.tanh(ad.mean_axis(t, 0))), x, rng)


# ---------------------------------------------------------------------------
# nonlinearities and normalizers
# ---------------------------------------------------------------------------

def test_tanh_gelu_relu_values(rng):
    x = rng.standard_normal((2, 7))
    np.testing.assert_allclose(ad.tanh(constant(x)).data, np.tanh(x))
    # tanh-form gelu: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715 x^3)))
    c = np.sqrt(2.0 / np.pi)
    want = 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x**3)))
    np.testing.assert_allclose(ad.gelu(constant(x)).data, want, atol=1e-12)
    np.testing.assert_array_equal(ad.relu(constant(x)).data, np.maximum(x, 0.0))


def test_nonlinearity_gradients(rng):
    x = rng.standard_normal((3, 5))
    check_op(lambda t: ad.sum_all(ad.tanh(t)), x, rng)
    check_op(lambda t: ad.sum_all(ad.gelu(t)), x, rng)
    # keep every entry away from the relu kink so the FD stencil is one-sided-safe
    far = np.where(np.abs(x) < 0.1, np.sign(x) * 0.5 + x, x)
    check_op(lambda t: ad.sum_all(ad.mul(ad.relu(t), t)), far, rng)


def softmax_oracle(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        e = np.exp(x[i] - x[i].max())
        out[i] = e / e.sum()
    return out


def test_softmax_matches_oracle_and_is_stable(rng):
    x = rng.standard_normal((6, 9))
    got = ad.softmax_lastdim(constant(x)).data
    np.testing.assert_allclose(got, softmax_oracle(x), atol=1e-12)
    np.testing.assert_allclose(got.sum(axis=-1), 1.0, atol=1e-12)
    huge = constant(np.array([[1e4, 1e4 + 1.0, -1e4]]))
    out = ad.softmax_lastdim(huge).data
    assert np.all(np.isfinite(out)) and out[0, 1] > out[0, 0] > out[0, 2]


def test_log_softmax_consistent_with_softmax(rng):
    x = rng.standard_normal((4, 6))
    ls = ad.log_softmax_lastdim(constant(x)).data
    np.testing.assert_allclose(np.exp(ls), softmax_oracle(x), atol=1e-12)
    check_op(lambda t: ad.sum_all(ad.mul_const(ad.log_softmax_lastdim(t), np.eye(4, 6))), x, rng)


def test_softmax_gradients(rng):
    x = rng.standard_normal((3, 4))
    w = rng.standard_normal((3, 4))  # weight the outputs so the grad is nontrivial
    check_op(lambda t: ad.sum_all(ad.mul_const(ad.softmax_lastdim(t), w)), x, rng)


def test_softmax_rejects_empty_rows():
    with pytest.raises(ShapeError):
        ad.softmax_lastdim(constant(np.zeros((2, 0))))
    with pytest.raises(ShapeError):
        ad.log_softmax_lastdim(constant(np.zeros((2, 0))))


def test_layer_norm_statistics_and_grads(rng):
    x = rng.standard_normal((4, 10)) * 3.0 + 1.5
    gain, bias = constant(np.ones(10)), constant(np.zeros(10))
    y = ad.layer_norm(constant(x), gain, bias).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-4)  # eps shifts variance slightly

    xp = Parameter(x, "x")
    gp = Parameter(rng.standard_normal(10), "gain")
    bp = Parameter(rng.standard_normal(10), "bias")
    f = lambda: ad.sum_all(ad.tanh(ad.layer_norm(xp.tensor(), gp.tensor(), bp.tensor())))
    for p in (xp, gp, bp):
        np.testing.assert_allclose(analytic_grad(f, p), numeric_grad(f, p), rtol=1e-5, atol=1e-8)
    with pytest.raises(ShapeError):
        ad.layer_norm(constant(x), constant(np.ones(9)), bias)


def test_normalize_lastdim_unit_norm_and_grads(rng):
    x = rng.standard_normal((5, 6))
    y = ad.normalize_lastdim(constant(x)).data
    np.testing.assert_allclose(np.linalg.norm(y, axis=-1), 1.0, atol=1e-7)
    check_op(lambda t: ad.sum_all(ad.tanh(ad.normalize_lastdim(t))), x, rng, rtol=1e-5)
    # the zero row is guarded, not NaN
    z = ad.normalize_lastdim(constant(np.zeros((1, 4)))).data
    assert np.all(z == 0.0)


# ---------------------------------------------------------------------------
# the package's own checker agrees with this file's oracle
# ---------------------------------------------------------------------------

def test_grad_check_passes_on_a_small_composite(rng):
    from geofuse.autodiff import grad_check

    w = Parameter(rng.standard_normal((6, 4)), "w")
    b = Parameter(np.zeros(4), "b")
    x = constant(rng.standard_normal((3, 6)))

    def f():
        h = ad.add_bias(ad.matmul(x, w.tensor()), b.tensor())
        return ad.mean_all(ad.gelu(h))

    assert grad_check(f, [w, b], samples_per_param=8) < 1e-6


def test_grad_check_catches_a_wrong_vjp(rng):
    from geofuse.autodiff import grad_check

    p = Parameter(rng.standard_normal(5), "p")

    def wrong():
        t = p.tensor()
        # deliberately broken derivative: claims d(x^2)/dx = x
        bad = ad._make(t.data * t.data, (t,), lambda g: (g * t.data * 0.5,))
        return ad.sum_all(bad)

    assert grad_check(wrong, [p]) > 0.4
