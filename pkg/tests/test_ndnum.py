"""Define tests for the numerical core."""
import numpy as np
import pytest

from glimpse_iqa import ndnum as nd
from glimpse_iqa.errors import NonFiniteError, ShapeError
from glimpse_iqa.ndnum import GraphTape, Tensor


def _grads(build, **arrays):
    """Return backward() of total(build(**leaves)) for the named arrays."""
    tape = GraphTape()
    leaves = {name: tape.leaf(value, name) for name, value in arrays.items()}
    return nd.backward(tape, nd.total(build(**leaves)))


def _numeric(build, name, **arrays):
    def f(value):
        shifted = {key: Tensor(val) for key, val in arrays.items()}
        shifted[name] = Tensor(value)
        return nd.total(build(**shifted)).item()

    return nd.finite_diff_grad(f, arrays[name])


def _brute_conv(x, k, b):
    c_out, c_in, kh, kw = k.shape
    _, h, w = x.shape
    out = np.zeros((c_out, h, w))
    for o in range(c_out):
        for i in range(h):
            for j in range(w):
                acc = b[o]
                for c in range(c_in):
                    for u in range(kh):
                        for v in range(kw):
                            r, s = i + u - kh // 2, j + v - kw // 2
                            if 0 <= r < h and 0 <= s < w:
                                acc += k[o, c, u, v] * x[c, r, s]
                out[o, i, j] = acc
    return out


def test_tensor_is_read_only():
    """Test that a tensor's data cannot be written in place."""
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 3.0


def test_scalar_becomes_one_element():
    """Test that a 0-d value is stored with shape (1,)."""
    assert Tensor(3.5).shape == (1,)
    assert Tensor(3.5).item() == 3.5


def test_item_requires_single_element():
    """Test that item() refuses a vector."""
    with pytest.raises(ShapeError):
        Tensor([1.0, 2.0]).item()


def test_constants_have_no_tape():
    """Test that ops on constants return untaped tensors."""
    y = nd.relu(Tensor([-1.0, 2.0]))
    assert y.tape is None
    np.testing.assert_array_equal(y.data, [0.0, 2.0])


def test_linear_forward(rng):
    """Test that linear computes W·x + b."""
    x, W, b = rng.normal(size=4), rng.normal(size=(3, 4)), rng.normal(size=3)
    out = nd.linear(Tensor(x), Tensor(W), Tensor(b))
    np.testing.assert_allclose(out.data, W @ x + b, rtol=0, atol=1e-14)


def test_linear_shape_mismatch():
    """Test that a mismatched weight raises ShapeError."""
    with pytest.raises(ShapeError):
        nd.linear(Tensor(np.zeros(3)), Tensor(np.zeros((2, 4))))


@pytest.mark.parametrize("with_bias", [True, False])
def test_linear_gradients(rng, with_bias):
    """Test linear gradients against central differences."""
    arrays = {"x": rng.normal(size=5), "W": rng.normal(size=(3, 5))}
    if with_bias:
        arrays["b"] = rng.normal(size=3)

    def build(x, W, b=None):
        return nd.softmax(nd.linear(x, W, b))

    weights = rng.normal(size=3)

    def weighted(**leaves):
        return nd.dot(build(**leaves), Tensor(weights))

    grads = _grads(weighted, **arrays)
    for name in arrays:
        assert nd.relative_error(grads[name], _numeric(weighted, name, **arrays)) < 1e-6


def test_conv2d_matches_brute_force():
    """Test conv2d against a direct loop on 100 seeded instances."""
    rng = np.random.default_rng(11)
    for _ in range(100):
        kernel = int(rng.choice([1, 3, 5]))
        c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        h, w = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        x = rng.normal(size=(c_in, h, w))
        k = rng.normal(size=(c_out, c_in, kernel, kernel))
        b = rng.normal(size=c_out)
        out = nd.conv2d(Tensor(x), Tensor(k), Tensor(b))
        np.testing.assert_allclose(out.data, _brute_conv(x, k, b), rtol=0, atol=1e-10)


def test_conv2d_gradients(rng):
    """Test conv2d gradients for input, kernel and bias."""
    arrays = {
        "x": rng.normal(size=(2, 5, 4)),
        "k": rng.normal(size=(3, 2, 3, 3)),
        "b": rng.normal(size=3),
    }
    weights = rng.normal(size=(3, 5, 4))

    def build(x, k, b):
        return nd.dot(nd.flatten(nd.conv2d(x, k, b)), Tensor(weights.reshape(-1)))

    grads = _grads(build, **arrays)
    for name in arrays:
        assert nd.relative_error(grads[name], _numeric(build, name, **arrays)) < 1e-6


def test_conv2d_rejects_even_kernel():
    """Test that even kernels are refused."""
    with pytest.raises(ShapeError):
        nd.conv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))), Tensor([0.0]))


def test_avg_pool_matches_brute_force():
    """Test avg_pool against explicit block means on 100 seeded instances."""
    rng = np.random.default_rng(12)
    for _ in range(100):
        size = int(rng.integers(1, 4))
        c, bh, bw = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x = rng.integers(-50, 50, size=(c, bh * size, bw * size)).astype(float)
        out = nd.avg_pool(Tensor(x), size).data
        for ch in range(c):
            for i in range(bh):
                for j in range(bw):
                    block = x[ch, i * size : (i + 1) * size, j * size : (j + 1) * size]
                    assert out[ch, i, j] == pytest.approx(block.sum() / size ** 2, abs=1e-12)


def test_avg_pool_gradient_spreads_evenly():
    """Test that each input receives 1/size² of its block's gradient."""
    grads = _grads(lambda x: nd.avg_pool(x, 2), x=np.arange(16.0).reshape(1, 4, 4))
    np.testing.assert_array_equal(grads["x"], np.full((1, 4, 4), 0.25))


def test_avg_pool_indivisible():
    """Test that a pool size that does not divide the input raises."""
    with pytest.raises(ShapeError):
        nd.avg_pool(Tensor(np.zeros((1, 5, 4))), 2)


def test_relu_subgradient_at_zero():
    """Test that ReLU passes no gradient at exactly zero."""
    grads = _grads(nd.relu, x=np.array([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(grads["x"], [0.0, 0.0, 1.0])


def test_hardtanh_clamps_and_blocks_gradient_at_edges():
    """Test HardTanh outputs and its zero gradient at ±1 and beyond."""
    x = np.array([-2.0, -1.0, 0.3, 1.0, 5.0])
    np.testing.assert_array_equal(nd.hardtanh(Tensor(x)).data, [-1.0, -1.0, 0.3, 1.0, 1.0])
    grads = _grads(nd.hardtanh, x=x)
    np.testing.assert_array_equal(grads["x"], [0.0, 0.0, 1.0, 0.0, 0.0])


def test_softmax_is_stable_for_large_inputs():
    """Test that softmax survives logits of 1000 and sums to one."""
    out = nd.softmax(Tensor([1000.0, 1000.0, 0.0])).data
    assert np.all(np.isfinite(out))
    assert out.sum() == pytest.approx(1.0, abs=1e-12)
    assert out[0] == pytest.approx(0.5)


def test_softmax_gradient(rng):
    """Test the softmax Jacobian-vector product."""
    weights = rng.normal(size=4)

    def build(x):
        return nd.dot(nd.softmax(x), Tensor(weights))

    arrays = {"x": rng.normal(size=4)}
    grads = _grads(build, **arrays)
    assert nd.relative_error(grads["x"], _numeric(build, "x", **arrays)) < 1e-6


def test_nll_loss_value_and_gradient(rng):
    """Test nll_loss against log-sum-exp and its gradient softmax − onehot."""
    logits = rng.normal(size=5)
    value = nd.nll_loss(Tensor(logits), 2).item()
    expected = np.log(np.exp(logits).sum()) - logits[2]
    assert value == pytest.approx(expected, abs=1e-12)
    grads = _grads(lambda x: nd.nll_loss(x, 2), x=logits)
    onehot = np.eye(5)[2]
    np.testing.assert_allclose(grads["x"], np.exp(logits) / np.exp(logits).sum() - onehot)


def test_nll_loss_label_out_of_range():
    """Test that a label outside the logits raises."""
    with pytest.raises(ShapeError):
        nd.nll_loss(Tensor([0.0, 1.0]), 2)


def test_mae_loss_value_and_gradient():
    """Test the mean absolute error and its sign gradient."""
    pred = np.array([1.0, 5.0])
    assert nd.mae_loss(Tensor(pred), [2.0, 3.0]).item() == pytest.approx(1.5)
    grads = _grads(lambda p: nd.mae_loss(p, [2.0, 3.0]), p=pred)
    np.testing.assert_array_equal(grads["p"], [-0.5, 0.5])


def test_concat_and_reshape_gradients(rng):
    """Test that concat and reshape route gradients back to their sources."""
    weights = rng.normal(size=6)

    def build(a, b):
        joined = nd.concat([a, b])
        return nd.dot(nd.flatten(nd.reshape(joined, (2, 3))), Tensor(weights))

    grads = _grads(build, a=rng.normal(size=2), b=rng.normal(size=4))
    np.testing.assert_array_equal(grads["a"], weights[:2])
    np.testing.assert_array_equal(grads["b"], weights[2:])


def test_scale_and_add():
    """Test scale and add together with their gradients."""
    grads = _grads(lambda a, b: nd.add(nd.scale(a, 3.0), b), a=[1.0, 2.0], b=[0.5, 0.5])
    np.testing.assert_array_equal(grads["a"], [3.0, 3.0])
    np.testing.assert_array_equal(grads["b"], [1.0, 1.0])


def test_shared_value_accumulates_gradient():
    """Test that a value used twice receives the sum of both gradients."""
    grads = _grads(lambda x: nd.add(x, nd.scale(x, 2.0)), x=[1.0])
    np.testing.assert_array_equal(grads["x"], [3.0])


def test_unreached_leaf_gets_zeros():
    """Test that leaves off the loss path receive zero gradients."""
    tape = GraphTape()
    x = tape.leaf([1.0, 2.0], "x")
    tape.leaf(np.ones((2, 2)), "unused")
    grads = nd.backward(tape, nd.total(x))
    np.testing.assert_array_equal(grads["unused"], np.zeros((2, 2)))


def test_backward_requires_scalar_loss():
    """Test that a vector loss root is refused."""
    tape = GraphTape()
    x = tape.leaf([1.0, 2.0], "x")
    with pytest.raises(ShapeError):
        nd.backward(tape, nd.relu(x))


def test_backward_with_injection_only(rng):
    """Test that an injected upstream gradient flows like a loss would."""
    W = rng.normal(size=(2, 3))
    x = rng.normal(size=3)
    tape = GraphTape()
    w_leaf = tape.leaf(W, "W")
    y = nd.linear(Tensor(x), w_leaf)
    grads = nd.backward(tape, None, {y: np.array([1.0, -2.0])})
    np.testing.assert_allclose(grads["W"], np.outer([1.0, -2.0], x))


def test_duplicate_leaf_name():
    """Test that a leaf name can only be registered once per tape."""
    tape = GraphTape()
    tape.leaf([1.0], "x")
    with pytest.raises(ShapeError):
        tape.leaf([2.0], "x")


def test_tensors_from_two_tapes_do_not_mix():
    """Test that combining values from different tapes raises."""
    a = GraphTape().leaf([1.0], "a")
    b = GraphTape().leaf([1.0], "b")
    with pytest.raises(ShapeError):
        nd.add(a, b)


def test_non_finite_output_raises():
    """Test that an Inf produced by a primitive raises NonFiniteError."""
    with pytest.raises(NonFiniteError):
        nd.linear(Tensor([1e308]), Tensor([[1e308]]))


def test_finite_diff_grad_of_quadratic():
    """Test the central difference of a known quadratic."""
    grad = nd.finite_diff_grad(lambda v: float(np.sum(v ** 2)), np.array([1.0, -2.0]))
    np.testing.assert_allclose(grad, [2.0, -4.0], atol=1e-8)


def test_check_named_gradients_flags_wrong_entry():
    """Test that a wrong analytic gradient is reported for its parameter only."""
    params = {"a": np.array([1.0, 2.0]), "b": np.array([3.0])}

    def loss(values):
        return float(np.sum(values["a"] ** 2) + 3.0 * values["b"][0])

    analytic = {"a": np.array([2.0, 4.0]), "b": np.array([5.0])}
    entries = nd.check_named_gradients(loss, params, analytic)
    status = {entry.name: entry.passed(1e-4) for entry in entries}
    assert status == {"a": True, "b": False}
