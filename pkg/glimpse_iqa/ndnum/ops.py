"""Define differentiable primitives over Tensors."""
import logging
from typing import Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from ..types import Activation
from .tensor import DTYPE, VJP, Tensor, check_finite, tape_of

_LOGGER: logging.Logger = logging.getLogger(__name__)

Scalar = Union[float, int]


def _emit(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp: VJP) -> Tensor:
    tape = tape_of(*inputs)
    if tape is None:
        check_finite(data, op)
        return Tensor(data)
    return tape.record(op, data, inputs, vjp)


def as_tensor(value) -> Tensor:
    """Return `value` as a Tensor, wrapping plain numbers and arrays as constants."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def linear(x: Tensor, W: Tensor, b: Tensor = None) -> Tensor:
    """Return W·x + b for a vector x."""
    if x.data.ndim != 1 or W.data.ndim != 2 or W.shape[1] != x.shape[0]:
        raise ShapeError(f"linear: cannot apply W{W.shape} to x{x.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} does not match W{W.shape}")
    xv, Wv = x.data, W.data
    out = Wv @ xv
    if b is not None:
        out = out + b.data

    def vjp(g):
        grads = [Wv.T @ g, np.outer(g, xv)]
        if b is not None:
            grads.append(g)
        return grads

    inputs = (x, W) if b is None else (x, W, b)
    return _emit("linear", out, inputs, vjp)


def conv2d(x: Tensor, k: Tensor, b: Tensor) -> Tensor:
    """Return the zero-padded "same" cross-correlation of x[c,h,w] with k plus bias."""
    if x.data.ndim != 3 or k.data.ndim != 4:
        raise ShapeError(f"conv2d: expected x[c,h,w] and k[o,c,kh,kw], got {x.shape}, {k.shape}")
    c_out, c_in, kh, kw = k.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel size {kh}x{kw} must be odd")
    if x.shape[0] != c_in:
        raise ShapeError(f"conv2d: input has {x.shape[0]} channels, kernel expects {c_in}")
    if b.shape != (c_out,):
        raise ShapeError(f"conv2d: bias {b.shape} does not match {c_out} output channels")
    _, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
    # windows[c, i, j, u, v] = padded[c, i + u, j + v]
    windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))
    kv = k.data
    out = np.tensordot(kv, windows, axes=([1, 2, 3], [0, 3, 4])) + b.data[:, None, None]

    def vjp(g):
        gk = np.tensordot(g, windows, axes=([1, 2], [1, 2]))
        gb = g.sum(axis=(1, 2))
        gpad = np.zeros_like(padded)
        for u in range(kh):
            for v in range(kw):
                gpad[:, u : u + h, v : v + w] += np.tensordot(kv[:, :, u, v], g, axes=(0, 0))
        return gpad[:, ph : ph + h, pw : pw + w], gk, gb

    return _emit("conv2d", out, (x, k, b), vjp)


def activation(x: Tensor, kind) -> Tensor:
    """Apply ReLU or HardTanh elementwise; the subgradient at kinks is zero."""
    kind = Activation.lookup(kind)
    xv = x.data
    if kind is Activation.RELU:
        out = np.maximum(xv, 0.0)
        mask = xv > 0.0
    else:
        out = np.clip(xv, -1.0, 1.0)
        mask = (xv > -1.0) & (xv < 1.0)

    def vjp(g):
        return (g * mask,)

    return _emit(kind.value, out, (x,), vjp)


def relu(x: Tensor) -> Tensor:
    """Apply ReLU."""
    return activation(x, Activation.RELU)


def hardtanh(x: Tensor) -> Tensor:
    """Apply HardTanh."""
    return activation(x, Activation.HARDTANH)


def _softmax(values: np.ndarray) -> np.ndarray:
    shifted = np.exp(values - values.max())
    return shifted / shifted.sum()


def softmax(x: Tensor) -> Tensor:
    """Return the softmax of a vector, computed with max subtraction."""
    if x.data.ndim != 1 or x.size < 1:
        raise ShapeError(f"softmax: expected a non-empty vector, got {x.shape}")
    out = _softmax(x.data)

    def vjp(g):
        return (out * (g - np.dot(g, out)),)

    return _emit("softmax", out, (x,), vjp)


def avg_pool(x: Tensor, size: int) -> Tensor:
    """Average non-overlapping size×size blocks of x[c,h,w]."""
    if x.data.ndim != 3:
        raise ShapeError(f"avg_pool: expected x[c,h,w], got {x.shape}")
    c, h, w = x.shape
    if size < 1 or h % size or w % size:
        raise ShapeError(f"avg_pool: size {size} does not divide {h}x{w}")
    out = x.data.reshape(c, h // size, size, w // size, size).mean(axis=(2, 4))

    def vjp(g):
        spread = np.repeat(np.repeat(g, size, axis=1), size, axis=2)
        return (spread / (size * size),)

    return _emit("avg_pool", out, (x,), vjp)


def nll_loss(logits: Tensor, label: int) -> Tensor:
    """Return −log softmax(logits)[label]."""
    if logits.data.ndim != 1:
        raise ShapeError(f"nll_loss: expected a logit vector, got {logits.shape}")
    n_classes = logits.shape[0]
    if not 0 <= int(label) < n_classes:
        raise ShapeError(f"nll_loss: label {label} outside 0..{n_classes - 1}")
    lv = logits.data
    top = lv.max()
    log_norm = top + np.log(np.exp(lv - top).sum())
    out = np.array([log_norm - lv[label]])
    probs = np.exp(lv - log_norm)

    def vjp(g):
        grad = probs.copy()
        grad[label] -= 1.0
        return (grad * g[0],)

    return _emit("nll_loss", out, (logits,), vjp)


def mae_loss(pred: Tensor, target) -> Tensor:
    """Return the mean absolute error between pred and target."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mae_loss: pred {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    out = np.array([np.abs(diff).mean()])
    sign = np.sign(diff) / diff.size

    def vjp(g):
        return sign * g[0], -sign * g[0]

    return _emit("mae_loss", out, (pred, target), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Return a + b for equal shapes."""
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def scale(x: Tensor, factor: Scalar) -> Tensor:
    """Return factor·x for a constant factor."""
    factor = float(factor)
    return _emit("scale", x.data * factor, (x,), lambda g: (g * factor,))


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Return the inner product of two vectors as a one-element tensor."""
    if a.shape != b.shape or a.data.ndim != 1:
        raise ShapeError(f"dot: {a.shape} vs {b.shape}")
    av, bv = a.data, b.data
    out = np.array([np.dot(av, bv)])
    return _emit("dot", out, (a, b), lambda g: (g[0] * bv, g[0] * av))


def total(x: Tensor) -> Tensor:
    """Return the sum of all elements as a one-element tensor."""
    shape = x.shape
    out = np.array([x.data.sum()])
    return _emit("total", out, (x,), lambda g: (np.full(shape, g[0], dtype=DTYPE),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along an existing axis."""
    if not tensors:
        raise ShapeError("concat: nothing to concatenate")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return np.split(g, bounds, axis=axis)

    return _emit("concat", out, tuple(tensors), vjp)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    """Return x with a new shape holding the same elements."""
    original = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as err:
        raise ShapeError(f"reshape: {original} -> {shape}: {err}") from None
    return _emit("reshape", out, (x,), lambda g: (g.reshape(original),))


def flatten(x: Tensor) -> Tensor:
    """Return x as a vector."""
    return reshape(x, (x.size,))
