"""
Differentiable Ops
The closed set of forward ops (with backward rules) used by both models
"""

from typing import Optional, Sequence, Tuple
import math

import numpy as np
from scipy.special import erf

from autodiff.tape import Tape, Value
from utils.errors import ShapeError

_SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _same_shape(op: str, a: Value, b: Value) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


# --------------------------------------------------
# Element-wise arithmetic
# --------------------------------------------------
def add(a: Value, b: Value) -> Value:
    """
    a + b for equal shapes, or a vector b added to every row of a

    Raises:
        ShapeError: any other shape combination
    """
    if a.shape == b.shape:
        def backward(out: Value) -> None:
            a.grad += out.grad
            b.grad += out.grad

        return a.tape.apply(a.data + b.data, (a, b), backward, "add")

    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        def backward_bias(out: Value) -> None:
            a.grad += out.grad
            b.grad += out.grad.reshape(-1, b.shape[0]).sum(axis=0)

        return a.tape.apply(a.data + b.data, (a, b), backward_bias, "add_bias")

    raise ShapeError("add", a.shape, b.shape)


def sub(a: Value, b: Value) -> Value:
    _same_shape("sub", a, b)

    def backward(out: Value) -> None:
        a.grad += out.grad
        b.grad -= out.grad

    return a.tape.apply(a.data - b.data, (a, b), backward, "sub")


def mul(a: Value, b: Value) -> Value:
    """Element-wise product"""
    _same_shape("mul", a, b)

    def backward(out: Value) -> None:
        a.grad += out.grad * b.data
        b.grad += out.grad * a.data

    return a.tape.apply(a.data * b.data, (a, b), backward, "mul")


def scale(a: Value, factor: float) -> Value:
    factor = float(factor)

    def backward(out: Value) -> None:
        a.grad += factor * out.grad

    return a.tape.apply(a.data * factor, (a,), backward, "scale")


def add_scalar(a: Value, offset: float) -> Value:
    offset = float(offset)

    def backward(out: Value) -> None:
        a.grad += out.grad

    return a.tape.apply(a.data + offset, (a,), backward, "add_scalar")


# --------------------------------------------------
# Non-linearities
# --------------------------------------------------
def relu(a: Value) -> Value:
    active = a.data > 0
    a.tape.mark_kink(active)

    def backward(out: Value) -> None:
        a.grad += out.grad * active

    return a.tape.apply(np.where(active, a.data, 0.0), (a,), backward, "relu")


def abs_(a: Value) -> Value:
    """|a| with subgradient 0 at 0"""
    sign = np.sign(a.data)
    a.tape.mark_kink(a.data > 0)

    def backward(out: Value) -> None:
        a.grad += out.grad * sign

    return a.tape.apply(np.abs(a.data), (a,), backward, "abs")


def gelu(a: Value) -> Value:
    """Exact GELU, x * Phi(x)"""
    cdf = 0.5 * (1.0 + erf(a.data / _SQRT_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)

    def backward(out: Value) -> None:
        a.grad += out.grad * (cdf + a.data * pdf)

    return a.tape.apply(a.data * cdf, (a,), backward, "gelu")


def softmax(a: Value) -> Value:
    """Softmax over the last axis, stabilized by row-max subtraction"""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=-1, keepdims=True)

    def backward(out: Value) -> None:
        inner = (out.grad * probs).sum(axis=-1, keepdims=True)
        a.grad += probs * (out.grad - inner)

    return a.tape.apply(probs, (a,), backward, "softmax")


def layer_norm(x: Value, gain: Value, bias: Value, eps: float = 1e-5) -> Value:
    """
    Layer normalization over the last axis

    Args:
        x: (..., d) input
        gain: (d,) scale
        bias: (d,) shift
        eps: Variance floor
    """
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    normed = centered * inv_std

    def backward(out: Value) -> None:
        g = out.grad
        gain.grad += (g * normed).reshape(-1, d).sum(axis=0)
        bias.grad += g.reshape(-1, d).sum(axis=0)
        dn = g * gain.data
        x.grad += inv_std * (
            dn
            - dn.mean(axis=-1, keepdims=True)
            - normed * (dn * normed).mean(axis=-1, keepdims=True)
        )

    return x.tape.apply(normed * gain.data + bias.data, (x, gain, bias), backward, "layer_norm")


def dropout(
    a: Value, p: float, train: bool, rng: Optional[np.random.Generator] = None
) -> Value:
    """
    Inverted dropout

    Identity in eval mode (or p == 0). In train mode survivors are scaled by
    1 / (1 - p); the mask comes from the supplied seeded generator.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in train mode needs a seeded generator")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)

    def backward(out: Value) -> None:
        a.grad += out.grad * keep

    return a.tape.apply(a.data * keep, (a,), backward, "dropout")


# --------------------------------------------------
# Linear algebra
# --------------------------------------------------
def matmul(a: Value, b: Value) -> Value:
    """
    a @ b

    b is either a 2-D weight (k, m) applied to the last axis of a (..., k),
    or has the same leading (batch) dims as a.
    """
    if a.ndim == 0 or b.ndim < 2:
        raise ShapeError("matmul", a.shape, b.shape)
    if b.ndim == 2:
        if a.shape[-1] != b.shape[0]:
            raise ShapeError("matmul", a.shape, b.shape)

        def backward_weight(out: Value) -> None:
            a.grad += out.grad @ b.data.T
            b.grad += a.data.reshape(-1, b.shape[0]).T @ out.grad.reshape(-1, b.shape[1])

        return a.tape.apply(a.data @ b.data, (a, b), backward_weight, "matmul")

    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)

    def backward_batched(out: Value) -> None:
        a.grad += out.grad @ np.swapaxes(b.data, -1, -2)
        b.grad += np.swapaxes(a.data, -1, -2) @ out.grad

    return a.tape.apply(a.data @ b.data, (a, b), backward_batched, "matmul")


# --------------------------------------------------
# Reductions
# --------------------------------------------------
def sum_(a: Value, axis: Optional[int] = None) -> Value:
    """Sum over one axis, or over everything when axis is None"""
    if axis is None:
        def backward_all(out: Value) -> None:
            a.grad += out.grad

        return a.tape.apply(np.asarray(a.data.sum()), (a,), backward_all, "sum")

    axis = axis % a.ndim

    def backward(out: Value) -> None:
        a.grad += np.expand_dims(out.grad, axis)

    return a.tape.apply(a.data.sum(axis=axis), (a,), backward, "sum_axis")


def mean(a: Value) -> Value:
    """Mean of all entries (scalar)"""
    if a.data.size == 0:
        raise ShapeError("mean (empty input)", a.shape)
    count = a.data.size

    def backward(out: Value) -> None:
        a.grad += out.grad / count

    return a.tape.apply(np.asarray(a.data.mean()), (a,), backward, "mean")


# --------------------------------------------------
# Indexing and shape ops
# --------------------------------------------------
def embedding_lookup(table: Value, idx: np.ndarray) -> Value:
    """
    Rows of a (vocab, d) table selected by an integer array of any shape

    Returns:
        idx.shape + (d,)
    """
    idx = np.asarray(idx, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError("embedding_lookup", table.shape, idx.shape)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(
            f"embedding_lookup: index range [{idx.min()}, {idx.max()}] outside table of {table.shape[0]} rows"
        )

    def backward(out: Value) -> None:
        np.add.at(table.grad, idx.reshape(-1), out.grad.reshape(-1, table.shape[1]))

    return table.tape.apply(table.data[idx], (table,), backward, "embedding_lookup")


def index_add(src: Value, index: Tuple[np.ndarray, ...], out_shape: Tuple[int, ...]) -> Value:
    """
    Scatter-sum: out[index[0][k], index[1][k], ...] += src[k]

    Contributions land in the order of k, so callers control the summation order.
    """
    index = tuple(np.asarray(i, dtype=np.int64) for i in index)
    trailing = tuple(out_shape[len(index):])
    if src.shape != (index[0].shape[0],) + trailing:
        raise ShapeError("index_add", src.shape, (index[0].shape[0],) + trailing)
    data = np.zeros(out_shape, dtype=np.float64)
    np.add.at(data, index, src.data)

    def backward(out: Value) -> None:
        src.grad += out.grad[index]

    return src.tape.apply(data, (src,), backward, "index_add")


def select(a: Value, index: int, axis: int = 0) -> Value:
    """Takes position `index` along `axis`, dropping that axis"""
    axis = axis % a.ndim
    slicer = (slice(None),) * axis + (index,)

    def backward(out: Value) -> None:
        a.grad[slicer] += out.grad

    return a.tape.apply(a.data[slicer].copy(), (a,), backward, "select")


def concat(values: Sequence[Value], axis: int = 0) -> Value:
    if not values:
        raise ValueError("concat needs at least one operand")
    tape: Tape = values[0].tape
    axis = axis % values[0].ndim
    for other in values[1:]:
        if other.ndim != values[0].ndim or any(
            other.shape[k] != values[0].shape[k] for k in range(other.ndim) if k != axis
        ):
            raise ShapeError("concat", values[0].shape, other.shape)
    bounds = np.cumsum([0] + [v.shape[axis] for v in values])

    def backward(out: Value) -> None:
        for value, lo, hi in zip(values, bounds[:-1], bounds[1:]):
            slicer = (slice(None),) * axis + (slice(int(lo), int(hi)),)
            value.grad += out.grad[slicer]

    data = np.concatenate([v.data for v in values], axis=axis)
    return tape.apply(data, tuple(values), backward, "concat")


def reshape(a: Value, shape: Tuple[int, ...]) -> Value:
    data = a.data.reshape(shape)

    def backward(out: Value) -> None:
        a.grad += out.grad.reshape(a.shape)

    return a.tape.apply(data, (a,), backward, "reshape")


def transpose(a: Value, axes: Tuple[int, ...]) -> Value:
    inverse = tuple(np.argsort(axes))

    def backward(out: Value) -> None:
        a.grad += np.transpose(out.grad, inverse)

    return a.tape.apply(np.transpose(a.data, axes), (a,), backward, "transpose")


def pad_pair_border(inner: Value, fill: Value) -> Value:
    """
    Frames a (B, n, n, H) pair tensor with a leading row and column set to fill

    Returns:
        (B, n + 1, n + 1, H) where out[:, 0, :, h] = out[:, :, 0, h] = fill[h]
    """
    if inner.ndim != 4 or inner.shape[1] != inner.shape[2] or fill.shape != (inner.shape[3],):
        raise ShapeError("pad_pair_border", inner.shape, fill.shape)
    b, n, _, h = inner.shape
    data = np.empty((b, n + 1, n + 1, h), dtype=np.float64)
    data[:, 1:, 1:, :] = inner.data
    data[:, 0, :, :] = fill.data
    data[:, 1:, 0, :] = fill.data

    def backward(out: Value) -> None:
        inner.grad += out.grad[:, 1:, 1:, :]
        fill.grad += out.grad[:, 0, :, :].reshape(-1, h).sum(axis=0)
        fill.grad += out.grad[:, 1:, 0, :].reshape(-1, h).sum(axis=0)

    return inner.tape.apply(data, (inner, fill), backward, "pad_pair_border")
