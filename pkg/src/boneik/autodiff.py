"""Minimal reverse-mode autodiff over dense numpy tensors.

Only the operations the regressor and its losses need. A Tape records
primitive applications in execution order (already topological); the
backward pass replays it once in reverse, accumulating vector-Jacobian
products into a scratch table and finally into Tensor.grad for every
tensor that requires gradients. No graph rewriting, no fusion, single
threaded per tape.

Tensors default to float32; feed float64 arrays for reference-precision
checks.
"""

from __future__ import annotations

import numpy as np

LAYERNORM_EPS = 1e-5
ARCCOS_CLAMP = 1e-7
LEAKY_SLOPE = 0.2
# Below this squared angle the sin/cos ratio helpers switch to series.
_SERIES_CUTOFF = 1e-6


class ShapeMismatchError(ValueError):
    pass


class Tensor:
    """Dense real array plus an optional gradient slot.

    Created by ops, a tensor keeps a closure that maps its output
    cotangent to input cotangents; leaves have none.
    """

    __slots__ = ("data", "grad", "requires_grad", "_bw")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._bw = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _ensure(other, self.data.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _ensure(other, self.data.dtype))

    def __rsub__(self, other):
        return sub(_ensure(other, self.data.dtype), self)

    def __mul__(self, other):
        return mul(self, _ensure(other, self.data.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _ensure(other, self.data.dtype))

    def __rtruediv__(self, other):
        return div(_ensure(other, self.data.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Execution-ordered record of primitive applications."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False


_ACTIVE: list[Tape] = []


def _ensure(x, dtype=np.float64) -> Tensor:
    # Plain numbers take the partner tensor's dtype so scalar ops never
    # promote a float32 graph to float64.
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _make(data, inputs, bw) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(t.requires_grad for t in inputs)
    if out.requires_grad:
        out._bw = bw
        if _ACTIVE:
            _ACTIVE[-1].nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(name: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(f"{name}: {a.shape} vs {b.shape}") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape))))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: ((a, _unbroadcast(g * b.data, a.shape)),
                            (b, _unbroadcast(g * a.data, b.shape))))


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def bw(g):
        return ((a, _unbroadcast(g / b.data, a.shape)),
                (b, _unbroadcast(-g * out / b.data, b.shape)))

    return _make(out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: ((a, -g),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul: {a.shape} @ {b.shape}")

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ((a, ga), (b, gb))

    return _make(a.data @ b.data, (a, b), bw)


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.data.ndim - 2)) + (a.data.ndim - 1, a.data.ndim - 2)
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,),
                 lambda g: ((a, np.transpose(g, inv)),))


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,),
                 lambda g: ((a, g.reshape(a.shape)),))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)

    def bw(g):
        splits = np.cumsum(sizes)[:-1]
        return tuple(zip(tensors, np.split(g, splits, axis=axis)))

    return _make(data, tensors, bw)


def index_select(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather rows along an axis; duplicate indices allowed."""
    indices = np.asarray(indices, dtype=int)
    ax = axis % a.data.ndim

    def bw(g):
        ga = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(ga, (slice(None),) * ax + (indices,), g)
        return ((a, ga),)

    return _make(np.take(a.data, indices, axis=ax), (a,), bw)


def segment_sum(a: Tensor, segment_ids, num_segments: int, axis: int = 0) -> Tensor:
    """Scatter-add rows with the same segment id."""
    segment_ids = np.asarray(segment_ids, dtype=int)
    ax = axis % a.data.ndim
    if segment_ids.shape[0] != a.shape[ax]:
        raise ShapeMismatchError(
            f"segment_sum: {segment_ids.shape[0]} ids for axis of {a.shape[ax]}")
    shape = list(a.shape)
    shape[ax] = num_segments
    data = np.zeros(shape, dtype=a.data.dtype)
    np.add.at(data, (slice(None),) * ax + (segment_ids,), a.data)
    return _make(data, (a,),
                 lambda g: ((a, np.take(g, segment_ids, axis=ax)),))


def elu(a: Tensor) -> Tensor:
    out = np.where(a.data > 0, a.data, np.expm1(a.data))
    return _make(out, (a,),
                 lambda g: ((a, g * np.where(a.data > 0, 1.0, out + 1.0)),))


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    factor = np.where(a.data >= 0, 1.0, slope).astype(a.data.dtype)
    return _make(a.data * factor, (a,), lambda g: ((a, g * factor),))


def softmax(a: Tensor, mask=None, axis: int = -1) -> Tensor:
    """Softmax along an axis; mask (if given) is added to the logits
    first and carries no gradient."""
    z = a.data if mask is None else a.data + np.asarray(mask, dtype=a.data.dtype)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((a, out * (g - inner)),)

    return _make(out, (a,), bw)


def layernorm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean, unit variance, then scale
    and shift."""
    n = a.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeMismatchError(f"layernorm: gain {gain.shape}, bias {bias.shape} for width {n}")
    mu = a.data.mean(axis=-1, keepdims=True)
    var = ((a.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gain.data
        da = inv / n * (
            n * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return ((a, da), (gain, dgain), (bias, dbias))

    return _make(xhat * gain.data + bias.data, (a, gain, bias), bw)


def dropout(a: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or p = 0."""
    if not training or p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    keep = (rng.random(a.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return _make(a.data * keep, (a,), lambda g: ((a, g * keep),))


def _sum_bw_shape(a: Tensor, axis, keepdims):
    if axis is None:
        return None
    axes = axis if isinstance(axis, tuple) else (axis,)
    return tuple(ax % a.data.ndim for ax in axes)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _sum_bw_shape(a, axis, keepdims)

    def bw(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return ((a, np.broadcast_to(g, a.shape).copy()),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _sum_bw_shape(a, axis, keepdims)
    count = a.data.size if axis is None else int(
        np.prod([a.shape[ax] for ax in axes]))

    def bw(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return ((a, np.broadcast_to(g / count, a.shape).copy()),)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), bw)


def l2_norm(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along an axis. Not differentiable at zero vectors."""
    out = np.sqrt((a.data**2).sum(axis=axis, keepdims=True))

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, g * a.data / out),)

    return _make(out if keepdims else np.squeeze(out, axis=axis), (a,), bw)


def cross_product(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != 3 or b.shape[-1] != 3:
        raise ShapeMismatchError(f"cross_product: {a.shape} x {b.shape}")
    return _make(np.cross(a.data, b.data), (a, b),
                 lambda g: ((a, _unbroadcast(np.cross(b.data, g), a.shape)),
                            (b, _unbroadcast(np.cross(g, a.data), b.shape))))


def arccos_clamped(a: Tensor) -> Tensor:
    """arccos with inputs clamped to [-1+1e-7, 1-1e-7].

    The clamp applies to the backward pass too, so gradients stay
    finite at the ends of the range (at the price of being slightly
    wrong there).
    """
    c = np.clip(a.data, -1.0 + ARCCOS_CLAMP, 1.0 - ARCCOS_CLAMP)
    return _make(np.arccos(c), (a,),
                 lambda g: ((a, -g / np.sqrt(1.0 - c * c)),))


def skew(a: Tensor) -> Tensor:
    """(..., 3) -> (..., 3, 3) antisymmetric cross-product matrices."""
    if a.shape[-1] != 3:
        raise ShapeMismatchError(f"skew: {a.shape}")
    x, y, z = a.data[..., 0], a.data[..., 1], a.data[..., 2]
    zero = np.zeros_like(x)
    out = np.stack([
        np.stack([zero, -z, y], axis=-1),
        np.stack([z, zero, -x], axis=-1),
        np.stack([-y, x, zero], axis=-1),
    ], axis=-2)

    def bw(g):
        gx = g[..., 2, 1] - g[..., 1, 2]
        gy = g[..., 0, 2] - g[..., 2, 0]
        gz = g[..., 1, 0] - g[..., 0, 1]
        return ((a, np.stack([gx, gy, gz], axis=-1)),)

    return _make(out, (a,), bw)


def sinc_theta(a: Tensor) -> Tensor:
    """sin(sqrt(t))/sqrt(t) as a function of the squared angle t.

    Smooth through t = 0 (series there), which is what makes axis-angle
    increments differentiable at the identity.
    """
    t = a.data
    small = t < _SERIES_CUTOFF
    s = np.sqrt(np.where(small, 1.0, t))
    out = np.where(small, 1.0 - t / 6.0 + t * t / 120.0, np.sin(s) / s)

    def bw(g):
        d = np.where(
            small,
            -1.0 / 6.0 + t / 60.0 - t * t / 1680.0,
            (s * np.cos(s) - np.sin(s)) / (2.0 * s**3),
        )
        return ((a, g * d),)

    return _make(out, (a,), bw)


def cosc_theta(a: Tensor) -> Tensor:
    """(1 - cos(sqrt(t)))/t as a function of the squared angle t."""
    t = a.data
    small = t < _SERIES_CUTOFF
    ts = np.where(small, 1.0, t)
    s = np.sqrt(ts)
    out = np.where(small, 0.5 - t / 24.0 + t * t / 720.0, (1.0 - np.cos(s)) / ts)

    def bw(g):
        d = np.where(
            small,
            -1.0 / 24.0 + t / 360.0 - t * t / 13440.0,
            (s * np.sin(s) / 2.0 - (1.0 - np.cos(s))) / ts**2,
        )
        return ((a, g * d),)

    return _make(out, (a,), bw)


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d loss / d tensor into .grad for every tensor on the
    tape that requires gradients (and the leaves feeding them)."""
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    node_ids = {id(t) for t in tape.nodes}
    if loss._bw is not None and id(loss) not in node_ids:
        raise ValueError("loss tensor is not recorded on this tape")
    table: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = table.get(id(node))
        if g is None or node._bw is None:
            continue
        for inp, gi in node._bw(g):
            if not inp.requires_grad:
                continue
            key = id(inp)
            holders[key] = inp
            if key in table:
                table[key] = table[key] + gi
            else:
                table[key] = gi
    for key, g in table.items():
        t = holders[key]
        if t.requires_grad:
            t.grad = g if t.grad is None else t.grad + g


def grad_check(fn, inputs, step: float = 1e-5, tol: float = 1e-5):
    """Compare analytic gradients of a scalar-valued fn against central
    finite differences.

    inputs are float64 arrays. The error measure is relative for
    entries above 1 in magnitude and absolute below. Returns
    (passed, report) where report names the worst offender.
    """
    tensors = [Tensor(np.ascontiguousarray(x, dtype=np.float64), requires_grad=True)
               for x in inputs]
    with Tape() as tape:
        out = fn(*tensors)
    backward(tape, out)

    worst = {"max_rel_err": 0.0, "input": None, "index": None,
             "analytic": None, "numeric": None}
    for k, t in enumerate(tensors):
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            fp = float(fn(*tensors).data)
            flat[idx] = orig - step
            fm = float(fn(*tensors).data)
            flat[idx] = orig
            numeric = (fp - fm) / (2.0 * step)
            a = float(analytic.reshape(-1)[idx])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > worst["max_rel_err"]:
                worst.update(max_rel_err=err, input=k,
                             index=np.unravel_index(idx, t.data.shape),
                             analytic=a, numeric=numeric)
    return worst["max_rel_err"] < tol, worst
