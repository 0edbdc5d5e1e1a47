"""Minimal dense tensors with reverse-mode differentiation.

Enough machinery to train the descriptor network through both losses:
elementwise ops, (batched) matmul, conv2d / transposed conv2d, pooling and
nearest upsampling, channel concat/slice, batched 2x2 determinant/inverse,
and bilinear sampling whose gradient flows to BOTH the sampled map and the
sampling coordinates.

A :class:`Tape` records primitive applications in execution order; the
backward pass walks that record in reverse exactly once, accumulating
gradients additively. Tensors without a tape run on a pure numpy fast path.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NumericalFault


class Tensor:
    """A numpy array plus an optional handle into a gradient tape."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: Optional["Tape"] = None, node: Optional[int] = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, taped={self.tape is not None})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Append-only record of primitive applications, one graph per tape."""

    def __init__(self):
        self._backwards: list[Callable] = []
        self._inputs: list[tuple[int, ...]] = []
        self._shapes: list[tuple[int, ...]] = []
        self._grads: Optional[list] = None

    def __len__(self):
        return len(self._backwards)

    def leaf(self, data) -> Tensor:
        """Registers ``data`` as a differentiable leaf (e.g. a parameter)."""
        t = Tensor(np.asarray(data, dtype=np.float64))
        t.tape = self
        t.node = self._emit((), t.data.shape, None)
        return t

    def _emit(self, input_nodes, shape, backward_fn) -> int:
        self._backwards.append(backward_fn)
        self._inputs.append(tuple(input_nodes))
        self._shapes.append(tuple(shape))
        return len(self._backwards) - 1

    def backward(self, loss: Tensor) -> None:
        """Computes d(loss)/d(node) for every node reachable from ``loss``.

        ``loss`` must be a scalar tensor recorded on this tape. Gradients
        accumulate additively; nodes are visited in reverse emission order,
        which is a reverse topological order by construction.
        """
        if loss.tape is not self or loss.node is None:
            raise ValueError("loss is not recorded on this tape")
        if loss.data.shape != ():
            raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
        grads: list = [None] * len(self._backwards)
        grads[loss.node] = np.ones(())
        for node in range(loss.node, -1, -1):
            g = grads[node]
            if g is None:
                continue
            fn = self._backwards[node]
            if fn is None:
                continue
            contributions = fn(g)
            for input_node, contrib in zip(self._inputs[node], contributions):
                if contrib is None:
                    continue
                if grads[input_node] is None:
                    grads[input_node] = contrib
                else:
                    grads[input_node] = grads[input_node] + contrib
        self._grads = grads

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient of the last backward() loss w.r.t. ``t`` (zeros if unused)."""
        if self._grads is None:
            raise ValueError("backward() has not been run on this tape")
        if t.tape is not self or t.node is None:
            raise ValueError("tensor is not recorded on this tape")
        g = self._grads[t.node]
        if g is None:
            return np.zeros(self._shapes[t.node])
        g = np.asarray(g)
        if g.shape != tuple(self._shapes[t.node]):
            g = np.broadcast_to(g, self._shapes[t.node]).copy()
        return g


def astensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _tape_of(*tensors) -> Optional[Tape]:
    tape = None
    for t in tensors:
        if isinstance(t, Tensor) and t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise ValueError("operands live on different tapes")
    return tape


def _node(t) -> Optional[int]:
    if isinstance(t, Tensor) and t.tape is not None:
        return t.node
    return None


def _make(data, inputs: Sequence, backward_fn) -> Tensor:
    """Wires a primitive result into the tape shared by its taped inputs.

    ``backward_fn(g)`` must return one gradient (or None) per input in
    ``inputs`` order; gradients for untaped inputs are dropped.
    """
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(data)
    nodes = [_node(t) for t in inputs]
    live = [(i, n) for i, n in enumerate(nodes) if n is not None]

    def filtered(g):
        full = backward_fn(g)
        return [full[i] for i, _ in live]

    node = tape._emit([n for _, n in live], np.asarray(data).shape, filtered)
    return Tensor(data, tape, node)


def _require_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise


def add(x, y) -> Tensor:
    if isinstance(y, (int, float)):
        x = astensor(x)
        return _make(x.data + y, [x], lambda g: [g])
    x, y = astensor(x), astensor(y)
    _require_same_shape(x.data, y.data, "add")
    return _make(x.data + y.data, [x, y], lambda g: [g, g])


def neg(x) -> Tensor:
    x = astensor(x)
    return _make(-x.data, [x], lambda g: [-g])


def sub(x, y) -> Tensor:
    if isinstance(y, (int, float)):
        return add(x, -y)
    return add(x, neg(y))


def mul(x, y) -> Tensor:
    if isinstance(y, (int, float)):
        x = astensor(x)
        return _make(x.data * y, [x], lambda g: [g * y])
    x, y = astensor(x), astensor(y)
    _require_same_shape(x.data, y.data, "mul")
    xd, yd = x.data, y.data
    return _make(xd * yd, [x, y], lambda g: [g * yd, g * xd])


def _relu_grad(x_data: np.ndarray, g: np.ndarray) -> np.ndarray:
    # Module-level so verification harnesses can patch it to simulate a
    # broken backward rule.
    return g * (x_data > 0.0)


def relu(x) -> Tensor:
    x = astensor(x)
    xd = x.data
    return _make(np.maximum(xd, 0.0), [x], lambda g: [_relu_grad(xd, g)])


def log(x) -> Tensor:
    x = astensor(x)
    xd = x.data
    return _make(np.log(xd), [x], lambda g: [g / xd])


def sqrt(x) -> Tensor:
    x = astensor(x)
    out = np.sqrt(x.data)
    return _make(out, [x], lambda g: [g * (0.5 / out)])


def reciprocal(x) -> Tensor:
    x = astensor(x)
    out = 1.0 / x.data
    return _make(out, [x], lambda g: [-g * out * out])


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(x, shape) -> Tensor:
    x = astensor(x)
    old = x.data.shape
    return _make(x.data.reshape(shape), [x], lambda g: [g.reshape(old)])


def transpose_last2(x) -> Tensor:
    x = astensor(x)
    return _make(np.swapaxes(x.data, -1, -2), [x], lambda g: [np.swapaxes(g, -1, -2)])


def concat_channels(xs: Sequence) -> Tensor:
    xs = [astensor(t) for t in xs]
    widths = [t.data.shape[-1] for t in xs]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        return [g[..., offsets[i] : offsets[i + 1]] for i in range(len(xs))]

    return _make(np.concatenate([t.data for t in xs], axis=-1), xs, backward)


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    x = astensor(x)
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape = x.data.shape

    def backward(g):
        full = np.zeros(shape)
        full[idx] = g
        return [full]

    return _make(x.data[idx].copy(), [x], backward)


def stack_last(xs: Sequence) -> Tensor:
    xs = [astensor(t) for t in xs]

    def backward(g):
        return [g[..., i] for i in range(len(xs))]

    return _make(np.stack([t.data for t in xs], axis=-1), xs, backward)


def reduce_sum(x, axis: Optional[int] = None) -> Tensor:
    x = astensor(x)
    shape = x.data.shape
    if axis is None:
        return _make(x.data.sum(), [x], lambda g: [np.broadcast_to(g, shape).copy()])

    def backward(g):
        return [np.broadcast_to(np.expand_dims(g, axis), shape).copy()]

    return _make(x.data.sum(axis=axis), [x], backward)


def mean_all(x) -> Tensor:
    x = astensor(x)
    return mul(reduce_sum(x), 1.0 / x.data.size)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(x, y) -> Tensor:
    x, y = astensor(x), astensor(y)
    xd, yd = x.data, y.data
    if xd.ndim < 2 or yd.ndim < 2:
        raise ValueError("matmul expects at least 2-D operands")
    if xd.ndim != yd.ndim and yd.ndim != 2:
        raise ValueError(f"matmul: rank mismatch {xd.shape} vs {yd.shape}")
    if xd.shape[-1] != yd.shape[-2]:
        raise ValueError(f"matmul: inner dims differ {xd.shape} vs {yd.shape}")

    def backward(g):
        gx = g @ np.swapaxes(yd, -1, -2)
        gy = np.swapaxes(xd, -1, -2) @ g
        if yd.ndim == 2 and xd.ndim > 2:
            gy = gy.reshape(-1, *gy.shape[-2:]).sum(axis=0)
        return [gx, gy]

    return _make(xd @ yd, [x, y], backward)


def det2x2(x) -> Tensor:
    x = astensor(x)
    m = x.data
    if m.shape[-2:] != (2, 2):
        raise ValueError(f"det2x2 expects (..., 2, 2), got {m.shape}")
    a, b = m[..., 0, 0], m[..., 0, 1]
    c, d = m[..., 1, 0], m[..., 1, 1]

    def backward(g):
        out = np.empty_like(m)
        out[..., 0, 0] = g * d
        out[..., 0, 1] = -g * c
        out[..., 1, 0] = -g * b
        out[..., 1, 1] = g * a
        return [out]

    return _make(a * d - b * c, [x], backward)


def inv2x2(x) -> Tensor:
    x = astensor(x)
    m = x.data
    if m.shape[-2:] != (2, 2):
        raise ValueError(f"inv2x2 expects (..., 2, 2), got {m.shape}")
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    if np.any(np.abs(det) < 1e-300):
        raise NumericalFault("inv2x2: singular 2x2 matrix (|det| < 1e-300)")
    inv = np.empty_like(m)
    inv[..., 0, 0] = m[..., 1, 1]
    inv[..., 0, 1] = -m[..., 0, 1]
    inv[..., 1, 0] = -m[..., 1, 0]
    inv[..., 1, 1] = m[..., 0, 0]
    inv = inv / det[..., None, None]

    def backward(g):
        inv_t = np.swapaxes(inv, -1, -2)
        return [-inv_t @ g @ inv_t]

    return _make(inv, [x], backward)


# ---------------------------------------------------------------------------
# spatial ops (feature maps are (H, W, C))


def conv2d(x, w, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution (cross-correlation) on an (H, W, Cin) map.

    Kernel is (kh, kw, Cin, Cout); zero padding of ``pad`` pixels on every
    spatial side; square stride.
    """
    x, w = astensor(x), astensor(w)
    xd, wd = x.data, w.data
    if xd.ndim != 3 or wd.ndim != 4:
        raise ValueError(f"conv2d: expected (H,W,Cin) and (kh,kw,Cin,Cout), got {xd.shape}, {wd.shape}")
    if xd.shape[2] != wd.shape[2]:
        raise ValueError(f"conv2d: channel mismatch {xd.shape} vs {wd.shape}")
    kh, kw = wd.shape[:2]
    xp = np.pad(xd, ((pad, pad), (pad, pad), (0, 0))) if pad else xd
    hp, wp = xp.shape[:2]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError("conv2d: kernel larger than padded input")
    out = np.zeros((ho, wo, wd.shape[3]))
    for di in range(kh):
        for dj in range(kw):
            xs = xp[di : di + stride * (ho - 1) + 1 : stride, dj : dj + stride * (wo - 1) + 1 : stride]
            out += xs @ wd[di, dj]
    inputs = [x, w]
    if bias is not None:
        bias = astensor(bias)
        out = out + bias.data
        inputs.append(bias)

    def backward(g):
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(wd)
        for di in range(kh):
            for dj in range(kw):
                sl_i = slice(di, di + stride * (ho - 1) + 1, stride)
                sl_j = slice(dj, dj + stride * (wo - 1) + 1, stride)
                xs = xp[sl_i, sl_j]
                dw[di, dj] = np.tensordot(xs, g, axes=([0, 1], [0, 1]))
                dxp[sl_i, sl_j] += g @ wd[di, dj].T
        dx = dxp[pad : pad + xd.shape[0], pad : pad + xd.shape[1]] if pad else dxp
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1)))
        return grads

    return _make(out, inputs, backward)


def transposed_conv2d(x, w, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d`'s spatial map, for learned upsampling.

    Input (H, W, Cin), kernel (kh, kw, Cin, Cout); output spatial size is
    (H-1)*stride + kh - 2*pad per side.
    """
    x, w = astensor(x), astensor(w)
    xd, wd = x.data, w.data
    if xd.ndim != 3 or wd.ndim != 4:
        raise ValueError(f"transposed_conv2d: bad ranks {xd.shape}, {wd.shape}")
    if xd.shape[2] != wd.shape[2]:
        raise ValueError(f"transposed_conv2d: channel mismatch {xd.shape} vs {wd.shape}")
    kh, kw = wd.shape[:2]
    h, wdt = xd.shape[:2]
    full_h = (h - 1) * stride + kh
    full_w = (wdt - 1) * stride + kw
    ho, wo = full_h - 2 * pad, full_w - 2 * pad
    if ho <= 0 or wo <= 0:
        raise ValueError("transposed_conv2d: padding removes the whole output")
    full = np.zeros((full_h, full_w, wd.shape[3]))
    for di in range(kh):
        for dj in range(kw):
            full[di : di + stride * (h - 1) + 1 : stride, dj : dj + stride * (wdt - 1) + 1 : stride] += (
                xd @ wd[di, dj]
            )
    out = full[pad : pad + ho, pad : pad + wo]
    inputs = [x, w]
    if bias is not None:
        bias = astensor(bias)
        out = out + bias.data
        inputs.append(bias)

    def backward(g):
        gfull = np.zeros((full_h, full_w, wd.shape[3]))
        gfull[pad : pad + ho, pad : pad + wo] = g
        dx = np.zeros_like(xd)
        dw = np.zeros_like(wd)
        for di in range(kh):
            for dj in range(kw):
                gs = gfull[di : di + stride * (h - 1) + 1 : stride, dj : dj + stride * (wdt - 1) + 1 : stride]
                dx += gs @ wd[di, dj].T
                dw[di, dj] = np.tensordot(xd, gs, axes=([0, 1], [0, 1]))
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1)))
        return grads

    return _make(out, inputs, backward)


def avg_pool2(x) -> Tensor:
    x = astensor(x)
    h, w, c = x.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2 needs even spatial dims, got {x.data.shape}")
    out = x.data.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))

    def backward(g):
        return [np.repeat(np.repeat(g, 2, axis=0), 2, axis=1) * 0.25]

    return _make(out, [x], backward)


def upsample2_nearest(x) -> Tensor:
    x = astensor(x)
    h, w, c = x.data.shape
    out = np.repeat(np.repeat(x.data, 2, axis=0), 2, axis=1)

    def backward(g):
        return [g.reshape(h, 2, w, 2, c).sum(axis=(1, 3))]

    return _make(out, [x], backward)


# ---------------------------------------------------------------------------
# sampling


def bilinear_sample(feature_map, coords) -> Tensor:
    """Samples an (H, W, C) map at N continuous (x, y) pixel positions.

    Integer coordinates hit grid values exactly. Coordinates must satisfy
    0 <= x <= W-1 and 0 <= y <= H-1. Gradients flow both into the map
    (scatter onto the four corners) and into the coordinates (local
    first-order differences), which the training losses rely on.
    """
    feature_map, coords = astensor(feature_map), astensor(coords)
    m, cd = feature_map.data, coords.data
    if m.ndim != 3:
        raise ValueError(f"bilinear_sample expects (H, W, C) map, got {m.shape}")
    if cd.ndim != 2 or cd.shape[1] != 2:
        raise ValueError(f"bilinear_sample expects (N, 2) coords, got {cd.shape}")
    h, w, _ = m.shape
    xs, ys = cd[:, 0], cd[:, 1]
    if np.any(xs < 0) or np.any(xs > w - 1) or np.any(ys < 0) or np.any(ys > h - 1):
        raise ValueError("bilinear_sample: coordinates outside the map")
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 2)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 2)
    tx = (xs - x0)[:, None]
    ty = (ys - y0)[:, None]
    m00 = m[y0, x0]
    m01 = m[y0, x0 + 1]
    m10 = m[y0 + 1, x0]
    m11 = m[y0 + 1, x0 + 1]
    # Four-corner weighted form: exact at integer coordinates.
    w00 = (1 - tx) * (1 - ty)
    w01 = tx * (1 - ty)
    w10 = (1 - tx) * ty
    w11 = tx * ty
    out = w00 * m00 + w01 * m01 + w10 * m10 + w11 * m11

    def backward(g):
        dmap = np.zeros_like(m)
        np.add.at(dmap, (y0, x0), w00 * g)
        np.add.at(dmap, (y0, x0 + 1), w01 * g)
        np.add.at(dmap, (y0 + 1, x0), w10 * g)
        np.add.at(dmap, (y0 + 1, x0 + 1), w11 * g)
        ddx = (1 - ty) * (m01 - m00) + ty * (m11 - m10)
        ddy = (1 - tx) * (m10 - m00) + tx * (m11 - m01)
        dcoords = np.stack([(g * ddx).sum(axis=1), (g * ddy).sum(axis=1)], axis=1)
        return [dmap, dcoords]

    return _make(out, [feature_map, coords], backward)
