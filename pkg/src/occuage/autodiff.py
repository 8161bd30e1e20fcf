"""Rank-4 tensor arithmetic with reverse-mode automatic differentiation.

Values are float32 numpy arrays: NCHW feature maps, rank-1 per-channel
parameter vectors, and rank-0 loss scalars. Every operation computes its
result eagerly and, when any input is grad-tracked, records the input nodes
plus a backward closure on the output. ``backward`` replays that implicit
DAG in reverse topological order and accumulates gradients into grad-tracked
leaves. The graph is rebuilt on every forward pass (define-by-run), so there
is no retained-graph bookkeeping to manage between training steps.

Broadcasting is deliberately not supported: elementwise ops take same-shape
tensors or a python scalar. That keeps every backward rule trivially shape
preserving, which the finite-difference suite then verifies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, UsageError

Array = np.ndarray

# Largest float32 strictly below 1; tanh saturates to +-1.0 in float32 for
# |x| > ~9, and the generator head contract requires outputs strictly inside
# (-1, 1).
_TANH_LIMIT = np.nextafter(np.float32(1.0), np.float32(0.0))


def _as_f32(data) -> Array:
    arr = np.asarray(data, dtype=np.float32)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """A float32 value node in the computation graph.

    ``requires_grad`` marks grad-tracked leaves (parameters). Op outputs are
    tracked automatically whenever any input is. ``grad`` is populated on
    leaves by :func:`backward` and accumulates across calls until reset to
    ``None``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f32(data)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def detach(self) -> "Tensor":
        """A new leaf sharing this tensor's storage, outside any graph."""
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Elementwise arithmetic (same-shape tensor or python scalar).
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_ensure_tensor(other)))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


def _ensure_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float32))


def _make_node(data: Array, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(
            f"{op}: operand shapes {a.data.shape} and {b.data.shape} differ"
        )


# ---------------------------------------------------------------------------
# Elementwise ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        scalar = np.float32(b)
        return _make_node(a.data + scalar, (a,), lambda g: (g,))
    _check_same_shape(a, b, "add")
    return _make_node(a.data + b.data, (a, b), lambda g: (g, g))


def neg(a: Tensor) -> Tensor:
    return _make_node(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        scalar = np.float32(b)
        return _make_node(a.data * scalar, (a,), lambda g: (g * scalar,))
    _check_same_shape(a, b, "mul")
    out = a.data * b.data

    def backward_fn(g):
        return (g * b.data, g * a.data)

    return _make_node(out, (a, b), backward_fn)


def relu(a: Tensor) -> Tensor:
    data = a.data

    def backward_fn(g):
        return (g * (data > 0),)

    return _make_node(np.maximum(data, np.float32(0.0)), (a,), backward_fn)


def leaky_relu(a: Tensor, slope: float) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ConfigurationError(f"leaky_relu slope must be in (0, 1), got {slope}")
    slope32 = np.float32(slope)
    data = a.data
    out = np.maximum(data, np.float32(0.0)) + slope32 * np.minimum(data, np.float32(0.0))

    def backward_fn(g):
        return (np.where(data > 0, g, g * slope32),)

    return _make_node(out, (a,), backward_fn)


def tanh(a: Tensor) -> Tensor:
    # Clip keeps the output strictly inside (-1, 1) where float32 tanh would
    # otherwise round to exactly +-1 in saturation.
    y = np.clip(np.tanh(a.data), -_TANH_LIMIT, _TANH_LIMIT)

    def backward_fn(g):
        return (g * (np.float32(1.0) - y * y),)

    return _make_node(y, (a,), backward_fn)


# ---------------------------------------------------------------------------
# Padding and convolution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Padding:
    """Spatial padding for conv2d: zero or reflect, possibly one-sided.

    ``rows``/``cols`` are (before, after) amounts. Downsampling 3x3 stride-2
    layers need one-sided padding: symmetric padding can never make
    ``H + 2n - k`` divisible by 2 when both H and k-1 are even.
    """

    mode: str
    rows: tuple[int, int]
    cols: tuple[int, int]

    def __post_init__(self):
        if self.mode not in ("zero", "reflect"):
            raise ConfigurationError(f"unknown padding mode {self.mode!r}")
        for amount in (*self.rows, *self.cols):
            if amount < 0:
                raise ConfigurationError("padding amounts must be >= 0")

    @property
    def total(self) -> tuple[int, int]:
        return (self.rows[0] + self.rows[1], self.cols[0] + self.cols[1])


def zero_pad(n: int) -> Padding:
    return Padding("zero", (n, n), (n, n))


def reflect_pad(n: int) -> Padding:
    return Padding("reflect", (n, n), (n, n))


def _pad_input(x: Array, padding: Padding) -> Array:
    """Manual spatial padding (np.pad's generality is too slow at this size)."""
    if padding.total == (0, 0):
        return x
    (rb, ra), (cb, ca) = padding.rows, padding.cols
    n, c, h, w = x.shape
    if padding.mode == "reflect" and (max(rb, ra) > h - 1 or max(cb, ca) > w - 1):
        raise ConfigurationError(
            f"reflect padding {padding.rows}/{padding.cols} too large for {h}x{w} input"
        )
    out = np.zeros((n, c, h + rb + ra, w + cb + ca), dtype=np.float32)
    out[:, :, rb : rb + h, cb : cb + w] = x
    if padding.mode == "reflect":
        # mirror without repeating the edge row/column (np.pad 'reflect')
        if rb:
            out[:, :, :rb, cb : cb + w] = x[:, :, rb:0:-1]
        if ra:
            stop = h - 2 - ra
            out[:, :, rb + h :, cb : cb + w] = x[:, :, h - 2 : (stop if stop >= 0 else None) : -1]
        if cb:
            out[:, :, :, :cb] = out[:, :, :, 2 * cb : cb : -1]
        if ca:
            upper = cb + w
            stop = upper - 2 - ca
            out[:, :, :, upper:] = out[:, :, :, upper - 2 : (stop if stop >= 0 else None) : -1]
    return out


def _fold_axis_reflect(g: Array, axis: int, before: int, after: int) -> Array:
    """Fold reflect-padded gradient rows back onto their mirror sources."""
    n = g.shape[axis] - before - after
    idx = [slice(None)] * g.ndim

    def sl(start, stop, step=None):
        idx[axis] = slice(start, stop, step)
        return tuple(idx)

    core = g[sl(before, before + n)].copy()
    if before:
        # padded index j < before mirrors core index (before - j)
        core[sl(1, before + 1)] += g[sl(before - 1, None, -1)]
    if after:
        # padded index before+n+i mirrors core index n-2-i
        core[sl(n - 1 - after, n - 1)] += g[sl(before + n + after - 1, before + n - 1, -1)]
    return core


def _unpad_grad(g: Array, padding: Padding) -> Array:
    if padding.total == (0, 0):
        return g
    if padding.mode == "zero":
        (rb, ra), (cb, ca) = padding.rows, padding.cols
        h, w = g.shape[2] - rb - ra, g.shape[3] - cb - ca
        return g[:, :, rb : rb + h, cb : cb + w]
    g = _fold_axis_reflect(g, 2, *padding.rows)
    return _fold_axis_reflect(g, 3, *padding.cols)


def _im2col(xp: Array, k: int, stride: int) -> Array:
    """(N, C, Hp, Wp) -> (N, C*k*k, L) patch matrix, L = H' * W'."""
    n, c = xp.shape[:2]
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, ho * wo)
    return np.ascontiguousarray(cols)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor,
    stride: int = 1,
    padding: Padding = zero_pad(0),
) -> Tensor:
    """Cross-correlation of the padded input with ``weight`` plus ``bias``.

    Output size per axis is (size + pad_before + pad_after - k) / stride + 1
    and the division must be exact; a remainder raises ConfigurationError
    rather than silently dropping rows.
    """
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d input must be rank 4 NCHW, got shape {x.data.shape}")
    if weight.data.ndim != 4 or weight.data.shape[2] != weight.data.shape[3]:
        raise DimensionError(f"conv2d weight must be (Cout, Cin, k, k), got {weight.data.shape}")
    cout, cin, k, _ = weight.data.shape
    if x.data.shape[1] != cin:
        raise DimensionError(
            f"conv2d channel axis mismatch: input C={x.data.shape[1]}, weight Cin={cin}"
        )
    if bias.data.shape != (cout,):
        raise DimensionError(f"conv2d bias must have shape ({cout},), got {bias.data.shape}")
    if stride not in (1, 2):
        raise ConfigurationError(f"conv2d stride must be 1 or 2, got {stride}")

    xp = _pad_input(x.data, padding)
    n, _, hp, wp = xp.shape
    if hp < k or wp < k:
        raise ConfigurationError(
            f"conv2d kernel {k} exceeds padded input {hp}x{wp}"
        )
    if (hp - k) % stride or (wp - k) % stride:
        raise ConfigurationError(
            f"conv2d stride arithmetic not exact: padded {hp}x{wp}, kernel {k}, "
            f"stride {stride} leaves a remainder"
        )
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1

    cols = _im2col(xp, k, stride)
    w2 = weight.data.reshape(cout, cin * k * k)
    if n == 1:
        out = (w2 @ cols[0] + bias.data[:, None]).reshape(1, cout, ho, wo)
    else:
        out = (np.matmul(w2, cols) + bias.data[:, None]).reshape(n, cout, ho, wo)
    need_x = x.requires_grad

    def backward_fn(g):
        g2 = g.reshape(n, cout, ho * wo)
        grad_b = g.sum(axis=(0, 2, 3))
        if n == 1:
            grad_w = (g2[0] @ cols[0].T).reshape(weight.data.shape)
        else:
            grad_w = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.data.shape)
        if not need_x:
            return (None, grad_w, grad_b)
        grad_cols = np.matmul(w2.T, g2).reshape(n, cin, k, k, ho, wo)
        gp = np.zeros((n, cin, hp, wp), dtype=np.float32)
        for ki in range(k):
            for kj in range(k):
                gp[
                    :,
                    :,
                    ki : ki + (ho - 1) * stride + 1 : stride,
                    kj : kj + (wo - 1) * stride + 1 : stride,
                ] += grad_cols[:, :, ki, kj]
        return (_unpad_grad(gp, padding), grad_w, grad_b)

    return _make_node(out, (x, weight, bias), backward_fn)


# ---------------------------------------------------------------------------
# Normalization, resampling, concatenation
# ---------------------------------------------------------------------------


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each (n, c) plane to zero mean / unit variance, then affine.

    Variance is the biased estimate over H*W with ``eps`` inside the square
    root, so constant planes map to ``beta`` instead of dividing by zero.
    """
    if x.data.ndim != 4:
        raise DimensionError(f"instance_norm input must be rank 4, got {x.data.shape}")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError(
            f"instance_norm affine shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match channel count {c}"
        )
    if eps <= 0:
        raise ConfigurationError(f"instance_norm eps must be > 0, got {eps}")

    mu = x.data.mean(axis=(2, 3), keepdims=True, dtype=np.float32)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=(2, 3), keepdims=True, dtype=np.float32)
    inv = np.float32(1.0) / np.sqrt(var + np.float32(eps))
    xhat = centered * inv
    g4 = gamma.data[None, :, None, None]
    out = g4 * xhat + beta.data[None, :, None, None]

    def backward_fn(g):
        grad_gamma = (g * xhat).sum(axis=(0, 2, 3))
        grad_beta = g.sum(axis=(0, 2, 3))
        gg = g * g4
        gg_mean = gg.mean(axis=(2, 3), keepdims=True, dtype=np.float32)
        proj = (gg * xhat).mean(axis=(2, 3), keepdims=True, dtype=np.float32)
        grad_x = inv * (gg - gg_mean - xhat * proj)
        return (grad_x, grad_gamma, grad_beta)

    return _make_node(out, (x, gamma, beta), backward_fn)


def _upsample2x_axis(a: Array, axis: int) -> Array:
    """Double one spatial axis with half-pixel-center bilinear weights.

    Output 2i   = a[i] + 0.25 * (a[max(i-1, 0)] - a[i])
    Output 2i+1 = a[i] + 0.25 * (a[min(i+1, n-1)] - a[i])
    The anchored form keeps constant inputs bit-exact and never overshoots.
    """
    n = a.shape[axis]
    prev_idx = np.maximum(np.arange(n) - 1, 0)
    next_idx = np.minimum(np.arange(n) + 1, n - 1)
    prev = np.take(a, prev_idx, axis=axis)
    nxt = np.take(a, next_idx, axis=axis)
    quarter = np.float32(0.25)
    even = a + quarter * (prev - a)
    odd = a + quarter * (nxt - a)
    shape = list(a.shape)
    shape[axis] = 2 * n
    out = np.empty(shape, dtype=np.float32)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(0, None, 2)
    out[tuple(idx)] = even
    idx[axis] = slice(1, None, 2)
    out[tuple(idx)] = odd
    return out


def _upsample2x_axis_grad(g: Array, axis: int, n: int) -> Array:
    idx = [slice(None)] * g.ndim
    idx[axis] = slice(0, None, 2)
    g_even = g[tuple(idx)]
    idx[axis] = slice(1, None, 2)
    g_odd = g[tuple(idx)]
    q, t = np.float32(0.25), np.float32(0.75)
    grad = t * (g_even + g_odd)

    def sl(start, stop):
        idx[axis] = slice(start, stop)
        return tuple(idx)

    # even output 2i pulls 0.25 from index max(i-1, 0)
    grad[sl(0, n - 1)] += q * g_even[sl(1, n)]
    grad[sl(0, 1)] += q * g_even[sl(0, 1)]
    # odd output 2i+1 pulls 0.25 from index min(i+1, n-1)
    grad[sl(1, n)] += q * g_odd[sl(0, n - 1)]
    grad[sl(n - 1, n)] += q * g_odd[sl(n - 1, n)]
    return grad


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Double H and W using half-pixel-center sampling with edge clamping."""
    if x.data.ndim != 4:
        raise DimensionError(f"bilinear_upsample2x input must be rank 4, got {x.data.shape}")
    n, c, h, w = x.data.shape
    out = _upsample2x_axis(_upsample2x_axis(x.data, 2), 3)

    def backward_fn(g):
        g = _upsample2x_axis_grad(g, 3, w)
        g = _upsample2x_axis_grad(g, 2, h)
        return (g,)

    return _make_node(out, (x,), backward_fn)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis; a's channels come first."""
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise DimensionError("concat_channels operands must be rank 4")
    for axis, name in ((0, "batch"), (2, "height"), (3, "width")):
        if a.data.shape[axis] != b.data.shape[axis]:
            raise DimensionError(
                f"concat_channels {name} axis mismatch: "
                f"{a.data.shape[axis]} vs {b.data.shape[axis]}"
            )
    ca = a.data.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward_fn(g):
        return (np.ascontiguousarray(g[:, :ca]), np.ascontiguousarray(g[:, ca:]))

    return _make_node(out, (a, b), backward_fn)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def mean(x: Tensor) -> Tensor:
    size = np.float32(x.data.size)
    out = np.asarray(x.data.mean(dtype=np.float32), dtype=np.float32)

    def backward_fn(g):
        return (np.full_like(x.data, g / size),)

    return _make_node(out, (x,), backward_fn)


def l1_distance(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference over all elements."""
    _check_same_shape(a, b, "l1_distance")
    diff = a.data - b.data
    out = np.asarray(np.abs(diff).mean(dtype=np.float32), dtype=np.float32)
    size = np.float32(diff.size)

    def backward_fn(g):
        s = np.sign(diff) * (g / size)
        return (s, -s)

    return _make_node(out, (a, b), backward_fn)


def squared_error(x: Tensor, target: float) -> Tensor:
    """Mean squared deviation from a scalar target."""
    diff = x.data - np.float32(target)
    out = np.asarray((diff * diff).mean(dtype=np.float32), dtype=np.float32)
    size = np.float32(diff.size)

    def backward_fn(g):
        return (diff * (np.float32(2.0) * g / size),)

    return _make_node(out, (x,), backward_fn)


def mean_over_batch(x: Tensor) -> Tensor:
    """Average over the batch axis, keeping a singleton N."""
    if x.data.ndim != 4:
        raise DimensionError(f"mean_over_batch input must be rank 4, got {x.data.shape}")
    n = np.float32(x.data.shape[0])
    out = x.data.mean(axis=0, keepdims=True, dtype=np.float32)

    def backward_fn(g):
        return (np.broadcast_to(g / n, x.data.shape).astype(np.float32, copy=True),)

    return _make_node(out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, Array]:
    """Propagate d(loss)/d(leaf) to every grad-tracked leaf.

    Returns a map from leaf tensor to this call's gradient contribution
    (what an optimizer consumes). The leaf's ``.grad`` attribute
    additionally accumulates across calls until reset to ``None``.
    """
    if loss.data.ndim != 0:
        raise UsageError(
            f"backward requires a scalar loss, got shape {loss.data.shape}"
        )
    order = _topo_order(loss)
    flowing: dict[int, Array] = {id(loss): np.ones((), dtype=np.float32)}
    leaves: dict[Tensor, Array] = {}
    for node in reversed(order):
        g = flowing.pop(id(node), None)
        if g is None or not node.requires_grad:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            leaves[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in flowing:
                flowing[pid] = flowing[pid] + pg
            else:
                flowing[pid] = pg
    return leaves
