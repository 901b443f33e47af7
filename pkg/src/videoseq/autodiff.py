"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is define-by-run: every differentiable operation appends a node
to the active :class:`Graph` (a tape), so creation order is already a
topological order. ``backward(loss)`` walks the tape once in reverse,
accumulating gradients into every reachable tensor with
``requires_grad=True``, then closes the tape.

Only the primitives the sequence models need are provided: broadcasting
arithmetic, 2-D matmul, same-length temporal convolution, masked batch
normalization / softmax / mean pooling, elementwise activations, and the
time-axis plumbing (stacking, slicing, per-item reversal) that recurrent
layers are built from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigurationError,
    ContractError,
    DimensionError,
    PreconditionError,
    StateError,
)

__all__ = [
    "Tensor",
    "Graph",
    "TimeMask",
    "BatchNormState",
    "no_grad",
    "backward",
    "matmul",
    "transpose",
    "concat",
    "concat_channels",
    "stack_time",
    "reverse_valid_time",
    "conv1d_same",
    "batchnorm_time",
    "activation",
    "relu",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "sqrt",
    "clip",
    "softmax_masked",
    "masked_mean_time",
    "numerical_gradient",
    "check_gradients",
    "relative_error",
]


class Graph:
    """Tape of operation nodes in creation order.

    Creation order is a valid topological order by construction: an op's
    inputs always exist before its output. A graph is closed by the first
    ``backward`` call through it; further backward calls error out.
    """

    __slots__ = ("nodes", "closed")

    def __init__(self) -> None:
        self.nodes: list[Tensor] = []
        self.closed = False


_active = Graph()
_grad_enabled = True


def fresh_graph() -> Graph:
    """Discard the active tape and start a new one."""
    global _active
    _active = Graph()
    return _active


class no_grad:
    """Context manager that suspends tape recording.

    Inside the context every operation produces a constant tensor, which
    makes inference passes allocation-light and side-effect free.
    """

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A dense float64 array, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_graph", "_index")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor values must be finite")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self._graph = None
        self._index = -1

    # -- construction of op outputs (fast path, skips the finite scan) --

    @staticmethod
    def _op(data: np.ndarray, parents: tuple, backward_fn) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._parents = ()
        out._backward = None
        out._graph = None
        out._index = -1
        if _grad_enabled and any(p.requires_grad for p in parents):
            for p in parents:
                if p.requires_grad and p._graph is not None and p._graph.closed:
                    raise StateError("cannot extend a graph that has already been traversed")
            out.requires_grad = True
            out._parents = parents
            out._backward = backward_fn
            g = _active
            out._graph = g
            out._index = len(g.nodes)
            g.nodes.append(out)
        else:
            out.requires_grad = False
        return out

    # -- basic introspection --

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """A constant view of this tensor's values (shares the buffer)."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._backward = None
        out._graph = None
        out._index = -1
        return out

    # -- arithmetic --

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_const(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_const(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _const(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros(t.data.shape)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _const(a), _const(b)
    data = a.data + b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return Tensor._op(data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _const(a), _const(b)
    data = a.data - b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return Tensor._op(data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _const(a), _const(b)
    data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor._op(data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _const(a), _const(b)
    data = a.data / b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * data / b.data, b.data.shape))

    return Tensor._op(data, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product with the standard transpose backward rules."""
    a, b = _const(a), _const(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul shapes incompatible: {a.data.shape} x {b.data.shape}"
        )
    data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return Tensor._op(data, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    a = _const(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got shape {a.data.shape}")
    data = a.data.T

    def bw(g):
        _accumulate(a, g.T)

    return Tensor._op(data, (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    a = _const(a)
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def bw(g):
        _accumulate(a, g.reshape(a.data.shape))

    return Tensor._op(data, (a,), bw)


def getitem(a: Tensor, idx) -> Tensor:
    """Basic (slice / integer) indexing. Advanced indexing is not supported."""
    data = a.data[idx]

    def bw(g):
        if a.grad is None:
            a.grad = np.zeros(a.data.shape)
        a.grad[idx] += g

    return Tensor._op(data, (a,), bw)


def concat(xs, axis: int) -> Tensor:
    xs = [_const(x) for x in xs]
    if not xs:
        raise DimensionError("concat of an empty list")
    data = np.concatenate([x.data for x in xs], axis=axis)
    sizes = [x.data.shape[axis] for x in xs]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(x, g[tuple(sl)])

    return Tensor._op(data, tuple(xs), bw)


def concat_channels(xs) -> Tensor:
    """Concatenate along the channel axis (axis 1); other dims must agree."""
    xs = list(xs)
    if not xs:
        raise DimensionError("concat_channels of an empty list")
    first = _const(xs[0]).data.shape
    for x in xs[1:]:
        s = _const(x).data.shape
        if len(s) != len(first) or s[:1] != first[:1] or s[2:] != first[2:]:
            raise DimensionError(
                f"concat_channels: non-channel dims differ, {first} vs {s}"
            )
    return concat(xs, axis=1)


def stack_time(xs) -> Tensor:
    """Stack per-step [batch x channels] tensors into [batch x channels x time]."""
    xs = [_const(x) for x in xs]
    data = np.stack([x.data for x in xs], axis=2)

    def bw(g):
        for t, x in enumerate(xs):
            _accumulate(x, g[:, :, t])

    return Tensor._op(data, tuple(xs), bw)


# ---------------------------------------------------------------------------
# elementwise functions
# ---------------------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    a = _const(a)
    data = np.maximum(a.data, 0.0)

    def bw(g):
        _accumulate(a, g * (a.data > 0.0))

    return Tensor._op(data, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    a = _const(a)
    # exp may transiently overflow to inf for very negative inputs; the
    # division then lands on exactly 0, which is the correct limit
    with np.errstate(over="ignore"):
        data = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g):
        _accumulate(a, g * data * (1.0 - data))

    return Tensor._op(data, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    a = _const(a)
    data = np.tanh(a.data)

    def bw(g):
        _accumulate(a, g * (1.0 - data * data))

    return Tensor._op(data, (a,), bw)


def exp(a: Tensor) -> Tensor:
    a = _const(a)
    data = np.exp(a.data)

    def bw(g):
        _accumulate(a, g * data)

    return Tensor._op(data, (a,), bw)


def log(a: Tensor) -> Tensor:
    a = _const(a)
    data = np.log(a.data)

    def bw(g):
        _accumulate(a, g / a.data)

    return Tensor._op(data, (a,), bw)


def sqrt(a: Tensor) -> Tensor:
    a = _const(a)
    data = np.sqrt(a.data)

    def bw(g):
        _accumulate(a, g / (2.0 * data))

    return Tensor._op(data, (a,), bw)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only where unclamped."""
    a = _const(a)
    data = np.clip(a.data, lo, hi)
    passthrough = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        _accumulate(a, g * passthrough)

    return Tensor._op(data, (a,), bw)


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def activation(a: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown activation kind {kind!r}") from None
    return fn(a)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _const(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    axes = axis if axis is None or isinstance(axis, tuple) else (axis,)

    def bw(g):
        if axes is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accumulate(a, np.broadcast_to(g, a.data.shape))

    return Tensor._op(data, (a,), bw)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _const(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.data.shape[ax]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# masking over the time axis
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TimeMask:
    """Valid-frame bookkeeping for a zero-padded [batch x ... x time] batch."""

    batch: int
    max_time: int
    valid_lengths: np.ndarray

    def __post_init__(self):
        lengths = np.asarray(self.valid_lengths, dtype=np.int64)
        object.__setattr__(self, "valid_lengths", lengths)
        if lengths.shape != (self.batch,):
            raise DimensionError(
                f"valid_lengths shape {lengths.shape} does not match batch {self.batch}"
            )
        if np.any(lengths < 1) or np.any(lengths > self.max_time):
            raise PreconditionError(
                "every item needs between 1 and max_time valid frames"
            )

    @classmethod
    def full(cls, batch: int, time: int) -> "TimeMask":
        return cls(batch, time, np.full(batch, time, dtype=np.int64))

    def bool_matrix(self) -> np.ndarray:
        """[batch x time] boolean validity."""
        return np.arange(self.max_time)[None, :] < self.valid_lengths[:, None]

    def float_matrix(self) -> np.ndarray:
        return self.bool_matrix().astype(np.float64)

    def channel_mask(self) -> np.ndarray:
        """[batch x 1 x time] float mask, broadcastable over channels."""
        return self.float_matrix()[:, None, :]

    def total_valid(self) -> int:
        return int(self.valid_lengths.sum())


def _check_time_shape(x: Tensor, mask: TimeMask, name: str) -> None:
    if x.data.shape[0] != mask.batch or x.data.shape[-1] != mask.max_time:
        raise DimensionError(
            f"{name}: tensor shape {x.data.shape} does not match mask "
            f"(batch {mask.batch}, time {mask.max_time})"
        )


def reverse_valid_time(x: Tensor, mask: TimeMask) -> Tensor:
    """Reverse each item's valid prefix along time; padded positions become 0.

    The map is an involution on the valid prefix, so the backward rule is
    the same reversal applied to the incoming gradient.
    """
    x = _const(x)
    _check_time_shape(x, mask, "reverse_valid_time")
    t = np.arange(mask.max_time)[None, :]
    src = mask.valid_lengths[:, None] - 1 - t
    valid = t < mask.valid_lengths[:, None]
    src = np.where(valid, src, 0)
    gather = src[:, None, :]
    keep = valid[:, None, :]

    data = np.take_along_axis(x.data, gather, axis=2) * keep

    def bw(g):
        _accumulate(x, np.take_along_axis(g, gather, axis=2) * keep)

    return Tensor._op(data, (x,), bw)


def softmax_masked(scores: Tensor, mask: TimeMask) -> Tensor:
    """Per-item softmax over valid positions; masked positions weigh exactly 0."""
    scores = _const(scores)
    if scores.data.shape != (mask.batch, mask.max_time):
        raise DimensionError(
            f"softmax_masked: scores shape {scores.data.shape} does not match "
            f"mask ({mask.batch}, {mask.max_time})"
        )
    m = mask.float_matrix()
    # max over valid positions only, as a constant shift for stability
    shifted = np.where(mask.bool_matrix(), scores.data, -np.inf)
    shift = shifted.max(axis=1, keepdims=True)
    z = mul(sub(scores, shift), m)
    e = mul(exp(z), m)
    denom = tensor_sum(e, axis=1, keepdims=True)
    return div(e, denom)


def masked_mean_time(x: Tensor, mask: TimeMask) -> Tensor:
    """Mean over each item's valid frames: [b x c x t] -> [b x c]."""
    x = _const(x)
    _check_time_shape(x, mask, "masked_mean_time")
    s = tensor_sum(mul(x, mask.channel_mask()), axis=2)
    counts = mask.valid_lengths.astype(np.float64)[:, None]
    return mul(s, 1.0 / counts)


# ---------------------------------------------------------------------------
# temporal convolution
# ---------------------------------------------------------------------------


def conv1d_same(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Cross-correlate along time with zero padding so the length is kept.

    x: [batch x c_in x time], kernels: [c_out x c_in x width] (width odd),
    bias: [c_out]. Implemented as im2col + one BLAS matmul.
    """
    x, kernels, bias = _const(x), _const(kernels), _const(bias)
    if x.data.ndim != 3 or kernels.data.ndim != 3:
        raise DimensionError(
            f"conv1d_same expects 3-D input and kernels, got {x.data.shape} and "
            f"{kernels.data.shape}"
        )
    b, ci, t = x.data.shape
    co, kci, w = kernels.data.shape
    if w % 2 == 0:
        raise ConfigurationError(f"kernel width must be odd, got {w}")
    if kci != ci:
        raise DimensionError(
            f"conv1d_same: input has {ci} channels but kernels expect {kci}"
        )
    if bias.data.shape != (co,):
        raise DimensionError(
            f"conv1d_same: bias shape {bias.data.shape} does not match {co} filters"
        )
    p = (w - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p)))
    win = np.lib.stride_tricks.sliding_window_view(xp, w, axis=2)  # (b, ci, t, w)
    col = win.transpose(0, 2, 1, 3).reshape(b * t, ci * w)
    kmat = kernels.data.reshape(co, ci * w)
    out = (col @ kmat.T + bias.data).reshape(b, t, co).transpose(0, 2, 1)

    def bw(g):
        gmat = g.transpose(0, 2, 1).reshape(b * t, co)
        if kernels.requires_grad:
            _accumulate(kernels, (gmat.T @ col).reshape(co, ci, w))
        if bias.requires_grad:
            _accumulate(bias, gmat.sum(axis=0))
        if x.requires_grad:
            gcol = (gmat @ kmat).reshape(b, t, ci, w).transpose(0, 2, 1, 3)
            gxp = np.zeros((b, ci, t + 2 * p))
            for j in range(w):
                gxp[:, :, j : j + t] += gcol[:, :, :, j]
            _accumulate(x, gxp[:, :, p : p + t])

    return Tensor._op(np.ascontiguousarray(out), (x, kernels, bias), bw)


# ---------------------------------------------------------------------------
# batch normalization over (batch, valid time)
# ---------------------------------------------------------------------------


@dataclass
class BatchNormState:
    """Per-channel running statistics, updated with momentum while training."""

    running_mean: np.ndarray
    running_var: np.ndarray
    initialized: bool = False
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def for_channels(cls, channels: int) -> "BatchNormState":
        return cls(np.zeros(channels), np.ones(channels))


def batchnorm_time(
    x: Tensor,
    mask: TimeMask,
    gamma: Tensor,
    beta: Tensor,
    mode: str,
    state: BatchNormState,
) -> Tensor:
    """Per-channel normalization over (batch, valid time positions).

    Train mode normalizes with batch statistics computed over valid frames
    only and folds them into the running statistics (first call seeds them
    directly, later calls blend with momentum). Eval mode applies the
    running statistics as a fixed affine map. Padded positions stay zero.
    """
    x, gamma, beta = _const(x), _const(gamma), _const(beta)
    _check_time_shape(x, mask, "batchnorm_time")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError(
            f"batchnorm_time: gamma/beta must have shape ({c},), got "
            f"{gamma.data.shape} and {beta.data.shape}"
        )
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"mode must be 'train' or 'eval', got {mode!r}")
    m = mask.channel_mask()
    gamma3 = reshape(gamma, (1, c, 1))
    beta3 = reshape(beta, (1, c, 1))

    if mode == "eval":
        if not state.initialized:
            raise StateError("eval-mode batch norm requires populated running statistics")
        rm = state.running_mean.reshape(1, c, 1)
        rstd = np.sqrt(state.running_var + state.eps).reshape(1, c, 1)
        xhat = mul(sub(x, rm), 1.0 / rstd)
        return mul(add(mul(xhat, gamma3), beta3), m)

    n = float(mask.total_valid())
    mean = mul(tensor_sum(mul(x, m), axis=(0, 2), keepdims=True), 1.0 / n)
    centered = mul(sub(x, mean), m)
    var = mul(tensor_sum(mul(centered, centered), axis=(0, 2), keepdims=True), 1.0 / n)
    xhat = div(centered, sqrt(add(var, state.eps)))
    out = mul(add(mul(xhat, gamma3), beta3), m)

    batch_mean = mean.data.reshape(c).copy()
    batch_var = var.data.reshape(c).copy()
    if state.initialized:
        mom = state.momentum
        state.running_mean = mom * state.running_mean + (1.0 - mom) * batch_mean
        state.running_var = mom * state.running_var + (1.0 - mom) * batch_var
    else:
        state.running_mean = batch_mean
        state.running_var = batch_var
        state.initialized = True
    return out


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate gradients of every tracked ancestor of a scalar loss.

    Walks the active tape in reverse creation order, so each node is
    visited exactly once and gradients sum over all uses of a tensor.
    The traversed graph is closed afterwards; calling backward on it
    again raises.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    g = loss._graph
    if g is None:
        raise StateError("loss does not belong to a live graph (no tracked ancestors)")
    if g.closed:
        raise StateError("graph already traversed; rebuild the forward pass first")
    loss.grad = np.ones(loss.data.shape)
    for node in reversed(g.nodes[: loss._index + 1]):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad)
    g.closed = True
    fresh_graph()


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def numerical_gradient(f, tensor: Tensor, step: float = 1e-5, indices=None) -> np.ndarray:
    """Central-difference gradient of scalar-valued ``f`` w.r.t. ``tensor``.

    ``f`` takes no arguments and must re-read ``tensor.data`` on each call.
    When ``indices`` is given only those flat coordinates are evaluated
    (others are returned as 0).
    """
    grad = np.zeros(tensor.data.size)
    coords = range(tensor.data.size) if indices is None else indices
    with no_grad():
        for i in coords:
            pos = np.unravel_index(i, tensor.data.shape)
            orig = tensor.data[pos]
            tensor.data[pos] = orig + step
            hi = float(f())
            tensor.data[pos] = orig - step
            lo = float(f())
            tensor.data[pos] = orig
            grad[i] = (hi - lo) / (2.0 * step)
    return grad.reshape(tensor.data.shape)


def relative_error(analytic: float, numeric: float, floor: float = 1e-5) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(
    f,
    named_params,
    step: float = 1e-4,
    samples_per_block: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict:
    """Compare analytic and numeric gradients for each parameter block.

    ``f`` rebuilds the forward pass and returns the scalar loss tensor.
    Returns ``{name: worst relative error}`` over the sampled coordinates
    of each block (all coordinates when ``samples_per_block`` is None).
    """
    named_params = list(named_params)
    for _, p in named_params:
        p.zero_grad()
    loss = f()
    backward(loss)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros(p.data.shape))
                for name, p in named_params}
    rng = rng or np.random.default_rng(0)
    worst: dict[str, float] = {}
    for name, p in named_params:
        n = p.data.size
        if samples_per_block is None or samples_per_block >= n:
            idx = np.arange(n)
        else:
            idx = rng.choice(n, size=samples_per_block, replace=False)
        numeric = numerical_gradient(lambda: f().data, p, step=step, indices=idx)
        a = analytic[name].reshape(-1)
        nm = numeric.reshape(-1)
        worst[name] = max(relative_error(a[i], nm[i]) for i in idx)
    return worst
