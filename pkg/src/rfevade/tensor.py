"""Minimal dense-tensor engine with reverse-mode autodiff and Adam.

All arithmetic is float64. Complex baseband signals are carried as
2-channel real tensors (I, Q); there is no complex dtype here. The tape
is implicit: every op records its parents and a closure that pushes the
output gradient back to them. A single backward pass is single-threaded;
parallelism belongs above this module.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sp_fft


class TensorError(ValueError):
    pass


class Tensor:
    """n-d array plus optional gradient and tape provenance."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_done")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def item(self):
        if self.data.size != 1:
            raise TensorError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = any(p.requires_grad for p in parents) or any(
            p._parents for p in parents
        )
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _needs_grad(t):
    return t.requires_grad or bool(t._parents)


def _accumulate(t, g):
    if not _needs_grad(t):
        return
    if t.grad is None:
        # copy: g may be shared with another node's gradient buffer
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _accum_own(t, g):
    """Like _accumulate, but takes ownership of g.

    Only valid when the caller freshly allocated g (or a view of a fresh
    temporary) and holds no other reference to it; skips the defensive copy.
    """
    if not _needs_grad(t):
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / reduction ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bwd)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), bwd)


def mul_scalar(a, s):
    a = _as_tensor(a)
    s = float(s)
    data = a.data * s

    def bwd(g):
        _accum_own(a, g * s)

    return _make(data, (a,), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def bwd(g):
        _accum_own(a, _unbroadcast(g * b.data, a.data.shape))
        _accum_own(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bwd)


def tanh(a):
    a = _as_tensor(a)
    t = np.tanh(a.data)

    def bwd(g):
        _accum_own(a, g * (1.0 - t * t))

    return _make(t, (a,), bwd)


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0

    def bwd(g):
        _accum_own(a, g * mask)

    return _make(a.data * mask, (a,), bwd)


def log(a):
    a = _as_tensor(a)
    data = np.log(a.data)

    def bwd(g):
        _accum_own(a, g / a.data)

    return _make(data, (a,), bwd)


def absolute(a):
    a = _as_tensor(a)
    s = np.sign(a.data)

    def bwd(g):
        _accum_own(a, g * s)

    return _make(np.abs(a.data), (a,), bwd)


def square(a):
    a = _as_tensor(a)

    def bwd(g):
        _accum_own(a, g * 2.0 * a.data)

    return _make(a.data * a.data, (a,), bwd)


def sqrt(a):
    a = _as_tensor(a)
    r = np.sqrt(a.data)

    def bwd(g):
        _accum_own(a, g * 0.5 / r)

    return _make(r, (a,), bwd)


def reciprocal(a):
    a = _as_tensor(a)
    inv = 1.0 / a.data

    def bwd(g):
        _accum_own(a, -g * inv * inv)

    return _make(inv, (a,), bwd)


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient passes only where not clipped."""
    a = _as_tensor(a)
    data = np.clip(a.data, lo, hi)
    mask = (a.data > lo) & (a.data < hi)

    def bwd(g):
        _accum_own(a, g * mask)

    return _make(data, (a,), bwd)


def softmax(a, axis=-1):
    a = _as_tensor(a)
    if a.data.shape[axis] == 0:
        raise TensorError("softmax on empty axis")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        _accum_own(a, p * (g - dot))

    return _make(p, (a,), bwd)


def mean(a, axis=None):
    a = _as_tensor(a)
    data = a.data.mean(axis=axis)
    n = a.data.size if axis is None else a.data.shape[axis]

    def bwd(g):
        if axis is None:
            _accum_own(a, np.full(a.data.shape, g / n))
        else:
            _accum_own(a, np.broadcast_to(np.expand_dims(g, axis) / n, a.data.shape).copy())

    return _make(data, (a,), bwd)


def tsum(a, axis=None):
    a = _as_tensor(a)
    data = a.data.sum(axis=axis)

    def bwd(g):
        if axis is None:
            _accum_own(a, np.full(a.data.shape, g))
        else:
            _accum_own(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _make(data, (a,), bwd)


# ---------------------------------------------------------------------------
# shape ops


def tslice(a, axis, start, stop, step=1):
    a = _as_tensor(a)
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, stop, step)
    sl = tuple(sl)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        _accum_own(a, full)

    return _make(a.data[sl].copy(), (a,), bwd)


def batch_window(a, offsets, length, axis=-1):
    """Per-row contiguous window along `axis` of a batched tensor.

    offsets[i] selects the start of row i's window; rows are the leading
    axis. Gradient scatters back into the source positions.
    """
    a = _as_tensor(a)
    offsets = np.asarray(offsets, dtype=np.intp)
    if offsets.shape[0] != a.data.shape[0]:
        raise TensorError("one offset per batch row required")
    axis = axis % a.data.ndim
    if (offsets < 0).any() or (offsets + length > a.data.shape[axis]).any():
        raise TensorError(
            f"window [offset, offset+{length}) out of range for axis length {a.data.shape[axis]}"
        )
    idx = offsets.reshape((-1,) + (1,) * (a.data.ndim - 1)) + np.arange(length).reshape(
        (1,) * (a.data.ndim - 1) + (-1,)
    )
    idx = np.broadcast_to(idx, a.data.shape[:axis] + (length,) + a.data.shape[axis + 1 :])
    data = np.take_along_axis(a.data, idx, axis=axis)

    def bwd(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, g, axis=axis)
        _accum_own(a, full)

    return _make(data, (a,), bwd)


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.data.shape

    def bwd(g):
        _accumulate(a, g.reshape(old))

    return _make(a.data.reshape(shape), (a,), bwd)


def permute(a, axes):
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        _accumulate(a, g.transpose(inv))

    return _make(a.data.transpose(axes).copy(), (a,), bwd)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _make(data, tuple(tensors), bwd)


# ---------------------------------------------------------------------------
# network ops


def dense(x, w, b):
    """x (B, F) @ w (F, O) + b (O)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise TensorError(f"dense shape mismatch: x {x.data.shape} vs w {w.data.shape}")
    data = x.data @ w.data + b.data

    def bwd(g):
        _accum_own(x, g @ w.data.T)
        _accum_own(w, x.data.T @ g)
        _accum_own(b, g.sum(axis=0))

    return _make(data, (x, w, b), bwd)


def conv1d_same(x, w, b, pad_mode="zero"):
    """Length-preserving 1-d convolution.

    x (B, C, L), w (O, C, K) with K odd, b (O). `pad_mode` is "zero"
    (symmetric zero padding) or "wrap" (cyclic, used by the matched
    filter where frames are treated as one period).
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise TensorError(f"conv1d_same expects (B,C,L) and (O,C,K), got {x.data.shape} and {w.data.shape}")
    B, C, L = x.data.shape
    O, Cw, K = w.data.shape
    if Cw != C:
        raise TensorError(f"conv1d_same channel mismatch: input {C} vs kernel {Cw}")
    if K % 2 == 0:
        raise TensorError(f"conv1d_same requires odd kernel width, got {K}")
    if K == 1:
        # pointwise conv: pure channel mixing, no padding or windowing
        wm = w.data[:, :, 0]  # (O, C)
        data = wm @ x.data  # broadcast matmul over B
        data += b.data[:, None]

        def bwd1(g):
            if _needs_grad(w):
                gw = np.tensordot(g, x.data, axes=([0, 2], [0, 2]))
                _accum_own(w, gw[:, :, None])
            if _needs_grad(b):
                _accum_own(b, g.sum(axis=(0, 2)))
            if _needs_grad(x):
                _accum_own(x, wm.T @ g)

        return _make(data, (x, w, b), bwd1)
    # FFT evaluation: the centered correlation out[l] = sum_{c,k}
    # x[c, l + k - half] w[o, c, k] becomes a product in the frequency
    # domain. With N = L the wrap geometry is exact; zero padding to
    # N >= L + K - 1 makes the circular result equal the zero-padded one.
    half = K // 2
    N = L if pad_mode == "wrap" else sp_fft.next_fast_len(L + K - 1)
    idx_out = (np.arange(L) - half) % N
    Xf = np.fft.rfft(x.data, n=N)  # (B, C, F)
    Wf = np.fft.rfft(w.data, n=N)  # (O, C, F)
    corr = np.fft.irfft(np.einsum("bcf,ocf->bof", Xf, Wf.conj()), n=N)
    data = corr[:, :, idx_out]
    data += b.data[:, None]

    def bwd(g):
        Gf = np.fft.rfft(g, n=N)
        if _needs_grad(w):
            # adjoint wrt w is the g-with-x cross-correlation at lags k-half
            gw = np.fft.irfft(np.einsum("bof,bcf->ocf", Gf.conj(), Xf), n=N)
            _accum_own(w, gw[:, :, (np.arange(K) - half) % N])
        if _needs_grad(b):
            _accum_own(b, g.sum(axis=(0, 2)))
        if _needs_grad(x):
            # adjoint wrt x is the g-with-w convolution read at l + half
            gx = np.fft.irfft(np.einsum("bof,ocf->bcf", Gf, Wf), n=N)
            _accum_own(x, gx[:, :, (np.arange(L) + half) % N])

    return _make(data, (x, w, b), bwd)


# ---------------------------------------------------------------------------
# dispatcher, backward, optimizer

_OPS = {
    "conv1d_same": conv1d_same,
    "dense": dense,
    "tanh": tanh,
    "relu": relu,
    "softmax": softmax,
    "log": log,
    "add": add,
    "sub": sub,
    "mul_scalar": mul_scalar,
    "mul_elementwise": mul,
    "mean": mean,
    "sum": tsum,
    "abs": absolute,
    "square": square,
    "sqrt": sqrt,
    "reciprocal": reciprocal,
    "clip": clip,
    "slice": tslice,
    "batch_window": batch_window,
    "reshape": reshape,
    "permute": permute,
    "concat": concat,
}


def op_forward(kind, inputs, attrs=None):
    """Apply an op by name; inputs is a Tensor list, attrs keyword extras."""
    if kind not in _OPS:
        raise TensorError(f"unknown op kind {kind!r}")
    if kind == "concat":
        return _OPS[kind](inputs, **(attrs or {}))
    return _OPS[kind](*inputs, **(attrs or {}))


def backward(loss):
    """Reverse-mode sweep from a scalar loss.

    Populates .grad on every requires_grad ancestor. A second sweep from
    the same loss tensor is rejected; build a fresh graph per step.
    """
    if loss.data.size != 1:
        raise TensorError(f"backward from non-scalar tensor of shape {loss.data.shape}")
    if loss._done:
        raise TensorError("backward already ran from this tensor; rebuild the graph")
    loss._done = True

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


@dataclass
class AdamState:
    """Bias-corrected Adam bookkeeping for one parameter list."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adam_step(params, state):
    """One Adam update over `params`; gradients are left untouched."""
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    for i, p in enumerate(params):
        if p.grad is None:
            raise TensorError(f"adam_step: parameter {p.name or i} has no gradient")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        m *= b1
        m += (1 - b1) * p.grad
        v *= b2
        v += (1 - b2) * p.grad * p.grad
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p.data -= state.learning_rate * mhat / (np.sqrt(vhat) + state.epsilon)


def zero_grads(params):
    for p in params:
        p.grad = None


def uniform_init(rng, shape, fan_in, name=None):
    """Weight init: uniform in [-k, k] with k = 1/sqrt(fan_in)."""
    k = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-k, k, size=shape), requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# checkpoint format
#
# Flat binary file of named float64 tensors, little-endian throughout:
#   magic   4 bytes  b"RFT1"
#   version u32      currently 1
#   count   u32
#   then per tensor:
#     name_len u16, name utf-8 bytes
#     ndim     u8,  shape u32 * ndim
#     data     f64 * prod(shape)

_MAGIC = b"RFT1"
_VERSION = 1


def save_checkpoint(path, named_tensors):
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(named_tensors)))
        for name, t in named_tensors.items():
            arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    out = {}
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise TensorError(f"{path}: not a checkpoint file")
        version, count = struct.unpack("<II", f.read(8))
        if version != _VERSION:
            raise TensorError(f"{path}: unsupported checkpoint version {version}")
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(shape)
            out[name] = Tensor(data.copy())
    return out
