"""Dense float64 primitives and a define-by-run reverse-mode tape.

Every public operation accepts :class:`Tensor` or array-likes, returns a
:class:`Tensor`, and rejects non-finite results. When a :class:`GradTape` is
active on the current thread and an input is tracked, the operation records a
backward closure on that tape.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .exceptions import DimensionError, NonFiniteError, UninitializedStatisticsError

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

LEAKY_SLOPE = 0.01
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9

_local = threading.local()

# Test hooks consumed by the verification suite. Never set in normal use.
FAULTS: set[str] = set()


class Tensor:
    """A dense, row-major float64 array that may be tracked for gradients."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr if arr.flags.c_contiguous else arr.copy(order="C")
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    return arr


# ---------------------------------------------------------------------------
# Gradient tape
# ---------------------------------------------------------------------------

@dataclass
class _Record:
    output: Tensor
    inputs: tuple
    backward: Callable


class GradTape:
    """Ordered record of primitive ops for reverse-mode differentiation.

    Usage::

        with GradTape() as tape:
            loss = f(params)
        grads = tape.gradient(loss, params)

    A tape belongs to the thread that entered it.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._tracked: set[int] = set()

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self._records)

    def _is_tracked(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._tracked

    def _record(self, output: Tensor, inputs: Sequence[Tensor], backward: Callable):
        if any(self._is_tracked(t) for t in inputs):
            self._records.append(_Record(output, tuple(inputs), backward))
            self._tracked.add(id(output))

    def gradient(self, target: Tensor, sources: Iterable[Tensor], seed=None) -> list[np.ndarray]:
        """Replay the tape backward from ``target``; one array per source."""
        sources = list(sources)
        grads: dict[int, np.ndarray] = {
            id(target): np.ones_like(target.data) if seed is None else np.asarray(seed, dtype=np.float64)
        }
        for rec in reversed(self._records):
            g = grads.get(id(rec.output))
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not self._is_tracked(inp):
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def _tape_stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def _record(output: Tensor, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    stack = _tape_stack()
    if stack:
        stack[-1]._record(output, inputs, backward)
    return output


# ---------------------------------------------------------------------------
# FLOP instrumentation
# ---------------------------------------------------------------------------

class FlopCounter:
    """Counts forward floating-point work: 2 per multiply-add, 1 per bias add."""

    def __init__(self):
        self.total = 0

    def add(self, n: int):
        self.total += int(n)


@contextmanager
def count_flops():
    counter = FlopCounter()
    stack = getattr(_local, "counters", None)
    if stack is None:
        stack = _local.counters = []
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.pop()


def _flops(n: int):
    for counter in getattr(_local, "counters", ()):
        counter.add(n)


# ---------------------------------------------------------------------------
# Ordered matrix product kernel
# ---------------------------------------------------------------------------

def _mm_loop(A, B, C):
    # A (b, m, k), B (1|b, k, n) -> C (b, m, n); sums run over p in index order.
    nb, m, k = A.shape
    n = B.shape[2]
    shared = B.shape[0] == 1
    for b in range(nb):
        bb = 0 if shared else b
        for i in range(m):
            for p in range(k):
                a = A[b, i, p]
                for j in range(n):
                    C[b, i, j] += a * B[bb, p, j]
    return C


if numba is not None:
    _mm_kernel = numba.njit(cache=True)(_mm_loop)
else:  # pragma: no cover
    def _mm_kernel(A, B, C):
        shared = B.shape[0] == 1
        for p in range(A.shape[2]):
            C += A[:, :, p, None] * (B[0, p] if shared else B[:, p, None, :])
        return C


def _bmm(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Raw ordered product for A (..., m, k) and B (k, n) or (..., k, n)."""
    lead = A.shape[:-2]
    m, k = A.shape[-2:]
    if B.ndim == 2:
        A3 = np.ascontiguousarray(A.reshape(1, -1, k))
        B3 = np.ascontiguousarray(B.reshape(1, k, -1))
    else:
        A3 = np.ascontiguousarray(A.reshape(-1, m, k))
        B3 = np.ascontiguousarray(B.reshape(-1, k, B.shape[-1]))
    n = B3.shape[2]
    C = np.zeros((A3.shape[0], A3.shape[1], n))
    _mm_kernel(A3, B3, C)
    return C.reshape(lead + (m, n))


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(A, B) -> Tensor:
    """C[i][j] = sum_p A[i][p] * B[p][j], accumulated left to right.

    ``A`` may carry leading batch axes. ``B`` is either a shared 2-D matrix or
    carries the same leading axes as ``A``.
    """
    A, B = as_tensor(A), as_tensor(B)
    a, b = A.data, B.data
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul batch dimensions differ: {a.shape} x {b.shape}")
    out = Tensor(_check_finite(_bmm(a, b), "matmul"))
    batch = int(np.prod(a.shape[:-2], dtype=np.int64))
    _flops(2 * batch * a.shape[-2] * a.shape[-1] * b.shape[-1])

    def backward(g):
        ga = _bmm(g, _swap(b).copy()) if b.ndim == 2 else _bmm(g, _swap(b))
        if b.ndim == 2:
            k = a.shape[-1]
            gb = _bmm(np.ascontiguousarray(a.reshape(-1, k).T), g.reshape(-1, g.shape[-1]))
        else:
            gb = _bmm(_swap(a), g)
        return ga, gb

    return _record(out, (A, B), backward)


def transpose(x) -> Tensor:
    """Swap the two trailing axes."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError("transpose needs at least 2 axes")
    out = Tensor(_swap(x.data))
    return _record(out, (x,), lambda g: (_swap(g),))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    try:
        out = Tensor(x.data.reshape(shape))
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _record(out, (x,), lambda g: (g.reshape(src),))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(_check_finite(a.data + b.data, "add"))
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    sa, sb = a.shape, b.shape
    return _record(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(_check_finite(a.data - b.data, "sub"))
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    sa, sb = a.shape, b.shape
    return _record(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(_check_finite(a.data * b.data, "mul"))
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    da, db = a.data, b.data
    return _record(
        out, (a, b), lambda g: (_unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape))
    )


def outer_similarity(K, Xw) -> Tensor:
    """Similarity of every key with every window row: ``s = K @ Xw.T``."""
    K, Xw = as_tensor(K), as_tensor(Xw)
    if K.shape[-1] != Xw.shape[-1]:
        raise DimensionError(f"keys have {K.shape[-1]} channels, window has {Xw.shape[-1]}")
    return matmul(K, transpose(Xw))


def affine(x, W, b=None) -> Tensor:
    """``x @ W + b`` broadcast over the leading axes of ``x``."""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise DimensionError(f"affine: input {x.shape} does not match weight {W.shape}")
    lead = x.shape[:-1]
    flat = reshape(x, (-1, W.shape[0])) if x.ndim != 2 else x
    y = matmul(flat, W)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[1],):
            raise DimensionError(f"affine: bias {b.shape} does not match weight {W.shape}")
        y = add(y, b)
        _flops(y.size)
    return reshape(y, lead + (W.shape[1],)) if x.ndim != 2 else y


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))
    return _record(out, (x,), lambda g: (g * mask,))


def leaky_relu(x, slope: float = LEAKY_SLOPE) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, slope * x.data))
    return _record(out, (x,), lambda g: (np.where(mask, g, slope * g),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * y * (1.0 - y),))


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x) -> Tensor:
    """Softmax over the trailing axis."""
    x = as_tensor(x)
    y = _softmax(x.data)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


_ACTIVATIONS = {"relu": relu, "leaky_relu": leaky_relu, "sigmoid": sigmoid, "softmax": softmax}


def activation(x, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(x)


# ---------------------------------------------------------------------------
# Reductions and pooling
# ---------------------------------------------------------------------------

def _argmax_first(a: np.ndarray, axis: int) -> np.ndarray:
    if "row_max_tiebreak" in FAULTS:
        n = a.shape[axis]
        return n - 1 - np.argmax(np.flip(a, axis=axis), axis=axis)
    return np.argmax(a, axis=axis)


def row_max(s, axis: int = -1, keepdims: bool = True) -> tuple[Tensor, np.ndarray]:
    """Max over ``axis`` with the lowest index winning ties.

    Returns the maxima and the argmax indices. The backward pass routes each
    upstream gradient to the argmax position only.
    """
    s = as_tensor(s)
    if s.ndim == 0 or s.shape[axis] == 0:
        raise DimensionError("row_max over an empty axis")
    axis = axis % s.ndim
    idx = _argmax_first(s.data, axis)
    idx_k = np.expand_dims(idx, axis)
    vals = np.take_along_axis(s.data, idx_k, axis=axis)
    out = Tensor(vals if keepdims else np.squeeze(vals, axis=axis))
    shape = s.shape

    def backward(g):
        gs = np.zeros(shape)
        gk = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gs, idx_k, gk, axis=axis)
        return (gs,)

    return _record(out, (s,), backward), idx


def max_pool_time(X, stride: int) -> Tensor:
    """Non-overlapping channelwise max over time; the last window may be short.

    Accepts ``(N, C)`` or ``(B, N, C)``.
    """
    X = as_tensor(X)
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    squeeze = X.ndim == 2
    x = X.data[None] if squeeze else X.data
    if x.ndim != 3 or x.shape[1] == 0:
        raise DimensionError(f"max_pool_time needs a non-empty time axis, got {X.shape}")
    B, N, C = x.shape
    n_out = -(-N // stride)
    padded = np.full((B, n_out * stride, C), -np.inf)
    padded[:, :N] = x
    blocks = padded.reshape(B, n_out, stride, C)
    idx = np.argmax(blocks, axis=2)
    vals = np.take_along_axis(blocks, idx[:, :, None, :], axis=2)[:, :, 0, :]
    out = Tensor(vals[0] if squeeze else vals)

    def backward(g):
        g3 = g[None] if squeeze else g
        gb = np.zeros((B, n_out, stride, C))
        np.put_along_axis(gb, idx[:, :, None, :], g3[:, :, None, :], axis=2)
        gx = gb.reshape(B, n_out * stride, C)[:, :N]
        return (gx[0] if squeeze else gx,)

    return _record(out, (X,), backward)


def mean(x, axis: int, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axis = axis % x.ndim
    n = x.shape[axis]
    if n == 0:
        raise DimensionError("mean over an empty axis")
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims))
    shape = x.shape

    def backward(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk / n, shape).copy(),)

    return _record(out, (x,), backward)


def total(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = Tensor(np.asarray(x.data.sum()))
    return _record(out, (x,), lambda g: (np.full(shape, float(g)),))


def temporal_windows(X, window: int, padding: str = "same") -> Tensor:
    """Gather sliding windows along time: ``(B, N, C) -> (B, N_out, T, C)``.

    ``same`` zero-pads ``T // 2`` before and ``T - 1 - T // 2`` after so that
    ``N_out == N``; ``valid`` uses no padding and ``N_out = N - T + 1``.
    """
    X = as_tensor(X)
    if window < 1:
        raise DimensionError(f"window must be >= 1, got {window}")
    if X.ndim != 3:
        raise DimensionError(f"temporal_windows expects (B, N, C), got {X.shape}")
    B, N, C = X.shape
    if padding == "same":
        left, right = window // 2, window - 1 - window // 2
    elif padding == "valid":
        if window > N:
            raise DimensionError(f"valid window {window} exceeds sequence length {N}")
        left = right = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    padded = np.zeros((B, N + left + right, C))
    padded[:, left:left + N] = X.data
    n_out = N + left + right - window + 1
    idx = np.arange(n_out)[:, None] + np.arange(window)[None, :]
    out = Tensor(padded[:, idx, :])

    def backward(g):
        gp = np.zeros_like(padded)
        for t in range(window):
            gp[:, t:t + n_out] += g[:, :, t]
        return (gp[:, left:left + N],)

    return _record(out, (X,), backward)


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------

@dataclass
class BatchNormState:
    """Learnable scale/shift plus running statistics for one batch-norm site."""

    channels: int
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPSILON
    gamma: Tensor = field(default=None)
    beta: Tensor = field(default=None)
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None

    def __post_init__(self):
        if self.gamma is None:
            self.gamma = Tensor(np.ones(self.channels), requires_grad=True)
        if self.beta is None:
            self.beta = Tensor(np.zeros(self.channels), requires_grad=True)

    @property
    def initialized(self) -> bool:
        return self.running_mean is not None


def batch_norm(X, state: BatchNormState, mode: str = "train") -> Tensor:
    """Per-channel normalization pooled over every axis but the last.

    In train mode the batch statistics are used and the running statistics
    are updated (the very first update copies the batch statistics).
    """
    X = as_tensor(X)
    C = state.channels
    if X.shape[-1] != C:
        raise DimensionError(f"batch_norm expects {C} channels, got {X.shape}")
    x = X.data
    gamma, beta = state.gamma, state.beta
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        mu = x.mean(axis=axes)
        var = ((x - mu) ** 2).mean(axis=axes)
        if state.running_mean is None:
            state.running_mean, state.running_var = mu.copy(), var.copy()
        else:
            m = state.momentum
            state.running_mean = m * state.running_mean + (1 - m) * mu
            state.running_var = m * state.running_var + (1 - m) * var
    elif mode == "eval":
        if not state.initialized:
            raise UninitializedStatisticsError("batch_norm eval mode before any train step")
        mu, var = state.running_mean, state.running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mu) * inv
    out = Tensor(_check_finite(gamma.data * xhat + beta.data, "batch_norm"))
    count = x.size // C
    g_data = gamma.data

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        dxhat = g * g_data
        if mode == "train":
            gx = inv / count * (count * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        else:
            gx = dxhat * inv
        return gx, ggamma, gbeta

    return _record(out, (X, gamma, beta), backward)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def softmax_cross_entropy(logits, labels) -> Tensor:
    """Per-sample ``-log softmax(logits)[label]``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data
    shift = z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z - shift).sum(axis=-1)) + shift[:, 0]
    rows = np.arange(z.shape[0])
    out = Tensor(_check_finite(lse - z[rows, labels], "softmax_cross_entropy"))

    def backward(g):
        p = _softmax(z)
        p[rows, labels] -= 1.0
        return (p * g[:, None],)

    return _record(out, (logits,), backward)


def sigmoid_cross_entropy(logits, targets) -> Tensor:
    """Elementwise binary cross-entropy on logits, numerically stable."""
    logits = as_tensor(logits)
    z = logits.data
    y = np.asarray(targets, dtype=np.float64)
    out = Tensor(_check_finite(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z))), "sigmoid_cross_entropy"))
    return _record(out, (logits,), lambda g: ((_sigmoid(z) - y) * g,))


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tol: float

    @property
    def failures(self) -> list[str]:
        return [name for name, err in self.errors.items() if not err <= self.tol]

    @property
    def passed(self) -> bool:
        return not self.failures

    def __str__(self):
        lines = [f"{'FAIL' if e > self.tol else 'ok  '} {name}: max rel err {e:.3e}"
                 for name, e in self.errors.items()]
        return "\n".join(lines)


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    analytic: Mapping[str, np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``f`` against central differences.

    ``f`` takes no arguments and reads ``params``, which are perturbed in
    place. The error per element is ``|a - n| / max(1, |n|)``; the report
    keeps the worst element per parameter. ``analytic`` overrides the tape
    gradients (used to test the checker itself).
    """
    names = list(params)
    if analytic is None:
        with GradTape() as tape:
            out = f()
        grads = dict(zip(names, tape.gradient(out, [params[n] for n in names])))
    else:
        grads = {n: np.asarray(analytic[n], dtype=np.float64) for n in names}
    errors = {}
    for name in names:
        p = params[name].data
        numeric = np.zeros_like(p)
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            numeric.reshape(-1)[i] = (fp - fm) / (2 * h)
        err = np.abs(grads[name] - numeric) / np.maximum(1.0, np.abs(numeric))
        errors[name] = float(err.max()) if err.size else 0.0
    return GradCheckReport(errors, tol)
