"""Permutation invariant convolution, its ablation variants, and a plain
temporal convolution baseline.

Each variant has a single-window reference op (``*_window``) and a batched
layer form wrapped in a residual bottleneck::

    out = skip(X) + h_psi(op(g_phi(X)))

The batched forms reproduce the window ops bitwise at every position.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .exceptions import ConfigError, DimensionError
from .numerics import (
    Tensor,
    add,
    affine,
    as_tensor,
    matmul,
    mean,
    outer_similarity,
    relu,
    reshape,
    row_max,
    temporal_windows,
    transpose,
)

VARIANTS = ("pic", "pic_ordered", "pic_global", "pic_inferred", "temporal_conv")


@dataclass
class Dense:
    weight: Tensor
    bias: Tensor | None = None

    def __call__(self, x) -> Tensor:
        return affine(x, self.weight, self.bias)

    @property
    def shape(self):
        return self.weight.shape


def _uniform(rng, shape, fan_in) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _dense(rng, n_in, n_out, zero=False, bias=True) -> Dense:
    w = Tensor(np.zeros((n_in, n_out)), requires_grad=True) if zero else _uniform(rng, (n_in, n_out), n_in)
    b = Tensor(np.zeros(n_out), requires_grad=True) if bias else None
    return Dense(w, b)


class _Params:
    """Mixin giving dataclass parameter containers a flat name -> Tensor view."""

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Tensor):
                out[f.name] = value
            elif isinstance(value, Dense):
                out[f"{f.name}.weight"] = value.weight
                if value.bias is not None:
                    out[f"{f.name}.bias"] = value.bias
        return out

    @property
    def channels(self) -> int:
        return self.g_phi.shape[0]

    @property
    def reduced(self) -> int:
        return self.g_phi.shape[1]


def _bottleneck(rng, channels, reduction):
    if channels % reduction:
        raise ConfigError(f"channels {channels} not divisible by reduction {reduction}")
    reduced = channels // reduction
    return _dense(rng, channels, reduced), _dense(rng, reduced, channels, zero=True), reduced


@dataclass
class PicParams(_Params):
    keys: Tensor        # (M, C')
    values: Tensor      # (M', C')
    f_theta: Dense      # (M, M')
    g_phi: Dense        # (C, C')
    h_psi: Dense        # (C', C)
    window: int

    @property
    def num_keys(self):
        return self.keys.shape[0]

    @property
    def num_values(self):
        return self.values.shape[0]

    @classmethod
    def init(cls, rng, channels, num_keys, num_values, window, reduction=4):
        g_phi, h_psi, reduced = _bottleneck(rng, channels, reduction)
        keys = _uniform(rng, (num_keys, reduced), reduced)
        values = _uniform(rng, (num_values, reduced), num_values)
        f_theta = _dense(rng, num_keys, num_values)
        return cls(keys, values, f_theta, g_phi, h_psi, window)


@dataclass
class OrderedParams(_Params):
    keys: Tensor        # (M, T, C'), one kernel slice per window position
    values: Tensor      # (M, C')
    g_phi: Dense
    h_psi: Dense
    window: int

    @classmethod
    def init(cls, rng, channels, num_keys, window, reduction=4):
        g_phi, h_psi, reduced = _bottleneck(rng, channels, reduction)
        keys = _uniform(rng, (num_keys, window, reduced), window * reduced)
        values = _uniform(rng, (num_keys, reduced), num_keys)
        return cls(keys, values, g_phi, h_psi, window)


@dataclass
class InferredParams(_Params):
    g_gamma: Dense      # (C', C') -> per-window keys
    g_lambda: Dense     # (C', C') -> per-window values
    f_theta: Dense      # (T, T)
    g_phi: Dense
    h_psi: Dense
    window: int

    @classmethod
    def init(cls, rng, channels, window, reduction=4):
        g_phi, h_psi, reduced = _bottleneck(rng, channels, reduction)
        g_gamma = _dense(rng, reduced, reduced)
        g_lambda = _dense(rng, reduced, reduced)
        f_theta = _dense(rng, window, window)
        return cls(g_gamma, g_lambda, f_theta, g_phi, h_psi, window)


@dataclass
class ConvParams(_Params):
    weight: Tensor      # (T, C_in, C_out): w_i for every output channel
    bias: Tensor        # (C_out,)
    g_phi: Dense | None = None
    h_psi: Dense | None = None
    window: int = 0

    def __post_init__(self):
        if not self.window:
            self.window = self.weight.shape[0]

    @classmethod
    def init(cls, rng, channels, window, reduction=4):
        g_phi, h_psi, reduced = _bottleneck(rng, channels, reduction)
        weight = _uniform(rng, (window, reduced, reduced), window * reduced)
        bias = Tensor(np.zeros(reduced), requires_grad=True)
        return cls(weight, bias, g_phi, h_psi, window)


def init_layer(variant: str, rng, channels, num_keys, num_values, window, reduction=4):
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    if variant in ("pic", "pic_global"):
        return PicParams.init(rng, channels, num_keys, num_values, window, reduction)
    if variant == "pic_ordered":
        return OrderedParams.init(rng, channels, num_keys, window, reduction)
    if variant == "pic_inferred":
        return InferredParams.init(rng, channels, window, reduction)
    if variant == "temporal_conv":
        return ConvParams.init(rng, channels, window, reduction)
    raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


# ---------------------------------------------------------------------------
# Single-window operations
# ---------------------------------------------------------------------------

def _check_window(Xw: Tensor, channels: int, window: int | None = None):
    if Xw.ndim != 2 or Xw.shape[1] != channels:
        raise DimensionError(f"window must be (T, {channels}), got {Xw.shape}")
    if window is not None and Xw.shape[0] != window:
        raise DimensionError(f"window length {Xw.shape[0]} != {window}")


def pic_window(Xw, p: PicParams) -> Tensor:
    """PIC on one window ``(T, C')``: similarity, row max, dense remap, ReLU,
    weighted sum of value vectors. Returns ``(C',)``."""
    Xw = as_tensor(Xw)
    _check_window(Xw, p.keys.shape[1])
    s = outer_similarity(p.keys, Xw)
    s_max, _ = row_max(s)
    alpha = relu(p.f_theta(reshape(s_max, (1, -1))))
    return reshape(matmul(alpha, p.values), (-1,))


def pic_ordered_window(Xw, p: OrderedParams) -> Tensor:
    """Order-sensitive ablation: ``alpha[m] = sum_t <K[m, t], x_t>``."""
    Xw = as_tensor(Xw)
    M, T, Cr = p.keys.shape
    _check_window(Xw, Cr, T)
    alpha = matmul(reshape(Xw, (1, T * Cr)), transpose(reshape(p.keys, (M, T * Cr))))
    return reshape(matmul(relu(alpha), p.values), (-1,))


def pic_inferred_window(Xw, p: InferredParams) -> Tensor:
    """Keys and values are inferred from the window itself (M = M' = T)."""
    Xw = as_tensor(Xw)
    T = p.f_theta.shape[0]
    _check_window(Xw, p.g_gamma.shape[0], T)
    K = p.g_gamma(Xw)
    V = p.g_lambda(Xw)
    s_max, _ = row_max(outer_similarity(K, Xw))
    alpha = relu(p.f_theta(reshape(s_max, (1, -1))))
    return reshape(matmul(alpha, V), (-1,))


def temporal_conv_window(Xw, p: ConvParams) -> Tensor:
    """``y_o = sum_i <w_i[:, o], x_i> + b_o`` for each output channel ``o``."""
    Xw = as_tensor(Xw)
    T, Cin, Cout = p.weight.shape
    _check_window(Xw, Cin, T)
    flat = reshape(Xw, (1, T * Cin))
    return reshape(affine(flat, reshape(p.weight, (T * Cin, Cout)), p.bias), (-1,))


# ---------------------------------------------------------------------------
# Batched cores over (B, N, C')
# ---------------------------------------------------------------------------

def _pic_core(Z: Tensor, p: PicParams, window: int, padding: str) -> Tensor:
    # Similarity of a timestep with a key does not depend on the window, so it
    # is computed once per timestep and then gathered.
    S = matmul(Z, transpose(p.keys))
    Sw = temporal_windows(S, window, padding)          # (B, n, T, M)
    s_max, _ = row_max(Sw, axis=-2, keepdims=False)    # (B, n, M)
    alpha = relu(p.f_theta(s_max))
    return matmul(alpha, p.values)


def _ordered_core(Z: Tensor, p: OrderedParams, padding: str) -> Tensor:
    M, T, Cr = p.keys.shape
    W = temporal_windows(Z, T, padding)
    B, n = W.shape[:2]
    alpha = matmul(reshape(W, (B, n, T * Cr)), transpose(reshape(p.keys, (M, T * Cr))))
    return matmul(relu(alpha), p.values)


def _inferred_core(Z: Tensor, p: InferredParams, padding: str) -> Tensor:
    T = p.f_theta.shape[0]
    W = temporal_windows(Z, T, padding)                # (B, n, T, C')
    B, n, _, Cr = W.shape
    K = p.g_gamma(W)
    V = p.g_lambda(W)
    s_max, _ = row_max(matmul(K, transpose(W)), axis=-1, keepdims=False)
    alpha = relu(p.f_theta(s_max))                     # (B, n, T)
    y = matmul(reshape(alpha, (B, n, 1, T)), V)
    return reshape(y, (B, n, Cr))


def _conv_core(Z: Tensor, p: ConvParams, padding: str) -> Tensor:
    T, Cin, Cout = p.weight.shape
    W = temporal_windows(Z, T, padding)
    B, n = W.shape[:2]
    return affine(reshape(W, (B, n, T * Cin)), reshape(p.weight, (T * Cin, Cout)), p.bias)


def _check_input(X: Tensor, channels: int):
    if X.ndim != 3 or X.shape[2] != channels:
        raise DimensionError(f"layer expects (B, N, {channels}), got {X.shape}")
    if X.shape[1] < 1:
        raise DimensionError("layer needs N >= 1")


def _residual(X: Tensor, branch: Tensor, window: int, padding: str) -> Tensor:
    if padding == "same":
        return add(X, branch)
    # Without padding each output summarizes a whole window, so the skip path
    # uses the window mean, which keeps the block order-blind within it.
    return add(mean(temporal_windows(X, window, "valid"), axis=-2), branch)


def pic_layer_forward(X, p: PicParams, padding: str = "same", window: int | None = None) -> Tensor:
    """Residual PIC layer on ``(B, N, C)``; ``same`` keeps the length ``N``."""
    X = as_tensor(X)
    _check_input(X, p.channels)
    T = p.window if window is None else window
    if T < 1:
        raise ConfigError(f"window must be >= 1, got {T}")
    Z = p.g_phi(X)
    return _residual(X, p.h_psi(_pic_core(Z, p, T, padding)), T, padding)


def pic_global_forward(X, p: PicParams) -> Tensor:
    """One window spanning the whole sequence: ``(B, N, C) -> (B, 1, C)``."""
    X = as_tensor(X)
    return pic_layer_forward(X, p, padding="valid", window=X.shape[1])


def pic_ordered_forward(X, p: OrderedParams, padding: str = "same") -> Tensor:
    X = as_tensor(X)
    _check_input(X, p.channels)
    return _residual(X, p.h_psi(_ordered_core(p.g_phi(X), p, padding)), p.window, padding)


def pic_inferred_forward(X, p: InferredParams, padding: str = "same") -> Tensor:
    X = as_tensor(X)
    _check_input(X, p.channels)
    return _residual(X, p.h_psi(_inferred_core(p.g_phi(X), p, padding)), p.window, padding)


def temporal_conv_forward(X, p: ConvParams, padding: str = "same") -> Tensor:
    X = as_tensor(X)
    _check_input(X, p.channels)
    return _residual(X, p.h_psi(_conv_core(p.g_phi(X), p, padding)), p.window, padding)


def layer_forward(variant: str, X, params, padding: str = "same") -> Tensor:
    if variant == "pic":
        return pic_layer_forward(X, params, padding)
    if variant == "pic_global":
        return pic_global_forward(X, params)
    if variant == "pic_ordered":
        return pic_ordered_forward(X, params, padding)
    if variant == "pic_inferred":
        return pic_inferred_forward(X, params, padding)
    if variant == "temporal_conv":
        return temporal_conv_forward(X, params, padding)
    raise ConfigError(f"unknown variant {variant!r}")


# ---------------------------------------------------------------------------
# Closed-form counts
# ---------------------------------------------------------------------------

def layer_param_count(variant, channels, num_keys, num_values, window, reduction=4) -> int:
    C = channels
    Cr = C // reduction
    M, Mv, T = num_keys, num_values, window
    bottleneck = C * Cr + Cr + Cr * C + C
    if variant in ("pic", "pic_global"):
        return bottleneck + M * Cr + Mv * Cr + M * Mv + Mv
    if variant == "pic_ordered":
        return bottleneck + M * T * Cr + M * Cr
    if variant == "pic_inferred":
        return bottleneck + 2 * (Cr * Cr + Cr) + T * T + T
    if variant == "temporal_conv":
        return bottleneck + T * Cr * Cr + Cr
    raise ConfigError(f"unknown variant {variant!r}")


def layer_flops(variant, length, channels, num_keys, num_values, window, reduction=4) -> int:
    """Forward FLOPs of one layer on one sequence of ``length`` timesteps.

    Multiply-adds count 2, bias adds 1; the residual add, pooling and
    nonlinearities are not counted.
    """
    n, C = length, channels
    Cr = C // reduction
    M, Mv, T = num_keys, num_values, window
    if variant == "pic_global":
        W, T = 1, n
    else:
        W = n
    reduce_ = 2 * n * C * Cr + n * Cr
    recover = 2 * W * Cr * C + W * C
    if variant in ("pic", "pic_global"):
        core = 2 * n * Cr * M + 2 * W * M * Mv + W * Mv + 2 * W * Mv * Cr
    elif variant == "pic_ordered":
        core = 2 * W * T * Cr * M + 2 * W * M * Cr
    elif variant == "pic_inferred":
        core = 2 * (2 * W * T * Cr * Cr + W * T * Cr) + 2 * W * T * T * Cr + 2 * W * T * T + W * T + 2 * W * T * Cr
    elif variant == "temporal_conv":
        core = 2 * W * T * Cr * Cr + W * Cr
    else:
        raise ConfigError(f"unknown variant {variant!r}")
    return reduce_ + core + recover


def count_parameters(params) -> int:
    """Reflective count: total size of every tensor a container exposes."""
    return sum(t.size for t in params.named_parameters().values())
