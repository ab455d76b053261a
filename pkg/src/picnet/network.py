"""Cascade of temporal layers with a two-layer MLP classifier head.

Each block is ``layer -> BatchNorm -> LeakyReLU -> MaxPool(stride)``. After
the cascade the remaining time axis is average pooled and fed to
``Dense -> BatchNorm -> ReLU -> Dense``, which returns raw logits.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .container import read_file, write_file
from .exceptions import CompatibilityError, ConfigError, DimensionError, FormatError, ValidationError
from .layers import Dense, _dense, init_layer, layer_flops, layer_forward, layer_param_count
from .numerics import (
    BatchNormState,
    Tensor,
    as_tensor,
    batch_norm,
    leaky_relu,
    max_pool_time,
    mean,
    relu,
    sigmoid_cross_entropy,
    softmax_cross_entropy,
)

MODEL_MAGIC = b"PICM"


@dataclass
class Block:
    variant: str
    params: object
    bn: BatchNormState
    stride: int


@dataclass
class Head:
    fc1: Dense
    bn: BatchNormState
    fc2: Dense


@dataclass
class CascadeModel:
    config: RunConfig
    blocks: list[Block]
    head: Head

    @property
    def task(self) -> str:
        return self.config.task

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, block in enumerate(self.blocks):
            for name, t in block.params.named_parameters().items():
                out[f"blocks.{i}.{name}"] = t
            out[f"blocks.{i}.bn.gamma"] = block.bn.gamma
            out[f"blocks.{i}.bn.beta"] = block.bn.beta
        out["head.fc1.weight"] = self.head.fc1.weight
        out["head.fc1.bias"] = self.head.fc1.bias
        out["head.bn.gamma"] = self.head.bn.gamma
        out["head.bn.beta"] = self.head.bn.beta
        out["head.fc2.weight"] = self.head.fc2.weight
        out["head.fc2.bias"] = self.head.fc2.bias
        return out

    def batch_norms(self) -> dict[str, BatchNormState]:
        out = {f"blocks.{i}.bn": b.bn for i, b in enumerate(self.blocks)}
        out["head.bn"] = self.head.bn
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters plus any populated running statistics, by name."""
        arrays = {name: t.data for name, t in self.named_parameters().items()}
        for name, bn in self.batch_norms().items():
            if bn.initialized:
                arrays[f"{name}.running_mean"] = bn.running_mean
                arrays[f"{name}.running_var"] = bn.running_var
        return arrays

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        params = self.named_parameters()
        for name, t in params.items():
            if name not in arrays:
                raise FormatError(f"missing parameter {name}")
            if arrays[name].shape != t.shape:
                raise CompatibilityError(
                    f"parameter {name} has shape {arrays[name].shape}, config implies {t.shape}")
            t.data = np.array(arrays[name], dtype=np.float64)
        for name, bn in self.batch_norms().items():
            rm = arrays.get(f"{name}.running_mean")
            rv = arrays.get(f"{name}.running_var")
            if rm is None:
                bn.running_mean = bn.running_var = None
                continue
            if rm.shape != (bn.channels,) or rv is None or rv.shape != (bn.channels,):
                raise CompatibilityError(f"running statistics of {name} do not match {bn.channels} channels")
            bn.running_mean, bn.running_var = np.array(rm), np.array(rv)
        extra = set(arrays) - set(params) - {
            f"{n}.{s}" for n in self.batch_norms() for s in ("running_mean", "running_var")}
        if extra:
            raise CompatibilityError(f"unexpected arrays {sorted(extra)}")

    def copy(self) -> "CascadeModel":
        return copy.deepcopy(self)


def temporal_lengths(cfg: RunConfig, length: int | None = None) -> list[int]:
    """Sequence length after each block."""
    n = cfg.data.length if length is None else length
    out = []
    for _ in range(cfg.depth):
        if cfg.variant == "pic_global":
            n = 1
        n = -(-n // cfg.stride)
        out.append(n)
    return out


def build_cascade(cfg: RunConfig) -> CascadeModel:
    cfg.validate()
    if cfg.data.length < 1:
        raise ConfigError("sequence length must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    C = cfg.channels
    blocks = []
    for _ in range(cfg.depth):
        params = init_layer(cfg.variant, rng, C, cfg.num_keys, cfg.num_values, cfg.window, cfg.reduction)
        blocks.append(Block(cfg.variant, params, BatchNormState(C), cfg.stride))
    H = cfg.hidden
    head = Head(_dense(rng, C, H), BatchNormState(H), _dense(rng, H, cfg.num_outputs))
    return CascadeModel(cfg, blocks, head)


def run_block(block: Block, X, mode: str) -> Tensor:
    h = layer_forward(block.variant, X, block.params)
    h = leaky_relu(batch_norm(h, block.bn, mode))
    return max_pool_time(h, block.stride)


def forward_blocks(model: CascadeModel, X, mode: str = "eval", upto: int | None = None) -> Tensor:
    """Output of the first ``upto`` blocks (all blocks when ``None``)."""
    X = as_tensor(X)
    if X.ndim != 3 or X.shape[2] != model.config.channels:
        raise DimensionError(f"model expects (B, N, {model.config.channels}), got {X.shape}")
    if X.shape[1] < 1:
        raise DimensionError("model needs N >= 1")
    h = X
    for block in model.blocks[:upto]:
        h = run_block(block, h, mode)
    return h


def head_forward(model: CascadeModel, pooled, mode: str) -> Tensor:
    h = model.head.fc1(pooled)
    h = relu(batch_norm(h, model.head.bn, mode))
    return model.head.fc2(h)


def forward(model: CascadeModel, X, mode: str = "eval") -> Tensor:
    """Raw logits ``(B, classes)``."""
    h = forward_blocks(model, X, mode)
    return head_forward(model, mean(h, axis=1), mode)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

@dataclass
class LossValue:
    value: Tensor                 # scalar, on the active tape if any
    per_sample: np.ndarray = field(repr=False)

    def __float__(self):
        return float(self.value.data)


def check_labels(labels, task: str, num_outputs: int) -> np.ndarray:
    labels = np.asarray(labels)
    if task == "single_label":
        if labels.ndim != 1 or not np.all(np.equal(np.mod(labels, 1), 0)):
            raise ValidationError("single-label targets must be a 1-D array of class ids")
        labels = labels.astype(np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= num_outputs):
            raise ValidationError(f"class id out of range [0, {num_outputs})")
        return labels
    if task == "multi_label":
        if labels.ndim != 2 or labels.shape[1] != num_outputs:
            raise ValidationError(f"multi-label targets must be (B, {num_outputs})")
        if not np.isin(labels, (0, 1)).all():
            raise ValidationError("multi-label targets must be 0/1")
        return labels.astype(np.float64)
    raise ValidationError(f"unknown task {task!r}")


def loss(logits, labels, task: str) -> LossValue:
    """Mean softmax cross-entropy (single-label) or mean per-class sigmoid
    binary cross-entropy (multi-label)."""
    logits = as_tensor(logits)
    labels = check_labels(labels, task, logits.shape[1])
    if task == "single_label":
        per = softmax_cross_entropy(logits, labels)
        return LossValue(mean(per, axis=0), per.data.copy())
    elem = sigmoid_cross_entropy(logits, labels)
    per_sample = elem.data.mean(axis=1)
    return LossValue(mean(mean(elem, axis=1), axis=0), per_sample)


# ---------------------------------------------------------------------------
# Closed-form model counts
# ---------------------------------------------------------------------------

def model_param_count(cfg: RunConfig) -> int:
    C, H, K = cfg.channels, cfg.hidden, cfg.num_outputs
    per_block = layer_param_count(cfg.variant, C, cfg.num_keys, cfg.num_values, cfg.window, cfg.reduction) + 2 * C
    head = C * H + H + 2 * H + H * K + K
    return cfg.depth * per_block + head


def model_flops(cfg: RunConfig, length: int | None = None) -> int:
    """Forward FLOPs for one sequence (see :func:`picnet.layers.layer_flops`)."""
    n = cfg.data.length if length is None else length
    C, H, K = cfg.channels, cfg.hidden, cfg.num_outputs
    total = 0
    for n_out in temporal_lengths(cfg, n):
        total += layer_flops(cfg.variant, n, C, cfg.num_keys, cfg.num_values, cfg.window, cfg.reduction)
        n = n_out
    return total + 2 * C * H + H + 2 * H * K + K


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def model_bytes_header(model: CascadeModel) -> dict:
    return {"kind": "model", "config": model.config.to_dict()}


def save_model(path, model: CascadeModel) -> bytes:
    return write_file(path, MODEL_MAGIC, model_bytes_header(model), model.state_arrays())


def load_model(path) -> CascadeModel:
    header, arrays = read_file(path, MODEL_MAGIC)
    if header.get("kind") != "model":
        raise FormatError("container is not a model")
    cfg = RunConfig.from_dict(header["config"])
    model = build_cascade(cfg)
    model.load_state_arrays(arrays)
    return model
