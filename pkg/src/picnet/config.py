"""Run configuration with canonical JSON serialization."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .exceptions import ConfigError
from .layers import VARIANTS

TASKS = ("single_label", "multi_label")
OPTIMIZERS = ("sgd", "adam")
LAYOUTS = ("disjoint", "shared")

DEFAULT_LR = {"sgd": 0.1, "adam": 0.01}


@dataclass(frozen=True)
class DataConfig:
    """Synthetic dataset parameters."""

    seed: int = 0
    num_classes: int = 10
    segments_per_class: int = 4
    actions_per_segment: int = 3
    num_actions: int | None = None   # defaults to the exact disjoint fill
    length: int = 64
    noise_sigma: float = 0.5
    repeat_max: int = 2
    n_train: int = 200
    n_test: int = 100
    layout: str = "disjoint"
    segment_pool: int | None = None  # shared layout only

    @property
    def vocabulary(self) -> int:
        if self.num_actions is not None:
            return self.num_actions
        segments = self.pool_size if self.layout == "shared" else self.num_classes * self.segments_per_class
        return segments * self.actions_per_segment

    @property
    def pool_size(self) -> int:
        return self.segment_pool if self.segment_pool is not None else self.segments_per_class + 2


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    variant: str = "pic"
    depth: int = 4
    window: int = 9
    stride: int = 2
    num_keys: int = 32
    num_values: int = 32
    channels: int = 64
    reduction: int = 4
    head_width: int | None = None
    task: str = "single_label"
    data: DataConfig = field(default_factory=DataConfig)
    optimizer: str = "sgd"
    learning_rate: float | None = None
    momentum: float = 0.9
    weight_decay: float = 1e-5
    adam_epsilon: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    clip_norm: float | None = None
    epochs: int = 100
    batch_size: int = 32
    perm_seeds: int = 10
    output_dir: str | None = None

    # -- derived -----------------------------------------------------------
    @property
    def lr(self) -> float:
        return DEFAULT_LR[self.optimizer] if self.learning_rate is None else self.learning_rate

    @property
    def hidden(self) -> int:
        return self.channels if self.head_width is None else self.head_width

    @property
    def num_outputs(self) -> int:
        return self.data.num_classes if self.task == "single_label" else self.data.vocabulary

    def replace(self, **changes) -> "RunConfig":
        data_changes = changes.pop("data", None)
        cfg = replace(self, **changes)
        if isinstance(data_changes, dict):
            cfg = replace(cfg, data=replace(cfg.data, **data_changes))
        elif data_changes is not None:
            cfg = replace(cfg, data=data_changes)
        return cfg

    def validate(self) -> "RunConfig":
        errors = []
        if self.variant not in VARIANTS:
            errors.append(f"variant must be one of {VARIANTS}")
        if self.task not in TASKS:
            errors.append(f"task must be one of {TASKS}")
        if self.optimizer not in OPTIMIZERS:
            errors.append(f"optimizer must be one of {OPTIMIZERS}")
        if self.depth < 0:
            errors.append("depth must be >= 0")
        for name in ("window", "stride", "num_keys", "num_values", "channels", "reduction", "batch_size"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        if self.channels % self.reduction:
            errors.append("channels must be divisible by reduction")
        if self.head_width is not None and self.head_width < 1:
            errors.append("head_width must be >= 1")
        if self.epochs < 0:
            errors.append("epochs must be >= 0")
        if self.perm_seeds < 1:
            errors.append("perm_seeds must be >= 1")
        d = self.data
        if d.layout not in LAYOUTS:
            errors.append(f"data.layout must be one of {LAYOUTS}")
        if d.length < 1:
            errors.append("data.length must be >= 1")
        if d.num_classes < 1 or d.segments_per_class < 1 or d.actions_per_segment < 1:
            errors.append("data class structure sizes must be >= 1")
        if d.repeat_max < 1:
            errors.append("data.repeat_max must be >= 1")
        if d.noise_sigma < 0:
            errors.append("data.noise_sigma must be >= 0")
        if d.n_train < 0 or d.n_test < 0:
            errors.append("data sample counts must be >= 0")
        if errors:
            raise ConfigError("; ".join(errors))
        return self

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = dict(raw)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = raw.pop("data", None) or {}
        data_known = {f.name for f in fields(DataConfig)}
        bad = set(data) - data_known
        if bad:
            raise ConfigError(f"unknown data config keys: {sorted(bad)}")
        try:
            return cls(data=DataConfig(**data), **raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_diff(a: dict, b: dict, prefix: str = "") -> dict:
    """Keys whose values differ, as ``{dotted.key: (a_value, b_value)}``."""
    out = {}
    for key in sorted(set(a) | set(b)):
        va, vb = a.get(key), b.get(key)
        name = f"{prefix}{key}"
        if isinstance(va, dict) and isinstance(vb, dict):
            out.update(config_diff(va, vb, name + "."))
        elif va != vb:
            out[name] = (va, vb)
    return out
