"""SGD with momentum, Adam, and the mini-batch training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .container import read_file, write_file
from .exceptions import FormatError, NonFiniteError, TrainingDiverged
from .network import CascadeModel, forward, loss
from .numerics import GradTape

logger = logging.getLogger(__name__)

OPT_MAGIC = b"PICO"


def decays(name: str) -> bool:
    """Weight decay applies to weights and kernels, never to biases or
    batch-norm scale/shift."""
    return not (name.endswith(".bias") or ".bn." in name or name.startswith("bn."))


@dataclass
class OptState:
    kind: str
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    eps: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    step: int = 0
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_config(cls, cfg: RunConfig, params) -> "OptState":
        state = cls(cfg.optimizer, cfg.lr, cfg.momentum, cfg.weight_decay,
                    cfg.adam_epsilon, cfg.adam_beta1, cfg.adam_beta2)
        state.init_buffers(params)
        return state

    def init_buffers(self, params):
        for name, p in params.items():
            if self.kind == "sgd":
                self.buffers[f"{name}.v"] = np.zeros_like(p.data)
            else:
                self.buffers[f"{name}.m"] = np.zeros_like(p.data)
                self.buffers[f"{name}.s"] = np.zeros_like(p.data)

    def hyper(self) -> dict:
        return {"kind": self.kind, "lr": self.lr, "momentum": self.momentum, "weight_decay": self.weight_decay,
                "eps": self.eps, "beta1": self.beta1, "beta2": self.beta2, "step": self.step}


def _checked(params, grads):
    for name in params:
        g = grads[name]
        if g.shape != params[name].shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {name}")


def sgd_step(params, grads, state: OptState):
    """``v <- momentum * v + (g + wd * p)``; ``p <- p - lr * v``."""
    _checked(params, grads)
    state.step += 1
    for name, p in params.items():
        g = grads[name]
        if state.weight_decay and decays(name):
            g = g + state.weight_decay * p.data
        v = state.buffers.setdefault(f"{name}.v", np.zeros_like(p.data))
        v *= state.momentum
        v += g
        p.data = p.data - state.lr * v
    return params


def adam_step(params, grads, state: OptState):
    _checked(params, grads)
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if state.weight_decay and decays(name):
            g = g + state.weight_decay * p.data
        m = state.buffers.setdefault(f"{name}.m", np.zeros_like(p.data))
        s = state.buffers.setdefault(f"{name}.s", np.zeros_like(p.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        s *= state.beta2
        s += (1.0 - state.beta2) * g * g
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(s / c2) + state.eps)
    return params


def optimizer_step(params, grads, state: OptState):
    return sgd_step(params, grads, state) if state.kind == "sgd" else adam_step(params, grads, state)


def clip_by_global_norm(grads: dict, max_norm: float) -> dict:
    norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm <= max_norm or norm == 0:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def save_opt_state(path, state: OptState):
    write_file(path, OPT_MAGIC, {"kind": "optimizer", "hyper": state.hyper()}, state.buffers)


def load_opt_state(path) -> OptState:
    header, arrays = read_file(path, OPT_MAGIC)
    if header.get("kind") != "optimizer":
        raise FormatError("container is not an optimizer state")
    h = header["hyper"]
    return OptState(h["kind"], h["lr"], h["momentum"], h["weight_decay"], h["eps"], h["beta1"], h["beta2"],
                    h["step"], {k: np.array(v) for k, v in arrays.items()})


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: CascadeModel
    history: list[dict]
    best_state: dict[str, np.ndarray]
    best_metric: float
    opt_state: OptState


def evaluate_metric(model: CascadeModel, X, y) -> float:
    from .evaluation import score_logits

    return score_logits(forward(model, X, "eval").data, y, model.task)


def train(model: CascadeModel, X, y, cfg: RunConfig | None = None, X_eval=None, y_eval=None) -> TrainResult:
    """Mini-batch training with seeded shuffling.

    History holds per-epoch mean train loss and the metric on the evaluation
    split (the training data when none is given). A non-finite loss or
    gradient raises :class:`TrainingDiverged` carrying the last good state.
    """
    cfg = model.config if cfg is None else cfg
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if len(X) == 0:
        raise ValueError("cannot train on an empty dataset")
    if X_eval is None:
        X_eval, y_eval = X, y
    params = model.named_parameters()
    state = OptState.for_config(cfg, params)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    history = []
    best_state, best_metric = model.state_arrays(), -np.inf
    last_good = model.state_arrays()
    n, bs = len(X), cfg.batch_size
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        weighted, seen = 0.0, 0
        try:
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                with GradTape() as tape:
                    lv = loss(forward(model, X[idx], "train"), y[idx], cfg.task)
                if not np.isfinite(float(lv)):
                    raise NonFiniteError("loss is not finite")
                grads = dict(zip(params, tape.gradient(lv.value, params.values())))
                if cfg.clip_norm:
                    grads = clip_by_global_norm(grads, cfg.clip_norm)
                optimizer_step(params, grads, state)
                weighted += float(lv) * len(idx)
                seen += len(idx)
            metric = evaluate_metric(model, X_eval, y_eval)
        except NonFiniteError as exc:
            snapshot = model.copy()
            snapshot.load_state_arrays(last_good)
            raise TrainingDiverged(f"training diverged in epoch {epoch}: {exc}", snapshot, history) from exc
        last_good = model.state_arrays()
        row = {"epoch": epoch, "loss": weighted / seen, "metric": metric}
        history.append(row)
        logger.info("epoch %d loss %.5f metric %.4f", epoch, row["loss"], metric)
        if metric > best_metric:
            best_metric, best_state = metric, {k: v.copy() for k, v in last_good.items()}
    return TrainResult(model, history, best_state, float(best_metric), state)
