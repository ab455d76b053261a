"""Metrics, permutation robustness, efficiency profiling, concept retrieval."""
from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .exceptions import ValidationError
from .network import (
    CascadeModel,
    build_cascade,
    forward,
    forward_blocks,
    model_flops,
    model_param_count,
)
from .numerics import count_flops, matmul, row_max, temporal_windows, transpose
from .synth import PROTOCOLS, permute_protocol, stack


@dataclass
class MetricReport:
    name: str                      # "accuracy" or "mAP"
    value: float
    per_class: dict[int, float]
    count: int
    excluded: list[int] = field(default_factory=list)


def accuracy(logits, labels) -> float:
    """Argmax match rate; ties go to the lowest class index."""
    return accuracy_report(logits, labels).value


def accuracy_report(logits, labels) -> MetricReport:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or len(logits) == 0:
        raise ValidationError("accuracy needs a non-empty (B, classes) batch")
    if len(labels) != len(logits):
        raise ValidationError("logits and labels disagree on batch size")
    hit = np.argmax(logits, axis=1) == labels
    per_class = {int(c): float(hit[labels == c].mean()) for c in np.unique(labels)}
    return MetricReport("accuracy", float(hit.mean()), per_class, len(labels))


def average_precision(scores, positives) -> float:
    """Mean of precision@rank over the positive ranks; samples are ranked by
    descending score, stable by index."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives).astype(bool)
    order = np.argsort(-scores, kind="stable")
    hits = positives[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


def mean_average_precision(scores, labels) -> MetricReport:
    """Unweighted mean AP over classes that have at least one positive."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape != labels.shape:
        raise ValidationError("scores and labels must share a (B, classes) shape")
    per_class, excluded = {}, []
    for c in range(scores.shape[1]):
        if labels[:, c].any():
            per_class[c] = average_precision(scores[:, c], labels[:, c])
        else:
            excluded.append(c)
    if not per_class:
        raise ValidationError("no class has a positive label")
    return MetricReport("mAP", float(np.mean(list(per_class.values()))), per_class, len(scores), excluded)


def score_logits(logits, labels, task: str) -> float:
    if task == "single_label":
        return accuracy(logits, labels)
    return mean_average_precision(logits, labels).value


def evaluate(model: CascadeModel, samples) -> MetricReport:
    X, y = stack(samples)
    logits = forward(model, X, "eval").data
    if model.task == "single_label":
        return accuracy_report(logits, y)
    return mean_average_precision(logits, y)


# ---------------------------------------------------------------------------
# Permutation robustness
# ---------------------------------------------------------------------------

@dataclass
class RobustnessTable:
    rows: list[dict]               # protocol, seed, metric
    mean: dict[str, float]
    drop: dict[str, float]

    def columns(self) -> list[str]:
        return list(self.mean)


def permutation_robustness(model: CascadeModel, samples, protocols=PROTOCOLS, seeds=10) -> RobustnessTable:
    """Metric under each test-time protocol averaged over permutation seeds;
    ``drop = metric(uniform) - metric(protocol)``."""
    seeds = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    protocols = list(protocols)
    baseline = evaluate(model, samples).value
    rows, means, drop = [], {}, {}
    for protocol in protocols:
        values, drops = [], []
        for seed in seeds:
            if protocol == "uniform":
                value = baseline
            else:
                rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
                value = evaluate(model, [permute_protocol(s, protocol, rng) for s in samples]).value
            rows.append({"protocol": protocol, "seed": seed, "metric": value, "drop": baseline - value})
            values.append(value)
            drops.append(baseline - value)
        means[protocol] = math.fsum(values) / len(values)
        drop[protocol] = math.fsum(drops) / len(drops)
    return RobustnessTable(rows, means, drop)


# ---------------------------------------------------------------------------
# Efficiency
# ---------------------------------------------------------------------------

@dataclass
class EfficiencyRecord:
    variant: str
    depth: int
    params: int
    flops: int
    forward_ms: float | None = None
    accuracy: float | None = None


def calibrate_batch_norm(model: CascadeModel, X):
    """Populate running statistics with one train-mode pass (no updates)."""
    forward(model, X, "train")


def instrumented_counts(cfg: RunConfig, seed: int = 0) -> tuple[int, int]:
    """Parameter count by reflection and FLOPs by counting executed ops on a
    single sequence."""
    model = build_cascade(cfg)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((2, cfg.data.length, cfg.channels))
    calibrate_batch_norm(model, X)
    params = sum(t.size for t in model.named_parameters().values())
    with count_flops() as counter:
        forward(model, X[:1], "eval")
    return params, counter.total


def profile(cfg: RunConfig, depths, variants=None, repeats: int = 20, warmup: int = 3,
            timing: bool = True, seed: int = 0) -> list[EfficiencyRecord]:
    """Analytic parameter/FLOP counts per depth plus median forward time."""
    variants = [cfg.variant] if variants is None else list(variants)
    records = []
    for variant in variants:
        for depth in depths:
            if depth < 1:
                raise ValueError("depths must be >= 1")
            c = cfg.replace(variant=variant, depth=depth)
            rec = EfficiencyRecord(variant, depth, model_param_count(c), model_flops(c))
            if timing:
                rec.forward_ms = _time_forward(c, repeats, warmup, seed)
            records.append(rec)
    return records


def _time_forward(cfg: RunConfig, repeats: int, warmup: int, seed: int) -> float:
    from threadpoolctl import threadpool_limits

    model = build_cascade(cfg)
    rng = np.random.default_rng(seed)
    calibrate_batch_norm(model, rng.standard_normal((2, cfg.data.length, cfg.channels)))
    inputs = rng.standard_normal((warmup + repeats, 1, cfg.data.length, cfg.channels))
    times = []
    with threadpool_limits(1):
        for i, X in enumerate(inputs):
            t0 = time.perf_counter()
            forward(model, X, "eval")
            if i >= warmup:
                times.append((time.perf_counter() - t0) * 1e3)
    return float(statistics.median(times))


# ---------------------------------------------------------------------------
# Concept retrieval
# ---------------------------------------------------------------------------

@dataclass
class Retrieval:
    sample: int
    timestep: int       # window center on the layer's time axis
    frame: int          # timestep attaining the window max; -1 if padding
    similarity: float


@dataclass
class RetrievalResult:
    layer: int
    per_key: list[list[Retrieval]]
    note: str | None = None


def window_similarities(model: CascadeModel, X, layer: int):
    """Per-window max similarity ``(B, n, M)`` and the source timestep of
    each max for the keys of block ``layer``."""
    block = model.blocks[layer]
    if block.variant not in ("pic", "pic_global"):
        raise ValidationError(f"block {layer} ({block.variant}) has no stored keys")
    p = block.params
    h = forward_blocks(model, X, "eval", upto=layer)
    n = h.shape[1]
    Z = p.g_phi(h)
    S = matmul(Z, transpose(p.keys))
    if block.variant == "pic_global":
        window, padding, left = n, "valid", 0
    else:
        window, padding, left = p.window, "same", p.window // 2
    s_max, arg = row_max(temporal_windows(S, window, padding), axis=-2, keepdims=False)
    centers = np.arange(s_max.shape[1])
    start = centers - left if padding == "same" else centers
    frames = start[None, :, None] + arg
    frames = np.where((frames >= 0) & (frames < n), frames, -1)
    if padding == "valid":
        centers = centers + window // 2
    return s_max.data, frames, centers


def concept_retrieval(model: CascadeModel, samples, layer: int, k: int) -> RetrievalResult:
    """Top-``k`` windows per key ranked by max similarity, descending, ties
    resolved by (sample, timestep)."""
    X, _ = stack(samples)
    sims, frames, centers = window_similarities(model, X, layer)
    B, n, M = sims.shape
    available = B * n
    note = None
    if k > available:
        note = f"k={k} exceeds the {available} available windows; truncated"
        k = available
    per_key = []
    for m in range(M):
        flat = sims[:, :, m].reshape(-1)
        order = np.argsort(-flat, kind="stable")[:k]
        per_key.append([
            Retrieval(int(i // n), int(centers[i % n]), int(frames[i // n, i % n, m]), float(flat[i]))
            for i in order
        ])
    return RetrievalResult(layer, per_key, note)
