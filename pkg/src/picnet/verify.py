"""Fast invariant suite behind ``picnet verify``."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import numerics, oracles
from .config import DataConfig, RunConfig
from .evaluation import instrumented_counts, mean_average_precision
from .layers import (
    VARIANTS,
    ConvParams,
    InferredParams,
    OrderedParams,
    PicParams,
    layer_forward,
    pic_window,
)
from .network import build_cascade, forward, loss, model_flops, model_param_count
from .numerics import GradTape, Tensor, grad_check, matmul, row_max, total


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0


def _check_matmul():
    rng = np.random.default_rng(1)
    A, B = rng.standard_normal((5, 4)), rng.standard_normal((4, 3))
    ok = np.array_equal(matmul(A, B).data, oracles.naive_matmul(A, B))
    return ok, "5x4 @ 4x3 vs triple loop, 0 ulp"


def _check_row_max():
    const = np.array([[5.0, 5.0, 5.0]])
    _, arg = row_max(const)
    if int(arg[0]) != 0:
        return False, f"tie on a constant row resolved to index {int(arg[0])}, expected 0"
    rng = np.random.default_rng(2)
    s = rng.standard_normal((6, 9))
    vals, arg = row_max(s)
    ref_vals, ref_arg = oracles.linear_scan_row_max(s)
    with GradTape() as tape:
        t = Tensor(s, requires_grad=True)
        v, idx = row_max(t)
        out = total(v)
    g = tape.gradient(out, [t])[0]
    routed = all(np.flatnonzero(g[m]).tolist() == [idx[m]] for m in range(len(s)))
    ok = np.array_equal(vals.data, ref_vals) and list(arg) == ref_arg and routed
    return ok, "lowest-index tie-break, linear-scan oracle, single-column backward routing"


def _check_invariance():
    rng = np.random.default_rng(3)
    worst = 0.0
    for T in range(1, 6):
        p = PicParams.init(rng, 16, 6, 4, T)
        Xw = rng.standard_normal((T, 4))
        base = pic_window(Xw, p).data
        for perm in oracles.all_permutations(T):
            worst = max(worst, float(np.abs(pic_window(Xw[perm], p).data - base).max()))
    return worst <= 1e-12, f"exhaustive T<=5, max deviation {worst:.1e}"


def _random_layer(variant, rng, C=8, M=4, T=3):
    p = {
        "pic": lambda: PicParams.init(rng, C, M, M, T),
        "pic_global": lambda: PicParams.init(rng, C, M, M, T),
        "pic_ordered": lambda: OrderedParams.init(rng, C, M, T),
        "pic_inferred": lambda: InferredParams.init(rng, C, T),
        "temporal_conv": lambda: ConvParams.init(rng, C, T),
    }[variant]()
    # Zero biases put exact ties into row_max (kinks); move off them.
    for t in p.named_parameters().values():
        t.data = rng.standard_normal(t.shape)
    return p


def _check_gradients():
    rng = np.random.default_rng(4)
    failures = []
    for variant in VARIANTS:
        p = _random_layer(variant, rng)
        X = Tensor(rng.standard_normal((2, 6, 8)), requires_grad=True)
        w = rng.standard_normal((2, 1 if variant == "pic_global" else 6, 8))
        params = dict(p.named_parameters(), input=X)
        report = grad_check(lambda: total(layer_forward(variant, X, p) * w), params)
        if not report.passed:
            failures.append(f"{variant}: {', '.join(report.failures)}")
    return not failures, "; ".join(failures) or f"central differences on {len(VARIANTS)} layer variants"


def _check_map():
    rng = np.random.default_rng(5)
    scores = rng.standard_normal((3, 2))
    worst, checked = 0.0, 0
    for bits in range(2 ** 6):
        labels = np.array([(bits >> i) & 1 for i in range(6)]).reshape(3, 2)
        if not labels.any():
            continue
        got = mean_average_precision(scores, labels).value
        worst = max(worst, abs(got - oracles.brute_force_map(scores, labels)))
        checked += 1
    return worst <= 1e-12, f"{checked} label patterns, max deviation {worst:.1e}"


def _check_counts():
    bad = []
    for variant in VARIANTS:
        for depth in (1, 2):
            cfg = RunConfig(variant=variant, depth=depth, channels=8, num_keys=4, num_values=3, window=3,
                            data=DataConfig(length=10, num_classes=3))
            params, flops = instrumented_counts(cfg)
            if params != model_param_count(cfg) or flops != model_flops(cfg):
                bad.append(f"{variant}@L{depth}")
    return not bad, ", ".join(bad) or "analytic params/FLOPs equal instrumented counts, L in {1,2}"


def _check_identity_init():
    cfg = RunConfig(depth=2, channels=8, num_keys=4, num_values=4, window=3, data=DataConfig(length=8))
    model = build_cascade(cfg)
    X = np.random.default_rng(6).standard_normal((2, 8, 8))
    out = layer_forward("pic", X, model.blocks[0].params)
    return np.array_equal(out.data, X), "zero-initialized recovery layer leaves the residual input intact"


def _check_model_grad():
    cfg = RunConfig(depth=2, channels=8, num_keys=4, num_values=4, window=3, data=DataConfig(length=8, num_classes=3))
    model = build_cascade(cfg)
    rng = np.random.default_rng(7)
    for name, t in model.named_parameters().items():
        if ".bn." not in name:
            t.data = rng.standard_normal(t.shape)
    X = rng.standard_normal((2, 8, 8))
    y = np.array([0, 2])
    report = grad_check(lambda: loss(forward(model, X, "train"), y, "single_label").value, model.named_parameters())
    return report.passed, ", ".join(report.failures) or "end-to-end cascade, L=2, C=8, M=M'=4, N=8"


CHECKS = {
    "matmul": _check_matmul,
    "row_max": _check_row_max,
    "permutation_invariance": _check_invariance,
    "layer_gradients": _check_gradients,
    "model_gradient": _check_model_grad,
    "mean_average_precision": _check_map,
    "flop_param_counts": _check_counts,
    "identity_init": _check_identity_init,
}


def run_checks(faults=()) -> list[CheckResult]:
    """Run every check; ``faults`` names test hooks to switch on first."""
    results = []
    numerics.FAULTS.update(faults)
    try:
        for name, fn in CHECKS.items():
            t0 = time.perf_counter()
            try:
                ok, detail = fn()
            except Exception as exc:  # a crashing check is a failing check
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    finally:
        numerics.FAULTS.difference_update(faults)
    return results
