import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from picnet import oracles
from picnet.config import DataConfig, RunConfig
from picnet.evaluation import (
    accuracy,
    average_precision,
    calibrate_batch_norm,
    concept_retrieval,
    evaluate,
    instrumented_counts,
    mean_average_precision,
    permutation_robustness,
    profile,
)
from picnet.exceptions import ValidationError
from picnet.layers import VARIANTS
from picnet.network import build_cascade, model_flops, model_param_count
from picnet.synth import ActivitySample, make_dataset, stack


# -- metrics ----------------------------------------------------------------------

def test_accuracy_perfect():
    assert accuracy(np.eye(4), [0, 1, 2, 3]) == 1.0


def test_accuracy_ties_go_to_class_zero():
    assert accuracy(np.zeros((3, 4)), [1, 2, 3]) == 0.0
    assert accuracy(np.zeros((1, 4)), [0]) == 1.0


def test_accuracy_matches_counting_oracle(rng):
    z = rng.standard_normal((50, 5))
    y = rng.integers(0, 5, 50)
    hits = 0
    for i in range(50):
        best = 0
        for c in range(1, 5):
            if z[i, c] > z[i, best]:
                best = c
        hits += best == y[i]
    assert accuracy(z, y) == hits / 50


def test_accuracy_rejects_bad_shapes():
    with pytest.raises(ValidationError):
        accuracy(np.zeros((0, 3)), [])
    with pytest.raises(ValidationError):
        accuracy(np.zeros((2, 3)), [0])


def test_map_perfect_scores():
    labels = np.array([[1, 0], [0, 1], [1, 1]])
    assert mean_average_precision(labels.astype(float), labels).value == 1.0


def test_ap_positive_ranked_second():
    assert average_precision([0.9, 0.8, 0.3, 0.1], [0, 1, 0, 0]) == 0.5


def test_map_random_matches_brute_force(rng):
    scores = rng.standard_normal((8, 3))
    labels = rng.integers(0, 2, (8, 3))
    labels[0] = 1
    assert abs(mean_average_precision(scores, labels).value - oracles.brute_force_map(scores, labels)) <= 1e-12


def test_map_all_label_patterns_with_ties():
    scores = np.array([[0.5, 0.1], [0.5, 0.7], [0.2, 0.7]])
    for bits in range(1, 64):
        labels = np.array([(bits >> i) & 1 for i in range(6)]).reshape(3, 2)
        got = mean_average_precision(scores, labels).value
        assert abs(got - oracles.brute_force_map(scores, labels)) <= 1e-12


@given(arrays(np.float64, (6, 2), elements=st.integers(-2, 2).map(float)),
       arrays(np.int64, (6, 2), elements=st.integers(0, 1)))
@settings(max_examples=60, deadline=None)
def test_map_property_vs_brute_force(scores, labels):
    if not labels.any():
        with pytest.raises(ValidationError):
            mean_average_precision(scores, labels)
        return
    assert abs(mean_average_precision(scores, labels).value - oracles.brute_force_map(scores, labels)) <= 1e-12


def test_map_excludes_classes_without_positives():
    r = mean_average_precision(np.array([[0.1, 0.2], [0.3, 0.4]]), np.array([[1, 0], [0, 0]]))
    assert r.excluded == [1] and list(r.per_class) == [0]
    assert r.value == 0.5


# -- robustness -------------------------------------------------------------------

SMALL = RunConfig(depth=1, channels=8, num_keys=4, num_values=4, window=3,
                  data=DataConfig(length=16, num_classes=3, segments_per_class=2, actions_per_segment=2,
                                  n_train=6, n_test=9))


def trained_like(cfg, rng):
    model = build_cascade(cfg)
    for name, t in model.named_parameters().items():
        if ".bn." not in name:
            t.data = rng.standard_normal(t.shape)
    ds = make_dataset(cfg)
    calibrate_batch_norm(model, stack(ds.train)[0])
    return model, ds


def test_global_model_drops_exactly_zero(rng):
    model, ds = trained_like(SMALL.replace(variant="pic_global"), rng)
    table = permutation_robustness(model, ds.test, ("uniform", "coarse", "fine"), 5)
    assert table.drop == {"uniform": 0.0, "coarse": 0.0, "fine": 0.0}
    X = stack(ds.test)[0]
    from picnet.network import forward
    base = forward(model, X).data
    perm = rng.permutation(16)
    assert np.abs(forward(model, X[:, perm]).data - base).max() <= 1e-12


def test_untrained_model_drops_near_zero():
    # Averaged over untrained seeds, the fine drop stays inside a 3-sigma
    # binomial band for the difference of two accuracies.
    cfg = SMALL.replace(data={"n_test": 300})
    ds = make_dataset(cfg)
    drops, bands = [], []
    for seed in range(5):
        model = build_cascade(cfg.replace(seed=seed))
        calibrate_batch_norm(model, stack(ds.train)[0])
        table = permutation_robustness(model, ds.test, ("uniform", "fine"), 3)
        p = table.mean["uniform"]
        drops.append(table.drop["fine"])
        bands.append(3 * np.sqrt(2 * p * (1 - p) / 300))
        assert table.drop["uniform"] == 0.0
    assert abs(np.mean(drops)) <= np.mean(bands) / np.sqrt(5)


def test_table_columns_follow_request(rng):
    model, ds = trained_like(SMALL, rng)
    table = permutation_robustness(model, ds.test, ("fine", "uniform"), 2)
    assert table.columns() == ["fine", "uniform"]
    assert len(table.rows) == 4


def test_evaluate_multilabel_uses_map(rng):
    cfg = SMALL.replace(task="multi_label")
    model, ds = trained_like(cfg, rng)
    assert evaluate(model, ds.test).name == "mAP"


# -- profiling --------------------------------------------------------------------

@pytest.mark.parametrize("variant", VARIANTS)
def test_instrumented_counts_match_formulas(variant):
    for depth in (1, 2):
        cfg = SMALL.replace(variant=variant, depth=depth)
        assert instrumented_counts(cfg) == (model_param_count(cfg), model_flops(cfg))


def test_profile_rows_and_monotone_params():
    recs = profile(RunConfig(), range(1, 5), ["pic", "pic_ordered"], timing=False)
    assert [(r.variant, r.depth) for r in recs] == list(itertools.product(["pic", "pic_ordered"], range(1, 5)))
    for v in ("pic", "pic_ordered"):
        params = [r.params for r in recs if r.variant == v]
        assert all(b > a for a, b in zip(params, params[1:]))


def test_profile_timing_is_recorded():
    rec = profile(SMALL, [1], repeats=2, warmup=1)[0]
    assert rec.forward_ms > 0


def test_profile_rejects_zero_depth():
    with pytest.raises(ValueError):
        profile(SMALL, [0], timing=False)


# -- retrieval --------------------------------------------------------------------

def retrieval_model(cfg):
    model = build_cascade(cfg)
    model.blocks[0].params.g_phi.weight.data = np.eye(cfg.channels)[:, :cfg.channels // cfg.reduction]
    model.blocks[0].params.g_phi.bias.data[:] = 0
    return model


def test_planted_maximum_ranks_first(rng):
    cfg = SMALL.replace(depth=1, reduction=4)
    model = retrieval_model(cfg)
    key = np.zeros(2)
    key[0] = 1.0
    model.blocks[0].params.keys.data[0] = key
    X = rng.uniform(-1, 1, (3, 16, 8))
    X[2, 11, 0] = 5.0
    samples = [ActivitySample(x, 0, [0, 16]) for x in X]
    res = concept_retrieval(model, samples, 0, 1)
    top = res.per_key[0][0]
    assert (top.sample, top.frame, top.similarity) == (2, 11, 5.0)


def test_zero_keys_tie_order(rng):
    model = retrieval_model(SMALL)
    model.blocks[0].params.keys.data[:] = 0
    samples = [ActivitySample(rng.standard_normal((16, 8)), 0, [0, 16]) for _ in range(2)]
    res = concept_retrieval(model, samples, 0, 5)
    hits = res.per_key[1]
    assert [(h.sample, h.timestep) for h in hits] == [(0, t) for t in range(5)]
    assert all(h.similarity == 0.0 for h in hits)


def test_similarities_non_increasing_and_truncation(rng):
    model = retrieval_model(SMALL)
    model.blocks[0].params.keys.data = rng.standard_normal((4, 2))
    samples = [ActivitySample(rng.standard_normal((16, 8)), 0, [0, 16]) for _ in range(2)]
    res = concept_retrieval(model, samples, 0, 100)
    assert res.note is not None and all(len(k) == 32 for k in res.per_key)
    for hits in res.per_key:
        sims = [h.similarity for h in hits]
        assert all(a >= b for a, b in zip(sims, sims[1:]))


def test_retrieval_needs_stored_keys(rng):
    model = build_cascade(SMALL.replace(variant="temporal_conv"))
    with pytest.raises(ValidationError):
        concept_retrieval(model, [ActivitySample(np.zeros((16, 8)), 0, [0, 16])], 0, 1)
