import numpy as np
import pytest

from picnet.config import DataConfig, RunConfig
from picnet.exceptions import FormatError, NonFiniteError, TrainingDiverged
from picnet.network import build_cascade, forward
from picnet.numerics import Tensor
from picnet.optim import (
    OptState,
    adam_step,
    clip_by_global_norm,
    decays,
    load_opt_state,
    save_opt_state,
    sgd_step,
    train,
)


def P(values):
    return {"w": Tensor(np.array(values, dtype=float), requires_grad=True)}


def test_sgd_plain_step():
    p = P([1.0, -2.0])
    sgd_step(p, {"w": np.array([0.5, 0.25])}, OptState("sgd", lr=1.0, momentum=0.0))
    assert p["w"].data.tolist() == [0.5, -2.25]


def test_sgd_momentum_two_steps():
    p = P([0.0])
    st = OptState("sgd", lr=0.1, momentum=0.9)
    g = {"w": np.array([2.0])}
    sgd_step(p, g, st)
    sgd_step(p, g, st)
    assert p["w"].data[0] == pytest.approx(-0.1 * 2.0 * (1 + 1.9), abs=1e-15)


def test_sgd_pure_decay():
    p = P([3.0])
    sgd_step(p, {"w": np.zeros(1)}, OptState("sgd", lr=0.1, momentum=0.9, weight_decay=1e-5))
    assert p["w"].data[0] == pytest.approx(3.0 - 0.1 * 1e-5 * 3.0, abs=1e-16)


def test_no_decay_on_bias_and_norm():
    assert decays("blocks.0.keys") and decays("head.fc1.weight")
    assert not decays("head.fc1.bias") and not decays("blocks.1.bn.gamma") and not decays("head.bn.beta")
    p = {"head.fc1.bias": Tensor(np.array([3.0]))}
    sgd_step(p, {"head.fc1.bias": np.zeros(1)}, OptState("sgd", lr=0.1, weight_decay=0.5))
    assert p["head.fc1.bias"].data[0] == 3.0


def test_adam_first_step_is_lr_times_sign():
    p = P([0.0, 0.0, 0.0])
    adam_step(p, {"w": np.array([3.0, -0.02, 1e3])}, OptState("adam", lr=0.01, eps=1e-4))
    assert np.allclose(p["w"].data, [-0.01, 0.01, -0.01], rtol=1e-2, atol=0)


def test_adam_zero_grad_keeps_param():
    p = P([1.5, -2.0])
    adam_step(p, {"w": np.zeros(2)}, OptState("adam", lr=0.01))
    assert p["w"].data.tolist() == [1.5, -2.0]


def test_adam_matches_formula_oracle(rng):
    w = rng.standard_normal(4)
    p = P(w)
    st = OptState("adam", lr=0.01, eps=1e-4, weight_decay=1e-3)
    m = np.zeros(4)
    v = np.zeros(4)
    for t in range(1, 11):
        g = rng.standard_normal(4)
        adam_step(p, {"w": g}, st)
        g = g + 1e-3 * w
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-4)
        assert np.abs(p["w"].data - w).max() <= 1e-12


def test_non_finite_gradient_rejected():
    with pytest.raises(NonFiniteError):
        sgd_step(P([1.0]), {"w": np.array([np.inf])}, OptState("sgd", lr=0.1))


def test_clip_by_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    out = clip_by_global_norm(g, 1.0)
    assert np.allclose([out["a"][0], out["b"][0]], [0.6, 0.8], atol=1e-15)
    assert clip_by_global_norm(g, 10.0) is g


def test_opt_state_round_trip(tmp_path):
    st = OptState("adam", lr=0.01, step=3, buffers={"w.m": np.arange(3.0), "w.s": np.ones(3)})
    save_opt_state(tmp_path / "o.pico", st)
    back = load_opt_state(tmp_path / "o.pico")
    assert back.hyper() == st.hyper() and np.array_equal(back.buffers["w.m"], st.buffers["w.m"])
    with pytest.raises(FormatError):
        from picnet.network import load_model
        load_model(tmp_path / "o.pico")


# -- training loop ---------------------------------------------------------------

SMALL = RunConfig(depth=1, channels=8, num_keys=4, num_values=4, window=3, epochs=3, batch_size=8,
                  data=DataConfig(length=6, num_classes=2))


def toy(rng, n=16):
    y = np.arange(n) % 2
    X = rng.standard_normal((n, 6, 8)) * 0.3
    X[:, :, 0] += np.where(y == 1, 2.0, -2.0)[:, None]
    return X, y


def test_zero_lr_keeps_parameters(rng):
    X, y = toy(rng)
    cfg = SMALL.replace(learning_rate=0.0, weight_decay=0.0)
    model = build_cascade(cfg)
    before = {k: t.data.copy() for k, t in model.named_parameters().items()}
    train(model, X, y, cfg)
    assert all(np.array_equal(before[k], t.data) for k, t in model.named_parameters().items())


def test_training_is_deterministic(rng):
    X, y = toy(rng)
    runs = []
    for _ in range(2):
        model = build_cascade(SMALL)
        res = train(model, X, y, SMALL)
        runs.append((res.history, model.state_arrays()))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(runs[0][1][k], runs[1][1][k]) for k in runs[0][1])


def test_toy_separable_reaches_full_accuracy(rng):
    X, y = toy(rng, 32)
    cfg = SMALL.replace(epochs=20)
    model = build_cascade(cfg)
    res = train(model, X, y, cfg)
    assert res.history[-1]["metric"] == 1.0
    assert (np.argmax(forward(model, X).data, axis=1) == y).all()


def test_adam_training_runs(rng):
    X, y = toy(rng)
    cfg = SMALL.replace(optimizer="adam", epochs=5)
    res = train(build_cascade(cfg), X, y, cfg)
    assert res.history[-1]["loss"] < res.history[0]["loss"]


def test_history_rows_and_best_state(rng):
    X, y = toy(rng)
    res = train(build_cascade(SMALL), X, y, SMALL)
    assert [r["epoch"] for r in res.history] == [1, 2, 3]
    assert res.best_metric == max(r["metric"] for r in res.history)


def test_divergence_reports_last_good_state(rng):
    X, y = toy(rng)
    cfg = SMALL.replace(learning_rate=1e200, epochs=5)
    model = build_cascade(cfg)
    with pytest.raises(TrainingDiverged) as info:
        train(model, X, y, cfg)
    exc = info.value
    assert exc.last_good is not None
    for t in exc.last_good.named_parameters().values():
        assert np.isfinite(t.data).all()


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train(build_cascade(SMALL), np.zeros((0, 6, 8)), np.zeros(0), SMALL)
