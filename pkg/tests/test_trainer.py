from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wsground.dataset import strip_supervision
from wsground.losses import LossConfig, NoDistillSignal, lambda_schedule
from wsground.model import ModelConfig, ParamStore
from wsground.trainer import (
    AdamState,
    TrainConfig,
    adam_step,
    apply_standardization,
    fit_feature_stats,
    sample_batch,
    steps_per_epoch,
    train,
)

TINY = TrainConfig(epochs=1, batch_size=8, hidden=16, embed_dim=8, token_dim=6, learning_rate=1e-3,
                   loss=LossConfig(lambda_a=2))


def test_feature_stats_example():
    stats = fit_feature_stats(np.array([[1.0], [3.0]]))
    np.testing.assert_array_equal(stats.mean, [2.0])
    np.testing.assert_array_equal(stats.std, [1.0])
    np.testing.assert_array_equal(stats.apply(np.array([[1.0], [3.0]])), [[-1.0], [1.0]])


def test_feature_stats_constant_column_floored():
    x = np.array([[1.0, 5.0], [3.0, 5.0], [2.0, 5.0]])
    stats = fit_feature_stats(x)
    np.testing.assert_array_equal(stats.floored, [False, True])
    np.testing.assert_array_equal(stats.apply(x)[:, 1], 0.0)


def test_standardized_input_nearly_unchanged(rng):
    raw = rng.normal(3, 2, size=(50, 4))
    x = fit_feature_stats(raw).apply(raw)
    again = fit_feature_stats(x).apply(x)
    np.testing.assert_allclose(again, x, atol=1e-12)


def test_double_standardization_forbidden(small_world):
    view = strip_supervision(small_world[0])
    stats = fit_feature_stats([view.images[i].features for i in view.image_ids("train")])
    once = apply_standardization(view, stats)
    with pytest.raises(ValueError):
        apply_standardization(once, stats)


def _store():
    return ParamStore.init(ModelConfig(3, 4, 4, 3, 2), np.random.default_rng(0))


def test_adam_zero_gradient_is_a_no_op():
    p = _store()
    before = p.copy()
    state = AdamState.zeros_like(p)
    adam_step(p, {k: np.zeros_like(v) for k, v in p.items()}, state, 1e-3)
    for k in p:
        np.testing.assert_array_equal(p[k], before[k])


def test_adam_first_step_magnitude():
    p = _store()
    before = p.copy()
    state = AdamState.zeros_like(p)
    adam_step(p, {k: np.ones_like(v) for k, v in p.items()}, state, 1e-3)
    for k in p:
        np.testing.assert_allclose(before[k] - p[k], 1e-3 / (1 + 1e-8), rtol=1e-12)


@given(st.floats(-10, 10).filter(lambda g: abs(g) > 1e-6))
def test_adam_constant_gradient_keeps_direction(g):
    p = ParamStore(x=np.zeros(1))
    state = AdamState({"x": np.zeros(1)}, {"x": np.zeros(1)})
    steps = []
    for _ in range(2):
        before = p["x"].copy()
        adam_step(p, {"x": np.array([g])}, state, 1e-2)
        steps.append(p["x"] - before)
    assert all(np.sign(s[0]) == -np.sign(g) for s in steps)


def test_adam_rejects_nan():
    p = _store()
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    grads["E"][1, 1] = np.nan
    with pytest.raises(FloatingPointError, match="E"):
        adam_step(p, grads, AdamState.zeros_like(p), 1e-3)


@pytest.mark.parametrize("size", [2, 32])
def test_batch_negatives(small_world, size):
    view = strip_supervision(small_world[0])
    batch = sample_batch(np.random.default_rng(0), view, size)
    assert len(set(batch.images)) == size
    assert len(batch.images) - 1 == size - 1
    for i, j in zip(batch.images, batch.sentences):
        assert view.sentences[j].image == i


def test_batch_too_large(small_world):
    with pytest.raises(ValueError):
        sample_batch(np.random.default_rng(0), strip_supervision(small_world[0]), 10_000)


def test_zero_epochs_returns_initial_params(small_world):
    cfg = replace(TINY, epochs=0)
    a = train(small_world[0], cfg)
    b = train(small_world[0], replace(TINY, epochs=0, seed=0))
    assert a.log == []
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    init = ParamStore.init(a.params.config, np.random.default_rng([0, 0]))
    for k in init:
        np.testing.assert_array_equal(a.params[k], init[k])


def test_training_is_reproducible_and_seed_sensitive(small_world):
    a = train(small_world[0], TINY)
    b = train(small_world[0], TINY)
    c = train(small_world[0], replace(TINY, seed=1))
    assert a.log_csv() == b.log_csv()
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    assert not np.array_equal(a.params["W1_f"], c.params["W1_f"])


def test_nce_loss_decreases(small_world):
    cfg = replace(TINY, epochs=200 // steps_per_epoch(strip_supervision(small_world[0]), 8),
                  loss=LossConfig(variant="nce"))
    log = train(small_world[0], cfg).log
    assert len(log) >= 190
    assert np.mean([r[1] for r in log[-10:]]) < log[0][1]


def test_lambda_trace_follows_schedule(small_world):
    log = train(small_world[0], replace(TINY, epochs=2)).log
    assert [r[4] for r in log] == [lambda_schedule(r[0], 2, 3.0) for r in log]


def test_distill_without_posteriors_fails_before_training(small_world):
    bare = small_world[0].without_posteriors()
    with pytest.raises(NoDistillSignal):
        train(bare, replace(TINY, loss=LossConfig(variant="nce_distill")))
    assert train(bare, replace(TINY, loss=LossConfig(variant="nce"))).log


def test_training_view_has_no_hidden_labels(small_world):
    view = strip_supervision(small_world[0])
    assert not hasattr(view, "hidden")
    public = [n for n in dir(view) if not n.startswith("__")]
    assert not any("hidden" in n or "gt_" in n or "box" in n for n in public)
    with pytest.raises(AttributeError):
        view.extra = 1
