import numpy as np
import pytest
from gradcheck import gradient_instance, numeric_gradient, relative_errors

from robustfl.losses import BoundedLoss
from robustfl.models import (
    DivergenceError,
    ModelParams,
    TrainConfig,
    backward,
    forward,
    init_params,
    load_checkpoint,
    local_sgd,
    save_checkpoint,
)
from robustfl.data import synthetic_classification


def test_param_shapes_chain():
    p = init_params("mlp_200_100", 20, 10, seed=0)
    shapes = [(w.shape, b.shape) for w, b in p.layers]
    assert shapes == [((20, 200), (200,)), ((200, 100), (100,)), ((100, 10), (10,))]
    assert p.flat.size == 20 * 200 + 200 + 200 * 100 + 100 + 100 * 10 + 10
    with pytest.raises(ValueError):
        init_params("resnet20", 20, 10, 0)
    with pytest.raises(ValueError):
        ModelParams("linear", (3, 2), np.zeros(5))


def test_init_is_glorot_uniform_and_seeded():
    p = init_params("mlp_200_100", 20, 10, seed=3)
    for (w, b), (fi, fo) in zip(p.layers, [(20, 200), (200, 100), (100, 10)]):
        assert np.all(np.abs(w) <= np.sqrt(6 / (fi + fo)))
        assert not b.any()
    assert np.array_equal(p.flat, init_params("mlp_200_100", 20, 10, seed=3).flat)
    assert not np.array_equal(p.flat, init_params("mlp_200_100", 20, 10, seed=4).flat)


def test_zero_params_give_uniform_output():
    p = init_params("mlp_200_100", 5, 4, 0).with_flat(np.zeros(5 * 200 + 200 + 200 * 100 + 100 + 100 * 4 + 4))
    assert np.allclose(forward(p, np.ones((3, 5))), 0.25, atol=1e-15)


def test_linear_two_by_two_closed_form():
    # logits = x W + b with W = [[1, 0], [0, 2]], b = [0, 1]
    p = ModelParams("linear", (2, 2), np.array([1.0, 0.0, 0.0, 2.0, 0.0, 1.0]))
    x = np.array([[1.0, 1.0]])
    logits = np.array([1.0, 3.0])
    expected = np.exp(logits) / np.exp(logits).sum()
    assert forward(p, x)[0] == pytest.approx(expected, abs=1e-15)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    p = init_params("mlp_200_100", 8, 10, seed=1)
    p.flat *= 5
    probs = forward(p, rng.normal(scale=10, size=(10_000, 8)))
    assert np.all(np.abs(probs.sum(axis=1) - 1) <= 1e-9)
    p32 = init_params("mlp_200_100", 8, 10, seed=1, dtype=np.float32)
    assert np.all(np.abs(forward(p32, rng.normal(size=(500, 8))).sum(axis=1) - 1) <= 1e-9)


def test_shape_mismatch_errors():
    p = init_params("linear", 4, 3, 0)
    with pytest.raises(ValueError):
        forward(p, np.zeros((2, 5)))
    with pytest.raises(ValueError):
        backward(p, np.zeros((2, 4)), np.zeros(3, dtype=int))
    with pytest.raises(ValueError):
        backward(p, np.zeros((2, 4)), np.array([0, 3]))


@pytest.mark.parametrize("seed", [0, 1])
def test_linear_gradient_matches_finite_differences(seed):
    a, n = gradient_instance("linear", seed)
    assert relative_errors(a, n).max() <= 1e-4


def test_mlp_gradient_matches_finite_differences_on_small_instance():
    # Full-size check of every coordinate lives in the acceptance suite.
    a, n = gradient_instance("mlp_200_100", 0, in_dim=2, num_classes=2, batch=3)
    assert relative_errors(a, n).max() <= 1e-4


def test_duplicated_batch_gives_same_gradient():
    rng = np.random.default_rng(2)
    p = init_params("mlp_200_100", 5, 3, 0)
    x, y = rng.normal(size=(7, 5)), rng.integers(0, 3, 7)
    g1, l1 = backward(p, x, y, 1e-3)
    g2, l2 = backward(p, np.vstack([x, x]), np.concatenate([y, y]), 1e-3)
    assert np.allclose(g1, g2, rtol=1e-12, atol=1e-15)
    assert l1 == pytest.approx(l2, rel=1e-14)


def test_saturated_correct_predictions_are_stationary():
    # Linear model with huge logit margins on the true class.
    W = np.array([[50.0, -50.0], [-50.0, 50.0]])
    p = ModelParams("linear", (2, 2), np.concatenate([W.ravel(), [0.0, 0.0]]))
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    g, _ = backward(p, x, np.array([0, 1]), 0.0)
    assert np.linalg.norm(g) < 1e-6


def test_weight_decay_term():
    p = init_params("linear", 3, 2, 0)
    x, y = np.ones((1, 3)), np.array([1])
    g0, l0 = backward(p, x, y, 0.0)
    g1, l1 = backward(p, x, y, 0.1)
    assert np.allclose(g1 - g0, 0.1 * p.flat)
    assert l1 - l0 == pytest.approx(0.05 * p.flat @ p.flat)


def test_zero_learning_rate_is_noop():
    data = synthetic_classification(3, 10, 4, 2.0, 0)
    p = init_params("mlp_200_100", 4, 3, 0)
    res = local_sgd(p, data.features, data.labels, TrainConfig(0.0, 2, 7, 1e-3, 0))
    assert np.array_equal(res.params.flat, p.flat)
    assert res.steps == 2 * 5


def test_single_full_batch_step():
    data = synthetic_classification(2, 4, 3, 2.0, 0)
    p = init_params("linear", 3, 2, 0)
    cfg = TrainConfig(0.3, 1, len(data), 1e-3, 5)
    res = local_sgd(p, data.features, data.labels, cfg)
    g, _ = backward(p, data.features, data.labels, 1e-3)
    assert np.allclose(res.params.flat, p.flat - 0.3 * g, rtol=0, atol=1e-15)
    assert res.steps == 1


def test_separable_two_class_training_error():
    data = synthetic_classification(2, 100, 4, 8.0, 1)
    p = init_params("linear", 4, 2, 0)
    res = local_sgd(p, data.features, data.labels, TrainConfig(0.1, 50, 20, 1e-3, 0))
    assert res.squared_losses.mean() < 0.05


def test_local_sgd_is_deterministic_and_losses_bounded():
    data = synthetic_classification(3, 30, 4, 1.0, 0)
    p = init_params("mlp_200_100", 4, 3, 0)
    cfg = TrainConfig(0.1, 2, 16, 1e-3, 9)
    loss = BoundedLoss("squared_clamped", 0.7)
    a = local_sgd(p, data.features, data.labels, cfg, eval_loss=loss)
    b = local_sgd(p, data.features, data.labels, cfg, eval_loss=loss)
    assert a.params.flat.tobytes() == b.params.flat.tobytes()
    assert np.all((a.squared_losses >= 0) & (a.squared_losses <= 0.49 + 1e-15))
    # Input params are never mutated.
    assert np.array_equal(p.flat, init_params("mlp_200_100", 4, 3, 0).flat)


def test_hook_is_added_to_gradient():
    data = synthetic_classification(2, 4, 3, 2.0, 0)
    p = init_params("linear", 3, 2, 0)
    cfg = TrainConfig(0.5, 1, len(data), 0.0, 0)
    shift = np.full(p.flat.size, 0.2)
    res = local_sgd(p, data.features, data.labels, cfg, hook=lambda w: shift)
    g, _ = backward(p, data.features, data.labels, 0.0)
    assert np.allclose(res.params.flat, p.flat - 0.5 * (g + shift))


def test_divergence_raises():
    data = synthetic_classification(2, 10, 3, 2.0, 0)
    p = init_params("linear", 3, 2, 0)
    with pytest.raises(DivergenceError):
        local_sgd(p, data.features, data.labels, TrainConfig(1e300, 1, 5, 0.0, 0), hook=lambda w: np.full(w.size, 1e300))


def test_train_config_validation():
    for kwargs in ({"learning_rate": -1}, {"local_epochs": 0}, {"batch_size": 0}, {"weight_decay": -1}):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


def test_checkpoint_roundtrip(tmp_path):
    p = init_params("mlp_200_100", 6, 3, 2)
    path = tmp_path / "m.bin"
    save_checkpoint(path, p)
    back = load_checkpoint(path)
    assert back.arch == "mlp_200_100" and back.sizes == (6, 200, 100, 3)
    assert np.array_equal(back.flat, p.flat)
    assert path.read_bytes()[:4] == b"RFLM"
    (tmp_path / "bad").write_bytes(b"XXXX")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad")


def test_numeric_gradient_helper_on_quadratic_part():
    # Sanity check of the oracle itself: with no data signal the gradient is wd * w.
    p = init_params("linear", 2, 2, 0)
    x, y = np.zeros((1, 2)), np.array([0])
    n = numeric_gradient(p, x, y, 0.5)
    a, _ = backward(p, x, y, 0.5)
    assert np.allclose(n, a, atol=1e-9)
