import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pcdde_lab.field import FieldSignature, init_params, linear_field
from pcdde_lab.solver import ModelSpec
from pcdde_lab.training import (
    AdamState,
    Dataset,
    Readout,
    TrainConfig,
    TrainHistory,
    TrainingDiverged,
    adam_step,
    full_loss,
    mse_loss,
    sgd_step,
    train,
)

XS = [2.0, 1.0, 0.5, 0.25, -0.25, -0.5, -1.0, -2.0]


def linear_spec(n):
    return ModelSpec("NPCDDE_simple", 1.0, n, linear_field(0.0, 0.0), substeps=1, integrator="exact_constant_field")


def linear_data(c=16.0, xs=XS):
    xs = np.array(xs)
    return Dataset(xs, c * xs)


def test_mse_examples():
    assert mse_loss([1.0, 2.0], [1.0, 2.0])[0] == 0.0
    value, grad = mse_loss([[1.0], [3.0]], [[0.0], [0.0]])
    assert value == 5.0
    np.testing.assert_array_equal(grad, [[1.0], [3.0]])
    with pytest.raises(ValueError, match="shape"):
        mse_loss([1.0, 2.0], [1.0])


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_mse_nonnegative_and_zero_at_target(values):
    assert mse_loss(values, np.zeros(len(values)))[0] >= 0.0
    assert mse_loss(values, values)[0] == 0.0


def test_adam_zero_gradient_keeps_params():
    p = np.array([1.0, -2.0])
    out, state = adam_step(p, np.zeros(2), AdamState.zeros(2), 0.1)
    np.testing.assert_array_equal(out, p)
    assert state.t == 1


@given(st.floats(1e-3, 1e3), st.booleans())
def test_adam_first_step_has_size_lr(g, flip):
    g = -g if flip else g
    out, _ = adam_step(np.zeros(1), np.array([g]), AdamState.zeros(1), 0.01)
    assert out[0] == pytest.approx(-0.01 * math.copysign(1.0, g), rel=1e-5)


def test_sgd_step_example():
    np.testing.assert_allclose(sgd_step(np.array([1.0, 1.0]), np.array([2.0, -4.0]), 0.5), [0.0, 3.0])


def scalar_adam_oracle(grad_fn, steps, lr=0.01, b1=0.9, b2=0.999, eps=1e-8):
    a, m, v = 0.0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(a)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        a -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return a


def test_single_interval_adam_matches_scalar_recursion():
    # symmetric inputs decouple the bias, so only a moves: L = m2 (a - 15)^2
    m2 = float(np.mean(np.square(XS)))
    want = scalar_adam_oracle(lambda a: 2 * m2 * (a - 15.0), 3000)
    assert want == pytest.approx(14.7938, abs=1e-4)
    res = train(linear_spec(1), TrainConfig(iterations=3000), linear_data())
    assert res.spec.params.weights[0][0, 0] == pytest.approx(want, abs=1e-9)
    assert res.spec.params.biases[0][0] == 0.0


def test_two_interval_fit_reaches_structural_optimum():
    res = train(linear_spec(2), TrainConfig(iterations=3000), linear_data())
    assert abs(res.spec.params.weights[0][0, 0] - 3.0) <= 0.05
    assert abs(res.spec.params.biases[0][0]) <= 0.05
    assert res.history.first_step_below(1e-3) is not None


def test_training_is_deterministic_in_seed():
    spec = ModelSpec("NODE", 0.5, 2, init_params(FieldSignature(("current",), 1), seed=3, hidden=(4,)), substeps=2)
    data = Dataset(np.linspace(-1, 1, 12), np.sin(np.linspace(-1, 1, 12)))
    cfg = TrainConfig(iterations=40, batch_size=5, seed=9)
    a, b = train(spec, cfg, data), train(spec, cfg, data)
    assert a.history.train_loss == b.history.train_loss
    np.testing.assert_array_equal(a.spec.params.flatten(), b.spec.params.flatten())
    c = train(spec, TrainConfig(iterations=40, batch_size=5, seed=10), data)
    assert c.history.train_loss != a.history.train_loss


def test_zero_iterations_returns_initial_params():
    spec = linear_spec(2)
    res = train(spec, TrainConfig(iterations=0), linear_data())
    np.testing.assert_array_equal(res.spec.params.flatten(), spec.params.flatten())
    assert res.history.steps == [0]
    assert res.history.train_loss[0] == pytest.approx(full_loss(spec, linear_data()))


def test_sgd_descends_at_small_rate():
    res = train(linear_spec(2), TrainConfig(optimizer="sgd", learning_rate=1e-3, iterations=50), linear_data())
    losses = res.history.train_loss
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_readout_head_is_trained():
    p = init_params(FieldSignature(("lag0",), 2), seed=1, hidden=(4,), biases=True)
    spec = ModelSpec("NPCDDE_simple", 1.0, 1, p, state_dim=2, substeps=1, integrator="exact_constant_field")
    x = np.random.default_rng(0).normal(size=(20, 2))
    data = Dataset(x, np.sign(x[:, 0]))
    head = Readout(np.array([0.1, -0.1]), 0.0)
    res = train(spec, TrainConfig(iterations=200), data, readout=head)
    assert res.readout is not None and not np.array_equal(res.readout.w, head.w)
    assert res.history.train_loss[-1] < res.history.train_loss[0]


def test_divergence_halves_rate_and_restarts():
    # SGD at lr 1.5 on this quadratic grows ~3x per step; halving makes it contract
    res = train(linear_spec(1), TrainConfig(optimizer="sgd", learning_rate=1.5, iterations=400), linear_data())
    assert len(res.history.restarts) == 1
    step, lr = res.history.restarts[0]
    assert step % 100 != 0 and lr == 0.75
    assert res.history.steps == list(range(401))


def test_persistent_divergence_raises():
    with pytest.raises(TrainingDiverged) as info:
        train(linear_spec(1), TrainConfig(optimizer="sgd", learning_rate=100.0, iterations=300), linear_data())
    assert info.value.step < 100


def test_config_validation():
    with pytest.raises(ValueError, match="unknown training options"):
        TrainConfig.from_dict({"lr": 0.1})
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError, match="NDDE"):
        spec = ModelSpec("NDDE", 1.0, 1, init_params(FieldSignature(("current", "delay"), 1)))
        train(spec, TrainConfig(iterations=1, gradient="adjoint"), linear_data())


def test_history_csv(tmp_path):
    h = TrainHistory()
    for s in range(3):
        h.record(s, 1.0 / (s + 1))
    h.test_steps, h.test_loss = [0, 2], [{"h1": 0.5, "h10": 2.0, "h2": 1.0}, {"h1": 0.25, "h10": 1.5, "h2": 0.5}]
    h.to_csv(tmp_path / "loss.csv")
    rows = list(csv.reader(open(tmp_path / "loss.csv")))
    assert rows[0] == ["step", "train_loss", "h1", "h2", "h10"]
    assert rows[2] == ["1", "0.5", "", "", ""]
    assert rows[3][2:] == ["0.25", "0.5", "1.5"]
    with pytest.raises(ValueError):
        h.record(3, float("nan"))
