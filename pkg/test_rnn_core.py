"""
Tests for the stacked RNN: initialization, forward pass, loss, BPTT
gradients, ADAM and two-pass training.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from rnnrecon.app.exceptions import NumericOverflowError, ShapeMismatchError
from rnnrecon.app.models import rnn as rnn_module
from rnnrecon.app.models.rnn import (
    AdamState,
    RnnParams,
    SequenceBatch,
    adam_step,
    bptt_grads,
    forward,
    init_params,
    mse_loss,
    predict,
    rmse,
    rmse_per_step,
    train_two_pass,
)
from rnnrecon.app.schemas.config import RnnConfig


def make_config(K=1, n_h=4, T=3, n_i=2, n_o=2, activation="tanh", **extra) -> RnnConfig:
    return RnnConfig(seq_len=T, input_size=n_i, output_size=n_o, num_layers=K, hidden_size=n_h,
                     learning_rate=0.01, max_epochs=extra.pop("max_epochs", 10),
                     hidden_activation=activation, **extra)


def random_batch(config: RnnConfig, n: int, seed: int) -> SequenceBatch:
    rng = np.random.default_rng(seed)
    return SequenceBatch(rng.normal(size=(n, config.seq_len, config.input_size)),
                         rng.normal(size=(n, config.seq_len, config.output_size)))


def randomized_params(config: RnnConfig, seed: int) -> RnnParams:
    """Initial weights with non-zero biases so every gradient path is active."""
    rng = np.random.default_rng(seed + 1000)
    params = init_params(config, seed)
    return RnnParams.from_dict({
        name: value if name.startswith("w") else rng.uniform(-0.3, 0.3, size=value.shape)
        for name, value in params.as_dict().items()
    })


def batch_loss(params: RnnParams, config: RnnConfig, batch: SequenceBatch) -> float:
    return mse_loss(predict(params, config, batch.inputs), batch.labels)


# initialization

def test_init_params_is_deterministic():
    config = make_config(n_h=64)
    first, second = init_params(config, 7), init_params(config, 7)
    for name, value in first.as_dict().items():
        assert_array_equal(value, second.as_dict()[name])


def test_init_params_biases_zero_and_weights_bounded():
    config = make_config(K=3, n_h=4)
    params = init_params(config, 3)
    for name, value in params.as_dict().items():
        if name.startswith("b"):
            assert not value.any()
        else:
            assert np.all(np.abs(value) <= 0.5)


def test_params_dict_round_trip_keeps_layout():
    config = make_config(K=3)
    params = init_params(config, 0)
    rebuilt = RnnParams.from_dict(params.as_dict())
    assert rebuilt.num_layers == 3
    assert len(rebuilt.w_stack) == 2
    assert rebuilt.shapes() == params.shapes()


# forward

def test_zero_params_give_zero_outputs():
    config = make_config(K=2, n_h=3, T=4)
    params = init_params(config, 0).zeros_like()
    x = np.random.default_rng(0).normal(size=(4, 2))
    assert not forward(params, config, x).outputs.any()


def test_single_relu_step():
    config = make_config(K=1, n_h=2, T=1, activation="relu")
    eye, zero = np.eye(2), np.zeros(2)
    params = RnnParams(w_in=eye, w_rec=(np.zeros((2, 2)),), w_stack=(), w_out=eye,
                       b_in=zero, b_rec=(zero,), b_stack=(), b_out=zero)
    cache = forward(params, config, np.array([[1.0, -1.0]]))
    assert_array_equal(cache.outputs, [[1.0, 0.0]])
    assert not cache.hidden[0, 0].any()


def test_forward_matches_unrolled_evaluation():
    config = make_config(K=3, n_h=5, T=4, n_i=2, n_o=3)
    params = randomized_params(config, 11)
    x = np.random.default_rng(5).normal(size=(4, 2))

    h = [np.zeros(5) for _ in range(3)]
    expected = []
    for t in range(4):
        h[0] = np.tanh(params.w_in @ x[t] + params.b_in + params.w_rec[0] @ h[0] + params.b_rec[0])
        for k in (1, 2):
            h[k] = np.tanh(params.w_stack[k - 1] @ h[k - 1] + params.b_stack[k - 1]
                           + params.w_rec[k] @ h[k] + params.b_rec[k])
        expected.append(params.w_out @ h[2] + params.b_out)

    assert_allclose(forward(params, config, x).outputs, np.array(expected), rtol=1e-12, atol=1e-14)


def test_forward_rejects_wrong_length():
    config = make_config(T=3)
    with pytest.raises(ShapeMismatchError):
        forward(init_params(config, 0), config, np.zeros((4, 2)))


def test_forward_names_overflow_time_step():
    config = make_config(T=3, activation="relu")
    params = init_params(config, 0)
    x = np.array([[1.0, 1.0], [np.inf, 0.0], [0.0, 0.0]])
    with pytest.raises(NumericOverflowError) as info:
        forward(params, config, x)
    assert info.value.time_step == 2


def test_predict_matches_single_sequence_forward():
    config = make_config(K=2, n_h=4, T=5)
    params = randomized_params(config, 2)
    batch = random_batch(config, 3, 4)
    batched = predict(params, config, batch.inputs)
    for n in range(3):
        assert_allclose(batched[n], forward(params, config, batch.inputs[n]).outputs, rtol=1e-13)


# loss

def test_mse_loss_examples():
    assert mse_loss(np.ones((2, 3, 2)), np.ones((2, 3, 2))) == 0.0
    assert mse_loss([[[2.0, 4.0]]], [[[1.0, 2.0]]]) == pytest.approx(2.5)


def test_mse_loss_matches_loop():
    rng = np.random.default_rng(1)
    out, lab = rng.normal(size=(3, 5, 2)), rng.normal(size=(3, 5, 2))
    total = 0.0
    for n in range(3):
        for t in range(5):
            for d in range(2):
                total += (out[n, t, d] - lab[n, t, d]) ** 2
    assert mse_loss(out, lab) == pytest.approx(total / 30, rel=1e-15)


# gradients

def finite_difference(params, config, batch, name, index, step=1e-5):
    named = params.as_dict()
    shifted = []
    for sign in (1.0, -1.0):
        copy = {key: value.copy() for key, value in named.items()}
        copy[name][index] += sign * step
        shifted.append(batch_loss(RnnParams.from_dict(copy), config, batch))
    return (shifted[0] - shifted[1]) / (2.0 * step)


@pytest.mark.parametrize("seed", range(20))
def test_bptt_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    config = make_config(K=int(rng.integers(1, 4)), n_h=int(rng.integers(2, 7)), T=int(rng.integers(2, 7)),
                         n_i=int(rng.integers(1, 4)), n_o=int(rng.integers(1, 4)))
    params = randomized_params(config, seed)
    batch = random_batch(config, 2, seed)
    grads = bptt_grads(params, config, batch).as_dict()

    for name, value in params.as_dict().items():
        for index in np.ndindex(value.shape):
            numeric = finite_difference(params, config, batch, name, index)
            exact = grads[name][index]
            assert abs(exact - numeric) <= 1e-5 * max(abs(exact), abs(numeric)) + 1e-9, (name, index)


def test_gradient_zero_at_perfect_fit():
    config = make_config(K=2, n_h=3, T=4)
    params = init_params(config, 0).zeros_like()
    batch = SequenceBatch(np.random.default_rng(0).normal(size=(2, 4, 2)), np.zeros((2, 4, 2)))
    for value in bptt_grads(params, config, batch).as_dict().values():
        assert not value.any()


def test_gradient_doubles_with_doubled_residual():
    config = make_config(K=2, n_h=3, T=4)
    params = randomized_params(config, 3)
    batch = random_batch(config, 2, 3)
    outputs = predict(params, config, batch.inputs)
    doubled = SequenceBatch(batch.inputs, 2.0 * batch.labels - outputs)
    base = bptt_grads(params, config, batch).as_dict()
    for name, value in bptt_grads(params, config, doubled).as_dict().items():
        assert_allclose(value, 2.0 * base[name], rtol=1e-10, atol=1e-14)


def test_gradient_shapes_match_params():
    config = make_config(K=3, n_h=4, T=3)
    params = init_params(config, 1)
    assert bptt_grads(params, config, random_batch(config, 2, 1)).shapes() == params.shapes()


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_bptt_matches_torch_autograd(activation):
    torch = pytest.importorskip("torch")
    config = make_config(K=3, n_h=6, T=5, n_i=3, n_o=2, activation=activation)
    params = randomized_params(config, 21)
    batch = random_batch(config, 4, 21)

    tensors = {name: torch.tensor(value, dtype=torch.float64, requires_grad=True)
               for name, value in params.as_dict().items()}
    act = torch.relu if activation == "relu" else torch.tanh
    x = torch.tensor(batch.inputs)
    h = [torch.zeros(4, 6, dtype=torch.float64) for _ in range(3)]
    outputs = []
    for t in range(5):
        h[0] = act(x[:, t] @ tensors["w_in"].T + tensors["b_in"] + h[0] @ tensors["w_rec.0"].T + tensors["b_rec.0"])
        for k in (1, 2):
            h[k] = act(h[k - 1] @ tensors[f"w_stack.{k}"].T + tensors[f"b_stack.{k}"]
                       + h[k] @ tensors[f"w_rec.{k}"].T + tensors[f"b_rec.{k}"])
        outputs.append(h[2] @ tensors["w_out"].T + tensors["b_out"])
    loss = ((torch.stack(outputs, dim=1) - torch.tensor(batch.labels)) ** 2).mean()
    loss.backward()

    assert batch_loss(params, config, batch) == pytest.approx(loss.item(), rel=1e-12)
    for name, value in bptt_grads(params, config, batch).as_dict().items():
        assert_allclose(value, tensors[name].grad.numpy(), rtol=1e-9, atol=1e-13)


# ADAM

def scalar_params(value: float) -> RnnParams:
    one = np.array([[value]])
    return RnnParams(w_in=one, w_rec=(one.copy(),), w_stack=(), w_out=one.copy(),
                     b_in=np.array([value]), b_rec=(np.array([value]),), b_stack=(), b_out=np.array([value]))


def test_adam_zero_gradient_is_no_op():
    params = init_params(make_config(K=2), 0)
    new, state = adam_step(params, params.zeros_like(), AdamState.fresh(params), lr=0.01)
    for name, value in new.as_dict().items():
        assert_array_equal(value, params.as_dict()[name])
    assert state.step_count == 1


def test_adam_first_step_closed_form():
    params = scalar_params(0.0)
    new, _ = adam_step(params, scalar_params(1.0), AdamState.fresh(params), lr=0.01)
    assert new.w_in[0, 0] == pytest.approx(-0.01 / (1.0 + 1e-8), rel=1e-15)


def test_adam_matches_scalar_oracle():
    gradients = [1.0, -2.0, 0.5]
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    theta, m, v = 0.3, 0.0, 0.0
    for t, g in enumerate(gradients, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)

    params = scalar_params(0.3)
    state = AdamState.fresh(params)
    for g in gradients:
        params, state = adam_step(params, scalar_params(g), state, lr)
    assert state.step_count == 3
    for value in params.as_dict().values():
        assert abs(value.item() - theta) <= 1e-12


def test_adam_leaves_inputs_untouched():
    params = init_params(make_config(), 0)
    before = {name: value.copy() for name, value in params.as_dict().items()}
    state = AdamState.fresh(params)
    adam_step(params, params.map(np.ones_like), state, lr=0.1)
    for name, value in params.as_dict().items():
        assert_array_equal(value, before[name])
    assert state.step_count == 0
    assert not state.v.w_in.any()


# training

def identity_task(n=8, T=5, seed=0) -> SequenceBatch:
    x = np.random.default_rng(seed).uniform(-1, 1, size=(n, T, 1))
    return SequenceBatch(x, x.copy())


def test_two_pass_retrains_to_best_epoch():
    config = make_config(K=1, n_h=8, T=5, n_i=1, n_o=1, max_epochs=60)
    batch = identity_task()
    result = train_two_pass(config, batch)
    assert len(result.loss_history) == 60
    assert result.best_epoch == int(np.argmin(result.loss_history)) + 1
    assert result.optimizer.step_count == result.best_epoch

    shorter = train_two_pass(config.model_copy(update={"max_epochs": result.best_epoch}), batch)
    assert shorter.loss_history == result.loss_history[:result.best_epoch]
    assert shorter.best_epoch == result.best_epoch
    for name, value in shorter.params.as_dict().items():
        assert_array_equal(value, result.params.as_dict()[name])


def test_two_pass_is_deterministic():
    config = make_config(K=2, n_h=4, T=5, n_i=1, n_o=1, max_epochs=15)
    first, second = train_two_pass(config, identity_task()), train_two_pass(config, identity_task())
    assert first.loss_history == second.loss_history
    for name, value in first.params.as_dict().items():
        assert_array_equal(value, second.params.as_dict()[name])


def test_decreasing_history_selects_last_epoch(monkeypatch):
    config = make_config(max_epochs=4)
    passes = []

    def fake_epochs(config, batch, epochs, label):
        passes.append(epochs)
        return None, None, [1.0 / e for e in range(1, epochs + 1)]

    monkeypatch.setattr(rnn_module, "_run_epochs", fake_epochs)
    result = train_two_pass(config, random_batch(config, 2, 0))
    assert result.best_epoch == 4
    assert passes == [4, 4]


def test_identity_task_learns():
    config = make_config(K=1, n_h=8, T=5, n_i=1, n_o=1, max_epochs=200)
    result = train_two_pass(config, identity_task())
    assert min(result.loss_history) < 0.1 * result.loss_history[0]


def test_instance_mode_updates_once_per_sequence():
    config = make_config(K=1, n_h=4, T=5, n_i=1, n_o=1, max_epochs=5, batch_mode="instance")
    result = train_two_pass(config, identity_task(n=3))
    assert result.optimizer.step_count == 3 * result.best_epoch


def test_training_rejects_empty_batch():
    config = make_config(T=3)
    with pytest.raises(ShapeMismatchError):
        train_two_pass(config, SequenceBatch(np.zeros((0, 3, 2)), np.zeros((0, 3, 2))))


# RMSE

def test_rmse_examples():
    assert rmse(np.ones((2, 3, 2)), np.ones((2, 3, 2))) == 0.0
    assert rmse([[[3.0, 4.0], [0.0, 0.0]]], np.zeros((1, 2, 2))) == pytest.approx(5.0)


def test_rmse_matches_loop():
    rng = np.random.default_rng(9)
    pred, truth = rng.normal(size=(4, 6, 3)), rng.normal(size=(4, 6, 3))
    total = sum(np.sum((pred[n] - truth[n]) ** 2) for n in range(4))
    assert rmse(pred, truth) == pytest.approx(np.sqrt(total / 4), rel=1e-15)


def test_rmse_per_step_counts_every_time_step():
    pred = np.zeros((2, 4, 2))
    truth = np.full((2, 4, 2), 3.0)
    assert rmse_per_step(pred, truth) == pytest.approx(np.sqrt(18.0))
    assert rmse(pred, truth) == pytest.approx(np.sqrt(72.0))
