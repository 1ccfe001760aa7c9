"""
From-scratch stacked recurrent network.

Forward pass, mean-squared loss, exact backpropagation through time, ADAM
updates and the two-pass (search, then retrain) epoch selection procedure.
Everything is float64 numpy; sequences are batched as (N, T, d) arrays and
one parameter set is shared by every time-step.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from rnnrecon.app.exceptions import NumericOverflowError, ShapeMismatchError
from rnnrecon.app.schemas.config import RnnConfig


logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence[np.ndarray]]


@dataclass(frozen=True, eq=False)
class RnnParams:
    """
    Weights and biases of a K-layer stacked RNN.

    ``w_stack[k - 1]`` / ``b_stack[k - 1]`` connect layer k-1 to layer k
    (0-based layers, so both tuples hold K-1 entries).
    """
    w_in: np.ndarray
    w_rec: Tuple[np.ndarray, ...]
    w_stack: Tuple[np.ndarray, ...]
    w_out: np.ndarray
    b_in: np.ndarray
    b_rec: Tuple[np.ndarray, ...]
    b_stack: Tuple[np.ndarray, ...]
    b_out: np.ndarray

    @property
    def num_layers(self) -> int:
        return len(self.w_rec)

    def as_dict(self) -> Dict[str, np.ndarray]:
        """Flat, ordered name -> array mapping (checkpoint and optimizer view)."""
        named = {"w_in": self.w_in, "b_in": self.b_in}
        for k in range(self.num_layers):
            named[f"w_rec.{k}"] = self.w_rec[k]
            named[f"b_rec.{k}"] = self.b_rec[k]
            if k > 0:
                named[f"w_stack.{k}"] = self.w_stack[k - 1]
                named[f"b_stack.{k}"] = self.b_stack[k - 1]
        named["w_out"] = self.w_out
        named["b_out"] = self.b_out
        return named

    @classmethod
    def from_dict(cls, named: Dict[str, np.ndarray]) -> "RnnParams":
        num_layers = sum(1 for key in named if key.startswith("w_rec."))
        return cls(
            w_in=named["w_in"],
            w_rec=tuple(named[f"w_rec.{k}"] for k in range(num_layers)),
            w_stack=tuple(named[f"w_stack.{k}"] for k in range(1, num_layers)),
            w_out=named["w_out"],
            b_in=named["b_in"],
            b_rec=tuple(named[f"b_rec.{k}"] for k in range(num_layers)),
            b_stack=tuple(named[f"b_stack.{k}"] for k in range(1, num_layers)),
            b_out=named["b_out"],
        )

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: array.shape for name, array in self.as_dict().items()}

    def map(self, fn) -> "RnnParams":
        return RnnParams.from_dict({name: fn(array) for name, array in self.as_dict().items()})

    def zeros_like(self) -> "RnnParams":
        return self.map(np.zeros_like)


@dataclass(frozen=True, eq=False)
class SequenceBatch:
    """N input sequences (N, T, N_i) with their labels (N, T, N_o)."""
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.float64)
        if inputs.ndim != 3 or labels.ndim != 3:
            raise ShapeMismatchError(
                f"batch arrays must be (N, T, d); got inputs {inputs.shape}, labels {labels.shape}"
            )
        if inputs.shape[:2] != labels.shape[:2]:
            raise ShapeMismatchError(
                f"inputs {inputs.shape} and labels {labels.shape} differ in count or length"
            )
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, index: Union[int, slice]) -> "SequenceBatch":
        if isinstance(index, int):
            index = slice(index, index + 1)
        return SequenceBatch(self.inputs[index], self.labels[index])


@dataclass(frozen=True, eq=False)
class ForwardCache:
    """
    Intermediates of a forward pass.

    For a batch: hidden (K, T+1, N, N_h), preactivations (K, T, N, N_h),
    outputs (T, N, N_o). ``forward`` on a single sequence drops the N axis.
    ``hidden[k][0]`` is the zero initial state.
    """
    hidden: np.ndarray
    preactivations: np.ndarray
    outputs: np.ndarray


@dataclass(frozen=True, eq=False)
class AdamState:
    """ADAM moment accumulators, same layout as the parameters."""
    m: RnnParams
    v: RnnParams
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, params: RnnParams, beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0, beta1, beta2, epsilon)


@dataclass
class TrainingResult:
    """Outcome of ``train_two_pass``."""
    params: RnnParams
    loss_history: List[float]
    best_epoch: int
    optimizer: AdamState


def expected_shapes(config: RnnConfig) -> Dict[str, Tuple[int, ...]]:
    n_h, n_i, n_o = config.hidden_size, config.input_size, config.output_size
    shapes = {"w_in": (n_h, n_i), "b_in": (n_h,)}
    for k in range(config.num_layers):
        shapes[f"w_rec.{k}"] = (n_h, n_h)
        shapes[f"b_rec.{k}"] = (n_h,)
        if k > 0:
            shapes[f"w_stack.{k}"] = (n_h, n_h)
            shapes[f"b_stack.{k}"] = (n_h,)
    shapes["w_out"] = (n_o, n_h)
    shapes["b_out"] = (n_o,)
    return shapes


def check_params(params: RnnParams, config: RnnConfig) -> None:
    if params.shapes() != expected_shapes(config):
        raise ShapeMismatchError(
            f"parameter shapes {params.shapes()} do not match config {expected_shapes(config)}"
        )


def init_params(config: RnnConfig, seed: int) -> RnnParams:
    """
    Draw weights i.i.d. uniform on [-1/sqrt(N_h), 1/sqrt(N_h)]; biases are zero.

    Draw order is fixed (input, recurrent, stacking, output), so a seed
    reproduces the parameters bit for bit.
    """
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(config.hidden_size)
    shapes = expected_shapes(config)

    def draw(name: str) -> np.ndarray:
        return rng.uniform(-bound, bound, size=shapes[name])

    K = config.num_layers
    w_in = draw("w_in")
    w_rec = tuple(draw(f"w_rec.{k}") for k in range(K))
    w_stack = tuple(draw(f"w_stack.{k}") for k in range(1, K))
    w_out = draw("w_out")

    zeros = np.zeros(config.hidden_size)
    return RnnParams(
        w_in=w_in,
        w_rec=w_rec,
        w_stack=w_stack,
        w_out=w_out,
        b_in=zeros.copy(),
        b_rec=tuple(zeros.copy() for _ in range(K)),
        b_stack=tuple(zeros.copy() for _ in range(1, K)),
        b_out=np.zeros(config.output_size),
    )


def _activate(a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(a, 0.0)
    return np.tanh(a)


def _activation_grad(a: np.ndarray, h: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (a > 0.0).astype(np.float64)
    return 1.0 - h * h


def _forward_batch(params: RnnParams, config: RnnConfig, X: np.ndarray) -> ForwardCache:
    N, T, n_i = X.shape
    if T != config.seq_len or n_i != config.input_size:
        raise ShapeMismatchError(
            f"input of shape (T={T}, N_i={n_i}) does not match seq_len={config.seq_len}, "
            f"input_size={config.input_size}"
        )
    K, n_h = config.num_layers, config.hidden_size
    kind = config.hidden_activation

    hidden = np.zeros((K, T + 1, N, n_h))
    pre = np.zeros((K, T, N, n_h))
    xs = X.transpose(1, 0, 2)
    # input projection does not depend on the recurrence
    drive = xs @ params.w_in.T + params.b_in

    for t in range(1, T + 1):
        for k in range(K):
            if k == 0:
                a = drive[t - 1] + hidden[0, t - 1] @ params.w_rec[0].T + params.b_rec[0]
            else:
                a = (hidden[k - 1, t] @ params.w_stack[k - 1].T + params.b_stack[k - 1]
                     + hidden[k, t - 1] @ params.w_rec[k].T + params.b_rec[k])
            pre[k, t - 1] = a
            hidden[k, t] = _activate(a, kind)
        if not np.isfinite(pre[:, t - 1]).all():
            raise NumericOverflowError(f"non-finite hidden preactivation at time-step {t}", time_step=t)

    outputs = hidden[K - 1, 1:] @ params.w_out.T + params.b_out
    if not np.isfinite(outputs).all():
        t = int(np.argwhere(~np.isfinite(outputs))[0, 0]) + 1
        raise NumericOverflowError(f"non-finite output at time-step {t}", time_step=t)
    return ForwardCache(hidden=hidden, preactivations=pre, outputs=outputs)


def forward(params: RnnParams, config: RnnConfig, x: np.ndarray) -> ForwardCache:
    """
    Run one sequence x of shape (T, N_i) through the network.

    Args:
        params: Network parameters
        config: Network configuration
        x: Input sequence

    Returns:
        ForwardCache with hidden (K, T+1, N_h), preactivations (K, T, N_h)
        and outputs (T, N_o)
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatchError(f"expected a (T, N_i) sequence, got shape {x.shape}")
    check_params(params, config)
    cache = _forward_batch(params, config, x[None])
    return ForwardCache(
        hidden=cache.hidden[:, :, 0],
        preactivations=cache.preactivations[:, :, 0],
        outputs=cache.outputs[:, 0],
    )


def predict(params: RnnParams, config: RnnConfig, inputs: np.ndarray) -> np.ndarray:
    """Outputs (N, T, N_o) for a batch of input sequences (N, T, N_i)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 3:
        raise ShapeMismatchError(f"expected (N, T, N_i) inputs, got shape {inputs.shape}")
    check_params(params, config)
    return _forward_batch(params, config, inputs).outputs.transpose(1, 0, 2)


def _as_array(values: ArrayLike) -> np.ndarray:
    return np.asarray(values, dtype=np.float64)


def mse_loss(outputs: ArrayLike, labels: ArrayLike) -> float:
    """Mean of squared differences over every instance, time-step and output dimension."""
    outputs, labels = _as_array(outputs), _as_array(labels)
    if outputs.shape != labels.shape:
        raise ShapeMismatchError(f"outputs {outputs.shape} and labels {labels.shape} differ")
    return float(np.mean((outputs - labels) ** 2))


def _loss_and_grads(params: RnnParams, config: RnnConfig, batch: SequenceBatch) -> Tuple[float, RnnParams]:
    X, Y = batch.inputs, batch.labels
    if Y.shape[2] != config.output_size:
        raise ShapeMismatchError(f"labels have {Y.shape[2]} channels, config expects {config.output_size}")
    cache = _forward_batch(params, config, X)
    K, kind = config.num_layers, config.hidden_activation
    N, T, n_o = Y.shape

    ys = Y.transpose(1, 0, 2)
    residual = cache.outputs - ys
    loss = float(np.mean(residual ** 2))
    dy = 2.0 * residual / (N * T * n_o)

    hidden, pre = cache.hidden, cache.preactivations
    g_w_out = np.einsum("tno,tnh->oh", dy, hidden[K - 1, 1:])
    g_b_out = dy.sum(axis=(0, 1))
    dh_top = dy @ params.w_out

    g_w_rec = [np.zeros_like(w) for w in params.w_rec]
    g_b_rec = [np.zeros_like(b) for b in params.b_rec]
    g_w_stack = [np.zeros_like(w) for w in params.w_stack]
    g_b_stack = [np.zeros_like(b) for b in params.b_stack]
    # gradient arriving at h_k(t) from a_k(t+1)
    carry = [np.zeros((N, config.hidden_size)) for _ in range(K)]
    d_first = np.zeros((T, N, config.hidden_size))

    for t in reversed(range(T)):
        dh = dh_top[t] + carry[K - 1]
        for k in reversed(range(K)):
            da = dh * _activation_grad(pre[k, t], hidden[k, t + 1], kind)
            g_w_rec[k] += da.T @ hidden[k, t]
            g_b_rec[k] += da.sum(axis=0)
            carry[k] = da @ params.w_rec[k]
            if k > 0:
                g_w_stack[k - 1] += da.T @ hidden[k - 1, t + 1]
                g_b_stack[k - 1] += da.sum(axis=0)
                dh = da @ params.w_stack[k - 1] + carry[k - 1]
            else:
                d_first[t] = da

    g_w_in = np.einsum("tnh,tni->hi", d_first, X.transpose(1, 0, 2))
    g_b_in = d_first.sum(axis=(0, 1))

    grads = RnnParams(
        w_in=g_w_in,
        w_rec=tuple(g_w_rec),
        w_stack=tuple(g_w_stack),
        w_out=g_w_out,
        b_in=g_b_in,
        b_rec=tuple(g_b_rec),
        b_stack=tuple(g_b_stack),
        b_out=g_b_out,
    )
    for name, g in grads.as_dict().items():
        if not np.isfinite(g).all():
            raise NumericOverflowError(f"non-finite gradient for {name}")
    return loss, grads


def bptt_grads(params: RnnParams, config: RnnConfig, batch: SequenceBatch) -> RnnParams:
    """Exact gradient of ``mse_loss`` over the batch with respect to every weight and bias."""
    if len(batch) == 0:
        raise ShapeMismatchError("cannot differentiate over an empty batch")
    check_params(params, config)
    return _loss_and_grads(params, config, batch)[1]


def adam_step(params: RnnParams, grads: RnnParams, state: AdamState, lr: float) -> Tuple[RnnParams, AdamState]:
    """
    One bias-corrected ADAM update.

    Returns new parameter and optimizer objects; the inputs are not modified.
    """
    if params.shapes() != grads.shapes() or params.shapes() != state.m.shapes():
        raise ShapeMismatchError("parameters, gradients and optimizer state differ in shape")

    step = state.step_count + 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    bc1 = 1.0 - b1 ** step
    bc2 = 1.0 - b2 ** step

    p_named, g_named = params.as_dict(), grads.as_dict()
    m_named, v_named = state.m.as_dict(), state.v.as_dict()
    new_p, new_m, new_v = {}, {}, {}
    for name, p in p_named.items():
        g = g_named[name]
        m = b1 * m_named[name] + (1.0 - b1) * g
        v = b2 * v_named[name] + (1.0 - b2) * (g * g)
        new_p[name] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_m[name] = m
        new_v[name] = v

    new_state = AdamState(
        m=RnnParams.from_dict(new_m),
        v=RnnParams.from_dict(new_v),
        step_count=step,
        beta1=b1,
        beta2=b2,
        epsilon=eps,
    )
    return RnnParams.from_dict(new_p), new_state


def _run_epochs(config: RnnConfig, batch: SequenceBatch, epochs: int, label: str) -> Tuple[RnnParams, AdamState, List[float]]:
    params = init_params(config, config.rng_seed)
    state = AdamState.fresh(params, config.beta1, config.beta2, config.epsilon)
    history: List[float] = []

    logger.info("%s: %d epochs, %d sequences, batch mode '%s'", label, epochs, len(batch), config.batch_mode)
    for epoch in range(1, epochs + 1):
        try:
            if config.batch_mode == "full":
                loss, grads = _loss_and_grads(params, config, batch)
                params, state = adam_step(params, grads, state, config.learning_rate)
            else:
                losses = []
                for n in range(len(batch)):
                    loss_n, grads = _loss_and_grads(params, config, batch.subset(n))
                    params, state = adam_step(params, grads, state, config.learning_rate)
                    losses.append(loss_n)
                loss = float(np.mean(losses))
        except NumericOverflowError as exc:
            raise NumericOverflowError(f"training diverged at epoch {epoch}: {exc}", epoch=epoch) from exc

        if not np.isfinite(loss):
            raise NumericOverflowError(f"non-finite loss at epoch {epoch}", epoch=epoch)
        history.append(loss)
        if epoch % config.log_every == 0:
            logger.debug("%s epoch %d loss %.6e", label, epoch, loss)

    logger.info("%s finished, last loss %.6e", label, history[-1])
    return params, state, history


def train_two_pass(config: RnnConfig, train: SequenceBatch) -> TrainingResult:
    """
    Search for the best epoch count, then retrain for exactly that many epochs.

    ``loss_history[e - 1]`` is the training loss measured during epoch e
    (before that epoch's final update). Ties in the minimum go to the
    earliest epoch. Both passes start from ``config.rng_seed``.

    Args:
        config: Network and optimizer configuration
        train: Training sequences

    Returns:
        TrainingResult with the retrained parameters, the first-pass loss
        history and the selected epoch (1-based)
    """
    if len(train) == 0:
        raise ShapeMismatchError("training batch is empty")
    _, _, history = _run_epochs(config, train, config.max_epochs, "search pass")
    best_epoch = int(np.argmin(history)) + 1
    logger.info("best epoch %d (loss %.6e)", best_epoch, history[best_epoch - 1])

    params, state, _ = _run_epochs(config, train, best_epoch, "retrain pass")
    return TrainingResult(params=params, loss_history=history, best_epoch=best_epoch, optimizer=state)


def rmse(predicted: ArrayLike, truth: ArrayLike) -> float:
    """
    sqrt((1/|Y|) * sum_n ||y_n - yhat_n||_F^2) over a set of sequences.

    The leading axis indexes the sequences.
    """
    predicted, truth = _as_array(predicted), _as_array(truth)
    if predicted.shape != truth.shape:
        raise ShapeMismatchError(f"predicted {predicted.shape} and truth {truth.shape} differ")
    if predicted.ndim == 0 or predicted.shape[0] == 0:
        raise ShapeMismatchError("rmse needs at least one sequence")
    squared = (predicted - truth) ** 2
    per_sequence = squared.reshape(squared.shape[0], -1).sum(axis=1)
    return float(np.sqrt(per_sequence.mean()))


def rmse_per_step(predicted: ArrayLike, truth: ArrayLike) -> float:
    """RMSE treating every time-step of every (N, T, d) sequence as one observation."""
    predicted, truth = _as_array(predicted), _as_array(truth)
    if predicted.shape != truth.shape or predicted.ndim != 3:
        raise ShapeMismatchError(f"expected equal (N, T, d) arrays, got {predicted.shape} and {truth.shape}")
    n, t, d = predicted.shape
    return rmse(predicted.reshape(n * t, 1, d), truth.reshape(n * t, 1, d))
