"""Layer functions built from taped primitives.

All layers are plain functions of input tensors and named parameter tensors;
nothing here owns state except :class:`AdamState`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError, NumericError, UnknownTrackError
from .tensor import Tensor

# Gate blocks inside the 4h-wide LSTM projections.
GATE_ORDER = ("input", "forget", "cell", "output")


@dataclass
class LstmParams:
    """One LSTM layer: ``Wx`` [in x 4h], ``Wh`` [h x 4h], ``b`` [4h]."""

    Wx: Tensor
    Wh: Tensor
    b: Tensor

    def __post_init__(self):
        h = self.Wh.shape[0]
        if self.Wh.shape != (h, 4 * h) or self.Wx.shape[1] != 4 * h or self.b.shape != (4 * h,):
            raise DimensionError(
                f"inconsistent LSTM shapes Wx={self.Wx.shape} Wh={self.Wh.shape} b={self.b.shape}"
            )

    @property
    def hidden_size(self) -> int:
        return self.Wh.shape[0]

    @property
    def input_size(self) -> int:
        return self.Wx.shape[0]


@dataclass
class LstmState:
    """Hidden (output) state ``h`` and cell state ``c``, both [b x h]."""

    h: Tensor
    c: Tensor

    def __post_init__(self):
        if self.h.shape != self.c.shape:
            raise DimensionError(f"hidden {self.h.shape} and cell {self.c.shape} differ")

    @classmethod
    def zeros(cls, batch: int, hidden: int) -> "LstmState":
        return cls(Tensor(np.zeros((batch, hidden))), Tensor(np.zeros((batch, hidden))))


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    n_rows = table.shape[0]
    bad = ids[(ids < 0) | (ids >= n_rows)]
    if bad.size:
        raise UnknownTrackError(int(bad[0]))
    return T.take_rows(table, ids)


_ACTIVATIONS = {"none": None, "relu": T.relu, "sigmoid": T.sigmoid, "tanh": T.tanh}


def dense(x: Tensor, W: Tensor, bias: Tensor, activation: str = "none") -> Tensor:
    if activation not in _ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    out = T.add_bias(T.matmul(x, W), bias)
    fn = _ACTIVATIONS[activation]
    return out if fn is None else fn(out)


def lstm_step(x_proj: Tensor, state: LstmState, params: LstmParams) -> LstmState:
    """One recurrence step given the precomputed input projection ``x Wx + b``."""
    h = params.hidden_size
    gates = x_proj + T.matmul(state.h, params.Wh)
    i = T.sigmoid(gates[:, 0:h])
    f = T.sigmoid(gates[:, h : 2 * h])
    g = T.tanh(gates[:, 2 * h : 3 * h])
    o = T.sigmoid(gates[:, 3 * h : 4 * h])
    c = f * state.c + i * g
    return LstmState(h=o * T.tanh(c), c=c)


def _check_sequence(inputs: Tensor, mask: np.ndarray) -> tuple[int, int]:
    if inputs.ndim != 3:
        raise DimensionError(f"expected [batch x steps x features] input, got {inputs.shape}")
    b, steps = inputs.shape[:2]
    if mask.shape != (b, steps):
        raise DimensionError(f"mask {mask.shape} does not match input steps {(b, steps)}")
    if steps < 1:
        raise ContractError("a sequence needs at least one step")
    if not np.isin(mask, (0, 1)).all():
        raise ContractError("mask entries must be 0 or 1")
    return b, steps


def lstm_sequence(
    inputs: Tensor,
    mask,
    params: LstmParams,
    init: LstmState | None = None,
    paper_padding: bool = False,
) -> tuple[Tensor, LstmState]:
    """Run one LSTM layer over ``inputs`` [b x T x in].

    With ``paper_padding`` off, a step whose mask is 0 leaves the state
    untouched and emits a zero output. With it on, padded steps are fed zero
    input vectors and processed like real steps, as a fixed-length kernel does.
    """
    mask = np.asarray(mask, dtype=np.float64)
    b, steps = _check_sequence(inputs, mask)
    if inputs.shape[2] != params.input_size:
        raise DimensionError(
            f"input width {inputs.shape[2]} does not match LSTM input size {params.input_size}"
        )
    hidden = params.hidden_size
    state = init if init is not None else LstmState.zeros(b, hidden)
    keep = mask.astype(bool)

    if paper_padding:
        inputs = T.where(keep[:, :, None], inputs, Tensor(np.zeros(inputs.shape)))
    flat = T.reshape(inputs, (b * steps, inputs.shape[2]))
    proj = T.reshape(T.add_bias(T.matmul(flat, params.Wx), params.b), (b, steps, 4 * hidden))

    zeros = Tensor(np.zeros((b, hidden)))
    outputs = []
    for t in range(steps):
        new = lstm_step(proj[:, t, :], state, params)
        if paper_padding:
            state = new
            outputs.append(new.h)
            continue
        m = keep[:, t, None]
        outputs.append(T.where(m, new.h, zeros))
        state = LstmState(h=T.where(m, new.h, state.h), c=T.where(m, new.c, state.c))
    return T.stack(outputs, axis=1), state


def stacked_lstm(
    inputs: Tensor,
    mask,
    params: Sequence[LstmParams],
    init: Sequence[LstmState] | None = None,
    paper_padding: bool = False,
) -> tuple[Tensor, list[LstmState]]:
    """Stack LSTM layers; returns the top layer's outputs and every final state."""
    if init is not None and len(init) != len(params):
        raise DimensionError(f"{len(params)} layers but {len(init)} initial states")
    for lower, upper in zip(params, params[1:]):
        if lower.hidden_size != upper.input_size:
            raise DimensionError(
                f"layer of size {lower.hidden_size} cannot feed a layer expecting {upper.input_size}"
            )
    finals = []
    x = inputs
    for depth, layer in enumerate(params):
        x, final = lstm_sequence(
            x, mask, layer, None if init is None else init[depth], paper_padding=paper_padding
        )
        finals.append(final)
    return x, finals


def attention_scores(outputs: Tensor, W_a: Tensor, b_a: Tensor) -> Tensor:
    b, steps, hidden = outputs.shape
    flat = T.reshape(outputs, (b * steps, hidden))
    return T.reshape(dense(flat, W_a, b_a), (b, steps))


def attention_weights(outputs: Tensor, mask, W_a: Tensor, b_a: Tensor) -> Tensor:
    return T.softmax_rows(attention_scores(outputs, W_a, b_a), mask=np.asarray(mask))


def attention_pool(outputs: Tensor, mask, W_a: Tensor, b_a: Tensor) -> Tensor:
    """Softmax-weighted sum of the unmasked steps of ``outputs`` [b x T x h]."""
    mask = np.asarray(mask)
    if mask.shape != outputs.shape[:2]:
        raise DimensionError(f"mask {mask.shape} vs outputs {outputs.shape}")
    if not mask.any(axis=1).all():
        raise ContractError("attention over a fully masked row")
    return T.weighted_sum_time(attention_weights(outputs, mask, W_a, b_a), outputs)


BCE_EPS = 1e-12


def bce_masked(p: Tensor, y, mask, eps: float = BCE_EPS) -> Tensor:
    """Mean binary cross entropy over positions where ``mask`` is 1."""
    y = np.asarray(y, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if p.shape != y.shape or p.shape != mask.shape:
        raise DimensionError(f"bce: p {p.shape}, y {y.shape}, mask {mask.shape}")
    count = mask.sum()
    if count == 0:
        raise ContractError("bce over an empty mask")
    pc = T.clip(p, eps, 1.0 - eps)
    ll = Tensor(y) * T.log(pc) + Tensor(1.0 - y) * T.log(Tensor(np.ones(p.shape)) - pc)
    return T.scale(T.tensor_sum(Tensor(mask) * ll), -1.0 / count)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray | None],
    state: AdamState,
    lr: float,
) -> AdamState:
    """Apply one bias-corrected Adam update to ``params`` and return the new state.

    The parameter tensors get fresh data arrays; ``state`` is left untouched.
    """
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_m, new_v = {}, {}
    updates = {}
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros(p.shape) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name}")
        m = state.m.get(name, np.zeros(p.shape))
        v = state.v.get(name, np.zeros(p.shape))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        updates[name] = p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name], new_v[name] = m, v
    for name, data in updates.items():
        params[name].data = data
    return AdamState(beta1=b1, beta2=b2, eps=state.eps, t=t, m=new_m, v=new_v)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_lstm(rng: np.random.Generator, input_size: int, hidden: int) -> dict[str, np.ndarray]:
    """Glorot kernels, zero biases except the forget-gate block at 1.0."""
    if input_size < 1 or hidden < 1:
        raise ConfigError(f"LSTM sizes must be positive, got in={input_size} h={hidden}")
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0
    return {
        "Wx": glorot_uniform(rng, input_size, 4 * hidden),
        "Wh": glorot_uniform(rng, hidden, 4 * hidden),
        "b": b,
    }
