"""The encoder/predictor skip network as a differentiable forward pass.

Data flow for a :class:`~skipnet.data.Batch`::

    track ids --(fixed features ++ learned embedding, dense+relu)--> track vectors
    all session tracks --LSTM--> attention pool --> session vector
    [meta ++ session] --4 linear maps--> initial (c, h) of both encoder layers
    first half [track ++ playback] --2-layer LSTM--> final encoder state
    second half [track ++ position] --2-layer LSTM from encoder state--> relu --> sigmoid
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from . import tensor as T
from .data import META_WIDTH, POSITION_WIDTH, Batch, TrackCatalog
from .errors import ConfigError, ContractError, DimensionError
from .layers import (
    LstmParams,
    LstmState,
    attention_pool,
    bce_masked,
    dense,
    embedding_lookup,
    glorot_uniform,
    init_lstm,
    lstm_sequence,
    stacked_lstm,
)
from .tensor import Tensor

LEARNED_INIT_RANGE = 0.05


@dataclass(frozen=True)
class ModelConfig:
    """Layer sizes. ``hidden`` is shared by both stacked LSTMs and all their layers."""

    embedding_dim: int = 50
    track_dim: int = 350
    session_hidden: int = 100
    hidden: int = 500
    head_hidden: int = 500
    layers: int = 2
    paper_padding: bool = False

    def validate(self) -> "ModelConfig":
        for name in ("embedding_dim", "track_dim", "session_hidden", "hidden", "head_hidden", "layers"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        return self

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj) -> "ModelConfig":
        known = {k: obj[k] for k in cls.__dataclass_fields__ if k in obj}
        return cls(**known).validate()


PROFILES = {
    "paper": ModelConfig(),
    "desk": ModelConfig(embedding_dim=5, track_dim=35, session_hidden=10, hidden=50, head_hidden=50),
}


class ModelParams(dict):
    """Named parameter tensors, in a stable insertion order."""

    def lstm(self, prefix: str) -> LstmParams:
        return LstmParams(self[f"{prefix}.Wx"], self[f"{prefix}.Wh"], self[f"{prefix}.b"])

    def stack(self, prefix: str, layers: int) -> list[LstmParams]:
        return [self.lstm(f"{prefix}.{l}") for l in range(1, layers + 1)]

    def copy(self) -> "ModelParams":
        return ModelParams({k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.items()})

    def zero_grad(self) -> None:
        for p in self.values():
            p.zero_grad()

    def group(self, prefix: str) -> list[str]:
        return [k for k in self if k == prefix or k.startswith(prefix + ".")]

    def n_values(self) -> int:
        return sum(p.size for p in self.values())


def param_shapes(config: ModelConfig, n_tracks: int, n_fixed: int, playback_width: int) -> dict[str, tuple]:
    c = config
    shapes = {
        "track.E_learned": (n_tracks, c.embedding_dim),
        "track.W": (n_fixed + c.embedding_dim, c.track_dim),
        "track.b": (c.track_dim,),
        "session.lstm.Wx": (c.track_dim, 4 * c.session_hidden),
        "session.lstm.Wh": (c.session_hidden, 4 * c.session_hidden),
        "session.lstm.b": (4 * c.session_hidden,),
        "session.attn.W": (c.session_hidden, 1),
        "session.attn.b": (1,),
    }
    state_in = META_WIDTH + c.session_hidden
    for l in range(1, c.layers + 1):
        # init_c.* produces the starting cell state, init_h.* the starting
        # hidden output of layer l.
        shapes[f"encoder.init_c.{l}.W"] = (state_in, c.hidden)
        shapes[f"encoder.init_c.{l}.b"] = (c.hidden,)
        shapes[f"encoder.init_h.{l}.W"] = (state_in, c.hidden)
        shapes[f"encoder.init_h.{l}.b"] = (c.hidden,)
    for net, first_in in (("encoder", c.track_dim + playback_width), ("predictor", c.track_dim + POSITION_WIDTH)):
        for l in range(1, c.layers + 1):
            width = first_in if l == 1 else c.hidden
            shapes[f"{net}.lstm.{l}.Wx"] = (width, 4 * c.hidden)
            shapes[f"{net}.lstm.{l}.Wh"] = (c.hidden, 4 * c.hidden)
            shapes[f"{net}.lstm.{l}.b"] = (4 * c.hidden,)
    shapes["head.W1"] = (c.hidden, c.head_hidden)
    shapes["head.b1"] = (c.head_hidden,)
    shapes["head.W2"] = (c.head_hidden, 1)
    shapes["head.b2"] = (1,)
    return shapes


def init_params(config: ModelConfig, n_tracks: int, n_fixed: int, playback_width: int, seed: int) -> ModelParams:
    """Draw every parameter from a generator seeded with ``seed``.

    Learned track embeddings are uniform in [-0.05, 0.05], kernels are
    Glorot-uniform, biases are zero except LSTM forget gates (1.0).
    """
    config.validate()
    if n_tracks < 1 or n_fixed < 0 or playback_width < 0:
        raise ConfigError(f"bad data dimensions V={n_tracks} F={n_fixed} P={playback_width}")
    rng = np.random.default_rng(seed)
    shapes = param_shapes(config, n_tracks, n_fixed, playback_width)
    params = ModelParams()
    for name, shape in shapes.items():
        if name in params:
            continue
        if name.endswith(".Wx"):
            prefix = name[: -len(".Wx")]
            lstm = init_lstm(rng, shape[0], shape[1] // 4)
            for part in ("Wx", "Wh", "b"):
                params[f"{prefix}.{part}"] = Tensor(lstm[part], requires_grad=True, name=f"{prefix}.{part}")
            continue
        if name == "track.E_learned":
            data = rng.uniform(-LEARNED_INIT_RANGE, LEARNED_INIT_RANGE, size=shape)
        elif len(shape) == 2:
            data = glorot_uniform(rng, *shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return ModelParams({k: params[k] for k in shapes})


def check_params(params: ModelParams, config: ModelConfig, catalog: TrackCatalog, playback_width: int) -> None:
    expected = param_shapes(config, len(catalog), catalog.n_features, playback_width)
    if set(expected) != set(params):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise DimensionError(f"parameter names differ from config: missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise DimensionError(f"{name} has shape {params[name].shape}, config implies {shape}")


def track_embed(ids, catalog: TrackCatalog, params: ModelParams) -> Tensor:
    """ReLU(W [fixed ++ learned] + b) for each track index in ``ids`` (any shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    flat = ids.reshape(-1)
    fixed = embedding_lookup(Tensor(catalog.features), flat)
    learned = embedding_lookup(params["track.E_learned"], flat)
    out = dense(T.concat([fixed, learned]), params["track.W"], params["track.b"], "relu")
    return T.reshape(out, ids.shape + (out.shape[1],))


def session_encode(ids, mask, catalog: TrackCatalog, params: ModelParams, config: ModelConfig) -> Tensor:
    """Attention-pooled LSTM outputs over every track of the session."""
    mask = np.asarray(mask, dtype=np.float64)
    if not mask.any(axis=1).all():
        raise ContractError("session encoding of a fully masked session")
    tracks = track_embed(ids, catalog, params)
    outputs, _ = lstm_sequence(tracks, mask, params.lstm("session.lstm"), paper_padding=config.paper_padding)
    return attention_pool(outputs, mask, params["session.attn.W"], params["session.attn.b"])


def initial_state(meta, session: Tensor, params: ModelParams, config: ModelConfig) -> list[LstmState]:
    z = T.concat([Tensor(np.asarray(meta, dtype=np.float64)), session])
    states = []
    for l in range(1, config.layers + 1):
        c = dense(z, params[f"encoder.init_c.{l}.W"], params[f"encoder.init_c.{l}.b"])
        h = dense(z, params[f"encoder.init_h.{l}.W"], params[f"encoder.init_h.{l}.b"])
        states.append(LstmState(h=h, c=c))
    return states


def playback_encode(batch: Batch, session: Tensor, catalog: TrackCatalog, params: ModelParams, config: ModelConfig) -> list[LstmState]:
    """Final state of the encoder stack after reading the first half."""
    init = initial_state(batch.meta, session, params, config)
    tracks = track_embed(batch.enc_ids, catalog, params)
    inputs = T.concat([tracks, Tensor(batch.playback)])
    _, finals = stacked_lstm(
        inputs, batch.enc_mask, params.stack("encoder.lstm", config.layers), init, paper_padding=config.paper_padding
    )
    return finals


def predict_second_half(batch: Batch, state_enc: list[LstmState], catalog: TrackCatalog, params: ModelParams, config: ModelConfig) -> Tensor:
    """Skip probabilities [b x steps]; padded steps hold values to be ignored."""
    tracks = track_embed(batch.pred_ids, catalog, params)
    inputs = T.concat([tracks, Tensor(batch.positions)])
    outputs, _ = stacked_lstm(
        inputs, batch.pred_mask, params.stack("predictor.lstm", config.layers), state_enc,
        paper_padding=config.paper_padding,
    )
    b, steps, hidden = outputs.shape
    flat = T.reshape(outputs, (b * steps, hidden))
    hid = dense(flat, params["head.W1"], params["head.b1"], "relu")
    prob = dense(hid, params["head.W2"], params["head.b2"], "sigmoid")
    return T.reshape(prob, (b, steps))


def forward(batch: Batch, catalog: TrackCatalog, params: ModelParams, config: ModelConfig) -> Tensor:
    session = session_encode(batch.session_ids, batch.session_mask, catalog, params, config)
    state_enc = playback_encode(batch, session, catalog, params, config)
    return predict_second_half(batch, state_enc, catalog, params, config)


def forward_loss(batch: Batch, catalog: TrackCatalog, params: ModelParams, config: ModelConfig) -> tuple[Tensor, Tensor]:
    """Probabilities and the masked binary cross entropy against the labels."""
    if (batch.label_mask != batch.pred_mask).any():
        raise ContractError("training batch has unlabelled second-half tracks")
    probs = forward(batch, catalog, params, config)
    return probs, bce_masked(probs, batch.labels, batch.pred_mask)


def with_padding_mode(config: ModelConfig, paper_padding: bool) -> ModelConfig:
    return replace(config, paper_padding=paper_padding)
