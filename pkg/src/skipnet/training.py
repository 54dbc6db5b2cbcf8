"""Mini-batch Adam training with per-epoch validation and best-model retention."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import EncodedSession, FeatureSchema, SessionRecord, TrackCatalog, collate, encode_session
from .errors import ConfigError, TrainingError
from .layers import AdamState, adam_step
from .metrics import EvalReport, evaluate
from .model import ModelConfig, ModelParams, forward, forward_loss, init_params
from .tensor import backward, no_grad

logger = logging.getLogger(__name__)


@dataclass
class TrainRunConfig:
    batch_size: int = 300
    learning_rate: float = 0.0005
    epochs: int = 10
    max_steps: int | None = None
    max_seconds: float | None = None
    seed: int = 0
    validation_fraction: float = 0.05
    checkpoint_every: int | None = None

    def validate(self) -> "TrainRunConfig":
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.validation_fraction < 1:
            raise ConfigError(f"validation_fraction must be in [0, 1), got {self.validation_fraction}")
        return self


@dataclass
class EpochLog:
    epoch: int
    steps: int
    mean_loss: float
    validation: EvalReport | None = None


@dataclass
class TrainResult:
    params: ModelParams
    final_params: ModelParams
    adam: AdamState
    losses: list[float] = field(default_factory=list)
    history: list[EpochLog] = field(default_factory=list)
    best_epoch: int | None = None
    train_keys: list[str] = field(default_factory=list)
    validation_keys: list[str] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.losses)

    @property
    def best_validation(self) -> EvalReport | None:
        for log in self.history:
            if log.epoch == self.best_epoch:
                return log.validation
        return None


def split_validation(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded disjoint (train, validation) index arrays."""
    order = np.random.default_rng([seed, 1]).permutation(n)
    n_val = int(round(fraction * n))
    if fraction > 0 and n > 1:
        n_val = min(max(n_val, 1), n - 1)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def predict_encoded(
    encoded: Sequence[EncodedSession],
    catalog: TrackCatalog,
    params: ModelParams,
    config: ModelConfig,
    batch_size: int = 512,
) -> list[np.ndarray]:
    """Second-half skip probabilities for each encoded session."""
    out = []
    with no_grad():
        for start in range(0, len(encoded), batch_size):
            chunk = encoded[start : start + batch_size]
            probs = forward(collate(chunk), catalog, params, config).data
            out.extend(probs[r, : len(e.second_ids)].copy() for r, e in enumerate(chunk))
    return out


def validation_report(
    encoded: Sequence[EncodedSession],
    sessions: Sequence[SessionRecord],
    catalog: TrackCatalog,
    params: ModelParams,
    config: ModelConfig,
    threshold: float = 0.5,
) -> EvalReport:
    probs = predict_encoded(encoded, catalog, params, config)
    preds = {s.session_id: (p > threshold).astype(int) for s, p in zip(sessions, probs)}
    return evaluate(preds, sessions)


def train(
    sessions: Sequence[SessionRecord],
    catalog: TrackCatalog,
    schema: FeatureSchema,
    model_config: ModelConfig,
    run: TrainRunConfig,
    init: ModelParams | None = None,
    on_checkpoint: Callable[[TrainResult], None] | None = None,
) -> TrainResult:
    """Fit model parameters with Adam on shuffled mini-batches.

    A seeded fraction of sessions is held out; after every epoch the
    validation mean average accuracy is computed and the best parameters so
    far are kept in ``result.params``.
    """
    run.validate()
    model_config.validate()
    for s in sessions:
        s.validate(require_labels="second")
    if not sessions:
        raise ConfigError("no training sessions")

    train_idx, val_idx = split_validation(len(sessions), run.validation_fraction, run.seed)
    encoded = [encode_session(s, catalog, schema) for s in sessions]
    train_enc = [encoded[i] for i in train_idx]
    val_enc = [encoded[i] for i in val_idx]
    val_sessions = [sessions[i] for i in val_idx]

    params = init if init is not None else init_params(
        model_config, len(catalog), catalog.n_features, schema.width, run.seed
    )
    result = TrainResult(
        params=params,
        final_params=params,
        adam=AdamState(),
        train_keys=[sessions[i].session_id for i in train_idx],
        validation_keys=[s.session_id for s in val_sessions],
    )
    rng = np.random.default_rng([run.seed, 2])
    best_maa = -math.inf
    started = time.monotonic()
    stop = False

    for epoch in range(1, run.epochs + 1):
        order = rng.permutation(len(train_enc))
        epoch_losses = []
        for start in range(0, len(order), run.batch_size):
            batch = collate([train_enc[i] for i in order[start : start + run.batch_size]])
            params.zero_grad()
            _, loss = forward_loss(batch, catalog, params, model_config)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at step {result.steps + 1}")
            backward(loss)
            result.adam = adam_step(
                params, {n: p.grad for n, p in params.items()}, result.adam, run.learning_rate
            )
            result.losses.append(value)
            epoch_losses.append(value)
            if run.max_steps is not None and result.steps >= run.max_steps:
                stop = True
            if run.max_seconds is not None and time.monotonic() - started >= run.max_seconds:
                stop = True
            if stop:
                break

        log = EpochLog(epoch, result.steps, float(np.mean(epoch_losses)))
        if val_enc:
            log.validation = validation_report(val_enc, val_sessions, catalog, params, model_config)
            maa = log.validation.mean_average_accuracy
            if maa > best_maa:
                best_maa = maa
                result.best_epoch = epoch
                result.params = params.copy()
            logger.info("epoch %d step %d loss %.4f val MAA %.4f", epoch, result.steps, log.mean_loss, maa)
        else:
            result.best_epoch = epoch
            result.params = params
            logger.info("epoch %d step %d loss %.4f", epoch, result.steps, log.mean_loss)
        result.history.append(log)
        if on_checkpoint is not None and run.checkpoint_every and epoch % run.checkpoint_every == 0:
            on_checkpoint(result)
        if stop:
            break

    result.final_params = params
    return result
