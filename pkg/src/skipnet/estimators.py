"""scikit-learn style estimators over lists of sessions.

``X`` is always a sequence of :class:`~skipnet.data.SessionRecord` (or their
JSON dicts); labels travel inside the records, so ``y`` is ignored.
Predictions are one 0/1 vector per session covering its second half.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from .checkpoint import Checkpoint, read_checkpoint, write_checkpoint
from .data import FeatureSchema, TrackCatalog, compute_track_skip_rates, encode_session, load_track_catalog
from .errors import ConfigError, ValidationError
from .metrics import (
    BASELINE_MODES,
    EvalReport,
    SessionPrediction,
    baseline_predict,
    evaluate,
    majority_vote,
)
from .model import PROFILES, ModelConfig, ModelParams, check_params
from .tensor import Tensor
from .training import TrainRunConfig, predict_encoded, train
from .validation import check_catalog_covers, check_schema, check_sessions


class _SessionScorerMixin:
    """``score`` is mean average accuracy over the sessions' second halves."""

    def evaluate(self, X, label: str = "") -> EvalReport:
        sessions = check_sessions(X, require_labels="second")
        preds = self.predict(sessions)
        return evaluate({s.session_id: p for s, p in zip(sessions, preds)}, sessions, label=label)

    def score(self, X, y=None) -> float:
        return self.evaluate(X).mean_average_accuracy

    def predict_records(self, X) -> list[SessionPrediction]:
        sessions = check_sessions(X)
        probs = self.predict_proba(sessions)
        preds = self.predict(sessions)
        return [
            SessionPrediction(s.session_id, p.tolist(), q.tolist())
            for s, p, q in zip(sessions, preds, probs)
        ]


class SkipPredictor(_SessionScorerMixin, BaseEstimator):
    """Encoder/predictor LSTM skip model.

    Layer sizes default to ``profile`` ("desk" or "paper"); any size given
    explicitly overrides the profile.
    """

    def __init__(
        self,
        profile="desk",
        embedding_dim=None,
        track_dim=None,
        session_hidden=None,
        hidden=None,
        head_hidden=None,
        paper_padding=False,
        batch_size=300,
        learning_rate=0.0005,
        epochs=10,
        max_steps=None,
        max_seconds=None,
        validation_fraction=0.05,
        seed=0,
        threshold=0.5,
    ):
        self.profile = profile
        self.embedding_dim = embedding_dim
        self.track_dim = track_dim
        self.session_hidden = session_hidden
        self.hidden = hidden
        self.head_hidden = head_hidden
        self.paper_padding = paper_padding
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.max_steps = max_steps
        self.max_seconds = max_seconds
        self.validation_fraction = validation_fraction
        self.seed = seed
        self.threshold = threshold

    def model_config(self) -> ModelConfig:
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        overrides = {
            k: getattr(self, k)
            for k in ("embedding_dim", "track_dim", "session_hidden", "hidden", "head_hidden")
            if getattr(self, k) is not None
        }
        return replace(PROFILES[self.profile], paper_padding=bool(self.paper_padding), **overrides).validate()

    def run_config(self) -> TrainRunConfig:
        return TrainRunConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            max_steps=self.max_steps,
            max_seconds=self.max_seconds,
            seed=self.seed,
            validation_fraction=self.validation_fraction,
        ).validate()

    def fit(self, X, y=None, *, catalog: TrackCatalog, schema: FeatureSchema):
        sessions = check_sessions(X, require_labels="second")
        schema = check_schema(schema)
        check_catalog_covers(sessions, catalog)
        config = self.model_config()
        result = train(sessions, catalog, schema, config, self.run_config())
        self.catalog_ = catalog
        self.schema_ = schema
        self.config_ = config
        self.params_ = result.params
        self.train_result_ = result
        self.history_ = result.history
        self.n_steps_ = result.steps
        return self

    def predict_proba(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "params_")
        sessions = check_sessions(X)
        encoded = [encode_session(s, self.catalog_, self.schema_) for s in sessions]
        return predict_encoded(encoded, self.catalog_, self.params_, self.config_)

    def predict(self, X) -> list[np.ndarray]:
        return [(p > self.threshold).astype(int) for p in self.predict_proba(X)]

    def to_checkpoint(self) -> Checkpoint:
        check_is_fitted(self, "params_")
        result = getattr(self, "train_result_", None)
        return Checkpoint(
            config=self.config_.to_json(),
            mean=self.catalog_.mean,
            std=self.catalog_.std,
            schema_fingerprint=self.schema_.fingerprint(),
            track_ids=list(self.catalog_.track_ids),
            tensors={k: v.data for k, v in self.params_.items()},
            optimizer=None if result is None else result.adam,
            seed=self.seed,
            step=getattr(self, "n_steps_", 0),
            extra={"estimator": self.get_params(), "schema": self.schema_.to_json()},
        )

    def save(self, path) -> None:
        write_checkpoint(path, self.to_checkpoint())

    @classmethod
    def from_checkpoint(cls, ckpt, catalog, schema=None) -> "SkipPredictor":
        """Rebuild a fitted predictor.

        ``catalog`` is a path or a :class:`TrackCatalog`; it is re-standardized
        with the statistics stored in the checkpoint. ``schema`` defaults to
        the one stored in the checkpoint.
        """
        if isinstance(ckpt, (str, Path)):
            ckpt = read_checkpoint(ckpt)
        stats = (ckpt.mean, ckpt.std)
        if isinstance(catalog, TrackCatalog):
            catalog = TrackCatalog.from_raw(catalog.track_ids, catalog.raw, stats)
        else:
            catalog = load_track_catalog(catalog, stats=stats)
        if list(catalog.track_ids) != list(ckpt.track_ids):
            raise ValidationError("catalog track ids differ from the ones the model was trained with")
        schema = check_schema(schema if schema is not None else ckpt.extra["schema"])
        if schema.fingerprint() != ckpt.schema_fingerprint:
            raise ValidationError("feature schema differs from the one the model was trained with")

        est = cls(**ckpt.extra.get("estimator", {}))
        est.config_ = ModelConfig.from_json(ckpt.config)
        est.catalog_ = catalog
        est.schema_ = schema
        est.params_ = ModelParams(
            {k: Tensor(v, requires_grad=True, name=k) for k, v in ckpt.tensors.items()}
        )
        est.n_steps_ = ckpt.step
        check_params(est.params_, est.config_, catalog, schema.width)
        return est


class BaselinePredictor(_SessionScorerMixin, BaseEstimator):
    """Rule baselines: ``all_skip``, ``skip_rate`` (> 0.5 in training) or ``last_action``."""

    def __init__(self, mode="all_skip"):
        self.mode = mode

    def fit(self, X=None, y=None):
        if self.mode not in BASELINE_MODES:
            raise ConfigError(f"unknown baseline mode {self.mode!r}; choose from {BASELINE_MODES}")
        if self.mode == "skip_rate":
            if X is None:
                raise ConfigError("skip_rate baseline needs training sessions")
            self.skip_rates_ = compute_track_skip_rates(check_sessions(X))
        else:
            self.skip_rates_ = {}
        return self

    def predict(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "skip_rates_")
        return [baseline_predict(self.mode, s, self.skip_rates_) for s in check_sessions(X)]

    def predict_proba(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "skip_rates_")
        sessions = check_sessions(X)
        if self.mode != "skip_rate":
            return [p.astype(float) for p in self.predict(sessions)]
        return [
            np.array([self.skip_rates_.get(t.track_id, 1.0) for t in s.tracks[s.n_first :]])
            for s in sessions
        ]


class MajorityVoteEnsemble(_SessionScorerMixin, BaseEstimator):
    """Per-position majority vote over an odd number of fitted estimators."""

    def __init__(self, estimators=()):
        self.estimators = estimators

    def fit(self, X, y=None, **fit_params):
        if len(self.estimators) % 2 == 0:
            raise ConfigError(f"majority vote needs an odd number of models, got {len(self.estimators)}")
        self.estimators_ = [clone(est).fit(X, **fit_params) for est in self.estimators]
        return self

    @classmethod
    def from_fitted(cls, estimators) -> "MajorityVoteEnsemble":
        if len(estimators) % 2 == 0:
            raise ConfigError(f"majority vote needs an odd number of models, got {len(estimators)}")
        ens = cls(list(estimators))
        ens.estimators_ = list(estimators)
        return ens

    def member_predictions(self, X) -> list[list[np.ndarray]]:
        check_is_fitted(self, "estimators_")
        sessions = check_sessions(X)
        return [est.predict(sessions) for est in self.estimators_]

    def predict(self, X) -> list[np.ndarray]:
        members = self.member_predictions(X)
        return [majority_vote([m[i] for m in members]) for i in range(len(members[0]))]

    def predict_proba(self, X) -> list[np.ndarray]:
        """Fraction of members voting skip at each position."""
        members = self.member_predictions(X)
        return [np.mean([m[i] for m in members], axis=0) for i in range(len(members[0]))]
