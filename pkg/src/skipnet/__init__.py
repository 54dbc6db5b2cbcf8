"""Sequential music-skip prediction with an encoder/predictor pair of stacked LSTMs."""

from .data import (
    Batch,
    FeatureSchema,
    PlaybackTrack,
    SessionRecord,
    TrackCatalog,
    build_batch,
    compute_track_skip_rates,
    encode_meta,
    encode_playback,
    load_schema,
    load_sessions,
    load_track_catalog,
    split_session,
)
from .estimators import BaselinePredictor, MajorityVoteEnsemble, SkipPredictor
from .metrics import EvalReport, baseline_predict, evaluate, majority_vote, session_average_accuracy
from .model import PROFILES, ModelConfig, ModelParams
from .synth import SynthParams, generate_corpus, synth_generate
from .tensor import Tensor, backward, grad_check, no_grad

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "BaselinePredictor",
    "EvalReport",
    "FeatureSchema",
    "MajorityVoteEnsemble",
    "ModelConfig",
    "ModelParams",
    "PROFILES",
    "PlaybackTrack",
    "SessionRecord",
    "SkipPredictor",
    "SynthParams",
    "Tensor",
    "TrackCatalog",
    "backward",
    "baseline_predict",
    "build_batch",
    "compute_track_skip_rates",
    "encode_meta",
    "encode_playback",
    "evaluate",
    "generate_corpus",
    "grad_check",
    "load_schema",
    "load_sessions",
    "load_track_catalog",
    "majority_vote",
    "no_grad",
    "session_average_accuracy",
    "split_session",
    "synth_generate",
]
