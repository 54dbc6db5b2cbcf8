"""Seeded synthetic listening sessions in the ingestion schema.

Each track has a latent taste vector; its observable features are a noisy
linear map of that vector. Each session draws a user taste vector, a skip
propensity and a position-decay rate, picks tracks it has affinity for, and
samples skips from

    sigmoid(bias - alpha * taste + beta * decay * position + gamma * prev_skip)

where ``taste`` is <user, track> minus its mean over the session's tracks,
``position`` is scaled to [-1, 1] and ``prev_skip`` is in {-1, +1} (0 on the
first track). Playback categoricals echo the previous and current skip, so
the observed first half is informative about the second.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import (
    MAX_LENGTH,
    MIN_LENGTH,
    FeatureSchema,
    PlaybackTrack,
    SessionRecord,
    write_schema,
    write_sessions,
    write_track_catalog,
)
from .errors import ConfigError

SYNTH_SCHEMA = FeatureSchema(
    categorical={
        "reason_start": ("trackdone", "fwdbtn", "clickrow", "playbtn"),
        "reason_end": ("trackdone", "fwdbtn", "endplay"),
        "shuffle": ("false", "true"),
        "context_type": ("editorial_playlist", "user_collection", "radio", "catalog"),
    },
    numeric=("hour_of_day", "pause_before_play"),
)


@dataclass(frozen=True)
class SynthParams:
    alpha: float = 3.0
    beta: float = 0.5
    gamma: float = 0.5
    bias_scale: float = 1.5
    affinity: float = 1.0
    latent_dim: int = 8
    n_features: int = 12
    feature_noise: float = 0.3

    def validate(self) -> "SynthParams":
        if self.latent_dim < 1 or self.n_features < 1:
            raise ConfigError("latent_dim and n_features must be positive")
        if self.feature_noise < 0 or self.bias_scale < 0:
            raise ConfigError("feature_noise and bias_scale must be non-negative")
        for name, value in asdict(self).items():
            if not np.isfinite(value):
                raise ConfigError(f"{name} must be finite")
        return self


@dataclass
class SynthCorpus:
    track_ids: list[str]
    raw_features: np.ndarray
    latents: np.ndarray
    sessions: list[SessionRecord]
    schema: FeatureSchema = SYNTH_SCHEMA


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def generate_corpus(n_sessions: int, n_tracks: int, seed: int, params: SynthParams | None = None) -> SynthCorpus:
    params = (params or SynthParams()).validate()
    if n_sessions < 1:
        raise ConfigError(f"n_sessions must be >= 1, got {n_sessions}")
    if n_tracks < 2:
        raise ConfigError(f"n_tracks must be >= 2, got {n_tracks}")
    rng = np.random.default_rng(seed)
    d, nf = params.latent_dim, params.n_features

    latents = rng.normal(size=(n_tracks, d))
    mixing = rng.normal(size=(d, nf)) / np.sqrt(d)
    raw = latents @ mixing + params.feature_noise * rng.normal(size=(n_tracks, nf))
    raw = raw * rng.uniform(0.5, 5.0, size=nf) + rng.uniform(-10.0, 10.0, size=nf)
    raw = np.round(raw, 6)
    popularity = rng.normal(size=n_tracks)
    track_ids = [f"t{i:05d}" for i in range(n_tracks)]

    starts = SYNTH_SCHEMA.categorical["reason_start"]
    contexts = SYNTH_SCHEMA.categorical["context_type"]
    sessions = []
    for s in range(n_sessions):
        user = rng.normal(size=d)
        length = int(rng.integers(MIN_LENGTH, MAX_LENGTH + 1))
        premium = bool(rng.random() < 0.6)
        day = int(rng.integers(7))
        bias = params.bias_scale * rng.normal()
        decay = rng.uniform(0.0, 1.0)
        shuffle = "true" if rng.random() < 0.4 else "false"
        context = contexts[int(rng.integers(len(contexts)))]
        hour = round(int(rng.integers(24)) / 23.0, 6)

        taste_all = latents @ user / np.sqrt(d)
        pick = params.affinity * taste_all + popularity
        pick = np.exp(pick - pick.max())
        chosen = rng.choice(n_tracks, size=length, p=pick / pick.sum())

        taste = taste_all[chosen] - taste_all[chosen].mean()
        tracks = []
        prev = None
        for j, idx in enumerate(chosen):
            position = 2.0 * j / (length - 1) - 1.0
            logit = bias - params.alpha * taste[j] + params.beta * decay * position
            if prev is not None:
                logit += params.gamma * (2 * prev - 1)
            skip = int(rng.random() < _sigmoid(logit))
            if prev is None:
                start = starts[2 + int(rng.integers(2))]
            elif rng.random() < 0.9:
                start = "fwdbtn" if prev else "trackdone"
            else:
                start = "clickrow"
            end = ("fwdbtn" if rng.random() < 0.8 else "endplay") if skip else "trackdone"
            playback = {
                "reason_start": start,
                "reason_end": end,
                "shuffle": shuffle,
                "context_type": context,
                "hour_of_day": hour,
                "pause_before_play": int(rng.random() < 0.1),
            }
            tracks.append(PlaybackTrack(track_ids[idx], skip, playback))
            prev = skip
        sessions.append(SessionRecord(f"s{s:07d}", premium, day, tuple(tracks)))
    return SynthCorpus(track_ids, raw, latents, sessions)


def synth_generate(
    out_dir,
    n_sessions: int,
    n_tracks: int,
    seed: int,
    params: SynthParams | None = None,
    n_test: int = 0,
) -> dict[str, Path]:
    """Write ``catalog.csv``, ``sessions.jsonl`` and ``schema.json`` to ``out_dir``.

    With ``n_test`` > 0 the last ``n_test`` generated sessions go to
    ``test.jsonl`` instead.
    """
    if n_test < 0:
        raise ConfigError("n_test must be non-negative")
    corpus = generate_corpus(n_sessions + n_test, n_tracks, seed, params)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "catalog": out / "catalog.csv",
        "sessions": out / "sessions.jsonl",
        "schema": out / "schema.json",
    }
    write_track_catalog(paths["catalog"], corpus.track_ids, corpus.raw_features)
    write_sessions(paths["sessions"], corpus.sessions[:n_sessions])
    write_schema(paths["schema"], corpus.schema)
    if n_test:
        paths["test"] = out / "test.jsonl"
        write_sessions(paths["test"], corpus.sessions[n_sessions:])
    return paths
