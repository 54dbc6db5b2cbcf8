"""Small fixed problems for gradient checks and smoke runs."""

from __future__ import annotations

import numpy as np

from .data import Batch, FeatureSchema, PlaybackTrack, SessionRecord, TrackCatalog, build_batch
from .model import ModelConfig, ModelParams, forward_loss, init_params
from .tensor import GradCheckReport, grad_check

TOY_CONFIG = ModelConfig(embedding_dim=3, track_dim=4, session_hidden=3, hidden=4, head_hidden=4)
TOY_SCHEMA = FeatureSchema(categorical={"reason_end": ("trackdone", "fwdbtn")}, numeric=("pause",))


def toy_problem(seed: int = 0, lengths=(10, 14), paper_padding: bool = False):
    """Five-track catalog and one batch of sessions with the given lengths."""
    rng = np.random.default_rng(seed)
    ids = [f"t{i}" for i in range(5)]
    catalog = TrackCatalog.from_raw(ids, rng.normal(size=(5, 3)))
    sessions = []
    for n, m in enumerate(lengths):
        tracks = []
        for _ in range(m):
            skip = int(rng.integers(2))
            playback = {"reason_end": "fwdbtn" if skip else "trackdone", "pause": float(rng.random())}
            tracks.append(PlaybackTrack(ids[int(rng.integers(5))], skip, playback))
        sessions.append(SessionRecord(f"toy{n}", bool(n % 2), int(rng.integers(7)), tuple(tracks)))
    batch = build_batch(sessions, catalog, TOY_SCHEMA)
    config = ModelConfig(**{**TOY_CONFIG.to_json(), "paper_padding": paper_padding})
    params = init_params(config, len(catalog), catalog.n_features, TOY_SCHEMA.width, seed)
    # Spread the tiny initial biases so no unit sits exactly at a ReLU kink.
    for name, p in params.items():
        if p.ndim == 1 and ".lstm." not in name:
            p.data = rng.normal(scale=0.1, size=p.shape)
    return catalog, sessions, batch, config, params


def model_grad_check(seed: int = 0, h: float = 1e-6, tol: float = 1e-4, paper_padding: bool = False) -> GradCheckReport:
    """Finite-difference check of every parameter group on the toy problem."""
    catalog, _, batch, config, params = toy_problem(seed, paper_padding=paper_padding)

    def loss():
        return forward_loss(batch, catalog, params, config)[1]

    return grad_check(loss, params, h=h, tol=tol)
