import numpy as np
import pytest

from skipnet.data import load_sessions, load_track_catalog
from skipnet.errors import ConfigError
from skipnet.estimators import BaselinePredictor
from skipnet.synth import SynthParams, generate_corpus, synth_generate


def test_same_seed_byte_identical(tmp_path):
    a = synth_generate(tmp_path / "a", 40, 20, seed=11, n_test=5)
    b = synth_generate(tmp_path / "b", 40, 20, seed=11, n_test=5)
    assert set(a) == set(b)
    for role in a:
        assert a[role].read_bytes() == b[role].read_bytes()


def test_different_seed_differs(tmp_path):
    a = synth_generate(tmp_path / "a", 40, 20, seed=1)
    b = synth_generate(tmp_path / "b", 40, 20, seed=2)
    assert a["sessions"].read_bytes() != b["sessions"].read_bytes()


def test_files_load_back(tmp_path):
    paths = synth_generate(tmp_path, 30, 15, seed=0)
    catalog = load_track_catalog(paths["catalog"])
    sessions = load_sessions(paths["sessions"])
    assert len(catalog) == 15 and len(sessions) == 30
    for s in sessions:
        s.validate(require_labels="all")
        assert all(t.track_id in catalog for t in s.tracks)


def test_symmetric_params_give_even_skip_rate():
    params = SynthParams(alpha=0.0, beta=0.0, gamma=0.0, bias_scale=0.0)
    corpus = generate_corpus(10_000, 50, seed=5, params=params)
    labels = [t.skip for s in corpus.sessions for t in s.tracks]
    assert abs(np.mean(labels) - 0.5) <= 0.02


def test_history_beats_all_skip():
    params = SynthParams(alpha=6.0, gamma=1.0)
    sessions = generate_corpus(2_000, 100, seed=9, params=params).sessions
    b1 = BaselinePredictor("all_skip").fit().score(sessions)
    b3 = BaselinePredictor("last_action").fit().score(sessions)
    assert b3 > b1


@pytest.mark.parametrize("bad", [dict(latent_dim=0), dict(feature_noise=-1.0), dict(alpha=float("nan"))])
def test_invalid_params(bad):
    with pytest.raises(ConfigError):
        generate_corpus(5, 5, seed=0, params=SynthParams(**bad))


@pytest.mark.parametrize("n_sessions, n_tracks", [(0, 5), (5, 1)])
def test_invalid_sizes(n_sessions, n_tracks):
    with pytest.raises(ConfigError):
        generate_corpus(n_sessions, n_tracks, seed=0)
