import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from skipnet.errors import ConfigError, UnknownTrackError, ValidationError
from skipnet.estimators import BaselinePredictor, MajorityVoteEnsemble, SkipPredictor

TINY = dict(embedding_dim=3, track_dim=4, session_hidden=3, hidden=4, head_hidden=4, batch_size=16, epochs=1)


@pytest.fixture(scope="module")
def fitted(small_corpus):
    corpus, catalog = small_corpus
    return SkipPredictor(**TINY, seed=1).fit(corpus.sessions, catalog=catalog, schema=corpus.schema)


def test_get_params_and_clone():
    est = SkipPredictor(hidden=7, seed=3)
    params = est.get_params()
    assert params["hidden"] == 7 and params["seed"] == 3 and params["profile"] == "desk"
    twin = clone(est)
    assert twin.get_params() == params and twin is not est


def test_set_params():
    est = SkipPredictor().set_params(learning_rate=0.01)
    assert est.run_config().learning_rate == 0.01


def test_profile_overrides():
    cfg = SkipPredictor(profile="paper", hidden=8).model_config()
    assert cfg.hidden == 8 and cfg.track_dim == 350


def test_unknown_profile():
    with pytest.raises(ConfigError):
        SkipPredictor(profile="huge").model_config()


def test_unfitted():
    with pytest.raises(NotFittedError):
        SkipPredictor().predict([])


def test_predict_shapes(fitted, small_corpus):
    corpus, _ = small_corpus
    preds = fitted.predict(corpus.sessions[:5])
    probs = fitted.predict_proba(corpus.sessions[:5])
    for s, p, q in zip(corpus.sessions, preds, probs):
        assert len(p) == s.length - s.n_first
        assert set(np.unique(p)) <= {0, 1}
        np.testing.assert_array_equal(p, (q > 0.5).astype(int))
    assert 0.0 <= fitted.score(corpus.sessions) <= 1.0


def test_accepts_json_dicts(fitted, small_corpus):
    corpus, _ = small_corpus
    dicts = [s.to_json() for s in corpus.sessions[:3]]
    for a, b in zip(fitted.predict_proba(dicts), fitted.predict_proba(corpus.sessions[:3])):
        np.testing.assert_array_equal(a, b)


def test_fit_rejects_unknown_track(small_corpus):
    corpus, catalog = small_corpus
    from skipnet.data import PlaybackTrack, SessionRecord

    s = corpus.sessions[0]
    bad = SessionRecord("x", False, 0, [PlaybackTrack("ghost", 1, t.playback) for t in s.tracks])
    with pytest.raises(UnknownTrackError):
        SkipPredictor(**TINY).fit([bad], catalog=catalog, schema=corpus.schema)


def test_single_session_rejected(fitted, small_corpus):
    with pytest.raises(ValidationError):
        fitted.predict(small_corpus[0].sessions[0])


def test_baselines(small_corpus):
    corpus, _ = small_corpus
    for mode in ("all_skip", "skip_rate", "last_action"):
        est = BaselinePredictor(mode).fit(corpus.sessions)
        assert 0.0 <= est.score(corpus.sessions) <= 1.0
    with pytest.raises(ConfigError):
        BaselinePredictor("skip_rate").fit()


def test_ensemble(fitted, small_corpus):
    corpus, _ = small_corpus
    members = [BaselinePredictor("all_skip").fit(), BaselinePredictor("last_action").fit(), fitted]
    ens = MajorityVoteEnsemble.from_fitted(members)
    votes = ens.member_predictions(corpus.sessions)
    for i, pred in enumerate(ens.predict(corpus.sessions)):
        expected = (np.sum([v[i] for v in votes], axis=0) >= 2).astype(int)
        np.testing.assert_array_equal(pred, expected)
    with pytest.raises(ConfigError):
        MajorityVoteEnsemble.from_fitted(members[:2])


def test_ensemble_fit_clones(small_corpus):
    corpus, _ = small_corpus
    base = BaselinePredictor("last_action")
    ens = MajorityVoteEnsemble([base] * 3).fit(corpus.sessions)
    assert all(e is not base for e in ens.estimators_)
    assert not hasattr(base, "skip_rates_")
