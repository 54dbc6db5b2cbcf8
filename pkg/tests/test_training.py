import numpy as np
import pytest

from skipnet.data import build_batch
from skipnet.diagnostics import TOY_CONFIG
from skipnet.errors import ConfigError, TrainingError
from skipnet.layers import AdamState, adam_step
from skipnet.model import PROFILES, forward_loss, init_params
from skipnet.tensor import backward
from skipnet.training import TrainRunConfig, split_validation, train


def test_split_disjoint_and_seeded():
    tr, va = split_validation(100, 0.1, seed=4)
    assert len(va) == 10 and not set(tr) & set(va) and len(tr) + len(va) == 100
    tr2, va2 = split_validation(100, 0.1, seed=4)
    np.testing.assert_array_equal(va, va2)
    assert not np.array_equal(va, split_validation(100, 0.1, seed=5)[1])


def test_loss_falls_on_fixed_batch(small_corpus):
    corpus, catalog = small_corpus
    config = PROFILES["desk"]
    params = init_params(config, len(catalog), catalog.n_features, corpus.schema.width, seed=0)
    batch = build_batch(corpus.sessions[:8], catalog, corpus.schema)
    state, losses = AdamState(), []
    for _ in range(40):
        params.zero_grad()
        _, loss = forward_loss(batch, catalog, params, config)
        losses.append(loss.item())
        backward(loss)
        state = adam_step(params, {k: p.grad for k, p in params.items()}, state, 0.0005)
    assert losses[-1] < 0.9 * losses[0]


def test_loss_trajectory_deterministic(small_corpus):
    corpus, catalog = small_corpus
    run = TrainRunConfig(batch_size=8, epochs=1, max_steps=5, seed=3)
    a = train(corpus.sessions, catalog, corpus.schema, TOY_CONFIG, run)
    b = train(corpus.sessions, catalog, corpus.schema, TOY_CONFIG, run)
    assert a.losses == b.losses and len(a.losses) == 5
    for name in a.final_params:
        np.testing.assert_array_equal(a.final_params[name].data, b.final_params[name].data)


def test_history_and_best(small_corpus):
    corpus, catalog = small_corpus
    run = TrainRunConfig(batch_size=16, epochs=3, seed=0, validation_fraction=0.2)
    result = train(corpus.sessions, catalog, corpus.schema, TOY_CONFIG, run)
    assert [h.epoch for h in result.history] == [1, 2, 3]
    assert len(result.validation_keys) == 12
    assert not set(result.validation_keys) & set(result.train_keys)
    best = max(h.validation.mean_average_accuracy for h in result.history)
    assert result.best_validation.mean_average_accuracy == best
    assert result.adam.t == result.steps


def test_nan_loss_reports_step(small_corpus):
    corpus, catalog = small_corpus
    params = init_params(TOY_CONFIG, len(catalog), catalog.n_features, corpus.schema.width, 0)
    params["head.b2"].data = np.array([np.nan])
    with pytest.raises(TrainingError, match="step 1"):
        train(corpus.sessions, catalog, corpus.schema, TOY_CONFIG, TrainRunConfig(batch_size=8), init=params)


@pytest.mark.parametrize("bad", [dict(batch_size=0), dict(learning_rate=0.0), dict(validation_fraction=1.0)])
def test_bad_run_config(bad):
    with pytest.raises(ConfigError):
        TrainRunConfig(**bad).validate()
