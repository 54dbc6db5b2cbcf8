import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skipnet.data import (
    FeatureSchema,
    PlaybackTrack,
    SessionRecord,
    TrackCatalog,
    build_batch,
    column_stats,
    compute_track_skip_rates,
    encode_meta,
    encode_playback,
    load_schema,
    load_sessions,
    load_track_catalog,
    split_session,
    write_schema,
    write_sessions,
    write_track_catalog,
)
from skipnet.errors import ContractError, ParseError, UnknownTrackError, ValidationError

SCHEMA = FeatureSchema(categorical={"reason": ("a", "b")}, numeric=("x",))


def make_session(m, sid="s", premium=False, day=0, ids=None, skips=None):
    ids = ids or [f"t{i % 3}" for i in range(m)]
    skips = skips or [i % 2 for i in range(m)]
    tracks = [PlaybackTrack(t, y, {"reason": "ab"[y], "x": float(i)}) for i, (t, y) in enumerate(zip(ids, skips))]
    return SessionRecord(sid, premium, day, tracks)


@pytest.fixture
def catalog():
    return TrackCatalog.from_raw(["t0", "t1", "t2"], np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]))


class TestCatalog:
    def test_zscore_population_std(self, catalog):
        np.testing.assert_allclose(catalog.features[:, 0], [-1.22474, 0, 1.22474], atol=1e-5)

    def test_constant_column(self, catalog):
        np.testing.assert_array_equal(catalog.features[:, 1], 0.0)

    def test_single_track(self):
        cat = TrackCatalog.from_raw(["only"], np.array([[3.0, -7.0, 1e6]]))
        np.testing.assert_array_equal(cat.features, 0.0)

    def test_foreign_stats(self, catalog):
        other = TrackCatalog.from_raw(["z"], np.array([[3.0, 5.0]]), stats=catalog.stats)
        np.testing.assert_allclose(other.features, [[1.22474, 0.0]], atol=1e-5)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValidationError):
            TrackCatalog.from_raw(["a", "a"], np.zeros((2, 1)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 30), st.integers(1, 5), st.integers(0, 10**6))
    def test_standardized_columns(self, n, f, seed):
        raw = np.random.default_rng(seed).normal(loc=7.0, scale=3.0, size=(n, f))
        z = TrackCatalog.from_raw([str(i) for i in range(n)], raw).features
        assert np.all(np.abs(z.mean(axis=0)) <= 1e-9)
        assert np.all(np.abs(z.std(axis=0) - 1) <= 1e-9)

    def test_column_stats_population(self):
        mean, std = column_stats(np.array([[1.0], [2.0], [3.0]]))
        assert std[0] == pytest.approx(np.sqrt(2 / 3))

    def test_csv_round_trip(self, tmp_path, rng):
        raw = rng.normal(size=(4, 3))
        write_track_catalog(tmp_path / "c.csv", ["a", "b", "c", "d"], raw)
        cat = load_track_catalog(tmp_path / "c.csv")
        np.testing.assert_array_equal(cat.raw, raw)
        assert list(cat.track_ids) == ["a", "b", "c", "d"]

    @pytest.mark.parametrize(
        "body, line",
        [
            ("track_id,f_0\na,1\na,2\n", 3),
            ("track_id,f_0\na,1\nb,x\n", 3),
            ("track_id,f_0,f_1\na,1,2\nb,1\n", 3),
            ("id,f_0\na,1\n", 1),
        ],
        ids=["duplicate", "non-numeric", "ragged", "header"],
    )
    def test_parse_errors_carry_line(self, tmp_path, body, line):
        path = tmp_path / "bad.csv"
        path.write_text(body)
        with pytest.raises(ParseError) as err:
            load_track_catalog(path)
        assert err.value.line == line
        assert f":{line}:" in str(err.value)


class TestMeta:
    def test_layout(self):
        v = encode_meta(make_session(10, premium=True, day=0))
        assert set(np.flatnonzero(v)) == {1, 2, 13}

    def test_length_twenty(self):
        v = encode_meta(make_session(20))
        assert np.flatnonzero(v[2:13]).tolist() == [10]
        assert v[12] == 1

    @given(st.booleans(), st.integers(10, 20), st.integers(0, 6))
    def test_three_ones(self, premium, m, day):
        v = encode_meta(make_session(m, premium=premium, day=day))
        assert v.shape == (20,) and v.sum() == 3 and set(np.unique(v)) <= {0.0, 1.0}

    @pytest.mark.parametrize("m", [9, 21])
    def test_bad_length(self, m):
        with pytest.raises(ValidationError):
            encode_meta(make_session(m))


class TestPlayback:
    def test_second_item(self):
        schema = FeatureSchema(categorical={"c": ("x", "y", "z")}, numeric=())
        np.testing.assert_array_equal(encode_playback({"c": "y"}, schema), [0, 1, 0])

    def test_numeric_only(self):
        np.testing.assert_array_equal(encode_playback({"n": 0.5}, FeatureSchema({}, ("n",))), [0.5])

    def test_schema_order(self):
        schema = FeatureSchema(categorical={"c": ("p", "q")}, numeric=("u", "v"))
        np.testing.assert_array_equal(encode_playback({"v": -1, "c": "p", "u": 3}, schema), [1, 0, 3, -1])

    def test_out_of_vocab_names_field_and_value(self):
        with pytest.raises(ValidationError, match="'zzz'.*'reason'"):
            encode_playback({"reason": "zzz", "x": 1.0}, SCHEMA)

    def test_missing_field(self):
        with pytest.raises(ValidationError, match="x"):
            encode_playback({"reason": "a"}, SCHEMA)

    def test_width(self):
        schema = FeatureSchema(categorical={"a": ("1", "2", "3"), "b": ("y", "n")}, numeric=("u", "v", "w"))
        assert schema.width == 8

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=4), st.data())
    def test_categorical_round_trip(self, sizes, data):
        schema = FeatureSchema(
            categorical={f"f{i}": tuple(f"v{j}" for j in range(n + 1)) for i, n in enumerate(sizes)},
            numeric=("num",),
        )
        values = {name: data.draw(st.sampled_from(vocab)) for name, vocab in schema.categorical.items()}
        vec = encode_playback({**values, "num": 2.5}, schema)
        offset = 0
        for vocab in schema.categorical.values():
            assert vec[offset : offset + len(vocab)].sum() == 1
            offset += len(vocab)
        decoded = schema.decode(vec)
        assert {k: decoded[k] for k in values} == values

    def test_schema_file_round_trip(self, tmp_path):
        write_schema(tmp_path / "s.json", SCHEMA)
        loaded = load_schema(tmp_path / "s.json")
        assert loaded == SCHEMA and loaded.fingerprint() == SCHEMA.fingerprint()


class TestSplit:
    @pytest.mark.parametrize("m, first, second", [(20, 10, 10), (11, 6, 5), (10, 5, 5)])
    def test_sizes(self, m, first, second):
        a, b = split_session(make_session(m))
        assert (len(a), len(b)) == (first, second)

    @given(st.integers(10, 20))
    def test_sizes_sum(self, m):
        a, b = split_session(make_session(m))
        assert len(a) + len(b) == m
        assert [pos for _, pos in b] == list(range(len(a), m))

    def test_second_half_is_ids_only(self):
        s = make_session(11)
        _, b = split_session(s)
        assert b[0] == (s.tracks[6].track_id, 6)


class TestBatch:
    def test_masks_m14(self, catalog):
        batch = build_batch([make_session(14)], catalog, SCHEMA)
        np.testing.assert_array_equal(batch.enc_mask[0], [0, 0, 0, 1, 1, 1, 1, 1, 1, 1])
        np.testing.assert_array_equal(batch.pred_mask[0], [1, 1, 1, 1, 1, 1, 1, 0, 0, 0])

    def test_masks_m20(self, catalog):
        batch = build_batch([make_session(20)], catalog, SCHEMA)
        assert batch.enc_mask.all() and batch.pred_mask.all()

    def test_positions(self, catalog):
        batch = build_batch([make_session(14)], catalog, SCHEMA)
        assert batch.positions.shape == (1, 10, 20)
        np.testing.assert_array_equal(batch.positions[0, :7].argmax(axis=1), np.arange(7, 14))
        np.testing.assert_array_equal(batch.positions[0, 7:], 0.0)

    def test_strip_round_trip(self, catalog):
        sessions = [make_session(m, sid=str(m)) for m in (10, 13, 20)]
        batch = build_batch(sessions, catalog, SCHEMA)
        for s, (first, playback, second, labels) in zip(sessions, batch.strip()):
            a, b = split_session(s)
            np.testing.assert_array_equal(first, catalog.indices(t.track_id for t in a))
            np.testing.assert_array_equal(playback, [encode_playback(t.playback, SCHEMA) for t in a])
            np.testing.assert_array_equal(second, catalog.indices(t for t, _ in b))
            np.testing.assert_array_equal(labels, s.second_half_labels)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.integers(10, 20), min_size=1, max_size=6), st.randoms(use_true_random=False))
    def test_permutation_equivariant(self, lengths, rnd):
        catalog = TrackCatalog.from_raw(["t0", "t1", "t2"], np.arange(6.0).reshape(3, 2))
        sessions = [make_session(m, sid=str(i), day=i % 7) for i, m in enumerate(lengths)]
        order = list(range(len(sessions)))
        rnd.shuffle(order)
        a = build_batch(sessions, catalog, SCHEMA)
        b = build_batch([sessions[i] for i in order], catalog, SCHEMA)
        for name in ("meta", "enc_ids", "playback", "enc_mask", "pred_ids", "positions", "pred_mask", "labels"):
            np.testing.assert_array_equal(getattr(a, name)[order], getattr(b, name))

    def test_empty(self, catalog):
        with pytest.raises(ContractError):
            build_batch([], catalog, SCHEMA)

    def test_unknown_track(self, catalog):
        with pytest.raises(UnknownTrackError):
            build_batch([make_session(10, ids=["nope"] * 10)], catalog, SCHEMA)


class TestSkipRates:
    def test_three_of_four(self):
        s = make_session(10, ids=["a"] * 4 + ["b"] * 6, skips=[1, 1, 1, 0] + [0] * 6)
        rates = compute_track_skip_rates([s])
        assert rates["a"] == 0.75 and rates["b"] == 0.0

    def test_hand_corpus(self):
        sessions = [
            make_session(10, "1", ids=["a", "b"] * 5, skips=[1, 0] * 5),
            make_session(10, "2", ids=["a"] * 10, skips=[0] * 10),
            make_session(12, "3", ids=["c"] * 2 + ["b"] * 10, skips=[1, 1] + [1] * 10),
        ]
        # a: 5 skips of 15, b: 10 of 15, c: 2 of 2
        assert compute_track_skip_rates(sessions) == pytest.approx({"a": 1 / 3, "b": 2 / 3, "c": 1.0})

    def test_unseen_absent(self):
        assert "zzz" not in compute_track_skip_rates([make_session(10)])


class TestSessionsFile:
    def test_round_trip(self, tmp_path):
        sessions = [make_session(12, "x", premium=True, day=3), make_session(20, "y")]
        write_sessions(tmp_path / "s.jsonl", sessions)
        assert load_sessions(tmp_path / "s.jsonl") == sessions

    def test_bad_line_number(self, tmp_path):
        good = json.dumps(make_session(10).to_json())
        (tmp_path / "s.jsonl").write_text(good + "\n{oops\n")
        with pytest.raises(ParseError) as err:
            load_sessions(tmp_path / "s.jsonl")
        assert err.value.line == 2

    def test_short_session_rejected(self, tmp_path):
        (tmp_path / "s.jsonl").write_text(json.dumps(make_session(9).to_json()) + "\n")
        with pytest.raises(ParseError, match="length 9"):
            load_sessions(tmp_path / "s.jsonl")

    def test_missing_second_half_labels(self):
        s = make_session(10)
        tracks = list(s.tracks)
        tracks[7] = PlaybackTrack(tracks[7].track_id, None, tracks[7].playback)
        s = SessionRecord("u", False, 0, tracks)
        s.validate()
        with pytest.raises(ValidationError):
            s.validate(require_labels="second")
