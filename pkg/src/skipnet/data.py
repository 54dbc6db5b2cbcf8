"""Track catalogs, session records, feature encoding and padded batches."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, ParseError, UnknownTrackError, ValidationError

MIN_LENGTH = 10
MAX_LENGTH = 20
META_WIDTH = 2 + (MAX_LENGTH - MIN_LENGTH + 1) + 7
POSITION_WIDTH = MAX_LENGTH
HALF_STEPS = 10


@dataclass
class TrackCatalog:
    """Track ids with raw features and their standardized counterpart.

    ``features`` holds the standardized rows; ``mean`` and ``std`` are the
    statistics that produced them (population std, 0 for constant columns).
    """

    track_ids: tuple[str, ...]
    raw: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    features: np.ndarray = field(init=False, repr=False)
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64)
        if self.raw.ndim != 2 or self.raw.shape[0] != len(self.track_ids):
            raise ValidationError(
                f"feature matrix {self.raw.shape} does not match {len(self.track_ids)} track ids"
            )
        self._index = {}
        for i, tid in enumerate(self.track_ids):
            if tid in self._index:
                raise ValidationError(f"duplicate track id {tid!r}")
            self._index[tid] = i
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        self.features = standardize(self.raw, self.mean, self.std)

    @classmethod
    def from_raw(cls, track_ids: Sequence[str], raw, stats=None) -> "TrackCatalog":
        raw = np.asarray(raw, dtype=np.float64)
        if stats is None:
            mean, std = column_stats(raw)
        else:
            mean, std = stats
        return cls(tuple(str(t) for t in track_ids), raw, mean, std)

    def __len__(self) -> int:
        return len(self.track_ids)

    def __contains__(self, track_id) -> bool:
        return track_id in self._index

    @property
    def n_features(self) -> int:
        return self.raw.shape[1]

    @property
    def stats(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mean, self.std

    def index_of(self, track_id: str) -> int:
        try:
            return self._index[track_id]
        except KeyError:
            raise UnknownTrackError(track_id) from None

    def indices(self, track_ids: Iterable[str]) -> np.ndarray:
        return np.array([self.index_of(t) for t in track_ids], dtype=np.int64)


def column_stats(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return raw.mean(axis=0), raw.std(axis=0)


def standardize(raw: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """Z-score columns; columns with zero spread map to 0."""
    safe = np.where(std > 0, std, 1.0)
    return np.where(std > 0, (raw - mean) / safe, 0.0)


def load_track_catalog(path, stats=None) -> TrackCatalog:
    """Read ``track_id,f_0,...`` CSV and standardize it.

    ``stats`` (mean, std) from a training catalog overrides the file's own.
    """
    path = Path(path)
    ids: list[str] = []
    rows: list[list[float]] = []
    seen: set[str] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "track_id":
            raise ParseError("header must start with 'track_id'", path, 1)
        width = len(header) - 1
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width + 1:
                raise ParseError(f"expected {width + 1} cells, got {len(row)}", path, lineno)
            tid = row[0]
            if tid in seen:
                raise ParseError(f"duplicate track id {tid!r}", path, lineno)
            seen.add(tid)
            try:
                values = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise ParseError(f"non-numeric cell ({exc})", path, lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError("non-finite cell", path, lineno)
            ids.append(tid)
            rows.append(values)
    if not ids:
        raise ParseError("catalog has no tracks", path)
    return TrackCatalog.from_raw(ids, np.array(rows, dtype=np.float64).reshape(len(ids), width), stats)


def write_track_catalog(path, track_ids: Sequence[str], raw: np.ndarray) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["track_id"] + [f"f_{j}" for j in range(raw.shape[1])])
        for tid, row in zip(track_ids, raw):
            writer.writerow([tid] + [repr(float(v)) for v in row])


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered categorical vocabularies followed by ordered numeric fields."""

    categorical: dict[str, tuple]
    numeric: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "categorical", {k: tuple(v) for k, v in self.categorical.items()})
        object.__setattr__(self, "numeric", tuple(self.numeric))
        for name, vocab in self.categorical.items():
            if not vocab:
                raise ValidationError(f"categorical field {name!r} has an empty vocabulary")
            if len(set(vocab)) != len(vocab):
                raise ValidationError(f"categorical field {name!r} repeats a value")

    @property
    def width(self) -> int:
        return sum(len(v) for v in self.categorical.values()) + len(self.numeric)

    def encode(self, playback: Mapping) -> np.ndarray:
        return encode_playback(playback, self)

    def decode(self, vector) -> dict:
        """Recover categorical values and numeric fields from an encoding."""
        vector = np.asarray(vector)
        out = {}
        offset = 0
        for name, vocab in self.categorical.items():
            block = vector[offset : offset + len(vocab)]
            out[name] = vocab[int(np.argmax(block))]
            offset += len(vocab)
        for name in self.numeric:
            out[name] = float(vector[offset])
            offset += 1
        return out

    def to_json(self) -> dict:
        return {"categorical": {k: list(v) for k, v in self.categorical.items()}, "numeric": list(self.numeric)}

    @classmethod
    def from_json(cls, obj: Mapping) -> "FeatureSchema":
        if not isinstance(obj, Mapping) or "categorical" not in obj or "numeric" not in obj:
            raise ValidationError("schema needs 'categorical' and 'numeric' keys")
        return cls(dict(obj["categorical"]), tuple(obj["numeric"]))

    def fingerprint(self) -> str:
        canonical = json.dumps(self.to_json(), sort_keys=False, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_schema(path) -> FeatureSchema:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", path, exc.lineno) from None
    try:
        return FeatureSchema.from_json(obj)
    except ValidationError as exc:
        raise ParseError(str(exc), path) from None


def write_schema(path, schema: FeatureSchema) -> None:
    Path(path).write_text(json.dumps(schema.to_json(), indent=2) + "\n", encoding="utf-8")


def encode_playback(playback: Mapping, schema: FeatureSchema) -> np.ndarray:
    out = np.zeros(schema.width)
    offset = 0
    for name, vocab in schema.categorical.items():
        if name not in playback:
            raise ValidationError(f"playback field {name!r} missing")
        value = playback[name]
        try:
            out[offset + vocab.index(value)] = 1.0
        except ValueError:
            raise ValidationError(f"value {value!r} not in vocabulary of field {name!r}") from None
        offset += len(vocab)
    for name in schema.numeric:
        if name not in playback:
            raise ValidationError(f"playback field {name!r} missing")
        value = float(playback[name])
        if not math.isfinite(value):
            raise ValidationError(f"numeric field {name!r} is not finite: {value!r}")
        out[offset] = value
        offset += 1
    return out


@dataclass(frozen=True)
class PlaybackTrack:
    track_id: str
    skip: int | None = None
    playback: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class SessionRecord:
    session_id: str
    premium: bool
    day_of_week: int
    tracks: tuple[PlaybackTrack, ...]

    def __post_init__(self):
        object.__setattr__(self, "tracks", tuple(self.tracks))

    @property
    def length(self) -> int:
        return len(self.tracks)

    @property
    def n_first(self) -> int:
        return (self.length + 1) // 2

    @property
    def labels(self) -> list[int | None]:
        return [t.skip for t in self.tracks]

    @property
    def second_half_labels(self) -> list[int | None]:
        return [t.skip for t in self.tracks[self.n_first :]]

    def validate(self, require_labels: str | None = None) -> "SessionRecord":
        """Check structural invariants; ``require_labels`` is 'all' or 'second'."""
        if not MIN_LENGTH <= self.length <= MAX_LENGTH:
            raise ValidationError(
                f"session {self.session_id!r}: length {self.length} outside {MIN_LENGTH}-{MAX_LENGTH}"
            )
        if not 0 <= self.day_of_week <= 6:
            raise ValidationError(f"session {self.session_id!r}: day_of_week {self.day_of_week}")
        for t in self.tracks:
            if t.skip not in (None, 0, 1):
                raise ValidationError(f"session {self.session_id!r}: skip label {t.skip!r}")
        needed = {"all": self.tracks, "second": self.tracks[self.n_first :], None: ()}[require_labels]
        if any(t.skip is None for t in needed):
            raise ValidationError(f"session {self.session_id!r}: missing skip labels")
        return self

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "premium": self.premium,
            "day_of_week": self.day_of_week,
            "tracks": [
                {"track_id": t.track_id, "skip": t.skip, "playback": dict(t.playback)} for t in self.tracks
            ],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "SessionRecord":
        try:
            tracks = tuple(
                PlaybackTrack(
                    track_id=str(t["track_id"]),
                    skip=None if t.get("skip") is None else int(t["skip"]),
                    playback=dict(t.get("playback") or {}),
                )
                for t in obj["tracks"]
            )
            day = obj["day_of_week"]
            if isinstance(day, bool) or not isinstance(day, int):
                raise ValidationError(f"day_of_week must be an integer, got {day!r}")
            return cls(str(obj["session_id"]), bool(obj["premium"]), day, tracks).validate()
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed session record ({exc!r})") from None


def load_sessions(path) -> list[SessionRecord]:
    path = Path(path)
    sessions = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                sessions.append(SessionRecord.from_json(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", path, lineno) from None
            except ValidationError as exc:
                raise ParseError(str(exc), path, lineno) from None
    return sessions


def write_sessions(path, sessions: Iterable[SessionRecord]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for s in sessions:
            fh.write(json.dumps(s.to_json(), separators=(",", ":")) + "\n")


def encode_meta(session: SessionRecord) -> np.ndarray:
    """One-hot premium (2), length-10 (11) and day of week (7), in that order."""
    m = session.length
    if not MIN_LENGTH <= m <= MAX_LENGTH:
        raise ValidationError(f"session length {m} outside {MIN_LENGTH}-{MAX_LENGTH}")
    if not 0 <= session.day_of_week <= 6:
        raise ValidationError(f"day_of_week {session.day_of_week} outside 0-6")
    out = np.zeros(META_WIDTH)
    out[int(bool(session.premium))] = 1.0
    out[2 + m - MIN_LENGTH] = 1.0
    out[2 + (MAX_LENGTH - MIN_LENGTH + 1) + session.day_of_week] = 1.0
    return out


def split_session(session: SessionRecord):
    """First ceil(m/2) tracks in full, then (track_id, absolute position) pairs."""
    k = session.n_first
    first = session.tracks[:k]
    second = [(t.track_id, k + j) for j, t in enumerate(session.tracks[k:])]
    return first, second


@dataclass
class EncodedSession:
    """Dense arrays for one session, ready to be padded into a batch."""

    key: str
    meta: np.ndarray
    first_ids: np.ndarray
    playback: np.ndarray
    second_ids: np.ndarray
    positions: np.ndarray
    labels: np.ndarray
    label_known: np.ndarray

    @property
    def length(self) -> int:
        return len(self.first_ids) + len(self.second_ids)


def encode_session(session: SessionRecord, catalog: TrackCatalog, schema: FeatureSchema) -> EncodedSession:
    session.validate()
    first, second = split_session(session)
    playback = np.zeros((len(first), schema.width))
    for j, t in enumerate(first):
        playback[j] = encode_playback(t.playback, schema)
    labels = session.second_half_labels
    return EncodedSession(
        key=session.session_id,
        meta=encode_meta(session),
        first_ids=catalog.indices(t.track_id for t in first),
        playback=playback,
        second_ids=catalog.indices(tid for tid, _ in second),
        positions=np.array([pos for _, pos in second], dtype=np.int64),
        labels=np.array([0 if y is None else y for y in labels], dtype=np.float64),
        label_known=np.array([y is not None for y in labels], dtype=np.float64),
    )


@dataclass
class Batch:
    """Fixed-width arrays for a set of sessions.

    Encoder-side slots are right-aligned (pre-padded); predictor-side and
    whole-session slots are left-aligned (post-padded). Padded slots carry
    track index 0 and mask 0.
    """

    keys: list[str]
    meta: np.ndarray
    enc_ids: np.ndarray
    playback: np.ndarray
    enc_mask: np.ndarray
    pred_ids: np.ndarray
    positions: np.ndarray
    pred_mask: np.ndarray
    labels: np.ndarray
    label_mask: np.ndarray
    session_ids: np.ndarray
    session_mask: np.ndarray

    def __len__(self) -> int:
        return len(self.keys)

    def strip(self) -> list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
        """Undo padding: (first ids, playback, second ids, labels) per row."""
        out = []
        for r in range(len(self)):
            e = self.enc_mask[r].astype(bool)
            p = self.pred_mask[r].astype(bool)
            out.append((self.enc_ids[r][e], self.playback[r][e], self.pred_ids[r][p], self.labels[r][p]))
        return out


def collate(
    encoded: Sequence[EncodedSession],
    enc_steps: int | None = HALF_STEPS,
    pred_steps: int | None = HALF_STEPS,
    session_steps: int | None = MAX_LENGTH,
) -> Batch:
    """Pad encoded sessions into a :class:`Batch`.

    A step count of None pads only to the longest session in the batch.
    """
    if not encoded:
        raise ContractError("cannot build a batch from zero sessions")
    b = len(encoded)
    longest_first = max(len(e.first_ids) for e in encoded)
    longest_second = max(len(e.second_ids) for e in encoded)
    longest = max(e.length for e in encoded)
    te = longest_first if enc_steps is None else enc_steps
    tp = longest_second if pred_steps is None else pred_steps
    ts = longest if session_steps is None else session_steps
    if te < longest_first or tp < longest_second or ts < longest:
        raise ContractError(
            f"windows ({te}, {tp}, {ts}) too short for halves ({longest_first}, {longest_second}, {longest})"
        )
    width = encoded[0].playback.shape[1]

    batch = Batch(
        keys=[e.key for e in encoded],
        meta=np.stack([e.meta for e in encoded]),
        enc_ids=np.zeros((b, te), dtype=np.int64),
        playback=np.zeros((b, te, width)),
        enc_mask=np.zeros((b, te)),
        pred_ids=np.zeros((b, tp), dtype=np.int64),
        positions=np.zeros((b, tp, POSITION_WIDTH)),
        pred_mask=np.zeros((b, tp)),
        labels=np.zeros((b, tp)),
        label_mask=np.zeros((b, tp)),
        session_ids=np.zeros((b, ts), dtype=np.int64),
        session_mask=np.zeros((b, ts)),
    )
    for r, e in enumerate(encoded):
        k, n = len(e.first_ids), len(e.second_ids)
        batch.enc_ids[r, te - k :] = e.first_ids
        batch.playback[r, te - k :] = e.playback
        batch.enc_mask[r, te - k :] = 1.0
        batch.pred_ids[r, :n] = e.second_ids
        batch.positions[r, np.arange(n), e.positions] = 1.0
        batch.pred_mask[r, :n] = 1.0
        batch.labels[r, :n] = e.labels
        batch.label_mask[r, :n] = e.label_known
        batch.session_ids[r, : k + n] = np.concatenate([e.first_ids, e.second_ids])
        batch.session_mask[r, : k + n] = 1.0
    return batch


def build_batch(
    sessions: Sequence[SessionRecord],
    catalog: TrackCatalog,
    schema: FeatureSchema,
    **steps,
) -> Batch:
    if not sessions:
        raise ContractError("cannot build a batch from zero sessions")
    return collate([encode_session(s, catalog, schema) for s in sessions], **steps)


def compute_track_skip_rates(sessions: Iterable[SessionRecord]) -> dict[str, float]:
    """Fraction of labelled occurrences of each track that were skipped."""
    skips: dict[str, int] = {}
    seen: dict[str, int] = {}
    for s in sessions:
        for t in s.tracks:
            if t.skip is None:
                continue
            seen[t.track_id] = seen.get(t.track_id, 0) + 1
            skips[t.track_id] = skips.get(t.track_id, 0) + int(t.skip)
    return {tid: skips[tid] / n for tid, n in seen.items()}
