"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from .data import FeatureSchema, SessionRecord, TrackCatalog
from .errors import ContractError, UnknownTrackError, ValidationError


def check_sessions(X, require_labels: str | None = None) -> list[SessionRecord]:
    """Coerce ``X`` into validated :class:`SessionRecord` objects.

    Accepts records or their JSON dict form.
    """
    if isinstance(X, (SessionRecord, Mapping)):
        raise ValidationError("expected a sequence of sessions, got a single session")
    sessions = []
    for item in X:
        if isinstance(item, Mapping):
            item = SessionRecord.from_json(item)
        elif not isinstance(item, SessionRecord):
            raise ValidationError(f"expected SessionRecord, got {type(item).__name__}")
        sessions.append(item.validate(require_labels=require_labels))
    if not sessions:
        raise ContractError("no sessions given")
    return sessions


def check_catalog_covers(sessions: Iterable[SessionRecord], catalog: TrackCatalog) -> None:
    for s in sessions:
        for t in s.tracks:
            if t.track_id not in catalog:
                raise UnknownTrackError(t.track_id)


def check_schema(schema) -> FeatureSchema:
    if isinstance(schema, FeatureSchema):
        return schema
    if isinstance(schema, Mapping):
        return FeatureSchema.from_json(schema)
    raise ValidationError(f"expected FeatureSchema, got {type(schema).__name__}")


def check_binary_vector(values, name: str = "predictions") -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1 or not np.isin(arr, (0, 1)).all():
        raise ValidationError(f"{name} must be a 1-D vector of 0/1 values")
    return arr.astype(int)
