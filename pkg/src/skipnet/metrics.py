"""Mean average accuracy, baselines, majority voting and prediction files."""

from __future__ import annotations

import json
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import SessionRecord
from .errors import ConfigError, ContractError, ParseError, ValidationError


def session_average_accuracy(predictions, labels) -> float:
    """Average over positions i of (accuracy of the first i predictions) * [i correct]."""
    pred = np.asarray(predictions).astype(int).reshape(-1)
    true = np.asarray(labels).astype(int).reshape(-1)
    if pred.shape != true.shape:
        raise ContractError(f"{pred.size} predictions for {true.size} labels")
    if pred.size == 0:
        raise ContractError("average accuracy of an empty sequence")
    # Exact rational arithmetic, rounded once, so the value does not depend on
    # summation order.
    hits, total = 0, Fraction(0)
    for i, ok in enumerate(pred == true, start=1):
        if ok:
            hits += 1
            total += Fraction(hits, i)
    return float(total / pred.size)


@dataclass
class EvalReport:
    mean_average_accuracy: float
    first_prediction_accuracy: float
    n_sessions: int
    per_session: dict[str, float] | None = field(default=None, repr=False)
    label: str = ""

    def to_json(self, include_sessions: bool = False) -> dict:
        out = {
            "mean_average_accuracy": self.mean_average_accuracy,
            "first_prediction_accuracy": self.first_prediction_accuracy,
            "n_sessions": self.n_sessions,
        }
        if self.label:
            out = {"label": self.label, **out}
        if include_sessions and self.per_session is not None:
            out["per_session"] = self.per_session
        return out


def format_reports(reports: Sequence[EvalReport]) -> str:
    """Aligned plain-text table, one row per report."""
    headers = ("model", "MAA", "first-pred acc", "sessions")
    rows = [
        (r.label or "-", f"{r.mean_average_accuracy:.4f}", f"{r.first_prediction_accuracy:.4f}", str(r.n_sessions))
        for r in reports
    ]
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(headers, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))))
    return "\n".join(lines)


def evaluate(
    predictions: Mapping[str, Sequence[int]],
    sessions: Iterable[SessionRecord],
    keep_sessions: bool = False,
    label: str = "",
) -> EvalReport:
    """Score second-half predictions keyed by session id.

    Sessions without a second half are excluded from both metrics.
    """
    scores: dict[str, float] = {}
    exact_sum = Fraction(0)
    first_hits = 0
    for s in sessions:
        labels = s.second_half_labels
        if not labels:
            continue
        if any(y is None for y in labels):
            raise ContractError(f"session {s.session_id!r} lacks second-half labels")
        if s.session_id not in predictions:
            raise ContractError(f"no predictions for session {s.session_id!r}")
        pred = np.asarray(predictions[s.session_id]).astype(int)
        scores[s.session_id] = session_average_accuracy(pred, labels)
        exact_sum += Fraction(scores[s.session_id])
        first_hits += int(pred[0] == labels[0])
    if not scores:
        raise ContractError("evaluation over an empty session set")
    n = len(scores)
    return EvalReport(
        mean_average_accuracy=float(exact_sum / n),
        first_prediction_accuracy=first_hits / n,
        n_sessions=n,
        per_session=scores if keep_sessions else None,
        label=label,
    )


BASELINE_MODES = ("all_skip", "skip_rate", "last_action")


def baseline_predict(mode: str, session: SessionRecord, skip_rates: Mapping[str, float] | None = None) -> np.ndarray:
    """Rule-based second-half predictions.

    ``skip_rate`` predicts a skip when the training skip rate is strictly above
    0.5; tracks never seen in training are predicted skipped.
    """
    k = session.n_first
    second = session.tracks[k:]
    if mode == "all_skip":
        return np.ones(len(second), dtype=int)
    if mode == "skip_rate":
        if skip_rates is None:
            raise ConfigError("skip_rate baseline needs training skip rates")
        return np.array([int(skip_rates.get(t.track_id, 1.0) > 0.5) for t in second], dtype=int)
    if mode == "last_action":
        last = session.tracks[k - 1].skip
        if last is None:
            raise ContractError(f"session {session.session_id!r} has no label on its last first-half track")
        return np.full(len(second), int(last), dtype=int)
    raise ConfigError(f"unknown baseline mode {mode!r}; choose from {BASELINE_MODES}")


def majority_vote(prediction_sets: Sequence[Sequence[int]]) -> np.ndarray:
    """Per-position vote over an odd number of binary prediction vectors."""
    k = len(prediction_sets)
    if k == 0 or k % 2 == 0:
        raise ConfigError(f"majority vote needs an odd number of models, got {k}")
    votes = np.asarray([np.asarray(p).astype(int) for p in prediction_sets])
    if votes.ndim != 2:
        raise ContractError("prediction vectors differ in length")
    return (votes.sum(axis=0) * 2 > k).astype(int)


def prediction_correlation(a: Mapping[str, Sequence[float]], b: Mapping[str, Sequence[float]]) -> float:
    """Pearson correlation of two models' outputs over their shared sessions."""
    keys = sorted(set(a) & set(b))
    x = np.concatenate([np.asarray(a[k], dtype=float) for k in keys])
    y = np.concatenate([np.asarray(b[k], dtype=float) for k in keys])
    if x.std() == 0 or y.std() == 0:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])


@dataclass
class SessionPrediction:
    session_id: str
    predictions: list[int]
    probabilities: list[float]


def write_predictions(path, rows: Iterable[SessionPrediction]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            obj = {"session_id": r.session_id, "predictions": list(map(int, r.predictions)),
                   "probabilities": [float(p) for p in r.probabilities]}
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def load_predictions(path) -> list[SessionPrediction]:
    path = Path(path)
    rows = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                preds = [int(p) for p in obj["predictions"]]
                if any(p not in (0, 1) for p in preds):
                    raise ValidationError("predictions must be 0 or 1")
                probs = [float(p) for p in obj.get("probabilities", preds)]
                rows.append(SessionPrediction(str(obj["session_id"]), preds, probs))
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", path, lineno) from None
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"malformed prediction record ({exc})", path, lineno) from None
    return rows
