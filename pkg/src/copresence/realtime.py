"""Windowed copresence decisions over a live measurement stream.

Per-measurement predictions are buffered inside a sliding time window;
once enough measurements are present, the majority of the hard per-frame
predictions decides. Ties reject (non-copresent): false accepts are the
security failure, so ambiguity must not grant copresence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import network
from .features import COLUMNS_BOTH, NormStats, measurement_to_row
from .measurement import CsiMeasurement
from .network import MlpModel


class StreamError(ValueError):
    pass


@dataclass
class Decision:
    timestamp: float
    copresent: bool
    votes_copresent: int
    votes_total: int


@dataclass
class DecisionWindow:
    """Sliding buffer of per-measurement predictions for one prover stream."""

    window_length: float = 5.0
    min_measurements: int = 3
    columns: str = COLUMNS_BOTH
    sanitized_phase: bool = False
    preset: str | None = None
    buffer: list[tuple[float, bool]] = field(default_factory=list)

    def __post_init__(self):
        if self.window_length <= 0 or self.min_measurements < 1:
            raise ValueError("window_length and min_measurements must be positive")


def push(
    window: DecisionWindow,
    timestamp: float,
    m: CsiMeasurement,
    model: MlpModel,
    norm_stats: NormStats,
    threshold: float = 0.5,
) -> Decision | None:
    """Score one measurement into the window; decide when the quorum holds.

    Timestamps must be nondecreasing. Entries older than the window drop
    out; with fewer than ``min_measurements`` buffered, no decision is
    emitted.
    """
    if window.buffer and timestamp < window.buffer[-1][0]:
        raise StreamError(
            f"out-of-order timestamp {timestamp} (last was {window.buffer[-1][0]})"
        )
    if window.preset is None:
        window.preset = m.config.name
    elif m.config.name != window.preset:
        raise StreamError(
            f"measurement preset {m.config.name!r} does not match window preset {window.preset!r}"
        )
    row = measurement_to_row(m, columns=window.columns, sanitized_phase=window.sanitized_phase)
    if len(row) != model.input_dim:
        raise StreamError(f"feature dim {len(row)} does not match model input {model.input_dim}")
    scaled = (row - norm_stats.mu) / norm_stats.sigma
    score = network.predict_proba(model, scaled[None, :])[0, 1]
    window.buffer.append((timestamp, bool(score >= threshold)))

    cutoff = timestamp - window.window_length
    window.buffer = [(t, p) for t, p in window.buffer if t >= cutoff]

    if len(window.buffer) < window.min_measurements:
        return None
    votes = sum(p for _, p in window.buffer)
    total = len(window.buffer)
    return Decision(
        timestamp=timestamp,
        copresent=votes * 2 > total,         # tie -> non-copresent
        votes_copresent=votes,
        votes_total=total,
    )
