"""Raw CSI to normalized feature matrices.

Each measurement becomes one row: magnitudes of the useful subcarriers
followed by their phases (D = 2 K'). Null subcarriers are stripped first.
Normalization is per-column variance scaling whose statistics must be fit
on training rows only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import ChannelConfig, get_preset
from .measurement import (
    LABEL_COPRESENT,
    LABEL_NON_COPRESENT,
    LABEL_UNLABELED,
    CsiMeasurement,
)

COLUMNS_BOTH = "mag+phase"
COLUMNS_MAGNITUDE = "magnitude"
COLUMNS_PHASE = "phase"
_COLUMN_MODES = (COLUMNS_BOTH, COLUMNS_MAGNITUDE, COLUMNS_PHASE)

_LABEL_TO_INT = {LABEL_COPRESENT: 1, LABEL_NON_COPRESENT: 0, LABEL_UNLABELED: -1}
_INT_TO_LABEL = {v: k for k, v in _LABEL_TO_INT.items()}


class FeatureError(ValueError):
    pass


@dataclass
class NormStats:
    """Per-column mean and (sigma-guarded) population standard deviation."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.mu.shape != self.sigma.shape or self.mu.ndim != 1:
            raise FeatureError("mu and sigma must be 1-D and the same length")


@dataclass
class FeatureMatrix:
    """N x D real matrix plus labels; magnitudes first, then phases."""

    data: np.ndarray
    labels: np.ndarray                     # int: 1 copresent, 0 non-copresent, -1 unlabeled
    preset: str = "2g4"
    columns: str = COLUMNS_BOTH
    sanitized_phase: bool = False
    norm_stats: NormStats | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.data.ndim != 2:
            raise FeatureError("feature data must be 2-D")
        if len(self.labels) != self.data.shape[0]:
            raise FeatureError("label count must match row count")
        if self.columns not in _COLUMN_MODES:
            raise FeatureError(f"unknown column mode {self.columns!r}")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def rows(self, index) -> "FeatureMatrix":
        return FeatureMatrix(
            data=self.data[index], labels=self.labels[index], preset=self.preset,
            columns=self.columns, sanitized_phase=self.sanitized_phase,
            norm_stats=self.norm_stats,
        )


def magnitude_phase(h):
    """Modulus and four-quadrant argument of complex CSI values.

    The zero input maps to (0, 0). Works elementwise on arrays.
    """
    h = np.asarray(h, dtype=np.complex128)
    return np.abs(h), np.angle(h)


def strip_nulls(m: CsiMeasurement) -> np.ndarray:
    """Drop null-subcarrier values, preserving subcarrier order."""
    config = m.config
    if len(m.csi) != config.subcarrier_count:
        raise FeatureError(
            f"measurement csi length {len(m.csi)} != K={config.subcarrier_count}"
        )
    keep = np.ones(config.subcarrier_count, dtype=bool)
    keep[list(config.null_indices)] = False
    return m.csi[keep]


def sanitize_phase(phases: np.ndarray) -> np.ndarray:
    """Remove the linear phase trend across subcarriers.

    Unwraps the phase sequence, then subtracts the least-squares line in
    subcarrier index, cancelling the slope caused by sampling-time offset
    and the constant clock-phase offset while keeping any ripple.
    """
    phases = np.asarray(phases, dtype=float)
    if phases.ndim != 1:
        raise FeatureError("sanitize_phase expects a 1-D phase vector")
    unwrapped = np.unwrap(phases)
    idx = np.arange(len(phases), dtype=float)
    design = np.stack([idx, np.ones_like(idx)], axis=1)
    coef, *_ = np.linalg.lstsq(design, unwrapped, rcond=None)
    return unwrapped - design @ coef


def measurement_to_row(
    m: CsiMeasurement,
    columns: str = COLUMNS_BOTH,
    sanitized_phase: bool = False,
) -> np.ndarray:
    """Feature row for one measurement: [magnitudes | phases] (or a slice)."""
    useful = strip_nulls(m)
    mags, phases = magnitude_phase(useful)
    if sanitized_phase and columns != COLUMNS_MAGNITUDE:
        phases = sanitize_phase(phases)
    if columns == COLUMNS_BOTH:
        return np.concatenate([mags, phases])
    if columns == COLUMNS_MAGNITUDE:
        return mags
    if columns == COLUMNS_PHASE:
        return phases
    raise FeatureError(f"unknown column mode {columns!r}")


def build_feature_matrix(
    measurements: list[CsiMeasurement],
    columns: str = COLUMNS_BOTH,
    sanitized_phase: bool = False,
) -> FeatureMatrix:
    """Stack measurement rows in input order into a FeatureMatrix."""
    if not measurements:
        raise FeatureError("no measurements given")
    preset = measurements[0].config.name
    if any(m.config.name != preset for m in measurements):
        raise FeatureError("measurements mix channel presets")
    rows = [measurement_to_row(m, columns, sanitized_phase) for m in measurements]
    labels = [_LABEL_TO_INT[m.label] for m in measurements]
    return FeatureMatrix(
        data=np.vstack(rows), labels=np.array(labels), preset=preset,
        columns=columns, sanitized_phase=sanitized_phase,
    )


def fit_variance_scaling(train: FeatureMatrix) -> NormStats:
    """Per-column mean/std over training rows; zero-variance columns get sigma 1."""
    if train.n < 2:
        raise FeatureError("variance scaling needs at least 2 rows")
    mu = train.data.mean(axis=0)
    sigma = train.data.std(axis=0)       # population std
    sigma = np.where(sigma == 0.0, 1.0, sigma)
    return NormStats(mu=mu, sigma=sigma)


def apply_scaling(x: FeatureMatrix, stats: NormStats) -> FeatureMatrix:
    if x.dim != len(stats.mu):
        raise FeatureError(f"feature dim {x.dim} != stats dim {len(stats.mu)}")
    scaled = (x.data - stats.mu) / stats.sigma
    return FeatureMatrix(
        data=scaled, labels=x.labels, preset=x.preset, columns=x.columns,
        sanitized_phase=x.sanitized_phase, norm_stats=stats,
    )


# -- feature files -----------------------------------------------------------

def write_features(fm: FeatureMatrix, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write(
            f"#csi-features v1 D={fm.dim} preset={fm.preset} "
            f"columns={fm.columns} sanitized={int(fm.sanitized_phase)}\n"
        )
        for row, label in zip(fm.data, fm.labels):
            fields = [_INT_TO_LABEL[int(label)]] + [repr(float(v)) for v in row]
            fh.write(",".join(fields) + "\n")


def read_features(path: str | Path) -> FeatureMatrix:
    with open(path) as fh:
        header = fh.readline().strip().split()
        if not header or header[0] != "#csi-features" or header[1] != "v1":
            raise FeatureError(f"bad feature file header in {path}")
        meta = dict(part.split("=", 1) for part in header[2:])
        dim = int(meta["D"])
        rows, labels = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != dim + 1:
                raise FeatureError(f"{path}:{lineno}: expected {dim + 1} fields")
            labels.append(_LABEL_TO_INT[parts[0]])
            rows.append([float(v) for v in parts[1:]])
    return FeatureMatrix(
        data=np.array(rows), labels=np.array(labels), preset=meta["preset"],
        columns=meta["columns"], sanitized_phase=bool(int(meta["sanitized"])),
    )
