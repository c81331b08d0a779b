"""CSI measurement records and their on-disk format.

The measurement file is line-delimited text. The header line carries the
format version and the raw subcarrier count K; each record line is

    timestamp,tx_id,rx_id,preset,label,re_0,im_0,re_1,im_1,...

with K interleaved real/imag pairs written as shortest round-trip decimal
floats, so a write/read cycle is bit-exact.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .channel import ChannelConfig, get_preset

FORMAT_VERSION = 1

LABEL_COPRESENT = "copresent"
LABEL_NON_COPRESENT = "non-copresent"
LABEL_UNLABELED = "unlabeled"
_LABELS = (LABEL_COPRESENT, LABEL_NON_COPRESENT, LABEL_UNLABELED)


class MeasurementFormatError(ValueError):
    """Raised for malformed or inconsistent measurement files."""


@dataclass
class CsiMeasurement:
    """One received frame's complex channel estimate plus metadata."""

    timestamp: float
    tx_id: str
    rx_id: str
    config: ChannelConfig
    csi: np.ndarray            # complex vector, length config.subcarrier_count
    label: str = LABEL_UNLABELED

    def __post_init__(self):
        self.csi = np.asarray(self.csi, dtype=np.complex128)
        if self.csi.ndim != 1 or len(self.csi) != self.config.subcarrier_count:
            raise MeasurementFormatError(
                f"csi length {self.csi.shape} does not match K={self.config.subcarrier_count}"
            )
        if self.label not in _LABELS:
            raise MeasurementFormatError(f"unknown label {self.label!r}")

    @property
    def is_copresent(self) -> bool:
        return self.label == LABEL_COPRESENT


def _format_record(m: CsiMeasurement) -> str:
    parts = [repr(float(m.timestamp)), m.tx_id, m.rx_id, m.config.name, m.label]
    for h in m.csi:
        parts.append(repr(float(h.real)))
        parts.append(repr(float(h.imag)))
    return ",".join(parts)


def write_measurements(measurements: Iterable[CsiMeasurement], path: str | Path) -> None:
    ms = list(measurements)
    if not ms:
        raise MeasurementFormatError("refusing to write an empty measurement file")
    k = ms[0].config.subcarrier_count
    with open(path, "w") as fh:
        fh.write(f"#csi-measurements v{FORMAT_VERSION} K={k}\n")
        for m in ms:
            if m.config.subcarrier_count != k:
                raise MeasurementFormatError("mixed subcarrier counts in one file")
            fh.write(_format_record(m) + "\n")


def _parse_header(line: str) -> int:
    fields = line.strip().split()
    if len(fields) != 3 or fields[0] != "#csi-measurements":
        raise MeasurementFormatError(f"bad header line: {line.strip()!r}")
    if fields[1] != f"v{FORMAT_VERSION}":
        raise MeasurementFormatError(f"unsupported format version {fields[1]!r}")
    if not fields[2].startswith("K="):
        raise MeasurementFormatError(f"bad header line: {line.strip()!r}")
    return int(fields[2][2:])


def read_measurements(source: str | Path | TextIO) -> list[CsiMeasurement]:
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            return read_measurements(fh)
    return list(iter_measurements(source))


def iter_measurements(fh: TextIO):
    """Stream records from an open measurement file, header first."""
    header = fh.readline()
    if not header:
        raise MeasurementFormatError("empty measurement file")
    k = _parse_header(header)
    for lineno, line in enumerate(fh, start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 5 + 2 * k:
            raise MeasurementFormatError(
                f"line {lineno}: expected {5 + 2 * k} fields, got {len(parts)}"
            )
        ts, tx, rx, preset, label = parts[:5]
        try:
            vals = np.array([float(v) for v in parts[5:]])
        except ValueError as exc:
            raise MeasurementFormatError(f"line {lineno}: {exc}") from None
        csi = vals[0::2] + 1j * vals[1::2]
        yield CsiMeasurement(
            timestamp=float(ts), tx_id=tx, rx_id=rx,
            config=get_preset(preset), csi=csi, label=label,
        )


def measurements_to_text(measurements: Iterable[CsiMeasurement]) -> str:
    buf = io.StringIO()
    ms = list(measurements)
    buf.write(f"#csi-measurements v{FORMAT_VERSION} K={ms[0].config.subcarrier_count}\n")
    for m in ms:
        buf.write(_format_record(m) + "\n")
    return buf.getvalue()


def ingest_external(path: str | Path, mapping: dict) -> list[CsiMeasurement]:
    """Adapt an externally collected delimited CSI dump to CsiMeasurement records.

    ``mapping`` keys:
      preset          channel preset name (required)
      delimiter       field separator, default ","
      skip_lines      header lines to skip, default 0
      timestamp_col   column index, or omit to number rows 0,1,2,...
      tx_col, rx_col  column indices, or tx_id/rx_id constants
      label_col       column index; label_map translates raw values to the
                      canonical labels, otherwise values are used verbatim
      csi_start_col   first column of K interleaved re,im pairs (required)
    """
    config = get_preset(mapping["preset"])
    delim = mapping.get("delimiter", ",")
    skip = int(mapping.get("skip_lines", 0))
    start = int(mapping["csi_start_col"])
    label_map = mapping.get("label_map", {})
    out: list[CsiMeasurement] = []
    with open(path) as fh:
        for _ in range(skip):
            fh.readline()
        for row, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            parts = line.split(delim)
            k = config.subcarrier_count
            if len(parts) < start + 2 * k:
                raise MeasurementFormatError(
                    f"row {row}: need {start + 2 * k} columns, got {len(parts)}"
                )
            if "timestamp_col" in mapping:
                ts = float(parts[int(mapping["timestamp_col"])])
            else:
                ts = float(row)
            tx = parts[int(mapping["tx_col"])] if "tx_col" in mapping else str(mapping.get("tx_id", "tx"))
            rx = parts[int(mapping["rx_col"])] if "rx_col" in mapping else str(mapping.get("rx_id", "rx"))
            if "label_col" in mapping:
                raw = parts[int(mapping["label_col"])]
                label = str(label_map.get(raw, raw))
            else:
                label = str(mapping.get("label", LABEL_UNLABELED))
            vals = np.array([float(v) for v in parts[start:start + 2 * k]])
            csi = vals[0::2] + 1j * vals[1::2]
            out.append(CsiMeasurement(ts, tx, rx, config, csi, label))
    if not out:
        raise MeasurementFormatError(f"no records ingested from {path}")
    return out
