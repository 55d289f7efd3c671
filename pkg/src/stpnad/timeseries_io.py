"""Loading, validating and windowing multivariate time series."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError

__all__ = ["TimeSeriesFrame", "WindowSpec", "load_csv", "write_csv", "windows", "window_count"]


@dataclass(frozen=True)
class TimeSeriesFrame:
    """``T`` synchronized samples of ``f`` named real-valued channels.

    ``start`` is the sample index of the first row relative to the stream the
    frame was cut from, so windows remember where they came from.
    """

    channels: tuple[str, ...]
    data: np.ndarray
    sample_period: float | None = None
    start: int = 0
    dropped_rows: int = field(default=0, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise DataError(f"data must be 2-D (T x f), got shape {data.shape}")
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "data", data)
        if data.shape[1] != len(self.channels):
            raise DataError(
                f"{len(self.channels)} channel names for {data.shape[1]} data columns"
            )
        if len(set(self.channels)) != len(self.channels):
            raise DataError("duplicate channel names")
        if data.shape[0] < 1:
            raise DataError("frame has no samples")
        if not np.all(np.isfinite(data)):
            raise DataError("frame contains non-finite values")

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.channels.index(name)]

    def select(self, channels: Sequence[str]) -> "TimeSeriesFrame":
        """Reorder/subset channels by name."""
        missing = [c for c in channels if c not in self.channels]
        if missing:
            raise DataError(f"channel(s) absent: {', '.join(missing)}")
        idx = [self.channels.index(c) for c in channels]
        return TimeSeriesFrame(tuple(channels), self.data[:, idx], self.sample_period, self.start)

    def slice(self, lo: int, hi: int) -> "TimeSeriesFrame":
        return TimeSeriesFrame(self.channels, self.data[lo:hi], self.sample_period, self.start + lo)


@dataclass(frozen=True)
class WindowSpec:
    window_length: int = 200
    stride: int = 100

    def validate(self, depth: int = 1) -> None:
        if self.stride < 1:
            raise DataError(f"stride must be >= 1, got {self.stride}")
        if self.window_length < depth + 2:
            raise DataError(
                f"window_length {self.window_length} too short for depth {depth} "
                f"(need >= {depth + 2})"
            )


def _parse_cell(text: str) -> float | None:
    """Return the float value, ``None`` for a droppable cell; raise otherwise."""
    text = text.strip()
    if text == "":
        return None
    value = float(text)  # ValueError propagates to the caller
    return value if math.isfinite(value) else None


def load_csv(
    path: str | Path,
    schema: Sequence[str] | None = None,
    sample_period: float | None = None,
) -> TimeSeriesFrame:
    """Read a header-plus-numeric-body CSV file into a frame.

    Rows with an empty, NaN or infinite cell are dropped whole; the count is
    kept in ``frame.dropped_rows``. Any other non-numeric cell is an error.
    When ``schema`` is given the result has exactly those channels, in that
    order.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows: list[list[float]] = []
        dropped = 0
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(c.strip() == "" for c in raw):
                continue
            if len(raw) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(raw)}")
            try:
                values = [_parse_cell(c) for c in raw]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric cell in {raw!r}") from None
            if any(v is None for v in values):
                dropped += 1
                continue
            rows.append(values)  # type: ignore[arg-type]
    if not rows:
        raise DataError(f"{path}: no numeric rows")
    frame = TimeSeriesFrame(tuple(header), np.array(rows, dtype=float), sample_period)
    if schema is not None:
        frame = frame.select(list(schema))
    object.__setattr__(frame, "dropped_rows", dropped)
    return frame


def write_csv(frame: TimeSeriesFrame, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(frame.channels)
        for row in frame.data:
            writer.writerow([repr(float(v)) for v in row])


def window_count(n_samples: int, spec: WindowSpec) -> int:
    if n_samples < spec.window_length:
        return 0
    return (n_samples - spec.window_length) // spec.stride + 1


def windows(frame: TimeSeriesFrame, spec: WindowSpec) -> list[TimeSeriesFrame]:
    """Cut ``frame`` into windows of ``spec.window_length`` every ``spec.stride`` samples."""
    spec.validate()
    n = window_count(frame.n_samples, spec)
    if n == 0:
        raise DataError(
            f"series of {frame.n_samples} samples is shorter than window_length "
            f"{spec.window_length}"
        )
    return [
        frame.slice(i * spec.stride, i * spec.stride + spec.window_length) for i in range(n)
    ]
