"""Uniform partitioning of real-valued channels into symbols and depth-D states."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError
from .timeseries_io import TimeSeriesFrame

__all__ = ["Partitioner", "SymbolFrame", "StateFrame", "fit_partitioner", "symbolize", "states"]


@dataclass(frozen=True)
class Partitioner:
    """Per-channel equal-width cells over the training range ``[lo, hi]``."""

    channels: tuple[str, ...]
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    alphabet_sizes: tuple[int, ...]

    def edges(self, channel: int) -> np.ndarray:
        lo, hi, k = self.lo[channel], self.hi[channel], self.alphabet_sizes[channel]
        return lo + np.arange(1, k) * ((hi - lo) / k)

    def cell(self, channel: int, symbol: int) -> tuple[float, float]:
        """Interval ``[left, right)`` covered by ``symbol`` (outer cells extend to the range ends)."""
        lo, hi, k = self.lo[channel], self.hi[channel], self.alphabet_sizes[channel]
        width = (hi - lo) / k
        return lo + symbol * width, lo + (symbol + 1) * width

    def to_dict(self) -> dict:
        return {
            "channels": list(self.channels),
            "lo": list(self.lo),
            "hi": list(self.hi),
            "alphabet_sizes": list(self.alphabet_sizes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Partitioner":
        return cls(
            tuple(d["channels"]),
            tuple(float(x) for x in d["lo"]),
            tuple(float(x) for x in d["hi"]),
            tuple(int(x) for x in d["alphabet_sizes"]),
        )


@dataclass(frozen=True)
class SymbolFrame:
    channels: tuple[str, ...]
    symbols: np.ndarray  # (T, f) integer
    alphabet_sizes: tuple[int, ...]

    def __len__(self) -> int:
        return self.symbols.shape[0]


@dataclass(frozen=True)
class StateFrame:
    """State sequences; row ``k`` encodes symbols ``k .. k+D-1`` of the source."""

    channels: tuple[str, ...]
    states: np.ndarray  # (T - D + 1, f) integer
    depth: int
    alphabet_sizes: tuple[int, ...]

    @property
    def state_counts(self) -> tuple[int, ...]:
        return tuple(k**self.depth for k in self.alphabet_sizes)

    def __len__(self) -> int:
        return self.states.shape[0]


def fit_partitioner(
    frame: TimeSeriesFrame | Sequence[TimeSeriesFrame],
    alphabet_size: int | Sequence[int] = 4,
) -> Partitioner:
    """Learn per-channel ranges from training data (one frame or several)."""
    frames = [frame] if isinstance(frame, TimeSeriesFrame) else list(frame)
    if not frames:
        raise DataError("no training data for partitioning")
    channels = frames[0].channels
    for fr in frames[1:]:
        if fr.channels != channels:
            raise DataError("training frames disagree on channels")
    f = len(channels)
    if isinstance(alphabet_size, (int, np.integer)):
        sizes = (int(alphabet_size),) * f
    else:
        sizes = tuple(int(k) for k in alphabet_size)
        if len(sizes) != f:
            raise DataError(f"{len(sizes)} alphabet sizes for {f} channels")
    if min(sizes) < 2:
        raise DataError("alphabet_size must be >= 2")
    data = np.vstack([fr.data for fr in frames])
    lo, hi = data.min(axis=0), data.max(axis=0)
    flat = [channels[i] for i in range(f) if not hi[i] > lo[i]]
    if flat:
        raise DataError(f"constant channel(s) (zero range): {', '.join(flat)}")
    return Partitioner(channels, tuple(map(float, lo)), tuple(map(float, hi)), sizes)


def symbolize(frame: TimeSeriesFrame, part: Partitioner) -> SymbolFrame:
    """Map each value to the number of cell edges ``<= value``.

    Values outside the training range land in the boundary cells.
    """
    if frame.channels != part.channels:
        raise DataError(
            f"frame channels {frame.channels} do not match partitioner {part.channels}"
        )
    out = np.empty(frame.data.shape, dtype=np.int64)
    for c in range(frame.n_channels):
        out[:, c] = np.searchsorted(part.edges(c), frame.data[:, c], side="right")
    return SymbolFrame(frame.channels, out, part.alphabet_sizes)


def states(symbols: SymbolFrame, depth: int = 1) -> StateFrame:
    """Encode each run of ``depth`` consecutive symbols as one integer state.

    The newest symbol is the least significant digit:
    ``state(k) = sum_d symbol(k - d) * |alphabet|**d``.
    """
    if depth < 1:
        raise DataError(f"depth must be >= 1, got {depth}")
    n = len(symbols)
    if n < depth:
        raise DataError(f"sequence of length {n} shorter than depth {depth}")
    sym = symbols.symbols
    base = np.asarray(symbols.alphabet_sizes, dtype=np.int64)
    out = np.zeros((n - depth + 1, sym.shape[1]), dtype=np.int64)
    for d in range(depth):
        # symbol(k - d) for state rows aligned at k = depth-1 .. n-1
        out += sym[depth - 1 - d : n - d] * base**d
    return StateFrame(symbols.channels, out, depth, symbols.alphabet_sizes)
