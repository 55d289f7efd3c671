"""Spatiotemporal pattern network: emission counts, Dirichlet evidence, pattern bits.

A pattern ``(a, b)`` is the matrix of counts of "channel ``b`` emits symbol
``n`` right after channel ``a`` was in state ``m``". Diagonal pairs are
atomic patterns, off-diagonal pairs relational ones. The importance of a
pattern on a short window is the Dirichlet-multinomial evidence of the
window's counts under the counts learned from all training data, computed
entirely in log-gamma space.

Raw importances share a strong per-window common factor: a window that
visits rare symbols scores low on every pattern at once. The ``"marginal"``
normalization removes it by scoring each pattern as the log ratio of the
window's emission sequence probability under the state-conditioned counts to
the same probability under the row-pooled (state-blind) counts, so a
pattern scores high only when the source state actually helps predict the
target channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .errors import DataError, ModelError
from .symbolic import Partitioner, StateFrame, SymbolFrame, states, symbolize
from .timeseries_io import TimeSeriesFrame

__all__ = [
    "StpnModel",
    "PatternVector",
    "learn_counts",
    "log_B",
    "log_importance",
    "log_sequence_evidence",
    "log_marginal_ratio",
    "NORMALIZATIONS",
    "log_prior_density",
    "learn_stpn",
    "window_counts",
    "window_log_importance",
    "calibrate_thresholds",
    "infer_pattern_vector",
    "pattern_matrix",
]

MODEL_VERSION = 1
NORMALIZATIONS = ("none", "marginal")


def learn_counts(
    states_a: np.ndarray,
    symbols_b: np.ndarray,
    n_states: int,
    n_symbols: int,
) -> np.ndarray:
    """Count (state of ``a`` at k, symbol of ``b`` at the next step) pairs.

    ``states_a`` comes from a depth-D encoding of a sequence of the same
    length as ``symbols_b``, so ``len(states_a) == len(symbols_b) - D + 1``
    and state ``j`` is followed by symbol ``j + D``.
    """
    states_a = np.asarray(states_a, dtype=np.int64)
    symbols_b = np.asarray(symbols_b, dtype=np.int64)
    depth = len(symbols_b) - len(states_a) + 1
    if depth < 1:
        raise DataError(
            f"misaligned sequences: {len(states_a)} states vs {len(symbols_b)} symbols"
        )
    counts = np.zeros((n_states, n_symbols), dtype=np.int64)
    if len(states_a) < 2:
        return counts
    idx = states_a[:-1] * n_symbols + symbols_b[depth:]
    counts += np.bincount(idx, minlength=n_states * n_symbols).reshape(n_states, n_symbols)
    return counts


def log_B(counts_row) -> float:
    """``log( prod_n N_n! / (N + |alphabet| - 1)! )`` for one row of counts."""
    row = np.asarray(counts_row, dtype=float)
    return float(gammaln(row + 1).sum() - gammaln(row.sum() + row.size))


def log_importance(model_counts, window_counts) -> float:
    """Log of the pattern importance of ``window_counts`` given ``model_counts``.

    The proportionality constant is dropped, so an empty window scores 0.
    """
    N, Nw = _check_pair(model_counts, window_counts)
    k = N.shape[1]
    Nm, Nwm = N.sum(axis=1), Nw.sum(axis=1)
    rows = gammaln(Nwm + 1) + gammaln(Nm + k) - gammaln(Nwm + Nm + k)
    cells = gammaln(Nw + N + 1) - gammaln(Nw + 1) - gammaln(N + 1)
    return float(rows.sum() + cells.sum())


def _check_pair(model_counts, window_counts) -> tuple[np.ndarray, np.ndarray]:
    N = np.asarray(model_counts, dtype=float)
    Nw = np.asarray(window_counts, dtype=float)
    if N.shape != Nw.shape or N.ndim != 2:
        raise DataError(f"count shape mismatch: {N.shape} vs {Nw.shape}")
    return N, Nw


def log_sequence_evidence(model_counts, window_counts) -> float:
    """Log posterior-predictive probability of one ordered emission sequence.

    Unlike :func:`log_importance` this is the probability of the sequence
    itself, not of its count table, so it carries no multinomial
    coefficients and models with different row groupings are comparable.
    """
    N, Nw = _check_pair(model_counts, window_counts)
    k = N.shape[1]
    Nm, Nwm = N.sum(axis=1), Nw.sum(axis=1)
    rows = gammaln(Nm + k) - gammaln(Nwm + Nm + k)
    cells = gammaln(Nw + N + 1) - gammaln(N + 1)
    return float(rows.sum() + cells.sum())


def log_marginal_ratio(model_counts, window_counts) -> float:
    """Sequence evidence given the source state, minus the state-blind evidence."""
    N, Nw = _check_pair(model_counts, window_counts)
    pooled = log_sequence_evidence(N.sum(axis=0, keepdims=True), Nw.sum(axis=0, keepdims=True))
    return log_sequence_evidence(N, Nw) - pooled


def log_prior_density(counts, theta) -> float:
    """Log joint Dirichlet density of a row-stochastic ``theta`` under ``counts``.

    Rows are independent, each Dirichlet with concentration ``counts + 1``.
    """
    N = np.asarray(counts, dtype=float)
    theta = np.asarray(theta, dtype=float)
    k = N.shape[1]
    return float(
        gammaln(N.sum(axis=1) + k).sum()
        + np.sum(N * np.log(theta))
        - gammaln(N + 1).sum()
    )


@dataclass(frozen=True)
class PatternVector:
    bits: np.ndarray
    log_importance: np.ndarray | None = None


@dataclass(frozen=True)
class StpnModel:
    """Learned patterns for every ordered channel pair, row-major in ``(a, b)``."""

    partitioner: Partitioner
    depth: int
    counts: tuple[np.ndarray, ...]
    thresholds: np.ndarray | None = None
    threshold_policy: dict = field(default_factory=lambda: {"kind": "median"})
    normalization: str = "none"

    def __post_init__(self) -> None:
        if self.normalization not in NORMALIZATIONS:
            raise ModelError(f"unknown normalization {self.normalization!r}")

    @property
    def channels(self) -> tuple[str, ...]:
        return self.partitioner.channels

    @property
    def alphabet_sizes(self) -> tuple[int, ...]:
        return self.partitioner.alphabet_sizes

    @property
    def f(self) -> int:
        return len(self.channels)

    @property
    def n_patterns(self) -> int:
        return self.f * self.f

    @property
    def pattern_pairs(self) -> list[tuple[int, int]]:
        return [(a, b) for a in range(self.f) for b in range(self.f)]

    @property
    def pattern_labels(self) -> list[str]:
        ch = self.channels
        return [f"{ch[a]}->{ch[b]}" for a, b in self.pattern_pairs]

    @property
    def calibrated(self) -> bool:
        return self.thresholds is not None

    def to_dict(self) -> dict:
        f = self.f
        return {
            "version": MODEL_VERSION,
            "f": f,
            "depth": self.depth,
            "channels": list(self.channels),
            "alphabet_sizes": list(self.alphabet_sizes),
            "partitioner": self.partitioner.to_dict(),
            "counts": [[self.counts[a * f + b].tolist() for b in range(f)] for a in range(f)],
            "thresholds": (
                None
                if self.thresholds is None
                else [[float(self.thresholds[a * f + b]) for b in range(f)] for a in range(f)]
            ),
            "threshold_policy": dict(self.threshold_policy),
            "normalization": self.normalization,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StpnModel":
        if d.get("version") != MODEL_VERSION:
            raise DataError(f"unsupported STPN model version {d.get('version')!r}")
        f = int(d["f"])
        counts = tuple(
            np.asarray(d["counts"][a][b], dtype=np.int64) for a in range(f) for b in range(f)
        )
        thr = d.get("thresholds")
        thresholds = None if thr is None else np.asarray(thr, dtype=float).reshape(-1)
        model = cls(Partitioner.from_dict(d["partitioner"]), int(d["depth"]), counts,
                    thresholds, dict(d.get("threshold_policy", {"kind": "median"})),
                    str(d.get("normalization", "none")))
        if model.f != f:
            raise DataError("model file channel count disagrees with its partitioner")
        return model


def _encode(frame: TimeSeriesFrame, part: Partitioner, depth: int) -> tuple[SymbolFrame, StateFrame]:
    sym = symbolize(frame, part)
    return sym, states(sym, depth)


def window_counts(
    sym: SymbolFrame, st: StateFrame, n_states: Sequence[int]
) -> list[np.ndarray]:
    """All ``f * f`` emission-count matrices of one encoded sequence."""
    f = len(sym.channels)
    return [
        learn_counts(st.states[:, a], sym.symbols[:, b], n_states[a], sym.alphabet_sizes[b])
        for a in range(f)
        for b in range(f)
    ]


def learn_stpn(
    frames: TimeSeriesFrame | Sequence[TimeSeriesFrame],
    partitioner: Partitioner,
    depth: int = 1,
    normalization: str = "none",
) -> StpnModel:
    """Modeling phase: accumulate emission counts over whole training sequences.

    Several frames (e.g. one per nominal operating mode) are counted
    separately and summed, so no transition spans two files.
    """
    frames = [frames] if isinstance(frames, TimeSeriesFrame) else list(frames)
    if not frames:
        raise DataError("no training frames")
    n_states = [k**depth for k in partitioner.alphabet_sizes]
    total: list[np.ndarray] | None = None
    for fr in frames:
        if fr.n_samples < depth + 1:
            raise DataError(f"training frame of {fr.n_samples} samples yields no transitions")
        sym, st = _encode(fr, partitioner, depth)
        c = window_counts(sym, st, n_states)
        total = c if total is None else [t + x for t, x in zip(total, c)]
    return StpnModel(partitioner, depth, tuple(total),  # type: ignore[arg-type]
                     normalization=normalization)


def window_log_importance(
    model: StpnModel, window: TimeSeriesFrame, leave_out: bool = False
) -> np.ndarray:
    """Inference phase: log importance of every pattern on one short window.

    The score follows the model's normalization (raw log importance, or the
    log ratio to the state-blind reference).

    With ``leave_out`` the window's own transitions are first subtracted
    from the model counts; use it for windows cut from the training data so
    they are scored like unseen data.
    """
    if window.n_samples < model.depth + 2:
        raise DataError(
            f"window of {window.n_samples} samples too short for depth {model.depth}"
        )
    n_states = [k**model.depth for k in model.alphabet_sizes]
    sym, st = _encode(window, model.partitioner, model.depth)
    wc = window_counts(sym, st, n_states)
    score = log_marginal_ratio if model.normalization == "marginal" else log_importance
    if leave_out:
        if any(np.any(Nw > N) for N, Nw in zip(model.counts, wc)):
            raise DataError("leave_out window is not part of the model's training data")
        return np.array([score(N - Nw, Nw) for N, Nw in zip(model.counts, wc)])
    return np.array([score(N, Nw) for N, Nw in zip(model.counts, wc)])


def calibrate_thresholds(
    model: StpnModel,
    training_windows: Sequence[TimeSeriesFrame],
    policy: str = "median",
    quantile: float | None = None,
    absolute: Sequence[float] | float | None = None,
    leave_out: bool = False,
) -> StpnModel:
    """Set per-pattern binarization thresholds on the log-importance scale.

    ``policy`` is ``"median"`` (default), ``"quantile"`` (linear
    interpolation at ``quantile``) or ``"absolute"`` (thresholds given).
    """
    if policy == "absolute":
        if absolute is None:
            raise DataError("absolute threshold policy needs threshold values")
        thr = np.broadcast_to(np.asarray(absolute, dtype=float), (model.n_patterns,)).copy()
        return replace(model, thresholds=thr, threshold_policy={"kind": "absolute"})
    if len(training_windows) < 2:
        raise DataError(f"need >= 2 training windows, got {len(training_windows)}")
    scores = np.vstack([window_log_importance(model, w, leave_out) for w in training_windows])
    return _thresholds_from_scores(model, scores, policy, quantile)


def _thresholds_from_scores(
    model: StpnModel, scores: np.ndarray, policy: str, quantile: float | None
) -> StpnModel:
    if policy == "median":
        thr, info = np.median(scores, axis=0), {"kind": "median"}
    elif policy == "quantile":
        if quantile is None or not 0.0 <= quantile <= 1.0:
            raise DataError(f"quantile policy needs q in [0, 1], got {quantile!r}")
        thr, info = np.quantile(scores, quantile, axis=0), {"kind": "quantile", "q": quantile}
    else:
        raise DataError(f"unknown threshold policy {policy!r}")
    if not np.all(np.isfinite(thr)):
        raise DataError("non-finite thresholds")
    return replace(model, thresholds=np.asarray(thr, dtype=float), threshold_policy=info)


def infer_pattern_vector(model: StpnModel, window: TimeSeriesFrame) -> PatternVector:
    """Binary pattern vector of a window: bit is 1 iff log importance >= threshold."""
    if not model.calibrated:
        raise ModelError("STPN thresholds are not calibrated")
    scores = window_log_importance(model, window)
    return PatternVector((scores >= model.thresholds).astype(np.int8), scores)


def pattern_matrix(
    model: StpnModel, windows: Sequence[TimeSeriesFrame], leave_out: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Bits and log importances for many windows, shape ``(n_windows, f*f)`` each."""
    if not model.calibrated:
        raise ModelError("STPN thresholds are not calibrated")
    scores = np.vstack([window_log_importance(model, w, leave_out) for w in windows])
    return (scores >= model.thresholds).astype(np.int8), scores
