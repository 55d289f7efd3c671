"""End-to-end detection: STPN pattern bits -> RBM free energy -> symmetric KLD drift.

Training turns nominal windows into binary pattern vectors, fits an RBM on
them, and keeps the Gaussian fit of the training free energies as the
baseline. At test time a batch of windows is scored the same way and its
Gaussian is compared to the baseline with the closed-form symmetric KL
divergence.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rbm as rbm_mod
from . import stpn as stpn_mod
from .errors import ConfigError, DataError, ModelError
from .rbm import RbmModel, TrainConfig
from .stpn import StpnModel
from .symbolic import fit_partitioner
from .timeseries_io import TimeSeriesFrame, WindowSpec, window_count, windows

__all__ = [
    "FreeEnergyDistribution",
    "PipelineConfig",
    "PipelineModel",
    "BatchResult",
    "AnomalyReport",
    "gaussian_kld",
    "fit_pipeline",
    "window_free_energies",
    "score_batch",
    "score_online",
    "batch_report",
    "batch_klds",
    "calibrate_threshold",
    "histogram",
]

PIPELINE_VERSION = 1
MIN_TRAIN_WINDOWS = 30
MIN_BATCH_WINDOWS = 10
MIN_CALIBRATION_BATCHES = 10
SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class FreeEnergyDistribution:
    samples: np.ndarray
    mu: float
    sigma: float

    @classmethod
    def fit(cls, samples) -> "FreeEnergyDistribution":
        """Gaussian fit with sample standard deviation, floored at 1e-6 * max(1, |mu|)."""
        x = np.asarray(samples, dtype=float).ravel()
        if x.size == 0:
            raise DataError("cannot fit a distribution to zero samples")
        mu = float(x.mean())
        sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
        return cls(x, mu, max(sd, SIGMA_FLOOR * max(1.0, abs(mu))))

    def to_dict(self, with_samples: bool = True) -> dict:
        d = {"mu": self.mu, "sigma": self.sigma, "n": int(self.samples.size)}
        if with_samples:
            d["samples"] = self.samples.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FreeEnergyDistribution":
        return cls(np.asarray(d.get("samples", []), dtype=float), float(d["mu"]), float(d["sigma"]))


def _kl(mu_p: float, sd_p: float, mu_q: float, sd_q: float) -> float:
    return math.log(sd_q / sd_p) + (sd_p**2 + (mu_p - mu_q) ** 2) / (2 * sd_q**2) - 0.5


def gaussian_kld(p: FreeEnergyDistribution, q: FreeEnergyDistribution) -> float:
    """Symmetric divergence ``KL(p||q) + KL(q||p)`` between two fitted Gaussians."""
    if not (p.sigma > 0 and q.sigma > 0):
        raise DataError("distribution not fitted (sigma must be > 0)")
    # both log terms cancel exactly in the symmetric sum
    d2 = (p.mu - q.mu) ** 2
    vp, vq = p.sigma**2, q.sigma**2
    return max(0.0, (vp + d2) / (2 * vq) + (vq + d2) / (2 * vp) - 1.0)


@dataclass(frozen=True)
class PipelineConfig:
    alphabet_size: int | tuple[int, ...] = 3
    depth: int = 1
    window: WindowSpec = WindowSpec(1000, 100)
    normalization: str = "marginal"
    threshold_policy: str = "quantile"
    threshold_quantile: float | None = 0.1
    pattern_thresholds: tuple[float, ...] | None = None
    leave_window_out: bool = True
    n_hidden: int | None = None
    train: TrainConfig = TrainConfig()
    batch_windows: int = 100
    batch_step: int | None = None
    target_false_alarm: float = 0.05
    safety_factor: float = 1.5
    hist_bins: int = 20

    def validate(self) -> None:
        sizes = (self.alphabet_size,) if isinstance(self.alphabet_size, int) else self.alphabet_size
        if not all(isinstance(k, int) and not isinstance(k, bool) for k in sizes):
            raise ConfigError(f"alphabet_size must be an integer or a list of integers, got {self.alphabet_size!r}")
        if min(sizes) < 2:
            raise ConfigError("alphabet_size must be >= 2")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.normalization not in stpn_mod.NORMALIZATIONS:
            raise ConfigError(
                f"normalization must be one of {stpn_mod.NORMALIZATIONS}, got {self.normalization!r}"
            )
        try:
            self.window.validate(self.depth)
        except DataError as exc:
            raise ConfigError(str(exc)) from None
        self.train.validate()
        if self.n_hidden is not None and self.n_hidden < 1:
            raise ConfigError("n_hidden must be >= 1")
        if self.batch_windows < MIN_BATCH_WINDOWS:
            raise ConfigError(f"batch_windows must be >= {MIN_BATCH_WINDOWS}")
        if self.batch_step is not None and self.batch_step < 1:
            raise ConfigError("batch_step must be >= 1")
        if not 0.0 < self.target_false_alarm < 1.0:
            raise ConfigError("target_false_alarm must be in (0, 1)")
        if not self.safety_factor > 0:
            raise ConfigError("safety_factor must be > 0")
        if self.hist_bins < 1:
            raise ConfigError("hist_bins must be >= 1")

    @property
    def step(self) -> int:
        return self.batch_windows if self.batch_step is None else self.batch_step

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alphabet_size"] = (self.alphabet_size if isinstance(self.alphabet_size, int)
                              else list(self.alphabet_size))
        if self.pattern_thresholds is not None:
            d["pattern_thresholds"] = list(self.pattern_thresholds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        a = d.get("alphabet_size", cls.alphabet_size)
        d["alphabet_size"] = a if isinstance(a, int) else tuple(a)
        if d.get("pattern_thresholds") is not None:
            d["pattern_thresholds"] = tuple(d["pattern_thresholds"])
        d["window"] = replace(cls.window, **d.get("window", {}))
        d["train"] = TrainConfig(**d.get("train", {}))
        return cls(**d)


@dataclass(frozen=True)
class PipelineModel:
    stpn: StpnModel
    rbm: RbmModel
    baseline: FreeEnergyDistribution
    config: PipelineConfig
    threshold: float | None = None

    @property
    def window(self) -> WindowSpec:
        return self.config.window

    @property
    def channels(self) -> tuple[str, ...]:
        return self.stpn.channels

    def with_threshold(self, threshold: float) -> "PipelineModel":
        return replace(self, threshold=float(threshold))

    def to_dict(self) -> dict:
        return {
            "version": PIPELINE_VERSION,
            "config": self.config.to_dict(),
            "stpn": self.stpn.to_dict(),
            "rbm": {**self.rbm.to_dict(), "train_config": self.config.train.to_dict(),
                    "seed": self.config.train.rng_seed},
            "baseline": self.baseline.to_dict(),
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineModel":
        if d.get("version") != PIPELINE_VERSION:
            raise DataError(f"unsupported model file version {d.get('version')!r}")
        model = cls(
            StpnModel.from_dict(d["stpn"]),
            RbmModel.from_dict(d["rbm"]),
            FreeEnergyDistribution.from_dict(d["baseline"]),
            PipelineConfig.from_dict(d["config"]),
            None if d.get("threshold") is None else float(d["threshold"]),
        )
        if model.rbm.n_visible != model.stpn.n_patterns:
            raise DataError("RBM visible units do not match STPN pattern count")
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "PipelineModel":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"no such model file: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"{path}: malformed model file ({exc})") from None


def _as_frames(data: TimeSeriesFrame | Sequence[TimeSeriesFrame]) -> list[TimeSeriesFrame]:
    frames = [data] if isinstance(data, TimeSeriesFrame) else list(data)
    if not frames:
        raise DataError("no data frames given")
    return frames


def _windows_of(frames: Sequence[TimeSeriesFrame], spec: WindowSpec) -> list[TimeSeriesFrame]:
    out: list[TimeSeriesFrame] = []
    for fr in frames:
        if fr.n_samples >= spec.window_length:
            out.extend(windows(fr, spec))
    return out


def fit_pipeline(
    train: TimeSeriesFrame | Sequence[TimeSeriesFrame],
    cfg: PipelineConfig = PipelineConfig(),
) -> PipelineModel:
    """Learn the full nominal model from one or more nominal frames.

    Several frames (e.g. one per operating mode) share one partitioner and
    one set of pattern counts; windows never straddle frame boundaries.
    """
    cfg.validate()
    frames = _as_frames(train)
    channels = frames[0].channels
    if any(fr.channels != channels for fr in frames):
        raise DataError("training frames disagree on channels")
    wins = _windows_of(frames, cfg.window)
    if len(wins) < MIN_TRAIN_WINDOWS:
        raise DataError(
            f"training data yields {len(wins)} windows; need >= {MIN_TRAIN_WINDOWS}"
        )
    part = fit_partitioner(frames, cfg.alphabet_size)
    stpn = stpn_mod.learn_stpn(frames, part, cfg.depth, cfg.normalization)
    stpn = stpn_mod.calibrate_thresholds(
        stpn, wins, cfg.threshold_policy, cfg.threshold_quantile, cfg.pattern_thresholds,
        leave_out=cfg.leave_window_out,
    )
    bits, _ = stpn_mod.pattern_matrix(stpn, wins, leave_out=cfg.leave_window_out)
    n_hidden = cfg.n_hidden or stpn.n_patterns
    machine = rbm_mod.train(bits, n_hidden, cfg.train)
    baseline = FreeEnergyDistribution.fit(rbm_mod.free_energy(machine, bits))
    return PipelineModel(stpn, machine, baseline, cfg)


def _check_channels(model: PipelineModel, frame: TimeSeriesFrame) -> TimeSeriesFrame:
    if frame.channels == model.channels:
        return frame
    if frame.n_channels != len(model.channels):
        raise DataError(
            f"test data has {frame.n_channels} channels, model expects {len(model.channels)}"
        )
    try:
        return frame.select(model.channels)
    except DataError:
        raise DataError(
            f"test channels {frame.channels} do not match model channels {model.channels}"
        ) from None


def window_free_energies(
    model: PipelineModel, frame: TimeSeriesFrame
) -> tuple[np.ndarray, np.ndarray]:
    """``(start_sample, free_energy)`` for every window of ``frame``."""
    frame = _check_channels(model, frame)
    wins = windows(frame, model.window)
    bits, _ = stpn_mod.pattern_matrix(model.stpn, wins)
    starts = np.array([w.start for w in wins], dtype=np.int64)
    return starts, np.atleast_1d(rbm_mod.free_energy(model.rbm, bits))


def _score_frame(model: PipelineModel, test: TimeSeriesFrame):
    frame = _check_channels(model, test)
    if frame.n_samples < model.window.window_length:
        raise DataError("test data shorter than one window")
    starts, fe = window_free_energies(model, frame)
    if fe.size < MIN_BATCH_WINDOWS:
        raise DataError(f"test data yields {fe.size} windows; need >= {MIN_BATCH_WINDOWS}")
    dist = FreeEnergyDistribution.fit(fe)
    return starts, dist, gaussian_kld(dist, model.baseline)


def score_batch(
    model: PipelineModel, test: TimeSeriesFrame
) -> tuple[FreeEnergyDistribution, float]:
    """Fit the free-energy distribution of all windows of ``test`` and its KLD to the baseline."""
    _, dist, kld = _score_frame(model, test)
    return dist, kld


@dataclass(frozen=True)
class BatchResult:
    batch_index: int
    start_sample: int
    end_sample: int
    distribution: FreeEnergyDistribution
    kld: float
    verdict: bool


@dataclass
class AnomalyReport:
    baseline: FreeEnergyDistribution
    batches: list[BatchResult]
    threshold: float
    config: dict = field(default_factory=dict)

    @property
    def kld_trace(self) -> list[tuple[int, float]]:
        return [(b.batch_index, b.kld) for b in self.batches]

    @property
    def verdicts(self) -> list[bool]:
        return [b.verdict for b in self.batches]

    @property
    def any_anomaly(self) -> bool:
        return any(self.verdicts)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["batch_index", "start_sample", "kld", "mean_free_energy", "verdict"])
        for b in self.batches:
            w.writerow([b.batch_index, b.start_sample, repr(b.kld),
                        repr(b.distribution.mu), int(b.verdict)])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "baseline": self.baseline.to_dict(with_samples=False),
            "threshold": self.threshold,
            "any_anomaly": self.any_anomaly,
            "batches": [
                {
                    "batch_index": b.batch_index,
                    "start_sample": b.start_sample,
                    "end_sample": b.end_sample,
                    "kld": b.kld,
                    "mu": b.distribution.mu,
                    "sigma": b.distribution.sigma,
                    "n_windows": int(b.distribution.samples.size),
                    "verdict": b.verdict,
                }
                for b in self.batches
            ],
            "config": self.config,
            "seed": self.config.get("train", {}).get("rng_seed"),
        }

    def write(self, out_dir: str | Path, bins: int = 20) -> None:
        """Report CSV, summary JSON and one free-energy histogram CSV per batch."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(self.csv_text(), encoding="utf-8")
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=1) + "\n",
                                          encoding="utf-8")
        hist_dir = out / "histograms"
        hist_dir.mkdir(exist_ok=True)
        _write_hist(hist_dir / "baseline.csv", histogram(self.baseline.samples, bins))
        for b in self.batches:
            _write_hist(hist_dir / f"batch_{b.batch_index:04d}.csv",
                        histogram(b.distribution.samples, bins, self.baseline.samples))


def histogram(samples, bins: int = 20, reference=None) -> list[tuple[float, float, int]]:
    """Equal-width histogram; with ``reference`` the bin range spans both sample sets."""
    x = np.asarray(samples, dtype=float)
    pool = x if reference is None else np.concatenate([x, np.asarray(reference, dtype=float)])
    lo, hi = float(pool.min()), float(pool.max())
    if hi <= lo:
        hi = lo + 1.0
    counts, edges = np.histogram(x, bins=bins, range=(lo, hi))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


def _write_hist(path: Path, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count"])
        for left, right, count in rows:
            w.writerow([repr(left), repr(right), count])


def _batches(
    starts: np.ndarray, fe: np.ndarray, model: PipelineModel, batch_windows: int, step: int
):
    wl = model.window.window_length
    for i, lo in enumerate(range(0, fe.size - batch_windows + 1, step)):
        hi = lo + batch_windows
        yield i, int(starts[lo]), int(starts[hi - 1]) + wl, FreeEnergyDistribution.fit(fe[lo:hi])


def batch_klds(
    model: PipelineModel,
    stream: TimeSeriesFrame,
    batch_windows: int | None = None,
    batch_step: int | None = None,
) -> list[tuple[int, int, int, FreeEnergyDistribution, float]]:
    """Slide a batch of consecutive windows along ``stream``; KLD of each batch."""
    batch_windows = model.config.batch_windows if batch_windows is None else batch_windows
    step = (batch_windows if model.config.batch_step is None else model.config.batch_step) \
        if batch_step is None else batch_step
    if batch_windows < MIN_BATCH_WINDOWS:
        raise DataError(f"batch_windows must be >= {MIN_BATCH_WINDOWS}, got {batch_windows}")
    if step < 1:
        raise DataError("batch_step must be >= 1")
    frame = _check_channels(model, stream)
    if frame.n_samples < model.window.window_length:
        raise DataError("stream too short for one batch")
    starts, fe = window_free_energies(model, frame)
    if fe.size < batch_windows:
        raise DataError(f"stream yields {fe.size} windows, fewer than one batch of {batch_windows}")
    return [
        (i, s, e, d, gaussian_kld(d, model.baseline))
        for i, s, e, d in _batches(starts, fe, model, batch_windows, step)
    ]


def score_online(
    model: PipelineModel,
    stream: TimeSeriesFrame,
    batch_windows: int | None = None,
    threshold: float | None = None,
    batch_step: int | None = None,
) -> AnomalyReport:
    """Batch-by-batch KLD trace of a stream with ``KLD >= threshold`` verdicts."""
    threshold = model.threshold if threshold is None else threshold
    if threshold is None:
        raise ModelError("no detection threshold: calibrate one or pass it explicitly")
    rows = batch_klds(model, stream, batch_windows, batch_step)
    batches = [BatchResult(i, s, e, d, k, bool(k >= threshold)) for i, s, e, d, k in rows]
    return AnomalyReport(model.baseline, batches, float(threshold), model.config.to_dict())


def batch_report(
    model: PipelineModel, test: TimeSeriesFrame, threshold: float | None = None
) -> AnomalyReport:
    """One batch over every window of ``test``, as a single-row report."""
    threshold = model.threshold if threshold is None else threshold
    if threshold is None:
        raise ModelError("no detection threshold: calibrate one or pass it explicitly")
    starts, dist, kld = _score_frame(model, test)
    end = int(starts[-1]) + model.window.window_length
    result = BatchResult(0, int(starts[0]), end, dist, kld, bool(kld >= threshold))
    return AnomalyReport(model.baseline, [result], float(threshold), model.config.to_dict())


def calibrate_threshold(
    model: PipelineModel,
    validation_nominal: TimeSeriesFrame | Sequence[TimeSeriesFrame],
    target_false_alarm: float | None = None,
    safety_factor: float | None = None,
    batch_windows: int | None = None,
    batch_step: int | None = None,
) -> float:
    """``safety_factor`` times the ``1 - target_false_alarm`` quantile of nominal batch KLDs.

    Batches start at every window (``batch_step=1``) unless told otherwise:
    the quantile of the batch-KLD distribution does not depend on how the
    detector later spaces its batches, and overlapping batches use the
    validation data fully.
    """
    target = model.config.target_false_alarm if target_false_alarm is None else target_false_alarm
    factor = model.config.safety_factor if safety_factor is None else safety_factor
    if not 0.0 < target < 1.0:
        raise DataError(f"target_false_alarm must be in (0, 1), got {target}")
    n_batch = model.config.batch_windows if batch_windows is None else batch_windows
    klds = []
    for fr in _as_frames(validation_nominal):
        fr = _check_channels(model, fr)
        if window_count(fr.n_samples, model.window) < n_batch:
            continue  # too short for one batch; counted by the guard below
        klds.extend(k for *_, k in batch_klds(model, fr, batch_windows, batch_step or 1))
    if len(klds) < MIN_CALIBRATION_BATCHES:
        raise DataError(
            f"validation data yields {len(klds)} batches; need >= {MIN_CALIBRATION_BATCHES}"
        )
    return threshold_from_klds(klds, target, factor)


def threshold_from_klds(klds: Sequence[float], target_false_alarm: float, safety_factor: float = 1.5) -> float:
    return float(safety_factor * np.quantile(np.asarray(klds, dtype=float), 1.0 - target_false_alarm))
