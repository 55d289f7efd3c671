"""Vector-autoregressive simulation of causally structured multivariate series.

``A[k][i][j]`` is the influence of channel ``j`` at lag ``k + 1`` on channel
``i``. Case-study suites place a coupling on every directed graph edge
``j -> i`` (entry ``A[0][i][j]``) and a constant self term on the diagonal;
anomalies zero the cross-coupling of one failed vertex.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .timeseries_io import TimeSeriesFrame

__all__ = [
    "VarSpec",
    "ScenarioPattern",
    "ScenarioSuite",
    "companion_matrix",
    "generate",
    "generate_switching",
    "coefficients_from_edges",
    "build_case_suite",
    "load_scenario",
    "suite_from_dict",
]

DEFAULT_COUPLING = 0.35
DEFAULT_SELF_TERM = 0.4


def companion_matrix(A: np.ndarray) -> np.ndarray:
    p, f, _ = A.shape
    top = np.hstack(list(A))
    if p == 1:
        return top
    bottom = np.hstack([np.eye(f * (p - 1)), np.zeros((f * (p - 1), f))])
    return np.vstack([top, bottom])


@dataclass(frozen=True)
class VarSpec:
    """Coefficients, noise covariance and seed of a stable VAR(p) process."""

    A: np.ndarray
    noise_cov: np.ndarray
    rng_seed: int = 0

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim == 2:
            A = A[None]
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ConfigError(f"coefficients must have shape (p, f, f), got {A.shape}")
        cov = np.asarray(self.noise_cov, dtype=float)
        if cov.shape != A.shape[1:]:
            raise ConfigError(f"noise_cov shape {cov.shape} does not match f={A.shape[1]}")
        if not np.allclose(cov, cov.T):
            raise ConfigError("noise_cov is not symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ConfigError("noise_cov is not positive definite")
        radius = float(np.max(np.abs(np.linalg.eigvals(companion_matrix(A)))))
        if not radius < 1.0:
            raise ConfigError(f"unstable VAR: companion spectral radius {radius:.4f} >= 1")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "noise_cov", cov)

    @property
    def f(self) -> int:
        return self.A.shape[1]

    @property
    def p(self) -> int:
        return self.A.shape[0]

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(self.A)))))


def generate(
    spec: VarSpec,
    T: int,
    burn_in: int = 500,
    channels: Sequence[str] | None = None,
    seed: int | None = None,
) -> TimeSeriesFrame:
    """Simulate ``T`` samples after discarding ``burn_in`` warm-up samples.

    The first ``p`` samples are pure noise. ``seed`` overrides ``spec.rng_seed``.
    """
    return _simulate(spec, spec, T, T, burn_in, channels, seed)


def generate_switching(
    before: VarSpec,
    after: VarSpec,
    T: int,
    t0: int,
    burn_in: int = 500,
    channels: Sequence[str] | None = None,
    seed: int | None = None,
) -> TimeSeriesFrame:
    """One continuous run that follows ``before`` up to sample ``t0`` and ``after`` from then on.

    The process state carries over the switch; noise comes from one stream
    seeded by ``before``.
    """
    if before.f != after.f or before.p != after.p:
        raise ConfigError("switching specs must share channel count and lag order")
    if not 0 <= t0 <= T:
        raise DataError(f"switch sample t0={t0} outside [0, {T}]")
    return _simulate(before, after, T, t0, burn_in, channels, seed)


def _simulate(before, after, T, t0, burn_in, channels, seed) -> TimeSeriesFrame:
    if T < 1:
        raise DataError(f"T must be >= 1, got {T}")
    if burn_in < before.p:
        raise DataError(f"burn_in must be >= p={before.p}, got {burn_in}")
    rng = np.random.default_rng(before.rng_seed if seed is None else seed)
    total = T + burn_in
    switch = burn_in + t0
    z = rng.standard_normal((total, before.f))
    noise = np.where(
        (np.arange(total) < switch)[:, None],
        z @ np.linalg.cholesky(before.noise_cov).T,
        z @ np.linalg.cholesky(after.noise_cov).T,
    )
    y = np.empty((total, before.f))
    y[: before.p] = noise[: before.p]
    for t in range(before.p, total):
        A = before.A if t < switch else after.A
        acc = noise[t].copy()
        for k in range(before.p):
            acc += A[k] @ y[t - k - 1]
        y[t] = acc
    names = tuple(channels) if channels is not None else tuple(f"s{i + 1}" for i in range(before.f))
    return TimeSeriesFrame(names, y[burn_in:])


def coefficients_from_edges(
    f: int,
    edges: Sequence[Sequence[int]],
    coupling_strength: float = DEFAULT_COUPLING,
    self_term: float = DEFAULT_SELF_TERM,
) -> np.ndarray:
    """Lag-1 coefficient matrix for 1-based directed edges ``(source, target)``."""
    A = np.eye(f) * self_term
    for src, dst in edges:
        if not (1 <= src <= f and 1 <= dst <= f) or src == dst:
            raise ConfigError(f"invalid edge {src}->{dst} for {f} vertices")
        A[dst - 1, src - 1] = coupling_strength
    return A[None]


@dataclass(frozen=True)
class ScenarioPattern:
    name: str
    label: str  # "nominal" or "anomalous"
    edges: tuple[tuple[int, int], ...]
    spec: VarSpec
    parent: str | None = None
    failed_vertex: int | None = None

    @property
    def nominal(self) -> bool:
        return self.label == "nominal"


@dataclass(frozen=True)
class ScenarioSuite:
    name: str
    f: int
    coupling_strength: float
    self_term: float
    noise: float
    patterns: tuple[ScenarioPattern, ...]
    T: int = 20000
    burn_in: int = 500
    seed: int = 0
    source: dict = field(default_factory=dict, compare=False)

    @property
    def nominal(self) -> list[ScenarioPattern]:
        return [p for p in self.patterns if p.nominal]

    @property
    def anomalous(self) -> list[ScenarioPattern]:
        return [p for p in self.patterns if not p.nominal]

    def __getitem__(self, name: str) -> ScenarioPattern:
        for p in self.patterns:
            if p.name == name:
                return p
        raise KeyError(name)

    def to_dict(self) -> dict:
        """Scenario file form, with every pattern's edge list resolved."""
        return {
            "name": self.name,
            "f": self.f,
            "p": 1,
            "coupling_strength": self.coupling_strength,
            "self_term": self.self_term,
            "noise": self.noise,
            "T": self.T,
            "burn_in": self.burn_in,
            "seed": self.seed,
            "patterns": [
                {
                    "name": p.name,
                    "label": p.label,
                    "edges": [list(e) for e in p.edges],
                    "seed": p.spec.rng_seed,
                    **({"parent": p.parent, "failed_vertex": p.failed_vertex}
                       if p.parent is not None else {}),
                }
                for p in self.patterns
            ],
        }


_SCENARIO_KEYS = {"name", "f", "p", "coupling_strength", "self_term", "noise", "T",
                  "burn_in", "seed", "patterns", "description"}
_PATTERN_KEYS = {"name", "label", "edges", "parent", "failed_vertex", "seed"}


def suite_from_dict(
    d: dict,
    coupling_strength: float | None = None,
    seed: int | None = None,
) -> ScenarioSuite:
    """Build a suite from its scenario-file form.

    A pattern either lists ``edges`` or names a ``parent`` pattern and a
    1-based ``failed_vertex``; the latter inherits the parent's edges minus
    every edge touching the failed vertex.
    """
    unknown = set(d) - _SCENARIO_KEYS
    if unknown:
        raise ConfigError(f"unknown scenario key(s): {', '.join(sorted(unknown))}")
    for key in ("f", "patterns"):
        if key not in d:
            raise ConfigError(f"scenario missing key: {key}")
    f = int(d["f"])
    if int(d.get("p", 1)) != 1:
        raise ConfigError("scenario files describe lag-1 graphs only (p = 1)")
    coupling = float(d.get("coupling_strength", DEFAULT_COUPLING) if coupling_strength is None
                     else coupling_strength)
    if not coupling > 0:
        raise ConfigError(f"coupling_strength must be > 0, got {coupling}")
    self_term = float(d.get("self_term", DEFAULT_SELF_TERM))
    noise = float(d.get("noise", 1.0))
    base_seed = int(d.get("seed", 0) if seed is None else seed)
    cov = np.eye(f) * noise

    by_name: dict[str, tuple[tuple[int, int], ...]] = {}
    patterns = []
    for i, pd in enumerate(d["patterns"]):
        unknown = set(pd) - _PATTERN_KEYS
        if unknown:
            raise ConfigError(f"unknown pattern key(s): {', '.join(sorted(unknown))}")
        name, label = pd["name"], pd.get("label", "anomalous")
        if label not in ("nominal", "anomalous"):
            raise ConfigError(f"pattern {name}: label must be nominal or anomalous")
        parent = pd.get("parent")
        failed = pd.get("failed_vertex")
        if parent is not None:
            if parent not in by_name:
                raise ConfigError(f"pattern {name}: unknown parent {parent!r}")
            if failed is None:
                raise ConfigError(f"pattern {name}: parent given without failed_vertex")
            edges = tuple(e for e in by_name[parent] if failed not in e)
        elif "edges" in pd:
            edges = tuple((int(a), int(b)) for a, b in pd["edges"])
        else:
            raise ConfigError(f"pattern {name}: needs edges or parent + failed_vertex")
        by_name[name] = edges
        pseed = int(pd["seed"]) if ("seed" in pd and seed is None) else base_seed + i
        spec = VarSpec(coefficients_from_edges(f, edges, coupling, self_term), cov, pseed)
        patterns.append(ScenarioPattern(name, label, edges, spec, parent,
                                        None if failed is None else int(failed)))
    if not any(p.nominal for p in patterns):
        raise ConfigError("scenario has no nominal pattern")
    return ScenarioSuite(
        str(d.get("name", "scenario")), f, coupling, self_term, noise, tuple(patterns),
        int(d.get("T", 20000)), int(d.get("burn_in", 500)), base_seed, dict(d),
    )


def load_scenario(path: str | Path, **overrides) -> ScenarioSuite:
    with Path(path).open(encoding="utf-8") as fh:
        return suite_from_dict(json.load(fh), **overrides)


def _packaged(case: str) -> dict:
    key = str(case).upper()
    if key not in ("I", "II"):
        raise ConfigError(f"unknown case {case!r}; expected 'I' or 'II'")
    text = resources.files("stpnad").joinpath(f"data/case_{key.lower()}.json").read_text()
    return json.loads(text)


def build_case_suite(
    case: str,
    coupling_strength: float = DEFAULT_COUPLING,
    seed: int = 0,
    topology: str | Path | dict | None = None,
) -> ScenarioSuite:
    """Case I (one nominal graph, five vertex failures) or Case II (three nominal graphs).

    ``topology`` overrides the packaged graph file with a path or a dict in
    scenario-file form.
    """
    if topology is None:
        d = _packaged(case)
    elif isinstance(topology, dict):
        d = topology
    else:
        d = json.loads(Path(topology).read_text())
    return suite_from_dict(d, coupling_strength=coupling_strength, seed=seed)
