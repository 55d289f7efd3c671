"""Binary restricted Boltzmann machine: energy, free energy and CD-k training.

Parameter naming: ``W`` has shape ``(n_hidden, n_visible)``; ``b_visible``
and ``b_hidden`` are the visible and hidden biases, so

    E(v, h) = -h.W.v - b_visible.v - b_hidden.h
    F(v)    = -b_visible.v - sum_j softplus(b_hidden_j + W_j.v)
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .errors import ConfigError, DataError

__all__ = [
    "RbmModel",
    "TrainConfig",
    "softplus",
    "energy",
    "free_energy",
    "probability_unnormalized",
    "partition_function",
    "log_partition_function",
    "exact_log_likelihood",
    "cd_gradients",
    "train",
]

MAX_ENUMERATION_UNITS = 24


def softplus(x):
    """``log(1 + e**x)``, exact in the tails: ``x`` above 30, ``e**x`` below -30."""
    x = np.asarray(x, dtype=float)
    mid = np.clip(x, -30.0, 30.0)
    return np.where(x > 30.0, x, np.where(x < -30.0, np.exp(np.minimum(x, 0.0)), np.log1p(np.exp(mid))))


@dataclass(frozen=True)
class RbmModel:
    W: np.ndarray
    b_visible: np.ndarray
    b_hidden: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        bv = np.asarray(self.b_visible, dtype=float)
        bh = np.asarray(self.b_hidden, dtype=float)
        if W.shape != (bh.size, bv.size):
            raise DataError(f"W shape {W.shape} does not match biases ({bh.size}, {bv.size})")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(bv)) and np.all(np.isfinite(bh))):
            raise DataError("non-finite RBM parameters")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b_visible", bv)
        object.__setattr__(self, "b_hidden", bh)

    @property
    def n_visible(self) -> int:
        return self.b_visible.size

    @property
    def n_hidden(self) -> int:
        return self.b_hidden.size

    def hidden_probs(self, v: np.ndarray) -> np.ndarray:
        return expit(v @ self.W.T + self.b_hidden)

    def visible_probs(self, h: np.ndarray) -> np.ndarray:
        return expit(h @ self.W + self.b_visible)

    def to_dict(self) -> dict:
        return {
            "n_visible": self.n_visible,
            "n_hidden": self.n_hidden,
            "W": self.W.tolist(),
            "b_visible": self.b_visible.tolist(),
            "b_hidden": self.b_hidden.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RbmModel":
        model = cls(
            np.asarray(d["W"], dtype=float).reshape(int(d["n_hidden"]), int(d["n_visible"])),
            np.asarray(d["b_visible"], dtype=float),
            np.asarray(d["b_hidden"], dtype=float),
        )
        return model


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 200
    minibatch_size: int = 32
    cd_steps: int = 1
    rng_seed: int = 0
    init_weight_scale: float = 0.01

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.minibatch_size < 1:
            raise ConfigError(f"minibatch_size must be >= 1, got {self.minibatch_size}")
        if self.cd_steps < 1:
            raise ConfigError(f"cd_steps must be >= 1, got {self.cd_steps}")
        if self.init_weight_scale < 0:
            raise ConfigError("init_weight_scale must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def _check_visible(model: RbmModel, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != model.n_visible:
        raise DataError(f"visible vector of length {v.shape[-1]}, model has {model.n_visible}")
    return v


def energy(model: RbmModel, v, h) -> float:
    v = _check_visible(model, v)
    h = np.asarray(h, dtype=float)
    if v.ndim != 1 or h.shape != (model.n_hidden,):
        raise DataError(f"hidden vector shape {h.shape}, model has {model.n_hidden} units")
    return float(-(h @ model.W @ v) - model.b_visible @ v - model.b_hidden @ h)


def free_energy(model: RbmModel, v):
    """Free energy of one visible vector, or of each row of a 2-D array."""
    v = _check_visible(model, v)
    out = -(v @ model.b_visible) - softplus(v @ model.W.T + model.b_hidden).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def probability_unnormalized(model: RbmModel, v, h) -> float:
    return float(np.exp(-energy(model, v, h)))


def _configurations(n: int) -> np.ndarray:
    return np.array(list(itertools.product((0.0, 1.0), repeat=n))).reshape(-1, n)


def _check_enumerable(model: RbmModel) -> None:
    if model.n_visible + model.n_hidden > MAX_ENUMERATION_UNITS:
        raise DataError(
            f"model with {model.n_visible + model.n_hidden} units too large to enumerate "
            f"(limit {MAX_ENUMERATION_UNITS})"
        )


def log_partition_function(model: RbmModel) -> float:
    """``log sum_{v,h} exp(-E(v,h))``, by enumerating the visible layer."""
    _check_enumerable(model)
    vs = _configurations(model.n_visible)
    return float(logsumexp(-free_energy(model, vs)))


def partition_function(model: RbmModel) -> float:
    """Test oracle: sum of ``exp(-E)`` over every joint configuration."""
    _check_enumerable(model)
    vs = _configurations(model.n_visible)
    hs = _configurations(model.n_hidden)
    neg_e = (hs @ model.W @ vs.T) + (vs @ model.b_visible)[None, :] + (hs @ model.b_hidden)[:, None]
    return float(np.exp(neg_e).sum())


def exact_log_likelihood(model: RbmModel, data) -> float:
    """Mean log P(v) over ``data`` under the exactly normalized model."""
    data = _check_visible(model, np.atleast_2d(data))
    return float(-np.mean(free_energy(model, data)) - log_partition_function(model))


def cd_gradients(
    model: RbmModel,
    batch: np.ndarray,
    rng: np.random.Generator | None = None,
    cd_steps: int = 1,
    exact_negative: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Log-likelihood gradient estimates ``(dW, db_visible, db_hidden)``.

    The positive phase uses hidden probabilities given the data. The
    negative phase is ``cd_steps`` of block Gibbs sampling started at the
    data, or the exact model expectation when ``exact_negative`` is set
    (only for enumerable models).
    """
    v0 = np.asarray(batch, dtype=float)
    ph0 = model.hidden_probs(v0)
    n = v0.shape[0]
    pos_W = ph0.T @ v0 / n
    pos_bv = v0.mean(axis=0)
    pos_bh = ph0.mean(axis=0)

    if exact_negative:
        _check_enumerable(model)
        vs = _configurations(model.n_visible)
        fe = free_energy(model, vs)
        p = np.exp(-fe - logsumexp(-fe))
        ph = model.hidden_probs(vs)
        neg_W = (ph * p[:, None]).T @ vs
        neg_bv = p @ vs
        neg_bh = p @ ph
    else:
        if rng is None:
            raise ValueError("rng required for sampled negative phase")
        h = (rng.random(ph0.shape) < ph0).astype(float)
        for step in range(cd_steps):
            pv = model.visible_probs(h)
            v = (rng.random(pv.shape) < pv).astype(float)
            ph = model.hidden_probs(v)
            if step < cd_steps - 1:
                h = (rng.random(ph.shape) < ph).astype(float)
        neg_W = ph.T @ v / n
        neg_bv = v.mean(axis=0)
        neg_bh = ph.mean(axis=0)
    return pos_W - neg_W, pos_bv - neg_bv, pos_bh - neg_bh


def train(
    vectors: Sequence[Sequence[int]] | np.ndarray,
    n_hidden: int,
    cfg: TrainConfig = TrainConfig(),
    on_epoch: Callable[[int, RbmModel], None] | None = None,
) -> RbmModel:
    """Fit an RBM to binary vectors by CD-k with shuffled minibatches.

    Deterministic for a given ``cfg.rng_seed``. ``on_epoch(epoch, model)`` is
    called after every epoch (e.g. to track mean training free energy).
    """
    cfg.validate()
    if len(vectors) == 0:
        raise DataError("empty training corpus")
    try:
        data = np.asarray(vectors, dtype=float)
    except ValueError:
        raise DataError("training vectors have inconsistent lengths") from None
    if data.ndim != 2:
        raise DataError("training vectors have inconsistent lengths")
    if n_hidden < 1:
        raise ConfigError(f"n_hidden must be >= 1, got {n_hidden}")

    rng = np.random.default_rng(cfg.rng_seed)
    n, n_visible = data.shape
    W = rng.normal(0.0, cfg.init_weight_scale, size=(n_hidden, n_visible))
    bv = np.zeros(n_visible)
    bh = np.zeros(n_hidden)
    model = RbmModel(W, bv, bh)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch_size):
            batch = data[order[lo : lo + cfg.minibatch_size]]
            dW, dbv, dbh = cd_gradients(model, batch, rng, cfg.cd_steps)
            W += cfg.learning_rate * dW
            bv += cfg.learning_rate * dbv
            bh += cfg.learning_rate * dbh
            model = RbmModel(W, bv, bh)
        if on_epoch is not None:
            on_epoch(epoch, RbmModel(W.copy(), bv.copy(), bh.copy()))
    return RbmModel(W.copy(), bv.copy(), bh.copy())
