"""Two-phase training of the deep model.

Phase 1 (feature extraction) fits the whole autoencoder to the positives, with
an optional binary cross-entropy head on the latent layer's input that pushes
positive and negative features apart (the LinSep variant). Phase 2 (latent
shaping) freezes everything except the latent layer and minimizes the shaping
objective from :mod:`lisae.objective`.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np

from lisae.datasets import Dataset
from lisae.errors import ConfigError, DataError, NumericError, ParameterError, PreconditionError
from lisae.neural import (
    DeepModel,
    MomentumState,
    activate,
    apply_gradients,
    backward,
    clip_gradients,
    forward,
    set_freeze,
)
from lisae.objective import shaping_loss


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for both phases.

    ``gamma_relative=True`` reads ``gamma`` as a multiple of the phase-1 mean
    negative reconstruction error, measured on the negative set when phase 2 starts.
    ``lr_phase2`` defaults to ``learning_rate``. ``clip_norm`` caps the global
    gradient norm per step; without it the sigmoid autoencoder tends to saturate
    its tanh bottleneck early and stall at the mean-image solution.
    """

    beta: float = 1.0
    gamma: float = 2.0
    learning_rate: float = 0.01
    epochs_phase1: int = 60
    epochs_phase2: int = 30
    batch_size: int = 64
    seed: int = 0
    linsep: bool = False
    bce_weight: float = 1.0
    momentum: float = 0.9
    hinge: bool = False
    gamma_relative: bool = False
    lr_phase2: float | None = None
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if not self.beta >= 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if not self.learning_rate > 0 or (self.lr_phase2 is not None and not self.lr_phase2 > 0):
            raise ConfigError("learning rates must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs_phase1 < 0 or self.epochs_phase2 < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.bce_weight < 0:
            raise ConfigError("bce_weight must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError("clip_norm must be > 0 or None")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class BceHead:
    """Logistic probe on the latent layer's input; lives only during phase 1."""

    weights: np.ndarray
    bias: float = 0.0

    def logits(self, s: np.ndarray) -> np.ndarray:
        return s @ self.weights + self.bias

    def predict(self, s: np.ndarray) -> np.ndarray:
        return activate("sigmoid", self.logits(s))


@dataclass
class PhaseReport:
    phase: int
    recon_pos: list[float] = field(default_factory=list)
    recon_neg: list[float] = field(default_factory=list)
    bce: list[float] | None = None
    batch_total: list[float] = field(default_factory=list)
    batch_pos: list[float] = field(default_factory=list)
    batch_neg: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int = 0
    gamma: float | None = None
    wall_time: float = 0.0
    head: BceHead | None = field(default=None, repr=False)

    @property
    def recon_pos_envelope(self) -> list[float]:
        """Running minimum of the per-epoch positive loss."""
        return np.minimum.accumulate(self.recon_pos).tolist() if self.recon_pos else []

    def to_dict(self) -> dict:
        d = {
            "phase": self.phase,
            "recon_pos": self.recon_pos,
            "recon_pos_envelope": self.recon_pos_envelope,
            "recon_neg": self.recon_neg,
            "config": self.config,
            "seed": self.seed,
            "gamma": self.gamma,
            "wall_time": self.wall_time,
        }
        if self.bce is not None:
            d["bce"] = self.bce
        if self.phase == 2:
            d.update(batch_total=self.batch_total, batch_pos=self.batch_pos, batch_neg=self.batch_neg)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _sq_err(out: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r = out - x
    return np.einsum("ij,ij->i", r, r), r


def _paired_negatives(rng: np.random.Generator, n_pos: int, n_neg: int) -> np.ndarray:
    """Negative index for every positive slot in an epoch; with replacement if short."""
    if n_neg >= n_pos:
        return rng.permutation(n_neg)[:n_pos]
    return rng.integers(0, n_neg, size=n_pos)


def _check_inputs(model: DeepModel, d: Dataset, name: str) -> np.ndarray:
    x = d.samples
    if len(x) == 0:
        raise DataError(f"empty {name} dataset")
    if x.shape[1] != model.input_dim:
        raise ParameterError(f"{name} dim {x.shape[1]} != model input dim {model.input_dim}")
    return x


def train_phase1(model: DeepModel, D_pos: Dataset, D_neg: Dataset | None, cfg: TrainConfig) -> PhaseReport:
    """Minimize mean ``||x_hat - x||^2`` over the positives (plus the BCE term if ``cfg.linsep``)."""
    if cfg.linsep and D_neg is None:
        raise ConfigError("linsep requires a negative dataset")
    if any(layer.frozen for layer in model.layers):
        raise PreconditionError("phase 1 expects an unfrozen model")
    if len(D_pos) == 0:
        raise DataError("empty positive dataset")
    Xp = _check_inputs(model, D_pos, "positive")
    Xn = _check_inputs(model, D_neg, "negative") if cfg.linsep else None

    rng = np.random.default_rng([cfg.seed, 1])
    head = None
    head_v = None
    if cfg.linsep:
        s_dim = model.latent_layer.in_dim
        head = BceHead(rng.normal(0.0, 0.01, size=s_dim), 0.0)
        head_v = [np.zeros(s_dim), 0.0]
    state = MomentumState(cfg.momentum)
    report = PhaseReport(phase=1, config=cfg.to_dict(), seed=cfg.seed, bce=[] if cfg.linsep else None)
    t0 = time.perf_counter()
    n = len(Xp)
    for _ in range(cfg.epochs_phase1):
        order = rng.permutation(n)
        neg_idx = _paired_negatives(rng, n, len(Xn)) if Xn is not None else None
        rec, bces = [], []
        for start in range(0, n, cfg.batch_size):
            xb = Xp[order[start : start + cfg.batch_size]]
            b = len(xb)
            batch = xb if neg_idx is None else np.vstack([xb, Xn[neg_idx[start : start + b]]])
            trace = forward(model, batch)
            err, r = _sq_err(trace.acts[-1][:b], xb)
            g_out = np.zeros_like(trace.acts[-1])
            g_out[:b] = 2.0 * r / b
            rec.append(float(err.mean()))
            g_s = None
            if head is not None:
                s = trace.inputs[model.latent_index]
                y = np.r_[np.ones(b), np.zeros(len(batch) - b)]
                p = head.predict(s)
                eps = 1e-12
                bce = -np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps))
                bces.append(float(bce))
                g_logit = cfg.bce_weight * (p - y) / len(batch)
                g_s = np.outer(g_logit, head.weights)
                gw, gb = s.T @ g_logit, float(g_logit.sum())
                head_v[0] = cfg.momentum * head_v[0] + gw
                head_v[1] = cfg.momentum * head_v[1] + gb
            grads = backward(model, trace, g_out, g_s)
            if cfg.clip_norm is not None:
                clip_gradients(grads, cfg.clip_norm)
            apply_gradients(model, grads, cfg.learning_rate, state)
            if head is not None:
                head.weights = head.weights - cfg.learning_rate * head_v[0]
                head.bias = head.bias - cfg.learning_rate * head_v[1]
        report.recon_pos.append(float(np.mean(rec)))
        if bces:
            report.bce.append(float(np.mean(bces)))
        if not np.isfinite(report.recon_pos[-1]):
            raise NumericError("phase-1 loss diverged")
    report.head = head
    report.wall_time = time.perf_counter() - t0
    return report


def mean_recon(model: DeepModel, X: np.ndarray) -> float:
    return float(anomaly_scores(model, X).mean())


def train_phase2(model: DeepModel, D_pos: Dataset, D_neg: Dataset, cfg: TrainConfig) -> PhaseReport:
    """Latent shaping: only the latent layer moves; encoder and decoder stay byte-identical."""
    if cfg.beta > 0 and (D_neg is None or len(D_neg) == 0):
        raise DataError("beta > 0 requires a nonempty negative dataset")
    Xp = _check_inputs(model, D_pos, "positive")
    Xn = _check_inputs(model, D_neg, "negative") if D_neg is not None and len(D_neg) else None
    set_freeze(model, "all_but_latent")
    gamma = cfg.gamma
    if cfg.gamma_relative:
        if Xn is None:
            raise ConfigError("gamma_relative requires negatives")
        gamma = cfg.gamma * mean_recon(model, Xn)
    lr = cfg.lr_phase2 if cfg.lr_phase2 is not None else cfg.learning_rate

    rng = np.random.default_rng([cfg.seed, 2])
    state = MomentumState(cfg.momentum)
    report = PhaseReport(phase=2, config=cfg.to_dict(), seed=cfg.seed, gamma=gamma)
    t0 = time.perf_counter()
    n = len(Xp)
    for _ in range(cfg.epochs_phase2):
        order = rng.permutation(n)
        neg_idx = _paired_negatives(rng, n, len(Xn)) if Xn is not None else None
        ep_pos, ep_neg = [], []
        for start in range(0, n, cfg.batch_size):
            xb = Xp[order[start : start + cfg.batch_size]]
            b = len(xb)
            nb = Xn[neg_idx[start : start + b]] if neg_idx is not None else np.empty((0, Xp.shape[1]))
            trace = forward(model, np.vstack([xb, nb]))
            out = trace.acts[-1]
            err_p, r_p = _sq_err(out[:b], xb)
            recon_pos = float(err_p.mean())
            g_out = np.zeros_like(out)
            g_out[:b] = 2.0 * r_p / b
            if len(nb):
                err_n, r_n = _sq_err(out[b:], nb)
                recon_neg = float(err_n.mean())
                total, _, d_neg = shaping_loss(recon_pos, recon_neg, cfg.beta, gamma, cfg.hinge)
                g_out[b:] = d_neg * 2.0 * r_n / len(nb)
            else:
                recon_neg, total = 0.0, recon_pos
            grads = backward(model, trace, g_out)
            if cfg.clip_norm is not None:
                clip_gradients(grads, cfg.clip_norm)
            apply_gradients(model, grads, lr, state)
            report.batch_total.append(total)
            report.batch_pos.append(recon_pos)
            report.batch_neg.append(recon_neg)
            ep_pos.append(recon_pos)
            ep_neg.append(recon_neg)
        report.recon_pos.append(float(np.mean(ep_pos)))
        report.recon_neg.append(float(np.mean(ep_neg)))
        if not np.isfinite(report.recon_pos[-1] + report.recon_neg[-1]):
            raise NumericError("phase-2 loss diverged")
    report.wall_time = time.perf_counter() - t0
    return report


def anomaly_scores(model: DeepModel, X) -> np.ndarray:
    """Squared reconstruction error of every row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.input_dim:
        raise ParameterError(f"expected dim {model.input_dim}, got {X.shape[1]}")
    out = forward(model, X).acts[-1]
    return _sq_err(out, X)[0]


def anomaly_score(model: DeepModel, x) -> float:
    """``||x_hat - x||^2`` for a single sample; above a threshold means anomalous."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ParameterError("anomaly_score takes one sample; use anomaly_scores for batches")
    return float(anomaly_scores(model, v[None, :])[0])
