"""Linear latent-insensitive autoencoder.

Phase 1 fits a PCA decoder ``U_r`` (truncated SVD of the centered positives) and
sets the encoder equal to it. Phase 2 keeps the decoder frozen and trains the
encoder ``E`` with the shaping objective so that directions occupied by negative
samples (but not by positives) get amplified in the reconstruction error::

    mean ||U_r E^T x+ - x+||^2 + beta * (gamma - mean ||U_r E^T x- - x-||^2)^2

The departure of ``E`` from ``U_r`` lives in the orthogonal complement
(``B = U_c^T (E - U_r)``), which is the "tilt".
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lisae.errors import DataError, ModelFormatError, NumericError, ParameterError
from lisae.linalg import (
    as_matrix,
    as_vector,
    check_orthonormal,
    decompose,
    orthogonal_complement_basis,
    truncated_svd,
)
from lisae.objective import shaping_loss

LINEAR_MAGIC = b"LISAE-LIN1"


@dataclass(frozen=True)
class LinearModel:
    """Frozen decoder basis plus trainable encoder.

    Attributes:
        decoder: ``U_r``, shape ``(m, r)``, orthonormal columns.
        encoder: ``E``, shape ``(m, r)``; equals ``decoder`` right after phase 1.
        mean: Positive-sample mean subtracted before encoding, shape ``(m,)``.
    """

    decoder: np.ndarray
    encoder: np.ndarray
    mean: np.ndarray

    def __post_init__(self):
        D = as_matrix(self.decoder, "decoder")
        E = as_matrix(self.encoder, "encoder")
        mu = as_vector(self.mean, "mean")
        if D.shape != E.shape or mu.shape[0] != D.shape[0]:
            raise ParameterError(f"inconsistent shapes: decoder {D.shape}, encoder {E.shape}, mean {mu.shape}")
        if D.shape[1] > D.shape[0]:
            raise ParameterError("latent_dim exceeds input_dim")
        check_orthonormal(D, tol=1e-10, name="decoder")
        for name, arr in (("decoder", D), ("encoder", E), ("mean", mu)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def input_dim(self) -> int:
        return self.decoder.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.decoder.shape[1]

    @property
    def tilt(self) -> np.ndarray:
        """``B = U_c^T (E - U_r)``, shape ``(m - r, r)``."""
        U_c = orthogonal_complement_basis(self.decoder)
        return U_c.T @ (self.encoder - self.decoder)

    def reconstruct(self, X) -> np.ndarray:
        Xc = self._centered(X)
        return Xc @ self.encoder @ self.decoder.T + self.mean

    def scores(self, X) -> np.ndarray:
        """Squared reconstruction errors for each row of ``X``."""
        Xc = self._centered(X)
        R = Xc @ self.encoder @ self.decoder.T - Xc
        return np.einsum("ij,ij->i", R, R)

    def _centered(self, X) -> np.ndarray:
        A = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if A.shape[1] != self.input_dim:
            raise ParameterError(f"dimension mismatch: expected {self.input_dim}, got {A.shape[1]}")
        return A - self.mean


@dataclass(frozen=True)
class TiltHyperparams:
    """Phase-2 settings for the linear model.

    ``tilt_init`` is the scale of a random initial tilt along the orthogonal
    complement. ``E = U_r`` is a stationary point of the shaping objective (every
    sample's reconstruction is already optimal there), so gradient descent needs a
    nudge off it whenever ``beta > 0``.
    """

    beta: float
    gamma: float
    learning_rate: float = 3e-4
    epochs: int = 60
    batch_size: int = 1024
    seed: int = 0
    momentum: float = 0.9
    hinge: bool = False
    b_param: bool = False
    tilt_init: float = 1e-3

    def __post_init__(self):
        if not self.beta >= 0:
            raise ParameterError(f"beta must be >= 0, got {self.beta}")
        if not self.gamma > 0:
            raise ParameterError(f"gamma must be > 0, got {self.gamma}")
        if not self.learning_rate > 0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ParameterError("epochs must be >= 0 and batch_size >= 1")
        if not 0 <= self.momentum < 1:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.tilt_init < 0:
            raise ParameterError("tilt_init must be >= 0")


def fit_linear_phase1(X_pos, r: int, center: bool = True) -> LinearModel:
    """PCA phase: decoder = encoder = leading ``r`` left singular vectors.

    Args:
        X_pos: Positive samples, one per row, shape ``(n, m)``.
        r: Latent dimension.
        center: Subtract (and store) the positive mean first.
    """
    X = as_matrix(X_pos, "X_pos")
    n, m = X.shape
    if n == 0:
        raise DataError("empty positive set")
    if not 1 <= r <= min(n, m):
        raise ParameterError(f"r={r} out of range for {n} samples in {m} dimensions")
    mean = X.mean(axis=0) if center else np.zeros(m)
    Xc = X - mean
    U_r, sigma, _ = truncated_svd(Xc.T, r)
    if sigma[-1] <= max(n, m) * np.finfo(float).eps * max(sigma[0], 1e-300):
        raise ParameterError(f"r={r} exceeds the numerical rank of the positive samples")
    return LinearModel(decoder=U_r, encoder=U_r.copy(), mean=mean)


def linear_score(model: LinearModel, x) -> float:
    """``||U_r E^T x - x||^2`` for one (centered by the model mean) sample."""
    v = as_vector(x)
    if v.shape[0] != model.input_dim:
        raise ParameterError(f"dimension mismatch: expected {model.input_dim}, got {v.shape[0]}")
    return float(model.scores(v[None, :])[0])


def tilt_objective(
    E: np.ndarray,
    decoder: np.ndarray,
    X_pos: np.ndarray,
    X_neg: np.ndarray | None,
    beta: float,
    gamma: float,
    hinge: bool = False,
) -> tuple[float, np.ndarray, float, float]:
    """Shaping objective and its exact gradient with respect to ``E``.

    Inputs must already be centered. Relies on ``decoder`` having orthonormal
    columns, which turns ``U_r^T (U_r E^T x - x)`` into ``(E - U_r)^T x``.

    Returns:
        ``(loss, grad_E, recon_pos, recon_neg)``; ``recon_neg`` is 0 without negatives.
    """
    delta = E - decoder

    def part(X):
        R = X @ E @ decoder.T - X
        recon = float(np.mean(np.einsum("ij,ij->i", R, R)))
        grad = (2.0 / X.shape[0]) * (X.T @ (X @ delta))
        return recon, grad

    recon_pos, grad = part(X_pos)
    if X_neg is None or X_neg.shape[0] == 0:
        if beta > 0:
            raise DataError("beta > 0 requires negative samples")
        return recon_pos, grad, recon_pos, 0.0
    recon_neg, grad_neg = part(X_neg)
    loss, _, d_neg = shaping_loss(recon_pos, recon_neg, beta, gamma, hinge)
    if d_neg != 0.0:
        grad = grad + d_neg * grad_neg
    return loss, grad, recon_pos, recon_neg


def _negative_batches(rng: np.random.Generator, n_pos: int, n_neg: int) -> np.ndarray:
    """Negative indices paired one-to-one with a positive epoch."""
    if n_neg >= n_pos:
        return rng.permutation(n_neg)[:n_pos]
    return rng.integers(0, n_neg, size=n_pos)


@dataclass
class LinearPhaseReport:
    recon_pos: list[float] = field(default_factory=list)
    recon_neg: list[float] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)


def fit_linear_phase2(
    model: LinearModel,
    X_pos,
    X_neg,
    hp: TiltHyperparams,
    report: LinearPhaseReport | None = None,
) -> LinearModel:
    """Train the encoder by minibatch momentum descent; the decoder is never touched."""
    Xp = as_matrix(X_pos, "X_pos")
    if Xp.shape[0] == 0:
        raise DataError("empty positive set")
    Xn = None
    if X_neg is not None:
        Xn = as_matrix(np.atleast_2d(X_neg), "X_neg")
        if Xn.shape[0] == 0:
            Xn = None
    if hp.beta > 0 and Xn is None:
        raise DataError("beta > 0 requires a nonempty negative set")
    m, r = model.decoder.shape
    for name, A in (("X_pos", Xp), ("X_neg", Xn)):
        if A is not None and A.shape[1] != m:
            raise ParameterError(f"{name} has {A.shape[1]} columns, model expects {m}")

    rng = np.random.default_rng(hp.seed)
    U_r = model.decoder
    Xp = Xp - model.mean
    if Xn is not None:
        Xn = Xn - model.mean
    U_c = orthogonal_complement_basis(U_r) if (hp.b_param or (hp.beta > 0 and hp.tilt_init > 0)) else None

    B = np.zeros((m - r, r))
    if hp.beta > 0 and hp.tilt_init > 0 and m > r:
        B = hp.tilt_init * rng.standard_normal((m - r, r))
    if hp.b_param:
        E = U_r + U_c @ B
    else:
        E = model.encoder.copy()
        if U_c is not None:
            E = E + U_c @ B
    velocity = np.zeros_like(B if hp.b_param else E)

    n = Xp.shape[0]
    for _ in range(hp.epochs):
        order = rng.permutation(n)
        neg_order = _negative_batches(rng, n, Xn.shape[0]) if Xn is not None else None
        ep_pos, ep_neg, ep_loss = [], [], []
        for start in range(0, n, hp.batch_size):
            sl = slice(start, start + hp.batch_size)
            xb = Xp[order[sl]]
            nb = Xn[neg_order[sl]] if neg_order is not None else None
            loss, grad, rp, rn = tilt_objective(E, U_r, xb, nb, hp.beta, hp.gamma, hp.hinge)
            if hp.b_param:
                grad = U_c.T @ grad
            if not np.all(np.isfinite(grad)):
                raise NumericError("non-finite gradient in linear phase 2")
            velocity = hp.momentum * velocity + grad
            if hp.b_param:
                B = B - hp.learning_rate * velocity
                E = U_r + U_c @ B
            else:
                E = E - hp.learning_rate * velocity
            ep_pos.append(rp)
            ep_neg.append(rn)
            ep_loss.append(loss)
        if report is not None:
            report.recon_pos.append(float(np.mean(ep_pos)))
            report.recon_neg.append(float(np.mean(ep_neg)))
            report.loss.append(float(np.mean(ep_loss)))
    if not np.all(np.isfinite(E)):
        raise NumericError("encoder diverged")
    return LinearModel(decoder=model.decoder, encoder=E, mean=model.mean)


def reconstruct_parts(model: LinearModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Reconstruct the in-subspace and orthogonal parts of ``x`` separately.

    ``x`` is centered by the model mean before splitting. A phase-1 model maps
    the orthogonal part to exactly zero; a tilted encoder does not.
    """
    v = as_vector(x)
    if v.shape[0] != model.input_dim:
        raise ParameterError(f"dimension mismatch: expected {model.input_dim}, got {v.shape[0]}")
    parts = decompose(v - model.mean, model.decoder)
    P = model.decoder @ model.encoder.T
    return P @ parts.parallel, P @ parts.orthogonal


def save_linear(model: LinearModel, path: str | Path) -> None:
    Path(path).write_bytes(linear_to_bytes(model))


def linear_to_bytes(model: LinearModel) -> bytes:
    m, r = model.decoder.shape
    buf = io.BytesIO()
    buf.write(LINEAR_MAGIC)
    buf.write(struct.pack("<II", m, r))
    for arr in (model.mean, model.decoder, model.encoder):
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def load_linear(path: str | Path) -> LinearModel:
    return linear_from_bytes(Path(path).read_bytes())


def linear_from_bytes(data: bytes) -> LinearModel:
    k = len(LINEAR_MAGIC)
    if data[:k] != LINEAR_MAGIC:
        raise ModelFormatError("not a linear LIS-AE model file (bad magic)")
    if len(data) < k + 8:
        raise ModelFormatError("truncated header")
    m, r = struct.unpack_from("<II", data, k)
    expected = k + 8 + 8 * (m + 2 * m * r)
    if len(data) != expected:
        raise ModelFormatError(f"expected {expected} bytes, got {len(data)}")
    vals = np.frombuffer(data, dtype="<f8", offset=k + 8).astype(np.float64)
    mean = vals[:m]
    dec = vals[m : m + m * r].reshape(m, r)
    enc = vals[m + m * r :].reshape(m, r)
    return LinearModel(decoder=dec, encoder=enc, mean=mean)
