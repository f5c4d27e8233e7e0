"""Datasets: IDX ingestion, synthetic generators, augmentation and task splits.

A :class:`Dataset` holds flattened samples (one per row). Reads through the
``samples`` property are counted so tests can prove that a split (negatives
when they are not needed, anomalies during training) was never touched.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
from scipy import ndimage
from skimage.draw import line as draw_line

from lisae.errors import (
    BadMagicError,
    CountMismatchError,
    DataError,
    ParameterError,
    SpecError,
    TruncatedFileError,
)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class Dataset:
    """Immutable sample matrix with optional integer labels.

    Args:
        samples: Array of shape ``(n, m)``.
        labels: Optional class ids, length ``n``.
        source: Free-form provenance string.
        bounded: Require every value to lie in ``[0, 1]`` (image pipelines).
    """

    def __init__(self, samples, labels=None, source: str = "", bounded: bool = True):
        x = np.array(samples, dtype=np.float64, ndmin=2)
        if x.ndim != 2:
            raise DataError(f"samples must be 2-D, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DataError("samples contain non-finite values")
        if bounded and x.size and (x.min() < 0.0 or x.max() > 1.0):
            raise DataError("image samples must lie in [0, 1]")
        x.flags.writeable = False
        self._x = x
        self._labels = None
        if labels is not None:
            lab = np.asarray(labels, dtype=np.int64).ravel().copy()
            if lab.shape[0] != x.shape[0]:
                raise DataError(f"{lab.shape[0]} labels for {x.shape[0]} samples")
            lab.flags.writeable = False
            self._labels = lab
        self.source = source
        self.bounded = bounded
        self.access_count = 0

    @property
    def samples(self) -> np.ndarray:
        self.access_count += 1
        return self._x

    @property
    def labels(self) -> np.ndarray | None:
        return self._labels

    @property
    def dim(self) -> int:
        return self._x.shape[1]

    @property
    def side(self) -> int | None:
        s = int(round(np.sqrt(self.dim)))
        return s if s * s == self.dim else None

    def __len__(self) -> int:
        return self._x.shape[0]

    def __repr__(self) -> str:
        return f"Dataset(n={len(self)}, dim={self.dim}, source={self.source!r})"

    def subset(self, idx, source: str | None = None) -> "Dataset":
        idx = np.asarray(idx)
        labels = None if self._labels is None else self._labels[idx]
        return Dataset(self._x[idx], labels, source or self.source, self.bounded)

    def with_classes(self, classes: Iterable[int], source: str | None = None) -> "Dataset":
        if self._labels is None:
            raise DataError("dataset has no labels")
        mask = np.isin(self._labels, list(classes))
        return self.subset(np.flatnonzero(mask), source)


def concat(datasets: Sequence[Dataset], source: str = "") -> Dataset:
    xs = [d._x for d in datasets]
    labs = [d.labels for d in datasets]
    labels = None if any(l is None for l in labs) else np.concatenate(labs)
    return Dataset(np.vstack(xs), labels, source, all(d.bounded for d in datasets))


# ---------------------------------------------------------------- IDX files


def _read_bytes(path: str | Path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, expected_magic: int, what: str) -> np.ndarray:
    if len(raw) < 4:
        raise TruncatedFileError(f"{what} file too short for an IDX header ({len(raw)} bytes)")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagicError(f"{what} file has magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{what} header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) < header + count:
        raise TruncatedFileError(f"{what} payload truncated: need {count} bytes, have {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path: str | Path, labels_path: str | Path | None = None, source: str | None = None) -> Dataset:
    """Load an IDX image file (optionally gzipped) scaled to ``[0, 1]``.

    Raises:
        BadMagicError, TruncatedFileError, CountMismatchError: on malformed input.
    """
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, "image")
    labels = None
    if labels_path is not None:
        labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, "label")
        if labels.shape[0] != images.shape[0]:
            raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(flat, labels, source or f"idx:{Path(images_path).name}")


def save_idx(d: Dataset, images_path: str | Path, labels_path: str | Path | None = None) -> None:
    """Write samples as square ``uint8`` images (values rounded from ``[0, 1]``)."""
    side = d.side
    if side is None:
        raise ParameterError("IDX export requires square images")
    pixels = np.clip(np.rint(d._x * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, len(d), side, side))
        f.write(pixels.tobytes())
    if labels_path is not None:
        if d.labels is None:
            raise DataError("dataset has no labels to export")
        with open(labels_path, "wb") as f:
            f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(d)))
            f.write(d.labels.astype(np.uint8).tobytes())


def load_mnist_subset() -> Dataset:
    """The bundled 5000-digit MNIST subset (500 per class), scaled to ``[0, 1]``."""
    pkg = resources.files("lisae") / "data"
    with resources.as_file(pkg / "mnist5k-images-idx3-ubyte.gz") as img, resources.as_file(
        pkg / "mnist5k-labels-idx1-ubyte.gz"
    ) as lab:
        return load_idx(img, lab, source="mnist5k")


def save_csv(d: Dataset, path: str | Path) -> None:
    """One sample per row; when labels exist they form the first column."""
    x = d._x
    if d.labels is not None:
        x = np.column_stack([d.labels, x])
        header = "label in column 0"
    else:
        header = ""
    np.savetxt(path, x, delimiter=",", fmt="%.17g", header=header)


def load_csv(path: str | Path, labeled: bool = False, bounded: bool = False) -> Dataset:
    x = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if labeled:
        return Dataset(x[:, 1:], x[:, 0].astype(np.int64), f"csv:{Path(path).name}", bounded)
    return Dataset(x, None, f"csv:{Path(path).name}", bounded)


# ---------------------------------------------------------------- generators


def synth_gaussian(n: int, variances: Sequence[float], seed: int = 0) -> Dataset:
    """``n`` draws from a zero-mean Gaussian with diagonal covariance (not clamped)."""
    var = np.asarray(variances, dtype=np.float64)
    if n < 1:
        raise ParameterError("n must be >= 1")
    if var.ndim != 1 or np.any(~(var > 0)):
        raise ParameterError("variances must be positive")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, var.size)) * np.sqrt(var)
    return Dataset(x, source=f"gaussian:{list(var)}", bounded=False)


def synth_strokes(n: int, side: int = 28, seed: int = 0, smoothing: float = 0.5) -> Dataset:
    """Random polylines (2-5 segments, 1 px wide) lightly blurred, peak-normalized to 1."""
    if n < 1 or side < 8:
        raise ParameterError("need n >= 1 and side >= 8")
    rng = np.random.default_rng(seed)
    out = np.zeros((n, side * side))
    lo, hi = 2, side - 3
    for i in range(n):
        img = np.zeros((side, side))
        segments = rng.integers(2, 6)
        pts = rng.integers(lo, hi + 1, size=(segments + 1, 2))
        for (r0, c0), (r1, c1) in zip(pts[:-1], pts[1:]):
            rr, cc = draw_line(r0, c0, r1, c1)
            img[rr, cc] = 1.0
        if smoothing > 0:
            img = _gaussian_blur(img, smoothing)
            img[img < 0.05] = 0.0
            img /= img.max()
        out[i] = img.ravel()
    return Dataset(out, source=f"strokes:{side}:{seed}")


def synth_two_gaussians(
    n: int,
    dim: int = 16,
    separation: float = 0.3,
    spread: float = 0.08,
    noise: float = 0.01,
    plane_dim: int = 2,
    seed: int = 0,
) -> tuple[Dataset, Dataset]:
    """Positive and negative Gaussian clusters on a shared random plane in ``[0, 1]^dim``.

    Both clusters live in the same ``plane_dim``-dimensional affine plane through
    the cube centre (in-plane std ``spread``, off-plane std ``noise``), so a
    plain autoencoder fitted to the positives also reconstructs the negatives.
    Their centres sit ``separation`` apart along the first plane axis.
    """
    if n < 1 or dim < 2 or not 1 <= plane_dim < dim:
        raise ParameterError("need n >= 1, dim >= 2 and 1 <= plane_dim < dim")
    if not (spread > 0 and noise >= 0 and separation >= 0):
        raise ParameterError("spread must be > 0; noise and separation >= 0")
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((dim, plane_dim)))
    centre = np.full(dim, 0.5)
    parts = []
    for sign, tag in ((-1.0, "pos"), (1.0, "neg")):
        coords = spread * rng.standard_normal((n, plane_dim))
        coords[:, 0] += sign * 0.5 * separation
        x = centre + coords @ Q.T + noise * rng.standard_normal((n, dim))
        parts.append(Dataset(np.clip(x, 0.0, 1.0), source=f"two_gaussians:{tag}:{seed}"))
    return parts[0], parts[1]


# ---------------------------------------------------------------- augmentation


@dataclass(frozen=True)
class Blur:
    sigma: float = 1.0


@dataclass(frozen=True)
class Crop:
    pad: int = 2


@dataclass(frozen=True)
class HFlip:
    pass


@dataclass(frozen=True)
class VFlip:
    pass


AugmentOp = Union[Blur, Crop, HFlip, VFlip]


def parse_ops(specs: Iterable[str]) -> list[AugmentOp]:
    """Parse ``"blur:1.0"``, ``"crop:2"``, ``"hflip"``, ``"vflip"``."""
    ops: list[AugmentOp] = []
    for spec in specs:
        name, _, arg = spec.partition(":")
        if name == "blur":
            ops.append(Blur(float(arg) if arg else 1.0))
        elif name == "crop":
            ops.append(Crop(int(arg) if arg else 2))
        elif name == "hflip":
            ops.append(HFlip())
        elif name == "vflip":
            ops.append(VFlip())
        else:
            raise ParameterError(f"unknown augmentation {spec!r}")
    return ops


def gaussian_kernel(sigma: float) -> np.ndarray:
    """1-D Gaussian truncated at 3 sigma and renormalized to sum 1."""
    if sigma < 0:
        raise ParameterError("sigma must be >= 0")
    radius = int(np.ceil(3.0 * sigma))
    if radius == 0:
        return np.ones(1)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel(sigma)
    if k.size == 1:
        return img.copy()
    # half-sample reflection keeps every pixel's total weight at exactly 1
    out = ndimage.correlate1d(img, k, axis=0, mode="reflect")
    return ndimage.correlate1d(out, k, axis=1, mode="reflect")


def _apply(op: AugmentOp, img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if isinstance(op, Blur):
        return _gaussian_blur(img, op.sigma)
    if isinstance(op, HFlip):
        return img[:, ::-1]
    if isinstance(op, VFlip):
        return img[::-1, :]
    if isinstance(op, Crop):
        if op.pad == 0:
            return img
        side = img.shape[0]
        padded = np.pad(img, op.pad, mode="reflect")
        r, c = rng.integers(0, 2 * op.pad + 1, size=2)
        return padded[r : r + side, c : c + side]
    raise ParameterError(f"unknown augmentation {op!r}")


def augment(d: Dataset, ops: Sequence[AugmentOp], seed: int = 0, p: float = 0.5, force: bool = False) -> Dataset:
    """Apply each op to each sample independently with probability ``p`` (always if ``force``)."""
    side = d.side
    if ops and side is None:
        raise ParameterError("spatial augmentation requires square images")
    rng = np.random.default_rng(seed)
    out = np.empty_like(d._x)
    for i, row in enumerate(d._x):
        img = row.reshape(side, side) if side else row
        for op in ops:
            if force or rng.random() < p:
                img = _apply(op, img, rng)
        out[i] = np.clip(img, 0.0, 1.0).ravel()
    return Dataset(out, d.labels, f"{d.source}+aug", d.bounded)


# ---------------------------------------------------------------- tasks


EXTERNAL = "external"


@dataclass(frozen=True)
class TaskSpec:
    """Class partitions for one anomaly-detection task.

    ``negative_classes`` may be the string ``"external"`` when negatives come
    from another source (random strokes, Omniglot, ...).
    """

    positive_classes: frozenset
    negative_classes: Union[frozenset, str]
    anomaly_classes: frozenset

    def __init__(self, positive_classes, negative_classes, anomaly_classes):
        object.__setattr__(self, "positive_classes", frozenset(int(c) for c in positive_classes))
        if isinstance(negative_classes, str):
            if negative_classes != EXTERNAL:
                raise SpecError(f"negative_classes must be a class set or {EXTERNAL!r}")
            neg = EXTERNAL
        else:
            neg = frozenset(int(c) for c in negative_classes)
        object.__setattr__(self, "negative_classes", neg)
        object.__setattr__(self, "anomaly_classes", frozenset(int(c) for c in anomaly_classes))
        negs = frozenset() if neg == EXTERNAL else neg
        pos, anom = self.positive_classes, self.anomaly_classes
        if pos & negs or pos & anom or negs & anom:
            raise SpecError(f"class sets overlap: pos={sorted(pos)} neg={sorted(negs)} anom={sorted(anom)}")
        if not pos:
            raise SpecError("no positive classes")

    @property
    def external(self) -> bool:
        return self.negative_classes == EXTERNAL


def make_task(
    d: Dataset, spec: TaskSpec, external_negatives: Dataset | None = None
) -> tuple[Dataset, Dataset, Dataset]:
    """Split a labeled dataset into positive, negative and anomaly parts.

    ``external_negatives`` overrides the negative classes when given.
    """
    if d.labels is None:
        raise DataError("make_task needs labels")
    pos = d.with_classes(spec.positive_classes, f"{d.source}:pos{sorted(spec.positive_classes)}")
    anom = d.with_classes(spec.anomaly_classes, f"{d.source}:anom{sorted(spec.anomaly_classes)}")
    if external_negatives is not None:
        neg = external_negatives
    elif spec.external:
        raise SpecError("spec expects external negatives but none were given")
    else:
        neg = d.with_classes(spec.negative_classes, f"{d.source}:neg{sorted(spec.negative_classes)}")
    for name, part in (("positive", pos), ("negative", neg), ("anomaly", anom)):
        if len(part) == 0:
            raise DataError(f"empty {name} split")
    return pos, neg, anom


def train_test_split(d: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled split; returns ``(train, test)``."""
    if not 0 < test_fraction < 1:
        raise ParameterError("test_fraction must be in (0, 1)")
    n = len(d)
    order = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    return d.subset(np.sort(order[n_test:]), f"{d.source}:train"), d.subset(np.sort(order[:n_test]), f"{d.source}:test")
