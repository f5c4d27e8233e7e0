"""Score-based evaluation: rank AUC, threshold sweeps, paired task runs, ablation grids."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.stats import rankdata

from lisae.datasets import Dataset, concat, train_test_split
from lisae.errors import ConfigError, DataError, SpecError
from lisae.linear import (
    LinearModel,
    TiltHyperparams,
    fit_linear_phase1,
    fit_linear_phase2,
    linear_to_bytes,
)
from lisae.neural import DeepModel, build_model
from lisae.training import TrainConfig, anomaly_scores, train_phase1, train_phase2

logger = logging.getLogger(__name__)

MODEL_KINDS = ("linear", "deep", "deep_linsep")


@dataclass(frozen=True)
class ScoreSet:
    normal_scores: np.ndarray
    anomaly_scores: np.ndarray

    def __post_init__(self):
        for name in ("normal_scores", "anomaly_scores"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).ravel()
            if arr.size == 0:
                raise DataError(f"{name} is empty")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)

    def swapped(self) -> "ScoreSet":
        return ScoreSet(self.anomaly_scores, self.normal_scores)


def auc(s: ScoreSet) -> float:
    """P(anomaly score > normal score), ties counted half (Mann-Whitney U / (n m))."""
    n_norm, n_anom = s.normal_scores.size, s.anomaly_scores.size
    ranks = rankdata(np.concatenate([s.normal_scores, s.anomaly_scores]), method="average")
    u = ranks[n_norm:].sum() - n_anom * (n_anom + 1) / 2.0
    return float(u / (n_norm * n_anom))


@dataclass(frozen=True)
class SweepCurve:
    thresholds: np.ndarray
    normal_accuracy: np.ndarray
    anomaly_accuracy: np.ndarray

    def to_dict(self) -> dict:
        return {
            "thresholds": self.thresholds.tolist(),
            "normal_acc": self.normal_accuracy.tolist(),
            "anomaly_acc": self.anomaly_accuracy.tolist(),
        }


def sweep_point(s: ScoreSet, alpha: float) -> tuple[float, float]:
    """``(fraction of normals <= alpha, fraction of anomalies > alpha)``."""
    normal = float(np.mean(s.normal_scores <= alpha))
    anomaly = float(np.mean(s.anomaly_scores > alpha))
    return normal, anomaly


def sweep(s: ScoreSet, num_points: int = 512) -> SweepCurve:
    """Accuracy trade-off over thresholds spanning ``[min score, max score]``.

    When ``num_points`` exceeds the number of scores every observed score is added
    as a threshold, so the curve hits each attainable operating point exactly.
    """
    if num_points < 2:
        raise DataError("num_points must be >= 2")
    all_scores = np.concatenate([s.normal_scores, s.anomaly_scores])
    thresholds = np.linspace(all_scores.min(), all_scores.max(), num_points)
    if num_points > all_scores.size:
        thresholds = np.union1d(thresholds, all_scores)
    normals = np.sort(s.normal_scores)
    anomalies = np.sort(s.anomaly_scores)
    normal_acc = np.searchsorted(normals, thresholds, side="right") / normals.size
    anomaly_acc = 1.0 - np.searchsorted(anomalies, thresholds, side="right") / anomalies.size
    return SweepCurve(thresholds, normal_acc, anomaly_acc)


def sweep_auc(curve: SweepCurve) -> float:
    """Trapezoid area under (1 - normal_acc, anomaly_acc), closed at (0, 0) and (1, 1)."""
    fpr = np.r_[0.0, (1.0 - curve.normal_accuracy)[::-1], 1.0]
    tpr = np.r_[0.0, curve.anomaly_accuracy[::-1], 1.0]
    return float(np.trapezoid(tpr, fpr))


# ---------------------------------------------------------------- task runs


@dataclass(frozen=True)
class EvalConfig:
    """Everything :func:`run_task` needs besides the data.

    ``latent_dim`` is the bottleneck width for deep models and the rank ``r`` for
    the linear model. ``max_anomalies`` caps the anomaly test set (seeded subsample).
    """

    train: TrainConfig = field(default_factory=TrainConfig)
    latent_dim: int = 3
    hidden: tuple[int, ...] = (128, 64)
    test_fraction: float = 0.2
    max_anomalies: int | None = None
    sweep_points: int = 512

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class EvalReport:
    task: dict
    model_kind: str
    config: dict
    auc_before: float
    auc_after: float
    sweep: SweepCurve
    seeds: dict
    checksums: dict
    scores_before: ScoreSet = field(repr=False)
    scores_after: ScoreSet = field(repr=False)
    model_before: object = field(default=None, repr=False)
    model_after: object = field(default=None, repr=False)
    phase_reports: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "model_kind": self.model_kind,
            "config": self.config,
            "auc_before": self.auc_before,
            "auc_after": self.auc_after,
            "sweep": self.sweep.to_dict(),
            "seeds": self.seeds,
            "checksums": self.checksums,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


EVAL_REPORT_SCHEMA = {
    "type": "object",
    "required": ["task", "config", "auc_before", "auc_after", "sweep", "seeds", "checksums"],
    "properties": {
        "task": {"type": "object"},
        "config": {"type": "object"},
        "auc_before": {"type": "number", "minimum": 0, "maximum": 1},
        "auc_after": {"type": "number", "minimum": 0, "maximum": 1},
        "sweep": {
            "type": "object",
            "required": ["thresholds", "normal_acc", "anomaly_acc"],
            "properties": {
                k: {"type": "array", "items": {"type": "number"}, "minItems": 2}
                for k in ("thresholds", "normal_acc", "anomaly_acc")
            },
        },
        "seeds": {"type": "object"},
        "checksums": {
            "type": "object",
            "required": ["phase1", "before_eval", "after_frozen_parts"],
            "properties": {k: {"type": "string"} for k in ("phase1", "before_eval", "after_frozen_parts")},
        },
    },
}


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def linear_hparams(cfg: TrainConfig, gamma: float) -> TiltHyperparams:
    t = cfg
    return TiltHyperparams(
        beta=t.beta,
        gamma=gamma,
        learning_rate=t.lr_phase2 or t.learning_rate,
        epochs=t.epochs_phase2,
        batch_size=t.batch_size,
        seed=t.seed,
        momentum=t.momentum,
        hinge=t.hinge,
    )


@dataclass
class TrainedPair:
    """Phase-1 snapshot and the final model, trained on the same data."""

    before: Union[LinearModel, DeepModel]
    after: Union[LinearModel, DeepModel]
    reports: list


def train_pair(kind: str, X_pos: Dataset, X_neg: Dataset | None, cfg: EvalConfig, phase2: bool = True) -> TrainedPair:
    """Run both phases and keep a copy of the phase-1 weights."""
    t = cfg.train
    if kind not in MODEL_KINDS:
        raise ConfigError(f"model_kind must be one of {MODEL_KINDS}, got {kind!r}")
    if kind == "linear":
        before = fit_linear_phase1(X_pos.samples, cfg.latent_dim)
        if not phase2:
            return TrainedPair(before, before, [])
        neg = X_neg.samples
        gamma = t.gamma * float(before.scores(neg).mean()) if t.gamma_relative else t.gamma
        after = fit_linear_phase2(before, X_pos.samples, neg, linear_hparams(t, gamma))
        return TrainedPair(before, after, [])
    if kind == "deep_linsep":
        t = t.replace(linsep=True)
    model = build_model(X_pos.dim, cfg.latent_dim, cfg.hidden, seed=t.seed)
    r1 = train_phase1(model, X_pos, X_neg if t.linsep else None, t)
    before = model.copy()
    if not phase2:
        return TrainedPair(before, model, [r1])
    r2 = train_phase2(model, X_pos, X_neg, t)
    return TrainedPair(before, model, [r1, r2])


def model_scores(model, X: np.ndarray) -> np.ndarray:
    if isinstance(model, LinearModel):
        return model.scores(X)
    return anomaly_scores(model, X)


def model_checksum(model, part: str = "all") -> str:
    if isinstance(model, LinearModel):
        if part == "frozen":
            return _sha(np.ascontiguousarray(model.decoder, "<f8").tobytes() + model.mean.astype("<f8").tobytes())
        return _sha(linear_to_bytes(model))
    if part == "frozen":
        return _sha(model.param_blob("encoder") + model.param_blob("decoder"))
    return model.checksum(part)


def run_task(
    task: tuple[Dataset, Dataset, Dataset],
    model_kind: str,
    cfg: EvalConfig,
    name: str = "task",
) -> EvalReport:
    """Train on the positive/negative sets, then score held-out positives vs anomalies.

    The AUC before and after latent shaping comes from the same phase-1 weights;
    ``checksums`` records that both the snapshot used for ``auc_before`` and the
    frozen parts of the final model match the phase-1 model.
    """
    D_pos, D_neg, D_anom = task
    seed = cfg.train.seed
    train_pos, test_pos = train_test_split(D_pos, cfg.test_fraction, seed)
    pair = train_pair(model_kind, train_pos, D_neg, cfg)
    phase1_sum = model_checksum(pair.before, "all")
    phase1_frozen = model_checksum(pair.before, "frozen")

    anom = D_anom
    if cfg.max_anomalies is not None and len(D_anom) > cfg.max_anomalies:
        rng = np.random.default_rng([seed, 3])
        anom = D_anom.subset(np.sort(rng.choice(len(D_anom), cfg.max_anomalies, replace=False)))
    X_norm, X_anom = test_pos.samples, anom.samples
    before = ScoreSet(model_scores(pair.before, X_norm), model_scores(pair.before, X_anom))
    before_sum = model_checksum(pair.before, "all")
    after = ScoreSet(model_scores(pair.after, X_norm), model_scores(pair.after, X_anom))
    after_frozen = model_checksum(pair.after, "frozen")
    if before_sum != phase1_sum or after_frozen != phase1_frozen:
        raise DataError("paired comparison broken: frozen weights changed")

    return EvalReport(
        task={
            "name": name,
            "positive": D_pos.source,
            "negative": D_neg.source,
            "anomaly": D_anom.source,
            "n_train_pos": len(train_pos),
            "n_neg": len(D_neg),
            "n_test_normal": len(test_pos),
            "n_test_anomaly": len(anom),
        },
        model_kind=model_kind,
        config=cfg.to_dict(),
        auc_before=auc(before),
        auc_after=auc(after),
        sweep=sweep(after, cfg.sweep_points),
        seeds={"train": seed, "split": seed},
        checksums={"phase1": phase1_sum, "before_eval": before_sum, "after_frozen_parts": after_frozen},
        scores_before=before,
        scores_after=after,
        model_before=pair.before,
        model_after=pair.after,
        phase_reports=pair.reports,
    )


# ---------------------------------------------------------------- ablation grid

NegativeTag = Union[int, str]


@dataclass(frozen=True)
class AblationSpec:
    positive: int
    negative: int
    outlier: int

    def validate(self) -> None:
        if len({self.positive, self.negative, self.outlier}) != 3:
            raise SpecError(
                f"cell (pos={self.positive}, neg={self.negative}, out={self.outlier}) needs three distinct classes"
            )


@dataclass(frozen=True)
class AblationCell:
    positive: int
    negative: NegativeTag  # class id, "none" or "combined"
    outlier: int
    auc: float


def make_grid(positives: Sequence[int], negatives: Sequence[int], outliers: Sequence[int]) -> list[AblationSpec]:
    return [AblationSpec(p, n, o) for p in positives for n in negatives for o in outliers]


@dataclass
class AblationResult:
    cells: list[AblationCell]
    skipped: list[tuple[AblationSpec, str]]
    phase1_auc: dict  # (positive, outlier) -> AUC of the phase-1 model


def _positive_block(args) -> tuple[list[AblationCell], dict]:
    data, pos, specs, kind, cfg = args
    seed = cfg.train.seed
    positives = data.with_classes([pos])
    train_pos, test_pos = train_test_split(positives, cfg.test_fraction, seed)
    negatives = sorted({s.negative for s in specs})
    outliers = sorted({s.outlier for s in specs})
    X_norm = test_pos.samples
    outlier_x = {o: data.with_classes([o]).samples for o in outliers}

    def score_row(model, neg_tag, wanted) -> list[AblationCell]:
        normal = model_scores(model, X_norm)
        return [AblationCell(pos, neg_tag, o, auc(ScoreSet(normal, model_scores(model, outlier_x[o])))) for o in wanted]

    neg_sets = {n: data.with_classes([n], f"class{n}") for n in negatives}
    combined = concat(list(neg_sets.values()), f"combined{negatives}")
    # the phase-1 model does not depend on negatives unless linsep is on; then it sees the pooled set
    base = train_pair(kind, train_pos, combined, cfg, phase2=False)
    cells = score_row(base.before, "none", outliers)
    phase1_auc = {(pos, c.outlier): c.auc for c in cells}
    for n in negatives:
        wanted = [s.outlier for s in specs if s.negative == n]
        model = _shape_from(base.before, kind, train_pos, neg_sets[n], cfg)
        cells += score_row(model, n, wanted)
    valid_for_combined = [o for o in outliers if o not in negatives]
    if valid_for_combined and len(negatives) > 1:
        model = _shape_from(base.before, kind, train_pos, combined, cfg)
        cells += score_row(model, "combined", valid_for_combined)
    return cells, phase1_auc


def _shape_from(phase1_model, kind: str, train_pos: Dataset, neg: Dataset, cfg: EvalConfig):
    t = cfg.train
    if isinstance(phase1_model, LinearModel):
        gamma = t.gamma * float(phase1_model.scores(neg.samples).mean()) if t.gamma_relative else t.gamma
        return fit_linear_phase2(phase1_model, train_pos.samples, neg.samples, linear_hparams(t, gamma))
    model = phase1_model.copy()
    train_phase2(model, train_pos, neg, t)
    return model


def run_ablation(
    grid: Sequence[AblationSpec],
    data: Dataset,
    cfg: EvalConfig,
    model_kind: str = "deep",
    workers: int = 1,
) -> AblationResult:
    """Train one phase-1 model per positive class and shape it per negative class.

    Emits ``none`` rows (phase-1 model), one row per valid (positive, negative,
    outlier) cell, and ``combined`` rows where all of a positive's negative classes
    are pooled. Invalid cells are skipped and returned with the reason.
    """
    if data.labels is None:
        raise DataError("ablation needs a labeled dataset")
    valid: dict[int, list[AblationSpec]] = {}
    skipped: list[tuple[AblationSpec, str]] = []
    for spec in grid:
        try:
            spec.validate()
        except SpecError as exc:
            logger.warning("skipping ablation cell: %s", exc)
            skipped.append((spec, str(exc)))
            continue
        valid.setdefault(spec.positive, []).append(spec)
    jobs = [(data, pos, specs, model_kind, cfg) for pos, specs in sorted(valid.items())]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_positive_block, jobs))
    else:
        results = [_positive_block(job) for job in jobs]
    cells: list[AblationCell] = []
    phase1_auc: dict = {}
    for block, p1 in results:
        cells += block
        phase1_auc.update(p1)
    return AblationResult(cells, skipped, phase1_auc)


def write_ablation_csv(cells: Sequence[AblationCell], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["positive", "negative", "outlier", "auc"])
        for c in cells:
            w.writerow([c.positive, c.negative, c.outlier, repr(c.auc)])


def read_ablation_csv(path: str | Path) -> list[AblationCell]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    out = []
    for r in rows:
        neg = r["negative"]
        out.append(AblationCell(int(r["positive"]), neg if neg in ("none", "combined") else int(neg),
                                int(r["outlier"]), float(r["auc"])))
    return out
