"""Command-line entry point.

Usage::

    lisae demo-linear [--config cfg.json] [--beta 0] [--out runs]
    lisae gen      --config gen.json
    lisae train    --config task.json
    lisae eval     --config task.json
    lisae ablate   --config ablate.json
    lisae sweep    --config sweep.json

Every command reads a JSON config (all keys optional, unknown keys rejected);
scalar flags override config values and ``LISAE_SEED`` overrides the seed.
Outputs go to ``<output_dir>/{models,reports,data}/<run_id>/``. Exit codes:
0 ok, 2 config, 3 numeric, 4 I/O.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lisae import datasets as ds
from lisae.errors import (
    ConfigError,
    DataError,
    IdxParseError,
    ModelFormatError,
    NumericError,
    ParameterError,
    SpecError,
)
from lisae.evaluation import (
    EvalConfig,
    ScoreSet,
    auc,
    make_grid,
    model_checksum,
    model_scores,
    run_ablation,
    sweep,
    train_pair,
    write_ablation_csv,
)
from lisae.linear import (
    TiltHyperparams,
    fit_linear_phase1,
    fit_linear_phase2,
    load_linear,
    reconstruct_parts,
    save_linear,
)
from lisae.neural import load_model, save_model
from lisae.training import TrainConfig

logger = logging.getLogger("lisae")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


@dataclass
class RunConfig:
    """Flat run configuration shared by all commands (each uses a subset)."""

    output_dir: str = "runs"
    run_id: str | None = None
    seed: int = 0
    # data / task
    data_images: str | None = None  # IDX file; default is the bundled MNIST subset
    data_labels: str | None = None
    positive_classes: list = field(default_factory=lambda: [0])
    negative: str = "strokes"  # "strokes", "classes" or "idx"
    negative_classes: list = field(default_factory=list)
    negative_images: str | None = None
    n_negatives: int = 2000
    stroke_smoothing: float = 0.5
    augment_negatives: list = field(default_factory=list)
    anomaly_classes: list = field(default_factory=lambda: list(range(1, 10)))
    max_anomalies: int | None = 1900
    test_fraction: float = 0.2
    # model
    model_kind: str = "deep"
    latent_dim: int = 4
    hidden: list = field(default_factory=lambda: [128, 64])
    # training
    beta: float | None = None  # None: 1.0 for demo-linear, 0.005 otherwise
    gamma: float | None = None  # None: 3.0 (relative to phase-1 negative error)
    gamma_relative: bool = True
    learning_rate: float = 0.005
    lr_phase2: float | None = None
    epochs_phase1: int = 300
    epochs_phase2: int = 100
    batch_size: int = 32
    linsep: bool = False
    bce_weight: float = 1.0
    momentum: float = 0.9
    hinge: bool = False
    clip_norm: float | None = 5.0
    # demo-linear
    n_samples: int = 10000
    variances: list = field(default_factory=lambda: [1.0, 0.2, 0.01])
    gamma_factor: float = 100.0
    # gen
    kind: str = "strokes"
    side: int = 28
    format: str = "idx"
    # ablate
    positives: list = field(default_factory=lambda: [0, 1])
    negatives: list = field(default_factory=lambda: [5, 6, 7])
    outliers: list = field(default_factory=lambda: [2, 3])
    workers: int = 1
    # sweep
    scores_csv: str | None = None
    num_points: int = 512

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.model_kind not in ("linear", "deep", "deep_linsep"):
            raise ConfigError(f"model_kind must be linear, deep or deep_linsep, got {self.model_kind!r}")
        if self.negative not in ("strokes", "classes", "idx"):
            raise ConfigError(f"negative must be strokes, classes or idx, got {self.negative!r}")
        if self.format not in ("idx", "csv"):
            raise ConfigError("format must be idx or csv")
        if self.kind not in ("gaussian", "strokes"):
            raise ConfigError("kind must be gaussian or strokes")
        for name in ("n_negatives", "latent_dim", "n_samples", "num_points", "workers", "side"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must be in (0, 1)")
        self.train_config()  # TrainConfig validates the numeric hyperparameters

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            beta=0.005 if self.beta is None else self.beta,
            gamma=3.0 if self.gamma is None else self.gamma,
            learning_rate=self.learning_rate,
            epochs_phase1=self.epochs_phase1, epochs_phase2=self.epochs_phase2,
            batch_size=self.batch_size, seed=self.seed, linsep=self.linsep,
            bce_weight=self.bce_weight, momentum=self.momentum, hinge=self.hinge,
            gamma_relative=self.gamma_relative, lr_phase2=self.lr_phase2, clip_norm=self.clip_norm,
        )

    def eval_config(self) -> EvalConfig:
        return EvalConfig(
            train=self.train_config(), latent_dim=self.latent_dim, hidden=tuple(self.hidden),
            test_fraction=self.test_fraction, max_anomalies=self.max_anomalies, sweep_points=self.num_points,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def resolved_run_id(self, command: str) -> str:
        if self.run_id:
            return self.run_id
        d = self.to_dict()
        d.pop("output_dir")
        digest = hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:10]
        return f"{command}-{digest}"

    def dirs(self, run_id: str) -> dict[str, Path]:
        root = Path(self.output_dir)
        out = {k: root / k / run_id for k in ("models", "reports", "data")}
        return out


SCALAR_FLAGS = {
    "seed": int, "beta": float, "gamma": float, "learning_rate": float, "lr_phase2": float,
    "epochs_phase1": int, "epochs_phase2": int, "batch_size": int, "latent_dim": int,
    "model_kind": str, "run_id": str, "n_negatives": int, "n_samples": int,
    "gamma_factor": float, "num_points": int, "workers": int, "kind": str, "format": str,
    "scores_csv": str, "max_anomalies": int,
}


def load_config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config:
        text = Path(args.config).read_text(encoding="utf-8")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    if "LISAE_SEED" in os.environ:
        try:
            data["seed"] = int(os.environ["LISAE_SEED"])
        except ValueError:
            raise ConfigError("LISAE_SEED must be an integer")
    for name in SCALAR_FLAGS:
        val = getattr(args, name, None)
        if val is not None:
            data[name] = val
    if args.out is not None:
        data["output_dir"] = args.out
    if getattr(args, "linsep", False):
        data["linsep"] = True
    return RunConfig.from_dict(data)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- data wiring


def load_base(cfg: RunConfig) -> ds.Dataset:
    if cfg.data_images:
        return ds.load_idx(cfg.data_images, cfg.data_labels)
    return ds.load_mnist_subset()


def build_negatives(cfg: RunConfig, base: ds.Dataset) -> ds.Dataset | None:
    if cfg.negative == "classes":
        return None
    if cfg.negative == "idx":
        if not cfg.negative_images:
            raise ConfigError("negative='idx' needs negative_images")
        neg = ds.load_idx(cfg.negative_images)
    else:
        side = base.side or 28
        neg = ds.synth_strokes(cfg.n_negatives, side, seed=cfg.seed + 100, smoothing=cfg.stroke_smoothing)
    if cfg.augment_negatives:
        neg = ds.augment(neg, ds.parse_ops(cfg.augment_negatives), seed=cfg.seed + 200)
    return neg


def build_task(cfg: RunConfig) -> tuple[ds.Dataset, ds.Dataset, ds.Dataset]:
    base = load_base(cfg)
    neg_classes = cfg.negative_classes if cfg.negative == "classes" else ds.EXTERNAL
    spec = ds.TaskSpec(cfg.positive_classes, neg_classes, cfg.anomaly_classes)
    return ds.make_task(base, spec, build_negatives(cfg, base))


def _save_any(model, path: Path) -> None:
    from lisae.linear import LinearModel

    if isinstance(model, LinearModel):
        save_linear(model, path)
    else:
        save_model(model, path)


def _load_any(path: Path):
    head = path.read_bytes()[:11]
    if head.startswith(b"LISAE-LIN1"):
        return load_linear(path)
    if head.startswith(b"LISAE-DEEP1"):
        return load_model(path)
    raise ModelFormatError(f"{path}: unknown model file magic")


# ---------------------------------------------------------------- commands


def cmd_demo_linear(cfg: RunConfig) -> int:
    """Gaussian toy problem: positives spread along x, negatives along z only.

    ``gamma`` here is ``gamma_factor`` times the phase-1 mean negative score.
    """
    rid = cfg.resolved_run_id("demo-linear")
    dirs = cfg.dirs(rid)
    pos = ds.synth_gaussian(cfg.n_samples, cfg.variances, seed=cfg.seed)
    m = len(cfg.variances)
    rng = np.random.default_rng([cfg.seed, 7])
    neg = np.zeros((cfg.n_samples, m))
    neg[:, -1] = rng.standard_normal(cfg.n_samples)

    phase1 = fit_linear_phase1(pos.samples, 1)
    neg_before = float(phase1.scores(neg).mean())
    gamma = cfg.gamma_factor * neg_before
    beta = 1.0 if cfg.beta is None else cfg.beta
    hp = TiltHyperparams(beta=beta, gamma=gamma, seed=cfg.seed, hinge=cfg.hinge)
    phase2 = fit_linear_phase2(phase1, pos.samples, neg, hp)

    eye = np.eye(m)
    probes = {
        "positive_like": [1.0, 0.5] + [0.0] * (m - 2),
        "unit_z": [0.0] * (m - 1) + [1.0],
        "mixed": [1.0, 0.5] + [0.0] * (m - 3) + [1.0],
    }
    ortho = {}
    for name, x in probes.items():
        _, o1 = reconstruct_parts(phase1, x)
        _, o2 = reconstruct_parts(phase2, x)
        ortho[name] = {"ae": float(np.linalg.norm(o1)), "lisae": float(np.linalg.norm(o2))}
    report = {
        "config": cfg.to_dict(),
        "gamma": gamma,
        "decoder": phase1.decoder.ravel().tolist(),
        "encoder_phase1": phase1.encoder.ravel().tolist(),
        "encoder": phase2.encoder.ravel().tolist(),
        "axis_scores": {
            f"e{i + 1}": {"ae": float(phase1.scores(eye[i])[0]), "lisae": float(phase2.scores(eye[i])[0])}
            for i in range(m)
        },
        "mean_negative_score": {"ae": neg_before, "lisae": float(phase2.scores(neg).mean())},
        "orthogonal_reconstruction_norm": ortho,
    }
    _write_json(dirs["reports"] / "demo_linear.json", report)
    dirs["models"].mkdir(parents=True, exist_ok=True)
    save_linear(phase2, dirs["models"] / "model.bin")
    print(f"decoder={np.round(phase1.decoder.ravel(), 4).tolist()} encoder={np.round(phase2.encoder.ravel(), 4).tolist()}")
    print(f"report: {dirs['reports'] / 'demo_linear.json'}")
    return EXIT_OK


def cmd_gen(cfg: RunConfig) -> int:
    rid = cfg.resolved_run_id("gen")
    out = cfg.dirs(rid)["data"]
    out.mkdir(parents=True, exist_ok=True)
    if cfg.kind == "gaussian":
        d = ds.synth_gaussian(cfg.n_samples, cfg.variances, seed=cfg.seed)
        if cfg.format == "idx":
            raise ConfigError("gaussian samples are unbounded; use format=csv")
    else:
        d = ds.synth_strokes(cfg.n_samples, cfg.side, seed=cfg.seed, smoothing=cfg.stroke_smoothing)
        if cfg.augment_negatives:
            d = ds.augment(d, ds.parse_ops(cfg.augment_negatives), seed=cfg.seed + 200)
    if cfg.format == "idx":
        path = out / f"{cfg.kind}-images-idx3-ubyte"
        ds.save_idx(d, path)
    else:
        path = out / f"{cfg.kind}.csv"
        ds.save_csv(d, path)
    print(path)
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    rid = cfg.resolved_run_id("task")
    dirs = cfg.dirs(rid)
    pos, neg, anom = build_task(cfg)
    ecfg = cfg.eval_config()
    train_pos, _ = ds.train_test_split(pos, cfg.test_fraction, cfg.seed)
    pair = train_pair(cfg.model_kind, train_pos, neg, ecfg)
    dirs["models"].mkdir(parents=True, exist_ok=True)
    _save_any(pair.before, dirs["models"] / "phase1.bin")
    _save_any(pair.after, dirs["models"] / "model.bin")
    for rep in pair.reports:
        _write_json(dirs["reports"] / f"phase{rep.phase}.json", rep.to_dict())
    _write_json(dirs["reports"] / "train.json", {
        "config": cfg.to_dict(),
        "run_id": rid,
        "anomaly_reads": anom.access_count,
        "n_train_pos": len(train_pos),
        "n_neg": len(neg),
    })
    print(f"models: {dirs['models']}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    rid = cfg.resolved_run_id("task")
    dirs = cfg.dirs(rid)
    before = _load_any(dirs["models"] / "phase1.bin")
    after = _load_any(dirs["models"] / "model.bin")
    pos, _, anom = build_task(cfg)
    _, test_pos = ds.train_test_split(pos, cfg.test_fraction, cfg.seed)
    if cfg.max_anomalies is not None and len(anom) > cfg.max_anomalies:
        rng = np.random.default_rng([cfg.seed, 3])
        anom = anom.subset(np.sort(rng.choice(len(anom), cfg.max_anomalies, replace=False)))
    s_before = ScoreSet(model_scores(before, test_pos.samples), model_scores(before, anom.samples))
    s_after = ScoreSet(model_scores(after, test_pos.samples), model_scores(after, anom.samples))
    curve = sweep(s_after, cfg.num_points)
    report = {
        "task": {"positive": pos.source, "anomaly": anom.source, "n_test_normal": len(test_pos),
                 "n_test_anomaly": len(anom)},
        "model_kind": cfg.model_kind,
        "config": cfg.to_dict(),
        "auc_before": auc(s_before),
        "auc_after": auc(s_after),
        "sweep": curve.to_dict(),
        "seeds": {"train": cfg.seed, "split": cfg.seed},
        "checksums": {
            "phase1": model_checksum(before),
            "before_eval": model_checksum(before),
            "after_frozen_parts": model_checksum(after, "frozen"),
        },
    }
    _write_json(dirs["reports"] / "eval.json", report)
    with open(dirs["reports"] / "scores.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["label", "score_before", "score"])
        for lab, sb, sa in zip(
            np.r_[np.zeros(len(test_pos), int), np.ones(len(anom), int)],
            np.r_[s_before.normal_scores, s_before.anomaly_scores],
            np.r_[s_after.normal_scores, s_after.anomaly_scores],
        ):
            w.writerow([lab, repr(float(sb)), repr(float(sa))])
    print(f"auc_before={report['auc_before']:.4f} auc_after={report['auc_after']:.4f}")
    return EXIT_OK


def cmd_ablate(cfg: RunConfig) -> int:
    rid = cfg.resolved_run_id("ablate")
    dirs = cfg.dirs(rid)
    grid = make_grid(cfg.positives, cfg.negatives, cfg.outliers)
    result = run_ablation(grid, load_base(cfg), cfg.eval_config(), cfg.model_kind, workers=cfg.workers)
    dirs["reports"].mkdir(parents=True, exist_ok=True)
    write_ablation_csv(result.cells, dirs["reports"] / "ablation.csv")
    _write_json(dirs["reports"] / "ablation_skipped.json",
                [{"cell": dataclasses.asdict(s), "reason": r} for s, r in result.skipped])
    print(f"{len(result.cells)} rows -> {dirs['reports'] / 'ablation.csv'}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    if not cfg.scores_csv:
        raise ConfigError("sweep needs scores_csv (columns: label, score)")
    with open(cfg.scores_csv, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    try:
        labels = np.array([int(r["label"]) for r in rows])
        scores = np.array([float(r["score"]) for r in rows])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad scores CSV: {exc}")
    s = ScoreSet(scores[labels == 0], scores[labels == 1])
    curve = sweep(s, cfg.num_points)
    rid = cfg.resolved_run_id("sweep")
    out = cfg.dirs(rid)["reports"]
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["threshold", "normal_acc", "anomaly_acc"])
        for row in zip(curve.thresholds, curve.normal_accuracy, curve.anomaly_accuracy):
            w.writerow([repr(float(v)) for v in row])
    print(f"auc={auc(s):.6f} sweep -> {out / 'sweep.csv'}")
    return EXIT_OK


COMMANDS = {
    "demo-linear": cmd_demo_linear,
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lisae", description="Latent-insensitive autoencoders for anomaly detection")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--linsep", action="store_true", help="enable the BCE separability head")
        for flag, typ in SCALAR_FLAGS.items():
            p.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, SpecError, ParameterError, DataError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, IdxParseError, ModelFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
