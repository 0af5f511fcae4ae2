"""Experiment configuration, end-to-end runs, ablation sweeps and attention export.

An experiment config is a JSON object with the sections ``seed``,
``data``, ``model``, ``loss``, ``train``, ``augment``, ``transfer`` and
``eval``; every section is optional and unknown keys are rejected.
Artifacts land in a fixed layout::

    <out>/config.json
    <out>/model.ckpt
    <out>/reports/eval_report.json
    <out>/reports/baselines.json
    <out>/csv/{roc,confusion,attention,history}.csv
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .augment import AugmentConfig
from .autograd import no_grad
from .baselines import feature_matrix, knn_classify, threshold_detect
from .data.dataset_io import load_dataset
from .data.rebalance import rebalance, rebalance_split
from .data.recordings import load_sisfall_dir, load_ucihar_windows
from .data.splits import DatasetSplit, make_splits
from .data.synthetic import synth_activity_windows, synth_generate
from .data.windows import ACTIVITIES, Batch
from .errors import ConfigError, ContractError
from .losses import LossConfig
from .metrics import EvalReport, binary_metrics
from .model import ModelConfig, ModelParams, forward, init_model, load_checkpoint, save_checkpoint
from .training import TrainConfig, phase1_config, train, transfer_finetune, transfer_pretrain, validate

ARTIFACT_ROOT_ENV = "MMFD_ARTIFACT_ROOT"
DATA_SOURCES = ("synthetic", "sisfall", "dataset")


def _strict(cls, d: dict, section: str):
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be an object")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(sorted(unknown))}")
    return cls(**d)


@dataclass
class DataConfig:
    source: str = "synthetic"
    path: str | None = None
    n_subjects: int = 40
    windows_per_subject: int = 20
    fall_fraction: float = 0.09
    window_len: int = 100
    overlap: float = 0.5
    split: str = "subject_70_15_15"
    k: int = 5
    fold: int = 0
    rebalance: str = "none"
    target_ratio: float = 1.0

    def __post_init__(self):
        if self.source not in DATA_SOURCES:
            raise ConfigError(f"data.source must be one of {DATA_SOURCES}, got {self.source!r}")
        if self.source != "synthetic" and not self.path:
            raise ConfigError(f"data.path is required for source {self.source!r}")
        if self.rebalance not in ("none", "oversample", "smote"):
            raise ConfigError(f"data.rebalance must be none, oversample or smote, got {self.rebalance!r}")


@dataclass
class TransferConfig:
    enabled: bool = False
    source: str = "synthetic"
    n_subjects: int = 30
    windows_per_subject: int = 20
    signals_dir: str | None = None
    labels_path: str | None = None
    subjects_path: str | None = None
    pretrain_epochs: int = 30
    freeze_convs: bool = True
    unfreeze_after: int = 10
    lr_factor: float = 0.1

    def __post_init__(self):
        if self.source not in ("synthetic", "ucihar"):
            raise ConfigError(f"transfer.source must be synthetic or ucihar, got {self.source!r}")
        if self.enabled and self.source == "ucihar" and not (self.signals_dir and self.labels_path
                                                             and self.subjects_path):
            raise ConfigError("transfer.source=ucihar needs signals_dir, labels_path and subjects_path")


@dataclass
class EvalConfig:
    threshold: float = 0.5
    threshold_g: float = 2.0
    knn_k: int = 5
    attention_windows: int = 4

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"eval.threshold must lie in (0, 1), got {self.threshold}")


@dataclass
class ExperimentConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: dict = field(default_factory=dict)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("experiment config must be a JSON object")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
        train = dict(d.get("train", {}))
        for nested in ("seed", "loss", "augment"):
            if nested in train:
                raise ConfigError(f"train.{nested} is not allowed; use the top-level {nested!r} section")
        cfg = cls(
            seed=int(d.get("seed", 0)),
            data=_strict(DataConfig, d.get("data", {}), "data"),
            model=_strict(ModelConfig, d.get("model", {}), "model"),
            loss=_strict(LossConfig, d.get("loss", {}), "loss"),
            train=train,
            augment=_strict(AugmentConfig, d.get("augment", {}), "augment"),
            transfer=_strict(TransferConfig, d.get("transfer", {}), "transfer"),
            eval=_strict(EvalConfig, d.get("eval", {}), "eval"),
        )
        cfg.train_config()                     # validates the train section
        if cfg.model.window_len != cfg.data.window_len:
            raise ConfigError(f"model.window_len {cfg.model.window_len} != data.window_len {cfg.data.window_len}")
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw)

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(seed=self.seed, loss=self.loss, augment=self.augment, **self.train)
        except TypeError as exc:
            raise ConfigError(f"train section: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "data": asdict(self.data),
            "model": self.model.to_dict(),
            "loss": self.loss.to_dict(),
            "train": dict(self.train),
            "augment": self.augment.to_dict(),
            "transfer": asdict(self.transfer),
            "eval": asdict(self.eval),
        }

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        """A copy with per-section key overrides, e.g. ``{"model": {"use_attention": False}}``."""
        d = self.to_dict()
        for section, delta in overrides.items():
            if section == "name":
                continue
            if section not in d:
                raise ConfigError(f"override names unknown section {section!r}")
            if section == "seed":
                d["seed"] = delta
            else:
                d[section] = {**d[section], **delta}
        return ExperimentConfig.from_dict(d)


def artifact_root(default="artifacts") -> Path:
    return Path(os.environ.get(ARTIFACT_ROOT_ENV, default))


# -- data -------------------------------------------------------------------------------

def load_windows(cfg: ExperimentConfig):
    d = cfg.data
    if d.source == "synthetic":
        return synth_generate(d.n_subjects, d.windows_per_subject, d.fall_fraction, seed=cfg.seed, T=d.window_len)
    if not Path(d.path).exists():
        raise FileNotFoundError(f"data.path {d.path!r} does not exist")
    if d.source == "sisfall":
        return load_sisfall_dir(d.path, d.window_len, d.overlap)
    windows, _ = load_dataset(d.path)
    return windows


def build_split(cfg: ExperimentConfig, windows=None) -> DatasetSplit:
    windows = load_windows(cfg) if windows is None else windows
    splits = make_splits(windows, cfg.data.split, cfg.seed, cfg.data.k)
    if not 0 <= cfg.data.fold < len(splits):
        raise ConfigError(f"data.fold {cfg.data.fold} out of range for {len(splits)} splits")
    split = splits[cfg.data.fold]
    if cfg.data.rebalance == "oversample":
        split = rebalance_split(split, "oversample", cfg.data.target_ratio, cfg.seed)
    return split


def source_windows(cfg: ExperimentConfig):
    t = cfg.transfer
    if t.source == "synthetic":
        return synth_activity_windows(t.n_subjects, t.windows_per_subject, seed=cfg.seed + 1,
                                      T=cfg.data.window_len)
    return load_ucihar_windows(t.signals_dir, t.labels_path, t.subjects_path, cfg.data.window_len)


# -- running ----------------------------------------------------------------------------

def fit(cfg: ExperimentConfig, split: DatasetSplit):
    """Train per ``cfg`` (with phase-1 pretraining when transfer is enabled)."""
    tc = cfg.train_config()
    if cfg.transfer.enabled:
        t = cfg.transfer
        motion = tuple(m for m in cfg.model.modalities if m != "physio")
        p1_model = replace(cfg.model, modalities=motion)
        p1_train = replace(tc, max_epochs=t.pretrain_epochs)
        p1_params, _, _ = transfer_pretrain(p1_model, source_windows(cfg), p1_train)
        return transfer_finetune((phase1_config(p1_model), p1_params), split, cfg.model, tc,
                                 t.freeze_convs, t.unfreeze_after, t.lr_factor)
    params = init_model(cfg.model, cfg.seed)
    return train(params, cfg.model, split, tc)


def baseline_reports(cfg: ExperimentConfig, split: DatasetSplit) -> dict:
    y = np.array([w.y_fall for w in split.test])
    thr = np.array([threshold_detect(w, cfg.eval.threshold_g) for w in split.test])
    train_windows = list(split.train)
    if cfg.data.rebalance == "smote":
        Xtr, ytr = rebalance(train_windows, "smote", cfg.data.target_ratio, seed=cfg.seed)
    else:
        Xtr = feature_matrix(train_windows)
        ytr = np.array([w.y_fall for w in train_windows])
    knn = knn_classify(Xtr, ytr, feature_matrix(split.test), k=min(cfg.eval.knn_k, len(ytr)))
    out = {}
    for name, pred in (("threshold", thr), ("knn", knn)):
        m = binary_metrics(pred, y, 0.5)
        out[name] = {"precision": m.precision, "recall": m.recall, "f1": m.f1, "confusion": m.confusion}
    return out


def write_confusion_csv(path, report: EvalReport):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["matrix", "truth", "pred", "count"])
        for i, row in enumerate(report.confusion_fall):
            for j, c in enumerate(row):
                w.writerow(["fall", i, j, c])
        if report.confusion_activity is not None:
            for i, row in enumerate(report.confusion_activity):
                for j, c in enumerate(row):
                    w.writerow(["activity", ACTIVITIES[i], ACTIVITIES[j], c])


def attention_rows(params: ModelParams, config: ModelConfig, windows) -> list[list]:
    """Long-format attention export.

    For each window and head: T rows ``[window, head, "row", t, w_0..w_{T-1}]``
    holding the softmax weights of query ``t``, then one ``"mass"`` row with
    the column sums (attention received per timestep).
    """
    if not config.use_attention:
        raise ContractError("this model has no attention block to export")
    if not windows:
        return []
    with no_grad():
        out = forward(Batch.from_windows(list(windows)), params, config, training=False)
    W = out.attention_weights
    rows = []
    for b in range(W.shape[0]):
        for h in range(W.shape[1]):
            for t in range(W.shape[2]):
                rows.append([b, h, "row", t] + W[b, h, t].tolist())
            rows.append([b, h, "mass", -1] + W[b, h].sum(axis=0).tolist())
    return rows


def write_attention_csv(path, rows: list[list], T: int):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "head", "kind", "index"] + [f"w{t}" for t in range(T)])
        for r in rows:
            w.writerow(r[:4] + [repr(v) for v in r[4:]])


def export_attention(checkpoint, windows, out_path=None) -> list[list]:
    config, params, _ = load_checkpoint(checkpoint)
    rows = attention_rows(params, config, windows)
    if out_path is not None:
        write_attention_csv(out_path, rows, config.window_len)
    return rows


def _attention_sample(split: DatasetSplit, n: int) -> list:
    """Falls first, then the rest, in split order (deterministic)."""
    falls = [w for w in split.test if w.y_fall == 1]
    others = [w for w in split.test if w.y_fall == 0]
    return (falls + others)[:n]


def run_experiment(cfg: ExperimentConfig, out_dir) -> dict:
    """Run data -> split -> (transfer) -> train -> evaluate and write all artifacts."""
    out = Path(out_dir)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    (out / "csv").mkdir(exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")

    split = build_split(cfg)
    params, state = fit(cfg, split)
    save_checkpoint(out / "model.ckpt", params, cfg.model, cfg.seed,
                    phase="phase-2" if cfg.transfer.enabled else None,
                    extra={"best_epoch": state.best_epoch})
    _, report = validate(params, cfg.model, split.test, cfg.loss, cfg.eval.threshold)
    report.extra["best_epoch"] = state.best_epoch
    report.extra["epochs_run"] = len(state.history)
    report.extra["subjects"] = split.subjects
    report.write_json(out / "reports" / "eval_report.json")
    report.write_roc_csv(out / "csv" / "roc.csv")
    write_confusion_csv(out / "csv" / "confusion.csv", report)
    state.write_history_csv(out / "csv" / "history.csv")
    rows = attention_rows(params, cfg.model, _attention_sample(split, cfg.eval.attention_windows)) \
        if cfg.model.use_attention else []
    write_attention_csv(out / "csv" / "attention.csv", rows, cfg.model.window_len)
    baselines = baseline_reports(cfg, split)
    (out / "reports" / "baselines.json").write_text(json.dumps(baselines, sort_keys=True, indent=2) + "\n")
    return {"report": report, "state": state, "baselines": baselines, "params": params, "split": split}


def evaluate_checkpoint(cfg: ExperimentConfig, checkpoint, threshold: float | None = None) -> EvalReport:
    config, params, _ = load_checkpoint(checkpoint)
    split = build_split(cfg)
    thr = cfg.eval.threshold if threshold is None else threshold
    _, report = validate(params, config, split.test, cfg.loss, thr)
    return report


# -- ablations --------------------------------------------------------------------------

STANDARD_VARIANTS = (
    {"name": "full"},
    {"name": "single_kernel_3", "model": {"kernel_sizes": [3]}},
    {"name": "no_attention", "model": {"use_attention": False}},
    {"name": "bce_loss", "loss": {"main_loss": "bce"}},
    {"name": "no_aux_task", "model": {"use_aux_head": False}, "loss": {"lambda2": 0.0}},
    {"name": "no_transfer", "transfer": {"enabled": False}},
    {"name": "acc_only", "model": {"modalities": ["acc"]}},
)

ABLATION_COLUMNS = ("variant", "recall", "f1", "auc_roc", "precision", "best_epoch")


def run_ablation(base: ExperimentConfig, variants=STANDARD_VARIANTS, out_path=None) -> list[dict]:
    """Train each variant on one shared split and tabulate recall/F1/AUC.

    Every variant is validated before any training starts.  A leading
    ``full`` row (no overrides) is added when absent.
    """
    variants = list(variants)
    if not any(v.get("name") == "full" and len(v) == 1 for v in variants):
        variants.insert(0, {"name": "full"})
    names = [v.get("name") for v in variants]
    if None in names or len(set(names)) != len(names):
        raise ConfigError("every ablation variant needs a unique 'name'")
    configs = [(v["name"], base.with_overrides(v)) for v in variants]
    split = build_split(base)
    rows = []
    for name, cfg in configs:
        params, state = fit(cfg, split)
        _, rep = validate(params, cfg.model, split.test, cfg.loss, cfg.eval.threshold)
        rows.append({"variant": name, "recall": rep.recall, "f1": rep.f1, "auc_roc": rep.auc_roc,
                     "precision": rep.precision, "best_epoch": state.best_epoch})
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS)
            w.writeheader()
            for r in rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return rows
