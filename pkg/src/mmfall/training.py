"""Training loop (Adam, plateau scheduling, early stopping) and two-phase transfer."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .augment import AugmentConfig, augment_windows
from .autograd import AdamState, Tensor, adam_step, no_grad
from .data.splits import DatasetSplit, make_splits
from .data.windows import Batch
from .errors import CheckpointError, ConfigError, ContractError, NumericError
from .losses import LossConfig, composite_loss
from .metrics import EvalReport, evaluate_predictions
from .model import ModelConfig, ModelOutput, ModelParams, forward, init_model, load_checkpoint, save_checkpoint

IMPROVEMENT_EPS = 1e-8
CONV_PREFIXES = ("acc.", "gyro.")
PHASE1 = "phase-1"
PHASE2 = "phase-2"


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    early_stop_patience: int = 10
    min_lr: float = 1e-6
    seed: int = 0
    threshold: float = 0.5
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig.from_dict(self.loss)
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig.from_dict(self.augment)
        for name in ("lr", "batch_size", "plateau_patience", "early_stop_patience", "min_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"TrainConfig.{name} must be positive, got {getattr(self, name)}")
        if self.max_epochs < 0:
            raise ConfigError(f"TrainConfig.max_epochs must be >= 0, got {self.max_epochs}")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError(f"TrainConfig.plateau_factor must lie in (0, 1), got {self.plateau_factor}")
        if self.min_lr > self.lr:
            raise ConfigError(f"TrainConfig.min_lr {self.min_lr} exceeds lr {self.lr}")
        if self.plateau_patience >= self.early_stop_patience:
            warnings.warn("plateau_patience >= early_stop_patience: the scheduler will never fire "
                          "before training stops", stacklevel=2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = self.loss.to_dict()
        d["augment"] = self.augment.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config key(s): {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_f1: float
    lr: float                  # learning rate used during this epoch


@dataclass
class TrainState:
    current_lr: float
    epoch: int = 0
    best_val_loss: float = math.inf
    best_epoch: int = -1
    epochs_since_improvement: int = 0
    plateau_best: float = math.inf
    plateau_counter: int = 0
    history: list = field(default_factory=list)
    best_params_snapshot: dict | None = None
    stopped_early: bool = False

    def write_history_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "val_f1", "lr"])
            for r in self.history:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_f1), repr(r.lr)])

    def history_rows(self) -> list[dict]:
        return [asdict(r) for r in self.history]


# -- scheduler and stopping ----------------------------------------------------------

def plateau_step(state: TrainState, val_loss: float, factor: float = 0.5, patience: int = 5,
                 min_lr: float = 1e-6, eps: float = IMPROVEMENT_EPS) -> float:
    """Halve (by ``factor``) the learning rate after ``patience`` stale epochs.

    An epoch is an improvement when ``val_loss < best - eps``.  The
    counter resets on improvement and after each reduction.
    """
    if val_loss < state.plateau_best - eps:
        state.plateau_best = val_loss
        state.plateau_counter = 0
    else:
        state.plateau_counter += 1
        if state.plateau_counter >= patience:
            state.current_lr = max(state.current_lr * factor, min_lr)
            state.plateau_counter = 0
    return state.current_lr


def record_validation(state: TrainState, val_loss: float, params: ModelParams | None = None,
                      eps: float = IMPROVEMENT_EPS) -> bool:
    """Track the best validation loss; returns whether it counts as an improvement.

    The snapshot follows the exact minimum, while the staleness counter
    only resets for improvements larger than ``eps``.
    """
    improved = val_loss < state.best_val_loss - eps
    if val_loss < state.best_val_loss:
        state.best_val_loss = val_loss
        state.best_epoch = state.epoch
        if params is not None:
            state.best_params_snapshot = params.snapshot()
    state.epochs_since_improvement = 0 if improved else state.epochs_since_improvement + 1
    return improved


def early_stop_check(state: TrainState, patience: int = 10) -> str:
    return "stop" if state.epochs_since_improvement >= patience else "continue"


# -- evaluation -----------------------------------------------------------------------

def predict(params: ModelParams, config: ModelConfig, windows, batch_size: int = 256) -> ModelOutput:
    """Eval-mode forward over ``windows`` in chunks, outputs concatenated."""
    if not windows:
        raise ContractError("cannot predict on an empty window set")
    p_parts, z_parts = [], []
    with no_grad():
        for i in range(0, len(windows), batch_size):
            out = forward(Batch.from_windows(windows[i:i + batch_size]), params, config, training=False)
            if out.p_fall is not None:
                p_parts.append(out.p_fall.data)
            if out.activity_logits is not None:
                z_parts.append(out.activity_logits.data)
    p = Tensor(np.concatenate(p_parts)) if p_parts else None
    z = Tensor(np.concatenate(z_parts)) if z_parts else None
    return ModelOutput(p, z, None)


def validate(params: ModelParams, config: ModelConfig, windows, loss_cfg: LossConfig,
             threshold: float = 0.5, batch_size: int = 256) -> tuple[float, EvalReport]:
    """Validation loss and report in eval mode; parameters are not touched.

    For a model without a fall head the binary fields describe an
    all-negative predictor and ``extra["activity_accuracy"]`` carries the
    useful number.
    """
    out = predict(params, config, windows, batch_size)
    labels = Batch.from_windows(windows)
    with no_grad():
        loss = float(composite_loss(out, labels, loss_cfg).item())
    p = out.p_fall.data if out.p_fall is not None else np.zeros(len(windows))
    act_pred = out.activity_logits.data.argmax(axis=1) if out.activity_logits is not None else None
    report = evaluate_predictions(p, labels.y_fall, act_pred, labels.y_act if act_pred is not None else None,
                                  threshold=threshold, loss=loss)
    if act_pred is not None:
        report.extra["activity_accuracy"] = float(np.mean(act_pred == labels.y_act))
    return loss, report


# -- training ---------------------------------------------------------------------------

def _check_finite(loss: float, epoch: int, batch: int):
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss} at epoch {epoch}, batch {batch}", (epoch, batch))


def train(params: ModelParams, config: ModelConfig, split: DatasetSplit, cfg: TrainConfig,
          on_epoch_start=None) -> tuple[ModelParams, TrainState]:
    """Fit ``params`` in place and return them restored to the best validation epoch.

    ``on_epoch_start(epoch, params, state)`` may change trainability or
    ``state.current_lr`` before each epoch (used by fine-tuning).
    """
    if not split.train or not split.val:
        raise ContractError("training needs non-empty train and validation partitions")
    state = TrainState(current_lr=cfg.lr)
    adam = AdamState(learning_rate=cfg.lr)
    train_w = list(split.train)
    n = len(train_w)
    for epoch in range(cfg.max_epochs):
        state.epoch = epoch
        if on_epoch_start is not None:
            on_epoch_start(epoch, params, state)
        adam.learning_rate = state.current_lr
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            chunk = [train_w[i] for i in order[start:start + cfg.batch_size]]
            batch = augment_windows(chunk, cfg.augment, [cfg.seed, epoch, b])
            out = forward(batch, params, config, training=True,
                          rng=np.random.default_rng([cfg.seed, epoch, b, 1]))
            loss = composite_loss(out, batch, cfg.loss)
            value = float(loss.item())
            _check_finite(value, epoch, b)
            params.zero_grad()
            loss.backward()
            adam_step(params.tensors, adam)
            total += value * len(chunk)
            seen += len(chunk)
        val_loss, report = validate(params, config, split.val, cfg.loss, cfg.threshold)
        _check_finite(val_loss, epoch, -1)
        lr_used = state.current_lr
        record_validation(state, val_loss, params)
        plateau_step(state, val_loss, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr)
        state.history.append(EpochRecord(epoch, total / seen, val_loss, report.f1, lr_used))
        if early_stop_check(state, cfg.early_stop_patience) == "stop":
            state.stopped_early = True
            break
    if state.best_params_snapshot is not None:
        params.restore(state.best_params_snapshot)
    return params, state


def epochs_to_threshold(state: TrainState, tau: float) -> int | None:
    """1-based count of epochs until validation loss first reaches ``tau`` (None if never)."""
    for r in state.history:
        if r.val_loss <= tau:
            return r.epoch + 1
    return None


# -- two-phase transfer ------------------------------------------------------------------

def phase1_config(model_cfg: ModelConfig) -> ModelConfig:
    """The activity-only network trained on the source corpus."""
    if "physio" in model_cfg.modalities:
        raise ConfigError("phase-1 pretraining needs the physio modality disabled")
    return replace(model_cfg, use_fall_head=False, use_aux_head=True)


def transfer_pretrain(model_cfg: ModelConfig, source_windows, cfg: TrainConfig, ckpt_path=None,
                      split: DatasetSplit | None = None) -> tuple[ModelParams, TrainState, DatasetSplit]:
    """Train the activity objective alone on source windows.

    The source set is split subject-wise by ``cfg.seed`` unless ``split``
    is given; the test partition is left for held-out source accuracy.
    """
    p1_cfg = phase1_config(model_cfg)
    if split is None:
        split = make_splits(source_windows, "subject_70_15_15", cfg.seed)[0]
    p1_train = replace(cfg, loss=replace(cfg.loss, lambda1=0.0, lambda2=1.0))
    params = init_model(p1_cfg, cfg.seed)
    params, state = train(params, p1_cfg, split, p1_train)
    if ckpt_path is not None:
        save_checkpoint(ckpt_path, params, p1_cfg, cfg.seed, phase=PHASE1,
                        extra={"best_epoch": state.best_epoch, "best_val_loss": state.best_val_loss})
    return params, state, split


def load_phase1(source, target_cfg: ModelConfig, seed: int) -> ModelParams:
    """Initialise a target model and copy every compatible phase-1 tensor.

    The first BiLSTM layer's input weights are copied as a row prefix:
    the motion part of the fused input keeps its position, and the rows
    for physio features (absent in phase 1) stay freshly initialised.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        src_cfg, src, meta = load_checkpoint(source)
        if meta.get("phase") != PHASE1:
            raise CheckpointError(f"{source}: expected a {PHASE1} checkpoint, found phase {meta.get('phase')!r}")
    else:
        src_cfg, src = source
    params = init_model(target_cfg, seed)
    motion_rows = target_cfg.fused_width - (target_cfg.physio_dim_out if "physio" in target_cfg.modalities else 0)
    for name, t in params.tensors.items():
        if name not in src:
            continue
        s = src[name].data
        if s.shape == t.shape:
            t.data[...] = s
        elif (name.startswith("lstm.l0.") and name.endswith(".w_ih") and s.shape[1] == t.shape[1]
              and s.shape[0] == motion_rows):
            t.data[:motion_rows] = s
        else:
            raise CheckpointError(f"layer {name!r}: checkpoint shape {s.shape} incompatible with {t.shape}")
    for name, st in params.bn.items():
        if name in src.bn:
            st.running_mean[...] = src.bn[name].running_mean
            st.running_var[...] = src.bn[name].running_var
    for t in params.tensors.values():
        t.requires_grad = True
    return params


def transfer_finetune(phase1, target_split: DatasetSplit, target_cfg: ModelConfig, cfg: TrainConfig,
                      freeze_convs: bool = True, unfreeze_after: int = 10, lr_factor: float = 0.1,
                      ckpt_path=None, on_epoch_start=None) -> tuple[ModelParams, TrainState]:
    """Fine-tune on the target split starting from phase-1 weights.

    Convolutional extractors stay frozen for the first ``unfreeze_after``
    epochs; at that point everything becomes trainable and the learning
    rate drops by ``lr_factor``.  ``on_epoch_start`` runs after the
    freeze schedule each epoch.
    """
    if unfreeze_after < 0 or not 0.0 < lr_factor <= 1.0:
        raise ConfigError("unfreeze_after must be >= 0 and lr_factor in (0, 1]")
    params = load_phase1(phase1, target_cfg, cfg.seed)

    def schedule(epoch, p, state):
        if not freeze_convs:
            return
        if epoch == 0 and unfreeze_after > 0:
            p.set_trainable(CONV_PREFIXES, False)
        if epoch == unfreeze_after:
            p.set_trainable(CONV_PREFIXES, True)
            state.current_lr = max(state.current_lr * lr_factor, cfg.min_lr)
            state.plateau_counter = 0

    def hook(epoch, p, state):
        schedule(epoch, p, state)
        if on_epoch_start is not None:
            on_epoch_start(epoch, p, state)

    params, state = train(params, target_cfg, target_split, cfg, on_epoch_start=hook)
    params.set_trainable(CONV_PREFIXES, True)
    if ckpt_path is not None:
        save_checkpoint(ckpt_path, params, target_cfg, cfg.seed, phase=PHASE2,
                        extra={"best_epoch": state.best_epoch, "best_val_loss": state.best_val_loss})
    return params, state
