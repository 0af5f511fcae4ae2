"""Multi-modal fall detector: multi-scale CNN -> BiLSTM -> self-attention -> dual heads.

The network is expressed as plain functions over a :class:`ModelParams`
bundle so that each stage can be exercised on its own.  Every ablation of
the architecture is a :class:`ModelConfig` switch.
"""

from __future__ import annotations

import hashlib
import zlib
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autograd import (BatchNormState, Tensor, batch_norm, concat, conv1d_same, dropout, linear,
                       lstm_sequence, scaled_dot_product_attention)
from .data.windows import N_ACTIVITIES, PHYSIO_BASELINE, Batch
from .errors import CheckpointError, ConfigError, DimensionError
from .serialize import config_hash, read_container, write_container

MODALITIES = ("acc", "gyro", "physio")
MOTION = ("acc", "gyro")

# Fixed (non-learned) standardisation of the physiological vector before the
# encoder; motion channels are handled by batch norm after each convolution.
PHYSIO_SCALE = np.array([15.0, 2.0, 1.0, 1.0])


@dataclass
class ModelConfig:
    window_len: int = 100
    kernel_sizes: tuple = (3, 5, 7)
    conv_channels: int = 64
    conv_dropout: float = 0.2
    physio_dim_in: int = 4
    physio_dim_out: int = 32
    physio_dropout: float = 0.3
    lstm_layers: int = 2
    lstm_hidden: int = 128
    lstm_dropout: float = 0.3
    attn_heads: int = 4
    use_attention: bool = True
    use_aux_head: bool = True
    use_fall_head: bool = True
    modalities: tuple = MODALITIES
    context_dim: int = 128

    def __post_init__(self):
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)
        self.modalities = tuple(m for m in MODALITIES if m in set(self.modalities)) \
            if set(self.modalities) <= set(MODALITIES) else tuple(self.modalities)
        self.validate()

    def validate(self) -> "ModelConfig":
        def bad(name, why):
            raise ConfigError(f"ModelConfig.{name}: {why}")

        if self.window_len < 1:
            bad("window_len", "must be positive")
        if not self.kernel_sizes:
            bad("kernel_sizes", "must not be empty")
        for k in self.kernel_sizes:
            if k < 1 or k % 2 == 0:
                bad("kernel_sizes", f"kernel size {k} must be a positive odd integer")
        if not self.modalities:
            bad("modalities", "at least one modality is required")
        unknown = set(self.modalities) - set(MODALITIES)
        if unknown:
            bad("modalities", f"unknown modalities {sorted(unknown)}")
        for name in ("conv_channels", "physio_dim_in", "physio_dim_out", "lstm_layers",
                     "lstm_hidden", "attn_heads", "context_dim"):
            if getattr(self, name) < 1:
                bad(name, "must be a positive integer")
        for name in ("conv_dropout", "physio_dropout", "lstm_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                bad(name, "must lie in [0, 1)")
        if self.lstm_width % self.attn_heads:
            bad("attn_heads", f"{self.attn_heads} does not divide the BiLSTM width {self.lstm_width}")
        if not (self.use_fall_head or self.use_aux_head):
            bad("use_fall_head", "at least one output head is required")
        return self

    @property
    def motion_width(self) -> int:
        return self.conv_channels * len(self.kernel_sizes)

    @property
    def fused_width(self) -> int:
        return sum(self.motion_width for m in MOTION if m in self.modalities) + \
            (self.physio_dim_out if "physio" in self.modalities else 0)

    @property
    def lstm_width(self) -> int:
        return 2 * self.lstm_hidden

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_sizes"] = list(self.kernel_sizes)
        d["modalities"] = list(self.modalities)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config key(s): {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass
class ModelOutput:
    p_fall: Tensor | None
    activity_logits: Tensor | None
    attention_weights: np.ndarray | None     # (B, heads, T, T)
    activations: dict = field(default_factory=dict)

    def activity_probs(self) -> np.ndarray:
        z = self.activity_logits.data
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)


# -- parameters ----------------------------------------------------------------

def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    """Ordered mapping of parameter path -> shape; a pure function of ``config``."""
    c = config
    shapes = {}
    for mod in MOTION:
        if mod not in c.modalities:
            continue
        for k in c.kernel_sizes:
            shapes[f"{mod}.conv{k}.weight"] = (c.conv_channels, 3, k)
            shapes[f"{mod}.conv{k}.bias"] = (c.conv_channels,)
            shapes[f"{mod}.bn{k}.gamma"] = (c.conv_channels,)
            shapes[f"{mod}.bn{k}.beta"] = (c.conv_channels,)
    if "physio" in c.modalities:
        shapes["physio.weight"] = (c.physio_dim_in, c.physio_dim_out)
        shapes["physio.bias"] = (c.physio_dim_out,)
    H = c.lstm_hidden
    width = c.fused_width
    for layer in range(c.lstm_layers):
        for d in ("fwd", "bwd"):
            shapes[f"lstm.l{layer}.{d}.w_ih"] = (width, 4 * H)
            shapes[f"lstm.l{layer}.{d}.w_hh"] = (H, 4 * H)
            shapes[f"lstm.l{layer}.{d}.bias"] = (4 * H,)
        width = 2 * H
    if c.use_attention:
        for proj in ("q", "k", "v", "out"):
            shapes[f"attn.{proj}.weight"] = (width, width)
            shapes[f"attn.{proj}.bias"] = (width,)
    shapes["context.weight"] = (width, c.context_dim)
    shapes["context.bias"] = (c.context_dim,)
    if c.use_fall_head:
        for name, (i, o) in (("fc1", (c.context_dim, 64)), ("fc2", (64, 32)), ("out", (32, 1))):
            shapes[f"fall_head.{name}.weight"] = (i, o)
            shapes[f"fall_head.{name}.bias"] = (o,)
    if c.use_aux_head:
        for name, (i, o) in (("fc1", (c.context_dim, 64)), ("out", (64, N_ACTIVITIES))):
            shapes[f"act_head.{name}.weight"] = (i, o)
            shapes[f"act_head.{name}.bias"] = (o,)
    return shapes


def _fan_in(name: str, shapes: dict) -> int:
    """Fan-in of the weight a parameter belongs to (biases share their weight's)."""
    w = shapes[name[:-len("bias")] + "weight"] if name.endswith(".bias") else shapes[name]
    return w[1] * w[2] if len(w) == 3 else w[0]


def _init_array(name: str, shapes: dict, seed: int) -> np.ndarray:
    # Each parameter draws from its own stream so that adding or removing
    # modules (ablations) leaves the remaining initial values unchanged.
    shape = shapes[name]
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "gamma":
        return np.ones(shape)
    if leaf == "beta":
        return np.zeros(shape)
    if name.startswith("lstm.") and leaf == "bias":
        b = np.zeros(shape)
        H = shape[0] // 4
        b[H:2 * H] = 1.0            # forget gate
        return b
    rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
    bound = np.sqrt(1.0 / _fan_in(name, shapes))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class ModelParams:
    tensors: dict[str, Tensor]
    bn: dict[str, BatchNormState]

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name) -> bool:
        return name in self.tensors

    def names(self):
        return list(self.tensors)

    def count(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def trainable(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.tensors.items() if t.requires_grad}

    def set_trainable(self, prefixes, flag: bool):
        prefixes = tuple(prefixes)
        for name, t in self.tensors.items():
            if name.startswith(prefixes):
                t.requires_grad = flag

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = np.zeros_like(t.data)

    def snapshot(self) -> dict:
        return {
            "tensors": {k: t.data.copy() for k, t in self.tensors.items()},
            "bn": {k: (s.running_mean.copy(), s.running_var.copy()) for k, s in self.bn.items()},
        }

    def restore(self, snap: dict):
        for k, arr in snap["tensors"].items():
            self.tensors[k].data[...] = arr
        for k, (m, v) in snap["bn"].items():
            self.bn[k].running_mean[...] = m
            self.bn[k].running_var[...] = v

    def digest(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.tensors):
            h.update(k.encode())
            h.update(self.tensors[k].data.tobytes())
        for k in sorted(self.bn):
            h.update(k.encode())
            h.update(self.bn[k].running_mean.tobytes())
            h.update(self.bn[k].running_var.tobytes())
        return h.hexdigest()

    def arrays(self) -> dict[str, np.ndarray]:
        out = {f"param/{k}": t.data for k, t in self.tensors.items()}
        for k, s in self.bn.items():
            out[f"buffer/{k}.running_mean"] = s.running_mean
            out[f"buffer/{k}.running_var"] = s.running_var
        return out


def init_model(config: ModelConfig, seed: int) -> ModelParams:
    config.validate()
    shapes = param_shapes(config)
    tensors = {name: Tensor(_init_array(name, shapes, seed), requires_grad=True, name=name)
               for name, shape in shapes.items()}
    bn = {}
    for mod in MOTION:
        if mod in config.modalities:
            for k in config.kernel_sizes:
                bn[f"{mod}.bn{k}"] = BatchNormState.fresh(config.conv_channels)
    return ModelParams(tensors, bn)


# -- stages --------------------------------------------------------------------

def _expect(t: Tensor, shape: tuple, what: str):
    if t.shape != shape:
        raise DimensionError(f"{what}: expected shape {shape}, got {t.shape}")


def conv_feature_extract(x: Tensor, params: ModelParams, modality: str, config: ModelConfig,
                         training: bool = False, rng=None) -> Tensor:
    """Parallel conv -> BN -> ReLU -> dropout branches, concatenated on channels."""
    if x.ndim != 3 or x.shape[2] != 3:
        raise DimensionError(f"{modality} extractor expects (B, T, 3), got {x.shape}")
    branches = []
    for k in config.kernel_sizes:
        h = conv1d_same(x, params[f"{modality}.conv{k}.weight"], params[f"{modality}.conv{k}.bias"])
        h = batch_norm(h, params[f"{modality}.bn{k}.gamma"], params[f"{modality}.bn{k}.beta"],
                       params.bn[f"{modality}.bn{k}"], training)
        h = dropout(h.relu(), config.conv_dropout, training, rng)
        branches.append(h)
    return branches[0] if len(branches) == 1 else concat(branches, axis=-1)


def physio_encode(P: Tensor, params: ModelParams, config: ModelConfig, T: int,
                  training: bool = False, rng=None) -> Tensor:
    """Linear 4->32, ReLU, dropout, then repeat the vector at every timestep."""
    h = linear(P, params["physio.weight"], params["physio.bias"]).relu()
    h = dropout(h, config.physio_dropout, training, rng)
    B, D = h.shape
    return h.reshape(B, 1, D).broadcast_to((B, T, D))


def fuse(acc_f: Tensor | None, gyro_f: Tensor | None, physio_f: Tensor | None) -> Tensor:
    parts = [t for t in (acc_f, gyro_f, physio_f) if t is not None]
    if not parts:
        raise DimensionError("fuse needs at least one modality")
    lead = parts[0].shape[:2]
    for t in parts[1:]:
        if t.shape[:2] != lead:
            raise DimensionError(f"fuse: batch/time mismatch {t.shape[:2]} vs {lead}")
    return parts[0] if len(parts) == 1 else concat(parts, axis=-1)


def bilstm_forward(x: Tensor, params: ModelParams, config: ModelConfig,
                   training: bool = False, rng=None) -> Tensor:
    h = x
    for layer in range(config.lstm_layers):
        if layer > 0:
            h = dropout(h, config.lstm_dropout, training, rng)
        pre = f"lstm.l{layer}"
        fwd = lstm_sequence(h, params[f"{pre}.fwd.w_ih"], params[f"{pre}.fwd.w_hh"], params[f"{pre}.fwd.bias"])
        bwd = lstm_sequence(h, params[f"{pre}.bwd.w_ih"], params[f"{pre}.bwd.w_hh"], params[f"{pre}.bwd.bias"],
                            reverse=True)
        h = concat([fwd, bwd], axis=-1)
    return h


def mha_forward(H: Tensor, params: ModelParams, heads: int, prefix: str = "attn"):
    """Multi-head scaled dot-product self-attention.

    Q, K and V come from one joint projection each, split evenly across
    heads.  Returns ``(attended, weights)`` with weights shaped
    ``(B, heads, T, T)`` as a Tensor.
    """
    B, T, D = H.shape
    if D % heads:
        raise ConfigError(f"{heads} heads do not divide width {D}")
    d_k = D // heads

    def split(t):
        return t.reshape(B, T, heads, d_k).transpose(0, 2, 1, 3)

    q = split(linear(H, params[f"{prefix}.q.weight"], params[f"{prefix}.q.bias"]))
    k = split(linear(H, params[f"{prefix}.k.weight"], params[f"{prefix}.k.bias"]))
    v = split(linear(H, params[f"{prefix}.v.weight"], params[f"{prefix}.v.bias"]))
    att, weights = scaled_dot_product_attention(q, k, v)
    merged = att.transpose(0, 2, 1, 3).reshape(B, T, D)
    return linear(merged, params[f"{prefix}.out.weight"], params[f"{prefix}.out.bias"]), weights


def pool_and_project(attended: Tensor, params: ModelParams) -> Tensor:
    pooled = attended.mean(axis=1)
    return linear(pooled, params["context.weight"], params["context.bias"]).relu()


def forward(batch: Batch, params: ModelParams, config: ModelConfig, training: bool = False,
            rng: np.random.Generator | None = None) -> ModelOutput:
    if training and rng is None:
        rng = np.random.default_rng(0)
    B, T = batch.A.shape[0], batch.A.shape[1]
    c = config
    acts = {}
    feats = {}
    for mod, arr in (("acc", batch.A), ("gyro", batch.G)):
        if mod in c.modalities:
            f = conv_feature_extract(Tensor(arr), params, mod, c, training, rng)
            _expect(f, (B, T, c.motion_width), f"{mod} features")
            feats[mod] = acts[f"{mod}_features"] = f
    if "physio" in c.modalities:
        P = (np.asarray(batch.P, dtype=np.float64) - PHYSIO_BASELINE) / PHYSIO_SCALE
        f = physio_encode(Tensor(P), params, c, T, training, rng)
        _expect(f, (B, T, c.physio_dim_out), "physio features")
        feats["physio"] = acts["physio_features"] = f
    fused = fuse(feats.get("acc"), feats.get("gyro"), feats.get("physio"))
    _expect(fused, (B, T, c.fused_width), "fused sequence")
    acts["fused"] = fused

    H = bilstm_forward(fused, params, c, training, rng)
    _expect(H, (B, T, c.lstm_width), "BiLSTM output")
    acts["lstm"] = H

    weights = None
    attended = H
    if c.use_attention:
        attended, w = mha_forward(H, params, c.attn_heads)
        weights = w.data
        acts["attention"] = attended
    context = pool_and_project(attended, params)
    _expect(context, (B, c.context_dim), "context vector")
    acts["context"] = context

    p_fall = None
    if c.use_fall_head:
        h = linear(context, params["fall_head.fc1.weight"], params["fall_head.fc1.bias"]).relu()
        h = linear(h, params["fall_head.fc2.weight"], params["fall_head.fc2.bias"]).relu()
        z = linear(h, params["fall_head.out.weight"], params["fall_head.out.bias"])
        _expect(z, (B, 1), "fall logit")
        p_fall = z.sigmoid().reshape(B)
    logits = None
    if c.use_aux_head:
        h = linear(context, params["act_head.fc1.weight"], params["act_head.fc1.bias"]).relu()
        logits = linear(h, params["act_head.out.weight"], params["act_head.out.bias"])
        _expect(logits, (B, N_ACTIVITIES), "activity logits")
    return ModelOutput(p_fall, logits, weights, acts)


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, config: ModelConfig, seed: int,
                    phase: str | None = None, extra: dict | None = None) -> None:
    cfg = config.to_dict()
    meta = {
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": int(seed),
        "phase": phase,
        "trainable": {k: bool(t.requires_grad) for k, t in params.tensors.items()},
        "extra": extra or {},
    }
    write_container(path, "checkpoint", meta, params.arrays())


def load_checkpoint(path):
    """Return ``(config, params, meta)`` from a checkpoint file."""
    meta, arrays = read_container(path, kind="checkpoint")
    config = ModelConfig.from_dict(meta["config"])
    if config_hash(config.to_dict()) != meta["config_hash"]:
        raise CheckpointError(f"{path}: config hash mismatch")
    params = init_model(config, meta["seed"])
    for name, t in params.tensors.items():
        key = f"param/{name}"
        if key not in arrays:
            raise CheckpointError(f"{path}: missing parameter {name!r}")
        if arrays[key].shape != t.shape:
            raise CheckpointError(f"{path}: parameter {name!r} has shape {arrays[key].shape}, expected {t.shape}")
        t.data[...] = arrays[key]
        t.requires_grad = meta["trainable"].get(name, True)
    for name, s in params.bn.items():
        s.running_mean[...] = arrays[f"buffer/{name}.running_mean"]
        s.running_var[...] = arrays[f"buffer/{name}.running_var"]
    return config, params, meta
