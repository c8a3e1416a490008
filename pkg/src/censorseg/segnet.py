"""2.5D convolutional segmenter, training loop and inference.

A frame for slice ``z`` stacks slices ``z - c//2 .. z + c//2`` of every
channel along the channel axis (slice-major), zero-filled beyond the
volume, and is trained against the (possibly censored) mask of slice ``z``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .censor import apply_plan
from .gradcore import Tensor, conv2d, sgd_step
from .losses import LossSpec, compute_loss

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ModelConfig:
    context_slices: int = 5
    channels_per_slice: int = 4
    layers: list = field(default_factory=lambda: [[16, 3], [16, 3], [2, 1]])

    def __post_init__(self):
        self.layers = [[int(f), int(k)] for f, k in self.layers]
        if self.context_slices < 1 or self.context_slices % 2 == 0:
            raise ValueError(f"context_slices must be odd and positive, got {self.context_slices}")
        if self.layers[-1][0] != 2:
            raise ValueError("final layer must have 2 output channels")

    @property
    def in_channels(self):
        return self.context_slices * self.channels_per_slice


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    lr: float = 0.05
    l2: float = 1e-4
    momentum: float = 0.9
    lr_decay_gamma: float = 0.5
    lr_decay_every: int = 3
    seed: int = 0
    selection_metric: str = "val_loss"
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr < 0 or self.l2 < 0:
            raise ValueError("lr and l2 must be non-negative")
        if self.selection_metric not in ("val_loss", "val_map"):
            raise ValueError(f"unknown selection metric {self.selection_metric!r}")

    def lr_at(self, epoch):
        return self.lr * self.lr_decay_gamma ** (epoch // self.lr_decay_every)


@dataclass
class TrainedModel:
    params: list  # [W0, b0, W1, b1, ...] numpy arrays
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    loss: LossSpec
    history: list = field(default_factory=list)
    selected_epoch: int = -1

    def save(self, directory):
        save_checkpoint(self, directory)


class SegNet:
    def __init__(self, cfg, params):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg, seed, dtype=np.float64):
        """He-normal kernels, zero biases."""
        rng = np.random.default_rng(seed)
        params = []
        c_in = cfg.in_channels
        for f, k in cfg.layers:
            std = math.sqrt(2.0 / (c_in * k * k))
            params.append(Tensor((rng.standard_normal((f, c_in, k, k)) * std).astype(dtype), requires_grad=True))
            params.append(Tensor(np.zeros(f, dtype=dtype), requires_grad=True))
            c_in = f
        return cls(cfg, params)

    def forward(self, x):
        """Frames (N, C_in, H, W) -> class probabilities (N, 2, H, W)."""
        h = x if isinstance(x, Tensor) else Tensor(x)
        n_layers = len(self.cfg.layers)
        for i in range(n_layers):
            h = conv2d(h, self.params[2 * i], self.params[2 * i + 1])
            if i < n_layers - 1:
                h = h.relu()
        return h.softmax_channels()

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state(self):
        return [p.data.copy() for p in self.params]

    def load_state(self, arrays):
        for p, a in zip(self.params, arrays):
            p.data = np.array(a, dtype=p.dtype)


def stack_frame(volume, z, context=5):
    """Channel-stacked 2.5D frame ``(context * C, Y, X)`` centred on slice ``z``."""
    volume = np.asarray(volume)
    c, nz, ny, nx = volume.shape
    if not 0 <= z < nz:
        raise IndexError(f"slice index {z} outside [0, {nz})")
    half = context // 2
    out = np.zeros((context, c, ny, nx), dtype=volume.dtype)
    for j, zz in enumerate(range(z - half, z + half + 1)):
        if 0 <= zz < nz:
            out[j] = volume[:, zz]
    return out.reshape(context * c, ny, nx)


def case_frames(volume, context=5):
    """All frames of a volume, ``(Z, context * C, Y, X)``."""
    volume = np.asarray(volume)
    c, nz, ny, nx = volume.shape
    half = context // 2
    padded = np.zeros((c, nz + 2 * half, ny, nx), dtype=volume.dtype)
    padded[:, half:half + nz] = volume
    win = np.lib.stride_tricks.sliding_window_view(padded, context, axis=1)  # (C, Z, Y, X, ctx)
    return np.ascontiguousarray(win.transpose(1, 4, 0, 2, 3).reshape(nz, context * c, ny, nx))


class _FrameBank:
    """Frames and targets of a set of cases, indexed by (case position, z)."""

    def __init__(self, cases, masks, context, dtype):
        self.frames = [case_frames(c.volume, context).astype(dtype) for c in cases]
        self.targets = [masks[c.id] for c in cases]
        self.index = [(i, z) for i, c in enumerate(cases) for z in range(c.volume.shape[1])]

    def batch(self, items):
        x = np.stack([self.frames[i][z] for i, z in items])
        y = np.stack([self.targets[i][z] for i, z in items])
        return x, y


def _mean_loss(net, bank, loss_spec, batch_size):
    total, count = 0.0, 0
    for s in range(0, len(bank.index), batch_size):
        items = bank.index[s:s + batch_size]
        x, y = bank.batch(items)
        probs = Tensor(net.forward(Tensor(x)).data)
        total += compute_loss(loss_spec, probs, y).item() * len(items)
        count += len(items)
    return total / max(count, 1)


def train(dataset, censor_plan, loss_spec, model_cfg, train_cfg, val_map_fn=None):
    """Fit a SegNet on censored train annotations; keep the best validation epoch.

    The same plan censors the validation split.  ``val_map_fn(net)`` is
    required when ``selection_metric == 'val_map'``.
    """
    train_cases, val_cases = dataset.train, dataset.val
    if not train_cases or not val_cases:
        raise ValueError("training needs non-empty train and validation splits")
    dtype = np.dtype(train_cfg.dtype)
    masks = apply_plan(train_cases + val_cases, censor_plan)
    ctx = model_cfg.context_slices
    train_bank = _FrameBank(train_cases, masks, ctx, dtype)
    val_bank = _FrameBank(val_cases, masks, ctx, dtype)

    net = SegNet.init(model_cfg, train_cfg.seed, dtype=dtype)
    velocity = [np.zeros_like(p.data) for p in net.params]
    order_rng = np.random.default_rng([train_cfg.seed, 1])
    history = []
    best_state, best_score, best_epoch = net.state(), None, -1

    for epoch in range(train_cfg.epochs):
        lr = train_cfg.lr_at(epoch)
        perm = order_rng.permutation(len(train_bank.index))
        running, seen = 0.0, 0
        for s in range(0, len(perm), train_cfg.batch_size):
            items = [train_bank.index[j] for j in perm[s:s + train_cfg.batch_size]]
            x, y = train_bank.batch(items)
            net.zero_grad()
            loss = compute_loss(loss_spec, net.forward(Tensor(x)), y)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            loss.backward()
            sgd_step(net.params, lr, train_cfg.l2, train_cfg.momentum, velocity)
            if not all(np.isfinite(p.data).all() for p in net.params):
                raise TrainingDiverged(f"non-finite parameters at epoch {epoch}")
            running += value * len(items)
            seen += len(items)
        val_loss = _mean_loss(net, val_bank, loss_spec, train_cfg.batch_size)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        row = {"epoch": epoch, "lr": lr, "train_loss": running / seen, "val_loss": val_loss}
        if train_cfg.selection_metric == "val_map":
            if val_map_fn is None:
                raise ValueError("val_map selection needs val_map_fn")
            row["val_map"] = float(val_map_fn(net))
            score = -row["val_map"]
        else:
            score = val_loss
        history.append(row)
        log.info("epoch %d lr=%.4g train=%.5f val=%.5f", epoch, lr, row["train_loss"], val_loss)
        if best_score is None or score < best_score:
            best_score, best_epoch, best_state = score, epoch, net.state()

    return TrainedModel(best_state, model_cfg, train_cfg, loss_spec, history, best_epoch)


def as_net(model):
    if isinstance(model, SegNet):
        return model
    net = SegNet(model.model_cfg, [Tensor(np.array(p)) for p in model.params])
    return net


def predict_volume(model, case, batch_size=32):
    """Lesion-class probability for every voxel, ``(Z, Y, X)`` float32."""
    net = as_net(model)
    dtype = net.params[0].dtype
    frames = case_frames(case.volume, net.cfg.context_slices).astype(dtype)
    out = np.empty(frames.shape[:1] + frames.shape[2:], dtype=np.float32)
    for s in range(0, len(frames), batch_size):
        probs = net.forward(Tensor(frames[s:s + batch_size])).data
        out[s:s + batch_size] = probs[:, 1]
    return out


def save_checkpoint(model, directory):
    """Raw little-endian parameter rasters plus a JSON manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    layers = []
    for i, p in enumerate(model.params):
        name = f"param_{i:02d}.f64"
        np.asarray(p, dtype="<f8").tofile(d / name)
        layers.append({"file": name, "shape": list(np.shape(p)), "dtype": "float64-le"})
    manifest = {
        "params": layers,
        "model": asdict(model.model_cfg),
        "train": asdict(model.train_cfg),
        "loss": model.loss.to_dict(),
        "seed": model.train_cfg.seed,
        "selected_epoch": model.selected_epoch,
        "history": model.history,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(directory):
    d = Path(directory)
    m = json.loads((d / "manifest.json").read_text())
    train_cfg = TrainConfig(**m["train"])
    params = [
        np.fromfile(d / p["file"], dtype="<f8").reshape(p["shape"]).astype(train_cfg.dtype)
        for p in m["params"]
    ]
    return TrainedModel(params, ModelConfig(**m["model"]), train_cfg, LossSpec.from_dict(m["loss"]),
                        m["history"], m["selected_epoch"])
