"""Compact CNN scoring backbone with explicit optimiser and EMA shadow.

The network is three Conv3x3-BatchNorm-ReLU-MaxPool stages (32/64/128
channels), global average pooling, and a 2-logit linear head; the anomaly
score is ``softmax(logits)[1]``. Training state is a :class:`ModelState`
holding the live parameters, their EMA shadow (used for *all* scoring),
SGD momentum buffers and a step counter.

Checkpoints use a small binary container:
``magic "AMCK" | version u32 LE | entry count u32 LE | per-entry
(name_len u16, name utf8, ndim u8, dims u32 * ndim, f32 LE data) |
trailing JSON blob`` where the JSON carries the backbone shape, step count
and the training-config snapshot.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ContractError, FormatError, TrainingError, UsageError

CHECKPOINT_MAGIC = b"AMCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class BackboneSpec:
    """Input shape and conv widths of the compact network."""

    channels: int = 3
    height: int = 64
    width: int = 64
    widths: tuple = (32, 64, 128)

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ConfigError(f"channels must be 1 or 3, got {self.channels}")
        if self.height < 8 or self.width < 8:
            raise ConfigError("input side must be >= 8 pixels")
        if len(self.widths) != 3:
            raise ConfigError("expected three conv widths")

    def to_dict(self) -> dict:
        return {
            "channels": self.channels,
            "height": self.height,
            "width": self.width,
            "widths": list(self.widths),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneSpec":
        return cls(
            channels=d["channels"],
            height=d["height"],
            width=d["width"],
            widths=tuple(d.get("widths", (32, 64, 128))),
        )


@dataclass
class OptimiserConfig:
    """SGD + EMA hyperparameters."""

    lr: float = 0.0075
    momentum: float = 0.9
    weight_decay: float = 7.5e-4
    ema_momentum: float = 0.99

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0 <= self.ema_momentum < 1:
            raise ConfigError(f"ema_momentum must be in [0, 1), got {self.ema_momentum}")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "ema_momentum": self.ema_momentum,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OptimiserConfig":
        return cls(**d)


class CompactNet(nn.Module):
    """Conv3x3(32)-BN-ReLU-MaxPool2, x3 widths, GAP, Linear(widths[-1] -> 2)."""

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        self.spec = spec
        w1, w2, w3 = spec.widths
        self.conv1 = nn.Conv2d(spec.channels, w1, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(w1)
        self.conv2 = nn.Conv2d(w1, w2, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(w2)
        self.conv3 = nn.Conv2d(w2, w3, 3, padding=1)
        self.bn3 = nn.BatchNorm2d(w3)
        self.head = nn.Linear(w3, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.max_pool2d(F.relu(self.bn1(self.conv1(x))), 2)
        x = F.max_pool2d(F.relu(self.bn2(self.conv2(x))), 2)
        x = F.max_pool2d(F.relu(self.bn3(self.conv3(x))), 2)
        x = x.mean(dim=(2, 3))
        return self.head(x)


def _init_weights(net: CompactNet, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    for module in net.modules():
        if isinstance(module, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_uniform_(module.weight, nonlinearity="relu", generator=gen)
            nn.init.zeros_(module.bias)
        elif isinstance(module, nn.BatchNorm2d):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)


@dataclass
class ModelState:
    """Live parameters plus EMA shadow, momentum buffers and step count."""

    net: CompactNet
    ema: dict[str, torch.Tensor]
    velocity: dict[str, torch.Tensor]
    step_count: int = 0
    spec: BackboneSpec = field(default_factory=BackboneSpec)

    def param_dict(self) -> dict[str, torch.Tensor]:
        return dict(self.net.named_parameters())

    def buffer_dict(self) -> dict[str, torch.Tensor]:
        return dict(self.net.named_buffers())


def init_model(spec: BackboneSpec | None = None, seed: int = 0) -> ModelState:
    """Build a freshly initialised model (Kaiming-uniform weights, zero biases);
    the EMA shadow starts as a copy of the parameters."""
    spec = spec or BackboneSpec()
    net = CompactNet(spec)
    _init_weights(net, seed)
    net = net.to(memory_format=torch.channels_last)
    # The shadow accumulates in float64 so the geometric-series identity
    # holds to 1e-6 over thousands of updates; checkpoints store f32.
    ema = {name: p.detach().double().clone() for name, p in net.named_parameters()}
    velocity = {name: torch.zeros_like(p) for name, p in net.named_parameters()}
    return ModelState(net=net, ema=ema, velocity=velocity, step_count=0, spec=spec)


def as_batch(state: ModelState, batch) -> torch.Tensor:
    """Convert a (B, C, H, W) array to a channels-last float32 tensor,
    checking the shape against the backbone spec."""
    if isinstance(batch, np.ndarray):
        batch = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32))
    if batch.ndim != 4:
        raise ContractError(f"batch must be 4-D (B, C, H, W), got shape {tuple(batch.shape)}")
    expected = (state.spec.channels, state.spec.height, state.spec.width)
    if tuple(batch.shape[1:]) != expected:
        raise ContractError(f"batch shape {tuple(batch.shape[1:])} does not match spec {expected}")
    return batch.to(dtype=torch.float32, memory_format=torch.channels_last)


def forward(state: ModelState, batch, train_mode: bool = False) -> torch.Tensor:
    """Forward pass on the live parameters.

    Train mode uses batch statistics and updates the running stats; eval
    mode uses the stored running stats and records no gradients.
    """
    x = as_batch(state, batch)
    state.net.train(train_mode)
    if train_mode:
        return state.net(x)
    with torch.no_grad():
        return state.net(x)


def forward_nostats(state: ModelState, batch) -> torch.Tensor:
    """Gradient-free train-mode forward that leaves running stats untouched.

    Used for pseudo-label generation: predictions see batch statistics
    (like the gradient pass) but the call has no side effects at all.
    """
    x = as_batch(state, batch)
    saved = {name: b.detach().clone() for name, b in state.net.named_buffers()}
    state.net.train(True)
    try:
        with torch.no_grad():
            out = state.net(x)
    finally:
        with torch.no_grad():
            for name, buf in state.net.named_buffers():
                buf.copy_(saved[name])
    return out


def ema_module(state: ModelState) -> CompactNet:
    """Eval-mode network carrying the EMA parameters and current running stats.

    All scoring and evaluation goes through this module, never the live
    parameters.
    """
    net = CompactNet(state.spec).to(memory_format=torch.channels_last)
    with torch.no_grad():
        for name, p in net.named_parameters():
            p.copy_(state.ema[name])
        live_buffers = dict(state.net.named_buffers())
        for name, buf in net.named_buffers():
            buf.copy_(live_buffers[name])
    net.eval()
    return net


def forward_ema(state: ModelState, batch) -> torch.Tensor:
    x = as_batch(state, batch)
    with torch.no_grad():
        return ema_module(state)(x)


def anomaly_scores(logits: torch.Tensor) -> np.ndarray:
    """softmax(logits)[:, 1] as float32 numpy."""
    return F.softmax(logits, dim=1)[:, 1].detach().cpu().numpy().astype(np.float32)


def backward(state: ModelState, loss: torch.Tensor) -> dict[str, torch.Tensor]:
    """Gradients of a scalar loss for every named parameter."""
    if loss.grad_fn is None:
        raise UsageError("backward called on a loss with no graph (forward not recorded?)")
    names = list(state.param_dict())
    params = [state.param_dict()[n] for n in names]
    try:
        grads = torch.autograd.grad(loss, params)
    except RuntimeError as exc:
        raise UsageError(f"backward failed: {exc}") from exc
    return {name: g.detach() for name, g in zip(names, grads)}


def sgd_step(state: ModelState, grads: dict[str, torch.Tensor], cfg: OptimiserConfig) -> None:
    """One SGD-with-momentum step: v <- momentum*v + g + wd*theta; theta -= lr*v.

    Weight decay applies to conv/linear weight matrices only (ndim >= 2),
    never to biases or norm parameters.
    """
    bad = [name for name, g in grads.items() if not torch.isfinite(g).all()]
    if bad:
        raise TrainingError(f"non-finite gradients for {bad} at step {state.step_count}")
    with torch.no_grad():
        for name, p in state.net.named_parameters():
            if name not in grads:
                raise ContractError(f"missing gradient for parameter {name!r}")
            g = grads[name]
            if g.shape != p.shape:
                raise ContractError(f"gradient shape {tuple(g.shape)} != param {tuple(p.shape)}")
            update = g
            if cfg.weight_decay and p.ndim >= 2:
                update = update + cfg.weight_decay * p
            v = state.velocity[name]
            v.mul_(cfg.momentum).add_(update)
            p.add_(v, alpha=-cfg.lr)
    state.step_count += 1


def ema_update(state: ModelState, cfg: OptimiserConfig) -> None:
    """Shadow update: ema <- m*ema + (1-m)*theta, elementwise."""
    m = cfg.ema_momentum
    with torch.no_grad():
        for name, p in state.net.named_parameters():
            shadow = state.ema[name]
            if shadow.shape != p.shape:
                raise ContractError(f"EMA shape drift on {name!r}")
            shadow.mul_(m).add_(p, alpha=1.0 - m)


def _write_entry(fh, name: str, tensor: torch.Tensor) -> None:
    data = tensor.detach().cpu().to(torch.float32).contiguous().numpy()
    name_b = name.encode("utf-8")
    fh.write(struct.pack("<H", len(name_b)))
    fh.write(name_b)
    fh.write(struct.pack("<B", data.ndim))
    for dim in data.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(data.astype("<f4").tobytes())


def save_checkpoint(state: ModelState, path: str | Path, train_config: dict | None = None) -> None:
    entries: list[tuple[str, torch.Tensor]] = []
    for name, p in sorted(state.param_dict().items()):
        entries.append((f"param/{name}", p))
    for name, shadow in sorted(state.ema.items()):
        entries.append((f"ema/{name}", shadow))
    for name, buf in sorted(state.buffer_dict().items()):
        entries.append((f"buffer/{name}", buf))

    blob = {
        "backbone": state.spec.to_dict(),
        "step_count": state.step_count,
        "train_config": train_config,
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(entries)))
        for name, tensor in entries:
            _write_entry(fh, name, tensor)
        fh.write(json.dumps(blob, sort_keys=True, separators=(",", ":")).encode("utf-8"))


def load_checkpoint(path: str | Path) -> tuple[ModelState, dict | None]:
    """Rebuild a ModelState (fresh momentum buffers) from a checkpoint file."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic in {path}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (n_entries,) = struct.unpack_from("<I", data, 8)
    offset = 12
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_entries):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", data, offset)
        offset += 1
        dims = struct.unpack_from(f"<{ndim}I", data, offset) if ndim else ()
        offset += 4 * ndim
        count = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(dims)
        offset += 4 * count
        tensors[name] = arr
    blob = json.loads(data[offset:].decode("utf-8")) if offset < len(data) else {}

    spec = BackboneSpec.from_dict(blob["backbone"])
    state = init_model(spec, seed=0)
    with torch.no_grad():
        for name, p in state.net.named_parameters():
            p.copy_(torch.from_numpy(tensors[f"param/{name}"].copy()))
            state.ema[name].copy_(torch.from_numpy(tensors[f"ema/{name}"].copy()))
        for name, buf in state.net.named_buffers():
            value = torch.from_numpy(tensors[f"buffer/{name}"].copy())
            buf.copy_(value.to(buf.dtype))
    state.step_count = int(blob.get("step_count", 0))
    return state, blob.get("train_config")
