"""Weak and strong augmentation pipelines for consistency training.

All operations act on float32 (C, H, W) tensors with values in [0, 1],
preserve shape, clamp output back to [0, 1], and are exact identities at
zero magnitude. Geometric ops use bilinear sampling with zero fill.

The strong pipeline samples ``n_ops`` distinct operations per image
(uniformly, without replacement) at a fixed normalised magnitude with a
random sign for the signed ops — the usual RandAugment scheme.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError

OP_KINDS = (
    "hflip",
    "crop-pad",
    "rotate",
    "brightness",
    "contrast",
    "solarize",
    "sharpness",
    "shear-x",
    "shear-y",
    "translate-x",
    "translate-y",
    "posterize",
)

# hflip and crop-pad belong to the weak pipeline; the rest form the
# default strong-op pool.
DEFAULT_STRONG_OPS = (
    "rotate",
    "brightness",
    "contrast",
    "solarize",
    "sharpness",
    "shear-x",
    "shear-y",
    "translate-x",
    "translate-y",
    "posterize",
)

MAX_ROTATE_DEG = 30.0
MAX_SHEAR = 0.3
MAX_TRANSLATE_FRAC = 0.3
MAX_ENHANCE_DELTA = 0.95  # brightness/contrast/sharpness factor in [0.05, 1.95]
WEAK_CROP_PAD = 4

GAUSS3 = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 16.0


@dataclass(frozen=True)
class AugmentOp:
    """One augmentation: kind, normalised magnitude in [0, 1], sign."""

    kind: str
    magnitude: float
    direction: int = 1

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise ConfigError(f"unknown augment op {self.kind!r}")
        if not 0.0 <= self.magnitude <= 1.0:
            raise ConfigError(f"magnitude must be in [0, 1], got {self.magnitude}")
        if self.direction not in (1, -1):
            raise ConfigError(f"direction must be +1 or -1, got {self.direction}")


@dataclass
class RandAugmentPolicy:
    """How to sample strong augmentations: op count, level, op pool."""

    n_ops: int = 2
    magnitude: int = 10
    level_max: int = 30
    ops: tuple = DEFAULT_STRONG_OPS

    def __post_init__(self):
        if self.n_ops < 1 or self.n_ops > len(self.ops):
            raise ConfigError(f"n_ops must be in [1, {len(self.ops)}], got {self.n_ops}")
        if not 0 <= self.magnitude <= self.level_max:
            raise ConfigError(f"magnitude level must be in [0, {self.level_max}]")
        unknown = set(self.ops) - set(OP_KINDS)
        if unknown:
            raise ConfigError(f"unknown ops in policy: {sorted(unknown)}")

    def normalised_magnitude(self) -> float:
        return self.magnitude / self.level_max


def _affine_chw(x: np.ndarray, matrix: np.ndarray, offset: np.ndarray) -> np.ndarray:
    """Apply a 2x2 affine map (input = matrix @ output + offset) per channel."""
    out = np.empty_like(x)
    for c in range(x.shape[0]):
        out[c] = ndimage.affine_transform(
            x[c], matrix, offset=offset, order=1, mode="constant", cval=0.0
        )
    return out


def _centered_affine(x: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    center = (np.asarray(x.shape[1:], dtype=np.float64) - 1.0) / 2.0
    offset = center - matrix @ center
    return _affine_chw(x, matrix, offset)


def smooth3(x: np.ndarray) -> np.ndarray:
    """3x3 Gaussian smoothing per channel (kernel [[1,2,1],[2,4,2],[1,2,1]]/16,
    replicated edges)."""
    out = np.empty_like(x)
    for c in range(x.shape[0]):
        out[c] = ndimage.correlate(x[c], GAUSS3, mode="nearest")
    return out


def posterize(x: np.ndarray, bits: int) -> np.ndarray:
    """Quantise to 2**bits levels: floor(v * 2**bits) / 2**bits, capped at 1."""
    levels = float(2**bits)
    return np.minimum(np.floor(x * levels) / levels, 1.0).astype(x.dtype)


def solarize(x: np.ndarray, threshold: float) -> np.ndarray:
    """Invert values at or above the threshold."""
    return np.where(x >= threshold, 1.0 - x, x).astype(x.dtype)


def apply_op(x: np.ndarray, op: AugmentOp) -> np.ndarray:
    """Apply one augmentation; shape-preserving, output clamped to [0, 1]."""
    x = np.asarray(x, dtype=np.float32)
    m = op.magnitude
    if m == 0.0:
        return x.copy()
    s = op.direction
    _, h, w = x.shape

    if op.kind == "hflip":
        return x[:, :, ::-1].copy() if m >= 0.5 else x.copy()
    if op.kind == "crop-pad":
        pad = int(round(WEAK_CROP_PAD * m))
        if pad == 0:
            return x.copy()
        padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
        off = 0 if s < 0 else 2 * pad
        return padded[:, off : off + h, off : off + w].copy()
    if op.kind == "rotate":
        theta = math.radians(s * m * MAX_ROTATE_DEG)
        rot = np.array(
            [[math.cos(theta), math.sin(theta)], [-math.sin(theta), math.cos(theta)]]
        )
        out = _centered_affine(x, rot)
    elif op.kind == "shear-x":
        out = _centered_affine(x, np.array([[1.0, 0.0], [s * m * MAX_SHEAR, 1.0]]))
    elif op.kind == "shear-y":
        out = _centered_affine(x, np.array([[1.0, s * m * MAX_SHEAR], [0.0, 1.0]]))
    elif op.kind == "translate-x":
        shift = int(round(s * m * MAX_TRANSLATE_FRAC * w))
        out = _affine_chw(x, np.eye(2), np.array([0.0, -shift]))
    elif op.kind == "translate-y":
        shift = int(round(s * m * MAX_TRANSLATE_FRAC * h))
        out = _affine_chw(x, np.eye(2), np.array([-shift, 0.0]))
    elif op.kind == "brightness":
        out = (1.0 + s * MAX_ENHANCE_DELTA * m) * x
    elif op.kind == "contrast":
        mean = x.mean()
        out = mean + (1.0 + s * MAX_ENHANCE_DELTA * m) * (x - mean)
    elif op.kind == "sharpness":
        smoothed = smooth3(x)
        out = smoothed + (1.0 + s * MAX_ENHANCE_DELTA * m) * (x - smoothed)
    elif op.kind == "solarize":
        return solarize(x, 1.0 - m)
    elif op.kind == "posterize":
        return posterize(x, 8 - int(round(4 * m)))
    else:
        raise ConfigError(f"unknown augment op {op.kind!r}")  # unreachable
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def weak_augment(x: np.ndarray, rng: np.random.Generator, pad: int = WEAK_CROP_PAD) -> np.ndarray:
    """Horizontal flip with probability 0.5, then pad-reflect + random crop."""
    x = np.asarray(x, dtype=np.float32)
    _, h, w = x.shape
    if rng.random() < 0.5:
        x = x[:, :, ::-1]
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
    top = int(rng.integers(0, 2 * pad + 1))
    left = int(rng.integers(0, 2 * pad + 1))
    return padded[:, top : top + h, left : left + w].copy()


def strong_augment(
    x: np.ndarray, policy: RandAugmentPolicy, rng: np.random.Generator
) -> np.ndarray:
    """Apply ``n_ops`` ops sampled without replacement at the policy magnitude."""
    kinds = rng.choice(len(policy.ops), size=policy.n_ops, replace=False)
    out = np.asarray(x, dtype=np.float32)
    m = policy.normalised_magnitude()
    for idx in kinds:
        direction = 1 if rng.random() < 0.5 else -1
        out = apply_op(out, AugmentOp(policy.ops[int(idx)], m, direction))
    return out
