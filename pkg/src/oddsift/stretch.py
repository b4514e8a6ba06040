"""Pixel-value stretches: monotone mappings from raw values to [0, 1].

Four kinds are supported:

* ``linear-minmax`` — affine rescale of the full value range.
* ``log``           — minmax rescale followed by ``ln(1 + u/a) / ln(1 + 1/a)``.
* ``asinh``         — minmax rescale followed by ``asinh(u/a) / asinh(1/a)``.
* ``zscale-like``   — percentile clip (default 0.5% / 99.5%) then linear map.

All stretches map a constant image to all zeros (the degenerate-range
convention), and all are monotone non-decreasing on finite input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidDataError

STRETCH_KINDS = ("linear-minmax", "log", "asinh", "zscale-like")

# CLI/config aliases accepted for convenience.
_KIND_ALIASES = {
    "linear": "linear-minmax",
    "minmax": "linear-minmax",
    "zscale": "zscale-like",
}


@dataclass(frozen=True)
class StretchSpec:
    """Stretch kind plus its parameters.

    ``a`` is the softening used by the log/asinh mappings; ``clip_lo`` and
    ``clip_hi`` are the zscale-like clip percentiles.
    """

    kind: str = "linear-minmax"
    a: float = 0.1
    clip_lo: float = 0.5
    clip_hi: float = 99.5

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind, self.kind)
        if kind not in STRETCH_KINDS:
            raise ConfigError(f"unknown stretch kind {self.kind!r}; expected one of {STRETCH_KINDS}")
        object.__setattr__(self, "kind", kind)
        if not self.a > 0:
            raise ConfigError(f"stretch softening a must be > 0, got {self.a}")
        if not (0.0 <= self.clip_lo < self.clip_hi <= 100.0):
            raise ConfigError(
                f"clip percentiles must satisfy 0 <= lo < hi <= 100, got ({self.clip_lo}, {self.clip_hi})"
            )

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "clip_lo": self.clip_lo, "clip_hi": self.clip_hi}

    @classmethod
    def from_dict(cls, d: dict) -> "StretchSpec":
        return cls(**d)


def _minmax(values: np.ndarray) -> np.ndarray:
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def apply_stretch(values: np.ndarray, spec: StretchSpec) -> np.ndarray:
    """Map an array of finite floats into [0, 1] according to ``spec``.

    Raises :class:`InvalidDataError` on NaN/Inf input. The mapping is
    monotone non-decreasing; a zero-dynamic-range input maps to all zeros.
    """
    values = np.asarray(values, dtype=np.float32)
    if not np.isfinite(values).all():
        raise InvalidDataError("stretch input contains NaN or Inf")

    if spec.kind == "linear-minmax":
        return _minmax(values)
    if spec.kind == "log":
        u = _minmax(values)
        return np.log1p(u / spec.a) / np.log1p(1.0 / spec.a)
    if spec.kind == "asinh":
        u = _minmax(values)
        return np.arcsinh(u / spec.a) / np.arcsinh(1.0 / spec.a)
    if spec.kind == "zscale-like":
        lo, hi = np.percentile(values, [spec.clip_lo, spec.clip_hi])
        if hi == lo:
            return np.zeros_like(values)
        return np.clip((values - lo) / (hi - lo), 0.0, 1.0).astype(np.float32)
    raise ConfigError(f"unknown stretch kind {spec.kind!r}")  # unreachable after validation
