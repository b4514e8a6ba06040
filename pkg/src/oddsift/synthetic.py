"""Synthetic two-population image benchmark: textured blobs vs ring shapes.

Used by the CLI bench harness and the end-to-end tests. Normal images are
filled Gaussian blobs over a noisy textured background; anomalies are
annuli (rings) over the same background, so the discriminative feature is
shape rather than intensity statistics.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy import ndimage

from .catalog import SPLIT_LABELLED, SPLIT_UNLABELLED
from .shards import quantise_u8, write_shards
from .stretch import StretchSpec


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    texture = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (size, size)), sigma=3.0)
    texture = 0.16 * texture / (np.abs(texture).max() + 1e-9)
    noise = rng.normal(0.0, 0.05, (size, size))
    return 0.15 + texture + noise


def _add_blobs(img: np.ndarray, rng: np.random.Generator, size: int, n: int) -> None:
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(n):
        cy, cx = rng.uniform(0.2 * size, 0.8 * size, 2)
        sigma = rng.uniform(0.05 * size, 0.13 * size)
        amp = rng.uniform(0.4, 0.9)
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))


def make_blob_image(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Normal population: one to three filled Gaussian blobs."""
    img = _background(rng, size)
    _add_blobs(img, rng, size, int(rng.integers(1, 4)))
    return np.clip(img, 0.0, 1.0).astype(np.float32)[np.newaxis]


def draw_ring(
    img: np.ndarray, rng: np.random.Generator, size: int
) -> tuple[float, float, float]:
    """Add one bright annulus (possibly elliptical) in place; returns its
    (centre_y, centre_x, radius)."""
    yy, xx = np.mgrid[0:size, 0:size]
    cy, cx = rng.uniform(0.35 * size, 0.65 * size, 2)
    radius = rng.uniform(0.14 * size, 0.28 * size)
    thickness = rng.uniform(0.03 * size, 0.055 * size)
    ellipticity = rng.uniform(0.75, 1.0)
    amp = rng.uniform(0.4, 0.85)
    dist = np.sqrt(((yy - cy) * ellipticity) ** 2 + (xx - cx) ** 2)
    img += amp * np.exp(-((dist - radius) ** 2) / (2 * thickness**2))
    return float(cy), float(cx), float(radius)


def make_ring_image(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Anomaly population: a bright annulus with an empty core, over the
    same background and blob distractors as normals."""
    img = _background(rng, size)
    _add_blobs(img, rng, size, int(rng.integers(0, 3)))
    draw_ring(img, rng, size)
    return np.clip(img, 0.0, 1.0).astype(np.float32)[np.newaxis]


def generate_image(kind: str, rng: np.random.Generator, size: int = 64) -> np.ndarray:
    return make_ring_image(rng, size) if kind == "ring" else make_blob_image(rng, size)


def build_benchmark(
    out_dir: str | Path,
    n_seed_anomaly: int = 5,
    n_seed_normal: int = 495,
    pool_size: int = 2000,
    pool_prevalence: float = 0.01,
    size: int = 64,
    seed: int = 0,
    shard_size: int = 1024,
) -> tuple[Path, Path]:
    """Generate a labelled seed set plus an unlabelled pool into a shard cache.

    Returns (catalog_path, cache_dir). Every record carries its ground-truth
    label; seed records sit in the labelled split, pool records in the
    unlabelled split. Pool anomaly count is round(pool_size * prevalence).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_dir = out_dir / "cache"
    rng = np.random.default_rng(seed)

    n_pool_anomaly = int(round(pool_size * pool_prevalence))
    spec = [(SPLIT_LABELLED, 1)] * n_seed_anomaly + [(SPLIT_LABELLED, 0)] * n_seed_normal
    spec += [(SPLIT_UNLABELLED, 1)] * n_pool_anomaly
    spec += [(SPLIT_UNLABELLED, 0)] * (pool_size - n_pool_anomaly)
    # Shuffle within each split so ids carry no class information.
    order = np.concatenate(
        [
            rng.permutation(n_seed_anomaly + n_seed_normal),
            n_seed_anomaly + n_seed_normal + rng.permutation(pool_size),
        ]
    )
    spec = [spec[i] for i in order]

    entries = []
    for idx, (split, label) in enumerate(spec):
        entries.append((f"img{idx:06d}", split, label))

    def images():
        for record_id, _, label in entries:
            img = generate_image("ring" if label == 1 else "blob", rng, size)
            yield record_id, quantise_u8(img)

    write_shards(
        images(),
        cache_dir,
        shard_size=shard_size,
        count=len(entries),
        channels=1,
        height=size,
        width=size,
        stretch=StretchSpec("linear-minmax"),
    )

    catalog_path = out_dir / "catalog.jsonl"
    with open(catalog_path, "w", encoding="utf-8") as fh:
        for record_id, split, label in entries:
            fh.write(
                json.dumps(
                    {"id": record_id, "path": "", "gt_label": label, "split": split},
                    sort_keys=True,
                )
                + "\n"
            )
    return catalog_path, cache_dir
