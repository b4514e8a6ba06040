"""Sharded binary cache of pre-processed images.

Each shard file holds fixed-shape u8 pixel records:

``magic "AMSH" | version u32 LE | count u64 LE | channels u8 | height u16 LE |
width u16 LE | reserved 13B | count * (id_len u16 LE | id utf8 |
pixels u8 * C*H*W) | footer magic "HSMA"``

A sidecar ``index.json`` maps id -> {"shard": filename, "byte_offset": offset}
for random access; a missing footer marks a partially written (invalid) shard.
"""

from __future__ import annotations

import json
import struct
import threading
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .catalog import DatasetCatalog, load_image, resize_chw
from .errors import FormatError, IntegrityError, NotFoundError, TruncationError
from .stretch import StretchSpec

SHARD_MAGIC = b"AMSH"
SHARD_FOOTER = b"HSMA"
SHARD_VERSION = 1
_HEADER = struct.Struct("<4sIQBHH13x")  # magic, version, count, channels, height, width
INDEX_FILENAME = "index.json"
META_FILENAME = "meta.json"


def quantise_u8(pixels: np.ndarray) -> np.ndarray:
    """Quantise a [0, 1] float array to u8 (round(v * 255))."""
    return np.clip(np.rint(np.asarray(pixels, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


class ShardWriter:
    """Writes one shard file; the footer is appended on close."""

    def __init__(self, path: str | Path, count: int, channels: int, height: int, width: int):
        self.path = Path(path)
        self.channels, self.height, self.width = channels, height, width
        self._expected = count
        self._written = 0
        self._fh = open(self.path, "wb")
        self._fh.write(_HEADER.pack(SHARD_MAGIC, SHARD_VERSION, count, channels, height, width))

    def append(self, record_id: str, pixels: np.ndarray) -> int:
        """Append one record; returns its byte offset within the shard."""
        pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
        if pixels.shape != (self.channels, self.height, self.width):
            raise FormatError(
                f"record {record_id!r} has shape {pixels.shape}, shard expects "
                f"{(self.channels, self.height, self.width)}"
            )
        id_bytes = record_id.encode("utf-8")
        offset = self._fh.tell()
        self._fh.write(struct.pack("<H", len(id_bytes)))
        self._fh.write(id_bytes)
        self._fh.write(pixels.tobytes())
        self._written += 1
        return offset

    def close(self) -> None:
        if self._written != self._expected:
            self._fh.close()
            raise IntegrityError(
                f"shard {self.path.name} wrote {self._written} records, declared {self._expected}"
            )
        self._fh.write(SHARD_FOOTER)
        self._fh.close()


def write_shards(
    images: Iterable[tuple[str, np.ndarray]],
    out_dir: str | Path,
    shard_size: int,
    count: int,
    channels: int,
    height: int,
    width: int,
    stretch: StretchSpec | None = None,
) -> Path:
    """Write (id, u8 pixels) pairs into shards + index; returns the index path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if shard_size < 1:
        raise FormatError(f"shard_size must be >= 1, got {shard_size}")

    index: dict[str, dict] = {}
    writer: ShardWriter | None = None
    shard_idx = -1
    in_shard = 0
    remaining = count
    for record_id, pixels in images:
        if record_id in index:
            if writer is not None:
                writer._fh.close()
            raise IntegrityError(f"duplicate id {record_id!r} during cache build")
        if writer is None or in_shard == shard_size:
            if writer is not None:
                writer.close()
            shard_idx += 1
            shard_count = min(shard_size, remaining)
            writer = ShardWriter(
                out_dir / f"shard_{shard_idx:05d}.amsh", shard_count, channels, height, width
            )
            in_shard = 0
        offset = writer.append(record_id, pixels)
        index[record_id] = {"shard": writer.path.name, "byte_offset": offset}
        in_shard += 1
        remaining -= 1
    if writer is not None:
        writer.close()
    if remaining != 0:
        raise IntegrityError(f"declared {count} records but received {count - remaining}")

    index_path = out_dir / INDEX_FILENAME
    with open(index_path, "w", encoding="utf-8") as fh:
        json.dump(index, fh, sort_keys=True, separators=(",", ":"))
    meta = {
        "channels": channels,
        "height": height,
        "width": width,
        "count": count,
        "shard_size": shard_size,
        "stretch": stretch.to_dict() if stretch is not None else None,
    }
    with open(out_dir / META_FILENAME, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, separators=(",", ":"))
    return index_path


def build_shard_cache(
    catalog: DatasetCatalog,
    stretch: StretchSpec,
    out_dir: str | Path,
    shard_size: int = 4096,
    size: int | None = None,
    channels: int | None = None,
) -> Path:
    """Decode, stretch, resize and quantise every catalog record into shards.

    ``size`` is the square output side (default: first record's size);
    ``channels`` defaults to the first record's channel count. Grayscale
    sources are replicated when a 3-channel cache is requested.
    """
    ids = list(catalog.records)
    if not ids:
        raise FormatError("catalog is empty")

    first = load_image(catalog.get(ids[0]), stretch)
    if channels is None:
        channels = first.shape[0]
    if size is None:
        size = first.shape[1]

    def generate() -> Iterator[tuple[str, np.ndarray]]:
        for record_id in ids:
            record = catalog.get(record_id)
            img = load_image(record, stretch)
            if img.shape[0] == 1 and channels == 3:
                img = np.repeat(img, 3, axis=0)
            elif img.shape[0] != channels:
                raise FormatError(
                    f"record {record_id!r} has {img.shape[0]} channels, cache expects {channels}"
                )
            img = resize_chw(img, size, size)
            record.channels = channels
            record.height = size
            record.width = size
            yield record_id, quantise_u8(img)

    return write_shards(
        generate(), out_dir, shard_size, len(ids), channels, size, size, stretch=stretch
    )


class ShardReader:
    """Random access and streaming reads over a shard cache directory."""

    def __init__(self, cache_dir: str | Path):
        cache_dir = Path(cache_dir)
        # Accept either the cache directory or the index file itself.
        if cache_dir.is_file():
            cache_dir = cache_dir.parent
        self.cache_dir = cache_dir
        index_path = self.cache_dir / INDEX_FILENAME
        if not index_path.exists():
            raise NotFoundError(f"shard index not found: {index_path}")
        with open(index_path, encoding="utf-8") as fh:
            self.index: dict[str, dict] = json.load(fh)
        meta_path = self.cache_dir / META_FILENAME
        self.meta: dict = {}
        if meta_path.exists():
            with open(meta_path, encoding="utf-8") as fh:
                self.meta = json.load(fh)
        self._handles: dict[str, object] = {}
        self._headers: dict[str, tuple[int, int, int, int]] = {}
        # Shared handles are seek+read; serialise access so concurrent
        # readers (service threads during training) stay safe.
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.index)

    @property
    def ids(self) -> list[str]:
        return list(self.index)

    def shard_paths(self) -> list[Path]:
        names = sorted({entry["shard"] for entry in self.index.values()})
        return [self.cache_dir / name for name in names]

    def _open(self, shard_name: str):
        if shard_name not in self._handles:
            path = self.cache_dir / shard_name
            if not path.exists():
                raise NotFoundError(f"shard file missing: {path}")
            validate_shard(path)
            fh = open(path, "rb")
            header = fh.read(_HEADER.size)
            magic, version, count, channels, height, width = _HEADER.unpack(header)
            self._handles[shard_name] = fh
            self._headers[shard_name] = (count, channels, height, width)
        return self._handles[shard_name], self._headers[shard_name]

    def shape(self) -> tuple[int, int, int]:
        """(channels, height, width) of the cached records."""
        if self.meta:
            return (self.meta["channels"], self.meta["height"], self.meta["width"])
        first = next(iter(self.index.values()))
        _, (count, channels, height, width) = self._open(first["shard"])
        return channels, height, width

    def read(self, record_id: str) -> np.ndarray:
        """Read one record's u8 pixels as (C, H, W). Thread-safe."""
        entry = self.index.get(record_id)
        if entry is None:
            raise NotFoundError(f"id {record_id!r} not in shard index")
        with self._lock:
            fh, (count, channels, height, width) = self._open(entry["shard"])
            fh.seek(entry["byte_offset"])
            (id_len,) = struct.unpack("<H", fh.read(2))
            stored_id = fh.read(id_len).decode("utf-8")
            if stored_id != record_id:
                raise IntegrityError(f"index points at {stored_id!r}, expected {record_id!r}")
            n = channels * height * width
            data = fh.read(n)
        if len(data) < n:
            raise TruncationError(f"record {record_id!r} truncated in shard")
        return np.frombuffer(data, dtype=np.uint8).reshape(channels, height, width).copy()

    def read_float(self, record_id: str) -> np.ndarray:
        """Read one record as float32 in [0, 1]."""
        return self.read(record_id).astype(np.float32) / 255.0

    def close(self) -> None:
        for fh in self._handles.values():
            fh.close()
        self._handles.clear()


def validate_shard(path: str | Path) -> tuple[int, int, int, int]:
    """Check magic/version/footer; returns (count, channels, height, width)."""
    path = Path(path)
    size = path.stat().st_size
    if size < _HEADER.size + len(SHARD_FOOTER):
        raise IntegrityError(f"shard too small: {path}")
    with open(path, "rb") as fh:
        magic, version, count, channels, height, width = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != SHARD_MAGIC:
            raise FormatError(f"bad shard magic in {path}")
        if version != SHARD_VERSION:
            raise FormatError(f"unsupported shard version {version} in {path}")
        fh.seek(size - len(SHARD_FOOTER))
        if fh.read(len(SHARD_FOOTER)) != SHARD_FOOTER:
            raise IntegrityError(f"shard footer missing (partial write?): {path}")
    return count, channels, height, width


def iter_shard(path: str | Path) -> Iterator[tuple[str, np.ndarray]]:
    """Stream (id, u8 pixels) records from one shard in storage order."""
    count, channels, height, width = validate_shard(path)
    n = channels * height * width
    with open(path, "rb") as fh:
        fh.seek(_HEADER.size)
        for _ in range(count):
            raw_len = fh.read(2)
            if len(raw_len) < 2:
                raise TruncationError(f"shard record header truncated: {path}")
            (id_len,) = struct.unpack("<H", raw_len)
            record_id = fh.read(id_len).decode("utf-8")
            data = fh.read(n)
            if len(data) < n:
                raise TruncationError(f"record {record_id!r} truncated: {path}")
            yield record_id, np.frombuffer(data, dtype=np.uint8).reshape(channels, height, width)
