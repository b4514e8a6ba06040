"""Dataset catalog, label persistence and image loading.

The catalog is a JSON-lines file, one record per line:
``{"id", "path", "gt_label" (optional), "split" (optional)}``.
Splits partition record ids into the labelled set, the unlabelled pool and
an optional held-out test set; labelled and unlabelled are always disjoint.

Labels are stored append-only as CSV with columns
``id,label,provenance,timestamp_iso8601``; for one id the latest entry wins.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import fitsio
from .errors import (
    ContractError,
    DecodeError,
    FormatError,
    NotFoundError,
    ParseError,
)
from .stretch import StretchSpec, apply_stretch

SPLIT_LABELLED = "labelled"
SPLIT_UNLABELLED = "unlabelled"
SPLIT_TEST = "test"
_SPLITS = (SPLIT_LABELLED, SPLIT_UNLABELLED, SPLIT_TEST)

# Raw float-array container: magic, then C, H, W as u32 LE, then f32 LE pixels.
RAW_MAGIC = b"AMF32"
_RAW_HEADER = struct.Struct("<5sIII")

LABELS_CSV_COLUMNS = ("id", "label", "provenance", "timestamp_iso8601")


@dataclass
class ImageRecord:
    """One image: identity, storage location, optional ground truth."""

    id: str
    path: str = ""
    channels: int | None = None
    height: int | None = None
    width: int | None = None
    gt_label: int | None = None

    def __post_init__(self):
        if not self.id:
            raise ContractError("record id must be non-empty")
        if self.channels is not None and self.channels not in (1, 3):
            raise ContractError(f"channels must be 1 or 3, got {self.channels}")
        for name in ("height", "width"):
            v = getattr(self, name)
            if v is not None and v < 8:
                raise ContractError(f"{name} must be >= 8, got {v}")
        if self.gt_label is not None and self.gt_label not in (0, 1):
            raise ContractError(f"gt_label must be 0 or 1, got {self.gt_label}")


class DatasetCatalog:
    """Ordered image records plus the labelled/unlabelled/test split."""

    def __init__(self):
        self.records: dict[str, ImageRecord] = {}
        self.labelled: list[str] = []
        self.unlabelled: list[str] = []
        self.test: list[str] = []

    def __len__(self) -> int:
        return len(self.records)

    def add_record(self, record: ImageRecord, split: str = SPLIT_UNLABELLED) -> None:
        if record.id in self.records:
            raise ContractError(f"duplicate record id {record.id!r}")
        if split not in _SPLITS:
            raise ContractError(f"unknown split {split!r}")
        self.records[record.id] = record
        getattr(self, split).append(record.id)

    def get(self, record_id: str) -> ImageRecord:
        try:
            return self.records[record_id]
        except KeyError:
            raise NotFoundError(f"unknown record id {record_id!r}") from None

    def split_of(self, record_id: str) -> str:
        for split in _SPLITS:
            if record_id in getattr(self, split):
                return split
        raise NotFoundError(f"record id {record_id!r} is in no split")

    def move_to_labelled(self, ids: list[str]) -> None:
        """Move ids from the unlabelled pool to the labelled set, atomically."""
        unlabelled = set(self.unlabelled)
        for record_id in ids:
            if record_id not in self.records:
                raise NotFoundError(f"unknown record id {record_id!r}")
            if record_id not in unlabelled:
                raise ContractError(f"record {record_id!r} is not in the unlabelled pool")
        moving = set(ids)
        self.unlabelled = [i for i in self.unlabelled if i not in moving]
        self.labelled.extend(ids)
        self.check_invariants()

    def check_invariants(self) -> None:
        overlap = set(self.labelled) & set(self.unlabelled)
        if overlap:
            raise ContractError(f"labelled/unlabelled overlap: {sorted(overlap)[:5]}")
        for split in _SPLITS:
            for record_id in getattr(self, split):
                if record_id not in self.records:
                    raise ContractError(f"split id {record_id!r} has no record")

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "DatasetCatalog":
        path = Path(path)
        if not path.exists():
            raise NotFoundError(f"catalog file not found: {path}")
        catalog = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"bad catalog JSON: {exc}", line=lineno) from exc
                if "id" not in obj:
                    raise ParseError("catalog record missing 'id'", line=lineno)
                record = ImageRecord(
                    id=str(obj["id"]),
                    path=obj.get("path", ""),
                    gt_label=obj.get("gt_label"),
                )
                catalog.add_record(record, split=obj.get("split", SPLIT_UNLABELLED))
        catalog.check_invariants()
        return catalog

    def to_jsonl(self, path: str | Path) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            for split in _SPLITS:
                for record_id in getattr(self, split):
                    record = self.records[record_id]
                    obj: dict = {"id": record.id, "path": record.path}
                    if record.gt_label is not None:
                        obj["gt_label"] = record.gt_label
                    obj["split"] = split
                    fh.write(json.dumps(obj, sort_keys=True) + "\n")


@dataclass(frozen=True)
class LabelEntry:
    id: str
    label: int
    provenance: str
    timestamp: str


class LabelStore:
    """Append-only label log; the latest entry per id is the active label."""

    def __init__(self):
        self.entries: list[LabelEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, record_id: str, label: int, provenance: str, timestamp: str | None = None) -> LabelEntry:
        if label not in (0, 1):
            raise ContractError(f"label must be 0 or 1, got {label}")
        if timestamp is None:
            timestamp = datetime.now(timezone.utc).isoformat()
        entry = LabelEntry(record_id, int(label), provenance, timestamp)
        self.entries.append(entry)
        return entry

    def active(self) -> dict[str, LabelEntry]:
        """Active label per id (later entries supersede earlier ones)."""
        result: dict[str, LabelEntry] = {}
        for entry in self.entries:
            result[entry.id] = entry
        return result

    def active_labels(self) -> dict[str, int]:
        return {record_id: e.label for record_id, e in self.active().items()}

    def class_counts(self) -> tuple[int, int]:
        """(n_normal, n_anomaly) over active labels."""
        labels = list(self.active_labels().values())
        return labels.count(0), labels.count(1)

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(LABELS_CSV_COLUMNS)
            for e in self.entries:
                writer.writerow([e.id, e.label, e.provenance, e.timestamp])

    @classmethod
    def load_csv(cls, path: str | Path) -> "LabelStore":
        path = Path(path)
        if not path.exists():
            raise NotFoundError(f"labels file not found: {path}")
        store = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != LABELS_CSV_COLUMNS:
                raise ParseError(f"bad labels header: {header}", line=1)
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 4:
                    raise ParseError(f"expected 4 columns, got {len(row)}", line=lineno)
                record_id, label_s, provenance, timestamp = row
                try:
                    label = int(label_s)
                except ValueError as exc:
                    raise ParseError(f"bad label {label_s!r}", line=lineno) from exc
                if label not in (0, 1):
                    raise ParseError(f"label must be 0 or 1, got {label}", line=lineno)
                store.entries.append(LabelEntry(record_id, label, provenance, timestamp))
        return store


def write_raw_f32(path: str | Path, pixels: np.ndarray) -> None:
    """Write a (C, H, W) float array in the raw little-endian f32 container."""
    pixels = np.asarray(pixels, dtype="<f4")
    if pixels.ndim != 3:
        raise ContractError(f"raw array must be (C, H, W), got shape {pixels.shape}")
    c, h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(_RAW_HEADER.pack(RAW_MAGIC, c, h, w))
        fh.write(pixels.tobytes())


def read_raw_f32(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_RAW_HEADER.size)
        if len(header) < _RAW_HEADER.size:
            raise DecodeError(f"raw file too short: {path}")
        magic, c, h, w = _RAW_HEADER.unpack(header)
        if magic != RAW_MAGIC:
            raise FormatError(f"bad raw magic {magic!r} in {path}")
        data = fh.read(4 * c * h * w)
        if len(data) < 4 * c * h * w:
            raise DecodeError(f"raw pixel data truncated in {path}")
    return np.frombuffer(data, dtype="<f4").reshape(c, h, w).copy()


def _decode_file(path: Path) -> np.ndarray:
    """Decode an image file into a float (C, H, W) array of raw values."""
    suffix = path.suffix.lower()
    if suffix in (".fits", ".fit", ".fts"):
        _, matrix = fitsio.parse_fits(path.read_bytes())
        matrix = np.where(np.isnan(matrix), 0.0, matrix)
        return matrix[np.newaxis, :, :]
    if suffix == ".amf32":
        return read_raw_f32(path)
    try:
        with Image.open(path) as img:
            if img.mode in ("L", "I", "I;16", "F"):
                arr = np.asarray(img.convert("F"), dtype=np.float32)
                return arr[np.newaxis, :, :]
            if img.mode in ("RGB", "RGBA", "P", "CMYK", "YCbCr", "LA"):
                arr = np.asarray(img.convert("RGB"), dtype=np.float32)
                return arr.transpose(2, 0, 1)
            raise FormatError(f"unsupported image mode {img.mode!r} in {path}")
    except UnidentifiedImageError as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc


def load_image(record: ImageRecord, stretch: StretchSpec) -> np.ndarray:
    """Decode a record's source file and stretch it into a [0, 1] tensor.

    Returns float32 (C, H, W). Deterministic for a fixed file and spec.
    """
    if not record.path:
        raise NotFoundError(f"record {record.id!r} has no source path")
    path = Path(record.path)
    if not path.exists():
        raise NotFoundError(f"image file not found: {path}")
    raw = _decode_file(path)
    if raw.shape[0] not in (1, 3):
        raise FormatError(f"unsupported channel count {raw.shape[0]} in {path}")
    if record.channels is not None and raw.shape[0] != record.channels:
        raise FormatError(
            f"record {record.id!r} declares {record.channels} channels, file has {raw.shape[0]}"
        )
    out = apply_stretch(raw, stretch).astype(np.float32)
    return out


def resize_chw(pixels: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear-resize a (C, H, W) float array to (C, height, width)."""
    pixels = np.asarray(pixels, dtype=np.float32)
    if pixels.shape[1] == height and pixels.shape[2] == width:
        return pixels
    planes = []
    for ch in pixels:
        img = Image.fromarray(ch, mode="F").resize((width, height), Image.BILINEAR)
        planes.append(np.asarray(img, dtype=np.float32))
    return np.stack(planes)


def fits_to_record(
    header: fitsio.FitsHeader,
    matrix: np.ndarray,
    stretch: StretchSpec,
    record_id: str = "fits",
    path: str = "",
) -> tuple[ImageRecord, np.ndarray, int]:
    """Build a single-channel ImageRecord + stretched tensor from FITS data.

    Returns (record, (1, H, W) float32 tensor, count of NaN pixels zeroed).
    """
    tensor, n_nan = fitsio.fits_to_image(matrix, stretch)
    # Dimensions are recorded only when they satisfy the catalog minimum;
    # small test matrices stay dimension-less until resized at cache build.
    height = header.naxis2 if header.naxis2 >= 8 else None
    width = header.naxis1 if header.naxis1 >= 8 else None
    record = ImageRecord(id=record_id, path=path, channels=1, height=height, width=width)
    return record, tensor, n_nan
