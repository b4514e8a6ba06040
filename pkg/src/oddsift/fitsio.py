"""Minimal reader/writer for single-HDU 2D FITS images.

Supports the primary HDU only: 2880-byte blocks of 80-byte ASCII cards,
big-endian data with BITPIX in {8, 16, 32, -32, -64}, and the
BSCALE/BZERO linear rescale (`physical = bscale * raw + bzero`).
Extensions, tables, compression and WCS are out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidDataError,
    MalformedHeaderError,
    TruncationError,
    UnsupportedShapeError,
)
from .stretch import StretchSpec, apply_stretch

BLOCK_SIZE = 2880
CARD_SIZE = 80

_BITPIX_DTYPES = {
    8: ">u1",
    16: ">i2",
    32: ">i4",
    -32: ">f4",
    -64: ">f8",
}


@dataclass
class FitsHeader:
    """Parsed primary-HDU header.

    ``cards`` preserves the raw (keyword, value, comment) triples in file
    order; the derived fields are the ones this reader interprets.
    """

    cards: list[tuple[str, str, str]] = field(default_factory=list)
    bitpix: int = 8
    naxis1: int = 0
    naxis2: int = 0
    bscale: float = 1.0
    bzero: float = 0.0

    def card_value(self, keyword: str) -> str | None:
        for key, value, _ in self.cards:
            if key == keyword:
                return value
        return None


def _split_card(card: str) -> tuple[str, str, str]:
    keyword = card[:8].strip()
    rest = card[8:]
    if not rest.startswith("= "):
        return keyword, "", rest.strip()
    body = rest[2:]
    # Split value from comment at the first "/" outside a quoted string.
    in_quote = False
    for i, ch in enumerate(body):
        if ch == "'":
            in_quote = not in_quote
        elif ch == "/" and not in_quote:
            return keyword, body[:i].strip(), body[i + 1 :].strip()
    return keyword, body.strip(), ""


def _parse_header(data: bytes) -> tuple[FitsHeader, int]:
    """Parse header blocks; returns (header, byte offset of the data region)."""
    if len(data) < BLOCK_SIZE:
        raise MalformedHeaderError(f"input shorter than one {BLOCK_SIZE}-byte block")

    cards: list[tuple[str, str, str]] = []
    end_seen = False
    offset = 0
    while not end_seen:
        if offset + BLOCK_SIZE > len(data):
            raise MalformedHeaderError("header has no END card")
        block = data[offset : offset + BLOCK_SIZE]
        try:
            text = block.decode("ascii")
        except UnicodeDecodeError as exc:
            raise MalformedHeaderError(f"non-ASCII bytes in header block: {exc}") from exc
        for i in range(0, BLOCK_SIZE, CARD_SIZE):
            card = text[i : i + CARD_SIZE]
            keyword, value, comment = _split_card(card)
            if keyword == "END":
                end_seen = True
                break
            if keyword:
                cards.append((keyword, value, comment))
        offset += BLOCK_SIZE

    if not cards or cards[0][0] != "SIMPLE":
        raise MalformedHeaderError("first card must be SIMPLE")

    header = FitsHeader(cards=cards)

    def _int_card(keyword: str) -> int | None:
        raw = header.card_value(keyword)
        if raw is None:
            return None
        try:
            return int(raw)
        except ValueError as exc:
            raise MalformedHeaderError(f"{keyword} is not an integer: {raw!r}") from exc

    bitpix = _int_card("BITPIX")
    if bitpix is None:
        raise MalformedHeaderError("missing BITPIX")
    if bitpix not in _BITPIX_DTYPES:
        raise MalformedHeaderError(f"unsupported BITPIX {bitpix}")
    naxis = _int_card("NAXIS")
    if naxis != 2:
        raise UnsupportedShapeError(f"only NAXIS=2 images are supported, got NAXIS={naxis}")
    naxis1 = _int_card("NAXIS1")
    naxis2 = _int_card("NAXIS2")
    if not naxis1 or not naxis2 or naxis1 < 1 or naxis2 < 1:
        raise MalformedHeaderError("NAXIS1/NAXIS2 missing or non-positive")

    header.bitpix = bitpix
    header.naxis1 = naxis1
    header.naxis2 = naxis2
    bscale = header.card_value("BSCALE")
    bzero = header.card_value("BZERO")
    header.bscale = float(bscale) if bscale is not None else 1.0
    header.bzero = float(bzero) if bzero is not None else 0.0
    return header, offset


def parse_fits(data: bytes) -> tuple[FitsHeader, np.ndarray]:
    """Decode a single-HDU FITS byte string into (header, float64 matrix).

    The matrix has shape (NAXIS2, NAXIS1) and holds physical values
    ``bscale * raw + bzero``.
    """
    header, data_offset = _parse_header(data)
    dtype = np.dtype(_BITPIX_DTYPES[header.bitpix])
    n_values = header.naxis1 * header.naxis2
    n_bytes = n_values * dtype.itemsize
    region = data[data_offset : data_offset + n_bytes]
    if len(region) < n_bytes:
        raise TruncationError(
            f"data region truncated: expected {n_bytes} bytes, found {len(region)}"
        )
    raw = np.frombuffer(region, dtype=dtype).reshape(header.naxis2, header.naxis1)
    physical = header.bscale * raw.astype(np.float64) + header.bzero
    return header, physical


def _format_card(keyword: str, value: str, comment: str = "") -> bytes:
    body = f"{keyword:<8}= {value:>20}"
    if comment:
        body += f" / {comment}"
    return body.ljust(CARD_SIZE)[:CARD_SIZE].encode("ascii")


def serialize_fits(header: FitsHeader, matrix: np.ndarray) -> bytes:
    """Re-encode (header, physical matrix) into FITS bytes.

    The inverse rescale ``raw = (physical - bzero) / bscale`` is rounded for
    integer BITPIX; values must fit the target type.
    """
    cards = [
        _format_card("SIMPLE", "T"),
        _format_card("BITPIX", str(header.bitpix)),
        _format_card("NAXIS", "2"),
        _format_card("NAXIS1", str(header.naxis1)),
        _format_card("NAXIS2", str(header.naxis2)),
    ]
    if header.bscale != 1.0:
        cards.append(_format_card("BSCALE", repr(header.bscale)))
    if header.bzero != 0.0:
        cards.append(_format_card("BZERO", repr(header.bzero)))
    cards.append("END".ljust(CARD_SIZE).encode("ascii"))
    head = b"".join(cards)
    head += b" " * (-len(head) % BLOCK_SIZE)

    dtype = np.dtype(_BITPIX_DTYPES[header.bitpix])
    raw = (np.asarray(matrix, dtype=np.float64) - header.bzero) / header.bscale
    if dtype.kind in "ui":
        raw = np.rint(raw)
    body = raw.astype(dtype).tobytes()
    body += b"\x00" * (-len(body) % BLOCK_SIZE)
    return head + body


def fits_to_image(
    matrix: np.ndarray, stretch: StretchSpec
) -> tuple[np.ndarray, int]:
    """Turn a parsed FITS matrix into a stretched single-channel tensor.

    NaN pixels are replaced by 0 before stretching; the count of replaced
    pixels is returned alongside the (1, H, W) float32 tensor. An all-NaN
    matrix raises :class:`InvalidDataError`.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    nan_mask = np.isnan(matrix)
    n_nan = int(nan_mask.sum())
    if n_nan == matrix.size:
        raise InvalidDataError("FITS data is entirely NaN")
    if n_nan:
        matrix = np.where(nan_mask, 0.0, matrix)
    stretched = apply_stretch(matrix, stretch).astype(np.float32)
    return stretched[np.newaxis, :, :], n_nan
