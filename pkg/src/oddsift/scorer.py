"""Streaming batch scorer: bounded-memory inference over shard files with
global top-K maintenance and full-score CSV export.

Scoring is embarrassingly parallel per shard: partials produced by
disjoint shard subsets merge into the same global top-K regardless of the
partitioning, because per-shard batching (and hence arithmetic) is
independent of which worker owns a shard.
"""

from __future__ import annotations

import heapq
import json
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np
import torch

from .backbone import CompactNet, ModelState, anomaly_scores, ema_module
from .errors import IntegrityError, OddsiftError
from .metrics import ScoreTable
from .shards import iter_shard, validate_shard


class _HeapItem:
    """Orders by 'worse first': lower score, then later id."""

    __slots__ = ("score", "id")

    def __init__(self, score: float, record_id: str):
        self.score = score
        self.id = record_id

    def __lt__(self, other: "_HeapItem") -> bool:
        if self.score != other.score:
            return self.score < other.score
        return self.id > other.id


class TopK:
    """Bounded keeper of the K best (score desc, id asc) entries."""

    def __init__(self, k: int):
        if k < 0:
            raise OddsiftError(f"k must be >= 0, got {k}")
        self.k = k
        self._heap: list[_HeapItem] = []

    def push(self, record_id: str, score: float) -> None:
        if self.k == 0:
            return
        item = _HeapItem(float(score), record_id)
        if len(self._heap) < self.k:
            heapq.heappush(self._heap, item)
        elif self._heap[0] < item:
            heapq.heapreplace(self._heap, item)

    def table(self) -> ScoreTable:
        return ScoreTable.from_rows([(item.id, item.score) for item in self._heap])


def _emit(stream: TextIO | None, event: dict) -> None:
    if stream is not None:
        stream.write(json.dumps(event, sort_keys=True) + "\n")
        stream.flush()


def score_stream(
    state: ModelState,
    shard_paths: Iterable[str | Path],
    batch_size: int = 256,
    k: int = 100,
    scores_csv: str | Path | None = None,
    skip_corrupt: bool = False,
    progress_stream: TextIO | None = None,
) -> ScoreTable:
    """Score every record in the given shards exactly once with the EMA model.

    Returns the global top-K table (equal to the first K rows of a full
    sort). Full scores are optionally streamed to ``scores_csv`` in shard
    order with 6-decimal formatting. Corrupt shards abort the job unless
    ``skip_corrupt`` is set, in which case they are reported and skipped.
    ``progress_stream`` (e.g. sys.stderr) receives JSON-line events.
    """
    net: CompactNet = ema_module(state)
    topk = TopK(k)
    seen: set[str] = set()
    n_scored = 0

    csv_fh = open(scores_csv, "w", encoding="utf-8", newline="") if scores_csv else None
    try:
        if csv_fh:
            csv_fh.write("id,score\n")
        for shard_path in shard_paths:
            shard_path = Path(shard_path)
            try:
                count, _, _, _ = validate_shard(shard_path)
            except OddsiftError as exc:
                if not skip_corrupt:
                    raise
                _emit(progress_stream, {"event": "shard_skipped", "shard": shard_path.name, "error": str(exc)})
                continue
            _emit(progress_stream, {"event": "shard_start", "shard": shard_path.name, "count": count})

            ids: list[str] = []
            pixels: list[np.ndarray] = []

            def flush():
                nonlocal n_scored
                if not ids:
                    return
                batch = np.stack(pixels).astype(np.float32) / 255.0
                x = torch.from_numpy(batch).to(memory_format=torch.channels_last)
                with torch.no_grad():
                    logits = net(x)
                for record_id, score in zip(ids, anomaly_scores(logits)):
                    topk.push(record_id, float(score))
                    if csv_fh:
                        csv_fh.write(f"{record_id},{score:.6f}\n")
                n_scored += len(ids)
                ids.clear()
                pixels.clear()

            for record_id, record_pixels in iter_shard(shard_path):
                if record_id in seen:
                    raise IntegrityError(f"id {record_id!r} appears in more than one shard")
                seen.add(record_id)
                ids.append(record_id)
                pixels.append(record_pixels)
                if len(ids) == batch_size:
                    flush()
            flush()
            _emit(progress_stream, {"event": "shard_done", "shard": shard_path.name, "scored": n_scored})
    finally:
        if csv_fh:
            csv_fh.close()
    _emit(progress_stream, {"event": "done", "scored": n_scored})
    return topk.table()


def merge_partials(partials: Iterable[ScoreTable], k: int | None = None) -> ScoreTable:
    """Merge disjoint partial top-K tables into the global top-K.

    The result is independent of partitioning and merge order; overlapping
    ids raise an integrity error.
    """
    rows: list[tuple] = []
    seen: set[str] = set()
    for table in partials:
        for record_id, score, gt in table.rows():
            if record_id in seen:
                raise IntegrityError(f"id {record_id!r} present in multiple partials")
            seen.add(record_id)
            rows.append((record_id, score, gt))
    merged = ScoreTable.from_rows(rows)
    if k is not None and len(merged) > k:
        merged = ScoreTable.from_rows(merged.rows()[:k])
    return merged
