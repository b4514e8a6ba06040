"""Ranking metrics: AUROC, AUPRC, efficiency/precision at top-p%, and the
rank-comparison analyses.

Scores live in a :class:`ScoreTable`, always sorted by descending score with
ties broken by ascending id so that every ranking in the system is
deterministic. AUROC uses the rank statistic with average ranks for ties
(equal to the ROC integral); AUPRC is the step-sum average precision over
distinct thresholds (no interpolation).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError, MetricError, NotFoundError, ParseError

DEFAULT_EFFICIENCY_GRID = (0.1, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0, 25.0, 50.0, 100.0)
PRECISION_REPORT_PERCENTS = (0.1, 1.0)


class ScoreTable:
    """Per-image anomaly scores with optional ground truth, rank-ordered."""

    def __init__(self, ids: list[str], scores: np.ndarray, gt: np.ndarray):
        """Use :meth:`from_rows`; this constructor assumes pre-sorted input."""
        self.ids = ids
        self.scores = scores
        self.gt = gt  # -1 where unknown

    @classmethod
    def from_rows(cls, rows: list[tuple]) -> "ScoreTable":
        """Build from (id, score) or (id, score, gt_label) tuples."""
        seen = set()
        for row in rows:
            if row[0] in seen:
                raise ContractError(f"duplicate id {row[0]!r} in score table")
            seen.add(row[0])
        order = sorted(rows, key=lambda r: (-float(r[1]), r[0]))
        ids = [r[0] for r in order]
        scores = np.array([float(r[1]) for r in order], dtype=np.float64)
        gt = np.array(
            [int(r[2]) if len(r) > 2 and r[2] is not None else -1 for r in order],
            dtype=np.int64,
        )
        return cls(ids, scores, gt)

    def __len__(self) -> int:
        return len(self.ids)

    def rank_of(self, record_id: str) -> int:
        try:
            return self.ids.index(record_id)
        except ValueError:
            raise NotFoundError(f"id {record_id!r} not in score table") from None

    def rows(self) -> list[tuple[str, float, int | None]]:
        return [
            (i, float(s), None if g < 0 else int(g))
            for i, s, g in zip(self.ids, self.scores, self.gt)
        ]

    def n_anomalies(self) -> int:
        return int((self.gt == 1).sum())

    def save_csv(self, path: str | Path, include_gt: bool = False) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            if include_gt:
                writer.writerow(["id", "score", "gt_label"])
                for i, s, g in zip(self.ids, self.scores, self.gt):
                    writer.writerow([i, f"{s:.6f}", "" if g < 0 else int(g)])
            else:
                writer.writerow(["id", "score"])
                for i, s in zip(self.ids, self.scores):
                    writer.writerow([i, f"{s:.6f}"])

    @classmethod
    def load_csv(cls, path: str | Path) -> "ScoreTable":
        path = Path(path)
        if not path.exists():
            raise NotFoundError(f"scores file not found: {path}")
        rows: list[tuple] = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[0] != "id" or header[1] != "score":
                raise ParseError(f"bad scores header: {header}", line=1)
            has_gt = len(header) > 2 and header[2] == "gt_label"
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    score = float(row[1])
                except (IndexError, ValueError) as exc:
                    raise ParseError(f"bad score row {row!r}", line=lineno) from exc
                gt = None
                if has_gt and len(row) > 2 and row[2] != "":
                    gt = int(row[2])
                rows.append((row[0], score, gt))
        return cls.from_rows(rows)


def _require_gt(table: ScoreTable) -> tuple[np.ndarray, np.ndarray]:
    known = table.gt >= 0
    if not known.any():
        raise MetricError("score table has no ground-truth labels")
    return table.scores[known], table.gt[known]


def auroc(table: ScoreTable) -> float:
    """Area under the ROC curve via the rank statistic (average ranks on ties)."""
    scores, gt = _require_gt(table)
    n_pos = int((gt == 1).sum())
    n_neg = int((gt == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"AUROC undefined: {n_pos} positives, {n_neg} negatives")
    ranks = rankdata(scores, method="average")
    u = ranks[gt == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(table: ScoreTable) -> float:
    """Average precision as the step sum over descending distinct thresholds."""
    scores, gt = _require_gt(table)
    n_pos = int((gt == 1).sum())
    if n_pos == 0:
        raise MetricError("AUPRC undefined: no positives")
    order = np.argsort(-scores, kind="stable")
    scores, gt = scores[order], gt[order]
    # Threshold group boundaries: indices where the score changes.
    boundary = np.nonzero(np.diff(scores))[0]
    cut = np.concatenate([boundary, [len(scores) - 1]])
    tp = np.cumsum(gt == 1)[cut].astype(np.float64)
    n_pred = cut + 1.0
    precision = tp / n_pred
    recall = tp / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_recall) * precision).sum())


def _top_count(n: int, p: float) -> int:
    if not 0 < p <= 100:
        raise MetricError(f"p must be in (0, 100], got {p}")
    return min(n, math.ceil(p / 100.0 * n))


def efficiency_at(table: ScoreTable, p: float) -> float:
    """Percent of all anomalies found within the top p% of rows."""
    n = len(table)
    m = _top_count(n, p)
    total = table.n_anomalies()
    if total == 0:
        raise MetricError("efficiency undefined: no anomalies in table")
    found = int((table.gt[:m] == 1).sum())
    return 100.0 * found / total


def precision_at_top(table: ScoreTable, p: float) -> float:
    """Percent of the top p% rows that are anomalies."""
    n = len(table)
    m = _top_count(n, p)
    found = int((table.gt[:m] == 1).sum())
    return 100.0 * found / m


def efficiency_curve(table: ScoreTable, grid: tuple = DEFAULT_EFFICIENCY_GRID) -> list[list[float]]:
    return [[float(p), efficiency_at(table, p)] for p in grid]


def rank_difference(
    table_a: ScoreTable, table_b: ScoreTable, bins: int = 20
) -> tuple[dict[str, int], np.ndarray, np.ndarray]:
    """Signed per-id rank deltas (rank_a - rank_b) plus their histogram.

    Returns (deltas, bin_edges, counts). Raises on id mismatch, listing the
    missing ids.
    """
    ids_a, ids_b = set(table_a.ids), set(table_b.ids)
    if ids_a != ids_b:
        missing_a = sorted(ids_b - ids_a)[:10]
        missing_b = sorted(ids_a - ids_b)[:10]
        raise ContractError(
            f"rank tables disagree: missing from a={missing_a}, missing from b={missing_b}"
        )
    rank_b = {record_id: i for i, record_id in enumerate(table_b.ids)}
    deltas = {record_id: i - rank_b[record_id] for i, record_id in enumerate(table_a.ids)}
    values = np.array(list(deltas.values()), dtype=np.float64)
    n = len(table_a)
    counts, edges = np.histogram(values, bins=bins, range=(-(n - 1), n - 1) if n > 1 else (-1, 1))
    return deltas, edges, counts


def score_histogram(
    table: ScoreTable, bins: int = 20
) -> dict[str, np.ndarray]:
    """Per-class histograms of scores over [0, 1]; keys 'normal'/'anomaly'/'unknown'."""
    if bins < 1:
        raise MetricError(f"bins must be >= 1, got {bins}")
    edges = np.linspace(0.0, 1.0, bins + 1)
    out: dict[str, np.ndarray] = {"edges": edges}
    for name, value in (("normal", 0), ("anomaly", 1), ("unknown", -1)):
        counts, _ = np.histogram(table.scores[table.gt == value], bins=edges)
        out[name] = counts
    return out


@dataclass
class MetricsReport:
    """Evaluation summary for one score table."""

    auroc: float
    auprc: float
    efficiency: list[list[float]] = field(default_factory=list)  # [p, percent] pairs
    precision_at: dict[str, float] = field(default_factory=dict)  # percent -> percent
    n_anomalies: int = 0
    n_total: int = 0

    def efficiency_at(self, p: float) -> float:
        for grid_p, value in self.efficiency:
            if grid_p == p:
                return value
        raise MetricError(f"p={p} not on the report's efficiency grid")

    def to_dict(self) -> dict:
        return {
            "auroc": self.auroc,
            "auprc": self.auprc,
            "efficiency": self.efficiency,
            "precision_at": self.precision_at,
            "n_anomalies": self.n_anomalies,
            "n_total": self.n_total,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            auroc=d["auroc"],
            auprc=d["auprc"],
            efficiency=[list(pair) for pair in d["efficiency"]],
            precision_at=dict(d["precision_at"]),
            n_anomalies=d["n_anomalies"],
            n_total=d["n_total"],
        )

    def save_curve_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["p", "efficiency"])
            for p, value in self.efficiency:
                writer.writerow([f"{p:g}", f"{value:.6f}"])


def evaluate(table: ScoreTable, grid: tuple = DEFAULT_EFFICIENCY_GRID) -> MetricsReport:
    """Compute the full MetricsReport for a ground-truthed score table."""
    return MetricsReport(
        auroc=auroc(table),
        auprc=auprc(table),
        efficiency=efficiency_curve(table, grid),
        precision_at={f"{p:g}": precision_at_top(table, p) for p in PRECISION_REPORT_PERCENTS},
        n_anomalies=table.n_anomalies(),
        n_total=len(table),
    )
