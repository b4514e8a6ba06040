"""Active-learning session: rank the pool, surface candidates, ingest labels,
retrain, and persist everything.

A session directory holds ``config.json``, ``labels.csv``,
``checkpoint.amck``, ``scores.csv`` (current unlabelled ranking, descending)
and ``metrics_cycle_{k}.json``. Serialisation is canonical, so saving twice
produces byte-identical files.

Evaluation note: per-cycle metrics are computed over the *initial* unlabelled
pool (a snapshot taken at session creation), so anomalies confirmed during
active learning keep counting as discovered. Ranking for candidate selection
always covers exactly the current unlabelled split.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .augment import RandAugmentPolicy
from .backbone import (
    BackboneSpec,
    ModelState,
    anomaly_scores,
    ema_module,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .catalog import DatasetCatalog, LabelStore
from .errors import ContractError, MetricError, NotFoundError, TrainingError
from .metrics import MetricsReport, ScoreTable, evaluate
from .shards import ShardReader
from .trainer import TrainConfig, TrainLog, train_cycle

logger = logging.getLogger(__name__)

CONFIG_FILENAME = "config.json"
LABELS_FILENAME = "labels.csv"
CHECKPOINT_FILENAME = "checkpoint.amck"
SCORES_FILENAME = "scores.csv"


@dataclass
class CandidateSet:
    """Ranked labelling candidates: likely anomalies and likely false positives."""

    anomalies: list[str]
    false_positives: list[str]
    shortfall: bool = False


def select_candidates(table: ScoreTable, k: int = 10, benchmark: bool = True) -> CandidateSet:
    """Pick labelling candidates from a ranked unlabelled table.

    Benchmark mode walks the ranking and takes the first k ground-truth
    anomalies and the first k ground-truth normals (the high-scoring false
    positives). Interactive mode returns the top 2k rows unpartitioned in
    ``anomalies`` and leaves the truth to the user. A shortfall flag is set
    when fewer candidates exist than requested.
    """
    if k < 0:
        raise ContractError(f"k must be >= 0, got {k}")
    if k == 0:
        return CandidateSet([], [], False)
    if not benchmark:
        top = table.ids[: 2 * k]
        return CandidateSet(list(top), [], shortfall=len(top) < 2 * k)
    anomalies: list[str] = []
    false_positives: list[str] = []
    for record_id, _, gt in zip(table.ids, table.scores, table.gt):
        if gt == 1 and len(anomalies) < k:
            anomalies.append(record_id)
        elif gt == 0 and len(false_positives) < k:
            false_positives.append(record_id)
        if len(anomalies) == k and len(false_positives) == k:
            break
    shortfall = len(anomalies) < k or len(false_positives) < k
    return CandidateSet(anomalies, false_positives, shortfall)


class Session:
    """One active-learning run over a catalog + shard cache."""

    def __init__(
        self,
        directory: str | Path,
        catalog_path: str | Path,
        cache_dir: str | Path,
        catalog: DatasetCatalog,
        labels: LabelStore,
        state: ModelState,
        cfg: TrainConfig,
        cycle_index: int = 0,
        history: list[tuple[int, MetricsReport]] | None = None,
        score_table: ScoreTable | None = None,
        policy: RandAugmentPolicy | None = None,
        eval_ids: list[str] | None = None,
    ):
        self.directory = Path(directory)
        self.catalog_path = str(catalog_path)
        self.cache_dir = str(cache_dir)
        self.catalog = catalog
        self.labels = labels
        self.state = state
        self.cfg = cfg
        self.policy = policy or RandAugmentPolicy()
        self.cycle_index = cycle_index
        self.history = history or []
        self.score_table = score_table
        self.reader = ShardReader(cache_dir)
        # Evaluation snapshot: the unlabelled pool as it was before any
        # active-learning commits (reconstructed from the catalog file).
        self.eval_ids = list(eval_ids) if eval_ids is not None else list(catalog.unlabelled)

    # -- construction --------------------------------------------------

    @classmethod
    def create(
        cls,
        directory: str | Path,
        catalog_path: str | Path,
        cache_dir: str | Path,
        cfg: TrainConfig | None = None,
        spec: BackboneSpec | None = None,
        policy: RandAugmentPolicy | None = None,
    ) -> "Session":
        """Start a fresh session; seed labels come from the catalog's labelled
        split (each such record must carry gt_label)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        cfg = cfg or TrainConfig()
        catalog = DatasetCatalog.from_jsonl(catalog_path)
        reader = ShardReader(cache_dir)
        if spec is None:
            channels, height, width = reader.shape()
            spec = BackboneSpec(channels=channels, height=height, width=width)
        state = init_model(spec, seed=cfg.seed)
        labels = LabelStore()
        for record_id in catalog.labelled:
            record = catalog.get(record_id)
            if record.gt_label is None:
                raise ContractError(
                    f"seed-labelled record {record_id!r} has no gt_label to seed from"
                )
            labels.append(record_id, record.gt_label, "seed")
        session = cls(
            directory, catalog_path, cache_dir, catalog, labels, state, cfg, policy=policy
        )
        session.save()
        return session

    @classmethod
    def load(cls, directory: str | Path) -> "Session":
        directory = Path(directory)
        config_path = directory / CONFIG_FILENAME
        if not config_path.exists():
            raise NotFoundError(f"session config not found: {config_path}")
        config = json.loads(config_path.read_text())
        catalog = DatasetCatalog.from_jsonl(config["catalog_path"])
        initial_unlabelled = list(catalog.unlabelled)  # evaluation snapshot
        labels = LabelStore.load_csv(directory / LABELS_FILENAME)
        # Replay active labels onto the catalog splits.
        seed_labelled = set(catalog.labelled)
        to_move = [
            record_id
            for record_id in labels.active_labels()
            if record_id not in seed_labelled and record_id in set(catalog.unlabelled)
        ]
        if to_move:
            catalog.move_to_labelled(to_move)
        state, _ = load_checkpoint(directory / CHECKPOINT_FILENAME)
        cfg = TrainConfig.from_dict(config["train"])
        cycle_index = config["cycle_index"]
        history = []
        for metrics_path in sorted(directory.glob("metrics_cycle_*.json")):
            k = int(metrics_path.stem.rsplit("_", 1)[1])
            history.append((k, MetricsReport.from_dict(json.loads(metrics_path.read_text()))))
        history.sort(key=lambda pair: pair[0])
        score_table = None
        scores_path = directory / SCORES_FILENAME
        if scores_path.exists():
            loaded = ScoreTable.load_csv(scores_path)
            score_table = ScoreTable.from_rows(
                [
                    (record_id, score, catalog.get(record_id).gt_label)
                    for record_id, score, _ in loaded.rows()
                ]
            )
        augment = config.get("augment")
        policy = (
            RandAugmentPolicy(
                n_ops=augment["n_ops"],
                magnitude=augment["magnitude"],
                ops=tuple(augment["ops"]),
            )
            if augment
            else None
        )
        session = cls(
            directory,
            config["catalog_path"],
            config["cache_dir"],
            catalog,
            labels,
            state,
            cfg,
            cycle_index=cycle_index,
            history=history,
            score_table=score_table,
            policy=policy,
            eval_ids=initial_unlabelled,
        )
        return session

    def save(self) -> None:
        """Write the full session state; canonical, so repeat saves are byte-identical."""
        self.directory.mkdir(parents=True, exist_ok=True)
        config = {
            "catalog_path": self.catalog_path,
            "cache_dir": self.cache_dir,
            "cycle_index": self.cycle_index,
            "train": self.cfg.to_dict(),
            "backbone": self.state.spec.to_dict(),
            "augment": {
                "n_ops": self.policy.n_ops,
                "magnitude": self.policy.magnitude,
                "ops": list(self.policy.ops),
            },
        }
        (self.directory / CONFIG_FILENAME).write_text(
            json.dumps(config, sort_keys=True, separators=(",", ":")) + "\n"
        )
        self.labels.save_csv(self.directory / LABELS_FILENAME)
        save_checkpoint(self.state, self.directory / CHECKPOINT_FILENAME, self.cfg.to_dict())
        if self.score_table is not None:
            self.score_table.save_csv(self.directory / SCORES_FILENAME)
        for k, report in self.history:
            (self.directory / f"metrics_cycle_{k}.json").write_text(report.to_json() + "\n")

    # -- scoring -------------------------------------------------------

    def _score_ids(self, ids: list[str], batch_size: int = 256) -> ScoreTable:
        net = ema_module(self.state)
        rows: list[tuple] = []
        for start in range(0, len(ids), batch_size):
            chunk = ids[start : start + batch_size]
            batch = np.stack([self.reader.read_float(record_id) for record_id in chunk])
            x = torch.from_numpy(batch).to(memory_format=torch.channels_last)
            with torch.no_grad():
                logits = net(x)
            for record_id, score in zip(chunk, anomaly_scores(logits)):
                rows.append((record_id, float(score), self.catalog.get(record_id).gt_label))
        return ScoreTable.from_rows(rows)

    def rank_pool(self) -> ScoreTable:
        """Score the current unlabelled split with the EMA model, replacing the
        session's stored ranking."""
        if self.cycle_index == 0:
            logger.warning("ranking with an untrained model (no completed cycles)")
        self.score_table = self._score_ids(list(self.catalog.unlabelled))
        return self.score_table

    def rank_eval_pool(self) -> ScoreTable:
        """Score the evaluation snapshot (the initial unlabelled pool)."""
        return self._score_ids(list(self.eval_ids))

    def evaluate(self) -> MetricsReport:
        return evaluate(self.rank_eval_pool())

    # -- labelling -----------------------------------------------------

    def commit_labels(self, pairs: list[tuple[str, int]]) -> None:
        """Append labels with provenance ``cycle-{k}`` and move the ids out of
        the unlabelled pool, atomically."""
        unlabelled = set(self.catalog.unlabelled)
        to_move: list[str] = []
        for record_id, _ in pairs:
            if record_id not in self.catalog.records:
                raise NotFoundError(f"cannot label unknown id {record_id!r}")
            if record_id in unlabelled:
                to_move.append(record_id)
            else:
                logger.warning("superseding existing label for %r", record_id)
        provenance = f"cycle-{self.cycle_index}"
        for record_id, label in pairs:
            self.labels.append(record_id, label, provenance)
        if to_move:
            self.catalog.move_to_labelled(to_move)
        if self.score_table is not None and to_move:
            committed = set(to_move)
            remaining = [row for row in self.score_table.rows() if row[0] not in committed]
            self.score_table = ScoreTable.from_rows(remaining)

    # -- training ------------------------------------------------------

    def train_one_cycle(
        self,
        iterations: int | None = None,
        progress: Callable[[int, int], None] | None = None,
    ) -> TrainLog:
        """Run one training cycle; on a training abort the in-memory model is
        rolled back to the last saved checkpoint."""
        cfg = self.cfg
        if iterations is not None and iterations != cfg.iterations_per_cycle:
            d = cfg.to_dict()
            d["iterations_per_cycle"] = iterations
            cfg = TrainConfig.from_dict(d)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, self.cycle_index]))
        try:
            log = train_cycle(
                self.state,
                self.catalog,
                self.labels,
                cfg,
                rng,
                self.reader,
                policy=self.policy,
                progress=progress,
            )
        except TrainingError:
            checkpoint = self.directory / CHECKPOINT_FILENAME
            if checkpoint.exists():
                self.state, _ = load_checkpoint(checkpoint)
            raise
        self.cycle_index += 1
        log.save_csv(self.directory / f"train_log_cycle_{self.cycle_index}.csv")
        return log

    def run_post_cycle(self) -> MetricsReport | None:
        """After a cycle (and any queued label commits): re-rank the pool,
        evaluate when ground truth permits, and persist."""
        self.rank_pool()
        report = None
        try:
            report = self.evaluate()
            self.history.append((self.cycle_index, report))
        except MetricError:
            logger.info("skipping metrics: evaluation pool lacks two-class ground truth")
        self.save()
        return report

    def run_cycle(
        self,
        iterations: int | None = None,
        progress: Callable[[int, int], None] | None = None,
    ) -> MetricsReport | None:
        """Train, re-rank the pool, evaluate if ground truth permits, persist."""
        self.train_one_cycle(iterations, progress)
        return self.run_post_cycle()

    def run_simulated_protocol(
        self,
        cycles: int = 3,
        per_cycle_labels: int = 10,
        progress: Callable[[int, int], None] | None = None,
    ) -> list[MetricsReport]:
        """Benchmark protocol: per cycle train, evaluate on the fixed pool,
        then oracle-label the top candidates (k anomalies + k false positives).

        With cycles=0 the untrained model is evaluated once. Requires ground
        truth on every pool record.
        """
        for record_id in self.eval_ids:
            if self.catalog.get(record_id).gt_label is None:
                raise ContractError(
                    f"simulated protocol needs gt_label on every pool record; {record_id!r} has none"
                )
        if cycles == 0:
            report = self.evaluate()
            self.history.append((self.cycle_index, report))
            self.save()
            return [report]
        reports: list[MetricsReport] = []
        for cycle in range(cycles):
            self.train_one_cycle(progress=progress)
            report = self.evaluate()
            self.history.append((self.cycle_index, report))
            reports.append(report)
            pool_table = self.rank_pool()
            candidates = select_candidates(pool_table, k=per_cycle_labels, benchmark=True)
            if candidates.shortfall:
                logger.info(
                    "cycle %d: candidate shortfall (%d anomalies, %d false positives)",
                    cycle + 1,
                    len(candidates.anomalies),
                    len(candidates.false_positives),
                )
            pairs = [(record_id, 1) for record_id in candidates.anomalies]
            pairs += [(record_id, 0) for record_id in candidates.false_positives]
            if pairs:
                self.commit_labels(pairs)
        self.save()
        return reports

    # -- introspection ---------------------------------------------------

    def summary(self) -> dict:
        n_normal, n_anomaly = self.labels.class_counts()
        return {
            "cycle_index": self.cycle_index,
            "n_records": len(self.catalog),
            "n_labelled": len(self.catalog.labelled),
            "n_unlabelled": len(self.catalog.unlabelled),
            "n_normal_labels": n_normal,
            "n_anomaly_labels": n_anomaly,
            "config": self.cfg.to_dict(),
        }
