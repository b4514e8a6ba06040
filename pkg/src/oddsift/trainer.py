"""Semi-supervised training loop: class-balanced labelled batches, weak/strong
unlabelled views, confidence-masked pseudo-label loss.

Each step draws ``batch_size`` labelled images (inverse-frequency weighted,
so both classes are equally likely regardless of prevalence) and
``unlabelled_ratio * batch_size`` pool images. Pseudo-labels come from a
side-effect-free forward of the weakly augmented views; the labelled and
strongly-augmented views then share one gradient forward (one norm batch),
and samples whose tempered confidence reaches ``tau`` contribute a
cross-entropy term against their strong view. The step loss is
``L = L_sup + lambda_unsup * L_unsup``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .augment import RandAugmentPolicy, strong_augment, weak_augment
from .backbone import (
    ModelState,
    OptimiserConfig,
    backward,
    ema_update,
    forward,
    forward_nostats,
    sgd_step,
)
from .catalog import DatasetCatalog, LabelStore
from .errors import ConfigError, SamplerError, TrainingError
from .shards import ShardReader


@dataclass
class TrainConfig:
    """All training hyperparameters; defaults follow the evaluated setup."""

    tau: float = 0.95
    lambda_unsup: float = 1.0
    temperature: float = 0.5
    batch_size: int = 16
    unlabelled_ratio: int = 7
    iterations_per_cycle: int = 100
    pool_size: int = 10000
    optimiser: OptimiserConfig = field(default_factory=OptimiserConfig)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ConfigError(f"tau must be in (0, 1], got {self.tau}")
        if self.lambda_unsup < 0:
            raise ConfigError(f"lambda_unsup must be >= 0, got {self.lambda_unsup}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.batch_size < 1 or self.unlabelled_ratio < 1:
            raise ConfigError("batch_size and unlabelled_ratio must be >= 1")
        if self.iterations_per_cycle < 0 or self.pool_size < 1:
            raise ConfigError("iterations_per_cycle must be >= 0 and pool_size >= 1")

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "lambda_unsup": self.lambda_unsup,
            "temperature": self.temperature,
            "batch_size": self.batch_size,
            "unlabelled_ratio": self.unlabelled_ratio,
            "iterations_per_cycle": self.iterations_per_cycle,
            "pool_size": self.pool_size,
            "optimiser": self.optimiser.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        opt = d.pop("optimiser", None)
        return cls(optimiser=OptimiserConfig.from_dict(opt) if opt else OptimiserConfig(), **d)


@dataclass
class BatchPlan:
    """Ids drawn for one step: class-balanced labelled + uniform unlabelled."""

    labelled_ids: list[str]
    unlabelled_ids: list[str]


@dataclass
class StepRecord:
    step: int
    l_sup: float
    l_unsup: float
    mask_rate: float
    loss: float  # not persisted; lets tests check the loss decomposition


class TrainLog:
    """Per-step training record, exported as CSV (step,l_sup,l_unsup,mask_rate)."""

    def __init__(self):
        self.steps: list[StepRecord] = []

    def append(self, record: StepRecord) -> None:
        self.steps.append(record)

    def __len__(self) -> int:
        return len(self.steps)

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "l_sup", "l_unsup", "mask_rate"])
            for r in self.steps:
                writer.writerow([r.step, f"{r.l_sup:.8f}", f"{r.l_unsup:.8f}", f"{r.mask_rate:.6f}"])


def weighted_sample_labelled(
    labels: LabelStore | dict[str, int], n: int, rng: np.random.Generator
) -> list[str]:
    """Draw n labelled ids with replacement, class-balanced.

    Per-draw probability of an id in class c is 0.5 / count(c), so the
    expected anomaly fraction is 0.5 regardless of prevalence.
    """
    active = labels.active_labels() if isinstance(labels, LabelStore) else labels
    ids = sorted(active)
    values = np.array([active[i] for i in ids], dtype=np.int64)
    n_normal = int((values == 0).sum())
    n_anomaly = int((values == 1).sum())
    if n_normal == 0 or n_anomaly == 0:
        missing = "normal (label 0)" if n_normal == 0 else "anomaly (label 1)"
        raise SamplerError(
            f"balanced sampling needs both classes labelled; please label at least one {missing} image"
        )
    weights = np.where(values == 1, 0.5 / n_anomaly, 0.5 / n_normal)
    drawn = rng.choice(len(ids), size=n, replace=True, p=weights)
    return [ids[i] for i in drawn]


def supervised_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean 2-class cross-entropy over the batch."""
    return F.cross_entropy(logits, labels)


def unsupervised_loss(
    weak_logits: torch.Tensor, strong_logits: torch.Tensor, tau: float, temperature: float
) -> tuple[torch.Tensor, float]:
    """Confidence-masked consistency loss.

    Pseudo-labels are the argmax of the tempered weak-view softmax
    ``q = softmax(weak / T)``; samples with ``max(q) >= tau`` contribute
    cross-entropy against the strong view, averaged over the whole batch.
    No gradient flows through the weak logits.
    """
    with torch.no_grad():
        q = F.softmax(weak_logits.detach() / temperature, dim=1)
        confidence, pseudo = q.max(dim=1)
        mask = (confidence >= tau).to(strong_logits.dtype)
    per_sample = F.cross_entropy(strong_logits, pseudo, reduction="none")
    loss = (per_sample * mask).mean() if len(mask) else strong_logits.sum() * 0.0
    return loss, float(mask.mean().item()) if len(mask) else 0.0


def plan_batch(
    labels: LabelStore | dict[str, int],
    pool: list[str],
    cfg: TrainConfig,
    rng_labelled: np.random.Generator,
    rng_unlabelled: np.random.Generator,
) -> BatchPlan:
    labelled = weighted_sample_labelled(labels, cfg.batch_size, rng_labelled)
    n_unlabelled = cfg.unlabelled_ratio * cfg.batch_size
    replace = len(pool) < n_unlabelled
    drawn = rng_unlabelled.choice(len(pool), size=n_unlabelled, replace=replace)
    return BatchPlan(labelled_ids=labelled, unlabelled_ids=[pool[i] for i in drawn])


def draw_pool(unlabelled: list[str], pool_size: int, rng: np.random.Generator) -> list[str]:
    """Fresh uniform pool of at most pool_size ids from the unlabelled split."""
    if len(unlabelled) <= pool_size:
        return list(unlabelled)
    drawn = rng.choice(len(unlabelled), size=pool_size, replace=False)
    return [unlabelled[i] for i in drawn]


class _ImageBank:
    """In-memory float [0,1] pixel bank for the ids touched by one cycle."""

    def __init__(self, reader: ShardReader, ids: set[str]):
        self._images = {record_id: reader.read_float(record_id) for record_id in ids}

    def get(self, record_id: str) -> np.ndarray:
        return self._images[record_id]


def train_cycle(
    state: ModelState,
    catalog: DatasetCatalog,
    labels: LabelStore,
    cfg: TrainConfig,
    rng: np.random.Generator,
    reader: ShardReader,
    policy: RandAugmentPolicy | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> TrainLog:
    """Run ``iterations_per_cycle`` combined-objective steps; returns the log.

    The labelled stream (ids + augmentation draws) and the unlabelled stream
    consume independent child generators, so with ``lambda_unsup == 0`` the
    parameter trajectory does not depend on the unlabelled data at all.
    """
    policy = policy or RandAugmentPolicy()
    rng_lab, rng_unlab = rng.spawn(2)
    active = labels.active_labels()

    pool = draw_pool(catalog.unlabelled, cfg.pool_size, rng_unlab)
    if not pool:
        raise TrainingError("unlabelled pool is empty")
    bank = _ImageBank(reader, set(pool) | set(active))

    log = TrainLog()
    for step in range(cfg.iterations_per_cycle):
        plan = plan_batch(active, pool, cfg, rng_lab, rng_unlab)

        x_lab = np.stack([weak_augment(bank.get(i), rng_lab) for i in plan.labelled_ids])
        y_lab = torch.tensor([active[i] for i in plan.labelled_ids], dtype=torch.long)
        unl = [bank.get(i) for i in plan.unlabelled_ids]
        x_weak = np.stack([weak_augment(img, rng_unlab) for img in unl])
        x_strong = np.stack([strong_augment(img, policy, rng_unlab) for img in unl])

        # Pseudo-labels first: a side-effect-free forward, so the gradient
        # graph built afterwards never sees mutated norm buffers.
        weak_logits = forward_nostats(state, x_weak)

        if cfg.lambda_unsup > 0:
            n_lab = len(x_lab)
            logits = forward(state, np.concatenate([x_lab, x_strong]), train_mode=True)
            l_sup = supervised_loss(logits[:n_lab], y_lab)
            l_unsup, mask_rate = unsupervised_loss(
                weak_logits, logits[n_lab:], cfg.tau, cfg.temperature
            )
            loss = l_sup + cfg.lambda_unsup * l_unsup
        else:
            # Supervised-only objective; the consistency term is still
            # evaluated (without side effects) so the log stays comparable.
            strong_logits = forward_nostats(state, x_strong)
            l_unsup, mask_rate = unsupervised_loss(
                weak_logits, strong_logits, cfg.tau, cfg.temperature
            )
            logits_lab = forward(state, x_lab, train_mode=True)
            l_sup = supervised_loss(logits_lab, y_lab)
            loss = l_sup

        if not torch.isfinite(loss):
            raise TrainingError(
                f"non-finite loss at step {step}: l_sup={float(l_sup)}, l_unsup={float(l_unsup)}"
            )
        grads = backward(state, loss)
        sgd_step(state, grads, cfg.optimiser)
        ema_update(state, cfg.optimiser)

        log.append(
            StepRecord(
                step=step,
                l_sup=float(l_sup.detach()),
                l_unsup=float(l_unsup.detach()),
                mask_rate=mask_rate,
                loss=float(loss.detach()),
            )
        )
        if progress is not None:
            progress(step + 1, cfg.iterations_per_cycle)
    return log
