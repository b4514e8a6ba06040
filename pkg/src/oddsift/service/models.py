"""Pydantic request/response models for the HTTP API."""

from __future__ import annotations

from pydantic import BaseModel, Field


class SessionSummary(BaseModel):
    cycle_index: int
    n_records: int
    n_labelled: int
    n_unlabelled: int
    n_normal_labels: int
    n_anomaly_labels: int
    training: bool
    train_progress: float = Field(ge=0.0, le=1.0)
    queued_labels: int
    config: dict


class Candidate(BaseModel):
    id: str
    score: float
    rank: int
    gt_label: int | None = None
    thumbnail_png_base64: str


class CandidatesResponse(BaseModel):
    candidates: list[Candidate]
    shortfall: bool


class LabelRequest(BaseModel):
    id: str
    label: int = Field(ge=0, le=1)


class LabelResponse(BaseModel):
    id: str
    label: int
    queued: bool
    n_labelled: int


class TrainRequest(BaseModel):
    iterations: int | None = Field(default=None, ge=1)


class TrainResponse(BaseModel):
    started: bool
    cycle_index: int
    iterations: int


class CycleMetrics(BaseModel):
    cycle: int
    report: dict


class MetricsResponse(BaseModel):
    latest: dict | None
    history: list[CycleMetrics]


class SaveRequest(BaseModel):
    path: str | None = None


class LoadRequest(BaseModel):
    path: str


class SessionPathResponse(BaseModel):
    path: str
    cycle_index: int


class ErrorDetail(BaseModel):
    detail: str
