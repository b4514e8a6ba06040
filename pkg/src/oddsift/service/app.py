"""HTTP facade over an active-learning session.

One session per process; request handling is concurrent, but all session
mutations funnel through a controller that serialises writers and admits at
most one training cycle at a time (a second train request gets 409).
Labels submitted while training runs are queued and committed at the cycle
boundary.
"""

from __future__ import annotations

import base64
import io
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image

from ..augment import smooth3
from ..errors import NotFoundError, OddsiftError
from ..session import Session
from ..stretch import StretchSpec, apply_stretch
from . import models

DISPLAY_STRETCHES = ("none", "linear-minmax", "log", "asinh", "zscale-like", "linear", "zscale")


def render_adjusted(
    pixels: np.ndarray,
    brightness: float = 0.0,
    contrast: float = 1.0,
    unsharp: float = 0.0,
    stretch: str = "none",
) -> np.ndarray:
    """Display transform: optional re-stretch, then contrast/brightness
    ``clamp(c*(v-0.5)+0.5+b)``, then unsharp ``clamp(v + u*(v-gauss3(v)))``."""
    v = np.asarray(pixels, dtype=np.float32)
    if stretch != "none":
        v = apply_stretch(v, StretchSpec(kind=stretch))
    v = np.clip(contrast * (v - 0.5) + 0.5 + brightness, 0.0, 1.0)
    if unsharp != 0.0:
        v = np.clip(v + unsharp * (v - smooth3(v)), 0.0, 1.0)
    return v


def encode_png(pixels: np.ndarray) -> bytes:
    """Deterministic PNG encoding of a (C, H, W) float [0,1] tensor."""
    u8 = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    if u8.shape[0] == 1:
        img = Image.fromarray(u8[0], mode="L")
    else:
        img = Image.fromarray(u8.transpose(1, 2, 0), mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


class SessionController:
    """Serialises session mutation and owns the single training slot."""

    def __init__(self, session: Session):
        self.session = session
        self.mutate_lock = threading.RLock()
        self._train_slot = threading.Lock()
        self._thread: threading.Thread | None = None
        self.train_progress = 0.0
        self.train_error: str | None = None
        self.queued: list[tuple[str, int]] = []

    @property
    def training(self) -> bool:
        return self._train_slot.locked()

    def submit_label(self, record_id: str, label: int) -> bool:
        """Commit now, or queue if a cycle is running. Returns queued flag."""
        with self.mutate_lock:
            if self.training:
                self.queued.append((record_id, label))
                return True
            self.session.commit_labels([(record_id, label)])
            return False

    def start_training(self, iterations: int) -> bool:
        """Try to start one cycle in the background; False if already training."""
        if not self._train_slot.acquire(blocking=False):
            return False
        self.train_progress = 0.0
        self.train_error = None

        def progress(step: int, total: int) -> None:
            self.train_progress = step / total

        def run() -> None:
            try:
                self.session.train_one_cycle(iterations, progress)
                with self.mutate_lock:
                    if self.queued:
                        self.session.commit_labels(self.queued)
                        self.queued = []
                self.session.run_post_cycle()
            except OddsiftError as exc:
                self.train_error = str(exc)
            finally:
                self._train_slot.release()

        self._thread = threading.Thread(target=run, daemon=True)
        self._thread.start()
        return True

    def wait(self, timeout: float | None = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)


def create_app(session: Session, frontend_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="oddsift", version="0.1.0")
    controller = SessionController(session)
    app.state.controller = controller

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        # Spec'd contract: malformed bodies/params answer 400 with diagnostics.
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.exception_handler(NotFoundError)
    async def not_found_handler(request: Request, exc: NotFoundError):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(OddsiftError)
    async def domain_handler(request: Request, exc: OddsiftError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    def current() -> Session:
        return controller.session

    @app.get("/api/session", response_model=models.SessionSummary)
    def get_session() -> models.SessionSummary:
        summary = current().summary()
        return models.SessionSummary(
            training=controller.training,
            train_progress=controller.train_progress,
            queued_labels=len(controller.queued),
            **summary,
        )

    @app.get("/api/candidates", response_model=models.CandidatesResponse)
    def get_candidates(count: int = Query(default=20, ge=1, le=500)) -> models.CandidatesResponse:
        session = current()
        table = session.score_table
        if table is None:
            if controller.training:
                # No ranking yet and the model is mid-cycle: report an empty
                # (shortfall) set instead of racing the training thread.
                return models.CandidatesResponse(candidates=[], shortfall=True)
            table = session.rank_pool()
        items = []
        for rank, (record_id, score, gt) in enumerate(table.rows()[:count]):
            pixels = session.reader.read_float(record_id)
            items.append(
                models.Candidate(
                    id=record_id,
                    score=score,
                    rank=rank,
                    gt_label=gt,
                    thumbnail_png_base64=base64.b64encode(encode_png(pixels)).decode("ascii"),
                )
            )
        return models.CandidatesResponse(candidates=items, shortfall=len(items) < count)

    @app.get("/api/image/{record_id}")
    def get_image(
        record_id: str,
        brightness: float = Query(default=0.0, ge=-1.0, le=1.0),
        contrast: float = Query(default=1.0, ge=0.0, le=3.0),
        unsharp: float = Query(default=0.0, ge=0.0, le=2.0),
        stretch: str = Query(default="none"),
    ) -> Response:
        if stretch not in DISPLAY_STRETCHES:
            return JSONResponse(
                status_code=400,
                content={"detail": f"stretch must be one of {DISPLAY_STRETCHES}"},
            )
        pixels = current().reader.read_float(record_id)
        rendered = render_adjusted(pixels, brightness, contrast, unsharp, stretch)
        return Response(content=encode_png(rendered), media_type="image/png")

    @app.post("/api/labels", response_model=models.LabelResponse)
    def post_label(body: models.LabelRequest) -> models.LabelResponse:
        queued = controller.submit_label(body.id, body.label)
        return models.LabelResponse(
            id=body.id,
            label=body.label,
            queued=queued,
            n_labelled=len(current().catalog.labelled),
        )

    @app.post("/api/train", response_model=models.TrainResponse, status_code=202)
    def post_train(body: models.TrainRequest | None = None) -> models.TrainResponse:
        session = current()
        iterations = (body.iterations if body else None) or session.cfg.iterations_per_cycle
        if not controller.start_training(iterations):
            return JSONResponse(status_code=409, content={"detail": "a training cycle is already running"})
        return models.TrainResponse(started=True, cycle_index=session.cycle_index, iterations=iterations)

    @app.get("/api/metrics", response_model=models.MetricsResponse)
    def get_metrics() -> models.MetricsResponse:
        history = [
            models.CycleMetrics(cycle=cycle, report=report.to_dict())
            for cycle, report in current().history
        ]
        latest = history[-1].report if history else None
        return models.MetricsResponse(latest=latest, history=history)

    @app.post("/api/session/save", response_model=models.SessionPathResponse)
    def post_save(body: models.SaveRequest | None = None) -> models.SessionPathResponse:
        session = current()
        with controller.mutate_lock:
            if body and body.path:
                session.directory = Path(body.path)
            session.save()
        return models.SessionPathResponse(
            path=str(session.directory), cycle_index=session.cycle_index
        )

    @app.post("/api/session/load", response_model=models.SessionPathResponse)
    def post_load(body: models.LoadRequest) -> models.SessionPathResponse:
        if controller.training:
            return JSONResponse(status_code=409, content={"detail": "cannot load while training"})
        with controller.mutate_lock:
            controller.session = Session.load(body.path)
        return models.SessionPathResponse(
            path=str(controller.session.directory), cycle_index=controller.session.cycle_index
        )

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="ui")

    return app
