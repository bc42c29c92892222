"""Local HTTP service: design inference plus on-demand raytrace evaluation.

Models load once at startup and are read-only afterwards; inference runs on
the request thread (microseconds) and never queues behind traces. Trace jobs
go through a bounded slot pool: when every slot is taken the request gets
503 instead of piling up, keeping the interactive path responsive. Identical
requests (same seed) produce identical responses.

Configuration comes from build_app arguments or the environment:
LUMENFORGE_ADDR, LUMENFORGE_MODELS (comma-separated model files),
LUMENFORGE_MAX_RAYS.
"""

from __future__ import annotations

import math
import os
import threading
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import SCHEMA_VERSION, __version__
from .designgen import TRAINING_BOX
from .optics import OffsetTarget, RectTarget, Scenario, evaluate_design
from .shsurface import InvalidSurfaceError, radius_and_gradients, validate_surface
from .surrogate import MlpModel, forward, infer_design, load_model

PROFILE_SAMPLES = 64
PROFILE_AZIMUTHS_DEG = (0.0, 45.0, 90.0)


class EvaluateSpec(BaseModel):
    rays: int = Field(default=200_000, ge=1)
    seed: int = 0


class DesignRequest(BaseModel):
    scenario: str
    params: dict[str, float]
    evaluate: EvaluateSpec | None = None
    include_profile: bool = False


def _canonical_params(scenario_kind: str, params: dict[str, float]) -> dict[str, float]:
    aliases = {
        "reflector_offset": {"x": "x_off", "x_off": "x_off", "y": "y_off", "y_off": "y_off"},
        "lens_rect": {"w": "width", "width": "width", "h": "height", "height": "height",
                      "d": "distance", "distance": "distance"},
    }[scenario_kind]
    out: dict[str, float] = {}
    for key, value in params.items():
        name = aliases.get(key.lower())
        if name is None:
            raise ValueError(f"unknown parameter {key!r}")
        if not math.isfinite(value):
            raise ValueError(f"parameter {key!r} must be finite")
        out[name] = float(value)
    needed = set(TRAINING_BOX[scenario_kind])
    if set(out) != needed:
        raise ValueError(f"need exactly parameters {sorted(needed)}")
    return out


def _surface_profile(surface, scenario_kind: str) -> list[dict]:
    scenario = Scenario.preset(scenario_kind)
    theta = np.linspace(0.0, scenario.cone_half_angle, PROFILE_SAMPLES)
    profiles = []
    for phi_deg in PROFILE_AZIMUTHS_DEG:
        phi = np.full_like(theta, math.radians(phi_deg))
        r, _, _ = radius_and_gradients(surface.coeffs.values, theta, phi)
        profiles.append({
            "phi_deg": phi_deg,
            "theta_rad": [float(t) for t in theta],
            "r_mm": [float(v) for v in r],
        })
    return profiles


class _TraceGate:
    """Bounded slot pool for trace jobs; full pool means 503, not queueing."""

    def __init__(self, slots: int):
        self._sem = threading.Semaphore(slots)

    def try_acquire(self) -> bool:
        return self._sem.acquire(blocking=False)

    def release(self) -> None:
        self._sem.release()


def build_app(model_paths: list[str] | None = None, max_rays: int | None = None,
              ui_dir: str | None = None, trace_workers: int = 0) -> FastAPI:
    if model_paths is None:
        env = os.environ.get("LUMENFORGE_MODELS", "")
        model_paths = [p for p in env.split(",") if p]
    if max_rays is None:
        max_rays = int(os.environ.get("LUMENFORGE_MAX_RAYS", "500000"))
    if trace_workers <= 0:
        trace_workers = max(1, (os.cpu_count() or 2) - 1)

    models: dict[str, MlpModel] = {}
    for path in model_paths:
        model = load_model(path)
        models[model.scenario] = model
        # warm the numeric path so the first request's timing is honest
        mid = np.array([(lo + hi) / 2 for lo, hi in
                        zip(model.input_norm.lo, model.input_norm.hi)])
        forward(model, mid)

    gate = _TraceGate(slots=2 * trace_workers)
    app = FastAPI(title="lumenforge", version=__version__)

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "version": __version__, "schema": SCHEMA_VERSION}

    @app.get("/api/v1/scenarios")
    def scenarios():
        entries = []
        for kind, model in sorted(models.items()):
            scenario = Scenario.preset(kind)
            entries.append({
                "scenario": kind,
                "topology": model.topology,
                "grid_n": scenario.grid_n,
                "kernel_px": scenario.kernel_px,
                "training_box": {k: list(v) for k, v in TRAINING_BOX[kind].items()},
                "params": list(TRAINING_BOX[kind]),
            })
        return entries

    @app.post("/api/v1/design")
    def design(req: DesignRequest):
        model = models.get(req.scenario)
        if model is None:
            return JSONResponse(status_code=404,
                                content={"detail": f"no model for scenario {req.scenario!r}"})
        try:
            params = _canonical_params(req.scenario, req.params)
            if req.scenario == "lens_rect" and (
                params["width"] <= 0 or params["height"] <= 0 or params["distance"] <= 0
            ):
                raise ValueError("width, height, and distance must be positive")
        except ValueError as exc:
            return JSONResponse(status_code=400, content={"detail": str(exc)})

        target = (OffsetTarget(params["x_off"], params["y_off"])
                  if req.scenario == "reflector_offset"
                  else RectTarget(params["width"], params["height"], params["distance"]))

        # the reported time covers the learned map itself (forward pass and
        # coefficient unpack); the positive-radius validation runs after
        t0 = time.perf_counter()
        surface = infer_design(model, target, validate=False)
        inference_ms = (time.perf_counter() - t0) * 1000.0
        try:
            validate_surface(surface, Scenario.preset(req.scenario).cone_half_angle)
        except InvalidSurfaceError as exc:
            return JSONResponse(status_code=400,
                                content={"detail": f"inferred surface invalid: {exc}"})

        box = TRAINING_BOX[req.scenario]
        extrapolating = any(not (box[k][0] <= v <= box[k][1]) for k, v in params.items())
        body = {
            "surface": surface.to_dict(),
            "inference_time_ms": inference_ms,
            "trace_time_ms": 0.0,
            "extrapolation": extrapolating,
        }
        if req.include_profile:
            body["profile"] = _surface_profile(surface, req.scenario)

        if req.evaluate is not None:
            if not gate.try_acquire():
                return JSONResponse(status_code=503,
                                    content={"detail": "trace queue full, retry later"})
            try:
                rays = min(req.evaluate.rays, max_rays)
                scenario = Scenario.preset(req.scenario)
                t1 = time.perf_counter()
                res = evaluate_design(scenario, surface, target, n_rays=rays,
                                      seed=req.evaluate.seed)
                body["trace_time_ms"] = (time.perf_counter() - t1) * 1000.0
                body["nonuniformity_pct"] = res.nonuniformity_pct
                body["spill_fraction"] = res.stats.spill_fraction
                body["rays"] = rays
                body["irradiance"] = {
                    "grid": res.smoothed.grid.tolist(),
                    "extent_mm": list(res.smoothed.extent),
                }
            finally:
                gate.release()
        return body

    static_dir = ui_dir or os.environ.get("LUMENFORGE_UI_DIR")
    if static_dir is None:
        bundled = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        static_dir = str(bundled) if bundled.is_dir() else None
    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app
