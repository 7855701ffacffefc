"""HTTP inference service for interactive attribute editing.

Endpoints (JSON unless noted):

* ``GET  /health``      — liveness plus the loaded checkpoint digest,
* ``GET  /attributes``  — attribute names, groups and exclusive groups,
* ``GET  /gallery``     — server-side gallery ids, annotations, thumbnails,
* ``POST /edit``        — EditRequest -> EditResponse,
* ``POST /reconstruct`` — same contract, targets forced to the source attributes.

A request names its source image either by ``gallery_id`` or as base64 PNG
bytes. Target attributes arrive as a full vector or as sparse per-name
overrides; overrides are resolved against the source annotation (gallery) or
the model's own classifier prediction (uploads), with mutually exclusive
group siblings cleared. The loaded checkpoint is immutable; editing is a
deterministic function of the request.
"""

from __future__ import annotations

import base64
import binascii
import io
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel
from PIL import Image

from . import checkpoint as ckpt
from .data import Dataset, load_manifest, pixels_to_uint8, uint8_to_pixels
from .models import (
    DiscriminatorClassifier,
    Generator,
    ModelConfig,
    attrs_to_tensor,
    images_to_tensor,
    inference,
    tensor_to_images,
)
from .schema import AttributeSchema, SchemaError

ENV_CHECKPOINT = "GARMENT_GAN_CHECKPOINT"


@dataclass(frozen=True)
class ModelHandle:
    """Frozen checkpoint: generator, classifier, schema and file digest."""

    gen: Generator
    dc: DiscriminatorClassifier
    schema: AttributeSchema
    model_config: ModelConfig
    step: int
    digest: str
    path: str


def load_checkpoint(path: str | Path) -> ModelHandle:
    """Load and validate a training checkpoint into an immutable handle."""
    path = Path(path)
    header, arrays = ckpt.load_checkpoint(path)
    if header.get("kind") != "train":
        raise ckpt.CheckpointError(f"not a training checkpoint: kind={header.get('kind')!r}")
    if "schema" not in header:
        raise ckpt.CheckpointError("checkpoint header has no schema")
    schema = AttributeSchema.from_json_dict(header["schema"])
    config = ModelConfig.from_json_dict(header["model_config"])
    gen = Generator(config)
    dc = DiscriminatorClassifier(config)
    ckpt.load_module_arrays(gen, "generator", arrays)
    ckpt.load_module_arrays(dc, "disc_cls", arrays)
    gen.eval()
    dc.eval()
    return ModelHandle(
        gen=gen, dc=dc, schema=schema, model_config=config,
        step=int(header.get("step", 0)), digest=ckpt.checkpoint_digest(path), path=str(path),
    )


def prepare_image_bytes(png_bytes: bytes, image_size: int) -> np.ndarray:
    """Decode, center-crop to square, resize to the model size, scale to [-1, 1]."""
    try:
        with Image.open(io.BytesIO(png_bytes)) as im:
            im = im.convert("RGB")
            w, h = im.size
            side = min(w, h)
            left, top = (w - side) // 2, (h - side) // 2
            im = im.crop((left, top, left + side, top + side))
            if side != image_size:
                im = im.resize((image_size, image_size), Image.BILINEAR)
            raw = np.asarray(im)
    except HTTPException:
        raise
    except Exception as exc:
        raise ValueError(f"invalid image bytes: {exc}") from exc
    return uint8_to_pixels(raw)


def edit_pixels(handle: ModelHandle, pixels: np.ndarray, target_bits: np.ndarray) -> np.ndarray:
    """decode(encode(x), b) on one image; returns (H, W, 3) in [-1, 1]."""
    with inference(handle.gen):
        x = images_to_tensor(pixels)
        out = handle.gen.decode(handle.gen.encode(x), attrs_to_tensor(target_bits))
    return tensor_to_images(out)[0]


def predict_source_attributes(handle: ModelHandle, pixels: np.ndarray) -> np.ndarray:
    """Classifier-head annotation (threshold 0.5) for un-annotated uploads."""
    with inference(handle.dc):
        probs = handle.dc.classify(images_to_tensor(pixels))
    return (probs.numpy()[0] >= 0.5).astype(np.uint8)


def png_base64(pixels: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(pixels_to_uint8(pixels)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class EditRequest(BaseModel):
    image_png_base64: str | None = None
    gallery_id: str | None = None
    target_attributes: list[int] | None = None
    overrides: dict[str, int] | None = None


class EditResponse(BaseModel):
    image_png_base64: str
    resolved_attributes: dict[str, int]
    source_attributes: dict[str, int]
    checkpoint_digest: str
    latency_ms: float


def create_app(checkpoint_path: str | Path | None = None,
               gallery_dir: str | Path | None = None,
               studio_dir: str | Path | None = None) -> FastAPI:
    """Build the FastAPI app around one frozen checkpoint."""
    if checkpoint_path is None:
        checkpoint_path = os.environ.get(ENV_CHECKPOINT)
    if not checkpoint_path:
        raise ValueError(f"no checkpoint configured (flag or {ENV_CHECKPOINT})")
    handle = load_checkpoint(checkpoint_path)

    gallery: Dataset | None = None
    if gallery_dir is not None:
        gallery = load_manifest(gallery_dir)
        if tuple(gallery.schema.names) != tuple(handle.schema.names):
            raise ValueError(
                f"gallery attributes {gallery.schema.names} do not match checkpoint "
                f"schema {handle.schema.names}"
            )

    app = FastAPI(title="garment-gan editing service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.handle = handle

    def _source_from_request(req: EditRequest) -> tuple[np.ndarray, np.ndarray]:
        """Returns (pixels, source_attribute_bits)."""
        if req.gallery_id is not None:
            if gallery is None:
                raise HTTPException(status_code=400, detail="no gallery configured")
            try:
                item = gallery.by_id(req.gallery_id)
            except Exception:
                raise HTTPException(status_code=404, detail=f"unknown gallery id {req.gallery_id!r}")
            pixels = item.pixels
            if pixels.shape[0] != handle.model_config.image_size:
                pixels = prepare_image_bytes(_encode_png(pixels), handle.model_config.image_size)
            return pixels, np.asarray(item.attrs, dtype=np.uint8)
        if req.image_png_base64 is not None:
            try:
                raw = base64.b64decode(req.image_png_base64, validate=True)
            except (binascii.Error, ValueError) as exc:
                raise HTTPException(status_code=400, detail=f"invalid base64 image: {exc}")
            try:
                pixels = prepare_image_bytes(raw, handle.model_config.image_size)
            except ValueError as exc:
                raise HTTPException(status_code=400, detail=str(exc))
            return pixels, predict_source_attributes(handle, pixels)
        raise HTTPException(status_code=400, detail="request needs image_png_base64 or gallery_id")

    def _encode_png(pixels: np.ndarray) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(pixels_to_uint8(pixels)).save(buf, format="PNG")
        return buf.getvalue()

    def _resolve_targets(req: EditRequest, source_bits: np.ndarray) -> np.ndarray:
        if req.target_attributes is not None:
            bits = np.asarray(req.target_attributes)
            if bits.shape != (handle.schema.n,):
                raise HTTPException(
                    status_code=400,
                    detail=f"target_attributes must have length {handle.schema.n}, got {bits.shape}",
                )
            if not np.isin(bits, (0, 1)).all():
                raise HTTPException(status_code=400, detail="target_attributes entries must be 0 or 1")
            return bits.astype(np.uint8)
        if req.overrides is not None:
            try:
                return handle.schema.resolve_overrides(source_bits, req.overrides)
            except SchemaError as exc:
                raise HTTPException(status_code=400, detail=str(exc))
        raise HTTPException(status_code=400, detail="request needs target_attributes or overrides")

    def _attr_dict(bits: np.ndarray) -> dict[str, int]:
        return {name: int(v) for name, v in zip(handle.schema.names, bits)}

    def _respond(pixels: np.ndarray, targets: np.ndarray, source_bits: np.ndarray,
                 started: float) -> EditResponse:
        edited = edit_pixels(handle, pixels, targets)
        return EditResponse(
            image_png_base64=png_base64(edited),
            resolved_attributes=_attr_dict(targets),
            source_attributes=_attr_dict(source_bits),
            checkpoint_digest=handle.digest,
            latency_ms=(time.perf_counter() - started) * 1000.0,
        )

    @app.get("/health")
    def health():
        return {"status": "ok", "checkpoint_digest": handle.digest, "step": handle.step}

    @app.get("/attributes")
    def attributes():
        return handle.schema.to_json_dict()

    @app.get("/gallery")
    def gallery_listing():
        if gallery is None:
            return {"items": []}
        return {
            "items": [
                {
                    "id": it.id,
                    "attributes": _attr_dict(it.attrs),
                    "thumbnail_png_base64": png_base64(it.pixels),
                }
                for it in gallery.items
            ]
        }

    @app.post("/edit", response_model=EditResponse)
    def edit(req: EditRequest):
        started = time.perf_counter()
        pixels, source_bits = _source_from_request(req)
        targets = _resolve_targets(req, source_bits)
        return _respond(pixels, targets, source_bits, started)

    @app.post("/reconstruct", response_model=EditResponse)
    def reconstruct(req: EditRequest):
        started = time.perf_counter()
        pixels, source_bits = _source_from_request(req)
        return _respond(pixels, source_bits, source_bits, started)

    if studio_dir is not None and Path(studio_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/studio", StaticFiles(directory=str(studio_dir), html=True), name="studio")

    return app


def serve(checkpoint_path: str | Path | None = None, gallery_dir: str | Path | None = None,
          studio_dir: str | Path | None = None, host: str = "127.0.0.1", port: int = 8765) -> None:
    """Run the service until interrupted (uvicorn handles signals)."""
    import uvicorn

    app = create_app(checkpoint_path, gallery_dir, studio_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")
