"""HTTP API over cache/edit so a console or script can drive editing.

Caches are content-addressed (image bytes + prompt + model fingerprint +
attention flag) and immutable once stored; edits only read them. One
model instance serves all requests.
"""

import base64
import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from . import cache as cache_mod
from . import editor as editor_mod
from .codec import CodecParams, decode_feature, make_codec
from .errors import (AreditError, ContractViolation, FingerprintMismatch,
                     MissingAttention)
from .imgio import decode_png, encode_png
from .numerics import Image
from .predictor import PredictorModel, load_model, make_synthetic
from .pyramid import DEFAULT_SCHEDULE, ScaleSchedule


def _err(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


@dataclass
class CacheEntry:
    cache: cache_mod.EditCache
    source_prompt: str
    created_at: float
    thumbnail_b64: str


class CacheStore:
    """Concurrent map of immutable caches with optional disk spill."""

    def __init__(self, spill_dir: Optional[str] = None):
        self._entries: Dict[str, CacheEntry] = {}
        self._lock = threading.Lock()
        self.spill_dir = spill_dir
        if spill_dir:
            os.makedirs(spill_dir, exist_ok=True)

    @staticmethod
    def cache_id(image_bytes: bytes, prompt: str, fingerprint: bytes,
                 keep_attention: bool) -> str:
        h = hashlib.sha256()
        h.update(image_bytes)
        h.update(b"\x00")
        h.update(prompt.encode("utf-8"))
        h.update(b"\x00")
        h.update(fingerprint)
        h.update(b"\x01" if keep_attention else b"\x00")
        return h.hexdigest()[:32]

    def get(self, cid: str) -> Optional[CacheEntry]:
        with self._lock:
            entry = self._entries.get(cid)
        if entry is not None:
            return entry
        if self.spill_dir:
            path = os.path.join(self.spill_dir, cid + ".arec")
            meta_path = os.path.join(self.spill_dir, cid + ".json")
            if os.path.exists(path) and os.path.exists(meta_path):
                c = cache_mod.load_cache(path)
                with open(meta_path) as fh:
                    meta = json.load(fh)
                entry = CacheEntry(c, meta["source_prompt"], meta["created_at"],
                                   meta["thumbnail_b64"])
                with self._lock:
                    self._entries[cid] = entry
                return entry
        return None

    def put(self, cid: str, entry: CacheEntry) -> None:
        with self._lock:
            self._entries[cid] = entry
        if self.spill_dir:
            path = os.path.join(self.spill_dir, cid + ".arec")
            if not os.path.exists(path):
                cache_mod.save_cache(entry.cache, path)
                with open(os.path.join(self.spill_dir, cid + ".json"), "w") as fh:
                    json.dump({"source_prompt": entry.source_prompt,
                               "created_at": entry.created_at,
                               "thumbnail_b64": entry.thumbnail_b64}, fh)

    def delete(self, cid: str) -> bool:
        with self._lock:
            found = self._entries.pop(cid, None) is not None
        if self.spill_dir:
            for ext in (".arec", ".json"):
                path = os.path.join(self.spill_dir, cid + ext)
                if os.path.exists(path):
                    os.remove(path)
                    found = True
        return found


def _thumbnail_b64(img: Image, max_side: int = 32) -> str:
    step = max(1, max(img.height, img.width) // max_side)
    small = Image.from_array(np.asarray(img.pixels)[::step, ::step])
    return base64.b64encode(encode_png(small)).decode("ascii")


def create_app(model: Optional[PredictorModel] = None,
               codec: Optional[CodecParams] = None,
               schedule: Optional[ScaleSchedule] = None,
               store_dir: Optional[str] = None,
               console_dir: Optional[str] = None) -> FastAPI:
    from .runtime import model_runtime

    model = model or make_synthetic(0)
    default_codec, default_schedule = model_runtime(model)
    codec = codec or default_codec
    schedule = schedule or default_schedule
    store = CacheStore(store_dir)
    app = FastAPI(title="aredit", docs_url=None, redoc_url=None)
    app.state.store = store
    app.state.model = model
    app.state.codec = codec
    app.state.schedule = schedule

    @app.exception_handler(RequestValidationError)
    async def _invalid(request: Request, exc: RequestValidationError):
        return _err(422, "invalid_request", str(exc.errors()[:1]))

    @app.exception_handler(AreditError)
    async def _domain(request: Request, exc: AreditError):
        return _err(500, "internal", str(exc))

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/v1/cache")
    async def post_cache(image: UploadFile = File(...),
                         source_prompt: str = Form(""),
                         keep_attention: bool = Form(True)):
        raw = await image.read()
        try:
            img = decode_png(raw)
        except ContractViolation:
            return _err(400, "bad_image", "could not decode image as PNG")
        if img.height % codec.patch_size or img.width % codec.patch_size:
            return _err(422, "incompatible_dimensions",
                        f"image must be a multiple of {codec.patch_size} px")
        full_h, full_w = schedule.full_shape
        if (img.height // codec.patch_size, img.width // codec.patch_size) != (full_h, full_w):
            return _err(422, "incompatible_dimensions",
                        f"expected {full_h * codec.patch_size}x{full_w * codec.patch_size} image")
        cid = store.cache_id(raw, source_prompt, model.fingerprint, keep_attention)
        existing = store.get(cid)
        t0 = time.perf_counter()
        if existing is None:
            c = cache_mod.build_cache(img, source_prompt, model, codec, schedule,
                                      keep_attention=keep_attention)
            store.put(cid, CacheEntry(c, source_prompt, time.time(),
                                      _thumbnail_b64(img)))
        build_ms = (time.perf_counter() - t0) * 1e3
        entry = store.get(cid)
        return {"cache_id": cid,
                "scales": [list(l) for l in entry.cache.schedule.levels],
                "timing_ms": build_ms}

    @app.post("/v1/edit")
    async def post_edit(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _err(400, "bad_json", "body must be JSON")
        cid = body.get("cache_id")
        entry = store.get(cid) if isinstance(cid, str) else None
        if entry is None:
            return _err(404, "unknown_cache", f"no cache {cid!r}")
        levels = entry.cache.num_levels
        gamma = body.get("gamma")
        tau = body.get("tau")
        try:
            if gamma is not None:
                gamma = int(gamma)
                if not (0 <= gamma <= levels):
                    raise ContractViolation(f"gamma must be in [0, {levels}]")
            if tau is not None:
                tau = float(tau)
            cfg = editor_mod.EditConfig(
                gamma=gamma,
                tau=tau,
                mask_mode=body.get("mask_mode", "bitwise"),
                attention_control=bool(body.get("attention_control", False)),
                seed=int(body.get("seed", 0)),
                temperature=float(body.get("temperature", 1.0)),
                emit_intermediate=bool(body.get("emit_intermediate", False)),
            )
            if cfg.gamma > levels:
                raise ContractViolation(f"gamma must be in [0, {levels}]")
        except (ContractViolation, ValueError) as exc:
            return _err(422, "invalid_config", str(exc))
        try:
            result = editor_mod.edit(entry.cache, body.get("target_prompt", ""),
                                     model, codec, cfg)
        except MissingAttention as exc:
            return _err(409, "attention_missing", str(exc))
        except FingerprintMismatch as exc:
            return _err(409, "fingerprint_mismatch", str(exc))
        resp = {
            "image_png_base64": base64.b64encode(encode_png(result.image)).decode("ascii"),
            "flagged_per_scale": list(result.flagged_per_scale),
            "flagged_total": result.flagged_total,
            "timing_ms": {k: round(v, 3) for k, v in result.timing.items()},
        }
        if body.get("emit_masks"):
            resp["masks"] = [
                {"scale": cfg.gamma + i + 1,
                 "flagged": m.flagged,
                 "heatmap_png_base64": base64.b64encode(
                     encode_png(editor_mod.mask_heatmap(m))).decode("ascii")}
                for i, m in enumerate(result.masks)
            ]
        if cfg.emit_intermediate:
            resp["intermediate"] = [
                base64.b64encode(encode_png(im)).decode("ascii")
                for im in result.intermediate_decodes
            ]
        return resp

    @app.get("/v1/cache/{cid}")
    def get_cache(cid: str):
        entry = store.get(cid)
        if entry is None:
            return _err(404, "unknown_cache", f"no cache {cid!r}")
        return {"cache_id": cid,
                "source_prompt": entry.source_prompt,
                "created_at": entry.created_at,
                "scales": [list(l) for l in entry.cache.schedule.levels],
                "has_attention": entry.cache.w_queue is not None,
                "thumbnail_png_base64": entry.thumbnail_b64}

    @app.get("/v1/cache/{cid}/decode")
    def get_decode(cid: str, upto: Optional[int] = None):
        entry = store.get(cid)
        if entry is None:
            return _err(404, "unknown_cache", f"no cache {cid!r}")
        k = entry.cache.num_levels if upto is None else upto
        if not (0 <= k <= entry.cache.num_levels):
            return _err(422, "invalid_config",
                        f"upto must be in [0, {entry.cache.num_levels}]")
        feat = cache_mod.reconstruct_feature(entry.cache, k)
        png = encode_png(decode_feature(feat, codec))
        return Response(content=png, media_type="image/png")

    @app.delete("/v1/cache/{cid}")
    def delete_cache(cid: str):
        if not store.delete(cid):
            return _err(404, "unknown_cache", f"no cache {cid!r}")
        return {"deleted": True}

    if console_dir and os.path.isdir(console_dir):
        app.mount("/", StaticFiles(directory=console_dir, html=True), name="console")
    return app


def app_from_env() -> FastAPI:
    model_path = os.environ.get("AREDIT_MODEL")
    model = load_model(model_path) if model_path else None
    return create_app(model=model,
                      store_dir=os.environ.get("AREDIT_STORE"),
                      console_dir=os.environ.get("AREDIT_CONSOLE", "frontend/dist"))
