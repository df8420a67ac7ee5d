"""HTTP interface exposing encode/decode/edit/generate to the browser editor.

JSON in, JSON out. Sessions map ids to cached latent part sets; edits create
new ids and never mutate existing entries or the checkpoint. Every response
carries the server seed and checkpoint hash so an editing session can be
reproduced. Requests over 1 MB are rejected (clouds up to a few thousand
points fit comfortably).
"""

from __future__ import annotations

import hashlib
import itertools
import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .latent import (EditError, EditOp, PartFeatureSet, compose,
                     exchange_part, fuse_global, interpolate, remove_part)
from .model import LpmModel

MAX_BODY_BYTES = 1 << 20
DEFAULT_CACHE_SIZE = 256


@dataclass
class Session:
    parts: PartFeatureSet | None
    global_feature: np.ndarray
    origin: str


class SessionStore:
    """Bounded LRU of immutable session entries; id allocation is atomic."""

    def __init__(self, capacity: int = DEFAULT_CACHE_SIZE):
        self.capacity = capacity
        self._entries: OrderedDict[str, Session] = OrderedDict()
        self._lock = threading.Lock()
        self._counter = itertools.count(1)

    def put(self, session: Session) -> str:
        with self._lock:
            model_id = f"m{next(self._counter):06d}"
            self._entries[model_id] = session
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)
            return model_id

    def get(self, model_id: str) -> Session | None:
        with self._lock:
            session = self._entries.get(model_id)
            if session is not None:
                self._entries.move_to_end(model_id)
            return session

    def ids(self) -> list[str]:
        with self._lock:
            return list(self._entries)


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


def _file_hash(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def create_app(model: LpmModel, heads: dict | None = None, seed: int = 0,
               checkpoint_path: str | None = None,
               cache_size: int = DEFAULT_CACHE_SIZE) -> FastAPI:
    heads = heads or {}
    store = SessionStore(cache_size)
    ckpt_hash = (_file_hash(checkpoint_path) if checkpoint_path
                 else model.checkpoint_hash())
    regen_counter = itertools.count()

    app = FastAPI(title="partae edit service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    def stamp(payload: dict) -> dict:
        payload["seed"] = seed
        payload["checkpoint"] = ckpt_hash
        return payload

    @app.exception_handler(ApiError)
    async def handle_api_error(_req, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content=stamp({"error": exc.message}))

    @app.middleware("http")
    async def limit_body(request: Request, call_next):
        length = request.headers.get("content-length")
        if length and int(length) > MAX_BODY_BYTES:
            return JSONResponse(status_code=413,
                                content={"error": "request body over 1 MB"})
        return await call_next(request)

    def require_session(model_id) -> Session:
        if not isinstance(model_id, str):
            raise ApiError(400, "model_id must be a string")
        session = store.get(model_id)
        if session is None:
            raise ApiError(404, f"unknown model_id {model_id!r}")
        return session

    def check_part_id(part_id) -> int:
        k = model.config.parts
        if not isinstance(part_id, int) or not 1 <= part_id <= k:
            raise ApiError(400, f"part id {part_id!r} outside valid range 1..{k}")
        return part_id

    def decode_session(session: Session) -> dict:
        points = model.decode(session.global_feature)
        labels = model.predict_labels(points)
        return {"points": points.tolist(), "labels": labels.tolist()}

    def new_session(parts: PartFeatureSet | None, origin: str,
                    global_feature: np.ndarray | None = None) -> tuple[str, Session]:
        g = fuse_global(parts) if parts is not None else global_feature
        session = Session(parts=parts, global_feature=g, origin=origin)
        return store.put(session), session

    @app.get("/health")
    async def health():
        return stamp({"status": "ready", "k": model.config.parts,
                      "l": model.config.feature_size,
                      "n": model.config.points,
                      "heads": sorted(heads)})

    @app.get("/models")
    async def models():
        return stamp({"models": store.ids()})

    @app.post("/encode")
    async def encode(body: dict):
        points = body.get("points")
        if not isinstance(points, list) or not points:
            raise ApiError(400, "body needs a non-empty 'points' array")
        try:
            pts = np.asarray(points, dtype=np.float32)
        except (TypeError, ValueError):
            raise ApiError(400, "points must be an array of [x, y, z] rows")
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ApiError(400, f"points must be (n, 3), got {list(pts.shape)}")
        labels = body.get("labels")
        if labels is None:
            lbl = model.predict_labels(pts)
            if not (lbl > 0).any():
                raise ApiError(400, "segmentation produced no real part; "
                               "supply labels explicitly")
        else:
            lbl = np.asarray(labels, dtype=np.int32)
            if lbl.shape != (len(pts),):
                raise ApiError(400, "labels length must match points")
            if lbl.min() < 0 or lbl.max() > model.config.parts:
                raise ApiError(400, f"labels must lie in 0..{model.config.parts}")
        enc = model.encode(pts, lbl)
        model_id, _ = new_session(enc.parts, origin="encode")
        return stamp({"model_id": model_id,
                      "part_presence": enc.parts.present.tolist(),
                      "k": model.config.parts,
                      "l": model.config.feature_size})

    @app.post("/decode")
    async def decode(body: dict):
        if "model_id" in body:
            session = require_session(body["model_id"])
        elif "global_feature" in body:
            g = np.asarray(body["global_feature"], dtype=np.float32)
            if g.shape != (model.config.feature_size,):
                raise ApiError(400, f"global_feature must have length "
                               f"{model.config.feature_size}")
            session = Session(parts=None, global_feature=g, origin="raw")
        else:
            raise ApiError(400, "body needs 'model_id' or 'global_feature'")
        return stamp(decode_session(session))

    @app.post("/edit")
    async def edit(body: dict):
        op_dict = body.get("op")
        if not isinstance(op_dict, dict):
            raise ApiError(400, "body needs an 'op' object")
        try:
            op = EditOp.from_json_dict(op_dict)
        except EditError as exc:
            raise ApiError(400, str(exc))
        sources = op.sources or []
        try:
            if op.kind == "exchange":
                if len(sources) != 2:
                    raise ApiError(400, "exchange needs sources [target_id, donor_id]")
                a = require_session(sources[0])
                b = require_session(sources[1])
                check_part_id(op.part_id)
                result = exchange_part(_parts_of(a), _parts_of(b), op.part_id)
                model_id, session = new_session(result, "edit:exchange")
            elif op.kind == "interpolate-part":
                if len(sources) != 2:
                    raise ApiError(400, "interpolation needs sources [id_a, id_b]")
                a = require_session(sources[0])
                b = require_session(sources[1])
                check_part_id(op.part_id)
                result = interpolate(_parts_of(a), _parts_of(b), op.t,
                                     part_id=op.part_id)
                model_id, session = new_session(result, "edit:interpolate-part")
            elif op.kind == "interpolate-global":
                if len(sources) != 2:
                    raise ApiError(400, "interpolation needs sources [id_a, id_b]")
                a = require_session(sources[0])
                b = require_session(sources[1])
                g = interpolate(_parts_of(a), _parts_of(b), op.t)
                model_id, session = new_session(None, "edit:interpolate-global",
                                                global_feature=g)
            elif op.kind == "compose":
                if not sources:
                    raise ApiError(400, "compose needs sources [[model_id, part_id], ...]")
                pairs = []
                for item in sources:
                    if not isinstance(item, (list, tuple)) or len(item) != 2:
                        raise ApiError(400, "compose sources must be "
                                       "[model_id, part_id] pairs")
                    session = require_session(item[0])
                    pairs.append((_parts_of(session), check_part_id(item[1])))
                result = compose(pairs)
                model_id, session = new_session(result, "edit:compose")
            elif op.kind == "remove":
                if len(sources) != 1:
                    raise ApiError(400, "remove needs sources [model_id]")
                a = require_session(sources[0])
                check_part_id(op.part_id)
                result = remove_part(_parts_of(a), op.part_id)
                model_id, session = new_session(result, "edit:remove")
            elif op.kind == "regenerate-part":
                if len(sources) != 1:
                    raise ApiError(400, "regenerate needs sources [model_id]")
                a = require_session(sources[0])
                check_part_id(op.part_id)
                head_name = op.head or "vae"
                head = heads.get(head_name)
                if head is None:
                    raise ApiError(409, f"head {head_name!r} is not loaded")
                draw = next(regen_counter)
                if head_name == "vae":
                    row = head.regenerate_row(seed=hash((seed, draw)) & 0x7FFFFFFF)
                else:
                    row = head.sample(1, seed=hash((seed, draw)) & 0x7FFFFFFF)[0] \
                        .features[op.part_id - 1]
                result = _parts_of(a).copy()
                result.features[op.part_id - 1] = row
                result.present[op.part_id - 1] = True
                model_id, session = new_session(result, "edit:regenerate")
            else:
                raise ApiError(400, f"unsupported edit kind {op.kind!r}")
        except EditError as exc:
            raise ApiError(400, str(exc))
        payload = {"model_id": model_id, "cloud": decode_session(session)}
        if session.parts is not None:
            payload["part_presence"] = session.parts.present.tolist()
        return stamp(payload)

    def _parts_of(session: Session) -> PartFeatureSet:
        if session.parts is None:
            raise ApiError(400, f"session from {session.origin!r} has no per-part "
                           "features; only whole-shape decode is possible")
        return session.parts

    @app.post("/generate")
    async def generate(body: dict):
        head_name = body.get("head", "vae")
        head = heads.get(head_name)
        if head is None:
            raise ApiError(409, f"head {head_name!r} is not loaded")
        count = body.get("count", 1)
        if not isinstance(count, int) or not 1 <= count <= 64:
            raise ApiError(400, "count must be an integer in 1..64")
        gen_seed = body.get("seed", seed)
        try:
            if head_name == "vae":
                latents = head.sample_prior(count, seed=gen_seed)
            else:
                latents = head.sample(count, seed=gen_seed)
        except RuntimeError as exc:
            raise ApiError(409, str(exc))
        clouds = []
        for parts in latents:
            model_id, session = new_session(parts, f"generate:{head_name}")
            cloud = decode_session(session)
            cloud["model_id"] = model_id
            clouds.append(cloud)
        return stamp({"clouds": clouds})

    return app
