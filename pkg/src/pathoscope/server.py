"""HTTP workbench: the service behind the browser review tool.

Serves the corpus (images + annotations), registered models, a
single-worker detection job queue, review verdicts, and a merged
annotation export. Annotation writes are guarded by an optimistic
version token -- the SHA-256 of the stored objects list -- and applied
atomically (temp file + rename), so a reader never sees a partial
manifest and concurrent writers get a clean 409.

Expected data directory layout:

    manifest.json + *.png      the annotated corpus (manifest schema)
    *.pscn                     trained models, id = file stem
    detections/<image>.jsonl   written by detect jobs
    reviews.jsonl              append-only review verdicts
    ui/                        optional static bundle, served at /
"""

from __future__ import annotations

import hashlib
import json
import os
import queue
import tempfile
import threading
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, HTTPException
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image

from .detect import DetectorConfig, detect, load_detections_jsonl, \
    save_detections_jsonl
from .errors import PathoscopeError
from .model import load_model
from .patches import MANIFEST_VERSION, AnnotatedImage, BoundingBox, PatchSpec

__all__ = ["create_app"]


def _canonical_objects(objects) -> str:
    return json.dumps(objects, sort_keys=True, separators=(",", ":"))


def _version_token(objects) -> str:
    return hashlib.sha256(_canonical_objects(objects).encode()).hexdigest()


def _validate_objects(objects, width, height):
    """Manifest-fragment invariants; raises HTTPException 422 on the first hole."""
    if not isinstance(objects, list):
        raise HTTPException(422, "objects must be a list")
    for i, obj in enumerate(objects):
        where = f"objects[{i}]"
        if not isinstance(obj, dict) or set(obj) != {"label", "bbox"}:
            raise HTTPException(422, f"{where}: expected {{label, bbox}}")
        label, bbox = obj["label"], obj["bbox"]
        if not isinstance(label, str) or not label:
            raise HTTPException(422, f"{where}: label must be a non-empty string")
        if (not isinstance(bbox, list) or len(bbox) != 4
                or not all(isinstance(v, int) and not isinstance(v, bool)
                           for v in bbox)):
            raise HTTPException(422, f"{where}: bbox must be 4 integers")
        x_min, y_min, x_max, y_max = bbox
        if not (x_min < x_max and y_min < y_max):
            raise HTTPException(422, f"{where}: bbox is empty or inverted")
        if x_min < 0 or y_min < 0 or x_max > width or y_max > height:
            raise HTTPException(
                422, f"{where}: bbox outside the {width}x{height} raster")


class Workspace:
    """All mutable state: the manifest, models, jobs, and reviews."""

    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self.manifest_path = self.data_dir / "manifest.json"
        if not self.manifest_path.exists():
            raise FileNotFoundError(
                f"no corpus manifest at {self.manifest_path}"
            )
        self.detections_dir = self.data_dir / "detections"
        self.reviews_path = self.data_dir / "reviews.jsonl"
        self.manifest_lock = threading.Lock()
        self.reviews_lock = threading.Lock()

        self.jobs: dict = {}
        self.jobs_lock = threading.Lock()
        self.job_counter = 0
        self.job_queue: queue.Queue = queue.Queue()
        worker = threading.Thread(target=self._job_loop, daemon=True)
        worker.start()

    # -- manifest ----------------------------------------------------------

    def read_manifest(self) -> dict:
        return json.loads(self.manifest_path.read_text())

    def image_entry(self, manifest: dict, image_id: str) -> dict:
        for entry in manifest["images"]:
            if entry["id"] == image_id:
                return entry
        raise HTTPException(404, f"unknown image id {image_id!r}")

    def write_manifest_atomic(self, manifest: dict) -> None:
        payload = json.dumps(manifest, indent=2, sort_keys=True)
        fd, tmp = tempfile.mkstemp(dir=self.data_dir, suffix=".manifest.tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(payload)
            os.replace(tmp, self.manifest_path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    # -- models ------------------------------------------------------------

    def model_ids(self):
        return sorted(p.stem for p in self.data_dir.glob("*.pscn"))

    def load_model_by_id(self, model_id: str):
        path = self.data_dir / f"{model_id}.pscn"
        if not path.exists():
            raise HTTPException(404, f"unknown model id {model_id!r}")
        return load_model(path)

    # -- jobs --------------------------------------------------------------

    def submit_detect_job(self, image_id: str, model_id: str,
                          config: dict) -> dict:
        with self.jobs_lock:
            self.job_counter += 1
            job = {
                "id": f"job-{self.job_counter:04d}",
                "kind": "detect",
                "status": "queued",
                "progress": 0.0,
                "artifacts": [],
                "error": None,
                "request": {"image_id": image_id, "model_id": model_id,
                            "config": config},
            }
            self.jobs[job["id"]] = job
        self.job_queue.put(job["id"])
        return job

    def _job_loop(self):
        while True:
            job_id = self.job_queue.get()
            with self.jobs_lock:
                job = self.jobs[job_id]
                job["status"] = "running"
                job["progress"] = 0.1
            try:
                artifact = self._run_detect(job["request"])
                with self.jobs_lock:
                    job["artifacts"] = [str(artifact)]
                    job["progress"] = 1.0
                    job["status"] = "done"
            except Exception as exc:  # surface anything to the client
                with self.jobs_lock:
                    job["error"] = str(exc)
                    job["status"] = "failed"

    def load_image(self, entry: dict) -> AnnotatedImage:
        with Image.open(self.data_dir / entry["file"]) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
        boxes = [BoundingBox(*obj["bbox"], label=obj["label"])
                 for obj in entry["objects"]]
        return AnnotatedImage(id=entry["id"], pixels=pixels, boxes=boxes)

    def _run_detect(self, request: dict) -> Path:
        entry = self.image_entry(self.read_manifest(), request["image_id"])
        image = self.load_image(entry)
        model = self.load_model_by_id(request["model_id"])
        stored = model.provenance.get("patch_spec")
        spec = PatchSpec.from_dict(stored) if stored else \
            PatchSpec(patch_size=model.config.patch_size)
        config = request.get("config") or {}
        cfg = DetectorConfig(
            stride=config.get("stride"),
            probability_threshold=config.get("probability_threshold", 0.5),
            overlap_threshold=config.get("overlap_threshold", 0.3),
        )
        detections = detect(model, image, spec, cfg)
        self.detections_dir.mkdir(parents=True, exist_ok=True)
        out = self.detections_dir / f"{image.id}.jsonl"
        save_detections_jsonl({image.id: detections}, out)
        meta = {"model_id": request["model_id"],
                "target_label": spec.target_label,
                "config": {
                    "stride": cfg.resolved_stride(spec.patch_size),
                    "probability_threshold": cfg.probability_threshold,
                    "overlap_threshold": cfg.overlap_threshold,
                }}
        out.with_suffix(".meta.json").write_text(
            json.dumps(meta, indent=2, sort_keys=True))
        return out

    # -- detections and reviews --------------------------------------------

    def detections_for(self, image_id: str):
        path = self.detections_dir / f"{image_id}.jsonl"
        if not path.exists():
            return []
        return load_detections_jsonl(path).get(image_id, [])

    def detection_label(self, image_id: str) -> str:
        """Label to stamp on confirmed detections, from the job sidecar."""
        meta_path = self.detections_dir / f"{image_id}.meta.json"
        if meta_path.exists():
            label = json.loads(meta_path.read_text()).get("target_label")
            if label:
                return label
        return "confirmed-detection"

    def append_review(self, record: dict) -> None:
        with self.reviews_lock:
            with open(self.reviews_path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def reviews(self):
        if not self.reviews_path.exists():
            return []
        return [json.loads(line)
                for line in self.reviews_path.read_text().splitlines()
                if line.strip()]


def create_app(data_dir) -> FastAPI:
    ws = Workspace(Path(data_dir))
    app = FastAPI(title="pathoscope workbench", version="1")

    @app.get("/api/images")
    def list_images():
        manifest = ws.read_manifest()
        return [
            {"id": e["id"], "file": e["file"], "width": e["width"],
             "height": e["height"], "n_objects": len(e["objects"])}
            for e in manifest["images"]
        ]

    @app.get("/api/images/{image_id}")
    def get_image(image_id: str):
        entry = ws.image_entry(ws.read_manifest(), image_id)
        return FileResponse(ws.data_dir / entry["file"],
                            media_type="image/png")

    @app.get("/api/images/{image_id}/annotations")
    def get_annotations(image_id: str):
        entry = ws.image_entry(ws.read_manifest(), image_id)
        return {
            "image_id": image_id,
            "width": entry["width"],
            "height": entry["height"],
            "version": _version_token(entry["objects"]),
            "objects": entry["objects"],
        }

    @app.put("/api/images/{image_id}/annotations")
    def put_annotations(image_id: str, payload: dict = Body(...)):
        if "version" not in payload or "objects" not in payload:
            raise HTTPException(422, "payload needs {version, objects}")
        with ws.manifest_lock:
            manifest = ws.read_manifest()
            entry = ws.image_entry(manifest, image_id)
            current = _version_token(entry["objects"])
            if payload["version"] != current:
                raise HTTPException(
                    409, "annotation version conflict; reload and merge")
            _validate_objects(payload["objects"], entry["width"],
                              entry["height"])
            entry["objects"] = payload["objects"]
            ws.write_manifest_atomic(manifest)
            return {
                "image_id": image_id,
                "version": _version_token(entry["objects"]),
                "objects": entry["objects"],
            }

    @app.get("/api/models")
    def list_models():
        out = []
        for model_id in ws.model_ids():
            model = ws.load_model_by_id(model_id)
            spec = model.provenance.get("patch_spec") or {}
            out.append({
                "id": model_id,
                "patch_size": model.config.patch_size,
                "target_label": spec.get("target_label"),
                "epochs_trained": len(model.training_history),
            })
        return out

    @app.post("/api/jobs/detect", status_code=201)
    def submit_detect(payload: dict = Body(...)):
        image_id = payload.get("image_id")
        model_id = payload.get("model_id")
        if not image_id or not model_id:
            raise HTTPException(422, "payload needs {image_id, model_id}")
        ws.image_entry(ws.read_manifest(), image_id)       # 404 if unknown
        if model_id not in ws.model_ids():
            raise HTTPException(404, f"unknown model id {model_id!r}")
        config = payload.get("config") or {}
        if not isinstance(config, dict):
            raise HTTPException(422, "config must be an object")
        return ws.submit_detect_job(image_id, model_id, config)

    @app.get("/api/jobs/{job_id}")
    def get_job(job_id: str):
        with ws.jobs_lock:
            job = ws.jobs.get(job_id)
            if job is None:
                raise HTTPException(404, f"unknown job id {job_id!r}")
            return dict(job)

    @app.get("/api/images/{image_id}/detections")
    def get_detections(image_id: str):
        ws.image_entry(ws.read_manifest(), image_id)
        return [
            {"bbox": d.box.to_list(), "probability": d.probability}
            for d in ws.detections_for(image_id)
        ]

    @app.post("/api/reviews", status_code=201)
    def post_review(payload: dict = Body(...)):
        image_id = payload.get("image_id")
        verdict = payload.get("verdict")
        if verdict not in ("confirm", "reject"):
            raise HTTPException(422, "verdict must be confirm or reject")
        ws.image_entry(ws.read_manifest(), image_id)
        detections = ws.detections_for(image_id)
        index = payload.get("detection_index")
        bbox = payload.get("bbox")
        if index is None and bbox is None:
            raise HTTPException(422, "need detection_index or bbox")
        if index is None:
            matches = [i for i, d in enumerate(detections)
                       if d.box.to_list() == bbox]
            if not matches:
                raise HTTPException(
                    422, "bbox does not match any exported detection")
            index = matches[0]
        if not isinstance(index, int) or not 0 <= index < len(detections):
            raise HTTPException(
                422, f"detection_index {index!r} outside 0..{len(detections) - 1}")
        record = {
            "image_id": image_id,
            "detection_index": index,
            "bbox": detections[index].box.to_list(),
            "probability": detections[index].probability,
            "label": ws.detection_label(image_id),
            "verdict": verdict,
            "reviewer": payload.get("reviewer", "anonymous"),
            "timestamp": payload.get("timestamp"),
        }
        ws.append_review(record)
        return record

    @app.get("/api/export/annotations")
    def export_annotations():
        manifest = ws.read_manifest()
        confirmed: dict = {}
        for review in ws.reviews():
            key = (review["image_id"], review["detection_index"])
            confirmed[key] = review  # last verdict per detection wins
        export = {"version": MANIFEST_VERSION, "images": []}
        for entry in manifest["images"]:
            objects = list(entry["objects"])
            for (image_id, _), review in sorted(confirmed.items()):
                if image_id == entry["id"] and review["verdict"] == "confirm":
                    objects.append({
                        "label": review.get("label", "confirmed-detection"),
                        "bbox": review["bbox"],
                    })
            export["images"].append({
                "id": entry["id"], "file": entry["file"],
                "width": entry["width"], "height": entry["height"],
                "objects": objects,
            })
        return export

    @app.exception_handler(PathoscopeError)
    def pathoscope_error(_request, exc):
        from fastapi.responses import JSONResponse
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    ui_dir = ws.data_dir / "ui"
    if ui_dir.is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
