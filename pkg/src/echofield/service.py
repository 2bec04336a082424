"""HTTP render service exposing a trained field to interactive clients.

The checkpoint is loaded once into an immutable snapshot; every request
renders from it, so concurrent requests are deterministic and identical
bodies always produce identical bytes.
"""

from __future__ import annotations

import os
import threading
from dataclasses import replace

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from . import field as nf
from .encoding import SceneBounds
from .frustum import GaussianRadii
from .geometry import GeometryError, Pose, ProbeSpec
from .renderer import ScanConverter, interpolate_trajectory, render_slice, render_volume
from .volume_io import plane_to_png_bytes

__all__ = ["ModelSnapshot", "build_app", "serve"]

DEFAULT_PORT = int(os.environ.get("ECHOFIELD_PORT", "8765"))


class ModelSnapshot:
    """Immutable trained-field state shared across request handlers."""

    def __init__(self, params: nf.FieldParams, manifest: dict):
        self.params = params
        self.manifest = manifest
        self.probe = ProbeSpec.from_dict(manifest["probe"])
        self.bounds = SceneBounds.from_dict(manifest["bounds"])
        r = manifest["radii"]
        self.radii = GaussianRadii(r_lat=r["r_lat"], r_dep=r["r_dep"])
        self.spacing_mm = float(manifest["spacing_mm"])
        self.target_dims = tuple(manifest["target_dims"])
        self.poses = [Pose(np.array(row).reshape(4, 4)) for row in manifest["poses"]]
        self.point_sampling = (
            manifest.get("train_config", {}).get("sampling_mode") == "point"
        )
        self._panorama = None
        self._panorama_lock = threading.Lock()

    @classmethod
    def load(cls, checkpoint_path) -> "ModelSnapshot":
        params, manifest = nf.load_checkpoint(checkpoint_path)
        return cls(params, manifest)

    def panorama(self):
        """Lazily rendered panorama over the training trajectory, cached."""
        with self._panorama_lock:
            if self._panorama is None:
                trans = np.array([p.translation for p in self.poses])
                span = float(np.linalg.norm(trans[-1] - trans[0]))
                n_planes = max(int(round(span / self.spacing_mm)), 2)
                pano_poses = interpolate_trajectory(self.poses, n_planes)
                self._panorama = render_volume(
                    self.params, self.probe, pano_poses, self.radii, self.bounds,
                    self.target_dims, self.spacing_mm, self.point_sampling)
            return self._panorama

    def render_request(self, body: dict) -> bytes:
        """Validate a /render body and produce PNG bytes."""
        if "pose" not in body:
            raise _BadRequest("missing required field 'pose'")
        pose_values = body["pose"]
        if not isinstance(pose_values, (list, tuple)) or len(pose_values) != 16:
            raise _BadRequest("'pose' must be a list of 16 numbers (row-major 4x4)")
        try:
            pose = Pose(np.array(pose_values, dtype=np.float64).reshape(4, 4))
        except (GeometryError, ValueError) as e:
            raise _BadRequest(f"invalid pose: {e}") from e

        try:
            probe = replace(
                self.probe,
                opening_angle_deg=float(body.get("opening_angle_deg",
                                                 self.probe.opening_angle_deg)),
                r_in_mm=float(body.get("r_in_mm", self.probe.r_in_mm)),
                r_out_mm=float(body.get("r_out_mm", self.probe.r_out_mm)),
                n_rays=int(body.get("n_rays", self.probe.n_rays)),
                n_samples=int(body.get("n_samples", self.probe.n_samples)),
            )
            width = int(body.get("width", self.target_dims[0]))
            height = int(body.get("height", self.target_dims[1]))
            if width < 2 or height < 2:
                raise ValueError("width and height must be >= 2")
        except (GeometryError, ValueError, TypeError) as e:
            raise _BadRequest(f"invalid render parameters: {e}") from e

        fan = render_slice(self.params, probe, pose, self.radii, self.bounds,
                           self.point_sampling)
        conv = ScanConverter(probe, width, height, self.spacing_mm)
        plane = conv.convert(fan.intensities)
        return plane_to_png_bytes(plane, conv.mask)


class _BadRequest(ValueError):
    pass


def build_app(snapshot: ModelSnapshot) -> FastAPI:
    app = FastAPI(title="echofield render service")

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/model")
    def model():
        return {
            "field": snapshot.params.config.to_dict(),
            "step": snapshot.params.step,
            "probe": snapshot.probe.to_dict(),
            "bounds": snapshot.bounds.to_dict(),
            "spacing_mm": snapshot.spacing_mm,
            "target_dims": list(snapshot.target_dims),
            "poses": [p.matrix.reshape(-1).tolist() for p in snapshot.poses],
        }

    @app.post("/render")
    async def render(request: Request):
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "request body is not valid JSON"},
                                status_code=400)
        if not isinstance(body, dict):
            return JSONResponse({"error": "request body must be a JSON object"},
                                status_code=400)
        try:
            png = snapshot.render_request(body)
        except _BadRequest as e:
            return JSONResponse({"error": str(e)}, status_code=400)
        except Exception as e:  # render failure on a valid-looking request
            return JSONResponse({"error": f"render failed: {e}"}, status_code=500)
        return Response(content=png, media_type="image/png")

    @app.get("/panorama/slice")
    def panorama_slice(axis: str = "z", index: int = 0):
        axes = {"x": 2, "y": 1, "z": 0}
        if axis not in axes:
            return JSONResponse({"error": f"unknown axis {axis!r}"}, status_code=400)
        pano = snapshot.panorama()
        ax = axes[axis]
        if not 0 <= index < pano.data.shape[ax]:
            return JSONResponse(
                {"error": f"index {index} out of range for axis {axis}"},
                status_code=400)
        plane = np.take(pano.data, index, axis=ax)
        mask = np.take(pano.fan_mask, index, axis=ax)
        return Response(content=plane_to_png_bytes(plane, mask),
                        media_type="image/png")

    return app


def serve(checkpoint_path, port: int = DEFAULT_PORT, host: str = "127.0.0.1"):
    """Run the render service until interrupted.  Loopback-only by default."""
    import uvicorn

    snapshot = ModelSnapshot.load(checkpoint_path)
    app = build_app(snapshot)
    uvicorn.run(app, host=host, port=port, log_level="warning")
