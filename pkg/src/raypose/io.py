"""JSON serialization of reconstructions and correspondence sets.

A reconstruction document is a JSON object::

    {"version": 1,
     "cameras": [{"id": ..., "center": [x,y,z], "orientation": [w,x,y,z]}, ...],
     "points": [{"id": ..., "xyz": [x,y,z]}, ...],
     "observations": [{"camera_id": ..., "point_id": ...,
                       "direction": [x,y,z]}, ...]}

Directions must be unit within 1e-9; vectors off by up to 1e-6 are
renormalized with a collected warning, beyond that loading fails.  All
floats are written with 17 significant digits so save/load round-trips
exactly.  A correspondence file is ``{"correspondences": [{"origin":
[...], "direction": [...], "point": [...], "score"?: ..., "point_id"?:
...}, ...]}``.
"""

from __future__ import annotations

import json
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import IntegrityError, InvalidInputError, ParseError
from .geometry import Correspondence, DistributedCamera, Quaternion, Ray

FORMAT_VERSION = 1


def _vec(obj, length, location):
    if (not isinstance(obj, list) or len(obj) != length
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj)):
        raise ParseError(f"expected a numeric {length}-vector", location=location)
    a = np.array(obj, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ParseError("vector components must be finite", location=location)
    return a


def _require(obj, key, location):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"missing field {key!r}", location=location)
    return obj[key]


def parse_reconstruction(text: str) -> Tuple[DistributedCamera, List[str]]:
    """Parse a reconstruction document; returns (camera, warnings)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", location=f"line {e.lineno}") from e
    if not isinstance(doc, dict):
        raise ParseError("document root must be an object", location="root")
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported version {version!r}", location="version")
    warnings: List[str] = []

    cameras = []
    for i, cam in enumerate(doc.get("cameras", [])):
        loc = f"cameras[{i}]"
        cid = _require(cam, "id", loc)
        center = _vec(_require(cam, "center", loc), 3, loc + ".center")
        orient = _vec(_require(cam, "orientation", loc), 4, loc + ".orientation")
        cameras.append((cid, center, Quaternion.from_array(orient)))
    points = []
    for i, pt in enumerate(doc.get("points", [])):
        loc = f"points[{i}]"
        points.append((_require(pt, "id", loc), _vec(_require(pt, "xyz", loc), 3, loc + ".xyz")))
    cam_ids = {cid for cid, _, _ in cameras}
    pids = {pid for pid, _ in points}
    observations = []
    for i, ob in enumerate(doc.get("observations", [])):
        loc = f"observations[{i}]"
        cid = _require(ob, "camera_id", loc)
        pid = _require(ob, "point_id", loc)
        d = _vec(_require(ob, "direction", loc), 3, loc + ".direction")
        if cid not in cam_ids:
            raise IntegrityError(f"{loc}: unknown camera_id", offending_id=cid)
        if pid not in pids:
            raise IntegrityError(f"{loc}: unknown point_id", offending_id=pid)
        norm = float(np.linalg.norm(d))
        if abs(norm - 1.0) > 1e-6:
            raise ParseError(f"direction norm {norm} too far from 1", location=loc)
        if abs(norm - 1.0) > 1e-9:
            warnings.append(f"{loc}: direction norm {norm:.12g} renormalized")
            d = d / norm
        observations.append((cid, pid, d))
    try:
        camera = DistributedCamera(tuple(cameras), tuple(points), tuple(observations))
    except InvalidInputError as e:
        raise IntegrityError(str(e)) from e
    return camera, warnings


def load_reconstruction(path: str,
                        warnings_out: Optional[List[str]] = None) -> DistributedCamera:
    """Load and validate a reconstruction document from disk."""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    camera, warnings = parse_reconstruction(text)
    if warnings_out is not None:
        warnings_out.extend(warnings)
    return camera


def _f(x: float) -> float:
    # json round-trips Python floats exactly via repr (17 significant digits).
    return float(x)


def reconstruction_to_json(camera: DistributedCamera) -> str:
    doc = {
        "version": FORMAT_VERSION,
        "cameras": [{"id": cid,
                     "center": [_f(v) for v in center],
                     "orientation": [_f(orient.w), _f(orient.x), _f(orient.y), _f(orient.z)]}
                    for cid, center, orient in camera.cameras],
        "points": [{"id": pid, "xyz": [_f(v) for v in xyz]} for pid, xyz in camera.points],
        "observations": [{"camera_id": cid, "point_id": pid,
                          "direction": [_f(v) for v in d]}
                         for cid, pid, d in camera.observations],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def save_reconstruction(camera: DistributedCamera, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(reconstruction_to_json(camera))


def parse_correspondences(text: str) -> List[Correspondence]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", location=f"line {e.lineno}") from e
    if not isinstance(doc, dict) or "correspondences" not in doc:
        raise ParseError("missing 'correspondences' array", location="root")
    out = []
    for i, c in enumerate(doc["correspondences"]):
        loc = f"correspondences[{i}]"
        origin = _vec(_require(c, "origin", loc), 3, loc + ".origin")
        direction = _vec(_require(c, "direction", loc), 3, loc + ".direction")
        point = _vec(_require(c, "point", loc), 3, loc + ".point")
        score = c.get("score")
        pid = c.get("point_id")
        try:
            out.append(Correspondence(Ray(origin, direction), point,
                                      score=score, point_id=pid))
        except InvalidInputError as e:
            raise ParseError(str(e), location=loc) from e
    return out


def load_correspondences(path: str) -> List[Correspondence]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_correspondences(f.read())


def correspondences_to_json(correspondences: Sequence[Correspondence]) -> str:
    rows = []
    for c in correspondences:
        row = {"origin": [_f(v) for v in c.ray.origin],
               "direction": [_f(v) for v in c.ray.direction],
               "point": [_f(v) for v in c.point]}
        if c.score is not None:
            row["score"] = _f(c.score)
        if c.point_id is not None:
            row["point_id"] = c.point_id
        rows.append(row)
    return json.dumps({"correspondences": rows}, indent=1, sort_keys=True) + "\n"


def save_correspondences(correspondences: Sequence[Correspondence], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(correspondences_to_json(correspondences))
