"""Versioned JSON dataset schema: loading, validation, and emission.

The package consumes detections and ground truths from one neutral,
self-describing file format instead of dataset-native loaders; converters
from specific benchmarks are left to the user. See SCHEMA_REFERENCE (or
``egoeval schema``) for the field-by-field contract.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import SchemaError, UnmappedLabel
from .evaluation import FAMILIES, VISIBILITIES, FrameAnnotations, GroundTruth
from .geometry import Box3D, CameraModel

SCHEMA_VERSION = "1"

SCHEMA_REFERENCE = """\
egoeval dataset schema, version 1 (JSON)

Units and conventions
  - distances in meters, angles in radians, scores unitless in [0, 1]
  - ego frame: x forward, y left, z up; the ego reference point is the
    frame origin and all safety weighting is anchored there
  - camera frame: z along the optical axis, x right, y down
  - box size is [width, length, height]; length runs along the heading
    (local x) axis, width along local y; yaw rotates about +z
  - footprint corners are counter-clockwise from the front-left corner:
    (+l/2, +w/2), (-l/2, +w/2), (-l/2, -w/2), (+l/2, -w/2) in the box
    local frame; a box's 8 corners are the 4 bottom corners (z = -h/2)
    in that order, then the 4 top corners

Top level
  version      string, must be "1"
  class_map    object: label -> family, one of
               "car-like" | "bicycle-like" | "pedestrian" | "ignore";
               every label used by any box must be mapped
  frames       array of frame objects

Frame
  frame_id     string, unique within the file
  ego_pose     optional rigid world->ego transform {rotation: 3x3 row
               major, translation: [x, y, z]}; when present, all boxes in
               the frame are interpreted in the world frame and converted
               to the ego frame on load (the rotation must be planar,
               i.e. a yaw-only rotation). Emitted normalized files carry
               boxes in the ego frame and no ego_pose.
  camera       {focal: > 0, rotation: 3x3 row major (ego->camera, proper
               orthonormal), translation: [x, y, z],
               hfov_half: optional (0, pi], vfov_half: optional (0, pi]}
               When the field-of-view bounds are absent, ego-view
               filtering assumes the forward hemisphere.
  ground_truths  array of {center: [x, y, z], size: [w, l, h], yaw,
               label, visibility: "full" | "partial" | "occluded" |
               "out_of_fov" (default "full")}
  detections   array of {center, size, yaw, label, score: [0, 1]}
"""


@dataclass(frozen=True)
class DatasetFile:
    version: str
    frames: tuple[FrameAnnotations, ...]
    class_map: dict


def _expect(obj, key, kind, where):
    if key not in obj:
        raise SchemaError("missing required field", f"{where}.{key}")
    val = obj[key]
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise SchemaError(f"expected a number, got {type(val).__name__}",
                              f"{where}.{key}")
        return float(val)
    if not isinstance(val, kind):
        raise SchemaError(f"expected {kind.__name__}, got {type(val).__name__}",
                          f"{where}.{key}")
    return val


def _vector(obj, key, n, where):
    val = _expect(obj, key, list, where)
    if len(val) != n or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                for v in val):
        raise SchemaError(f"expected {n} numbers", f"{where}.{key}")
    vec = tuple(float(v) for v in val)
    if not all(math.isfinite(v) for v in vec):
        raise SchemaError("values must be finite", f"{where}.{key}")
    return vec


def _matrix3(obj, key, where):
    val = _expect(obj, key, list, where)
    if len(val) != 3:
        raise SchemaError("expected a 3x3 matrix", f"{where}.{key}")
    rows = []
    for i, row in enumerate(val):
        if not isinstance(row, list) or len(row) != 3:
            raise SchemaError("expected a 3x3 matrix", f"{where}.{key}[{i}]")
        rows.append(tuple(float(v) for v in row))
    return tuple(rows)


def _parse_camera(obj, where) -> CameraModel:
    focal = _expect(obj, "focal", float, where)
    rotation = _matrix3(obj, "rotation", where)
    translation = _vector(obj, "translation", 3, where) if "translation" in obj \
        else (0.0, 0.0, 0.0)
    hfov = obj.get("hfov_half")
    vfov = obj.get("vfov_half")
    try:
        return CameraModel(focal=focal, rotation=rotation, translation=translation,
                           hfov_half=hfov, vfov_half=vfov)
    except ValueError as exc:
        raise SchemaError(str(exc), where) from exc


def _parse_box(obj, where, class_map, need_score: bool,
               pose: tuple | None) -> Box3D:
    center = _vector(obj, "center", 3, where)
    size = _vector(obj, "size", 3, where)
    yaw = _expect(obj, "yaw", float, where)
    label = _expect(obj, "label", str, where)
    if label not in class_map:
        raise UnmappedLabel(f"label {label!r} is not in class_map", where)
    score = None
    if need_score:
        score = _expect(obj, "score", float, where)
        if not 0.0 <= score <= 1.0:
            raise SchemaError(f"score must lie in [0, 1], got {score}",
                              f"{where}.score")
    elif "score" in obj:
        score = _expect(obj, "score", float, where)
    if pose is not None:
        rot, trans, d_yaw = pose
        center = tuple(rot @ np.array(center) + np.array(trans))
        yaw = yaw + d_yaw
    try:
        return Box3D(center=center, size=size, yaw=yaw, label=label, score=score)
    except ValueError as exc:
        raise SchemaError(str(exc), where) from exc


def _parse_pose(obj, where):
    rotation = _matrix3(obj, "rotation", where)
    translation = _vector(obj, "translation", 3, where)
    r = np.array(rotation)
    if np.abs(r @ r.T - np.eye(3)).max() > 1e-6 or np.linalg.det(r) < 0.0:
        raise SchemaError("rotation must be a proper orthonormal matrix",
                          f"{where}.rotation")
    planar = (abs(r[2, 2] - 1.0) < 1e-6 and abs(r[0, 2]) < 1e-6
              and abs(r[1, 2]) < 1e-6 and abs(r[2, 0]) < 1e-6
              and abs(r[2, 1]) < 1e-6)
    if not planar:
        raise SchemaError("ego_pose rotation must be a yaw-only (planar) rotation",
                          f"{where}.rotation")
    d_yaw = math.atan2(r[1, 0], r[0, 0])
    return r, np.array(translation), d_yaw


def parse_dataset(doc: dict) -> DatasetFile:
    """Validate a decoded JSON document into an in-memory dataset."""
    if not isinstance(doc, dict):
        raise SchemaError("top level must be an object", "$")
    version = _expect(doc, "version", str, "$")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported version {version!r} (expected "
                          f"{SCHEMA_VERSION!r})", "$.version")
    class_map = _expect(doc, "class_map", dict, "$")
    for label, family in class_map.items():
        if family not in FAMILIES:
            raise SchemaError(f"family must be one of {FAMILIES}, got {family!r}",
                              f"$.class_map.{label}")
    frames_doc = _expect(doc, "frames", list, "$")
    frames = []
    seen_ids = set()
    for fi, frame_obj in enumerate(frames_doc):
        where = f"$.frames[{fi}]"
        if not isinstance(frame_obj, dict):
            raise SchemaError("frame must be an object", where)
        frame_id = _expect(frame_obj, "frame_id", str, where)
        if frame_id in seen_ids:
            raise SchemaError(f"duplicate frame_id {frame_id!r}", f"{where}.frame_id")
        seen_ids.add(frame_id)
        camera = _parse_camera(_expect(frame_obj, "camera", dict, where),
                               f"{where}.camera")
        pose = None
        if "ego_pose" in frame_obj:
            pose = _parse_pose(_expect(frame_obj, "ego_pose", dict, where),
                               f"{where}.ego_pose")
        gts = []
        for gi, g in enumerate(frame_obj.get("ground_truths", [])):
            gw = f"{where}.ground_truths[{gi}]"
            if not isinstance(g, dict):
                raise SchemaError("ground truth must be an object", gw)
            visibility = g.get("visibility", "full")
            if visibility not in VISIBILITIES:
                raise SchemaError(f"visibility must be one of {VISIBILITIES}",
                                  f"{gw}.visibility")
            box = _parse_box(g, gw, class_map, need_score=False, pose=pose)
            gts.append(GroundTruth(box=box, visibility=visibility))
        dets = []
        for di, d in enumerate(frame_obj.get("detections", [])):
            dw = f"{where}.detections[{di}]"
            if not isinstance(d, dict):
                raise SchemaError("detection must be an object", dw)
            dets.append(_parse_box(d, dw, class_map, need_score=True, pose=pose))
        frames.append(FrameAnnotations(frame_id=frame_id, camera=camera,
                                       ground_truths=tuple(gts),
                                       detections=tuple(dets)))
    return DatasetFile(version=version, frames=tuple(frames), class_map=dict(class_map))


def load_dataset(path) -> DatasetFile:
    """Load and fully validate a dataset file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: "
                          f"{exc.msg}") from exc
    return parse_dataset(doc)


def _box_to_obj(box: Box3D, with_score: bool) -> dict:
    obj = {"center": list(box.center), "size": list(box.size),
           "yaw": box.yaw, "label": box.label}
    if with_score and box.score is not None:
        obj["score"] = box.score
    return obj


def dataset_to_doc(ds: DatasetFile) -> dict:
    """Normalized JSON document (boxes in the ego frame, no ego_pose)."""
    frames = []
    for fr in ds.frames:
        cam = {"focal": fr.camera.focal,
               "rotation": [list(r) for r in fr.camera.rotation],
               "translation": list(fr.camera.translation)}
        if fr.camera.hfov_half is not None:
            cam["hfov_half"] = fr.camera.hfov_half
        if fr.camera.vfov_half is not None:
            cam["vfov_half"] = fr.camera.vfov_half
        frames.append({
            "frame_id": fr.frame_id,
            "camera": cam,
            "ground_truths": [
                {**_box_to_obj(g.box, with_score=False), "visibility": g.visibility}
                for g in fr.ground_truths
            ],
            "detections": [_box_to_obj(d, with_score=True) for d in fr.detections],
        })
    return {"version": ds.version, "class_map": dict(sorted(ds.class_map.items())),
            "frames": frames}


def save_dataset(ds: DatasetFile, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dataset_to_doc(ds), fh, indent=2, sort_keys=True)
        fh.write("\n")
