"""Readers and writers for on-disk artifacts.

Covers depth maps (PFM, 16-bit PNG with a scale sidecar), camera files,
pair manifests, match files (JSON Lines and the compact XMF1 binary),
model files, and landmark tables. All writers are deterministic: the same
inputs produce byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .fitting import BSplineField
from .geometry import (
    CameraIntrinsics,
    DepthMap,
    PlanarTransform,
    RelativePoseEstimate,
    RigidPose,
)

MATCH_MAGIC = b"XMF1"
LANDMARK_HEADER = "x_src,y_src,x_dst,y_dst"

_MATCH_HEADER_KEYS = ("left", "right", "width0", "height0", "width1", "height1")
_MANIFEST_KEYS = ("left_path", "right_path", "gt_kind", "gt", "modalities", "seed", "source")


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True)


# ---------------------------------------------------------------------------
# depth maps


def write_pfm(path, values) -> None:
    """Grayscale PFM, little-endian (scale line "-1.0"), rows bottom-up."""
    arr = np.asarray(values, dtype="<f4")
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("PFM payload must be a nonempty 2D array")
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(arr[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    lines = []
    offset = 0
    for _ in range(3):
        end = raw.find(b"\n", offset)
        if end < 0:
            raise ValueError("truncated PFM header")
        lines.append(raw[offset:end].decode("ascii", "replace").strip())
        offset = end + 1
    if lines[0] != "Pf":
        raise ValueError(f"not a grayscale PFM file (magic {lines[0]!r})")
    try:
        width, height = (int(v) for v in lines[1].split())
        scale = float(lines[2])
    except ValueError as exc:
        raise ValueError("malformed PFM header") from exc
    if width <= 0 or height <= 0 or scale == 0.0:
        raise ValueError("malformed PFM header")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(raw, dtype=dtype, count=width * height, offset=offset)
    if data.size != width * height:
        raise ValueError("PFM payload shorter than header promises")
    return data.reshape(height, width)[::-1].astype(np.float64)


def _sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def write_depth_png(path, values, scale: float) -> None:
    """16-bit grayscale PNG storing rint(values/scale), plus a JSON sidecar."""
    if not (scale > 0):
        raise ValueError("scale must be positive")
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("depth payload must be a nonempty 2D array")
    quantized = np.rint(arr / scale)
    if quantized.min() < 0 or quantized.max() > 65535:
        raise ValueError("depth values do not fit 16 bits at this scale")
    Image.fromarray(quantized.astype(np.uint16)).save(path)
    with open(_sidecar_path(path), "w") as fh:
        fh.write(_dumps({"scale": scale}) + "\n")


def read_depth_png(path) -> np.ndarray:
    with open(_sidecar_path(path)) as fh:
        scale = json.load(fh)["scale"]
    if not (isinstance(scale, (int, float)) and scale > 0):
        raise ValueError("sidecar scale must be a positive number")
    raw = np.asarray(Image.open(path), dtype=np.float64)
    if raw.ndim != 2:
        raise ValueError("depth PNG must be single-channel")
    return raw * float(scale)


def read_depth_file(path) -> DepthMap:
    """Dispatch on extension: .pfm or 16-bit .png with sidecar."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return DepthMap(read_pfm(path))
    if suffix == ".png":
        return DepthMap(read_depth_png(path))
    raise ValueError(f"unsupported depth format {suffix!r}")


# ---------------------------------------------------------------------------
# cameras


def write_camera_file(path, intrinsics: CameraIntrinsics, pose: RigidPose) -> None:
    m = np.eye(4)
    m[:3, :3] = pose.rotation
    m[:3, 3] = pose.translation
    obj = {
        "fx": intrinsics.fx,
        "fy": intrinsics.fy,
        "cx": intrinsics.cx,
        "cy": intrinsics.cy,
        "width": intrinsics.width,
        "height": intrinsics.height,
        "pose": [float(v) for v in m.reshape(-1)],
    }
    with open(path, "w") as fh:
        fh.write(_dumps(obj) + "\n")


def read_camera_file(path) -> tuple[CameraIntrinsics, RigidPose]:
    with open(path) as fh:
        obj = json.load(fh)
    try:
        intr = CameraIntrinsics(
            obj["fx"], obj["fy"], obj["cx"], obj["cy"], obj["width"], obj["height"]
        )
        pose_entries = obj["pose"]
    except KeyError as exc:
        raise ValueError(f"camera file missing key {exc}") from exc
    if len(pose_entries) != 16:
        raise ValueError("camera pose must hold 16 row-major numbers")
    m = np.asarray(pose_entries, dtype=np.float64).reshape(4, 4)
    if np.max(np.abs(m[3] - (0.0, 0.0, 0.0, 1.0))) > 1e-9:
        raise ValueError("camera pose bottom row must be [0,0,0,1]")
    return intr, RigidPose(m[:3, :3], m[:3, 3])


# ---------------------------------------------------------------------------
# JSON Lines helpers


def write_jsonl(path, records, provenance: dict | None = None) -> None:
    with open(path, "w") as fh:
        if provenance is not None:
            fh.write(_dumps({"type": "provenance", **provenance}) + "\n")
        for rec in records:
            fh.write(_dumps(rec) + "\n")


def read_jsonl(path, skip_tagged: bool = True) -> list[dict]:
    """Read data records; records carrying a "type" key are headers, skipped."""
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if skip_tagged and isinstance(rec, dict) and "type" in rec:
                continue
            out.append(rec)
    return out


def write_pair_manifest(path, records, provenance: dict | None = None) -> None:
    for rec in records:
        missing = [k for k in _MANIFEST_KEYS if k not in rec]
        if missing:
            raise ValueError(f"pair record missing keys {missing}")
        if rec["gt_kind"] not in ("homography", "matches"):
            raise ValueError(f"unknown gt_kind {rec['gt_kind']!r}")
    write_jsonl(path, records, provenance)


def read_pair_manifest(path) -> list[dict]:
    records = read_jsonl(path)
    for rec in records:
        missing = [k for k in _MANIFEST_KEYS if k not in rec]
        if missing:
            raise ValueError(f"pair record missing keys {missing}")
        if rec["gt_kind"] not in ("homography", "matches"):
            raise ValueError(f"unknown gt_kind {rec['gt_kind']!r}")
    return records


# ---------------------------------------------------------------------------
# match files


def write_match_file(path, matches, header: dict) -> None:
    """JSON Lines match file: a pair_header record, then one row per match."""
    missing = [k for k in _MATCH_HEADER_KEYS if k not in header]
    if missing:
        raise ValueError(f"match header missing keys {missing}")
    arr = np.asarray(matches, dtype=np.float64)
    if arr.size == 0:
        arr = arr.reshape(0, 5)
    if arr.ndim != 2 or arr.shape[1] != 5:
        raise ValueError(f"matches must be (N, 5), got {arr.shape}")
    with open(path, "w") as fh:
        fh.write(_dumps({"type": "pair_header", **{k: header[k] for k in _MATCH_HEADER_KEYS}}) + "\n")
        for x0, y0, x1, y1, conf in arr:
            fh.write(_dumps({"conf": conf, "x0": x0, "x1": x1, "y0": y0, "y1": y1}) + "\n")


def read_match_file(path) -> tuple[dict, np.ndarray]:
    header = None
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "type" in rec:
                if rec["type"] == "pair_header":
                    header = {k: rec[k] for k in _MATCH_HEADER_KEYS}
                continue
            rows.append((rec["x0"], rec["y0"], rec["x1"], rec["y1"], rec["conf"]))
    if header is None:
        raise ValueError("match file has no pair_header record")
    arr = np.asarray(rows, dtype=np.float64).reshape(len(rows), 5)
    return header, arr


def write_match_binary(path, matches) -> None:
    arr = np.asarray(matches, dtype="<f4")
    if arr.size == 0:
        arr = arr.reshape(0, 5)
    if arr.ndim != 2 or arr.shape[1] != 5:
        raise ValueError(f"matches must be (N, 5), got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(MATCH_MAGIC)
        fh.write(struct.pack("<I", len(arr)))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_match_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MATCH_MAGIC:
        raise ValueError("not an XMF1 match file")
    if len(raw) < 8:
        raise ValueError("truncated XMF1 header")
    (count,) = struct.unpack("<I", raw[4:8])
    data = np.frombuffer(raw, dtype="<f4", count=count * 5, offset=8)
    if data.size != count * 5:
        raise ValueError("XMF1 payload shorter than header promises")
    return data.reshape(count, 5).astype(np.float64)


def read_matches(path) -> np.ndarray:
    """Read either match format, sniffing the binary magic."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == MATCH_MAGIC:
        return read_match_binary(path)
    return read_match_file(path)[1]


# ---------------------------------------------------------------------------
# model files


def write_model_file(path, model, inlier_indices) -> None:
    inliers = [int(i) for i in inlier_indices]
    if isinstance(model, PlanarTransform):
        obj = {"kind": model.kind, "matrix": [float(v) for v in model.matrix.reshape(-1)]}
    elif isinstance(model, RelativePoseEstimate):
        obj = {
            "kind": "pose",
            "pose": {
                "R": [float(v) for v in model.rotation.reshape(-1)],
                "t": [float(v) for v in model.translation_direction],
            },
        }
    elif isinstance(model, BSplineField):
        gx, gy = model.grid_shape
        obj = {
            "kind": "bspline",
            "bspline": {
                "gx": gx,
                "gy": gy,
                "spacing": model.spacing,
                "origin": [float(v) for v in model.origin],
                "displacements": [float(v) for v in model.displacements.reshape(-1)],
            },
        }
    elif isinstance(model, np.ndarray) and model.shape == (3, 3):
        # fundamental/essential matrices carry no planar kind of their own
        obj = {"kind": "epipolar", "matrix": [float(v) for v in model.reshape(-1)]}
    else:
        raise ValueError(f"unsupported model type {type(model).__name__}")
    obj["inliers"] = inliers
    with open(path, "w") as fh:
        fh.write(_dumps(obj) + "\n")


def read_model_file(path) -> tuple[str, object, list[int]]:
    with open(path) as fh:
        obj = json.load(fh)
    kind = obj.get("kind")
    inliers = [int(i) for i in obj.get("inliers", [])]
    if kind in ("similarity", "affine", "homography"):
        model = PlanarTransform(kind, np.asarray(obj["matrix"], dtype=np.float64).reshape(3, 3))
    elif kind == "epipolar":
        model = np.asarray(obj["matrix"], dtype=np.float64).reshape(3, 3)
    elif kind == "pose":
        pose = obj["pose"]
        model = RelativePoseEstimate(
            np.asarray(pose["R"], dtype=np.float64).reshape(3, 3),
            np.asarray(pose["t"], dtype=np.float64),
        )
    elif kind == "bspline":
        b = obj["bspline"]
        model = BSplineField(
            np.asarray(b["displacements"], dtype=np.float64).reshape(b["gy"], b["gx"], 2),
            b["spacing"],
            tuple(b["origin"]),
        )
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return kind, model, inliers


# ---------------------------------------------------------------------------
# landmarks and images


def write_landmark_csv(path, points) -> None:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 4 or len(arr) == 0:
        raise ValueError(f"landmarks must be (N, 4), got {arr.shape}")
    with open(path, "w") as fh:
        fh.write(LANDMARK_HEADER + "\n")
        for row in arr:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_landmark_csv(path) -> np.ndarray:
    with open(path) as fh:
        lines = [line.strip() for line in fh if line.strip()]
    if not lines or lines[0] != LANDMARK_HEADER:
        raise ValueError(f"landmark file must start with header {LANDMARK_HEADER!r}")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 4:
            raise ValueError(f"landmark row has {len(parts)} columns, expected 4")
        rows.append([float(v) for v in parts])
    if not rows:
        raise ValueError("landmark file has no rows")
    return np.asarray(rows, dtype=np.float64)


def load_image(path) -> np.ndarray:
    return np.asarray(Image.open(path))


def save_image(path, image) -> None:
    Image.fromarray(np.asarray(image)).save(path)
