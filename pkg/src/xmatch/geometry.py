"""Camera, depth, and pose types plus the projection/consistency math used for
correspondence ground truth: depth-warped projection, warped-depth and cycle
errors with their keep gates, view overlap, and relative pose error.

Pixel convention: (0,0) is the center of the top-left pixel, so the bilinear
sampling domain of a WxH image is [0, W-1] x [0, H-1]. Depth values <= 0 are
invalid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Keep gates for a correspondence: relative warped-depth error and pixel cycle error.
DEPTH_ERROR_GATE = 0.05
CYCLE_ERROR_GATE_PX = 3.0

# Pair-mining interval for the view overlap ratio.
OVERLAP_INTERVAL = (0.1, 0.7)


class GeometryError(Exception):
    """Base class for geometry failures."""


class NonPositiveDepthError(GeometryError):
    pass


class InvalidDepthError(GeometryError):
    pass


class OutOfBoundsError(GeometryError):
    pass


class GeometryMissingError(GeometryError):
    """A view lacks the depth map or pose required by the operation."""


class NoValidDepthError(GeometryError):
    pass


class DegenerateTranslationError(GeometryError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; fx/fy/cx/cy in pixels, image size in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside image")


@dataclass(frozen=True)
class RigidPose:
    """World-to-camera rigid transform: X_cam = rotation @ X_world + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise ValueError("pose entries must be finite")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-9:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1 within 1e-9")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidPose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidPose":
        rt = self.rotation.T
        return RigidPose(rt, -rt @ self.translation)

    def compose(self, other: "RigidPose") -> "RigidPose":
        """self after other: (self.compose(other))(X) = self(other(X))."""
        return RigidPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def transform(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


def relative_pose(left: RigidPose, right: RigidPose) -> RigidPose:
    """Left-camera-to-right-camera transform from two world-to-camera poses."""
    return right.compose(left.inverse())


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth in scene units; values <= 0 mark invalid pixels."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.size == 0:
            raise ValueError(f"depth map must be a nonempty 2D array, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("depth values must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def valid_mask(self) -> np.ndarray:
        return self.values > 0


@dataclass(frozen=True)
class Correspondence:
    """A left-to-right pixel match with matcher confidence."""

    left: tuple[float, float]
    right: tuple[float, float]
    confidence: float = 1.0

    def __post_init__(self):
        coords = (*self.left, *self.right, self.confidence)
        if not all(math.isfinite(v) for v in coords):
            raise ValueError("correspondence coordinates and confidence must be finite")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


def as_match_array(corrs) -> np.ndarray:
    """Coerce correspondences to an (N,5) float64 array [x0,y0,x1,y1,conf]."""
    if isinstance(corrs, np.ndarray):
        arr = np.asarray(corrs, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] not in (4, 5):
            raise ValueError(f"match array must be (N,4) or (N,5), got {arr.shape}")
        if arr.shape[1] == 4:
            arr = np.hstack([arr, np.ones((len(arr), 1))])
        return arr
    rows = [(c.left[0], c.left[1], c.right[0], c.right[1], c.confidence) for c in corrs]
    return np.asarray(rows, dtype=np.float64).reshape(-1, 5)


def matches_from_array(arr: np.ndarray) -> list[Correspondence]:
    arr = as_match_array(arr)
    return [
        Correspondence((row[0], row[1]), (row[2], row[3]), row[4]) for row in arr
    ]


@dataclass(frozen=True)
class PlanarTransform:
    """A 3x3 pixel-coordinate transform; kind is similarity, affine, or homography."""

    kind: str
    matrix: np.ndarray

    def __post_init__(self):
        if self.kind not in ("similarity", "affine", "homography"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise ValueError("matrix must be a finite 3x3 array")
        if abs(np.linalg.det(m)) <= 1e-12:
            raise ValueError("transform matrix is not invertible")
        if self.kind in ("similarity", "affine"):
            if not (m[2, 0] == 0.0 and m[2, 1] == 0.0 and m[2, 2] == 1.0):
                raise ValueError(f"{self.kind} transform requires exact [0,0,1] last row")
        if self.kind == "similarity":
            a = m[:2, :2]
            gram = a.T @ a
            scale2 = 0.5 * (gram[0, 0] + gram[1, 1])
            if np.max(np.abs(gram - scale2 * np.eye(2))) > 1e-6 * max(scale2, 1.0):
                raise ValueError("similarity transform has a non-similar linear part")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls, kind: str = "homography") -> "PlanarTransform":
        return cls(kind, np.eye(3))

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        m = self.matrix
        x, y = pts[:, 0], pts[:, 1]
        w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
        out = np.stack(
            [
                (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w,
                (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w,
            ],
            axis=1,
        )
        return out[0] if single else out

    def inverse(self) -> "PlanarTransform":
        inv = np.linalg.inv(self.matrix)
        if self.kind in ("similarity", "affine"):
            # Rebuild exactly so the [0,0,1] row survives floating point.
            a_inv = np.linalg.inv(self.matrix[:2, :2])
            inv = np.eye(3)
            inv[:2, :2] = a_inv
            inv[:2, 2] = -a_inv @ self.matrix[:2, 2]
        return PlanarTransform(self.kind, inv)

    def compose(self, other: "PlanarTransform") -> "PlanarTransform":
        """self after other, acting on pixel coordinates."""
        kind = "homography"
        if self.kind != "homography" and other.kind != "homography":
            kind = "affine" if "affine" in (self.kind, other.kind) else "similarity"
        return PlanarTransform(kind, self.matrix @ other.matrix)


@dataclass(frozen=True)
class RelativePoseEstimate:
    """A rotation plus translation direction (scale-free two-view pose)."""

    rotation: np.ndarray
    translation_direction: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation_direction, dtype=np.float64).reshape(3)
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-9 or abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ValueError("rotation is not a proper rotation within 1e-9")
        norm = float(np.linalg.norm(t))
        if norm < 1e-12:
            raise DegenerateTranslationError("translation direction has near-zero norm")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation_direction", t / norm)


@dataclass(frozen=True)
class PosedView:
    """An image observed by a posed, calibrated camera.

    image and depth are optional; operations that need them raise
    GeometryMissingError when absent.
    """

    intrinsics: CameraIntrinsics
    pose: RigidPose | None = None
    depth: DepthMap | None = None
    image: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.depth is not None:
            if (self.depth.height, self.depth.width) != (self.intrinsics.height, self.intrinsics.width):
                raise ValueError(
                    f"depth map {self.depth.width}x{self.depth.height} does not match "
                    f"camera {self.intrinsics.width}x{self.intrinsics.height}"
                )
        if self.image is not None:
            img = np.asarray(self.image)
            if img.shape[:2] != (self.intrinsics.height, self.intrinsics.width):
                raise ValueError("image dimensions do not match camera")
            object.__setattr__(self, "image", img)


# ---------------------------------------------------------------------------
# Core math. These helpers accept either scalars or same-shaped arrays and use
# identical elementwise expressions in both cases, so a vectorized call agrees
# bitwise with a per-point loop.


def _transport(rot: np.ndarray, trans: np.ndarray, x, y, z):
    xr = rot[0, 0] * x + rot[0, 1] * y + rot[0, 2] * z + trans[0]
    yr = rot[1, 0] * x + rot[1, 1] * y + rot[1, 2] * z + trans[1]
    zr = rot[2, 0] * x + rot[2, 1] * y + rot[2, 2] * z + trans[2]
    return xr, yr, zr


def _lift_project(
    x, y, depth, intr_l: CameraIntrinsics, intr_r: CameraIntrinsics, xi_lr: RigidPose
):
    """Backproject (x, y, depth) with the left camera, transport, project with
    the right camera. Returns (x_proj, y_proj, d_proj); d_proj may be <= 0."""
    px = (x - intr_l.cx) / intr_l.fx * depth
    py = (y - intr_l.cy) / intr_l.fy * depth
    xr, yr, zr = _transport(xi_lr.rotation, xi_lr.translation, px, py, depth)
    x_proj = intr_r.fx * (xr / zr) + intr_r.cx
    y_proj = intr_r.fy * (yr / zr) + intr_r.cy
    return x_proj, y_proj, zr


def _bilinear(values: np.ndarray, x, y):
    """Bilinear sample with validity. x/y are scalars or arrays inside or
    outside [0,W-1]x[0,H-1]; outside or any contributing neighbor <= 0 means
    invalid. Returns (sample, valid); sample is garbage where invalid."""
    h, w = values.shape
    in_bounds = (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)
    xc = np.clip(x, 0.0, w - 1.0)
    yc = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(xc).astype(np.int64)
    y0 = np.floor(yc).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    w00 = (1.0 - fx) * (1.0 - fy)
    w10 = fx * (1.0 - fy)
    w01 = (1.0 - fx) * fy
    w11 = fx * fy
    v00 = values[y0, x0]
    v10 = values[y0, x1]
    v01 = values[y1, x0]
    v11 = values[y1, x1]
    sample = w00 * v00 + w10 * v10 + w01 * v01 + w11 * v11
    bad = ((w00 > 0) & (v00 <= 0)) | ((w10 > 0) & (v10 <= 0))
    bad = bad | ((w01 > 0) & (v01 <= 0)) | ((w11 > 0) & (v11 <= 0))
    return sample, in_bounds & ~bad


# ---------------------------------------------------------------------------
# Operations.


def sample_depth_bilinear(depth: DepthMap, point) -> float | None:
    """Bilinearly sampled depth at a continuous point, or None when invalid.

    Invalid means the point lies outside [0,W-1]x[0,H-1] or any neighbor with
    nonzero interpolation weight stores a value <= 0.
    """
    x = float(point[0])
    y = float(point[1])
    sample, valid = _bilinear(depth.values, x, y)
    return float(sample) if valid else None


def lift_and_project(
    x_l,
    depth_l: float,
    intr_l: CameraIntrinsics,
    intr_r: CameraIntrinsics,
    xi_lr: RigidPose,
) -> tuple[tuple[float, float], float]:
    """Warp a left pixel into the right view through its depth.

    Returns (x_proj, d_proj) where d_proj is the transported point's depth in
    the right camera frame. d_proj <= 0 tags a point behind the right camera;
    that outcome is returned, not raised.
    """
    if depth_l <= 0:
        raise NonPositiveDepthError(f"depth {depth_l} is not positive")
    xp, yp, dp = _lift_project(float(x_l[0]), float(x_l[1]), float(depth_l), intr_l, intr_r, xi_lr)
    return (float(xp), float(yp)), float(dp)


def correspondence_errors(
    x_l,
    depth_l: DepthMap,
    depth_r: DepthMap,
    cams: tuple[CameraIntrinsics, CameraIntrinsics],
    xi_lr: RigidPose,
) -> tuple[float, float]:
    """Warped-depth error e_d and cycle reprojection error e_c for one pixel.

    e_d = |D_r(x_proj) - d_proj| / D_r(x_proj) with D_r sampled bilinearly;
    e_c warps x_proj back with the sampled right depth and the inverse
    relative pose and measures the pixel distance to x_l. Keep gates used by
    the grid filter: e_d < DEPTH_ERROR_GATE and e_c < CYCLE_ERROR_GATE_PX.
    """
    intr_l, intr_r = cams
    d_l = sample_depth_bilinear(depth_l, x_l)
    if d_l is None:
        raise InvalidDepthError(f"left depth invalid at {tuple(x_l)}")
    (xp, yp), d_proj = lift_and_project(x_l, d_l, intr_l, intr_r, xi_lr)
    if d_proj <= 0:
        raise OutOfBoundsError("transported point lies behind the right camera")
    if not (0.0 <= xp <= intr_r.width - 1.0 and 0.0 <= yp <= intr_r.height - 1.0):
        raise OutOfBoundsError(f"projection ({xp:.2f}, {yp:.2f}) outside right image")
    d_r = sample_depth_bilinear(depth_r, (xp, yp))
    if d_r is None:
        raise InvalidDepthError(f"right depth invalid at ({xp:.2f}, {yp:.2f})")
    e_d = abs(d_r - d_proj) / d_r
    (xb, yb), _ = lift_and_project((xp, yp), d_r, intr_r, intr_l, xi_lr.inverse())
    e_c = math.hypot(float(x_l[0]) - xb, float(x_l[1]) - yb)
    return float(e_d), float(e_c)


def _require_geometry(view: PosedView, name: str) -> None:
    if view.depth is None or view.pose is None:
        raise GeometryMissingError(f"{name} view lacks depth or pose")


def _consistency_masks(left: PosedView, right: PosedView, xs, ys):
    """Shared gate evaluation on arrays of left pixel coordinates.

    Returns (xp, yp, valid_left_depth, depth_consistent, e_c or None). The
    depth_consistent mask already requires a positive transported depth, an
    in-bounds projection, and a valid right depth sample.
    """
    intr_l, intr_r = left.intrinsics, right.intrinsics
    xi = relative_pose(left.pose, right.pose)
    d_l, valid_l = _bilinear(left.depth.values, xs, ys)
    # Guard the lift against invalid depths; masked out below.
    d_safe = np.where(valid_l, d_l, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        xp, yp, dp = _lift_project(xs, ys, d_safe, intr_l, intr_r, xi)
    in_front = dp > 0
    in_bounds = (xp >= 0.0) & (xp <= intr_r.width - 1.0) & (yp >= 0.0) & (yp <= intr_r.height - 1.0)
    computable = valid_l & in_front & in_bounds
    xp_safe = np.where(computable, xp, 0.0)
    yp_safe = np.where(computable, yp, 0.0)
    d_r, valid_r = _bilinear(right.depth.values, xp_safe, yp_safe)
    computable = computable & valid_r
    d_r_safe = np.where(computable, d_r, 1.0)
    e_d = np.abs(d_r_safe - dp) / d_r_safe
    consistent = computable & (e_d < DEPTH_ERROR_GATE)
    xb, yb, _ = _lift_project(xp_safe, yp_safe, d_r_safe, intr_r, intr_l, xi.inverse())
    e_c = np.hypot(xs - xb, ys - yb)
    return xp, yp, valid_l, consistent, e_c


def filter_grid_correspondences(
    left: PosedView, right: PosedView, grid_step: int = 8
) -> list[Correspondence]:
    """Grid-sampled correspondences that pass both keep gates.

    Left points are the grid_step lattice of the left image; each is warped
    through its depth and kept iff e_d < 0.05 and e_c < 3 px. Confidence is
    1.0. An empty result is valid output.
    """
    if grid_step < 1:
        raise ValueError(f"grid_step must be >= 1, got {grid_step}")
    _require_geometry(left, "left")
    _require_geometry(right, "right")
    gx = np.arange(0, left.intrinsics.width, grid_step, dtype=np.float64)
    gy = np.arange(0, left.intrinsics.height, grid_step, dtype=np.float64)
    xs, ys = np.meshgrid(gx, gy)
    xs, ys = xs.ravel(), ys.ravel()
    xp, yp, _, consistent, e_c = _consistency_masks(left, right, xs, ys)
    keep = consistent & (e_c < CYCLE_ERROR_GATE_PX)
    return [
        Correspondence((float(xs[i]), float(ys[i])), (float(xp[i]), float(yp[i])), 1.0)
        for i in np.flatnonzero(keep)
    ]


def overlap_ratio(left: PosedView, right: PosedView) -> float:
    """Fraction of valid-depth left pixels whose warp lands in the right image
    with e_d < 0.05. Not symmetric in its arguments."""
    _require_geometry(left, "left")
    _require_geometry(right, "right")
    xs, ys = np.meshgrid(
        np.arange(left.intrinsics.width, dtype=np.float64),
        np.arange(left.intrinsics.height, dtype=np.float64),
    )
    xs, ys = xs.ravel(), ys.ravel()
    _, _, valid_l, consistent, _ = _consistency_masks(left, right, xs, ys)
    denom = int(np.count_nonzero(valid_l))
    if denom == 0:
        raise NoValidDepthError("left view has no valid depth")
    return int(np.count_nonzero(consistent)) / denom


def relative_pose_error(
    est: RelativePoseEstimate, gt: RelativePoseEstimate
) -> tuple[float, float, float]:
    """Rotation error, translation-direction error, and their max, in degrees.

    R_err = arccos((trace(R_est^T R_gt) - 1) / 2); t_err is the angle between
    the two translation directions. arccos arguments are clamped to [-1, 1].
    """
    for t in (est.translation_direction, gt.translation_direction):
        if np.linalg.norm(t) < 1e-12:
            raise DegenerateTranslationError("translation direction has near-zero norm")
    trace = float(np.trace(est.rotation.T @ gt.rotation))
    r_err = math.degrees(math.acos(min(1.0, max(-1.0, (trace - 1.0) / 2.0))))
    cos_t = float(
        np.dot(est.translation_direction, gt.translation_direction)
        / (np.linalg.norm(est.translation_direction) * np.linalg.norm(gt.translation_direction))
    )
    t_err = math.degrees(math.acos(min(1.0, max(-1.0, cos_t))))
    return r_err, t_err, max(r_err, t_err)
