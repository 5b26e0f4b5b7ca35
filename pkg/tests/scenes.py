"""Synthetic fixtures shared across the test suite.

Everything here is analytic: depth maps are rendered from closed-form scenes
so that projection consistency holds to machine precision and every expected
quantity can be recomputed independently inside a test.
"""

from __future__ import annotations

import math

import numpy as np

from xmatch.geometry import CameraIntrinsics, DepthMap, PosedView, RigidPose


def rot_axis_angle(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation matrix about `axis` by `angle_rad`."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]], dtype=np.float64)
    return np.eye(3) + math.sin(angle_rad) * k + (1.0 - math.cos(angle_rad)) * (k @ k)


def camera_at(center, intr: CameraIntrinsics, rotation: np.ndarray | None = None) -> RigidPose:
    """World-to-camera pose for a camera centered at `center` with given world
    orientation (rows of `rotation` are the camera axes)."""
    rot = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    return RigidPose(rot, -rot @ center)


def render_plane_box_depth(
    intr: CameraIntrinsics,
    center,
    plane_z: float = 6.0,
    box_z: float = 4.2,
    box_x: tuple[float, float] = (-0.9, 0.3),
    box_y: tuple[float, float] = (-0.8, 0.5),
    with_box: bool = True,
) -> DepthMap:
    """Depth of a fronto-parallel plane plus a floating box face, viewed by an
    axis-aligned camera centered at `center` looking down +z.

    The box face is a slab at z=box_z covering box_x x box_y in world
    coordinates; rays hitting it read box_z, all others read plane_z.
    """
    cx, cy = float(center[0]), float(center[1])
    us, vs = np.meshgrid(
        np.arange(intr.width, dtype=np.float64), np.arange(intr.height, dtype=np.float64)
    )
    dx = (us - intr.cx) / intr.fx
    dy = (vs - intr.cy) / intr.fy
    depth = np.full((intr.height, intr.width), plane_z)
    if with_box:
        # Ray-slab intersection point in world coordinates at z = box_z.
        wx = dx * box_z + cx
        wy = dy * box_z + cy
        hit = (wx >= box_x[0]) & (wx <= box_x[1]) & (wy >= box_y[0]) & (wy <= box_y[1])
        depth[hit] = box_z
    return DepthMap(depth)


def shaded_image(intr: CameraIntrinsics, depth: DepthMap) -> np.ndarray:
    """Deterministic grayscale rendering keyed to depth and pixel position."""
    us, vs = np.meshgrid(
        np.arange(intr.width, dtype=np.float64), np.arange(intr.height, dtype=np.float64)
    )
    shade = 96.0 + 20.0 * np.sin(us / 7.0) + 20.0 * np.cos(vs / 11.0)
    shade = shade + np.where(depth.values < 5.0, 60.0, 0.0)
    return np.clip(np.rint(shade), 0, 255).astype(np.uint8)


def plane_box_views(
    width: int = 256,
    height: int = 256,
    baseline: float = 0.6,
    with_box: bool = True,
    invalid_patch: bool = False,
    with_images: bool = False,
) -> tuple[PosedView, PosedView]:
    """Two axis-aligned views of the plane+box scene, right camera shifted
    along +x by `baseline` scene units."""
    intr = CameraIntrinsics(280.0, 280.0, (width - 1) / 2.0, (height - 1) / 2.0, width, height)
    centers = ((0.0, 0.0), (baseline, 0.0))
    views = []
    for cx, cy in centers:
        depth = render_plane_box_depth(intr, (cx, cy), with_box=with_box)
        if invalid_patch:
            vals = depth.values.copy()
            vals[8:24, 8:24] = 0.0
            depth = DepthMap(vals)
        img = shaded_image(intr, depth) if with_images else None
        views.append(PosedView(intr, camera_at((cx, cy, 0.0), intr), depth, img))
    return views[0], views[1]


def two_view_cloud(
    seed: int,
    n_points: int = 100,
    rotation_deg: float = 8.0,
    translation=(0.8, 0.15, 0.1),
    width: int = 640,
    height: int = 480,
):
    """A nonplanar 3D point cloud seen by two cameras.

    Returns (matches (N,5), intr_l, intr_r, xi_lr) where matches hold exact
    pixel projections with confidence 1 and xi_lr is the left-to-right pose.
    Points are rejection-sampled so every projection lands inside both images
    with positive depth.
    """
    rng = np.random.default_rng(seed)
    intr = CameraIntrinsics(520.0, 510.0, (width - 1) / 2.0, (height - 1) / 2.0, width, height)
    axis = rng.normal(size=3)
    rot = rot_axis_angle(axis, math.radians(rotation_deg))
    t = np.asarray(translation, dtype=np.float64)
    pose_l = RigidPose.identity()
    pose_r = RigidPose(rot, t)

    def project(intrnsc, pts):
        x = intrnsc.fx * pts[:, 0] / pts[:, 2] + intrnsc.cx
        y = intrnsc.fy * pts[:, 1] / pts[:, 2] + intrnsc.cy
        return np.stack([x, y], axis=1)

    pts = np.empty((0, 3))
    while len(pts) < n_points:
        batch = np.stack(
            [
                rng.uniform(-3.0, 3.0, size=256),
                rng.uniform(-2.2, 2.2, size=256),
                rng.uniform(4.0, 12.0, size=256),
            ],
            axis=1,
        )
        in_r = batch @ rot.T + t
        pl = project(intr, batch)
        pr = project(intr, in_r)
        ok = (
            (in_r[:, 2] > 0.1)
            & (pl[:, 0] >= 0) & (pl[:, 0] <= width - 1)
            & (pl[:, 1] >= 0) & (pl[:, 1] <= height - 1)
            & (pr[:, 0] >= 0) & (pr[:, 0] <= width - 1)
            & (pr[:, 1] >= 0) & (pr[:, 1] <= height - 1)
        )
        pts = np.vstack([pts, batch[ok]])
    pts = pts[:n_points]
    left = project(intr, pts)
    right = project(intr, pts @ rot.T + t)
    matches = np.hstack([left, right, np.ones((n_points, 1))])
    xi_lr = pose_r.compose(pose_l.inverse())
    return matches, intr, intr, xi_lr
