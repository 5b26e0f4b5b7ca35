"""Robust model estimation: RANSAC over planar/epipolar models, pose
recovery from an essential matrix, and SGD-fit B-spline deformation fields.

Planar residuals are symmetric: max of forward and inverse reprojection
distance in pixels. Epipolar residuals are Sampson distances; fundamental
matrices work in pixels, essential matrices in K^-1-normalized coordinates
(pixel inputs are normalized internally whenever intrinsics are supplied).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    CameraIntrinsics,
    PlanarTransform,
    RelativePoseEstimate,
    as_match_array,
)


class FitError(Exception):
    pass


class InsufficientDataError(FitError):
    pass


class DegenerateConfigurationError(FitError):
    pass


class NoModelError(FitError):
    """RANSAC found no hypothesis supported by at least a minimal sample."""


class CheiralityAmbiguousError(FitError):
    """No pose candidate places a clear majority of points in front."""


class DivergedError(FitError):
    pass


MINIMAL_SAMPLE = {"affine": 3, "homography": 4, "fundamental": 8, "essential": 8}
DEFAULT_THRESHOLD = {"affine": 3.0, "homography": 3.0, "fundamental": 2.0, "essential": 3e-3}


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 1000
    confidence: float = 0.99999
    inlier_threshold: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie strictly between 0 and 1")
        if self.inlier_threshold is not None and self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")


@dataclass(frozen=True)
class FitResult:
    model: object
    inlier_indices: np.ndarray
    iterations_run: int
    score: int
    kind: str = ""


# ---------------------------------------------------------------------------
# Direct solvers.


def _split(arr: np.ndarray):
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]


def solve_affine_lsq(corrs) -> PlanarTransform:
    """Least-squares 6-parameter affine mapping left points onto right."""
    arr = as_match_array(corrs)
    if len(arr) < 3:
        raise InsufficientDataError(f"affine needs >= 3 correspondences, got {len(arr)}")
    xl, yl, xr, yr = _split(arr)
    centered = np.stack([xl - xl.mean(), yl - yl.mean()], axis=1)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1.0):
        raise DegenerateConfigurationError("left points are collinear")
    design = np.stack([xl, yl, np.ones_like(xl)], axis=1)
    params, *_ = np.linalg.lstsq(design, np.stack([xr, yr], axis=1), rcond=None)
    matrix = np.eye(3)
    matrix[0] = params[:, 0]
    matrix[1] = params[:, 1]
    try:
        return PlanarTransform("affine", matrix)
    except ValueError as exc:
        raise DegenerateConfigurationError(str(exc)) from exc


def _hartley_normalize(x: np.ndarray, y: np.ndarray):
    """Translate centroid to origin and scale mean radius to sqrt(2)."""
    mx, my = x.mean(), y.mean()
    dist = np.sqrt((x - mx) ** 2 + (y - my) ** 2).mean()
    if dist < 1e-12:
        raise DegenerateConfigurationError("points are coincident")
    s = math.sqrt(2.0) / dist
    t = np.array([[s, 0.0, -s * mx], [0.0, s, -s * my], [0.0, 0.0, 1.0]])
    return t, s * (x - mx), s * (y - my)


def solve_homography_dlt(corrs) -> PlanarTransform:
    """Hartley-normalized direct linear transform homography."""
    arr = as_match_array(corrs)
    if len(arr) < 4:
        raise InsufficientDataError(f"homography needs >= 4 correspondences, got {len(arr)}")
    xl, yl, xr, yr = _split(arr)
    tl, xln, yln = _hartley_normalize(xl, yl)
    tr, xrn, yrn = _hartley_normalize(xr, yr)
    n = len(arr)
    a = np.zeros((2 * n, 9))
    a[0::2, 0] = -xln
    a[0::2, 1] = -yln
    a[0::2, 2] = -1.0
    a[0::2, 6] = xrn * xln
    a[0::2, 7] = xrn * yln
    a[0::2, 8] = xrn
    a[1::2, 3] = -xln
    a[1::2, 4] = -yln
    a[1::2, 5] = -1.0
    a[1::2, 6] = yrn * xln
    a[1::2, 7] = yrn * yln
    a[1::2, 8] = yrn
    _, sv, vt = np.linalg.svd(a)
    if sv[7] <= 1e-9 * sv[0]:
        raise DegenerateConfigurationError("homography system is rank deficient")
    h = np.linalg.inv(tr) @ vt[-1].reshape(3, 3) @ tl
    h = h / np.linalg.norm(h)
    if abs(h[2, 2]) > 1e-12 and h[2, 2] < 0:
        h = -h
    try:
        return PlanarTransform("homography", h)
    except ValueError as exc:
        raise DegenerateConfigurationError(str(exc)) from exc


def _normalize_pixels(arr: np.ndarray, intrinsics) -> np.ndarray:
    intr_l, intr_r = intrinsics
    out = arr.copy()
    out[:, 0] = (arr[:, 0] - intr_l.cx) / intr_l.fx
    out[:, 1] = (arr[:, 1] - intr_l.cy) / intr_l.fy
    out[:, 2] = (arr[:, 2] - intr_r.cx) / intr_r.fx
    out[:, 3] = (arr[:, 3] - intr_r.cy) / intr_r.fy
    return out


def _deterministic_sign(m: np.ndarray) -> np.ndarray:
    flat = np.abs(m).ravel()
    lead = m.ravel()[int(np.argmax(flat))]
    return -m if lead < 0 else m


def solve_epipolar_8pt(
    corrs,
    essential: bool = False,
    intrinsics: tuple[CameraIntrinsics, CameraIntrinsics] | None = None,
) -> np.ndarray:
    """Normalized 8-point fundamental/essential solver.

    Returns a Frobenius-normalized 3x3 matrix with a deterministic sign
    (largest-magnitude entry positive). Fundamental output has rank 2;
    essential output is projected to singular values (m, m, 0).
    """
    arr = as_match_array(corrs)
    if len(arr) < 8:
        raise InsufficientDataError(f"8-point solver needs >= 8 correspondences, got {len(arr)}")
    if essential:
        if intrinsics is None:
            raise ValueError("essential estimation requires both intrinsics")
        arr = _normalize_pixels(arr, intrinsics)
    xl, yl, xr, yr = _split(arr)
    tl, xln, yln = _hartley_normalize(xl, yl)
    tr, xrn, yrn = _hartley_normalize(xr, yr)
    a = np.stack(
        [xrn * xln, xrn * yln, xrn, yrn * xln, yrn * yln, yrn, xln, yln, np.ones_like(xln)],
        axis=1,
    )
    _, sv, vt = np.linalg.svd(a)
    if sv[7] <= 1e-9 * sv[0]:
        raise DegenerateConfigurationError("epipolar system is rank deficient")
    f_norm = vt[-1].reshape(3, 3)
    if essential:
        e = tr.T @ f_norm @ tl
        u, s, v = np.linalg.svd(e)
        m = (s[0] + s[1]) / 2.0
        e = u @ np.diag([m, m, 0.0]) @ v
        e = e / np.linalg.norm(e)
        return _deterministic_sign(e)
    u, s, v = np.linalg.svd(f_norm)
    f_norm = u @ np.diag([s[0], s[1], 0.0]) @ v
    f = tr.T @ f_norm @ tl
    f = f / np.linalg.norm(f)
    return _deterministic_sign(f)


# ---------------------------------------------------------------------------
# Residuals.


def planar_residuals(transform: PlanarTransform, corrs) -> np.ndarray:
    """max(forward, inverse) reprojection distance per correspondence."""
    arr = as_match_array(corrs)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        fwd = transform.apply(arr[:, 0:2])
        bwd = transform.inverse().apply(arr[:, 2:4])
        e_f = np.hypot(fwd[:, 0] - arr[:, 2], fwd[:, 1] - arr[:, 3])
        e_b = np.hypot(bwd[:, 0] - arr[:, 0], bwd[:, 1] - arr[:, 1])
    res = np.maximum(e_f, e_b)
    return np.where(np.isfinite(res), res, np.inf)


def sampson_distances(f: np.ndarray, corrs) -> np.ndarray:
    """First-order epipolar residual |x'^T F x| / ||J|| per correspondence."""
    arr = as_match_array(corrs)
    xl, yl, xr, yr = _split(arr)
    fx0 = f[0, 0] * xl + f[0, 1] * yl + f[0, 2]
    fx1 = f[1, 0] * xl + f[1, 1] * yl + f[1, 2]
    fx2 = f[2, 0] * xl + f[2, 1] * yl + f[2, 2]
    ftx0 = f[0, 0] * xr + f[1, 0] * yr + f[2, 0]
    ftx1 = f[0, 1] * xr + f[1, 1] * yr + f[2, 1]
    err = xr * fx0 + yr * fx1 + fx2
    denom = np.sqrt(fx0**2 + fx1**2 + ftx0**2 + ftx1**2)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.abs(err) / denom
    return np.where(denom > 0, d, np.inf)


# ---------------------------------------------------------------------------
# RANSAC.


def _solve_minimal(kind: str, arr: np.ndarray, intrinsics):
    if kind == "affine":
        return solve_affine_lsq(arr)
    if kind == "homography":
        return solve_homography_dlt(arr)
    return solve_epipolar_8pt(arr, essential=(kind == "essential"), intrinsics=intrinsics)


def _residuals(kind: str, model, arr: np.ndarray, arr_norm: np.ndarray | None) -> np.ndarray:
    if kind in ("affine", "homography"):
        return planar_residuals(model, arr)
    return sampson_distances(model, arr_norm if kind == "essential" else arr)


def ransac(
    corrs,
    model_kind: str,
    cfg: RansacConfig | None = None,
    intrinsics: tuple[CameraIntrinsics, CameraIntrinsics] | None = None,
) -> FitResult:
    """Classic hypothesize-and-verify with adaptive early stopping.

    Uniform seeded minimal samples; degenerate samples consume iterations.
    Stops once enough iterations k satisfy k >= log(1-confidence) /
    log(1 - w^s) for the best inlier ratio w. The best hypothesis is re-fit
    by least squares on its inliers and inliers are recounted under the
    refit model.
    """
    if model_kind not in MINIMAL_SAMPLE:
        raise ValueError(f"unknown model kind {model_kind!r}")
    cfg = cfg or RansacConfig()
    arr = as_match_array(corrs)
    s = MINIMAL_SAMPLE[model_kind]
    n = len(arr)
    if n < s:
        raise InsufficientDataError(f"{model_kind} needs >= {s} correspondences, got {n}")
    if model_kind == "essential" and intrinsics is None:
        raise ValueError("essential estimation requires both intrinsics")
    threshold = cfg.inlier_threshold if cfg.inlier_threshold is not None else DEFAULT_THRESHOLD[model_kind]
    arr_norm = _normalize_pixels(arr, intrinsics) if model_kind == "essential" else None

    rng = np.random.default_rng(cfg.seed)
    best_count = 0
    best_model = None
    best_mask = None
    iterations = 0
    needed = math.inf
    for i in range(cfg.max_iterations):
        if iterations >= needed:
            break
        iterations = i + 1
        idx = rng.choice(n, size=s, replace=False)
        try:
            model = _solve_minimal(model_kind, arr[idx], intrinsics)
        except DegenerateConfigurationError:
            continue
        mask = _residuals(model_kind, model, arr, arr_norm) <= threshold
        count = int(mask.sum())
        if count > best_count:
            best_count, best_model, best_mask = count, model, mask
            w = best_count / n
            if w >= 1.0:
                break
            ws = w**s
            if ws > 0.0:
                needed = math.log(1.0 - cfg.confidence) / math.log(1.0 - ws)
                if iterations >= needed:
                    break
    if best_model is None or best_count < s:
        raise NoModelError(f"no {model_kind} hypothesis reached {s} inliers in {iterations} iterations")

    try:
        refit = _solve_minimal(model_kind, arr[best_mask], intrinsics)
    except DegenerateConfigurationError:
        refit = best_model
    mask = _residuals(model_kind, refit, arr, arr_norm) <= threshold
    return FitResult(
        model=refit,
        inlier_indices=np.flatnonzero(mask),
        iterations_run=iterations,
        score=int(mask.sum()),
        kind=model_kind,
    )


# ---------------------------------------------------------------------------
# Pose recovery.


def _triangulate_depths(r: np.ndarray, t: np.ndarray, xl, yl, xr, yr):
    """DLT triangulation in normalized coordinates; returns per-point depths
    in the left and right camera frames."""
    n = len(xl)
    zl = np.empty(n)
    zr = np.empty(n)
    p_l = np.hstack([np.eye(3), np.zeros((3, 1))])
    p_r = np.hstack([r, t.reshape(3, 1)])
    for i in range(n):
        a = np.stack(
            [
                xl[i] * p_l[2] - p_l[0],
                yl[i] * p_l[2] - p_l[1],
                xr[i] * p_r[2] - p_r[0],
                yr[i] * p_r[2] - p_r[1],
            ]
        )
        _, _, vt = np.linalg.svd(a)
        xh = vt[-1]
        if abs(xh[3]) < 1e-12:
            zl[i] = zr[i] = 0.0  # point at infinity: counts as not in front
            continue
        x = xh[:3] / xh[3]
        zl[i] = x[2]
        zr[i] = r[2] @ x + t[2]
    return zl, zr


def recover_pose(
    e: np.ndarray,
    corrs,
    intrinsics: tuple[CameraIntrinsics, CameraIntrinsics],
) -> RelativePoseEstimate:
    """Choose among the four (R, t) decompositions of E by cheirality.

    The winning candidate must place a strict majority of triangulated
    points in front of both cameras; otherwise CheiralityAmbiguous.
    """
    arr = _normalize_pixels(as_match_array(corrs), intrinsics)
    if len(arr) < 1:
        raise InsufficientDataError("pose recovery needs at least one correspondence")
    xl, yl, xr, yr = _split(arr)
    u, _, vt = np.linalg.svd(np.asarray(e, dtype=np.float64))
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    r1 = u @ w @ vt
    r2 = u @ w.T @ vt
    t = u[:, 2]
    best = (-1, None, None)
    for r_cand, t_cand in ((r1, t), (r1, -t), (r2, t), (r2, -t)):
        zl, zr = _triangulate_depths(r_cand, t_cand, xl, yl, xr, yr)
        count = int(((zl > 0) & (zr > 0)).sum())
        if count > best[0]:
            best = (count, r_cand, t_cand)
    count, r_best, t_best = best
    if count * 2 <= len(arr):
        raise CheiralityAmbiguousError(
            f"best decomposition has {count}/{len(arr)} points in front of both cameras"
        )
    return RelativePoseEstimate(r_best, t_best)


# ---------------------------------------------------------------------------
# B-spline deformation.


@dataclass(frozen=True)
class BSplineField:
    """Cubic B-spline displacement field on a regular control grid.

    displacements has shape (gy, gx, 2) in pixels; origin is the pixel
    location of control (0, 0); spacing is the control separation. Queries
    outside the grid use clamped support so basis weights still sum to 1.
    """

    displacements: np.ndarray
    spacing: float
    origin: tuple[float, float]

    def __post_init__(self):
        d = np.asarray(self.displacements, dtype=np.float64)
        if d.ndim != 3 or d.shape[2] != 2 or d.shape[0] < 4 or d.shape[1] < 4:
            raise ValueError("displacements must be (gy>=4, gx>=4, 2)")
        if not np.all(np.isfinite(d)):
            raise ValueError("displacements must be finite")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        object.__setattr__(self, "displacements", d)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.displacements.shape[1], self.displacements.shape[0]


def _basis(t):
    """The four cubic B-spline weights at fractional offset t in [0, 1)."""
    t2 = t * t
    t3 = t2 * t
    b0 = (1.0 - t) ** 3 / 6.0
    b1 = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0
    b2 = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0
    b3 = t3 / 6.0
    return b0, b1, b2, b3


def _design(field_shape, spacing, origin, xs, ys):
    """Per-point 16 basis weights and flat control indices (clamped)."""
    gy, gx = field_shape
    u = (xs - origin[0]) / spacing
    v = (ys - origin[1]) / spacing
    iu = np.floor(u).astype(np.int64)
    iv = np.floor(v).astype(np.int64)
    bu = _basis(u - iu)
    bv = _basis(v - iv)
    n = len(xs)
    weights = np.empty((n, 16))
    indices = np.empty((n, 16), dtype=np.int64)
    for m in range(4):
        col = np.clip(iu - 1 + m, 0, gx - 1)
        for k in range(4):
            row = np.clip(iv - 1 + k, 0, gy - 1)
            weights[:, 4 * k + m] = bu[m] * bv[k]
            indices[:, 4 * k + m] = row * gx + col
    return weights, indices


def evaluate_bspline(field: BSplineField, point) -> tuple[float, float]:
    """Apply the displacement field to one point."""
    xs = np.array([float(point[0])])
    ys = np.array([float(point[1])])
    w, idx = _design(field.displacements.shape[:2], field.spacing, field.origin, xs, ys)
    flat = field.displacements.reshape(-1, 2)
    disp = (flat[idx[0]] * w[0][:, None]).sum(axis=0)
    return (float(xs[0] + disp[0]), float(ys[0] + disp[1]))


def bspline_loss_grad(field: BSplineField, corrs, init: PlanarTransform | None = None):
    """Mean squared residual and its gradient wrt control displacements.

    The loss matches fit_bspline_sgd's objective: residuals are measured
    from bspline(init(x_left)) to x_right (init omitted means raw lefts).
    """
    arr = as_match_array(corrs)
    pts = init.apply(arr[:, 0:2]) if init is not None else arr[:, 0:2]
    gy, gx = field.displacements.shape[:2]
    weights, indices = _design((gy, gx), field.spacing, field.origin, pts[:, 0], pts[:, 1])
    flat = field.displacements.reshape(-1, 2)
    pred = pts + (flat[indices] * weights[:, :, None]).sum(axis=1)
    r = pred - arr[:, 2:4]
    n = len(arr)
    loss = float((r**2).sum() / n)
    grad = np.zeros_like(flat)
    np.add.at(grad, indices.ravel(), (weights[:, :, None] * r[:, None, :]).reshape(-1, 2) * (2.0 / n))
    return loss, grad.reshape(gy, gx, 2)


def fit_bspline_sgd(
    corrs,
    init: PlanarTransform,
    grid: tuple[int, int] = (8, 8),
    lr: float = 0.1,
    iterations: int = 2000,
    return_trace: bool = False,
):
    """Fit control displacements by full-batch gradient descent.

    The warp is bspline(init(x_left)); the loss is the mean squared residual
    to the right points. The control grid spans the bounding box of the
    init-transformed left points. Raises Diverged when the mean Euclidean
    residual grows for 50 consecutive steps or ends above its initial value.
    """
    arr = as_match_array(corrs)
    if len(arr) < 1:
        raise InsufficientDataError("need at least one correspondence")
    gx, gy = int(grid[0]), int(grid[1])
    if gx < 4 or gy < 4:
        raise ValueError("control grid must be at least 4x4")
    warped = init.apply(arr[:, 0:2])
    xs, ys = warped[:, 0], warped[:, 1]
    origin = (float(xs.min()), float(ys.min()))
    extent_x = float(xs.max()) - origin[0]
    extent_y = float(ys.max()) - origin[1]
    spacing = max(extent_x / (gx - 1), extent_y / (gy - 1), 1.0)

    weights, indices = _design((gy, gx), spacing, origin, xs, ys)
    disp = np.zeros((gy * gx, 2))
    target = arr[:, 2:4]
    n = len(arr)

    def mean_residual() -> float:
        pred = warped + (disp[indices] * weights[:, :, None]).sum(axis=1)
        return float(np.hypot(pred[:, 0] - target[:, 0], pred[:, 1] - target[:, 1]).mean())

    initial = mean_residual()
    trace = [initial]
    prev = initial
    growth_streak = 0
    for _ in range(iterations):
        pred = warped + (disp[indices] * weights[:, :, None]).sum(axis=1)
        r = pred - target
        grad = np.zeros_like(disp)
        np.add.at(grad, indices.ravel(), (weights[:, :, None] * r[:, None, :]).reshape(-1, 2) * (2.0 / n))
        disp -= lr * grad
        cur = mean_residual()
        trace.append(cur)
        growth_streak = growth_streak + 1 if cur > prev else 0
        if growth_streak >= 50:
            raise DivergedError(f"mean residual grew for {growth_streak} consecutive steps")
        prev = cur
    if trace[-1] > initial:
        raise DivergedError("final mean residual exceeds the initial value")
    field = BSplineField(disp.reshape(gy, gx, 2), spacing, origin)
    return (field, trace) if return_trace else field
