"""Synthetic training/evaluation pair construction.

Warp pairs come from a single image and a randomly sampled planar transform;
depth pairs come from two posed views with depth; modality substitution swaps
one side's pixels for an aligned rendition while ground truth is untouched.

All samplers are deterministic in their integer seed. Random parameters are
drawn in a fixed documented order so a recorded draw can be re-composed into
the exact matrix that was returned.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    Correspondence,
    DepthMap,
    GeometryMissingError,
    OVERLAP_INTERVAL,
    PlanarTransform,
    PosedView,
    filter_grid_correspondences,
    overlap_ratio,
)


class SynthesisError(Exception):
    pass


class DegenerateTransformError(SynthesisError):
    """Sampled transform is numerically singular even after resampling."""


class NoOverlapError(SynthesisError):
    """View pair falls outside the mining overlap interval."""

    def __init__(self, ratio: float):
        super().__init__(f"overlap ratio {ratio:.4f} outside {OVERLAP_INTERVAL}")
        self.ratio = ratio


class MissingAuxiliaryError(SynthesisError):
    pass


class DimensionMismatchError(SynthesisError):
    pass


def _check_interval(name: str, iv, positive: bool = False) -> tuple[float, float]:
    lo, hi = float(iv[0]), float(iv[1])
    if not lo <= hi:
        raise ValueError(f"{name} interval min {lo} > max {hi}")
    if positive and lo <= 0:
        raise ValueError(f"{name} interval must be strictly positive")
    return lo, hi


@dataclass(frozen=True)
class HomographySampleRanges:
    """Uniform sampling intervals for the full warp family.

    rotation is in degrees; translation_factor is a fraction of image width
    (x draw) and height (y draw); scale is isotropic; skew is drawn twice
    (x then y); perspective entries land in the matrix third row divided by
    width and height so the stated range is size-independent.
    """

    rotation: tuple[float, float] = (-180.0, 180.0)
    translation_factor: tuple[float, float] = (-0.25, 0.25)
    scale: tuple[float, float] = (0.5, 2.0)
    skew: tuple[float, float] = (-0.1, 0.1)
    perspective_x: tuple[float, float] = (-0.5, 0.5)
    perspective_y: tuple[float, float] = (-0.5, 0.5)

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_interval("rotation", self.rotation))
        object.__setattr__(
            self, "translation_factor", _check_interval("translation_factor", self.translation_factor)
        )
        object.__setattr__(self, "scale", _check_interval("scale", self.scale, positive=True))
        object.__setattr__(self, "skew", _check_interval("skew", self.skew))
        object.__setattr__(self, "perspective_x", _check_interval("perspective_x", self.perspective_x))
        object.__setattr__(self, "perspective_y", _check_interval("perspective_y", self.perspective_y))


@dataclass(frozen=True)
class EvalWarpPreset:
    """Similarity-only warp intervals used to misalign evaluation pairs."""

    name: str
    rotation: tuple[float, float]
    translation_factor: tuple[float, float]
    scale: tuple[float, float]

    def __post_init__(self):
        if self.name not in ("medical", "map", "custom"):
            raise ValueError(f"unknown preset name {self.name!r}")
        object.__setattr__(self, "rotation", _check_interval("rotation", self.rotation))
        object.__setattr__(
            self, "translation_factor", _check_interval("translation_factor", self.translation_factor)
        )
        object.__setattr__(self, "scale", _check_interval("scale", self.scale, positive=True))


TRAIN_HOMOGRAPHY_RANGES = HomographySampleRanges()
MEDICAL_PRESET = EvalWarpPreset("medical", (-50.0, 50.0), (-0.2, 0.2), (0.75, 1.33))
MAP_PRESET = EvalWarpPreset("map", (-10.0, 10.0), (-0.1, 0.1), (0.8, 1.25))


@dataclass(frozen=True)
class WarpDraw:
    """The raw parameters behind one sampled transform, in draw order."""

    rotation_deg: float
    translation_factor: tuple[float, float]
    scale: float
    skew: tuple[float, float] = (0.0, 0.0)
    perspective: tuple[float, float] = (0.0, 0.0)


def _compose_warp(draw: WarpDraw, width: int, height: int, kind: str) -> np.ndarray:
    """Build C @ (P @ Sh @ S @ R @ T) @ C^-1 about the image center."""
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    th = np.deg2rad(draw.rotation_deg)
    c, s = np.cos(th), np.sin(th)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    tx = draw.translation_factor[0] * width
    ty = draw.translation_factor[1] * height
    trans = np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])
    m = rot @ trans
    m = np.diag([draw.scale, draw.scale, 1.0]) @ m
    if kind == "homography":
        kx, ky = draw.skew
        m = np.array([[1.0, kx, 0.0], [ky, 1.0, 0.0], [0.0, 0.0, 1.0]]) @ m
        px, py = draw.perspective
        m = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [px / width, py / height, 1.0]]) @ m
    center = np.array([[1.0, 0.0, cx], [0.0, 1.0, cy], [0.0, 0.0, 1.0]])
    uncenter = np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]])
    return center @ m @ uncenter


def sample_homography(
    ranges: HomographySampleRanges,
    width: int,
    height: int,
    seed: int,
    return_draw: bool = False,
):
    """One uniformly sampled homography about the image center.

    Parameters are drawn in the order rotation, translation x, translation y,
    scale, skew x, skew y, perspective x, perspective y. Resamples up to 16
    times if the matrix comes out singular, then raises DegenerateTransform.
    """
    rng = np.random.default_rng(seed)
    for _ in range(16):
        draw = WarpDraw(
            rotation_deg=float(rng.uniform(*ranges.rotation)),
            translation_factor=(
                float(rng.uniform(*ranges.translation_factor)),
                float(rng.uniform(*ranges.translation_factor)),
            ),
            scale=float(rng.uniform(*ranges.scale)),
            skew=(float(rng.uniform(*ranges.skew)), float(rng.uniform(*ranges.skew))),
            perspective=(
                float(rng.uniform(*ranges.perspective_x)),
                float(rng.uniform(*ranges.perspective_y)),
            ),
        )
        matrix = _compose_warp(draw, width, height, "homography")
        if abs(float(np.linalg.det(matrix))) >= 1e-9:
            t = PlanarTransform("homography", matrix)
            return (t, draw) if return_draw else t
    raise DegenerateTransformError("16 consecutive singular samples")


def sample_eval_transform(
    preset: EvalWarpPreset,
    width: int,
    height: int,
    seed: int,
    return_draw: bool = False,
):
    """A similarity (rotation + translation + isotropic scale) about the image
    center with parameters uniform in the preset intervals."""
    rng = np.random.default_rng(seed)
    draw = WarpDraw(
        rotation_deg=float(rng.uniform(*preset.rotation)),
        translation_factor=(
            float(rng.uniform(*preset.translation_factor)),
            float(rng.uniform(*preset.translation_factor)),
        ),
        scale=float(rng.uniform(*preset.scale)),
    )
    t = PlanarTransform("similarity", _compose_warp(draw, width, height, "similarity"))
    return (t, draw) if return_draw else t


# ---------------------------------------------------------------------------
# Image warping.


def _bilinear_image(values: np.ndarray, x, y):
    """Plain bilinear sample of an image (no value-validity rule).

    Returns (sample float64, in_bounds). Out-of-bounds samples are garbage.
    """
    h, w = values.shape[:2]
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
    vals = values.astype(np.float64, copy=False)
    if values.ndim == 3:
        w00, w10, w01, w11 = (np.asarray(wgt)[..., None] for wgt in (w00, w10, w01, w11))
    sample = w00 * vals[y0, x0] + w10 * vals[y0, x1] + w01 * vals[y1, x0] + w11 * vals[y1, x1]
    return sample, in_bounds


def warp_image(img: np.ndarray, transform: PlanarTransform) -> tuple[np.ndarray, np.ndarray]:
    """Warp an image by inverse-mapped bilinear resampling.

    Output pixel p' reads the source at transform^-1(p'); valid_mask(p') is
    true iff that source point lies inside [0,W-1]x[0,H-1]. Invalid pixels
    are 0. Output has the source's dtype and size.
    """
    img = np.asarray(img)
    if img.size == 0:
        raise ValueError("empty image")
    h, w = img.shape[:2]
    inv = transform.inverse()
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    src = inv.apply(np.stack([xs.ravel(), ys.ravel()], axis=1))
    sample, valid = _bilinear_image(img, src[:, 0], src[:, 1])
    if img.ndim == 3:
        sample = np.where(valid[:, None], sample, 0.0)
        out = sample.reshape(h, w, img.shape[2])
    else:
        sample = np.where(valid, sample, 0.0)
        out = sample.reshape(h, w)
    if np.issubdtype(img.dtype, np.integer):
        info = np.iinfo(img.dtype)
        out = np.clip(np.rint(out), info.min, info.max)
    return out.astype(img.dtype), valid.reshape(h, w)


# ---------------------------------------------------------------------------
# Pair records.


@dataclass(frozen=True)
class SynthesizedPair:
    """A training/evaluation pair with exact ground truth.

    transform is set for planar (warp) pairs and None for depth pairs, whose
    ground truth is the explicit match list. valid_mask covers left pixels.
    """

    left: np.ndarray
    right: np.ndarray
    matches: tuple[Correspondence, ...]
    transform: PlanarTransform | None
    valid_mask: np.ndarray
    modality_tags: tuple[str, str] = ("original", "original")
    seed: int = 0
    source: str = ""
    extras: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        if left.size == 0 or right.size == 0:
            raise ValueError("pair images must be nonempty")
        mask = np.asarray(self.valid_mask, dtype=bool)
        if mask.shape != left.shape[:2]:
            raise ValueError("valid_mask must match the left image grid")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)
        object.__setattr__(self, "valid_mask", mask)
        object.__setattr__(self, "matches", tuple(self.matches))

    @property
    def gt(self):
        return self.transform if self.transform is not None else self.matches


def make_warp_pair(
    img: np.ndarray,
    ranges: HomographySampleRanges,
    grid_step: int,
    seed: int,
    depth: DepthMap | None = None,
    source: str = "",
) -> SynthesizedPair:
    """Warp a single image by a sampled homography and emit lattice GT.

    valid_mask marks left pixels whose forward warp lands inside the right
    canvas; when a depth map is given, pixels with depth <= 0 are excluded
    from supervision as well. GT matches are the grid_step lattice points
    with valid_mask true, mapped exactly through the sampled transform.
    """
    img = np.asarray(img)
    if img.size == 0:
        raise ValueError("empty image")
    h, w = img.shape[:2]
    if depth is not None and (depth.height, depth.width) != (h, w):
        raise DimensionMismatchError("depth map does not match image dimensions")
    transform = sample_homography(ranges, w, h, seed)
    right, _ = warp_image(img, transform)
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    fwd = transform.apply(np.stack([xs.ravel(), ys.ravel()], axis=1))
    mask = (
        (fwd[:, 0] >= 0.0)
        & (fwd[:, 0] <= w - 1.0)
        & (fwd[:, 1] >= 0.0)
        & (fwd[:, 1] <= h - 1.0)
    ).reshape(h, w)
    if depth is not None:
        mask = mask & (depth.values > 0)
    fx = fwd[:, 0].reshape(h, w)
    fy = fwd[:, 1].reshape(h, w)
    matches = [
        Correspondence((float(x), float(y)), (float(fx[y, x]), float(fy[y, x])), 1.0)
        for y in range(0, h, grid_step)
        for x in range(0, w, grid_step)
        if mask[y, x]
    ]
    return SynthesizedPair(img, right, tuple(matches), transform, mask, seed=seed, source=source)


def make_depth_pair(
    left: PosedView,
    right: PosedView,
    grid_step: int,
    source: str = "",
    interval: tuple[float, float] = OVERLAP_INTERVAL,
) -> SynthesizedPair:
    """Build a pair from two posed views, gated by the mining overlap window.

    Raises NoOverlap when overlap_ratio falls outside the mining interval
    (default OVERLAP_INTERVAL); the GT is the e_d/e_c-gated grid
    correspondence set.
    """
    if left.image is None or right.image is None:
        raise GeometryMissingError("both views need images to form a pair")
    lo, hi = float(interval[0]), float(interval[1])
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError("overlap interval must satisfy 0 <= lo <= hi <= 1")
    ratio = overlap_ratio(left, right)
    if not lo <= ratio <= hi:
        raise NoOverlapError(ratio)
    matches = filter_grid_correspondences(left, right, grid_step)
    return SynthesizedPair(
        left.image,
        right.image,
        tuple(matches),
        None,
        left.depth.valid_mask,
        source=source,
        extras={"overlap": ratio},
    )


# ---------------------------------------------------------------------------
# Modality substitution.

_REMAP_KNOTS_IN = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
_REMAP_KNOTS_OUT = np.array([0.0, 0.45, 0.55, 0.8, 1.0])


@dataclass(frozen=True)
class ModalityGenerator:
    """A pixel-aligned image substitution.

    builtin-invert and builtin-remap are deterministic intensity maps;
    depth-substitute renders a DepthMap (aux) as grayscale; external-file
    loads a precomputed aligned image from aux (path or array).
    """

    id: str
    mode: str
    aux: object = None

    def __post_init__(self):
        if self.mode not in ("builtin-invert", "builtin-remap", "depth-substitute", "external-file"):
            raise ValueError(f"unknown modality mode {self.mode!r}")


def _depth_to_gray(depth: DepthMap) -> tuple[np.ndarray, np.ndarray]:
    """Rescale valid depth to [0,255] uint8; constant ranges map to 0."""
    valid = depth.valid_mask
    gray = np.zeros(depth.values.shape, dtype=np.uint8)
    if not valid.any():
        return gray, valid
    vals = depth.values[valid]
    mn, mx = float(vals.min()), float(vals.max())
    if mx > mn:
        gray[valid] = np.rint((depth.values[valid] - mn) / (mx - mn) * 255.0).astype(np.uint8)
    return gray, valid


def _load_external(aux, expect_shape: tuple[int, int]) -> np.ndarray:
    if aux is None:
        raise MissingAuxiliaryError("external-file generator needs an aux image or path")
    if isinstance(aux, (str, os.PathLike)):
        from PIL import Image

        try:
            with Image.open(aux) as im:
                arr = np.asarray(im)
        except FileNotFoundError as exc:
            raise MissingAuxiliaryError(f"auxiliary image not found: {aux}") from exc
    else:
        arr = np.asarray(aux)
    if arr.shape[:2] != expect_shape:
        raise DimensionMismatchError(
            f"auxiliary image is {arr.shape[1]}x{arr.shape[0]}, expected {expect_shape[1]}x{expect_shape[0]}"
        )
    return arr


def apply_modality(pair: SynthesizedPair, gen: ModalityGenerator, side: str) -> SynthesizedPair:
    """Swap one side's pixels for a pixel-aligned rendition.

    Ground-truth coordinates and confidences are copied verbatim; only
    depth-substitute touches the mask (depth-invalid pixels become false on
    the left side when the left image is substituted).
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    img = pair.left if side == "left" else pair.right
    mask = pair.valid_mask
    if gen.mode == "builtin-invert":
        if np.issubdtype(img.dtype, np.integer):
            new = (np.iinfo(img.dtype).max - img.astype(np.int64)).astype(img.dtype)
        else:
            new = img.max() - img
    elif gen.mode == "builtin-remap":
        if np.issubdtype(img.dtype, np.integer):
            top = float(np.iinfo(img.dtype).max)
        else:
            top = max(float(img.max()), 1.0)
        mapped = np.interp(img.astype(np.float64) / top, _REMAP_KNOTS_IN, _REMAP_KNOTS_OUT) * top
        new = np.rint(mapped).astype(img.dtype) if np.issubdtype(img.dtype, np.integer) else mapped.astype(img.dtype)
    elif gen.mode == "depth-substitute":
        if not isinstance(gen.aux, DepthMap):
            raise MissingAuxiliaryError("depth-substitute generator needs a DepthMap aux")
        if (gen.aux.height, gen.aux.width) != img.shape[:2]:
            raise DimensionMismatchError("depth map does not match the substituted image")
        new, depth_valid = _depth_to_gray(gen.aux)
        if side == "left":
            mask = mask & depth_valid
    else:
        new = _load_external(gen.aux, img.shape[:2])
    tags = (gen.id, pair.modality_tags[1]) if side == "left" else (pair.modality_tags[0], gen.id)
    return SynthesizedPair(
        new if side == "left" else pair.left,
        new if side == "right" else pair.right,
        pair.matches,
        pair.transform,
        mask,
        modality_tags=tags,
        seed=pair.seed,
        source=pair.source,
        extras=dict(pair.extras),
    )
