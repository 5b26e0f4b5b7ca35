"""Evaluation protocols: warp error, rTRE, pose error, SR/AUC, reports.

Errors feed two aggregate families. Success rate at threshold t is the
fraction of pairs with error strictly below t (failures count as infinite
error). AUC at t is the exact integral of that success curve:

    AUC@t = (1/(n*t)) * sum_i max(0, t - e_i)

Per-pair rTRE statistics are capped at 1.0 when aggregated so a failed
registration contributes the worst case rather than poisoning the mean.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .util import mix_seed, parallel_map
from .fitting import (
    FitError,
    RansacConfig,
    evaluate_bspline,
    fit_bspline_sgd,
    ransac,
    recover_pose,
)
from .geometry import (
    CameraIntrinsics,
    GeometryError,
    PlanarTransform,
    RelativePoseEstimate,
    relative_pose_error,
)
from .synthesis import DegenerateTransformError

RESIZE_LONGEST_EDGE = 840

PROTOCOLS = ("warp_affine", "warp_homography", "rtre_bspline", "pose_essential")

_PROTOCOL_GT = {
    "warp_affine": "planar",
    "warp_homography": "planar",
    "rtre_bspline": "landmarks",
    "pose_essential": "pose",
}
_PROTOCOL_KIND = {
    "warp_affine": "warp_px",
    "warp_homography": "warp_px",
    "rtre_bspline": "rtre",
    "pose_essential": "pose_deg",
}
# curve sampling resolution per error kind: pixels, degrees, normalized rTRE
CURVE_STEP = {"warp_px": 1.0, "pose_deg": 0.5, "rtre": 0.01}

ERROR_KINDS = ("warp_px", "rtre", "pose_deg")


class EvalError(Exception):
    """Base class for evaluation errors."""


class EmptySetError(EvalError):
    """A metric was asked for over zero samples."""


class ManifestInvalidError(EvalError):
    """The evaluation manifest is structurally invalid."""


@dataclass(frozen=True)
class ErrorSample:
    """One pair's protocol error; failed samples count as infinite error."""

    pair_id: str
    error: float
    kind: str
    failed: bool = False

    def __post_init__(self):
        if self.kind not in ERROR_KINDS:
            raise ValueError(f"unknown error kind {self.kind!r}")
        if not self.failed and not (math.isfinite(self.error) and self.error >= 0):
            raise ValueError("error must be finite and non-negative unless failed")

    @property
    def effective(self) -> float:
        return math.inf if self.failed else self.error


class LandmarkSet:
    """Paired source/target landmarks with the image diagonal for rTRE."""

    def __init__(self, source, target, diagonal: float):
        src = np.asarray(source, dtype=np.float64)
        dst = np.asarray(target, dtype=np.float64)
        if src.ndim != 2 or src.shape[1] != 2 or src.shape != dst.shape or len(src) == 0:
            raise ValueError("source and target must be equal-length (N, 2) arrays")
        if not (diagonal > 0):
            raise ValueError("image diagonal must be positive")
        self.source = src
        self.target = dst
        self.diagonal = float(diagonal)

    def __len__(self) -> int:
        return len(self.source)


@dataclass
class MetricReport:
    protocol: str
    samples: list[ErrorSample]
    success_rates: dict[float, float]
    aucs: dict[float, float]
    rtre: dict[str, float] | None
    curve: list[tuple[float, float]]
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        prev = -1.0
        for t in sorted(self.success_rates):
            sr = self.success_rates[t]
            if not (0.0 <= sr <= 1.0) or sr < prev:
                raise ValueError("success rates must be in [0,1] and non-decreasing")
            prev = sr
        for t, a in self.aucs.items():
            if not (0.0 <= a <= 1.0) or (t in self.success_rates and a > self.success_rates[t] + 1e-12):
                raise ValueError("AUC must lie in [0,1] and below the success rate")


# ---------------------------------------------------------------------------
# metric formulas


def _effective_errors(errors) -> list[float]:
    out = []
    for e in errors:
        if isinstance(e, ErrorSample):
            out.append(e.effective)
        else:
            v = float(e)
            if math.isnan(v) or v < 0:
                raise ValueError("errors must be non-negative (or +inf for failures)")
            out.append(v)
    return out


def corner_warp_error(
    t_est: PlanarTransform, t_gt: PlanarTransform, width: int, height: int
) -> float:
    """Mean displacement between the two warps over the four image corners."""
    if width < 1 or height < 1:
        raise ValueError("image size must be positive")
    corners = np.array(
        [[0.0, 0.0], [width - 1.0, 0.0], [0.0, height - 1.0], [width - 1.0, height - 1.0]]
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        pe = t_est.apply(corners)
        pg = t_gt.apply(corners)
    if not (np.all(np.isfinite(pe)) and np.all(np.isfinite(pg))):
        raise DegenerateTransformError("a corner maps to infinity under one transform")
    return float(np.hypot(pe[:, 0] - pg[:, 0], pe[:, 1] - pg[:, 1]).mean())


def rtre(landmarks: LandmarkSet, warp) -> tuple[float, float]:
    """Per-landmark registration error over the diagonal: (mean, median)."""
    warped = np.asarray(warp(landmarks.source), dtype=np.float64)
    if warped.shape != landmarks.source.shape:
        raise ValueError("warp must map (N, 2) points to (N, 2) points")
    err = np.hypot(
        warped[:, 0] - landmarks.target[:, 0], warped[:, 1] - landmarks.target[:, 1]
    ) / landmarks.diagonal
    return float(np.mean(err)), float(np.median(err))


def aggregate_rtre(pairs) -> dict[str, float]:
    """Average and median over pairs of both per-pair statistics, capped at 1."""
    pairs = list(pairs)
    if not pairs:
        raise EmptySetError("no rTRE pairs to aggregate")
    artre = np.array([min(a, 1.0) for a, _ in pairs])
    mrtre = np.array([min(m, 1.0) for _, m in pairs])
    return {
        "average_artre": float(np.mean(artre)),
        "median_artre": float(np.median(artre)),
        "average_mrtre": float(np.mean(mrtre)),
        "median_mrtre": float(np.median(mrtre)),
    }


def success_rate(errors, threshold: float) -> float:
    """Fraction of samples with error strictly below threshold."""
    if not (threshold > 0):
        raise ValueError("threshold must be positive")
    vals = _effective_errors(errors)
    if not vals:
        raise EmptySetError("no error samples")
    return sum(1 for v in vals if v < threshold) / len(vals)


def auc(errors, threshold: float) -> float:
    """Exact area under the success curve on [0, threshold], normalized to 1."""
    if not (threshold > 0):
        raise ValueError("threshold must be positive")
    vals = _effective_errors(errors)
    if not vals:
        raise EmptySetError("no error samples")
    return sum(max(0.0, threshold - v) for v in vals) / (len(vals) * threshold)


def success_curve(errors, max_threshold: float, step: float, extra=()) -> list[tuple[float, float]]:
    """(threshold, SR) samples every `step` up to max_threshold, plus extras."""
    if not (step > 0 and max_threshold > 0):
        raise ValueError("step and max_threshold must be positive")
    ts = {round(i * step, 12) for i in range(1, int(max_threshold / step + 1e-9) + 1)}
    ts.update(float(t) for t in extra)
    ts.add(float(max_threshold))
    return [(t, success_rate(errors, t)) for t in sorted(ts)]


# ---------------------------------------------------------------------------
# manifests


def _validate_record(rec, index: int) -> None:
    if not isinstance(rec, dict):
        raise ManifestInvalidError(f"record {index} is not an object")
    for key in ("pair_id", "left", "right", "gt_kind", "gt"):
        if key not in rec:
            raise ManifestInvalidError(f"record {index} missing key {key!r}")
    kind = rec["gt_kind"]
    if kind not in ("planar", "landmarks", "pose"):
        raise ManifestInvalidError(f"record {index} has unknown gt_kind {kind!r}")
    gt = rec["gt"]
    if kind == "planar":
        if not (isinstance(gt, (list, tuple)) and len(gt) == 9):
            raise ManifestInvalidError(f"record {index}: planar gt must hold 9 numbers")
    elif kind == "landmarks":
        if not isinstance(gt, str):
            raise ManifestInvalidError(f"record {index}: landmarks gt must be a file path")
    else:
        if not isinstance(gt, dict) or any(k not in gt for k in ("R", "t", "K0", "K1")):
            raise ManifestInvalidError(f"record {index}: pose gt must hold R, t, K0, K1")
        if len(gt["R"]) != 9 or len(gt["t"]) != 3:
            raise ManifestInvalidError(f"record {index}: pose gt needs R:9 and t:3")
    ns = rec.get("native_size")
    if ns is not None:
        if not (isinstance(ns, (list, tuple)) and len(ns) == 2 and all(int(v) > 0 for v in ns)):
            raise ManifestInvalidError(f"record {index}: native_size must be [width, height]")


def read_eval_manifest(path) -> list[dict]:
    records = formats.read_jsonl(path)
    if not records:
        raise ManifestInvalidError("manifest holds no pair records")
    seen = set()
    for i, rec in enumerate(records):
        _validate_record(rec, i)
        if rec["pair_id"] in seen:
            raise ManifestInvalidError(f"duplicate pair_id {rec['pair_id']!r}")
        seen.add(rec["pair_id"])
    return records


def _load_manifest(manifest, base_dir) -> tuple[list[dict], Path]:
    if isinstance(manifest, (str, Path)):
        records = read_eval_manifest(manifest)
        base = Path(base_dir) if base_dir is not None else Path(manifest).parent
        return records, base
    records = list(manifest)
    if not records:
        raise ManifestInvalidError("manifest holds no pair records")
    seen = set()
    for i, rec in enumerate(records):
        _validate_record(rec, i)
        if rec["pair_id"] in seen:
            raise ManifestInvalidError(f"duplicate pair_id {rec['pair_id']!r}")
        seen.add(rec["pair_id"])
    return records, Path(base_dir) if base_dir is not None else Path(".")


# ---------------------------------------------------------------------------
# protocol runner


def _find_prediction(predictions_dir: Path, pair_id: str) -> Path | None:
    for name in (f"{pair_id}.jsonl", f"{pair_id}.xmf", pair_id):
        candidate = predictions_dir / name
        if candidate.is_file():
            return candidate
    return None


def _resize_factor(rec, required: bool):
    """Scale applied so the longest image edge is at most RESIZE_LONGEST_EDGE."""
    ns = rec.get("native_size")
    if ns is None:
        if required:
            raise ManifestInvalidError(
                f"record {rec['pair_id']!r} needs native_size for pixel-space protocols"
            )
        return 1.0, None
    w, h = int(ns[0]), int(ns[1])
    longest = max(w, h)
    if longest <= RESIZE_LONGEST_EDGE:
        return 1.0, (w, h)
    s = RESIZE_LONGEST_EDGE / longest
    return s, (round(w * s), round(h * s))


def _intrinsics_from(payload, label: str) -> CameraIntrinsics:
    try:
        return CameraIntrinsics(
            payload["fx"], payload["fy"], payload["cx"], payload["cy"],
            payload["width"], payload["height"],
        )
    except (KeyError, TypeError) as exc:
        raise ManifestInvalidError(f"{label} intrinsics payload is malformed") from exc


def _eval_planar(rec, arr, kind, cfg):
    scale, size = _resize_factor(rec, required=True)
    gt_m = np.asarray(rec["gt"], dtype=np.float64).reshape(3, 3)
    if scale != 1.0:
        arr = arr.copy()
        arr[:, :4] *= scale
        s = np.diag([scale, scale, 1.0])
        gt_m = s @ gt_m @ np.linalg.inv(s)
    t_gt = PlanarTransform("homography", gt_m)
    fit = ransac(arr, kind, cfg)
    return corner_warp_error(fit.model, t_gt, size[0], size[1])


def _eval_rtre(rec, arr, cfg, base_dir):
    scale, size = _resize_factor(rec, required=True)
    lm_path = Path(rec["gt"])
    if not lm_path.is_absolute():
        lm_path = base_dir / lm_path
    table = formats.read_landmark_csv(lm_path)
    if scale != 1.0:
        arr = arr.copy()
        arr[:, :4] *= scale
        table = table * scale
    landmarks = LandmarkSet(table[:, 0:2], table[:, 2:4], math.hypot(size[0], size[1]))
    fit = ransac(arr, "affine", cfg)
    init = fit.model
    bfield = fit_bspline_sgd(arr[fit.inlier_indices], init)

    def warp(points):
        base = init.apply(points)
        return np.array([evaluate_bspline(bfield, p) for p in base])

    return rtre(landmarks, warp)


def _eval_pose(rec, arr, cfg):
    gt = rec["gt"]
    intr = (_intrinsics_from(gt["K0"], "K0"), _intrinsics_from(gt["K1"], "K1"))
    gt_pose = RelativePoseEstimate(
        np.asarray(gt["R"], dtype=np.float64).reshape(3, 3),
        np.asarray(gt["t"], dtype=np.float64),
    )
    fit = ransac(arr, "essential", cfg, intrinsics=intr)
    est = recover_pose(fit.model, arr[fit.inlier_indices], intr)
    return relative_pose_error(est, gt_pose)[2]


def run_protocol(
    manifest,
    predictions_dir,
    protocol: str,
    thresholds,
    seed: int = 0,
    workers: int = 1,
    base_dir=None,
) -> MetricReport:
    """Estimate per-pair models from predicted matches and aggregate errors.

    Every pair is scored independently; estimation failures (missing or
    malformed predictions, too few matches, no consensus, ambiguous pose)
    mark the pair failed rather than aborting the run.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    thresholds = [float(t) for t in thresholds]
    if not thresholds or any(not (t > 0) for t in thresholds):
        raise ValueError("thresholds must be a nonempty list of positive values")
    records, base = _load_manifest(manifest, base_dir)
    expected_gt = _PROTOCOL_GT[protocol]
    for rec in records:
        if rec["gt_kind"] != expected_gt:
            raise ManifestInvalidError(
                f"record {rec['pair_id']!r} has gt_kind {rec['gt_kind']!r}, "
                f"protocol {protocol} needs {expected_gt!r}"
            )
    predictions_dir = Path(predictions_dir)
    error_kind = _PROTOCOL_KIND[protocol]

    def eval_one(item):
        index, rec = item
        pair_id = str(rec["pair_id"])
        cfg = RansacConfig(seed=mix_seed(seed, index))
        path = _find_prediction(predictions_dir, pair_id)
        if path is None:
            return ErrorSample(pair_id, 0.0, error_kind, failed=True), None
        try:
            arr = formats.read_matches(path)
            if protocol == "warp_affine":
                return ErrorSample(pair_id, _eval_planar(rec, arr, "affine", cfg), error_kind), None
            if protocol == "warp_homography":
                return (
                    ErrorSample(pair_id, _eval_planar(rec, arr, "homography", cfg), error_kind),
                    None,
                )
            if protocol == "rtre_bspline":
                artre, mrtre = _eval_rtre(rec, arr, cfg, base)
                return ErrorSample(pair_id, artre, error_kind), (artre, mrtre)
            return ErrorSample(pair_id, _eval_pose(rec, arr, cfg), error_kind), None
        except ManifestInvalidError:
            raise
        except (FitError, GeometryError, DegenerateTransformError, ValueError, OSError):
            stats = (math.inf, math.inf) if protocol == "rtre_bspline" else None
            return ErrorSample(pair_id, 0.0, error_kind, failed=True), stats

    results = parallel_map(eval_one, list(enumerate(records)), workers)
    samples = [s for s, _ in results]
    sr = {t: success_rate(samples, t) for t in thresholds}
    aucs = {t: auc(samples, t) for t in thresholds}
    rtre_stats = None
    if protocol == "rtre_bspline":
        rtre_stats = aggregate_rtre([p for _, p in results if p is not None])
    curve = success_curve(samples, max(thresholds), CURVE_STEP[error_kind], extra=thresholds)
    config = {
        "protocol": protocol,
        "thresholds": thresholds,
        "seed": seed,
        "ransac": {"max_iterations": 1000, "confidence": 0.99999},
    }
    return MetricReport(protocol, samples, sr, aucs, rtre_stats, curve, config)


# ---------------------------------------------------------------------------
# report emission


def _float_key(t: float) -> str:
    return repr(float(t))


def report_payload(report: MetricReport) -> dict:
    return {
        "schema": "xmr-1",
        "protocol": report.protocol,
        "config": report.config,
        "success_rate": {_float_key(t): v for t, v in report.success_rates.items()},
        "auc": {_float_key(t): v for t, v in report.aucs.items()},
        "rtre": report.rtre,
        "curve": [[t, sr] for t, sr in report.curve],
        "samples": [
            {
                "pair_id": s.pair_id,
                "kind": s.kind,
                "error": None if s.failed else s.error,
                "failed": s.failed,
            }
            for s in report.samples
        ],
    }


def emit_report(report: MetricReport, json_path, csv_path, provenance: dict | None = None) -> None:
    """Write the JSON report and the (threshold, SR) curve CSV, byte-stably."""
    payload = report_payload(report)
    if provenance is not None:
        payload["provenance"] = provenance
    with open(json_path, "w") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    with open(csv_path, "w") as fh:
        if provenance is not None:
            fh.write("# provenance " + json.dumps(provenance, sort_keys=True) + "\n")
        fh.write("threshold,success_rate\n")
        for t, sr in report.curve:
            fh.write(f"{t!r},{sr!r}\n")
