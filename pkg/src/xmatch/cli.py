"""Batch command-line front-end.

Subcommands: synth (warp-pairs | depth-pairs | modality), tracks
(build | select-pairs), fit, eval, report. Every run is deterministic:
item i of a run seeded S works from mix_seed(S, i), so reruns and any
--workers count produce byte-identical outputs. Every output file embeds
{version, seed, config_hash} provenance; the hash covers the resolved
algorithmic parameters, never paths, workers, or verbosity, so the same
computation aimed at a different directory still matches byte for byte.

Exit codes: 0 success (per-item failures are counted, not fatal),
2 invalid arguments, 3 I/O or malformed input, 4 nothing succeeded.
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
from pathlib import Path

import numpy as np

from . import __version__, formats
from .evaluation import (
    CURVE_STEP,
    ErrorSample,
    EvalError,
    emit_report,
    run_protocol,
    success_curve,
)
from .fitting import FitError, PlanarTransform, RansacConfig, fit_bspline_sgd, ransac
from .geometry import DepthMap, GeometryError, PosedView, as_match_array
from .synthesis import (
    HomographySampleRanges,
    ModalityGenerator,
    NoOverlapError,
    SynthesisError,
    SynthesizedPair,
    TRAIN_HOMOGRAPHY_RANGES,
    apply_modality,
    make_depth_pair,
    make_warp_pair,
)
from .tracks import (
    AnchoredEdge,
    EndpointObservation,
    TrackError,
    TrackObservation,
    anchor_claims,
    build_tracks,
    nms_merge,
    read_track_file,
    refine_tracks,
    sample_matches,
    select_training_pairs,
    write_track_file,
)
from .util import config_hash, mix_seed, parallel_map

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_ALL_FAILED = 4

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

# presets for the homography sampler: train draws the full warp family,
# medical/map draw the narrower similarity ranges
_WARP_PRESETS = {
    "train": TRAIN_HOMOGRAPHY_RANGES,
    "medical": HomographySampleRanges(
        rotation=(-50.0, 50.0), translation_factor=(-0.2, 0.2), scale=(0.75, 1.33),
        skew=(0.0, 0.0), perspective_x=(0.0, 0.0), perspective_y=(0.0, 0.0),
    ),
    "map": HomographySampleRanges(
        rotation=(-10.0, 10.0), translation_factor=(-0.1, 0.1), scale=(0.8, 1.25),
        skew=(0.0, 0.0), perspective_x=(0.0, 0.0), perspective_y=(0.0, 0.0),
    ),
}

_GENERATOR_MODES = {
    "invert": "builtin-invert",
    "remap": "builtin-remap",
    "depth-substitute": "depth-substitute",
    "external": "external-file",
}


class CliError(Exception):
    """Fatal run error mapped to EXIT_IO."""


def _odd_int(text: str) -> int:
    value = int(text)
    if value < 1 or value % 2 == 0:
        raise argparse.ArgumentTypeError("window must be a positive odd integer")
    return value


def _threshold_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("thresholds must be positive numbers")
    return values


def _provenance(seed: int, params: dict) -> dict:
    scrubbed = {k: v for k, v in sorted(params.items()) if k not in ("workers", "verbose")}
    return {"version": __version__, "seed": seed, "config_hash": config_hash(scrubbed)}


def _resolve(args, config: dict, section: str, name: str, default):
    """CLI flag > config-file entry > built-in default."""
    value = getattr(args, name)
    if value is not None:
        return value
    sect = config.get(section, {})
    if name in sect:
        return sect[name]
    return default


def _say(args, message: str) -> None:
    if args.verbose:
        print(message, file=sys.stderr)


def _require_dir(path: Path, what: str) -> Path:
    if not path.is_dir():
        raise CliError(f"{what} directory not found: {path}")
    return path


def _require_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise CliError(f"{what} file not found: {path}")
    return path


def _out_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# synth


def _mask_to_png(mask: np.ndarray) -> np.ndarray:
    return (mask.astype(np.uint8)) * np.uint8(255)


def cmd_synth_warp(args, config: dict) -> int:
    images_dir = _require_dir(Path(args.images), "input image")
    out = _out_dir(Path(args.out))
    count = int(_resolve(args, config, "synth", "count", 10))
    preset = _resolve(args, config, "synth", "preset", "train")
    grid_step = int(_resolve(args, config, "synth", "grid_step", 32))
    if preset not in _WARP_PRESETS:
        raise CliError(f"unknown preset {preset!r}")
    if count < 1 or grid_step < 1:
        raise CliError("count and grid-step must be positive")
    sources = sorted(p for p in images_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not sources:
        raise CliError(f"no images under {images_dir}")
    params = {"command": "synth.warp-pairs", "count": count, "preset": preset,
              "grid_step": grid_step, "seed": args.seed}
    ranges = _WARP_PRESETS[preset]

    def item(i: int):
        src = sources[i % len(sources)]
        img = formats.load_image(src)
        item_seed = mix_seed(args.seed, i)
        try:
            pair = make_warp_pair(img, ranges, grid_step, seed=item_seed, source=src.name)
        except SynthesisError as exc:
            return None, f"pair {i}: {exc}"
        names = (f"pair_{i:05d}_l.png", f"pair_{i:05d}_r.png", f"pair_{i:05d}_mask.png")
        formats.save_image(out / names[0], pair.left)
        formats.save_image(out / names[1], pair.right)
        formats.save_image(out / names[2], _mask_to_png(pair.valid_mask))
        record = {
            "left_path": names[0],
            "right_path": names[1],
            "gt_kind": "homography",
            "gt": [float(v) for v in pair.transform.matrix.reshape(-1)],
            "mask_path": names[2],
            "modalities": list(pair.modality_tags),
            "seed": item_seed,
            "source": src.name,
        }
        return record, None

    results = parallel_map(item, list(range(count)), args.workers)
    records = [r for r, _ in results if r is not None]
    failures = [m for _, m in results if m is not None]
    for message in failures:
        _say(args, message)
    formats.write_pair_manifest(out / "pairs.jsonl", records, _provenance(args.seed, params))
    print(f"wrote {len(records)} pairs to {out / 'pairs.jsonl'} ({len(failures)} failed)")
    return EXIT_OK if records else EXIT_ALL_FAILED


def _discover_views(scene_dir: Path) -> list[tuple[str, PosedView]]:
    views = []
    for cam_path in sorted(scene_dir.glob("*.json")):
        if cam_path.name.endswith(".png.json"):
            continue  # depth sidecars, not cameras
        stem = cam_path.stem
        image_path = scene_dir / f"{stem}.png"
        if not image_path.is_file():
            continue
        intr, pose = formats.read_camera_file(cam_path)
        if (scene_dir / f"{stem}.pfm").is_file():
            depth = DepthMap(formats.read_pfm(scene_dir / f"{stem}.pfm"))
        elif (scene_dir / f"{stem}_depth.png").is_file():
            depth = DepthMap(formats.read_depth_png(scene_dir / f"{stem}_depth.png"))
        else:
            raise CliError(f"view {stem}: no depth file ({stem}.pfm or {stem}_depth.png)")
        image = formats.load_image(image_path)
        views.append((stem, PosedView(intr, pose=pose, depth=depth, image=image)))
    if len(views) < 2:
        raise CliError(f"need at least two posed views under {scene_dir}")
    return views


def cmd_synth_depth(args, config: dict) -> int:
    scene_dir = _require_dir(Path(args.scenes), "scene")
    out = _out_dir(Path(args.out))
    grid_step = int(_resolve(args, config, "synth", "grid_step", 8))
    lo = float(_resolve(args, config, "synth", "overlap_min", 0.1))
    hi = float(_resolve(args, config, "synth", "overlap_max", 0.7))
    if grid_step < 1:
        raise CliError("grid-step must be positive")
    views = _discover_views(scene_dir)
    candidates = [(i, i + 1) for i in range(len(views) - 1)]
    params = {"command": "synth.depth-pairs", "grid_step": grid_step, "overlap_min": lo,
              "overlap_max": hi, "seed": args.seed}

    def item(k: int):
        a, b = candidates[k]
        name_a, view_a = views[a]
        name_b, view_b = views[b]
        source = f"{name_a}+{name_b}"
        try:
            pair = make_depth_pair(view_a, view_b, grid_step, source=source, interval=(lo, hi))
        except NoOverlapError as exc:
            return None, f"{source}: overlap {exc.ratio:.4f} outside [{lo}, {hi}]", False
        except (GeometryError, SynthesisError) as exc:
            return None, f"{source}: {exc}", True
        names = (f"pair_{k:05d}_l.png", f"pair_{k:05d}_r.png",
                 f"pair_{k:05d}_mask.png", f"pair_{k:05d}_matches.jsonl")
        formats.save_image(out / names[0], pair.left)
        formats.save_image(out / names[1], pair.right)
        formats.save_image(out / names[2], _mask_to_png(pair.valid_mask))
        header = {
            "left": names[0], "right": names[1],
            "width0": view_a.intrinsics.width, "height0": view_a.intrinsics.height,
            "width1": view_b.intrinsics.width, "height1": view_b.intrinsics.height,
        }
        formats.write_match_file(out / names[3], as_match_array(list(pair.matches)), header)
        record = {
            "left_path": names[0],
            "right_path": names[1],
            "gt_kind": "matches",
            "gt": names[3],
            "mask_path": names[2],
            "modalities": list(pair.modality_tags),
            "seed": mix_seed(args.seed, k),
            "source": source,
        }
        return record, None, False

    results = parallel_map(item, list(range(len(candidates))), args.workers)
    records = [r for r, _, _ in results if r is not None]
    skipped = [m for r, m, hard in results if r is None and not hard]
    failures = [m for r, m, hard in results if r is None and hard]
    for message in skipped + failures:
        _say(args, message)
    formats.write_pair_manifest(out / "pairs.jsonl", records, _provenance(args.seed, params))
    print(
        f"wrote {len(records)} pairs to {out / 'pairs.jsonl'} "
        f"({len(skipped)} outside overlap window, {len(failures)} failed)"
    )
    return EXIT_OK if records or skipped else EXIT_ALL_FAILED


def _build_generator(kind: str, side_stem: str, aux_dir: Path | None) -> ModalityGenerator:
    mode = _GENERATOR_MODES[kind]
    if kind in ("invert", "remap"):
        return ModalityGenerator(kind, mode)
    if aux_dir is None:
        raise CliError(f"--aux-dir is required for the {kind} generator")
    if kind == "depth-substitute":
        aux_path = aux_dir / f"{side_stem}.pfm"
        _require_file(aux_path, "auxiliary depth")
        return ModalityGenerator(kind, mode, aux=DepthMap(formats.read_pfm(aux_path)))
    aux_path = aux_dir / f"{side_stem}.png"
    _require_file(aux_path, "auxiliary image")
    return ModalityGenerator(kind, mode, aux=str(aux_path))


def cmd_synth_modality(args, config: dict) -> int:
    manifest_path = _require_file(Path(args.pairs), "pair manifest")
    base = manifest_path.parent
    out = _out_dir(Path(args.out))
    side = _resolve(args, config, "synth", "side", "right")
    if side not in ("left", "right"):
        raise CliError("side must be 'left' or 'right'")
    aux_dir = Path(args.aux_dir) if args.aux_dir else None
    records = formats.read_pair_manifest(manifest_path)
    params = {"command": "synth.modality", "generator": args.generator, "side": side,
              "seed": args.seed}

    def item(i: int):
        rec = records[i]
        left = formats.load_image(base / rec["left_path"])
        right = formats.load_image(base / rec["right_path"])
        if rec.get("mask_path"):
            mask = formats.load_image(base / rec["mask_path"]) > 0
        else:
            mask = np.ones(left.shape[:2], dtype=bool)
        transform = None
        if rec["gt_kind"] == "homography":
            transform = PlanarTransform(
                "homography", np.asarray(rec["gt"], dtype=np.float64).reshape(3, 3)
            )
        pair = SynthesizedPair(
            left, right, (), transform, mask,
            modality_tags=tuple(rec["modalities"]), seed=rec["seed"], source=rec["source"],
        )
        stem = Path(rec["left_path" if side == "left" else "right_path"]).stem
        try:
            gen = _build_generator(args.generator, stem, aux_dir)
            swapped = apply_modality(pair, gen, side)
        except (SynthesisError, CliError) as exc:
            return None, f"pair {i}: {exc}"
        formats.save_image(out / rec["left_path"], swapped.left)
        formats.save_image(out / rec["right_path"], swapped.right)
        new_rec = dict(rec)
        new_rec["modalities"] = list(swapped.modality_tags)
        if rec.get("mask_path"):
            formats.save_image(out / rec["mask_path"], _mask_to_png(swapped.valid_mask))
        if rec["gt_kind"] == "matches":
            (out / rec["gt"]).write_bytes((base / rec["gt"]).read_bytes())
        return new_rec, None

    results = parallel_map(item, list(range(len(records))), args.workers)
    new_records = [r for r, _ in results if r is not None]
    failures = [m for _, m in results if m is not None]
    for message in failures:
        _say(args, message)
    formats.write_pair_manifest(out / "pairs.jsonl", new_records, _provenance(args.seed, params))
    print(f"wrote {len(new_records)} pairs to {out / 'pairs.jsonl'} ({len(failures)} failed)")
    return EXIT_OK if new_records else EXIT_ALL_FAILED


# ---------------------------------------------------------------------------
# tracks


def _match_pair_files(matches_dir: Path) -> list[tuple[int, int, Path]]:
    out = []
    for path in sorted(matches_dir.iterdir()):
        if path.suffix not in (".jsonl", ".xmf"):
            continue
        parts = path.stem.split("_")
        if len(parts) != 2 or not all(p.isdigit() for p in parts):
            raise CliError(
                f"match file {path.name} must be named <frameA>_<frameB>{path.suffix}"
            )
        a, b = int(parts[0]), int(parts[1])
        if a == b:
            raise CliError(f"match file {path.name} pairs a frame with itself")
        out.append((a, b, path))
    if not out:
        raise CliError(f"no match files under {matches_dir}")
    return out


def cmd_tracks_build(args, config: dict) -> int:
    matches_dir = _require_dir(Path(args.matches), "match")
    out_path = Path(args.out)
    _out_dir(out_path.parent)
    window = int(_resolve(args, config, "tracks", "window", 7))
    if window < 1 or window % 2 == 0:
        raise CliError("window must be a positive odd integer")
    refiner = _resolve(args, config, "tracks", "refiner", "identity")
    refine_cmd = _resolve(args, config, "tracks", "refine_cmd", None)
    command = shlex.split(refine_cmd) if refine_cmd else None
    files = _match_pair_files(matches_dir)
    params = {"command": "tracks.build", "window": window, "refiner": refiner,
              "refine_cmd": refine_cmd, "seed": args.seed}

    # One endpoint observation per match row and side, grouped by frame.
    per_frame: dict[int, list[EndpointObservation]] = {}
    row_slots = []  # per file: list of (frame_a, idx_a, frame_b, idx_b, conf)
    for a, b, path in files:
        arr = formats.read_matches(path)
        slots = []
        obs_a = per_frame.setdefault(a, [])
        obs_b = per_frame.setdefault(b, [])
        for x0, y0, x1, y1, conf in arr:
            obs_a.append(EndpointObservation(a, (x0, y0), conf, (a, b), "left"))
            obs_b.append(EndpointObservation(b, (x1, y1), conf, (a, b), "right"))
            slots.append((len(obs_a) - 1, len(obs_b) - 1, conf))
        row_slots.append((a, b, slots))

    frames = sorted(per_frame)
    merged = parallel_map(lambda f: nms_merge(per_frame[f], window), frames, args.workers)
    anchors_by_frame = {}
    claims: dict = {}
    for frame, (anchors, assignment) in zip(frames, merged):
        anchors_by_frame[frame] = (anchors, assignment)
        claims.update(anchor_claims(per_frame[frame], anchors, assignment))

    edges = []
    for a, b, slots in row_slots:
        anchors_a, assign_a = anchors_by_frame[a]
        anchors_b, assign_b = anchors_by_frame[b]
        for ia, ib, conf in slots:
            anchor_a = anchors_a[assign_a[ia]]
            anchor_b = anchors_b[assign_b[ib]]
            edges.append(
                AnchoredEdge(
                    TrackObservation(a, anchor_a.point, anchor_a.confidence),
                    TrackObservation(b, anchor_b.point, anchor_b.confidence),
                    float(conf),
                )
            )
    tracks = build_tracks(edges)
    tracks = refine_tracks(tracks, claims, refiner=refiner, window=window, command=command)
    write_track_file(tracks, out_path, _provenance(args.seed, params))
    print(f"wrote {len(tracks)} tracks to {out_path} (from {len(edges)} anchored matches)")
    return EXIT_OK


def cmd_tracks_select(args, config: dict) -> int:
    tracks_path = _require_file(Path(args.tracks), "track")
    out_path = Path(args.out)
    _out_dir(out_path.parent)
    min_gap = int(_resolve(args, config, "tracks", "min_gap", 20))
    min_covis = int(_resolve(args, config, "tracks", "min_covis", 300))
    min_motion = float(_resolve(args, config, "tracks", "min_motion", 30.0))
    sample_k = _resolve(args, config, "tracks", "sample_k", None)
    sample_cell = int(_resolve(args, config, "tracks", "sample_cell", 64))
    tracks = read_track_file(tracks_path)
    selected = select_training_pairs(
        tracks, min_gap=min_gap, min_covis=min_covis, min_motion=min_motion
    )
    params = {"command": "tracks.select-pairs", "min_gap": min_gap, "min_covis": min_covis,
              "min_motion": min_motion, "sample_k": sample_k, "sample_cell": sample_cell,
              "seed": args.seed}
    records = []
    for rec in selected:
        matches = list(rec.matches)
        if sample_k is not None:
            matches = sample_matches(matches, k=int(sample_k), cell=sample_cell)
        records.append({
            "frames": list(rec.frames),
            "covisibility": rec.covisibility,
            "mean_motion": rec.mean_motion,
            "matches": [list(row) for row in as_match_array(matches).tolist()],
        })
    formats.write_jsonl(out_path, records, _provenance(args.seed, params))
    print(f"wrote {len(records)} training pairs to {out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit


def cmd_fit(args, config: dict) -> int:
    matches_path = _require_file(Path(args.matches), "match")
    out_path = Path(args.out)
    _out_dir(out_path.parent)
    kind = args.kind
    threshold = _resolve(args, config, "fit", "threshold", None)
    iterations = int(_resolve(args, config, "fit", "iterations", 1000))
    confidence = float(_resolve(args, config, "fit", "confidence", 0.99999))
    lr = float(_resolve(args, config, "fit", "lr", 0.1))
    fit_iterations = int(_resolve(args, config, "fit", "fit_iterations", 2000))
    grid = args.grid if args.grid else [8, 8]
    arr = formats.read_matches(matches_path)
    params = {"command": "fit", "kind": kind, "threshold": threshold,
              "iterations": iterations, "confidence": confidence, "lr": lr,
              "fit_iterations": fit_iterations, "grid": list(grid), "seed": args.seed}
    provenance = _provenance(args.seed, params)
    try:
        if kind == "bspline":
            # Optional robust affine prefilter, then a full-warp field from
            # an identity base so the stored model stands alone.
            if threshold is not None:
                cfg = RansacConfig(iterations, confidence, float(threshold), args.seed)
                pre = ransac(arr, "affine", cfg)
                inliers = list(pre.inlier_indices)
                arr = arr[pre.inlier_indices]
            else:
                inliers = list(range(len(arr)))
            model = fit_bspline_sgd(
                arr, PlanarTransform.identity("affine"),
                grid=(int(grid[0]), int(grid[1])), lr=lr, iterations=fit_iterations,
            )
        else:
            cfg = RansacConfig(
                iterations, confidence,
                float(threshold) if threshold is not None else None, args.seed,
            )
            intrinsics = None
            if kind == "essential":
                cams = [formats.read_camera_file(Path(p))[0] for p in args.intrinsics]
                intrinsics = (cams[0], cams[1])
            result = ransac(arr, kind, cfg, intrinsics=intrinsics)
            model, inliers = result.model, list(result.inlier_indices)
    except FitError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_ALL_FAILED
    formats.write_model_file(out_path, model, inliers)
    # append provenance to the model object for traceability
    obj = json.loads(out_path.read_text())
    obj["provenance"] = provenance
    out_path.write_text(json.dumps(obj, sort_keys=True) + "\n")
    print(f"fit {kind}: {len(inliers)}/{len(arr)} inliers -> {out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval / report


def cmd_eval(args, config: dict) -> int:
    manifest_path = _require_file(Path(args.manifest), "manifest")
    predictions = _require_dir(Path(args.predictions), "predictions")
    out_dir = _out_dir(Path(args.out_dir))
    thresholds = args.thresholds
    base_dir = args.base_dir
    params = {"command": "eval", "protocol": args.protocol, "thresholds": thresholds,
              "seed": args.seed}
    provenance = _provenance(args.seed, params)
    report = run_protocol(
        manifest_path, predictions, args.protocol, thresholds,
        seed=args.seed, workers=args.workers, base_dir=base_dir,
    )
    emit_report(report, out_dir / "report.json", out_dir / "curve.csv", provenance=provenance)
    failed = sum(1 for s in report.samples if s.failed)
    for t in thresholds:
        print(f"SR@{t:g}: {report.success_rates[t]:.6f}  AUC@{t:g}: {report.aucs[t]:.6f}")
    if report.rtre is not None:
        for key in sorted(report.rtre):
            print(f"{key}: {report.rtre[key]:.6f}")
    print(f"{len(report.samples) - failed}/{len(report.samples)} pairs scored "
          f"({failed} failed) -> {out_dir / 'report.json'}")
    return EXIT_ALL_FAILED if failed == len(report.samples) else EXIT_OK


def cmd_report(args, config: dict) -> int:
    report_path = _require_file(Path(args.report), "report")
    out_path = Path(args.out)
    _out_dir(out_path.parent)
    with open(report_path) as fh:
        obj = json.load(fh)
    if obj.get("schema") != "xmr-1":
        raise CliError(f"unsupported report schema {obj.get('schema')!r}")
    raw = obj.get("samples", [])
    if not raw:
        raise CliError("report holds no samples")
    samples = [
        ErrorSample(s["pair_id"], 0.0 if s["failed"] else float(s["error"]),
                    s["kind"], failed=bool(s["failed"]))
        for s in raw
    ]
    thresholds = sorted(float(t) for t in obj.get("success_rate", {}))
    if not thresholds:
        raise CliError("report declares no thresholds")
    step = _resolve(args, config, "report", "step", None)
    step = float(step) if step is not None else CURVE_STEP[samples[0].kind]
    curve = success_curve(samples, max(thresholds), step, extra=thresholds)
    params = {"command": "report", "step": step, "seed": args.seed}
    provenance = _provenance(args.seed, params)
    with open(out_path, "w") as fh:
        fh.write("# provenance " + json.dumps(provenance, sort_keys=True) + "\n")
        fh.write("threshold,success_rate\n")
        for t, sr in curve:
            fh.write(f"{t!r},{sr!r}\n")
    print(f"wrote {len(curve)} curve rows to {out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xmatch", description="Cross-modality matching data and evaluation pipeline."
    )
    parser.add_argument("--seed", type=int, default=0, help="run seed (default 0)")
    parser.add_argument("--workers", type=int, default=1, help="parallel workers (default 1)")
    parser.add_argument("--config", type=str, default=None,
                        help="JSON file with per-subcommand parameter defaults")
    parser.add_argument("--verbose", action="store_true", help="log per-item progress")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate supervised pairs")
    synth_sub = synth.add_subparsers(dest="mode", required=True)

    warp = synth_sub.add_parser("warp-pairs", help="single-image homography pairs")
    warp.add_argument("--images", required=True, help="directory of source images")
    warp.add_argument("--out", required=True, help="output directory")
    warp.add_argument("--count", type=int, default=None, help="pairs to generate (default 10)")
    warp.add_argument("--preset", choices=sorted(_WARP_PRESETS), default=None,
                      help="sampling ranges (default train)")
    warp.add_argument("--grid-step", dest="grid_step", type=int, default=None,
                      help="GT lattice spacing in px (default 32)")
    warp.set_defaults(func=cmd_synth_warp)

    depth = synth_sub.add_parser("depth-pairs", help="posed multi-view pairs")
    depth.add_argument("--scenes", required=True, help="scene directory of posed views")
    depth.add_argument("--out", required=True, help="output directory")
    depth.add_argument("--grid-step", dest="grid_step", type=int, default=None,
                       help="GT lattice spacing in px (default 8)")
    depth.add_argument("--overlap-min", dest="overlap_min", type=float, default=None,
                       help="mining window lower bound (default 0.1)")
    depth.add_argument("--overlap-max", dest="overlap_max", type=float, default=None,
                       help="mining window upper bound (default 0.7)")
    depth.set_defaults(func=cmd_synth_depth)

    modality = synth_sub.add_parser("modality", help="swap one side for another modality")
    modality.add_argument("--pairs", required=True, help="input pair manifest")
    modality.add_argument("--out", required=True, help="output directory")
    modality.add_argument("--generator", required=True, choices=sorted(_GENERATOR_MODES),
                          help="modality generator")
    modality.add_argument("--side", choices=("left", "right"), default=None,
                          help="side to substitute (default right)")
    modality.add_argument("--aux-dir", dest="aux_dir", default=None,
                          help="directory of aligned aux depth/images")
    modality.set_defaults(func=cmd_synth_modality)

    tracks = sub.add_parser("tracks", help="merge matches into tracks, select pairs")
    tracks_sub = tracks.add_subparsers(dest="mode", required=True)

    build = tracks_sub.add_parser("build", help="anchor, merge, and refine tracks")
    build.add_argument("--matches", required=True,
                       help="directory of <frameA>_<frameB>.jsonl|.xmf match files")
    build.add_argument("--out", required=True, help="output track file")
    build.add_argument("--window", type=_odd_int, default=None,
                       help="NMS merge window in px, odd (default 7)")
    build.add_argument("--refiner", choices=("identity", "local-centroid", "external"),
                       default=None, help="track refiner (default identity)")
    build.add_argument("--refine-cmd", dest="refine_cmd", default=None,
                       help="external refiner command line")
    build.set_defaults(func=cmd_tracks_build)

    select = tracks_sub.add_parser("select-pairs", help="emit supervised training pairs")
    select.add_argument("--tracks", required=True, help="track file")
    select.add_argument("--out", required=True, help="output pair record file")
    select.add_argument("--min-gap", dest="min_gap", type=int, default=None,
                        help="minimum frame gap (default 20)")
    select.add_argument("--min-covis", dest="min_covis", type=int, default=None,
                        help="minimum covisible tracks (default 300)")
    select.add_argument("--min-motion", dest="min_motion", type=float, default=None,
                        help="minimum mean motion in px (default 30)")
    select.add_argument("--sample-k", dest="sample_k", type=int, default=None,
                        help="cap matches per pair via spatial round-robin")
    select.add_argument("--sample-cell", dest="sample_cell", type=int, default=None,
                        help="sampling bin size in px (default 64)")
    select.set_defaults(func=cmd_tracks_select)

    fit = sub.add_parser("fit", help="fit a robust model to one match file")
    fit.add_argument("--matches", required=True, help="match file (either format)")
    fit.add_argument("--kind", required=True,
                     choices=("affine", "homography", "fundamental", "essential", "bspline"))
    fit.add_argument("--out", required=True, help="output model file")
    fit.add_argument("--threshold", type=float, default=None,
                     help="inlier threshold (default per kind; bspline: enables prefilter)")
    fit.add_argument("--iterations", type=int, default=None, help="RANSAC budget (default 1000)")
    fit.add_argument("--confidence", type=float, default=None,
                     help="RANSAC confidence (default 0.99999)")
    fit.add_argument("--intrinsics", nargs=2, metavar=("CAM0", "CAM1"), default=None,
                     help="camera files, required for essential")
    fit.add_argument("--grid", nargs=2, type=int, metavar=("GX", "GY"), default=None,
                     help="bspline control grid (default 8 8)")
    fit.add_argument("--lr", type=float, default=None, help="bspline learning rate (default 0.1)")
    fit.add_argument("--fit-iterations", dest="fit_iterations", type=int, default=None,
                     help="bspline descent steps (default 2000)")
    fit.set_defaults(func=cmd_fit)

    ev = sub.add_parser("eval", help="score predictions against a manifest")
    ev.add_argument("--manifest", required=True, help="evaluation manifest (JSON Lines)")
    ev.add_argument("--predictions", required=True, help="directory of per-pair match files")
    ev.add_argument("--protocol", required=True,
                    choices=("warp_affine", "warp_homography", "rtre_bspline", "pose_essential"))
    ev.add_argument("--thresholds", required=True, type=_threshold_list,
                    help="comma-separated thresholds, e.g. 5,10,20")
    ev.add_argument("--out-dir", dest="out_dir", required=True, help="report output directory")
    ev.add_argument("--base-dir", dest="base_dir", default=None,
                    help="base for relative manifest paths (default: manifest directory)")
    ev.set_defaults(func=cmd_eval)

    rep = sub.add_parser("report", help="regenerate the curve CSV from a report")
    rep.add_argument("--report", required=True, help="report JSON (schema xmr-1)")
    rep.add_argument("--out", required=True, help="output curve CSV")
    rep.add_argument("--step", type=float, default=None,
                     help="curve resolution (default per error kind)")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    if args.command == "fit" and args.kind == "essential" and not args.intrinsics:
        parser.error("--intrinsics CAM0 CAM1 is required for --kind essential")
    config = {}
    if args.config:
        try:
            with open(args.config) as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return EXIT_IO
        if not isinstance(config, dict):
            print("error: config must be a JSON object", file=sys.stderr)
            return EXIT_IO
    try:
        return args.func(args, config)
    except (CliError, EvalError, OSError, ValueError, TrackError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
