"""
Homography warp synthesis and modality substitution
====================================================

Samples planar warps from the training ranges, builds a supervised pair from
a single procedural image, then swaps one side to a fake modality.
"""

import numpy as np

from xmatch import (
    MAP_PRESET,
    MEDICAL_PRESET,
    TRAIN_HOMOGRAPHY_RANGES,
    ModalityGenerator,
    apply_modality,
    make_warp_pair,
    sample_eval_transform,
    sample_homography,
)

# a checkerboard with a gradient so warps are visible in pixel statistics
ys, xs = np.mgrid[0:240, 0:320]
img = ((xs // 24 + ys // 24) % 2 * 140 + xs * 0.3).astype(np.uint8)

# Draw a few train-range warps. return_draw exposes the raw parameters.
for seed in range(3):
    t, draw = sample_homography(TRAIN_HOMOGRAPHY_RANGES, 320, 240, seed, return_draw=True)
    print(
        f"seed {seed}: rot {draw.rotation_deg:7.2f} deg, scale {draw.scale:.3f}, "
        f"skew {draw.skew[0]:+.3f}/{draw.skew[1]:+.3f}"
    )

# Evaluation presets are similarity-only and much narrower.
for preset in (MEDICAL_PRESET, MAP_PRESET):
    _, draw = sample_eval_transform(preset, 320, 240, seed=1, return_draw=True)
    print(f"{preset.name:>8} preset draw: rot {draw.rotation_deg:6.2f} deg, scale {draw.scale:.3f}")

# A full supervised pair: warped image, dense GT matches on a lattice, and a
# validity mask marking pixels that actually came from inside the source.
pair = make_warp_pair(img, TRAIN_HOMOGRAPHY_RANGES, grid_step=16, seed=7)
print(f"\npair from seed 7: {len(pair.matches)} GT matches, "
      f"{pair.valid_mask.mean():.1%} of the warped frame is valid")

# Every match is exact by construction; verify one against the transform.
m = pair.matches[0]
mapped = pair.transform.apply(np.array(m.left))
print(f"match check: {m.left} -> {tuple(round(v, 3) for v in m.right)}, "
      f"transform says {tuple(round(float(v), 3) for v in mapped)}")

# Swap the right side to a builtin stand-in modality. Geometry (matches,
# mask, transform) is untouched; only pixels and the tag change.
swapped = apply_modality(pair, ModalityGenerator("invert", "builtin-invert"), side="right")
print(f"\nmodalities after swap: {swapped.modality_tags}")
print(f"right image mean before {pair.right.mean():.1f}, after {swapped.right.mean():.1f}")
assert swapped.matches == pair.matches
