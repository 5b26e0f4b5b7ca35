"""
Repairing fragmented video matches into tracks
==============================================

Simulates a matcher run over a short clip: pairwise match files with jitter
and duplicated endpoints, then NMS anchor merging, union-find track building,
and training-pair selection.
"""

import numpy as np

from xmatch import (
    AnchoredEdge,
    EndpointObservation,
    TrackObservation,
    anchor_claims,
    build_tracks,
    nms_merge,
    plan_pair_schedule,
    select_training_pairs,
)

rng = np.random.default_rng(4)

N_FRAMES = 40
schedule = plan_pair_schedule(N_FRAMES, stride=4, lookahead=10)
print(f"schedule covers {len(schedule)} frame pairs, e.g. {schedule[:4]} ...")

# 12x12 lattice of scene points drifting 2.5 px/frame
g = np.arange(30.0, 210.0, 15.0)
xs, ys = np.meshgrid(g, g)
base = np.stack([xs.ravel(), ys.ravel()], axis=1)
pos = lambda f: base + np.array([2.5 * f, 0.8 * f])

# matcher output: jittered endpoints, 20% duplicated at a 1-2 px offset
per_frame, rows = {}, []
for a, b in schedule:
    qa = pos(a) + rng.uniform(-0.5, 0.5, base.shape)
    qb = pos(b) + rng.uniform(-0.5, 0.5, base.shape)
    for k in range(len(base)):
        entries = [(qa[k], qb[k], rng.uniform(0.75, 1.0))]
        if rng.random() < 0.2:
            bump = rng.uniform(1.0, 2.0) * np.array([1.0, 1.0]) / np.sqrt(2.0)
            entries.append((qa[k] + bump, qb[k] + bump, rng.uniform(0.3, 0.6)))
        for pl, pr, c in entries:
            ia = len(per_frame.setdefault(a, []))
            ib = len(per_frame.setdefault(b, []))
            per_frame[a].append(EndpointObservation(a, tuple(pl), c, (a, b), "left"))
            per_frame[b].append(EndpointObservation(b, tuple(pr), c, (a, b), "right"))
            rows.append((a, b, ia, ib, c))

n_obs = sum(len(v) for v in per_frame.values())
print(f"raw: {n_obs} endpoint observations across {len(per_frame)} frames")

# NMS merge snaps duplicates onto confidence-ranked anchors, per frame.
merged = {f: nms_merge(obs, window=7) for f, obs in per_frame.items()}
claims = {}
for f, obs in per_frame.items():
    claims.update(anchor_claims(obs, *merged[f]))
n_anchors = sum(len(a) for a, _ in merged.values())
print(f"after nms_merge(7): {n_anchors} anchors "
      f"({n_obs - n_anchors} observations absorbed)")

# Route each match row through its endpoints' anchors, then union-find.
edges = []
for a, b, ia, ib, c in rows:
    na = merged[a][0][merged[a][1][ia]]
    nb = merged[b][0][merged[b][1][ib]]
    edges.append(AnchoredEdge(
        TrackObservation(a, na.point, na.confidence),
        TrackObservation(b, nb.point, nb.confidence), c,
    ))
tracks = build_tracks(edges)
lengths = [len(t.observations) for t in tracks]
print(f"build_tracks: {len(tracks)} tracks, median length {int(np.median(lengths))} frames")

# Select far-apart, well-covered, actually-moving frame pairs for training.
selected = select_training_pairs(tracks, min_gap=10, min_covis=100, min_motion=20.0)
print(f"\nselected {len(selected)} training pairs (gap >= 10, covis >= 100, motion >= 20 px)")
rec = selected[0]
print(f"first pair: frames {rec.frames}, {rec.covisibility} covisible tracks, "
      f"mean motion {rec.mean_motion:.1f} px, {len(rec.matches)} matches")

# Emitted matches track the true flow to within the jitter budget.
a, b = rec.frames
left = np.array([m.left for m in rec.matches])
right = np.array([m.right for m in rec.matches])
true = left + np.array([2.5 * (b - a), 0.8 * (b - a)])
err = np.linalg.norm(right - true, axis=1)
print(f"GT fidelity: max deviation from true flow {err.max():.2f} px")
