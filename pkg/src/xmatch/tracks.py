"""Pseudo-ground-truth tracks from fragmented pairwise video matches.

Pipeline: schedule frame pairs, aggregate matcher endpoints per frame,
NMS-merge them into anchors, union anchored match edges into tracks, refine,
then select distant frame pairs with enough covisible, moving tracks.

Determinism: every greedy stage owns a total ordering (confidence descending,
then coordinates, then indices), so permuting equal-confidence inputs does
not change any output.
"""

from __future__ import annotations

import json
import os
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fitting import RansacConfig, ransac
from .geometry import Correspondence, as_match_array


class TrackError(Exception):
    pass


class InsufficientMatchesError(TrackError):
    pass


class ExternalRefinerProtocolError(TrackError):
    """External refiner broke the file contract (exit code, shape, frames)."""


@dataclass(frozen=True)
class EndpointObservation:
    """One match endpoint landing in a frame."""

    frame: int
    point: tuple[float, float]
    confidence: float
    source_pair: tuple[int, int]
    side: str

    def __post_init__(self):
        if self.frame not in self.source_pair:
            raise ValueError("frame must be one of the source pair")
        if self.side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")


@dataclass(frozen=True)
class Anchor:
    """A merged observation cluster snapped to its highest-confidence member."""

    frame: int
    point: tuple[float, float]
    confidence: float
    claimed: tuple[int, ...]


@dataclass(frozen=True)
class TrackObservation:
    frame: int
    point: tuple[float, float]
    confidence: float


@dataclass(frozen=True)
class AnchoredEdge:
    """A match between two frame anchors; endpoints ordered by frame."""

    a: TrackObservation
    b: TrackObservation
    confidence: float

    def __post_init__(self):
        if self.a.frame == self.b.frame:
            raise ValueError("edge endpoints must come from different frames")
        if self.a.frame > self.b.frame:
            a, b = self.b, self.a
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class Track:
    id: int
    observations: tuple[TrackObservation, ...]

    def __post_init__(self):
        obs = tuple(self.observations)
        if len(obs) < 2:
            raise ValueError("a track needs at least two observations")
        frames = [o.frame for o in obs]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError("track frames must be strictly increasing")
        object.__setattr__(self, "observations", obs)

    def frame_set(self) -> frozenset[int]:
        return frozenset(o.frame for o in self.observations)


@dataclass(frozen=True)
class TrainingPairRecord:
    frames: tuple[int, int]
    matches: tuple[Correspondence, ...]
    covisibility: int
    mean_motion: float


# ---------------------------------------------------------------------------
# Scheduling.


def plan_pair_schedule(frame_count: int, stride: int = 4, lookahead: int = 10) -> list[tuple[int, int]]:
    """Raw-index frame pairs: subsample by stride, then pair each retained
    frame with its next `lookahead` retained frames."""
    if frame_count < 2:
        raise ValueError("need at least two frames")
    if stride < 1 or lookahead < 1:
        raise ValueError("stride and lookahead must be >= 1")
    retained = list(range(0, frame_count, stride))
    pairs = []
    for i, a in enumerate(retained):
        for b in retained[i + 1 : i + 1 + lookahead]:
            pairs.append((a, b))
    return pairs


# ---------------------------------------------------------------------------
# NMS merge.


def nms_merge(
    observations, window: int = 7
) -> tuple[list[Anchor], dict[int, int]]:
    """Greedily merge one frame's observations into separated anchors.

    Observations are visited by descending confidence (ties: ascending
    (y, x), then input index). Each unclaimed visit founds an anchor that
    claims every still-unclaimed observation within Chebyshev distance
    <= (window-1)/2. Returns the anchors plus an observation->anchor index
    map covering every input.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and >= 1")
    observations = list(observations)
    frames = {o.frame for o in observations}
    if len(frames) > 1:
        raise ValueError(f"nms_merge expects one frame, got {sorted(frames)}")
    radius = (window - 1) // 2
    cell = max(radius, 1)
    buckets: dict[tuple[int, int], list[int]] = {}
    for i, o in enumerate(observations):
        key = (int(np.floor(o.point[0] / cell)), int(np.floor(o.point[1] / cell)))
        buckets.setdefault(key, []).append(i)

    order = sorted(
        range(len(observations)),
        key=lambda i: (-observations[i].confidence, observations[i].point[1], observations[i].point[0], i),
    )
    claimed = [False] * len(observations)
    anchors: list[Anchor] = []
    assignment: dict[int, int] = {}
    for founder in order:
        if claimed[founder]:
            continue
        fx, fy = observations[founder].point
        kx, ky = int(np.floor(fx / cell)), int(np.floor(fy / cell))
        members = []
        for bx in (kx - 1, kx, kx + 1):
            for by in (ky - 1, ky, ky + 1):
                for i in buckets.get((bx, by), ()):
                    if claimed[i]:
                        continue
                    px, py = observations[i].point
                    if max(abs(px - fx), abs(py - fy)) <= radius:
                        members.append(i)
        members.sort()
        anchor_id = len(anchors)
        for i in members:
            claimed[i] = True
            assignment[i] = anchor_id
        conf = max(observations[i].confidence for i in members)
        anchors.append(Anchor(observations[founder].frame, (fx, fy), conf, tuple(members)))
    return anchors, assignment


def anchor_claims(observations, anchors, assignment) -> dict:
    """Group raw observation points by the anchor that claimed them.

    Keys are (frame, x, y) of the anchor; values are [(point, confidence)]
    in ascending observation order. Feeds the local-centroid refiner.
    """
    observations = list(observations)
    claims: dict = {}
    for i in sorted(assignment):
        a = anchors[assignment[i]]
        key = (a.frame, a.point[0], a.point[1])
        claims.setdefault(key, []).append((observations[i].point, observations[i].confidence))
    return claims


# ---------------------------------------------------------------------------
# Track building.


class _DisjointSet:
    def __init__(self):
        self.parent: dict = {}
        self.frames: dict = {}  # root -> {frame: node key}

    def add(self, key, frame):
        if key not in self.parent:
            self.parent[key] = key
            self.frames[key] = {frame: key}

    def find(self, key):
        root = key
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[key] != root:
            self.parent[key], key = root, self.parent[key]
        return root

    def union(self, a, b) -> bool:
        """Merge the components of a and b unless they share a frame."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return True
        fa, fb = self.frames[ra], self.frames[rb]
        if len(fa) < len(fb):
            ra, rb, fa, fb = rb, ra, fb, fa
        if any(f in fa for f in fb):
            return False
        self.parent[rb] = ra
        fa.update(fb)
        del self.frames[rb]
        return True


def build_tracks(edges) -> list[Track]:
    """Union anchored edges into frame-unique tracks.

    Edges are processed by descending confidence with a total deterministic
    tie-break; an edge that would put two distinct same-frame anchors in one
    track is rejected. Tracks shorter than 2 observations are dropped and
    ids are assigned in (first frame, first point) order.
    """
    edges = sorted(
        edges,
        key=lambda e: (-e.confidence, e.a.frame, e.b.frame, e.a.point, e.b.point),
    )
    dsu = _DisjointSet()
    nodes: dict = {}
    for e in edges:
        for end in (e.a, e.b):
            key = (end.frame, end.point[0], end.point[1])
            if key not in nodes:
                nodes[key] = end
            dsu.add(key, end.frame)
    for e in edges:
        ka = (e.a.frame, e.a.point[0], e.a.point[1])
        kb = (e.b.frame, e.b.point[0], e.b.point[1])
        dsu.union(ka, kb)

    groups: dict = {}
    for key in nodes:
        groups.setdefault(dsu.find(key), []).append(key)
    raw = []
    for keys in groups.values():
        if len(keys) < 2:
            continue
        obs = sorted((nodes[k] for k in keys), key=lambda o: o.frame)
        raw.append(obs)
    raw.sort(key=lambda obs: [(o.frame, o.point[0], o.point[1]) for o in obs])
    return [Track(i, tuple(obs)) for i, obs in enumerate(raw)]


# ---------------------------------------------------------------------------
# Refinement.


def write_track_file(tracks, path, provenance: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if provenance is not None:
            fh.write(json.dumps({"type": "provenance", **provenance}, sort_keys=True) + "\n")
        for t in tracks:
            rec = {
                "track_id": t.id,
                "obs": [
                    {"frame": o.frame, "x": o.point[0], "y": o.point[1], "conf": o.confidence}
                    for o in t.observations
                ],
            }
            fh.write(json.dumps(rec) + "\n")


def read_track_file(path) -> list[Track]:
    tracks = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "type" in rec:  # tagged provenance/header record
                continue
            obs = tuple(
                TrackObservation(int(o["frame"]), (float(o["x"]), float(o["y"])), float(o["conf"]))
                for o in rec["obs"]
            )
            tracks.append(Track(int(rec["track_id"]), obs))
    return tracks


def refine_tracks(
    tracks,
    claims=None,
    refiner: str = "identity",
    window: int = 7,
    command=None,
) -> list[Track]:
    """Refine anchor positions without touching track structure.

    identity: returns the input tracks. local-centroid: moves each point to
    the confidence-weighted mean of the observations its anchor claimed
    (see anchor_claims), clamped per axis to the merge radius. external:
    round-trips the tracks through `command input_path output_path`, which
    must exit 0 and preserve every track's id and frame set.
    """
    tracks = list(tracks)
    if refiner == "identity":
        return tracks
    if refiner == "local-centroid":
        radius = (window - 1) / 2.0
        claims = claims or {}
        out = []
        for t in tracks:
            obs = []
            for o in t.observations:
                entry = claims.get((o.frame, o.point[0], o.point[1]))
                if not entry:
                    obs.append(o)
                    continue
                pts = np.array([p for p, _ in entry])
                conf = np.array([c for _, c in entry])
                total = conf.sum()
                mean = pts.mean(axis=0) if total == 0 else (pts * conf[:, None]).sum(axis=0) / total
                dx = min(max(mean[0] - o.point[0], -radius), radius)
                dy = min(max(mean[1] - o.point[1], -radius), radius)
                obs.append(TrackObservation(o.frame, (o.point[0] + dx, o.point[1] + dy), o.confidence))
            out.append(Track(t.id, tuple(obs)))
        return out
    if refiner == "external":
        if not command:
            raise ValueError("external refiner needs a command")
        scratch = os.environ.get("XMF_CACHE_DIR")
        if scratch:
            os.makedirs(scratch, exist_ok=True)
        with tempfile.TemporaryDirectory(prefix="xmatch-refine-", dir=scratch) as tmp:
            src = Path(tmp) / "tracks_in.jsonl"
            dst = Path(tmp) / "tracks_out.jsonl"
            write_track_file(tracks, src)
            proc = subprocess.run([*command, str(src), str(dst)], capture_output=True, text=True)
            if proc.returncode != 0:
                raise ExternalRefinerProtocolError(
                    f"refiner exited {proc.returncode}: {proc.stderr.strip()[:500]}"
                )
            if not dst.exists():
                raise ExternalRefinerProtocolError("refiner produced no output file")
            try:
                refined = read_track_file(dst)
            except (ValueError, KeyError, json.JSONDecodeError) as exc:
                raise ExternalRefinerProtocolError(f"unreadable refiner output: {exc}") from exc
        if sorted(t.id for t in refined) != sorted(t.id for t in tracks):
            raise ExternalRefinerProtocolError("refiner changed the track id set")
        by_id = {t.id: t for t in refined}
        for t in tracks:
            if by_id[t.id].frame_set() != t.frame_set():
                raise ExternalRefinerProtocolError(f"refiner changed frames of track {t.id}")
        return [by_id[t.id] for t in tracks]
    raise ValueError(f"unknown refiner {refiner!r}")


# ---------------------------------------------------------------------------
# Pair selection and match post-processing.


def select_training_pairs(
    tracks,
    min_gap: int = 20,
    min_covis: int = 300,
    min_motion: float = 30.0,
) -> list[TrainingPairRecord]:
    """Frame pairs far enough apart with enough covisible, moving tracks.

    All three thresholds are inclusive (>=). Matches pair each covisible
    track's points at the two frames, confidence = min of the endpoints.
    """
    per_frame: dict[int, dict[int, TrackObservation]] = {}
    for t in tracks:
        for o in t.observations:
            per_frame.setdefault(o.frame, {})[t.id] = o
    frames = sorted(per_frame)
    records = []
    for i, a in enumerate(frames):
        for b in frames[i + 1 :]:
            if b - a < min_gap:
                continue
            ids = sorted(per_frame[a].keys() & per_frame[b].keys())
            if len(ids) < min_covis:
                continue
            pa = per_frame[a]
            pb = per_frame[b]
            motion = float(
                np.mean(
                    [
                        np.hypot(pb[i2].point[0] - pa[i2].point[0], pb[i2].point[1] - pa[i2].point[1])
                        for i2 in ids
                    ]
                )
            )
            if motion < min_motion:
                continue
            matches = tuple(
                Correspondence(pa[i2].point, pb[i2].point, min(pa[i2].confidence, pb[i2].confidence))
                for i2 in ids
            )
            records.append(TrainingPairRecord((a, b), matches, len(ids), motion))
    return records


def sample_matches(matches, k: int = 10000, cell: int = 64) -> list[Correspondence]:
    """Spatially balanced top-confidence subsample.

    The left image is tiled into cell x cell bins; bins are visited round
    robin in (row, column) order, each yielding its highest-confidence
    remaining match, until k matches are taken or all bins are empty.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if cell < 1:
        raise ValueError("cell must be >= 1")
    matches = list(matches)
    bins: dict[tuple[int, int], list[int]] = {}
    for i, m in enumerate(matches):
        key = (int(np.floor(m.left[1] / cell)), int(np.floor(m.left[0] / cell)))
        bins.setdefault(key, []).append(i)
    queues = []
    for key in sorted(bins):
        idx = sorted(bins[key], key=lambda i: (-matches[i].confidence, i))
        queues.append(idx[::-1])  # pop() takes the best remaining
    taken: list[Correspondence] = []
    while len(taken) < k and queues:
        for q in queues:
            taken.append(matches[q.pop()])
            if len(taken) >= k:
                break
        queues = [q for q in queues if q]
    return taken


def geometric_verify(
    matches,
    size_left: tuple[int, int],
    size_right: tuple[int, int],
    threshold: float = 2.0,
    seed: int = 0,
) -> list[Correspondence]:
    """Keep matches consistent with a RANSAC fundamental matrix.

    Needs >= 8 matches inside the stated (width, height) bounds; returns the
    Sampson inliers (<= threshold pixels) of the best model in input order.
    """
    matches = list(matches)
    if len(matches) < 8:
        raise InsufficientMatchesError(f"geometric verification needs >= 8 matches, got {len(matches)}")
    arr = as_match_array(matches)
    wl, hl = size_left
    wr, hr = size_right
    if (
        (arr[:, 0] < 0).any()
        or (arr[:, 0] > wl - 1).any()
        or (arr[:, 1] < 0).any()
        or (arr[:, 1] > hl - 1).any()
        or (arr[:, 2] < 0).any()
        or (arr[:, 2] > wr - 1).any()
        or (arr[:, 3] < 0).any()
        or (arr[:, 3] > hr - 1).any()
    ):
        raise ValueError("match coordinates fall outside the stated image sizes")
    result = ransac(arr, "fundamental", RansacConfig(inlier_threshold=threshold, seed=seed))
    return [matches[i] for i in result.inlier_indices]
