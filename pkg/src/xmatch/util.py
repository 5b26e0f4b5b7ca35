"""Shared plumbing: deterministic seed derivation, ordered parallel map, canonical JSON."""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence, TypeVar

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

T = TypeVar("T")
R = TypeVar("R")


def mix_seed(seed: int, index: int) -> int:
    """Derive the per-item seed for item `index` of a run seeded with `seed`.

    splitmix64 finalizer applied to seed + (index+1)*golden-ratio increment,
    all mod 2**64. Serial and parallel schedules derive identical streams.
    """
    z = (seed + (index + 1) * _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def parallel_map(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> list[R]:
    """Map fn over items, preserving input order in the result.

    workers <= 1 runs serially. Results are identical for any worker count;
    items must not share mutable state.
    """
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    """Stable hex digest of a resolved configuration dict."""
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()[:16]


def cache_dir() -> Path:
    """Directory for intermediate artifacts; override with XMF_CACHE_DIR."""
    override = os.environ.get("XMF_CACHE_DIR")
    if override:
        return Path(override)
    return Path.home() / ".cache" / "xmatch"
