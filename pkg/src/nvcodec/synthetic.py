"""Deterministic moving-shapes sequences for toy training and codec tests."""

from __future__ import annotations

import numpy as np

from .errors import DataError


def _background(rng: np.random.Generator, size: int, cells: int = 8) -> np.ndarray:
    coarse = rng.uniform(0.15, 0.85, size=(3, cells, cells))
    frame = np.kron(coarse, np.ones((size // cells, size // cells)))
    frame += rng.normal(0.0, 0.01, size=frame.shape)
    return np.clip(frame, 0.0, 1.0)


def _disc_mask(size: int, cx: float, cy: float, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2


def _box_mask(size: int, cx: float, cy: float, half: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return (np.abs(xx - cx) <= half) & (np.abs(yy - cy) <= half)


def make_sequence(seed: int, frames: int, size: int = 32,
                  shapes: int = 2) -> np.ndarray:
    """(T, 3, size, size) float frames: shapes drifting over a still texture."""
    if frames < 1:
        raise DataError(f"need at least one frame, got {frames}")
    if size < 16:
        raise DataError(f"frame size {size} too small")
    rng = np.random.default_rng(seed)
    background = _background(rng, size)
    movers = []
    for _ in range(shapes):
        movers.append({
            "kind": rng.choice(["disc", "box"]),
            "x": rng.uniform(0.25 * size, 0.75 * size),
            "y": rng.uniform(0.25 * size, 0.75 * size),
            "vx": rng.uniform(-1.5, 1.5),
            "vy": rng.uniform(-1.5, 1.5),
            "extent": rng.uniform(size / 10, size / 5),
            "color": rng.uniform(0.0, 1.0, size=3),
        })
    out = np.empty((frames, 3, size, size))
    for t in range(frames):
        frame = background.copy()
        for m in movers:
            cx = (m["x"] + t * m["vx"]) % size
            cy = (m["y"] + t * m["vy"]) % size
            if m["kind"] == "disc":
                mask = _disc_mask(size, cx, cy, m["extent"])
            else:
                mask = _box_mask(size, cx, cy, m["extent"])
            for ch in range(3):
                frame[ch][mask] = m["color"][ch]
        out[t] = frame
    return out


def make_corpus(sequences: int, frames: int, size: int = 32,
                seed: int = 0) -> list[np.ndarray]:
    """Independent clips; clip i is reproducible from (seed, i) alone."""
    return [make_sequence(seed * 1000 + i, frames, size) for i in range(sequences)]
