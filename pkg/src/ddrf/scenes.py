"""Procedural co-registered visible/infrared scene pairs.

Stand-ins for real registered pairs when none are at hand: both modalities
share one geometry (rectangles, ellipses, stripes), the visible image has
texture and shading, the infrared image has hot objects on a cool, smooth
background.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .imageio import write_image


def make_scene_pair(size: int = 96, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    rng = rng if rng is not None else np.random.default_rng(0)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    gx, gy = rng.uniform(-0.3, 0.3, size=2)
    vis = 0.45 + gx * (xx - 0.5) + gy * (yy - 0.5)
    ir = np.full((size, size), rng.uniform(0.1, 0.3))
    for _ in range(int(rng.integers(5, 9))):
        cx, cy = rng.uniform(0.1, 0.9, size=2)
        rx, ry = rng.uniform(0.05, 0.25, size=2)
        if rng.random() < 0.5:
            mask = (np.abs(xx - cx) < rx) & (np.abs(yy - cy) < ry)
        else:
            mask = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 < 1.0
        level = rng.uniform(0.05, 0.95)
        vis = np.where(mask, level, vis)
        if rng.random() < 0.5:
            freq = rng.uniform(8.0, 20.0)
            angle = rng.uniform(0.0, np.pi)
            stripes = 0.12 * np.sin(2 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy))
            vis = np.where(mask, vis + stripes, vis)
        hot = rng.random() < 0.6
        ir = np.where(mask, rng.uniform(0.6, 0.95) if hot else rng.uniform(0.2, 0.5), ir)
    vis = vis + 0.02 * rng.standard_normal((size, size))
    # infrared is smoother: a few passes of a 3-tap box blur
    for _ in range(2):
        p = np.pad(ir, 1, mode="edge")
        ir = (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] + p[1:-1, 1:-1]) / 5.0
    return np.clip(vis, 0.0, 1.0), np.clip(ir, 0.0, 1.0)


def write_scene_pairs(out_dir, count: int = 4, size: int = 96, seed: int = 0) -> list[Path]:
    """Write ``scene<k>_v.png`` / ``scene<k>_i.png`` pairs; returns the visible paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for k in range(count):
        vis, ir = make_scene_pair(size, rng)
        paths.append(write_image(out / f"scene{k:02d}_v.png", vis))
        write_image(out / f"scene{k:02d}_i.png", ir)
    return paths
