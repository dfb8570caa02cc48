"""Procedural clean scenes, depth maps and hazy corpora for desk-scale runs.

A scene is a Voronoi mosaic of saturated colour regions under smooth
shading, with a depth map that grows towards the top of the frame and is
offset per region, so depth edges follow object edges.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from priornet.haze import HazeParams, synthesize_haze, transmission_from_depth


@dataclass
class HazyPair:
    hazy: np.ndarray
    clean: np.ndarray
    params: HazeParams


def make_scene(rng: np.random.Generator, height: int = 64, width: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Return (clean 3xHxW in [0, 1], depth HxW in [0, 1])."""
    n_regions = int(rng.integers(6, 13))
    sites = rng.random((n_regions, 2)) * [height, width]
    yy, xx = np.mgrid[0:height, 0:width]
    dist = (yy[None] - sites[:, 0, None, None]) ** 2 + (xx[None] - sites[:, 1, None, None]) ** 2
    label = dist.argmin(axis=0)

    colours = np.array([colorsys.hsv_to_rgb(rng.random(), rng.uniform(0.55, 1.0), rng.uniform(0.25, 1.0))
                        for _ in range(n_regions)])
    img = colours[label].transpose(2, 0, 1)

    fy, fx = rng.uniform(0.5, 2.0, 2)
    phase = rng.uniform(0, 2 * np.pi, 2)
    shading = 0.8 + 0.2 * np.cos(2 * np.pi * fy * yy / height + phase[0]) * np.cos(2 * np.pi * fx * xx / width + phase[1])
    img = img * shading[None] + rng.normal(0.0, 0.02, img.shape)
    clean = np.clip(img, 0.0, 1.0)

    offsets = rng.uniform(-0.15, 0.15, n_regions)
    depth = (1.0 - yy / max(height - 1, 1)) * 0.8 + 0.2 + offsets[label]
    depth = np.clip(depth, 0.0, 1.0)
    return clean, depth


def sample_params(rng: np.random.Generator, depth: np.ndarray, a_range=(0.7, 1.0),
                  beta_range=(0.6, 1.8)) -> HazeParams:
    """Grey airlight A ~ U(a_range) and scattering beta ~ U(beta_range)."""
    a = rng.uniform(*a_range)
    beta = rng.uniform(*beta_range)
    return HazeParams(A=np.full(3, a), beta_scatter=beta, t=transmission_from_depth(depth, beta))


def make_corpus(seed: int, count: int, size: int = 64, a_range=(0.7, 1.0),
                beta_range=(0.6, 1.8)) -> list[HazyPair]:
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(count):
        clean, depth = make_scene(rng, size, size)
        params = sample_params(rng, depth, a_range, beta_range)
        pairs.append(HazyPair(synthesize_haze(clean, params), clean, params))
    return pairs


def uniform_haze(clean: np.ndarray, t: float = 0.6, A: float = 0.9) -> tuple[np.ndarray, HazeParams]:
    params = HazeParams(A=np.full(3, A), beta_scatter=0.0, t=np.full(clean.shape[1:], t))
    return synthesize_haze(clean, params), params
