"""Atmospheric scattering, K-map restoration and the dark channel prior baseline.

Images here are float arrays shaped (3, H, W) with values in [0, 1].
Everything is computed in float64; the K formulation divides by (I - 1),
and float32 loses too much precision near saturated pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from priornet.errors import InputTooSmallError, ShapeError

T_FLOOR = 0.05
DEN_EPS = 1e-4
DEFAULT_BIAS = 1.0


@dataclass
class HazeParams:
    A: np.ndarray  # (3,) atmospheric light
    beta_scatter: float
    t: np.ndarray  # (H, W) transmission in [T_FLOOR, 1]

    def __post_init__(self):
        self.A = np.broadcast_to(np.asarray(self.A, dtype=np.float64), (3,)).copy()
        self.t = np.asarray(self.t, dtype=np.float64)
        if np.any(self.A < 0) or np.any(self.A > 1):
            raise ValueError(f"atmospheric light must lie in [0, 1], got {self.A}")


@dataclass
class KMap:
    k: np.ndarray  # (3, H, W)
    b: float = DEFAULT_BIAS


def _as_image(img, name="image") -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"{name} must be 3 x H x W, got {img.shape}")
    return img


def transmission_from_depth(depth: np.ndarray, beta_scatter: float) -> np.ndarray:
    if beta_scatter < 0:
        raise ValueError("scattering coefficient must be non-negative")
    return np.clip(np.exp(-beta_scatter * np.asarray(depth, dtype=np.float64)), T_FLOOR, 1.0)


def synthesize_haze(J: np.ndarray, params: HazeParams) -> np.ndarray:
    """Hazy observation I = J * t + A * (1 - t), clamped to [0, 1]."""
    J = _as_image(J, "J")
    if params.t.shape != J.shape[1:]:
        raise ShapeError(f"transmission {params.t.shape} does not match image {J.shape[1:]}")
    t = params.t[None]
    A = params.A[:, None, None]
    return np.clip(J * t + A * (1 - t), 0.0, 1.0)


def _guarded_denominator(I: np.ndarray) -> np.ndarray:
    d = I - 1.0
    small = np.abs(d) < DEN_EPS
    return np.where(small, np.where(d > 0, DEN_EPS, -DEN_EPS), d)


def ideal_K(I: np.ndarray, params: HazeParams, b: float = DEFAULT_BIAS) -> KMap:
    """The K-map that makes :func:`restore` invert the scattering model exactly."""
    I = _as_image(I, "I")
    if params.t.shape != I.shape[1:]:
        raise ShapeError(f"transmission {params.t.shape} does not match image {I.shape[1:]}")
    den = _guarded_denominator(I)
    A = params.A[:, None, None]
    t = params.t[None]
    k = (1.0 / t) * ((I - A) / den) + (A - b) / den
    return KMap(k=k, b=float(b))


def restore(I: np.ndarray, K: KMap | np.ndarray, b: float | None = None) -> np.ndarray:
    """J = K * I - K + b, clamped to [0, 1]."""
    I = _as_image(I, "I")
    if isinstance(K, KMap):
        k = K.k
        b = K.b if b is None else b
    else:
        k = np.asarray(K, dtype=np.float64)
        b = DEFAULT_BIAS if b is None else b
    if k.shape != I.shape:
        raise ShapeError(f"K-map {k.shape} does not match image {I.shape}")
    return np.clip(k * I - k + b, 0.0, 1.0)


# -- dark channel prior --------------------------------------------------------

def _min_filter(m: np.ndarray, patch: int) -> np.ndarray:
    r = patch // 2
    padded = np.pad(m, r, mode="edge")
    # min is separable over a square window
    rows = sliding_window_view(padded, patch, axis=0).min(axis=-1)
    return sliding_window_view(rows, patch, axis=1).min(axis=-1)


def dark_channel(I: np.ndarray, patch: int = 15) -> np.ndarray:
    """Min over RGB and over an edge-replicated patch x patch neighbourhood."""
    if patch < 1 or patch % 2 == 0:
        raise ValueError(f"patch must be a positive odd integer, got {patch}")
    I = _as_image(I)
    return _min_filter(I.min(axis=0), patch)


def box_sum(a: np.ndarray, radius: int) -> np.ndarray:
    """Sum over a (2r+1)^2 window clipped at the borders, via cumulative sums."""
    out = a
    for axis in (0, 1):
        pad = [(0, 0)] * a.ndim
        pad[axis] = (radius + 1, radius)
        cs = np.cumsum(np.pad(out, pad), axis=axis)
        n = out.shape[axis]
        out = np.take(cs, np.arange(2 * radius + 1, 2 * radius + 1 + n), axis=axis) - \
            np.take(cs, np.arange(n), axis=axis)
    return out


def box_mean(a: np.ndarray, radius: int) -> np.ndarray:
    return box_sum(a, radius) / box_sum(np.ones_like(a), radius)


def guided_filter(guide: np.ndarray, src: np.ndarray, radius: int, eps: float) -> np.ndarray:
    """Grayscale guided filter (locally linear model of ``src`` in ``guide``)."""
    mean_i = box_mean(guide, radius)
    mean_p = box_mean(src, radius)
    cov_ip = box_mean(guide * src, radius) - mean_i * mean_p
    var_i = box_mean(guide * guide, radius) - mean_i * mean_i
    a = cov_ip / (var_i + eps)
    b = mean_p - a * mean_i
    return box_mean(a, radius) * guide + box_mean(b, radius)


def to_gray(I: np.ndarray) -> np.ndarray:
    return 0.299 * I[0] + 0.587 * I[1] + 0.114 * I[2]


def estimate_airlight(I: np.ndarray, dark: np.ndarray, top_fraction: float = 1e-3) -> np.ndarray:
    """Per-channel mean of I over the brightest ``top_fraction`` of dark-channel pixels."""
    n = max(1, int(dark.size * top_fraction))
    order = np.argsort(-dark.ravel(), kind="stable")[:n]
    A = I.reshape(3, -1)[:, order].mean(axis=1)
    return np.maximum(A, 0.01)


def dcp_dehaze(I: np.ndarray, patch: int = 15, omega: float = 0.95, t_min: float = 0.1,
               refine: str | None = "guided", radius: int = 20, eps: float = 1e-3) -> np.ndarray:
    """Classical dark-channel-prior dehazing.

    ``refine`` is "guided" (default), "box" for a plain box blur of the
    transmission, or None to skip refinement.
    """
    I = _as_image(I)
    h, w = I.shape[1:]
    if h < patch or w < patch:
        raise InputTooSmallError(f"dcp_dehaze needs at least {patch}x{patch} pixels, got {h}x{w}")
    A = estimate_airlight(I, dark_channel(I, patch))
    t = 1.0 - omega * dark_channel(I / A[:, None, None], patch)
    t = np.clip(t, t_min, 1.0)
    if refine == "guided":
        t = guided_filter(to_gray(I), t, radius, eps)
    elif refine == "box":
        t = box_mean(t, radius)
    elif refine is not None:
        raise ValueError(f"unknown refinement {refine!r}")
    t = np.clip(t, t_min, 1.0)
    Ab = A[:, None, None]
    return np.clip((I - Ab) / t[None] + Ab, 0.0, 1.0)
