"""PSNR and SSIM for float images in [0, 1]."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from priornet.errors import InputTooSmallError, ShapeError

PSNR_EXACT = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class QualityReport:
    image_id: str
    psnr_db: float
    ssim: float
    exact: bool = False


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """10 log10(1 / MSE) in dB; ``math.inf`` when the images are identical."""
    a, b = _pair(a, b)
    err = np.mean((a - b) ** 2)
    if err == 0:
        return math.inf
    return float(10.0 * np.log10(1.0 / err))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalised 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    n = taps.size
    h, w = img.shape
    rows = sum(taps[i] * img[i:h - n + 1 + i, :] for i in range(n))
    return sum(taps[j] * rows[:, j:w - n + 1 + j] for j in range(n))


def ssim_map(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> np.ndarray:
    """Per-window SSIM of two single-channel images (valid windows only)."""
    taps = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _filter_valid(a, taps)
    mu_b = _filter_valid(b, taps)
    var_a = _filter_valid(a * a, taps) - mu_a * mu_a
    var_b = _filter_valid(b * b, taps) - mu_b * mu_b
    cov = _filter_valid(a * b, taps) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b) -> float:
    """Mean SSIM over valid 11x11 windows and over channels.

    Accepts (C, H, W) or single-channel (H, W) arrays.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    h, w = a.shape[-2:]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise InputTooSmallError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")
    return float(np.mean([ssim_map(a[c], b[c]).mean() for c in range(a.shape[0])]))


def quality_report(image_id: str, result, reference) -> QualityReport:
    p = psnr(result, reference)
    exact = math.isinf(p)
    return QualityReport(image_id=image_id, psnr_db=PSNR_EXACT if exact else p,
                         ssim=ssim(result, reference), exact=exact)


def mean_report(reports: list[QualityReport]) -> QualityReport:
    """Arithmetic mean of the reported rows (exact matches count as PSNR_EXACT)."""
    if not reports:
        raise ValueError("no reports to average")
    return QualityReport(image_id="mean",
                         psnr_db=float(np.mean([r.psnr_db for r in reports])),
                         ssim=float(np.mean([r.ssim for r in reports])),
                         exact=all(r.exact for r in reports))


def write_report_csv(reports: list[QualityReport], path) -> QualityReport:
    """Write ``image_id,psnr_db,ssim`` rows in the given order plus a final mean row."""
    summary = mean_report(reports)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "psnr_db", "ssim"])
        for r in [*reports, summary]:
            w.writerow([r.image_id, f"{r.psnr_db:.8f}", f"{r.ssim:.8f}"])
    return summary
