"""Fusion quality metrics and report aggregation.

Five metrics are computed per fused pair: PSNR, SSIM, feature mutual
information (FMI), feature similarity (FSIM) and intensity entropy (EN).
Full-reference metrics are evaluated against each source and averaged so
no modality is privileged; FMI uses both sources jointly; EN needs only
the fused image. All metrics run on grayscale/luma planes in [0, 1].
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, signal

from .imaging import rgb_to_ycbcr
from .phasecong import phase_congruency

METRIC_NAMES = ("psnr", "ssim", "fmi", "fsim", "en")

PSNR_CAP_DB = 100.0  # returned for zero MSE; keeps aggregates finite

# FSIM constants from the reference implementation (intensities on [0,255]).
_FSIM_T1 = 0.85
_FSIM_T2 = 160.0
_FSIM_DX = np.array([[3.0, 0.0, -3.0],
                     [10.0, 0.0, -10.0],
                     [3.0, 0.0, -3.0]]) / 16.0
_FSIM_DY = _FSIM_DX.T


def to_luma(img: np.ndarray) -> np.ndarray:
    """Grayscale plane of an image (Y channel for RGB inputs)."""
    img = np.asarray(img)
    if img.ndim == 3:
        return rgb_to_ycbcr(img).y
    return img


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(reference: np.ndarray, test: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images."""
    reference, test = _check_pair(reference, test)
    mse = float(np.mean((reference - test) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim(a: np.ndarray, b: np.ndarray, window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean local structural similarity with a Gaussian window.

    Follows the standard definition: 11x11 window, sigma 1.5, stabilizers
    C1=(k1*L)^2 and C2=(k2*L)^2, window applied in 'valid' mode.
    """
    a, b = _check_pair(a, b)
    if min(a.shape) < window_size:
        raise ValueError(
            f"image {a.shape} is smaller than the {window_size}x{window_size} window"
        )
    window = _gaussian_window(window_size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    def filt(x):
        return signal.convolve2d(x, window, mode="valid")

    mu1, mu2 = filt(a), filt(b)
    mu1_sq, mu2_sq, mu1_mu2 = mu1 * mu1, mu2 * mu2, mu1 * mu2
    sigma1_sq = filt(a * a) - mu1_sq
    sigma2_sq = filt(b * b) - mu2_sq
    sigma12 = filt(a * b) - mu1_mu2
    ssim_map = ((2.0 * mu1_mu2 + c1) * (2.0 * sigma12 + c2)) / (
        (mu1_sq + mu2_sq + c1) * (sigma1_sq + sigma2_sq + c2)
    )
    return float(ssim_map.mean())


def entropy(img: np.ndarray) -> float:
    """Shannon entropy (bits) of the 256-bin intensity histogram; in [0, 8]."""
    img = np.asarray(img, dtype=np.float64)
    hist, _ = np.histogram(img, bins=256, range=(0.0, 1.0))
    p = hist / img.size
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def _gradient_feature(img: np.ndarray) -> np.ndarray:
    """Sobel gradient magnitude, max-normalized into [0, 1]."""
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    return mag / peak if peak > 0 else mag


def _entropy_from_dist(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def _normalized_mi(x: np.ndarray, y: np.ndarray, bins: int = 256) -> float:
    """I(X;Y) / (H(X) + H(Y)) from a joint histogram; 0.5 for X == Y.

    When both inputs are constant (joint entropy zero) the 0/0 form is
    resolved to its identical-distribution limit 0.5.
    """
    joint, _, _ = np.histogram2d(x.ravel(), y.ravel(), bins=bins,
                                 range=[[0.0, 1.0], [0.0, 1.0]])
    joint = joint / joint.sum()
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    hx, hy = _entropy_from_dist(px), _entropy_from_dist(py)
    hxy = _entropy_from_dist(joint.ravel())
    denom = hx + hy
    if denom == 0.0:
        return 0.5
    return (hx + hy - hxy) / denom


def fmi(source_a: np.ndarray, source_b: np.ndarray, fused: np.ndarray) -> float:
    """Feature mutual information between the fused image and both sources.

    Gradient-magnitude features, 256-bin joint histograms; the two
    normalized MI terms are summed, so identical images score 1.0.
    """
    source_a, fused_arr = _check_pair(source_a, fused)
    source_b, _ = _check_pair(source_b, fused)
    feat_f = _gradient_feature(fused_arr)
    feat_a = _gradient_feature(source_a)
    feat_b = _gradient_feature(source_b)
    return _normalized_mi(feat_f, feat_a) + _normalized_mi(feat_f, feat_b)


def _fsim_downsample(img: np.ndarray, factor: int) -> np.ndarray:
    if factor <= 1:
        return img
    kernel = np.ones((factor, factor)) / (factor * factor)
    smoothed = signal.convolve2d(img, kernel, mode="same")
    return smoothed[::factor, ::factor]


def fsim(a: np.ndarray, b: np.ndarray) -> float:
    """Feature similarity from phase congruency and gradient magnitude.

    Similarity maps are combined multiplicatively and pooled with the
    per-pixel maximum phase congruency as the weighting.
    """
    a, b = _check_pair(a, b)
    y1 = a * 255.0
    y2 = b * 255.0
    factor = max(1, int(round(min(a.shape) / 256.0)))
    y1 = _fsim_downsample(y1, factor)
    y2 = _fsim_downsample(y2, factor)

    pc1 = phase_congruency(y1)
    pc2 = phase_congruency(y2)
    g1 = np.hypot(signal.convolve2d(y1, _FSIM_DX, mode="same"),
                  signal.convolve2d(y1, _FSIM_DY, mode="same"))
    g2 = np.hypot(signal.convolve2d(y2, _FSIM_DX, mode="same"),
                  signal.convolve2d(y2, _FSIM_DY, mode="same"))

    pc_sim = (2.0 * pc1 * pc2 + _FSIM_T1) / (pc1 ** 2 + pc2 ** 2 + _FSIM_T1)
    grad_sim = (2.0 * g1 * g2 + _FSIM_T2) / (g1 ** 2 + g2 ** 2 + _FSIM_T2)
    pc_max = np.maximum(pc1, pc2)
    sim = grad_sim * pc_sim * pc_max
    return float(sim.sum() / max(pc_max.sum(), np.finfo(np.float64).tiny))


def fusion_metrics(source_a: np.ndarray, source_b: np.ndarray, fused: np.ndarray) -> dict[str, float]:
    """All five metrics for one fused pair (color inputs reduced to luma)."""
    src_a = to_luma(source_a)
    src_b = to_luma(source_b)
    out = to_luma(fused)
    return {
        "psnr": 0.5 * (psnr(src_a, out) + psnr(src_b, out)),
        "ssim": 0.5 * (ssim(src_a, out) + ssim(src_b, out)),
        "fmi": fmi(src_a, src_b, out),
        "fsim": 0.5 * (fsim(src_a, out) + fsim(src_b, out)),
        "en": entropy(out),
    }


def format_mean_std(mean: float, std: float, digits: int = 3) -> str:
    return f"{mean:.{digits}f}±{std:.{digits}f}"


@dataclass
class MetricReport:
    """Per-pair metric records plus their aggregate mean/std."""

    per_pair: dict[str, dict[str, float]]
    aggregate: dict[str, tuple[float, float]] = field(default_factory=dict)
    run_metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.aggregate:
            self.aggregate = compute_aggregate(self.per_pair)

    def formatted(self) -> dict[str, str]:
        return {m: format_mean_std(*self.aggregate[m]) for m in METRIC_NAMES}


def compute_aggregate(per_pair: dict[str, dict[str, float]]) -> dict[str, tuple[float, float]]:
    """Mean and (population) std of every metric over the per-pair records."""
    agg = {}
    for m in METRIC_NAMES:
        values = np.array([per_pair[pid][m] for pid in sorted(per_pair)])
        agg[m] = (float(values.mean()), float(values.std()))
    return agg


def aggregate_runs(reports: list[MetricReport]) -> dict[str, tuple[float, float]]:
    """Mean/std of the per-run means, for repeated-split experiments."""
    if not reports:
        raise ValueError("no reports to aggregate")
    agg = {}
    for m in METRIC_NAMES:
        means = np.array([r.aggregate[m][0] for r in reports])
        agg[m] = (float(means.mean()), float(means.std()))
    return agg


def report_to_json(report: MetricReport, path: str | Path) -> None:
    payload = {
        "run_metadata": report.run_metadata,
        "per_pair": {pid: report.per_pair[pid] for pid in sorted(report.per_pair)},
        "aggregate": {m: {"mean": v[0], "std": v[1], "formatted": format_mean_std(*v)}
                      for m, v in report.aggregate.items()},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def report_to_csv(report: MetricReport, path: str | Path) -> None:
    """Flat table: one row per pair plus mean and std rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("pair_id",) + METRIC_NAMES)
        for pid in sorted(report.per_pair):
            rec = report.per_pair[pid]
            writer.writerow([pid] + [f"{rec[m]:.6f}" for m in METRIC_NAMES])
        writer.writerow(["mean"] + [f"{report.aggregate[m][0]:.6f}" for m in METRIC_NAMES])
        writer.writerow(["std"] + [f"{report.aggregate[m][1]:.6f}" for m in METRIC_NAMES])
