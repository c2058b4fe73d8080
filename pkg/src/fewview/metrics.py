"""Image-quality metrics (PSNR, SSIM) and metric reports."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

LUMA = np.array([0.2126, 0.7152, 0.0722])
PSNR_CAP = 99.0

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


def psnr(a: np.ndarray, b: np.ndarray, cap: float = PSNR_CAP) -> float:
    """Peak signal-to-noise ratio in dB for unit dynamic range."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return cap
    return min(cap, -10.0 * np.log10(mse))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    return img @ LUMA if img.ndim == 3 else img


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5),
    averaged over valid window positions."""
    ga, gb = to_gray(a), to_gray(b)
    if ga.shape != gb.shape:
        raise ValueError(f"shape mismatch {ga.shape} vs {gb.shape}")
    if min(ga.shape) < _SSIM_WINDOW:
        raise ValueError(f"image smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} window")
    w = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)

    def f(x):
        return convolve2d(x, w, mode="valid")

    mu_a, mu_b = f(ga), f(gb)
    var_a = f(ga * ga) - mu_a ** 2
    var_b = f(gb * gb) - mu_b ** 2
    cov = f(ga * gb) - mu_a * mu_b
    num = (2 * mu_a * mu_b + _C1) * (2 * cov + _C2)
    den = (mu_a ** 2 + mu_b ** 2 + _C1) * (var_a + var_b + _C2)
    return float((num / den).mean())


@dataclass(frozen=True)
class MetricReport:
    per_view: tuple  # of (view_id, psnr, ssim, proxy)

    @property
    def aggregate(self) -> dict:
        arr = np.array([[p, s, x] for _, p, s, x in self.per_view])
        return {"psnr": float(arr[:, 0].mean()),
                "ssim": float(arr[:, 1].mean()),
                "proxy": float(arr[:, 2].mean())}

    def to_json(self) -> dict:
        return {
            "per_view": [{"id": i, "psnr": p, "ssim": s, "proxy": x}
                         for i, p, s, x in self.per_view],
            "aggregate": self.aggregate,
        }

    def to_csv(self) -> str:
        lines = ["id,psnr,ssim,proxy"]
        for i, p, s, x in self.per_view:
            lines.append(f"{i},{p},{s},{x}")
        agg = self.aggregate
        lines.append(f"mean,{agg['psnr']},{agg['ssim']},{agg['proxy']}")
        return "\n".join(lines) + "\n"


def evaluate_pairs(pairs, proxy_fn) -> MetricReport:
    """Score (id, image, reference) triples with PSNR/SSIM/perceptual proxy."""
    rows = []
    for vid, img, ref in pairs:
        rows.append((vid, psnr(img, ref), ssim(img, ref), float(proxy_fn(img, ref))))
    return MetricReport(per_view=tuple(rows))


def report_to_file(report: MetricReport, path):
    with open(path, "w") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
