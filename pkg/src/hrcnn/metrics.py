"""PSNR / SSIM and baseline-vs-model evaluation reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PEAK = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pixels(img):
    return np.asarray(getattr(img, "pixels", img), dtype=np.float64)


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"image extents differ: {a.shape} vs {b.shape}")


def psnr(a, b):
    """Peak signal-to-noise ratio in dB with peak 255; ``inf`` for identical images."""
    a, b = _pixels(a), _pixels(b)
    _same_shape(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(PEAK**2 / mse))


def _gaussian_window():
    x = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2
    g = np.exp(-(x**2) / (2 * SSIM_SIGMA**2))
    return g / g.sum()


_GAUSS = _gaussian_window()


def _filter_valid(x):
    rows = sliding_window_view(x, SSIM_WINDOW, axis=1) @ _GAUSS
    return sliding_window_view(rows, SSIM_WINDOW, axis=0) @ _GAUSS


def ssim_map(a, b):
    a, b = _pixels(a), _pixels(b)
    _same_shape(a, b)
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs 2-D images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    c1 = (SSIM_K1 * PEAK) ** 2
    c2 = (SSIM_K2 * PEAK) ** 2
    mu_a, mu_b = _filter_valid(a), _filter_valid(b)
    var_a = _filter_valid(a * a) - mu_a * mu_a
    var_b = _filter_valid(b * b) - mu_b * mu_b
    cov = _filter_valid(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b):
    """Mean SSIM over an 11x11 Gaussian window (sigma 1.5), valid region only."""
    return float(np.mean(ssim_map(a, b)))


@dataclass
class EvalRow:
    id: str
    psnr_jpeg: float
    psnr_model: float
    ssim_jpeg: float
    ssim_model: float


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    quality: int = 0
    checkpoint_id: str = ""
    failures: list = field(default_factory=list)

    @property
    def scored(self):
        """Rows that enter the aggregates: both PSNR values finite.

        A crop that decodes exactly scores +inf, which would swamp every mean;
        such rows stay in the table and are counted as ``exact`` instead.
        """
        return [r for r in self.rows if math.isfinite(r.psnr_jpeg) and math.isfinite(r.psnr_model)]

    def mean(self, column):
        rows = self.scored
        if not rows:
            return math.nan
        return float(np.mean([getattr(r, column) for r in rows]))

    @property
    def ipsnr(self):
        return self.mean("psnr_model") - self.mean("psnr_jpeg")

    @property
    def issim(self):
        return self.mean("ssim_model") - self.mean("ssim_jpeg")

    def to_csv(self):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["id", "psnr_jpeg", "psnr_model", "ssim_jpeg", "ssim_model"])
        for r in self.rows:
            w.writerow([r.id, repr(r.psnr_jpeg), repr(r.psnr_model), repr(r.ssim_jpeg), repr(r.ssim_model)])
        cols = ("psnr_jpeg", "psnr_model", "ssim_jpeg", "ssim_model")
        w.writerow(["AGGREGATE:mean", *(repr(self.mean(c)) for c in cols)])
        w.writerow(["AGGREGATE:improvement", "", repr(self.ipsnr), "", repr(self.issim)])
        return out.getvalue()

    def summary(self):
        lines = [
            f"quality: {self.quality}",
            f"checkpoint: {self.checkpoint_id}",
            f"images: {len(self.rows)}",
            f"exact: {len(self.rows) - len(self.scored)}",
            f"failed: {len(self.failures)}",
            f"PSNR jpeg (dB): {self.mean('psnr_jpeg'):.4f}",
            f"PSNR model (dB): {self.mean('psnr_model'):.4f}",
            f"SSIM jpeg (%): {100 * self.mean('ssim_jpeg'):.4f}",
            f"SSIM model (%): {100 * self.mean('ssim_model'):.4f}",
            f"IPSNR (dB): {self.ipsnr:.4f}",
            f"ISSIM (%): {100 * self.issim:.4f}",
        ]
        lines += [f"missing: {f}" for f in self.failures]
        return "\n".join(lines) + "\n"


def evaluate_pairs(pairs, reconstruct, quality=0, checkpoint_id=""):
    """Score baseline decoding and ``reconstruct(code)`` against ground truth.

    ``pairs`` yields ``(id, ground_truth, code)``; an entry whose loading
    raised is passed as ``(id, exception, None)`` and recorded as a failure.
    """
    from .kspace import decode_baseline

    report = EvalReport(quality=quality, checkpoint_id=checkpoint_id)
    for ident, gt, code in pairs:
        if isinstance(gt, Exception):
            report.failures.append(f"{ident}: {gt}")
            continue
        jpeg = decode_baseline(code)
        recon = reconstruct(code)
        report.rows.append(
            EvalRow(ident, psnr(jpeg, gt), psnr(recon, gt), ssim(jpeg, gt), ssim(recon, gt))
        )
    return report
