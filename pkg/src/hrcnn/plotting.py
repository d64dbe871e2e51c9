"""Matplotlib figures written next to the CSV/TAP outputs."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated runs byte-identical
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def plot_loss(rows, path):
    steps = [int(r["step"]) for r in rows]
    loss = [float(r["train_loss"]) for r in rows]
    val = [(int(r["step"]), float(r["val_psnr"])) for r in rows if r.get("val_psnr")]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, loss, lw=1, color="C0")
    ax.set_xlabel("step")
    ax.set_ylabel("train MSE", color="C0")
    if val:
        ax2 = ax.twinx()
        ax2.plot(*zip(*val), "o-", color="C1", ms=3)
        ax2.set_ylabel("val PSNR (dB)", color="C1")
    fig.tight_layout()
    _save(fig, path)


def plot_eval(report, path):
    """Per-image PSNR, baseline against model, with the identity line."""
    jpeg = np.array([r.psnr_jpeg for r in report.rows])
    model = np.array([r.psnr_model for r in report.rows])
    ok = np.isfinite(jpeg) & np.isfinite(model)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    if ok.any():
        lo = min(jpeg[ok].min(), model[ok].min()) - 0.5
        hi = max(jpeg[ok].max(), model[ok].max()) + 0.5
        ax.plot([lo, hi], [lo, hi], "k--", lw=0.8)
        ax.scatter(jpeg[ok], model[ok], s=10)
        ax.set_xlim(lo, hi)
        ax.set_ylim(lo, hi)
    ax.set_xlabel("baseline PSNR (dB)")
    ax.set_ylabel("model PSNR (dB)")
    ipsnr = report.ipsnr
    ax.set_title(f"Q={report.quality}  IPSNR={ipsnr:+.3f} dB" if math.isfinite(ipsnr) else f"Q={report.quality}")
    fig.tight_layout()
    _save(fig, path)


def plot_taps(taps, path):
    """First channel of every tap in one panel, stage by stage."""
    names = list(taps)
    cols = 4
    rows = -(-len(names) // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(2.5 * cols, 2.6 * rows))
    for ax in np.ravel(axes):
        ax.axis("off")
    for ax, name in zip(np.ravel(axes), names):
        ax.imshow(taps[name][0], cmap="gray", interpolation="nearest")
        ax.set_title(name, fontsize=9)
    fig.tight_layout()
    _save(fig, path)
