"""Mini-batch SGD on the per-pixel MSE between network output and ground truth."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import load_pair, read_manifest
from .kspace import decode_baseline, to_uint8
from .metrics import psnr
from .model import ModelParams, backward, forward, forward_train, init_params, kspace_tensor
from .tensor import mse_loss

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "epoch", "train_loss", "val_psnr")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    manifest: str = ""
    out_dir: str = "run"
    quality: int = 0  # 0: take it from the manifest
    crop_size: int = 0  # 0: take it from the manifest
    learning_rate: float = 1e-5
    batch_size: int = 16
    epochs: int = 20
    seed: int = 0
    init: str = "idct_seeded"
    checkpoint_every: int = 1
    clip_norm: float = 1e3  # <= 0 disables clipping
    warmup: bool = True
    decay: bool = True
    resume: str = ""

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.crop_size % 8:
            raise ValueError(f"crop_size must be a multiple of 8, got {self.crop_size}")

    @classmethod
    def from_mapping(cls, values):
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in kinds:
                raise ValueError(f"unknown config key {key!r}")
            kind = kinds[key]
            if kind == "bool":
                kw[key] = str(raw).strip().lower() in ("1", "true", "yes", "on")
            elif kind == "int":
                kw[key] = int(raw)
            elif kind == "float":
                kw[key] = float(raw)
            else:
                kw[key] = str(raw)
        return cls(**kw)


def parse_config(text):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"config line {n}: expected key=value")
        values[key.strip()] = value.strip()
    return values


def batch_gradient(params: ModelParams, batch):
    """Mean loss and mean per-sample gradient over ``batch`` of (target, code) pairs."""
    if not batch:
        raise ValueError("empty batch")
    total = ModelParams.zeros(params.quality)
    loss = 0.0
    for target, code in batch:
        out, cache = forward_train(kspace_tensor(code), params)
        l, g = mse_loss(out, target)
        loss += l
        grads = backward(g, cache)
        for index, kind, arr in grads.arrays():
            dest = total.weights if kind == "weight" else total.biases
            dest[index] += arr
    n = len(batch)
    for index, kind, arr in total.arrays():
        arr /= n
    return loss / n, total


def global_norm(grads: ModelParams):
    return math.sqrt(sum(float(np.vdot(a, a)) for _, _, a in grads.arrays()))


def sgd_step(params: ModelParams, batch, lr, clip_norm=None):
    """One plain SGD update; returns ``(new_params, mean pre-step loss)``.

    ``batch`` holds (ground-truth array shaped (1, H, W), KSpaceImage) pairs.
    """
    loss, grads = batch_gradient(params, batch)
    norm = global_norm(grads)
    if not (math.isfinite(loss) and math.isfinite(norm)):
        bad = [f"layer {i} {k}" for i, k, a in grads.arrays() if not np.all(np.isfinite(a))]
        raise TrainingDiverged(f"non-finite loss {loss} or gradient norm {norm}; offending: {', '.join(bad) or 'loss'}")
    scale = lr
    if clip_norm and clip_norm > 0 and norm > clip_norm:
        scale *= clip_norm / norm
    new = params.copy()
    for index, kind, g in grads.arrays():
        dest = new.weights if kind == "weight" else new.biases
        dest[index] -= scale * g
    return new, loss


def _load_split(manifest, split):
    out = []
    for pair in manifest.split(split):
        gt, code = load_pair(pair)
        out.append((gt.pixels.astype(np.float64)[None], code))
    return out


def learning_rate(config, step, total_steps, warmup_steps):
    """Linear warmup over the first epoch, then cosine decay to zero at ``total_steps``."""
    lr = config.learning_rate
    if config.warmup:
        lr *= min(1.0, (step + 1) / warmup_steps)
    if config.decay and total_steps > warmup_steps:
        t = max(0, step - warmup_steps) / (total_steps - warmup_steps)
        lr *= 0.5 * (1.0 + math.cos(math.pi * t))
    return lr


def reconstruct(params, code):
    out, _ = forward(kspace_tensor(code), params)
    return to_uint8(out[0])


def validation_psnr(params, pairs):
    """Mean model PSNR over the pairs, scored like an eval report.

    A pair is left out when either the baseline decode or the model is exact,
    so the set of averaged crops does not drift as training moves off +inf.
    """
    finite = []
    for gt, code in pairs:
        model = psnr(reconstruct(params, code), gt[0])
        if math.isfinite(model) and math.isfinite(psnr(decode_baseline(code), gt[0])):
            finite.append(model)
    return float(np.mean(finite)) if finite else math.nan


def _read_log(path):
    with open(path, newline="") as fh:
        return [row for row in csv.DictReader(fh)]


def _write_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _format(x):
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


@dataclass
class TrainResult:
    params: ModelParams
    log_rows: list
    out_dir: Path


def train(config: TrainConfig, progress=None):
    """Run ``config.epochs`` epochs of shuffled mini-batch SGD.

    Writes ``loss.csv``, ``checkpoints/epoch_NNNN.hrc`` (with a ``.json``
    state sidecar) every ``checkpoint_every`` epochs, and ``final.hrc``.
    """
    manifest = read_manifest(config.manifest)
    quality = config.quality or manifest.quality
    if config.crop_size and config.crop_size != manifest.crop_size:
        raise ValueError(f"config crop_size {config.crop_size} does not match manifest {manifest.crop_size}")
    train_set = _load_split(manifest, "train")
    if not train_set:
        raise ValueError(f"manifest {config.manifest} has no training pairs")
    val_set = _load_split(manifest, "val")
    out = Path(config.out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    log_path = out / "loss.csv"

    n = len(train_set)
    steps_per_epoch = -(-n // config.batch_size)
    start_epoch = 0
    rows = []
    if config.resume:
        params = load_checkpoint(config.resume)
        state = json.loads(Path(config.resume).with_suffix(".json").read_text())
        start_epoch = int(state["epochs_done"])
        if log_path.exists():
            rows = [r for r in _read_log(log_path) if int(r["epoch"]) < start_epoch]
    else:
        params = init_params(config.init, config.seed, quality)

    for epoch in range(start_epoch, config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        for s in range(steps_per_epoch):
            step = epoch * steps_per_epoch + s
            batch = [train_set[k] for k in order[s * config.batch_size : (s + 1) * config.batch_size]]
            lr = learning_rate(config, step, steps_per_epoch * config.epochs, steps_per_epoch)
            params, loss = sgd_step(params, batch, lr, config.clip_norm)
            row = {"step": step, "epoch": epoch, "train_loss": _format(loss), "val_psnr": ""}
            rows.append(row)
            if progress:
                progress(row)
        rows[-1]["val_psnr"] = _format(validation_psnr(params, val_set))
        if progress:
            progress(rows[-1])
        _write_log(log_path, rows)
        done = epoch + 1
        if config.checkpoint_every > 0 and done % config.checkpoint_every == 0:
            ckpt = out / "checkpoints" / f"epoch_{done:04d}.hrc"
            save_checkpoint(params, ckpt)
            ckpt.with_suffix(".json").write_text(json.dumps({"epochs_done": done, "steps_done": done * steps_per_epoch}) + "\n")
    _write_log(log_path, rows)
    save_checkpoint(params, out / "final.hrc")
    return TrainResult(params, rows, out)


def epoch_means(rows):
    """Mean training loss per epoch, in epoch order."""
    by_epoch = {}
    for r in rows:
        by_epoch.setdefault(int(r["epoch"]), []).append(float(r["train_loss"]))
    return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]
