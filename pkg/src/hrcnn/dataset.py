"""Training pairs cut from lossless sources, and the manifest that lists them.

Manifest layout (UTF-8 text)::

    # hrcnn-manifest 1
    # quality: 10
    # crop_size: 64
    # seed: 1
    # count: 240
    # val_count: 40
    # skipped_sources: 0
    # source: <sha256> <file name>
    train<TAB>gt/00000.pgm<TAB>ksp/00000.ksp
    val<TAB>gt/00001.pgm<TAB>ksp/00001.ksp

Pair paths are relative to the manifest's directory.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .images import read_image, write_image
from .kspace import BLOCK, FormatError, GrayImage, encode, read_kspace, write_kspace

log = logging.getLogger(__name__)

MANIFEST_TAG = "hrcnn-manifest 1"
SOURCE_SUFFIXES = (".png", ".pgm")


@dataclass
class Pair:
    split: str
    gt_path: Path
    ksp_path: Path


@dataclass
class Manifest:
    quality: int
    crop_size: int
    seed: int
    pairs: list = field(default_factory=list)
    sources: list = field(default_factory=list)  # (sha256, name)
    skipped_sources: int = 0
    path: Path | None = None

    def split(self, name):
        return [p for p in self.pairs if p.split == name]

    def to_text(self, root: Path):
        lines = [
            f"# {MANIFEST_TAG}",
            f"# quality: {self.quality}",
            f"# crop_size: {self.crop_size}",
            f"# seed: {self.seed}",
            f"# count: {len(self.pairs)}",
            f"# val_count: {len(self.split('val'))}",
            f"# skipped_sources: {self.skipped_sources}",
        ]
        lines += [f"# source: {digest} {name}" for digest, name in self.sources]
        for p in self.pairs:
            lines.append(f"{p.split}\t{p.gt_path.relative_to(root).as_posix()}\t{p.ksp_path.relative_to(root).as_posix()}")
        return "\n".join(lines) + "\n"


def read_manifest(path) -> Manifest:
    path = Path(path)
    root = path.parent
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read manifest {path}: {exc.strerror}") from None
    lines = text.splitlines()
    if not lines or lines[0] != f"# {MANIFEST_TAG}":
        raise FormatError(f"{path}: not an hrcnn manifest")
    header = {}
    sources = []
    pairs = []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("# "):
            key, _, value = line[2:].partition(": ")
            if key == "source":
                digest, _, name = value.partition(" ")
                sources.append((digest, name))
            else:
                header[key] = value
            continue
        parts = line.split("\t")
        if len(parts) != 3 or parts[0] not in ("train", "val"):
            raise FormatError(f"{path}:{n}: malformed pair line")
        pairs.append(Pair(parts[0], root / parts[1], root / parts[2]))
    try:
        m = Manifest(
            int(header["quality"]), int(header["crop_size"]), int(header["seed"]),
            pairs, sources, int(header.get("skipped_sources", 0)), path,
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: bad header ({exc})") from None
    if "count" in header and int(header["count"]) != len(pairs):
        raise FormatError(f"{path}: header count {header['count']} but {len(pairs)} pairs")
    return m


def write_manifest(manifest: Manifest, path):
    path = Path(path)
    path.write_text(manifest.to_text(path.parent), encoding="utf-8")
    manifest.path = path


def _source_files(source_dir):
    source_dir = Path(source_dir)
    if not source_dir.is_dir():
        raise FileNotFoundError(f"source directory {source_dir} does not exist")
    return sorted(p for p in source_dir.iterdir() if p.suffix.lower() in SOURCE_SUFFIXES)


def make_dataset(source_dir, out_dir, quality, crop_size=128, count=0, seed=0, val_count=None):
    """Cut ``count`` seeded random crops, encode them, and write pairs plus a manifest.

    RGB sources contribute their green channel. Sources smaller than the crop
    are skipped and counted. The last ``val_count`` pairs of a seeded
    permutation form the validation split (default: a tenth).
    """
    if crop_size <= 0 or crop_size % BLOCK:
        raise ValueError(f"crop size must be a positive multiple of 8, got {crop_size}")
    if val_count is None:
        val_count = count // 10
    if not 0 <= val_count <= count:
        raise ValueError(f"val_count {val_count} out of range for {count} pairs")
    out_dir = Path(out_dir)
    files = _source_files(source_dir)
    if not files:
        raise FileNotFoundError(f"no PNG or PGM sources in {source_dir}")

    images = []
    sources = []
    skipped = 0
    for f in files:
        img = read_image(f)
        if img.height < crop_size or img.width < crop_size:
            skipped += 1
            continue
        images.append(img.pixels)
        sources.append((hashlib.sha256(f.read_bytes()).hexdigest(), f.name))
    if skipped:
        log.warning("skipped %d undersized source image(s)", skipped)
    if count and not images:
        raise ValueError(f"no source image is at least {crop_size}x{crop_size}")

    (out_dir / "gt").mkdir(parents=True, exist_ok=True)
    (out_dir / "ksp").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    is_val = np.zeros(count, dtype=bool)
    if count:
        is_val[rng.permutation(count)[count - val_count :]] = True
    manifest = Manifest(quality, crop_size, seed, [], sources, skipped)
    for k in range(count):
        src = images[rng.integers(len(images))]
        y = rng.integers(src.shape[0] - crop_size + 1)
        x = rng.integers(src.shape[1] - crop_size + 1)
        gt = GrayImage(np.ascontiguousarray(src[y : y + crop_size, x : x + crop_size]))
        gt_path = out_dir / "gt" / f"{k:05d}.pgm"
        ksp_path = out_dir / "ksp" / f"{k:05d}.ksp"
        write_image(gt, gt_path)
        write_kspace(encode(gt, quality), ksp_path)
        manifest.pairs.append(Pair("val" if is_val[k] else "train", gt_path, ksp_path))
    write_manifest(manifest, out_dir / "manifest.txt")
    return manifest


def load_pair(pair: Pair):
    return read_image(pair.gt_path), read_kspace(pair.ksp_path)


def audit_manifest(manifest: Manifest):
    """Re-encode every ground truth and list pairs whose stored code differs."""
    problems = []
    for p in manifest.pairs:
        try:
            gt, code = load_pair(p)
        except (FormatError, OSError) as exc:
            problems.append(f"{p.gt_path.name}: {exc}")
            continue
        if code.quality != manifest.quality:
            problems.append(f"{p.ksp_path.name}: quality {code.quality} != manifest {manifest.quality}")
        elif not np.array_equal(encode(gt, manifest.quality).coeffs, code.coeffs):
            problems.append(f"{p.ksp_path.name}: coefficients differ from encode(ground truth)")
    return problems
