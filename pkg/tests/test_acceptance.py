"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``. Criterion 5 trains
the default configuration on 200 crops and takes up to half an hour.
"""

import re
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from hrcnn import tensor as T
from hrcnn.checkpoint import read_tap, save_checkpoint
from hrcnn.dataset import load_pair, make_dataset, read_manifest
from hrcnn.gradcheck import TOLERANCE, check_ops, gradcheck_params
from hrcnn.images import read_image
from hrcnn.kspace import (
    GrayImage,
    dct8x8,
    decode_baseline,
    encode,
    idct8x8,
    to_uint8,
)
from hrcnn.metrics import evaluate_pairs, psnr
from hrcnn.model import MASKS, channel_extract, init_params, param_count
from hrcnn.trainer import TrainConfig, reconstruct, train

from oracles import channel_extract_loops

TRAIN_PAIRS = 200
HELD_OUT = 40


@pytest.fixture
def verdict(capsys):
    """Print one ``criterion N: PASS/FAIL`` line and then assert."""

    def report(n, title, ok, detail=""):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {title}" + (f" ({detail})" if detail else ""))
        assert ok, f"criterion {n} failed: {detail}"

    return report


def _cli(*args, cwd=None):
    r = subprocess.run([sys.executable, "-m", "hrcnn.cli", *map(str, args)],
                       capture_output=True, text=True, cwd=cwd)
    assert r.returncode == 0, r.stderr
    return r.stdout


def test_1_parameter_counts(verdict):
    t0 = time.perf_counter()
    counts = param_count(init_params("uniform_fanin", 0))
    elapsed = time.perf_counter() - t0
    ok = counts == (275_089, 232_068, 507_157) and elapsed < 1.0
    verdict(1, "parameter counts", ok, f"{counts}, {elapsed:.3f}s")


def test_2_mask_bank(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    placed = all(
        MASKS[ch].sum() == 1 and MASKS[ch, ch % 8, ch // 8] == 1 for ch in range(64)
    )
    covers = np.array_equal(MASKS.sum(axis=0), np.ones((8, 8)))
    bitwise = True
    for _ in range(100):
        hb, wb = rng.integers(1, 5, size=2)
        x = rng.normal(scale=50, size=(1, 8 * hb, 8 * wb))
        bitwise &= np.array_equal(channel_extract(x), channel_extract_loops(x[0]))
        bitwise &= np.array_equal(channel_extract(x, MASKS), channel_extract_loops(x[0]))
    elapsed = time.perf_counter() - t0
    ok = placed and covers and bitwise and elapsed < 5.0
    verdict(2, "mask bank", ok, f"placement={placed} cover={covers} bitwise={bitwise}, {elapsed:.2f}s")


def test_3_codec(verdict, natural_images):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    blocks = rng.uniform(-128, 128, size=(200, 8, 8))
    roundtrip = max(np.max(np.abs(idct8x8(dct8x8(b)) - b)) for b in blocks)
    norm = max(abs(np.linalg.norm(dct8x8(b)) - np.linalg.norm(b)) for b in blocks)
    flat = GrayImage(np.full((32, 32), 128, np.uint8))
    zeros = all(not encode(flat, q).coeffs.any() for q in (10, 30, 50))
    monotone = 0
    for a in natural_images.values():
        s = [psnr(decode_baseline(encode(GrayImage(a), q)), a) for q in (10, 30, 50)]
        monotone += s[0] <= s[1] <= s[2]
    elapsed = time.perf_counter() - t0
    ok = roundtrip < 1e-10 and norm < 1e-10 and zeros and monotone >= 20 and elapsed < 30.0
    verdict(3, "codec", ok,
            f"roundtrip={roundtrip:.1e} norm={norm:.1e} zeros={zeros} "
            f"monotone={monotone}/{len(natural_images)}, {elapsed:.1f}s")


def test_4_gradients(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    adjoint = 0.0
    for c, o, k, s, p in ((3, 4, 3, 1, 1), (64, 8, 5, 1, 2), (2, 3, 8, 8, 0), (1, 64, 11, 1, 5)):
        n = 5
        h = (n - 1) * s + k - 2 * p
        x = rng.normal(size=(c, h, h))
        y = rng.normal(size=(o, n, n))
        w = rng.normal(size=(o, c, k, k))
        lhs = np.vdot(T.conv2d(x, w, None, T.ConvSpec.square(c, o, k, s, p)), y)
        rhs = np.vdot(x, T.conv_transpose2d(y, w, None, T.ConvSpec.square(o, c, k, s, p)))
        adjoint = max(adjoint, abs(lhs - rhs) / max(1.0, abs(lhs)))
    ops = check_ops(seed=7)
    net = gradcheck_params(seed=7, coords=200)
    op_coords = sum(len(r.errors) for r in ops)
    op_max = max(r.max_error for r in ops)
    elapsed = time.perf_counter() - t0
    ok = (adjoint < 1e-10 and all(r.passed for r in ops) and net.passed
          and op_coords >= 200 and len(net.errors) >= 200 and elapsed < 300.0)
    verdict(4, "gradients", ok,
            f"adjoint={adjoint:.1e} ops: {op_coords} coords max_rel={op_max:.1e}; "
            f"network: {len(net.errors)} coords max_rel={net.max_error:.1e} (tol {TOLERANCE:g}), {elapsed:.0f}s")


def test_5_training_improves_held_out_psnr(verdict, tmp_path, source_dir):
    manifest = make_dataset(source_dir, tmp_path / "ds", 10, crop_size=64,
                            count=TRAIN_PAIRS + HELD_OUT, seed=0, val_count=HELD_OUT)
    assert len(manifest.split("train")) == TRAIN_PAIRS
    t0 = time.perf_counter()
    result = train(TrainConfig(manifest=str(manifest.path), out_dir=str(tmp_path / "run")))
    elapsed = time.perf_counter() - t0

    losses = {}
    for row in result.log_rows:
        losses.setdefault(int(row["epoch"]), []).append(float(row["train_loss"]))
    first, last = np.mean(losses[min(losses)]), np.mean(losses[max(losses)])

    held_out = []
    for p in manifest.split("val"):
        gt, code = load_pair(p)
        held_out.append((p.gt_path.stem, gt, code))
    report = evaluate_pairs(held_out, lambda c: reconstruct(result.params, c), quality=10)
    ok = last < first and report.ipsnr >= 0.1 and elapsed <= 1800.0
    verdict(5, "training", ok,
            f"loss {first:.2f} -> {last:.2f}, held-out IPSNR {report.ipsnr:+.4f} dB "
            f"over {len(report.scored)} crops, {elapsed:.0f}s")


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}


def test_6_determinism(verdict, tmp_path, source_dir):
    trees = []
    for run in ("a", "b"):
        d = tmp_path / run
        _cli("make-dataset", "--source", source_dir, "--out", d / "ds", "-q", "10",
             "--crop-size", "16", "--count", "12", "--val-count", "4", "--seed", "5")
        cfg = d / "train.cfg"
        cfg.write_text("epochs = 2\nbatch_size = 4\nlearning_rate = 1e-6\n")
        _cli("train", cfg, "--manifest", d / "ds" / "manifest.txt", "--out-dir", d / "run")
        (d / "gradcheck.txt").write_text(_cli("gradcheck", "--seed", "7", "--coords", "40"))
        _cli("eval", d / "ds" / "manifest.txt", d / "run" / "final.hrc", "--out", d / "eval")
        cfg.unlink()
        trees.append(_tree(d))
    a, b = trees
    differ = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    must_have = {"ds/manifest.txt", "run/loss.csv", "run/loss.png", "run/final.hrc",
                 "gradcheck.txt", "eval/report.csv", "eval/summary.txt", "eval/report.png"}
    ok = not differ and must_have <= a.keys()
    verdict(6, "determinism", ok, f"{len(a)} artifacts compared, differing: {differ[:5]}")


def test_7_inspect_taps(verdict, tmp_path, natural_images):
    img = tmp_path / "img.pgm"
    from hrcnn.images import write_image

    write_image(GrayImage(natural_images["coffee"][40:104, 80:160]), img)
    _cli("encode", img, tmp_path / "a.ksp", "-q", "10")
    ckpt = tmp_path / "m.hrc"
    params = init_params("idct_seeded", 1, 10)
    # move the enhancement branch off its pass-through start so the taps differ
    rng = np.random.default_rng(7)
    for i in (7, 10, 13, 16):
        params.weights[i] = rng.normal(scale=0.05, size=params.weights[i].shape)
    save_checkpoint(params, ckpt)
    out = _cli("inspect", tmp_path / "a.ksp", ckpt, tmp_path / "taps")
    taps = sorted((tmp_path / "taps").glob("*.tap"))
    shapes = [read_tap(t)[0].shape for t in taps]
    expected = [(64, 8, 10), (64, 64, 80)] + [(1, 64, 80)] * 6
    _cli("decode", tmp_path / "a.ksp", tmp_path / "m.pgm", "--model", ckpt)
    final = read_tap(taps[-1])[0]
    decoded = read_image(tmp_path / "m.pgm").pixels
    exact = np.array_equal(to_uint8(final[0]), decoded)
    ok = len(taps) == 8 and shapes == expected and exact and out.count("\n") >= 8
    verdict(7, "inspect taps", ok, f"{len(taps)} taps, shapes ok={shapes == expected}, final==decode={exact}")


TIMING = re.compile(r"^timing baseline_s=(\d+\.\d+) model_s=(\d+\.\d+)$", re.M)


def test_8_decode_timing_line(verdict, tmp_path, natural_images):
    from hrcnn.images import write_image

    write_image(GrayImage(natural_images["camera"][:64, :64]), tmp_path / "c.pgm")
    _cli("encode", tmp_path / "c.pgm", tmp_path / "c.ksp", "-q", "10")
    save_checkpoint(init_params("idct_seeded", 0, 10), tmp_path / "m.hrc")
    out = _cli("decode", tmp_path / "c.ksp", tmp_path / "o.pgm", "--model", tmp_path / "m.hrc")
    m = TIMING.search(out)
    ok = m is not None and all(float(g) >= 0 for g in m.groups())
    verdict(8, "decode timing line", ok, m.group(0) if m else repr(out))
