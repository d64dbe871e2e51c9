"""Command-line entry point: ``hrcnn <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
import time
from pathlib import Path

import numpy as np

log = logging.getLogger("hrcnn")


class CommandError(Exception):
    """A runtime failure reported as exit code 1."""


class UsageError(Exception):
    """Bad arguments detected after parsing; exit code 2."""


def _quality(text):
    try:
        q = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"quality must be an integer, got {text!r}") from None
    if not 1 <= q <= 100:
        raise argparse.ArgumentTypeError(f"quality must be in [1, 100], got {q}")
    return q


def _positive_int(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {n}")
    return n


def _nonneg_int(text):
    n = int(text)
    if n < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {n}")
    return n


def cmd_encode(args):
    from .images import read_image
    from .kspace import encode, pad_to_blocks, write_kspace

    image = read_image(args.image)
    padded = pad_to_blocks(image)
    if padded is not image:
        log.warning("padded %dx%d to %dx%d by edge replication", image.width, image.height, padded.width, padded.height)
    write_kspace(encode(padded, args.quality), args.out)
    return 0


def cmd_decode(args):
    from .checkpoint import load_checkpoint
    from .images import write_image
    from .kspace import GrayImage, decode_baseline, read_kspace
    from .trainer import reconstruct

    code = read_kspace(args.ksp)
    t0 = time.perf_counter()
    baseline = decode_baseline(code)
    baseline_s = time.perf_counter() - t0
    timing = f"timing baseline_s={baseline_s:.6f}"
    if args.model:
        params = load_checkpoint(args.model)
        if params.quality != code.quality:
            log.warning("checkpoint trained at Q=%d, code is Q=%d; proceeding", params.quality, code.quality)
        t0 = time.perf_counter()
        result = GrayImage(reconstruct(params, code))
        model_s = time.perf_counter() - t0
        timing += f" model_s={model_s:.6f}"
    else:
        result = baseline
    write_image(result, args.out)
    print(timing)
    return 0


def cmd_make_dataset(args):
    from .dataset import make_dataset

    m = make_dataset(
        args.source, args.out, args.quality, crop_size=args.crop_size,
        count=args.count, seed=args.seed, val_count=args.val_count,
    )
    print(f"wrote {len(m.pairs)} pairs ({len(m.split('val'))} val) to {m.path}")
    if m.skipped_sources:
        print(f"skipped {m.skipped_sources} undersized source image(s)")
    return 0


def cmd_audit(args):
    from .dataset import audit_manifest, read_manifest

    problems = audit_manifest(read_manifest(args.manifest))
    for p in problems:
        print(p)
    print(f"audit: {len(problems)} problem(s)")
    return 1 if problems else 0


_TRAIN_FLAGS = (
    "manifest", "out_dir", "learning_rate", "batch_size", "epochs", "seed", "init",
    "checkpoint_every", "clip_norm", "resume", "quality",
)


def cmd_train(args):
    from .plotting import plot_loss
    from .trainer import TrainConfig, parse_config, train

    values = {}
    if args.config:
        values.update(parse_config(Path(args.config).read_text()))
    for name in _TRAIN_FLAGS:
        v = getattr(args, name)
        if v is not None:
            values[name] = v
    if args.no_warmup:
        values["warmup"] = "false"
    if args.no_decay:
        values["decay"] = "false"
    try:
        config = TrainConfig.from_mapping(values)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not config.manifest:
        raise UsageError("no manifest given (config key 'manifest' or --manifest)")

    def progress(row):
        if row["val_psnr"]:
            print(f"epoch {row['epoch']} step {row['step']} val_psnr={float(row['val_psnr']):.4f}", flush=True)
        elif args.verbose:
            print(f"step {row['step']} loss={float(row['train_loss']):.4f}", flush=True)

    result = train(config, progress)
    if result.log_rows:
        plot_loss(result.log_rows, result.out_dir / "loss.png")
    print(f"final checkpoint: {result.out_dir / 'final.hrc'}")
    return 0


def cmd_eval(args):
    from .checkpoint import load_checkpoint
    from .dataset import load_pair, read_manifest
    from .metrics import evaluate_pairs
    from .plotting import plot_eval
    from .trainer import reconstruct

    manifest = read_manifest(args.manifest)
    ckpt_bytes = Path(args.checkpoint).read_bytes()
    params = load_checkpoint(args.checkpoint)
    pairs = manifest.pairs if args.split == "all" else manifest.split(args.split)

    def items():
        for p in pairs:
            try:
                gt, code = load_pair(p)
            except Exception as exc:  # reported per pair, run continues
                yield p.gt_path.name, exc, None
                continue
            yield p.gt_path.stem, gt, code

    report = evaluate_pairs(
        items(), lambda code: reconstruct(params, code),
        quality=manifest.quality, checkpoint_id=hashlib.sha256(ckpt_bytes).hexdigest()[:16],
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv())
    summary = report.summary()
    (out / "summary.txt").write_text(summary)
    if report.rows:
        plot_eval(report, out / "report.png")
    sys.stdout.write(summary)
    return 1 if report.failures else 0


def cmd_gradcheck(args):
    from .gradcheck import run_all

    results = run_all(seed=args.seed, coords=args.coords)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("gradcheck: " + ("PASS" if ok else "FAIL"))
    return 0 if ok else 1


def cmd_param_count(args):
    from .checkpoint import load_checkpoint
    from .model import init_params, param_count

    params = load_checkpoint(args.checkpoint) if args.checkpoint else init_params("uniform_fanin", 0)
    decoding, enhancement, total = param_count(params)
    print(f"decoding: {decoding:,}")
    print(f"enhancement: {enhancement:,}")
    print(f"total: {total:,}")
    return 0


def _preview(tap):
    """Min-max normalise a tap to 8 bits; multi-channel taps tile as a grid."""
    c, h, w = tap.shape
    cols = int(np.ceil(np.sqrt(c)))
    rows = -(-c // cols)
    mosaic = np.zeros((rows * h, cols * w))
    for ch in range(c):
        r, q = divmod(ch, cols)
        mosaic[r * h : (r + 1) * h, q * w : (q + 1) * w] = tap[ch]
    lo, hi = float(tap.min()), float(tap.max())
    scaled = (mosaic - lo) / (hi - lo) * 255.0 if hi > lo else np.zeros_like(mosaic)
    return np.floor(scaled + 0.5).astype(np.uint8)


def cmd_inspect(args):
    from .checkpoint import load_checkpoint, write_tap
    from .images import write_image
    from .kspace import GrayImage, read_kspace
    from .model import TAP_NAMES, forward, kspace_tensor
    from .plotting import plot_taps

    code = read_kspace(args.ksp)
    params = load_checkpoint(args.checkpoint)
    _, taps = forward(kspace_tensor(code), params, want_taps=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, name in enumerate(TAP_NAMES):
        tap = taps[name]
        stem = f"{k:02d}_{name}"
        write_tap(tap, code.quality, out / f"{stem}.tap")
        write_image(GrayImage(_preview(tap)), out / f"{stem}.pgm")
        print(f"{stem}: {'x'.join(map(str, tap.shape))}")
    plot_taps(taps, out / "taps.png")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="hrcnn", description="End-to-end JPEG k-space decoding with a heterogeneous residual CNN.")
    p.add_argument("--threads", type=_positive_int, default=1, help="BLAS threads (default 1, deterministic)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("encode", help="image -> KSP1 k-space code")
    s.add_argument("image")
    s.add_argument("out")
    s.add_argument("--quality", "-q", type=_quality, required=True)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("decode", help="KSP1 -> image, baseline or model")
    s.add_argument("ksp")
    s.add_argument("out")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--baseline", action="store_true")
    g.add_argument("--model", metavar="CHECKPOINT")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("make-dataset", help="crop, encode and list training pairs")
    s.add_argument("--source", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--quality", "-q", type=_quality, required=True)
    s.add_argument("--crop-size", type=_positive_int, default=128)
    s.add_argument("--count", type=_nonneg_int, required=True)
    s.add_argument("--val-count", type=_nonneg_int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_dataset)

    s = sub.add_parser("audit", help="re-verify that every pair's code is encode(ground truth)")
    s.add_argument("manifest")
    s.set_defaults(func=cmd_audit)

    s = sub.add_parser("train", help="SGD training from a key=value config; flags override it")
    s.add_argument("config", nargs="?")
    s.add_argument("--manifest")
    s.add_argument("--out-dir", dest="out_dir")
    s.add_argument("--learning-rate", dest="learning_rate", type=float)
    s.add_argument("--batch-size", dest="batch_size", type=_positive_int)
    s.add_argument("--epochs", type=_nonneg_int)
    s.add_argument("--seed", type=int)
    s.add_argument("--init", choices=("idct_seeded", "uniform_fanin"))
    s.add_argument("--checkpoint-every", dest="checkpoint_every", type=_nonneg_int)
    s.add_argument("--clip-norm", dest="clip_norm", type=float)
    s.add_argument("--no-warmup", dest="no_warmup", action="store_true")
    s.add_argument("--no-decay", dest="no_decay", action="store_true", help="keep the learning rate flat after warmup")
    s.add_argument("--resume")
    s.add_argument("--quality", type=_quality)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="PSNR/SSIM of baseline and model against ground truth")
    s.add_argument("manifest")
    s.add_argument("checkpoint")
    s.add_argument("--out", default="eval")
    s.add_argument("--split", choices=("all", "train", "val"), default="all")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--coords", type=_positive_int, default=200)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("param-count", help="trainable parameter counts")
    s.add_argument("checkpoint", nargs="?")
    s.set_defaults(func=cmd_param_count)

    s = sub.add_parser("inspect", help="dump intermediate activations as TAP1 files and previews")
    s.add_argument("ksp")
    s.add_argument("checkpoint")
    s.add_argument("out")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hrcnn: error: {exc}", file=sys.stderr)
        return 2
    except (CommandError, OSError, ValueError, RuntimeError) as exc:
        print(f"hrcnn: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
