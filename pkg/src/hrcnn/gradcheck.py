"""Central finite-difference checks of every analytic backward pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .model import (
    backward,
    forward_train,
    init_params,
    _run,
)

STEP = 1e-5
TOLERANCE = 1e-4
# relative error is |a - n| / max(|a|, |n|, FLOOR): components whose true
# gradient is zero are judged on absolute error instead
FLOOR = 1e-8


def rel_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), FLOOR)


@dataclass
class CheckResult:
    name: str
    errors: list = field(default_factory=list)
    skipped: int = 0

    @property
    def max_error(self):
        return max(self.errors) if self.errors else 0.0

    @property
    def median_error(self):
        return float(np.median(self.errors)) if self.errors else 0.0

    @property
    def passed(self):
        return bool(self.errors) and self.max_error < TOLERANCE

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.name}: coords={len(self.errors)} skipped={self.skipped} "
            f"max_rel={self.max_error:.3e} median_rel={self.median_error:.3e}"
        )


def _central(f, arr, idx, h=STEP):
    old = arr[idx]
    arr[idx] = old + h
    fp = f()
    arr[idx] = old - h
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2 * h)


def _sample(rng, shape, n):
    size = int(np.prod(shape))
    flat = rng.choice(size, size=min(n, size), replace=False)
    return [np.unravel_index(i, shape) for i in sorted(flat)]


def check_function(name, f, arrays, grads, rng, n=20):
    """Compare ``grads[k]`` with central differences of scalar ``f()`` w.r.t. ``arrays[k]``."""
    res = CheckResult(name)
    for arr, grad in zip(arrays, grads):
        for idx in _sample(rng, arr.shape, n):
            res.errors.append(rel_error(grad[idx], _central(f, arr, idx)))
    return res


def check_ops(seed=0, n=30):
    """Finite-difference checks of conv2d, conv_transpose2d, relu and mse_loss.

    ``n`` coordinates are drawn per input array (fewer if the array is smaller).
    """
    rng = np.random.default_rng(seed)
    results = []

    spec = T.ConvSpec.square(3, 4, 3, stride=2, pad=1)
    x = rng.normal(size=(3, 7, 7))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    proj = rng.normal(size=T.conv2d(x, w, b, spec).shape)
    gx, gw, gb = T.conv2d_backward(x, w, spec, proj)
    results.append(check_function(
        "conv2d", lambda: float(np.vdot(T.conv2d(x, w, b, spec), proj)), [x, w, b], [gx, gw, gb], rng, n,
    ))

    for stride in (1, 2):
        tspec = T.ConvSpec.square(3, 2, 3, stride=stride, pad=1)
        y = rng.normal(size=(3, 4, 5))
        tw = rng.normal(size=(3, 2, 3, 3))
        tb = rng.normal(size=2)
        proj = rng.normal(size=T.conv_transpose2d(y, tw, tb, tspec).shape)
        gy, gtw, gtb = T.conv_transpose2d_backward(y, tw, tspec, proj)
        results.append(check_function(
            f"conv_transpose2d(stride={stride})",
            lambda: float(np.vdot(T.conv_transpose2d(y, tw, tb, tspec), proj)),
            [y, tw, tb], [gy, gtw, gtb], rng, n,
        ))

    # keep every input at least 0.1 away from the kink
    z = rng.uniform(0.1, 1.0, size=(2, 5, 5)) * rng.choice([-1.0, 1.0], size=(2, 5, 5))
    proj = rng.normal(size=z.shape)
    results.append(check_function(
        "relu", lambda: float(np.vdot(T.relu(z), proj)), [z], [T.relu_backward(z, proj)], rng, n,
    ))

    pred = rng.normal(size=(1, 6, 6))
    target = rng.normal(size=(1, 6, 6))
    _, gp = T.mse_loss(pred, target)
    results.append(check_function("mse_loss", lambda: T.mse_loss(pred, target)[0], [pred], [gp], rng, n))
    return results


def _kink_pattern(kspace, params):
    _, pre = _run(kspace, params)
    return [pre[i] > 0 for i in (4, 16)]


def gradcheck_params(seed=7, coords=200, size=16):
    """Whole-network check on a ``size x size`` code at ``coords`` parameter coordinates.

    Coordinates are drawn from every trainable layer in proportion to its
    size, with at least one per weight and bias array. A coordinate whose
    +/- step flips any ReLU pre-activation is skipped and redrawn, since the
    difference quotient is not a derivative there.
    """
    rng = np.random.default_rng(seed)
    params = init_params("uniform_fanin", seed)
    for index in params.biases:
        params.biases[index] = rng.normal(scale=0.1, size=params.biases[index].shape)
    kspace = rng.normal(size=(1, size, size))
    target = rng.normal(size=(1, size, size))

    out, cache = forward_train(kspace, params)
    _, g = T.mse_loss(out, target)
    grads = backward(g, cache)
    base = _kink_pattern(kspace, params)

    def loss():
        o, _ = forward_train(kspace, params)
        return T.mse_loss(o, target)[0]

    arrays = [(i, k, a) for i, k, a in params.arrays()]
    grad_arrays = {(i, k): a for i, k, a in grads.arrays()}
    sizes = np.array([a.size for _, _, a in arrays], dtype=float)
    quota = np.maximum(1, np.floor(coords * sizes / sizes.sum())).astype(int)
    while quota.sum() < coords:
        quota[np.argmax(sizes / quota)] += 1

    res = CheckResult(f"network({size}x{size}, seed={seed})")
    for (index, kind, arr), n in zip(arrays, quota):
        grad = grad_arrays[(index, kind)]
        candidates = iter(_sample(rng, arr.shape, arr.size))
        taken = 0
        for idx in candidates:
            if taken == n:
                break
            old = arr[idx]
            flipped = False
            for delta in (STEP, -STEP):
                arr[idx] = old + delta
                if any(np.any(p != b) for p, b in zip(_kink_pattern(kspace, params), base)):
                    flipped = True
            arr[idx] = old
            if flipped:
                res.skipped += 1
                continue
            res.errors.append(rel_error(grad[idx], _central(loss, arr, idx)))
            taken += 1
    return res


def gradcheck_input(seed=7, size=16):
    """Code-gradient check: each code position receives gradient only via its own channel."""
    rng = np.random.default_rng(seed)
    params = init_params("uniform_fanin", seed)
    kspace = rng.normal(size=(1, size, size))
    target = rng.normal(size=(1, size, size))
    out, cache = forward_train(kspace, params)
    _, g = T.mse_loss(out, target)
    _, gin = backward(g, cache, return_input_grad=True)

    def loss():
        o, _ = forward_train(kspace, params)
        return T.mse_loss(o, target)[0]

    return check_function("network input", loss, [kspace], [gin], rng, n=16)


def run_all(seed=7, coords=200):
    results = check_ops(seed)
    results.append(gradcheck_params(seed, coords))
    results.append(gradcheck_input(seed))
    return results


__all__ = ["CheckResult", "check_ops", "gradcheck_input", "gradcheck_params", "rel_error", "run_all"]
