"""Slow, definition-level reference implementations used as test oracles.

Nothing here imports the package under test.
"""

import math

import numpy as np


def conv2d_loops(x, w, b, stride=1, pad=0):
    """Cross-correlation written as the quadruple loop."""
    c, h, wd = x.shape
    o, c2, kh, kw = w.shape
    assert c == c2
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad : pad + h, pad : pad + wd] = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((o, oh, ow))
    for oc in range(o):
        for y in range(oh):
            for xx in range(ow):
                acc = 0.0 if b is None else b[oc]
                for ic in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            acc += w[oc, ic, i, j] * xp[ic, y * stride + i, xx * stride + j]
                out[oc, y, xx] = acc
    return out


def conv_transpose_loops(y, w, b, stride=1, pad=0):
    """Scatter form: every input sample adds a weighted kernel patch."""
    cin, h, wd = y.shape
    cin2, cout, kh, kw = w.shape
    assert cin == cin2
    fh, fw = (h - 1) * stride + kh, (wd - 1) * stride + kw
    full = np.zeros((cout, fh, fw))
    for ic in range(cin):
        for r in range(h):
            for c in range(wd):
                full[:, r * stride : r * stride + kh, c * stride : c * stride + kw] += y[ic, r, c] * w[ic]
    out = full[:, pad : fh - pad, pad : fw - pad]
    if b is not None:
        out = out + np.asarray(b)[:, None, None]
    return out


def dct2_definition(block):
    """Orthonormal 2-D DCT-II by the O(N^4) sum."""
    n = block.shape[0]
    out = np.zeros((n, n))
    for u in range(n):
        for v in range(n):
            cu = math.sqrt(1 / n) if u == 0 else math.sqrt(2 / n)
            cv = math.sqrt(1 / n) if v == 0 else math.sqrt(2 / n)
            s = 0.0
            for x in range(n):
                for y in range(n):
                    s += block[x, y] * math.cos((2 * x + 1) * u * math.pi / (2 * n)) * math.cos((2 * y + 1) * v * math.pi / (2 * n))
            out[u, v] = cu * cv * s
    return out


def ijg_table(quality, base):
    """IJG libjpeg quality scaling, written with Python integers."""
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    return [[min(255, max(1, (scale * t + 50) // 100)) for t in row] for row in base]


def channel_extract_loops(code):
    """Snapshot ch holds, for every block, the coefficient at (ch % 8, ch // 8)."""
    h, w = code.shape
    out = np.zeros((64, h // 8, w // 8))
    for ch in range(64):
        i, j = ch % 8, ch // 8
        for by in range(h // 8):
            for bx in range(w // 8):
                out[ch, by, bx] = code[8 * by + i, 8 * bx + j]
    return out


def psnr_plain(a, b):
    mse = sum((float(p) - float(q)) ** 2 for p, q in zip(np.ravel(a), np.ravel(b))) / np.size(a)
    return math.inf if mse == 0 else 10 * math.log10(255.0**2 / mse)
