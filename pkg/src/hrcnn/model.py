"""Heterogeneous residual CNN mapping a k-space code to a pixel-space image.

Layer 1 splits the code into 64 spectral snapshots with fixed coded masks,
layer 2 restores each snapshot to full size with a stride-8 transposed
convolution, layers 3-4 decode to one pixel plane, and layers 5-16 form four
residual blocks. ReLU follows layer 4 and the final merge only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .kspace import BLOCK, KSpaceImage, dct_basis, quant_table_for_quality

N_CHANNELS = BLOCK * BLOCK


@dataclass(frozen=True)
class LayerSpec:
    index: int
    kind: str  # "coded_mask" | "conv_transpose" | "conv"
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    activation: str = "none"
    residual_source: int | None = None

    def conv_spec(self):
        return T.ConvSpec.square(self.in_channels, self.out_channels, self.kernel, self.stride, self.padding)

    @property
    def weight_shape(self):
        if self.kind == "conv_transpose":
            return (self.in_channels, self.out_channels, self.kernel, self.kernel)
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)

    @property
    def trainable(self):
        return self.kind != "coded_mask"


def _residual_block(first):
    return (
        LayerSpec(first, "conv", 1, 64, 11, padding=5),
        LayerSpec(first + 1, "conv", 64, 16, 7, padding=3),
        LayerSpec(first + 2, "conv", 16, 1, 1, residual_source=first - 1),
    )


ARCHITECTURE = (
    LayerSpec(1, "coded_mask", 1, N_CHANNELS, BLOCK, stride=BLOCK),
    LayerSpec(2, "conv_transpose", N_CHANNELS, N_CHANNELS, BLOCK, stride=BLOCK),
    LayerSpec(3, "conv", N_CHANNELS, 8, 5, padding=2),
    LayerSpec(4, "conv", 8, 1, 3, padding=1, activation="relu"),
    *_residual_block(5),
    *_residual_block(8),
    *_residual_block(11),
    *_residual_block(14),
)
LAYERS = {spec.index: spec for spec in ARCHITECTURE}
TRAINABLE = tuple(spec.index for spec in ARCHITECTURE if spec.trainable)
DECODING_LAYERS = (2, 3, 4)
ENHANCEMENT_LAYERS = tuple(range(5, 17))
BLOCK_ENDS = (7, 10, 13, 16)

TAP_NAMES = ("L1", "L2", "L4", "block1", "block2", "block3", "block4", "output")


def _check_architecture():
    assert [s.index for s in ARCHITECTURE] == list(range(1, 17))
    for prev, cur in zip(ARCHITECTURE, ARCHITECTURE[1:]):
        assert cur.in_channels == prev.out_channels, f"layer {cur.index} channel mismatch"
    for end in BLOCK_ENDS:
        assert LAYERS[end].residual_source == end - 3


_check_architecture()


# -- coded masks ----------------------------------------------------------

def build_masks():
    """The 64 coded masks as a (64, 8, 8) array; mask ``ch`` selects ``(ch % 8, ch // 8)``."""
    masks = np.zeros((N_CHANNELS, BLOCK, BLOCK))
    for ch in range(N_CHANNELS):
        masks[ch, ch % BLOCK, ch // BLOCK] = 1.0
    return masks


MASKS = build_masks()


def channel_extract(kspace, masks=None):
    """Split a (1, H, W) code into 64 snapshots of shape (H/8, W/8).

    Without ``masks`` the split is a pure re-indexing; with a mask bank it is
    carried out as the stride-8 convolution with those masks.
    """
    kspace = T.as_tensor(kspace)
    if kspace.ndim != 3 or kspace.shape[0] != 1:
        raise T.ShapeError(f"k-space tensor must be (1, H, W), got {kspace.shape}")
    _, h, w = kspace.shape
    if h % BLOCK or w % BLOCK:
        raise T.ShapeError(f"k-space extents {h}x{w} are not multiples of 8")
    if masks is not None:
        spec = LAYERS[1].conv_spec()
        return T.conv2d(kspace, np.asarray(masks, dtype=np.float64)[:, None], None, spec)
    # (by, i, bx, j) -> (j, i, by, bx); channel = 8 * j + i
    blocks = kspace[0].reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK)
    return np.ascontiguousarray(blocks.transpose(3, 1, 0, 2).reshape(N_CHANNELS, h // BLOCK, w // BLOCK))


def channel_extract_backward(grad_out):
    """Route each snapshot's gradient back to the one code position its mask selects."""
    _, hb, wb = grad_out.shape
    g = grad_out.reshape(BLOCK, BLOCK, hb, wb).transpose(2, 1, 3, 0)
    return np.ascontiguousarray(g.reshape(1, hb * BLOCK, wb * BLOCK))


# -- parameters -----------------------------------------------------------

@dataclass
class ModelParams:
    weights: dict = field(default_factory=dict)
    biases: dict = field(default_factory=dict)
    quality: int = 50

    def validate(self):
        """Check every trainable layer against the architecture table."""
        for index in TRAINABLE:
            spec = LAYERS[index]
            if index not in self.weights or index not in self.biases:
                raise T.ShapeError(f"layer {index}: parameters missing")
            w, b = self.weights[index], self.biases[index]
            if w.shape != spec.weight_shape:
                raise T.ShapeError(f"layer {index}: weight shape {w.shape} does not match {spec.weight_shape}")
            if b.shape != (spec.out_channels,):
                raise T.ShapeError(f"layer {index}: bias shape {b.shape} does not match ({spec.out_channels},)")
        extra = set(self.weights) - set(TRAINABLE)
        if extra:
            raise T.ShapeError(f"layers {sorted(extra)} carry no trainable parameters")
        return self

    def copy(self):
        return ModelParams(
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.biases.items()},
            self.quality,
        )

    def arrays(self):
        """Yield ``(layer, "weight"|"bias", array)`` in layer order."""
        for index in TRAINABLE:
            yield index, "weight", self.weights[index]
            yield index, "bias", self.biases[index]

    @classmethod
    def zeros(cls, quality=50):
        return cls(
            {i: np.zeros(LAYERS[i].weight_shape) for i in TRAINABLE},
            {i: np.zeros(LAYERS[i].out_channels) for i in TRAINABLE},
            quality,
        )


def param_count(params: ModelParams):
    """Trainable weights and biases as ``(decoding, enhancement, total)``."""
    sizes = {i: params.weights[i].size + params.biases[i].size for i in TRAINABLE}
    decoding = sum(sizes[i] for i in DECODING_LAYERS)
    enhancement = sum(sizes[i] for i in ENHANCEMENT_LAYERS)
    return decoding, enhancement, decoding + enhancement


def _fan_in(spec):
    if spec.kind == "conv_transpose":
        taps = -(-spec.kernel // spec.stride)
        return spec.in_channels * taps * taps
    return spec.in_channels * spec.kernel * spec.kernel


def _uniform(rng, spec):
    a = np.sqrt(6.0 / _fan_in(spec))
    return rng.uniform(-a, a, size=spec.weight_shape)


# how the DC gain is split between layers 2 and 3 at idct_seeded init
DC_SPLIT = 3.0


def init_params(scheme="idct_seeded", seed=0, quality=50):
    """Deterministic initial parameters.

    ``uniform_fanin`` draws every weight from U(-a, a), a = sqrt(6 / fan_in),
    with zero biases. ``idct_seeded`` starts the network as the baseline
    decoder: layer 2 holds the dequantized DCT basis of each channel, layer 3
    sums the channels into its first output, layer 4 passes it on (+128), and
    the last convolution of every residual block starts at zero so the blocks
    are exact pass-throughs. The remaining weights are drawn as in
    ``uniform_fanin`` and begin learning through the zero layers; the first
    kernel of each block is shifted to zero sum so the branch starts out
    blind to brightness (raw pixel means otherwise dominate its curvature).
    The DC snapshot is carried through layer 2 at ``1 / DC_SPLIT`` of its
    amplitude and layer 3 scales it back; the product is unchanged but the
    curvature along layer 3's DC taps drops, which allows a larger step.
    """
    if scheme not in ("uniform_fanin", "idct_seeded"):
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    params = ModelParams(quality=int(quality))
    # draw everything first so both schemes consume the stream identically
    for index in TRAINABLE:
        spec = LAYERS[index]
        params.weights[index] = _uniform(rng, spec)
        params.biases[index] = np.zeros(spec.out_channels)
    if scheme == "idct_seeded":
        q = quant_table_for_quality(quality).q
        w2 = np.zeros(LAYERS[2].weight_shape)
        for ch in range(N_CHANNELS):
            u, v = ch % BLOCK, ch // BLOCK
            w2[ch, ch] = q[u, v] * dct_basis(u, v)
        params.weights[2] = w2
        w2[0, 0] /= DC_SPLIT
        params.weights[3][0] = 0.0
        params.weights[3][0, :, 2, 2] = 1.0
        params.weights[3][0, 0, 2, 2] = DC_SPLIT
        params.weights[4][:] = 0.0
        params.weights[4][0, 0, 1, 1] = 1.0
        # level shift in the last decoding bias keeps layer 4's input centred
        params.biases[4][0] = 128.0
        for end in BLOCK_ENDS:
            first = params.weights[end - 2]
            first -= first.mean(axis=(1, 2, 3), keepdims=True)
            params.weights[end][:] = 0.0
    return params


# -- forward / backward ---------------------------------------------------

def kspace_tensor(code: KSpaceImage):
    return code.coeffs.astype(np.float64)[None]


@dataclass
class ForwardCache:
    activations: dict  # layer index -> output F_i (0 is the input code)
    pre_activations: dict  # layer index -> value before its ReLU
    params: ModelParams


def _layer_forward(spec, h, params):
    if spec.kind == "coded_mask":
        return channel_extract(h)
    w, b = params.weights[spec.index], params.biases[spec.index]
    if spec.kind == "conv_transpose":
        return T.conv_transpose2d(h, w, b, spec.conv_spec())
    return T.conv2d(h, w, b, spec.conv_spec())


def _run(kspace, params):
    kspace = T.as_tensor(kspace)
    if kspace.ndim != 3 or kspace.shape[0] != 1:
        raise T.ShapeError(f"k-space tensor must be (1, H, W), got {kspace.shape}")
    if kspace.shape[1] % BLOCK or kspace.shape[2] % BLOCK:
        raise T.ShapeError(f"k-space extents {kspace.shape[1:]} are not multiples of 8")
    acts = {0: kspace}
    pre = {}
    h = kspace
    for spec in ARCHITECTURE:
        h = _layer_forward(spec, h, params)
        if spec.residual_source is not None:
            h = T.add(h, acts[spec.residual_source])
        pre[spec.index] = h
        if spec.activation == "relu":
            h = T.relu(h)
        acts[spec.index] = h
    return acts, pre


def forward(kspace, params: ModelParams, want_taps=False):
    """Run the network on a (1, H, W) code.

    Returns ``(output, taps)``; output is the ReLU of the last merge and
    ``taps`` maps each name in ``TAP_NAMES`` to a copy of that stage, or is
    None when not requested.
    """
    acts, pre = _run(kspace, params)
    output = T.relu(pre[16])
    if not want_taps:
        return output, None
    taps = {
        "L1": acts[1].copy(),
        "L2": acts[2].copy(),
        "L4": acts[4].copy(),
        **{f"block{k + 1}": pre[end].copy() for k, end in enumerate(BLOCK_ENDS)},
        "output": output.copy(),
    }
    return output, taps


def forward_train(kspace, params: ModelParams):
    """Forward pass that keeps what ``backward`` needs."""
    acts, pre = _run(kspace, params)
    acts[16] = T.relu(pre[16])
    return acts[16], ForwardCache(acts, pre, params)


def backward(grad_out, cache: ForwardCache, return_input_grad=False):
    """Gradients of every layer 2-16 parameter; the mask bank gets none.

    With ``return_input_grad`` also returns the gradient w.r.t. the code.
    """
    if cache is None:
        raise ValueError("backward needs the cache from forward_train")
    params = cache.params
    acts, pre = cache.activations, cache.pre_activations
    grads = ModelParams(quality=params.quality)
    # the output ReLU sits outside the layer table
    pending = {16: T.relu_backward(pre[16], grad_out)}

    def accumulate(index, g):
        if index in pending:
            pending[index] = pending[index] + g
        else:
            pending[index] = g

    for spec in reversed(ARCHITECTURE):
        i = spec.index
        g = pending.pop(i)
        if spec.activation == "relu":
            g = T.relu_backward(pre[i], g)
        if spec.residual_source is not None:
            accumulate(spec.residual_source, g)
        x = acts[i - 1]
        if spec.kind == "coded_mask":
            if return_input_grad:
                accumulate(0, channel_extract_backward(g))
            continue
        w = params.weights[i]
        if spec.kind == "conv_transpose":
            gx, gw, gb = T.conv_transpose2d_backward(x, w, spec.conv_spec(), g)
        else:
            gx, gw, gb = T.conv2d_backward(x, w, spec.conv_spec(), g)
        grads.weights[i] = gw
        grads.biases[i] = gb
        accumulate(i - 1, gx)
    if return_input_grad:
        return grads, pending[0]
    return grads
