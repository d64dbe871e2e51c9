import numpy as np
import pytest

from hrcnn import tensor as T
from hrcnn.kspace import GrayImage, decode_baseline, encode
from hrcnn.metrics import psnr
from hrcnn.model import (
    ARCHITECTURE,
    MASKS,
    TAP_NAMES,
    ModelParams,
    backward,
    build_masks,
    channel_extract,
    channel_extract_backward,
    forward,
    forward_train,
    init_params,
    kspace_tensor,
    param_count,
)
from hrcnn.kspace import to_uint8

from oracles import channel_extract_loops


# -- coded masks -----------------------------------------------------------

def test_mask_positions():
    m = build_masks()
    assert m.shape == (64, 8, 8)
    assert np.argwhere(m[0]).tolist() == [[0, 0]]
    assert np.argwhere(m[24]).tolist() == [[0, 3]]
    for ch in range(64):
        assert np.argwhere(m[ch]).tolist() == [[ch % 8, ch // 8]]
    assert np.array_equal(m.sum(axis=0), np.ones((8, 8)))


def test_extract_single_coefficient():
    code = np.zeros((1, 16, 16))
    code[0, 8, 3] = 7.0
    out = channel_extract(code)
    assert out.shape == (64, 2, 2)
    assert out[24, 1, 0] == 7.0
    assert np.count_nonzero(out) == 1


def test_extract_all_ones():
    assert np.all(channel_extract(np.ones((1, 24, 16))) == 1.0)


def test_extract_matches_oracle_bitwise(rng):
    for _ in range(20):
        h, w = 8 * rng.integers(1, 6, size=2)
        code = rng.normal(size=(1, h, w)) * 1e3
        ref = channel_extract_loops(code[0])
        assert np.array_equal(channel_extract(code), ref)
        assert np.array_equal(channel_extract(code, MASKS), ref)


def test_extract_backward_is_adjoint(rng):
    code = rng.normal(size=(1, 16, 24))
    g = rng.normal(size=(64, 2, 3))
    assert abs(np.vdot(channel_extract(code), g) - np.vdot(code, channel_extract_backward(g))) < 1e-12


def test_extract_rejects_odd_sizes():
    with pytest.raises(T.ShapeError):
        channel_extract(np.zeros((1, 12, 16)))


# -- parameters and init ---------------------------------------------------

def test_param_counts():
    assert param_count(init_params("uniform_fanin", 0)) == (275_089, 232_068, 507_157)
    assert param_count(init_params("idct_seeded", 0)) == (275_089, 232_068, 507_157)


def test_layer_table_arithmetic():
    sizes = {s.index: int(np.prod(s.weight_shape)) + s.out_channels for s in ARCHITECTURE if s.trainable}
    assert sizes[2] == 262_208 and sizes[3] == 12_808 and sizes[4] == 73
    assert sizes[5] + sizes[6] + sizes[7] == 58_017


@pytest.mark.parametrize("scheme", ["uniform_fanin", "idct_seeded"])
def test_init_deterministic(scheme):
    a, b = init_params(scheme, 3), init_params(scheme, 3)
    for (_, _, x), (_, _, y) in zip(a.arrays(), b.arrays()):
        assert np.array_equal(x, y)
    c = init_params(scheme, 4)
    assert not np.array_equal(a.weights[6], c.weights[6])


def test_uniform_fanin_bound():
    p = init_params("uniform_fanin", 0)
    fan = {2: 64 * 1 * 1, 3: 64 * 25, 4: 8 * 9, 5: 121, 6: 64 * 49, 7: 16}
    for index, w in p.weights.items():
        a = np.sqrt(6.0 / fan[(index - 5) % 3 + 5 if index >= 5 else index])
        assert np.abs(w).max() <= a
        assert not p.biases[index].any()


def test_unknown_scheme():
    with pytest.raises(ValueError):
        init_params("xavier", 0)


def test_validate_names_bad_layer():
    p = init_params("uniform_fanin", 0)
    p.weights[3] = np.zeros((8, 64, 3, 3))
    with pytest.raises(T.ShapeError, match="layer 3"):
        p.validate()


# -- forward ---------------------------------------------------------------

def test_zero_everything_gives_zero():
    out, _ = forward(np.zeros((1, 16, 16)), ModelParams.zeros())
    assert out.shape == (1, 16, 16) and not out.any()


def test_output_non_negative(rng):
    p = init_params("uniform_fanin", 1)
    out, _ = forward(rng.normal(size=(1, 16, 16)) * 10, p)
    assert out.min() >= 0.0


def test_tap_shapes(rng):
    p = init_params("uniform_fanin", 1)
    out, taps = forward(rng.normal(size=(1, 128, 128)), p, want_taps=True)
    assert out.shape == (1, 128, 128)
    assert tuple(taps) == TAP_NAMES
    shapes = {k: v.shape for k, v in taps.items()}
    assert shapes["L1"] == (64, 16, 16)
    assert shapes["L2"] == (64, 128, 128)
    assert shapes["L4"] == (1, 128, 128)
    for name in TAP_NAMES[3:]:
        assert shapes[name] == (1, 128, 128)
    assert np.array_equal(taps["output"], out)


@pytest.mark.parametrize("quality", [10, 50])
def test_idct_seeded_reproduces_baseline(natural_images, quality):
    for name in ("camera", "coffee"):
        gt = natural_images[name][:64, :96]
        code = encode(GrayImage(gt), quality)
        p = init_params("idct_seeded", 0, quality)
        out, _ = forward(kspace_tensor(code), p)
        base = decode_baseline(code).pixels
        assert np.array_equal(to_uint8(out[0]), base)
        assert abs(psnr(to_uint8(out[0]), gt) - psnr(base, gt)) < 6.0


# -- backward --------------------------------------------------------------

def test_backward_zero_grad(rng):
    p = init_params("uniform_fanin", 2)
    _, cache = forward_train(rng.normal(size=(1, 16, 16)), p)
    grads = backward(np.zeros((1, 16, 16)), cache)
    assert all(not a.any() for _, _, a in grads.arrays())


def test_backward_needs_cache():
    with pytest.raises(ValueError):
        backward(np.zeros((1, 8, 8)), None)


def test_input_gradient_flows_through_own_channel(rng):
    # a code position (r, c) feeds only snapshot channel (r % 8) + 8 (c % 8),
    # so its gradient is that channel's layer-1 gradient at block (r // 8, c // 8)
    p = init_params("uniform_fanin", 5)
    code = rng.normal(size=(1, 16, 16))
    out, cache = forward_train(code, p)
    _, g = T.mse_loss(out, rng.normal(size=out.shape))
    _, gin = backward(g, cache, return_input_grad=True)
    g1 = channel_extract(gin)
    for r, c in ((0, 0), (9, 4), (15, 15), (3, 10)):
        ch = (r % 8) + 8 * (c % 8)
        unit = np.zeros((1, 16, 16))
        unit[0, r, c] = 1.0
        hit = channel_extract(unit)
        assert np.argwhere(hit).tolist() == [[ch, r // 8, c // 8]]
        assert g1[ch, r // 8, c // 8] == gin[0, r, c]


def test_forward_does_not_mutate_params(rng):
    p = init_params("idct_seeded", 0, 10)
    before = p.copy()
    out, cache = forward_train(rng.normal(size=(1, 16, 16)), p)
    backward(out, cache)
    for (_, _, a), (_, _, b) in zip(p.arrays(), before.arrays()):
        assert np.array_equal(a, b)


def test_zero_enhancement_is_pass_through(rng):
    p = init_params("uniform_fanin", 4)
    for index in range(5, 17):
        p.weights[index][:] = 0.0
    out, taps = forward(rng.normal(size=(1, 16, 16)) * 20, p, want_taps=True)
    assert np.array_equal(out, np.maximum(taps["L4"], 0.0))
    for name in ("block1", "block2", "block3", "block4"):
        assert np.array_equal(taps[name], taps["L4"])
