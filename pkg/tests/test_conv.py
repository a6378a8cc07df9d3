import numpy as np
import numpy.testing as npt
import pytest

from fesnet.layers import Conv2d, ConvSpec, ConvTranspose2d, SeparableConv2d

from oracles import conv2d_reference, separable_conv2d_reference, transposed_conv2d_reference


def test_all_ones_3x3_padded():
    conv = Conv2d(ConvSpec(3, 3, 1, 1, padding=1))
    conv.w.value[...] = 1.0
    y = conv.forward(np.ones((1, 1, 3, 3)))
    npt.assert_array_equal(y[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


def test_1x1_identity():
    conv = Conv2d(ConvSpec(1, 1, 1, 1))
    conv.w.value[...] = 1.0
    x = np.arange(12.0).reshape(1, 1, 3, 4)
    npt.assert_array_equal(conv.forward(x), x)


def test_random_stride2_matches_loop_oracle(rng):
    x = rng.standard_normal((1, 3, 7, 7)).astype(np.float32)
    conv = Conv2d(ConvSpec(3, 3, 3, 4, stride=2), rng, np.float32)
    got = conv.forward(x)
    want = conv2d_reference(x, conv.w.value, conv.b.value, stride=2)
    npt.assert_allclose(got, want, atol=1e-5)


@pytest.mark.parametrize("stride,dilation,padding", [
    (1, 1, 0), (1, 1, 1), (2, 1, 1), (1, 2, 2), (2, 2, 0), (3, 1, 2),
])
def test_output_shape_follows_spec_formula(rng, stride, dilation, padding):
    spec = ConvSpec(3, 3, 2, 3, stride=stride, dilation=dilation, padding=padding)
    h, w = 9, 11
    y = Conv2d(spec, rng).forward(rng.standard_normal((1, 2, h, w)))
    assert y.shape[2:] == spec.out_hw(h, w)


def test_randomized_against_oracle_both_precisions(rng):
    for dtype, tol in ((np.float32, 1e-5), (np.float64, 1e-10)):
        for _ in range(10):
            cin = int(rng.integers(1, 5))
            cout = int(rng.integers(1, 5))
            kh, kw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            stride = int(rng.integers(1, 3))
            dilation = int(rng.integers(1, 3))
            padding = int(rng.integers(0, 3))
            h = int(rng.integers(dilation * (kh - 1) + 1, 9))
            w = int(rng.integers(dilation * (kw - 1) + 1, 9))
            spec = ConvSpec(kh, kw, cin, cout, stride=stride, dilation=dilation,
                            padding=padding)
            conv = Conv2d(spec, rng, dtype)
            x = rng.standard_normal((2, cin, h, w)).astype(dtype)
            want = conv2d_reference(x, conv.w.value, conv.b.value,
                                    stride=stride, dilation=dilation, padding=padding)
            npt.assert_allclose(conv.forward(x), want, atol=tol)


def test_channel_mismatch_names_dimension(rng):
    conv = Conv2d(ConvSpec(3, 3, 3, 4, padding=1), rng)
    with pytest.raises(ValueError, match="2 channels.*expects 3"):
        conv.forward(rng.standard_normal((1, 2, 5, 5)))


def test_non_4d_rejected(rng):
    conv = Conv2d(ConvSpec(3, 3, 3, 4), rng)
    with pytest.raises(ValueError, match="4-D"):
        conv.forward(rng.standard_normal((3, 5, 5)))


def test_depthwise_requires_matching_channels():
    with pytest.raises(ValueError, match="depthwise"):
        ConvSpec(3, 3, 4, 8, depthwise=True)


def test_backward_shape_mismatch_rejected(rng):
    conv = Conv2d(ConvSpec(3, 3, 2, 2, padding=1), rng)
    conv.forward(rng.standard_normal((1, 2, 4, 4)))
    with pytest.raises(ValueError, match="gradient shape"):
        conv.backward(rng.standard_normal((1, 2, 5, 5)))


# -- depthwise separable --------------------------------------------------------


def test_separable_identity_composition():
    sep = SeparableConv2d(3, 3)
    sep.depthwise.w.value[...] = 0.0
    sep.depthwise.w.value[:, 1, 1] = 1.0        # center-tap depthwise
    sep.pointwise.w.value[...] = np.eye(3).reshape(3, 3, 1, 1)
    x = np.arange(48.0).reshape(1, 3, 4, 4)
    npt.assert_allclose(sep.forward(x), x, atol=1e-12)


def test_separable_parameter_count_16_channels():
    sep = SeparableConv2d(16, 16)
    total = sum(p.value.size for p in sep.params())
    # depthwise 16*9 + 16, pointwise 16*16 + 16
    assert total == (16 * 9 + 16) + (16 * 16 + 16) == 432


def test_separable_matches_two_stage_composition(rng):
    sep = SeparableConv2d(3, 5, rng=rng, dtype=np.float64)
    x = rng.standard_normal((2, 3, 6, 6))
    stage1 = Conv2d(ConvSpec(3, 3, 3, 3, padding=1, depthwise=True))
    stage1.w.value = sep.depthwise.w.value.copy()
    stage1.b.value = sep.depthwise.b.value.copy()
    stage2 = Conv2d(ConvSpec(1, 1, 3, 5))
    stage2.w.value = sep.pointwise.w.value.copy()
    stage2.b.value = sep.pointwise.b.value.copy()
    npt.assert_allclose(sep.forward(x), stage2.forward(stage1.forward(x)), atol=1e-6)


def test_separable_matches_loop_oracle(rng):
    sep = SeparableConv2d(2, 4, rng=rng, dtype=np.float32)
    x = rng.standard_normal((1, 2, 5, 5)).astype(np.float32)
    want = separable_conv2d_reference(x, sep.depthwise.w.value, sep.pointwise.w.value,
                                      sep.depthwise.b.value, sep.pointwise.b.value)
    npt.assert_allclose(sep.forward(x), want, atol=1e-5)


# -- transposed -----------------------------------------------------------------


def test_transposed_single_pixel_expansion(rng):
    t = ConvTranspose2d(1, 1, 4, rng=rng, dtype=np.float64)
    v = 2.5
    y = t.forward(np.full((1, 1, 1, 1), v))
    npt.assert_allclose(y[0, 0], v * t.w.value[0, 0] + t.b.value[0], atol=1e-12)


def test_transposed_shape_arithmetic(rng):
    t = ConvTranspose2d(3, 2, 4, rng=rng)
    assert t.forward(rng.standard_normal((1, 3, 2, 2))).shape == (1, 2, 8, 8)


def test_transposed_stride_below_one_rejected():
    with pytest.raises(ValueError, match="stride"):
        ConvTranspose2d(3, 2, 0)


def test_transposed_matches_loop_oracle(rng):
    t = ConvTranspose2d(2, 3, 2, rng=rng, dtype=np.float32)
    x = rng.standard_normal((2, 2, 3, 3)).astype(np.float32)
    want = transposed_conv2d_reference(x, t.w.value, t.b.value, 2)
    npt.assert_allclose(t.forward(x), want, atol=1e-5)


def test_transposed_is_adjoint_of_strided_conv(rng):
    """Forward transposed conv equals the input gradient of the matching
    strided convolution with the same kernel."""
    t = ConvTranspose2d(3, 2, 4, rng=rng, dtype=np.float64)
    x = rng.standard_normal((1, 3, 3, 3))
    y = t.forward(x) - t.b.value[None, :, None, None]

    conv = Conv2d(ConvSpec(4, 4, 2, 3, stride=4))
    conv.w.value = t.w.value.copy()  # (in=3, out=2, 4, 4) == conv (out=3, in=2, 4, 4)
    dummy = rng.standard_normal((1, 2, 12, 12))
    conv.forward(dummy)
    dx = conv.backward(x)
    npt.assert_allclose(y, dx, atol=1e-10)
