import numpy as np
import pytest

from sccomp.errors import NumericError, ShapeError
from sccomp.tensors import (
    FeatureTensor,
    WeightTensor,
    conv2d_forward,
    conv_input_dims,
    conv_output_dims,
    im2col,
    kernel_from_row,
    mean_activation_map,
    mode_n_refold,
    mode_n_unfold,
    reshape_to_matrix,
)


def naive_conv(x, w, bias, stride, padding):
    """Quadruple-loop cross-correlation; the oracle for conv2d_forward."""
    c_in, h, win = x.shape
    c_out, _, k, _ = w.shape
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (win + 2 * padding - k) // stride + 1
    out = np.zeros((c_out, h_out, w_out))
    for o in range(c_out):
        for i in range(h_out):
            for j in range(w_out):
                patch = x[:, i * stride : i * stride + k, j * stride : j * stride + k]
                out[o, i, j] = np.sum(patch * w[o]) + bias[o]
    return out


def test_weight_tensor_validation():
    w = WeightTensor(w=np.zeros((4, 3, 3, 3)), bias=np.zeros(4))
    assert (w.c_out, w.c_in, w.kernel_size) == (4, 3, 3)
    with pytest.raises(ShapeError):
        WeightTensor(w=np.zeros((4, 3, 3)), bias=np.zeros(4))
    with pytest.raises(ShapeError):
        WeightTensor(w=np.zeros((4, 3, 3, 2)), bias=np.zeros(4))
    with pytest.raises(ShapeError):
        WeightTensor(w=np.zeros((4, 3, 3, 3)), bias=np.zeros(5))
    with pytest.raises(ShapeError):
        WeightTensor(w=np.zeros((4, 3, 3, 3)), bias=np.zeros(4), stride=0)
    with pytest.raises(NumericError):
        WeightTensor(w=np.full((1, 1, 1, 1), np.nan), bias=np.zeros(1))


def test_feature_tensor_batch_average():
    batch = np.arange(2 * 3 * 4 * 4, dtype=float).reshape(2, 3, 4, 4)
    f = FeatureTensor.from_batch(batch)
    assert f.f.shape == (3, 4, 4)
    assert np.allclose(f.f, batch.mean(axis=0))
    with pytest.raises(ShapeError):
        FeatureTensor(np.zeros((4, 4)))


def test_reshape_round_trip():
    rng = np.random.Generator(np.random.PCG64(0))
    w = WeightTensor(w=rng.standard_normal((5, 2, 3, 3)), bias=np.zeros(5))
    mat = reshape_to_matrix(w)
    assert mat.shape == (5, 18)
    for c in range(5):
        assert np.array_equal(kernel_from_row(mat[c], 2, 3), w.w[c])
    with pytest.raises(ShapeError):
        kernel_from_row(mat[0], 2, 2)


def test_mode_unfold_refold_inverse():
    rng = np.random.Generator(np.random.PCG64(1))
    t = rng.standard_normal((4, 3, 2, 2))
    for mode in range(1, 5):
        m = mode_n_unfold(t, mode)
        assert m.shape[0] == t.shape[mode - 1]
        assert np.array_equal(mode_n_refold(m, mode, t.shape), t)
    with pytest.raises(ShapeError):
        mode_n_unfold(t, 5)
    with pytest.raises(ShapeError):
        mode_n_refold(np.zeros((4, 11)), 1, (4, 3, 2, 2))


def test_mode_1_unfold_rows_are_flattened_slices():
    t = np.arange(24, dtype=float).reshape(2, 3, 4)
    m = mode_n_unfold(t, 1)
    assert np.array_equal(m[0], t[0].ravel())
    assert np.array_equal(m[1], t[1].ravel())


def test_mean_activation_map():
    f = FeatureTensor(np.stack([np.full((2, 2), 1.0), np.full((2, 2), 3.0)]))
    assert np.array_equal(mean_activation_map(f), np.full((2, 2), 2.0))


def test_conv_output_dims():
    assert conv_output_dims(8, 8, 3, 1, 0) == (6, 6)
    assert conv_output_dims(9, 9, 3, 2, 1) == (5, 5)
    assert conv_input_dims(5, 5, 3, 2, 1) == (9, 9)
    with pytest.raises(ShapeError):
        conv_output_dims(2, 2, 3, 1, 0)


def test_im2col_matches_patch_extraction():
    rng = np.random.Generator(np.random.PCG64(2))
    x = rng.standard_normal((2, 5, 6))
    col = im2col(x, 3, stride=1, padding=0)
    assert col.shape == (18, 12)
    # column 0 is the top-left patch flattened in (c, i, j) order
    assert np.array_equal(col[:, 0], x[:, :3, :3].ravel())


def test_conv_forward_against_naive_oracle():
    rng = np.random.Generator(np.random.PCG64(3))
    for _ in range(20):
        c_in = int(rng.integers(1, 4))
        c_out = int(rng.integers(1, 5))
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        padding = int(rng.integers(0, 2))
        h = int(rng.integers(k, k + 6))
        wd = int(rng.integers(k, k + 6))
        w = WeightTensor(
            w=rng.standard_normal((c_out, c_in, k, k)),
            bias=rng.standard_normal(c_out),
            stride=stride,
            padding=padding,
        )
        x = rng.standard_normal((c_in, h, wd))
        got = conv2d_forward(x, w)
        want = naive_conv(x, w.w, w.bias, stride, padding)
        assert got.shape == want.shape
        assert np.allclose(got, want, atol=1e-10)


def test_conv_forward_channel_mismatch():
    w = WeightTensor(w=np.zeros((2, 3, 3, 3)), bias=np.zeros(2))
    with pytest.raises(ShapeError):
        conv2d_forward(np.zeros((2, 5, 5)), w)
