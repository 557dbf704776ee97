"""Dense tensor containers, reshaping primitives, and a reference conv forward.

Everything here is a pure function over float64 numpy arrays. The convolution
follows the cross-correlation convention (no kernel flip) and is implemented
through explicit patch extraction so that it stays easy to audit; speed is not
a goal of this module.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError


def as_float_array(data, name="array"):
    """Coerce to a float64 ndarray and require every entry to be finite."""
    arr = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class WeightTensor:
    """A conv layer's kernel bank (c_out, c_in, k, k) plus bias and geometry."""

    w: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        w = as_float_array(self.w, "weights")
        bias = as_float_array(self.bias, "bias")
        if w.ndim != 4:
            raise ShapeError(f"weights must be 4-D, got {w.ndim}-D")
        if w.shape[2] != w.shape[3]:
            raise ShapeError(f"kernel must be square, got {w.shape[2]}x{w.shape[3]}")
        if bias.shape != (w.shape[0],):
            raise ShapeError(
                f"bias length {bias.shape} does not match {w.shape[0]} output channels"
            )
        if self.stride < 1:
            raise ShapeError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ShapeError(f"padding must be non-negative, got {self.padding}")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "bias", bias)

    @property
    def c_out(self):
        return self.w.shape[0]

    @property
    def c_in(self):
        return self.w.shape[1]

    @property
    def kernel_size(self):
        return self.w.shape[2]


@dataclass(frozen=True)
class FeatureTensor:
    """Calibration activations of one layer, shape (c_out, h, w)."""

    f: np.ndarray = field()

    def __post_init__(self):
        f = as_float_array(self.f, "features")
        if f.ndim != 3:
            raise ShapeError(f"feature tensor must be 3-D, got {f.ndim}-D")
        object.__setattr__(self, "f", f)

    @classmethod
    def from_batch(cls, batch):
        """Average a (n, c_out, h, w) calibration batch into one feature tensor."""
        arr = as_float_array(batch, "features")
        if arr.ndim == 4:
            arr = arr.mean(axis=0)
        return cls(arr)

    @property
    def c_out(self):
        return self.f.shape[0]

    @property
    def grid_shape(self):
        return self.f.shape[1], self.f.shape[2]


def reshape_to_matrix(w: WeightTensor) -> np.ndarray:
    """Flatten each filter to a row: (c_out, c_in * k * k), row-major."""
    return w.w.reshape(w.c_out, -1).copy()


def kernel_from_row(row, c_in: int, kernel_size: int) -> np.ndarray:
    """Inverse of the per-filter flattening: row -> (c_in, k, k)."""
    row = np.asarray(row, dtype=np.float64)
    expected = c_in * kernel_size * kernel_size
    if row.ndim != 1 or row.size != expected:
        raise ShapeError(f"row has {row.size} entries, expected {expected}")
    return row.reshape(c_in, kernel_size, kernel_size)


def mode_n_unfold(t, mode: int) -> np.ndarray:
    """Mode-n unfolding (1-based mode) into a dims[n] x prod(rest) matrix.

    Columns run over the remaining axes in ascending order, row-major, so the
    unfolding is exactly invertible by :func:`mode_n_refold`.
    """
    t = np.asarray(t, dtype=np.float64)
    if not 1 <= mode <= t.ndim:
        raise ShapeError(f"mode {mode} invalid for a {t.ndim}-D tensor")
    return np.moveaxis(t, mode - 1, 0).reshape(t.shape[mode - 1], -1).copy()


def mode_n_refold(m, mode: int, dims) -> np.ndarray:
    """Inverse of :func:`mode_n_unfold` for a tensor of shape ``dims``."""
    m = np.asarray(m, dtype=np.float64)
    dims = tuple(int(d) for d in dims)
    if not 1 <= mode <= len(dims):
        raise ShapeError(f"mode {mode} invalid for a {len(dims)}-D tensor")
    rest = dims[: mode - 1] + dims[mode:]
    if m.shape != (dims[mode - 1], int(np.prod(rest))):
        raise ShapeError(f"matrix shape {m.shape} does not refold into {dims}")
    return np.moveaxis(m.reshape((dims[mode - 1],) + rest), 0, mode - 1).copy()


def mean_activation_map(f: FeatureTensor) -> np.ndarray:
    """Channel-mean activation map, shape (h, w)."""
    return f.f.mean(axis=0)


def conv_output_dims(h: int, w: int, kernel_size: int, stride: int, padding: int):
    h_out = (h + 2 * padding - kernel_size) // stride + 1
    w_out = (w + 2 * padding - kernel_size) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(
            f"kernel {kernel_size} with stride {stride}, padding {padding} "
            f"yields empty output for a {h}x{w} input"
        )
    return h_out, w_out


def conv_input_dims(h_out: int, w_out: int, kernel_size: int, stride: int, padding: int):
    """Smallest input dims that produce the given output dims."""
    return (
        (h_out - 1) * stride + kernel_size - 2 * padding,
        (w_out - 1) * stride + kernel_size - 2 * padding,
    )


def im2col(x, kernel_size: int, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Patch matrix of a (c_in, h, w) input: shape (c_in * k * k, h_out * w_out).

    Row ordering matches the filter flattening of :func:`reshape_to_matrix`,
    so ``weight_matrix @ im2col(x, ...)`` is the convolution.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"input must be 3-D (c_in, h, w), got {x.ndim}-D")
    c_in, h, w = x.shape
    k = kernel_size
    h_out, w_out = conv_output_dims(h, w, k, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    col = np.empty((c_in, k, k, h_out, w_out), dtype=np.float64)
    for a in range(k):
        for b in range(k):
            col[:, a, b] = x[:, a : a + stride * h_out : stride, b : b + stride * w_out : stride]
    return col.reshape(c_in * k * k, h_out * w_out)


def conv2d_forward(x, w: WeightTensor) -> np.ndarray:
    """Reference 2-D convolution (cross-correlation) with per-channel bias.

    x: (c_in, h, w) -> (c_out, h_out, w_out).
    """
    x = as_float_array(x, "input")
    if x.ndim != 3:
        raise ShapeError(f"input must be 3-D (c_in, h, w), got {x.ndim}-D")
    if x.shape[0] != w.c_in:
        raise ShapeError(f"input has {x.shape[0]} channels, layer expects {w.c_in}")
    h_out, w_out = conv_output_dims(
        x.shape[1], x.shape[2], w.kernel_size, w.stride, w.padding
    )
    col = im2col(x, w.kernel_size, w.stride, w.padding)
    out = reshape_to_matrix(w) @ col
    return out.reshape(w.c_out, h_out, w_out) + w.bias[:, None, None]
