"""Layer compression: clustered low-rank SVD, global SVD, Tucker-2, and the
matching reconstruction / factored forward passes.

A compressed layer always carries enough to rebuild dense weights exactly as
deployment would see them, so verification can compare the factored forward
against an ordinary convolution of the reconstruction.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .clustering import SlicConfig, build_cluster_model
from .errors import ParameterError, ShapeError
from .linalg import (
    RankPolicy,
    SvdFactors,
    TuckerFactors,
    select_rank,
    svd_decompose,
    truncate,
    tucker2_decompose,
    tucker2_reconstruct,
)
from .tensors import (
    FeatureTensor,
    WeightTensor,
    as_float_array,
    im2col,
    kernel_from_row,
    reshape_to_matrix,
)

METHODS = ("hierarchical", "global-svd", "tucker2", "dense")


@dataclass(frozen=True)
class ClusterFactors:
    """Truncated SVD of the stacked flattened kernels of one channel cluster."""

    channel_indices: np.ndarray
    factors: SvdFactors
    spatial_cluster_id: int
    channel_cluster_id: int

    def __post_init__(self):
        idx = np.asarray(self.channel_indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise ShapeError("channel_indices must be a non-empty vector")
        if np.unique(idx).size != idx.size:
            raise ShapeError("channel_indices must be distinct")
        if self.factors.u.shape[0] != idx.size:
            raise ShapeError(
                f"u has {self.factors.u.shape[0]} rows for {idx.size} channels"
            )
        if not 1 <= self.rank <= min(idx.size, self.factors.v.shape[0]):
            raise ShapeError(f"rank {self.rank} out of range for this cluster")
        object.__setattr__(self, "channel_indices", idx)

    @property
    def rank(self):
        return self.factors.rank

    def rows(self) -> np.ndarray:
        """Reconstructed flattened kernel rows, one per channel."""
        return self.factors.reconstruct()


@dataclass(frozen=True)
class CompressedLayer:
    """One conv layer in compressed form, plus the geometry to run it."""

    method: str
    c_out: int
    c_in: int
    kernel_size: int
    stride: int
    padding: int
    bias: np.ndarray
    clusters: tuple = ()
    tucker: TuckerFactors = None
    weights: np.ndarray = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}")
        bias = as_float_array(self.bias, "bias")
        if bias.shape != (self.c_out,):
            raise ShapeError(f"bias length {bias.shape} for {self.c_out} channels")
        object.__setattr__(self, "bias", bias)
        d = self.c_in * self.kernel_size * self.kernel_size
        if self.method in ("hierarchical", "global-svd"):
            if not self.clusters:
                raise ShapeError("factored layer needs at least one cluster")
            covered = np.sort(
                np.concatenate([c.channel_indices for c in self.clusters])
            )
            if not np.array_equal(covered, np.arange(self.c_out)):
                raise ShapeError("cluster channel indices must partition the channels")
            for c in self.clusters:
                if c.factors.v.shape[0] != d:
                    raise ShapeError(
                        f"v has {c.factors.v.shape[0]} rows, expected {d}"
                    )
            if self.method == "global-svd" and len(self.clusters) != 1:
                raise ShapeError("global-svd stores exactly one cluster")
        elif self.method == "tucker2":
            if self.tucker is None:
                raise ShapeError("tucker2 layer needs TuckerFactors")
            t = self.tucker
            if t.u1.shape[0] != self.c_out or t.u2.shape[0] != self.c_in:
                raise ShapeError("tucker factor rows do not match layer channels")
            if t.core.shape[2] != self.kernel_size or t.core.shape[3] != self.kernel_size:
                raise ShapeError("tucker core spatial dims do not match kernel")
        else:
            w = as_float_array(self.weights, "weights")
            if w.shape != (self.c_out, self.c_in, self.kernel_size, self.kernel_size):
                raise ShapeError(f"dense weights have shape {w.shape}")
            object.__setattr__(self, "weights", w)


def channel_owners(f: FeatureTensor, pixel_supports) -> np.ndarray:
    """Assign each channel to the spatial cluster where it is most active.

    Strength of channel c in cluster k is the mean absolute activation over
    the cluster's pixel support; ties go to the lowest cluster id.
    """
    flat = np.abs(f.f.reshape(f.c_out, -1))
    strength = np.stack([flat[:, m.ravel()].mean(axis=1) for m in pixel_supports])
    return np.argmax(strength, axis=0)


def compress_hierarchical(
    w: WeightTensor,
    f: FeatureTensor,
    slic_cfg: SlicConfig,
    k_spatial: int,
    l_channels,
    policy: RankPolicy,
    seed: int = 0,
) -> CompressedLayer:
    """Cluster channels via the spatial/channel hierarchy, then SVD per cluster.

    The hierarchy assigns every channel a full clustering under each spatial
    group; for compression each channel is stored once, under the spatial
    cluster whose support activates it most, so the stored clusters partition
    the channel set. Empty intersections are skipped.
    """
    if f.c_out != w.c_out:
        raise ShapeError(
            f"feature tensor has {f.c_out} channels, layer has {w.c_out}"
        )
    model = build_cluster_model(f, slic_cfg, k_spatial, l_channels, seed)
    owners = channel_owners(f, model.pixel_supports)
    w_mat = reshape_to_matrix(w)

    clusters = []
    for k, per_k in enumerate(model.channels):
        owned = owners == k
        for l, members in enumerate(per_k):
            members = np.asarray(members, dtype=np.int64)
            idx = members[owned[members]] if members.size else members
            if idx.size == 0:
                continue
            factors = svd_decompose(w_mat[idx])
            r = select_rank(factors.sigma, policy)
            clusters.append(
                ClusterFactors(
                    channel_indices=idx,
                    factors=truncate(factors, r),
                    spatial_cluster_id=k,
                    channel_cluster_id=l,
                )
            )
    return CompressedLayer(
        method="hierarchical",
        c_out=w.c_out,
        c_in=w.c_in,
        kernel_size=w.kernel_size,
        stride=w.stride,
        padding=w.padding,
        bias=w.bias.copy(),
        clusters=tuple(clusters),
    )


def compress_global_svd(w: WeightTensor, rank: int) -> CompressedLayer:
    """Truncated SVD of the whole (c_out, c_in*k*k) weight matrix."""
    d = w.c_in * w.kernel_size * w.kernel_size
    if not 1 <= rank <= min(w.c_out, d):
        raise ParameterError(f"rank {rank} out of range 1..{min(w.c_out, d)}")
    factors = truncate(svd_decompose(reshape_to_matrix(w)), rank)
    cluster = ClusterFactors(
        channel_indices=np.arange(w.c_out),
        factors=factors,
        spatial_cluster_id=0,
        channel_cluster_id=0,
    )
    return CompressedLayer(
        method="global-svd",
        c_out=w.c_out,
        c_in=w.c_in,
        kernel_size=w.kernel_size,
        stride=w.stride,
        padding=w.padding,
        bias=w.bias.copy(),
        clusters=(cluster,),
    )


def compress_dense(w: WeightTensor) -> CompressedLayer:
    """Uncompressed passthrough; useful as a cost baseline."""
    return CompressedLayer(
        method="dense",
        c_out=w.c_out,
        c_in=w.c_in,
        kernel_size=w.kernel_size,
        stride=w.stride,
        padding=w.padding,
        bias=w.bias.copy(),
        weights=w.w.copy(),
    )


def rank_for_budget(c_out: int, c_in: int, kernel_size: int, target_params: int) -> int:
    """Rank whose factored parameter count r*(n+d) lands nearest the target.

    Ties break toward the smaller rank. Targets below one rank's worth of
    parameters clamp to 1 with a warning.
    """
    if min(c_out, c_in, kernel_size) < 1:
        raise ParameterError("layer dimensions must be positive")
    if target_params < 1:
        raise ParameterError(f"target must be positive, got {target_params}")
    n = c_out
    d = c_in * kernel_size * kernel_size
    if target_params < n + d:
        warnings.warn(
            f"target {target_params} is below one rank's cost {n + d}; using rank 1",
            stacklevel=2,
        )
        return 1
    r_cap = min(n, d)
    lo = min(max(1, target_params // (n + d)), r_cap)
    hi = min(lo + 1, r_cap)
    if abs(lo * (n + d) - target_params) <= abs(hi * (n + d) - target_params):
        return int(lo)
    return int(hi)


def tucker2_params(c_out: int, c_in: int, kernel_size: int, r_out: int, r_in: int) -> int:
    return c_in * r_in + r_out * r_in * kernel_size * kernel_size + c_out * r_out


def compress_tucker2(w: WeightTensor, target_params=None) -> CompressedLayer:
    """Tucker-2 with ranks chosen so the parameter count lands nearest target.

    target_params=None keeps full ranks (lossless). Ties on the parameter
    distance break toward the smaller reconstruction error.
    """
    if target_params is None:
        ranks = [(w.c_out, w.c_in)]
    else:
        if target_params < 1:
            raise ParameterError(f"target must be positive, got {target_params}")
        floor_params = tucker2_params(w.c_out, w.c_in, w.kernel_size, 1, 1)
        if target_params < floor_params:
            warnings.warn(
                f"target {target_params} is below the minimum {floor_params}; "
                "using ranks (1, 1)",
                stacklevel=2,
            )
        grid = [
            (ro, ri)
            for ro in range(1, w.c_out + 1)
            for ri in range(1, w.c_in + 1)
        ]
        dist = [
            abs(tucker2_params(w.c_out, w.c_in, w.kernel_size, ro, ri) - target_params)
            for ro, ri in grid
        ]
        best = min(dist)
        ranks = [pair for pair, dv in zip(grid, dist) if dv == best]

    best_factors, best_err = None, np.inf
    for ro, ri in ranks:
        factors = tucker2_decompose(w.w, ro, ri)
        err = float(np.linalg.norm(w.w - tucker2_reconstruct(factors)))
        if err < best_err:
            best_factors, best_err = factors, err
    return CompressedLayer(
        method="tucker2",
        c_out=w.c_out,
        c_in=w.c_in,
        kernel_size=w.kernel_size,
        stride=w.stride,
        padding=w.padding,
        bias=w.bias.copy(),
        tucker=best_factors,
    )


def reconstruct_weights(c: CompressedLayer) -> WeightTensor:
    """Expand a compressed layer back to dense kernels; bias copied unchanged."""
    if c.method == "dense":
        w = c.weights.copy()
    elif c.method == "tucker2":
        w = tucker2_reconstruct(c.tucker)
    else:
        w = np.zeros((c.c_out, c.c_in, c.kernel_size, c.kernel_size))
        for cluster in c.clusters:
            rows = cluster.rows()
            for i, ch in enumerate(cluster.channel_indices):
                w[ch] = kernel_from_row(rows[i], c.c_in, c.kernel_size)
    return WeightTensor(w=w, bias=c.bias.copy(), stride=c.stride, padding=c.padding)


def factored_forward(c: CompressedLayer, x) -> np.ndarray:
    """Run the layer in its deployed form: basis conv + 1x1 projection.

    Matches conv2d_forward(x, reconstruct_weights(c)) up to rounding.
    """
    x = as_float_array(x, "input")
    if x.ndim != 3 or x.shape[0] != c.c_in:
        raise ShapeError(
            f"input shape {x.shape} does not match {c.c_in} input channels"
        )
    if c.method == "dense":
        mat = c.weights.reshape(c.c_out, -1)
        col = im2col(x, c.kernel_size, c.stride, c.padding)
        out = mat @ col
    elif c.method == "tucker2":
        t = c.tucker
        reduced = np.tensordot(t.u2.T, x, axes=([1], [0]))
        col = im2col(reduced, c.kernel_size, c.stride, c.padding)
        core_out = t.core.reshape(t.r_out, -1) @ col
        out = t.u1 @ core_out
    else:
        col = im2col(x, c.kernel_size, c.stride, c.padding)
        out = np.zeros((c.c_out, col.shape[1]))
        for cluster in c.clusters:
            basis = cluster.factors.v.T @ col
            proj = (cluster.factors.u * cluster.factors.sigma) @ basis
            out[cluster.channel_indices] = proj
    h, w = x.shape[1], x.shape[2]
    h_out = (h + 2 * c.padding - c.kernel_size) // c.stride + 1
    w_out = (w + 2 * c.padding - c.kernel_size) // c.stride + 1
    return out.reshape(c.c_out, h_out, w_out) + c.bias[:, None, None]
