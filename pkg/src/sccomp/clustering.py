"""Superpixel segmentation, K-means, and the spatial/channel cluster hierarchy.

The segmentation runs on the single-channel mean activation map. Regions are
grown by a SLIC-style local K-means whose distance mixes intensity and pixel
distance, then a connectivity pass absorbs stray fragments so every region is
4-connected. All randomness flows through explicitly seeded PCG64 generators.
"""

import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError
from .tensors import FeatureTensor, mean_activation_map


@dataclass(frozen=True)
class SlicConfig:
    """Target region count plus the SLIC iteration/compactness knobs."""

    s: int
    iterations: int = 10
    compactness: float = 10.0

    def __post_init__(self):
        if self.s < 1:
            raise ParameterError(f"region count must be at least 1, got {self.s}")
        if self.iterations < 1:
            raise ParameterError(f"iterations must be at least 1, got {self.iterations}")
        if self.compactness <= 0:
            raise ParameterError(f"compactness must be positive, got {self.compactness}")


@dataclass(frozen=True)
class RegionLabeling:
    """Pixel-to-region map with labels 0..s_actual-1, each region 4-connected."""

    labels: np.ndarray
    s_actual: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 2:
            raise ShapeError(f"label map must be 2-D, got {labels.ndim}-D")
        present = np.unique(labels)
        if present.size != self.s_actual or present[0] != 0 or present[-1] != self.s_actual - 1:
            raise ShapeError("labels must cover exactly 0..s_actual-1")
        _check_connected(labels, self.s_actual)
        object.__setattr__(self, "labels", labels)

    @property
    def grid_shape(self):
        return self.labels.shape

    def region_pixels(self, s: int) -> np.ndarray:
        """(n_s, 2) array of (row, col) pixel coordinates of region s."""
        return np.argwhere(self.labels == s)

    def region_sizes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.s_actual)


def _check_connected(labels, s_actual):
    h, w = labels.shape
    seen = np.zeros((h, w), dtype=bool)
    components = np.zeros(s_actual, dtype=np.int64)
    for i in range(h):
        for j in range(w):
            if seen[i, j]:
                continue
            lab = labels[i, j]
            components[lab] += 1
            if components[lab] > 1:
                raise ShapeError(f"region {lab} is not 4-connected")
            queue = deque([(i, j)])
            seen[i, j] = True
            while queue:
                a, b = queue.popleft()
                for c, d in ((a - 1, b), (a + 1, b), (a, b - 1), (a, b + 1)):
                    if 0 <= c < h and 0 <= d < w and not seen[c, d] and labels[c, d] == lab:
                        seen[c, d] = True
                        queue.append((c, d))


def _grid_centers(h, w, s):
    # Roughly sqrt(S) rows of centers, spaced so each owns an equal tile.
    g = np.sqrt(h * w / s)
    rows = min(h, max(1, int(round(h / g))))
    cols = min(w, max(1, int(round(w / g))))
    centers = []
    for a in range(rows):
        for b in range(cols):
            centers.append(((2 * a + 1) * h / (2 * rows), (2 * b + 1) * w / (2 * cols)))
    return np.array(centers, dtype=np.float64), g


def _absorb_stray_components(labels):
    # Keep each label's largest 4-connected component (first in row-major order
    # on ties); merge every other fragment into its most frequent outside
    # neighbor label, smallest label on ties.
    h, w = labels.shape
    comp = -np.ones((h, w), dtype=np.int64)
    comps = []
    for i in range(h):
        for j in range(w):
            if comp[i, j] >= 0:
                continue
            cid = len(comps)
            lab = labels[i, j]
            pixels = [(i, j)]
            comp[i, j] = cid
            queue = deque([(i, j)])
            while queue:
                a, b = queue.popleft()
                for c, d in ((a - 1, b), (a + 1, b), (a, b - 1), (a, b + 1)):
                    if 0 <= c < h and 0 <= d < w and comp[c, d] < 0 and labels[c, d] == lab:
                        comp[c, d] = cid
                        pixels.append((c, d))
                        queue.append((c, d))
            comps.append((lab, pixels))

    keeper = {}
    for cid, (lab, pixels) in enumerate(comps):
        if lab not in keeper or len(pixels) > len(comps[keeper[lab]][1]):
            keeper[lab] = cid
    for cid, (lab, pixels) in enumerate(comps):
        if cid == keeper[lab]:
            continue
        votes = {}
        for a, b in pixels:
            for c, d in ((a - 1, b), (a + 1, b), (a, b - 1), (a, b + 1)):
                if 0 <= c < h and 0 <= d < w and comp[c, d] != cid:
                    neigh = labels[c, d]
                    votes[neigh] = votes.get(neigh, 0) + 1
        target = min(votes, key=lambda lb: (-votes[lb], lb))
        for a, b in pixels:
            labels[a, b] = target
            comp[a, b] = keeper[target] if target in keeper else -2
    return labels


def slic_segment(intensity, cfg: SlicConfig) -> RegionLabeling:
    """Segment an intensity map into ~cfg.s compact 4-connected regions."""
    intensity = np.asarray(intensity, dtype=np.float64)
    if intensity.ndim != 2:
        raise ShapeError(f"intensity map must be 2-D, got {intensity.ndim}-D")
    h, w = intensity.shape
    if cfg.s > h * w:
        raise ParameterError(f"cannot form {cfg.s} regions from {h * w} pixels")

    centers, g = _grid_centers(h, w, cfg.s)
    center_val = np.array(
        [intensity[min(h - 1, int(ci)), min(w - 1, int(cj))] for ci, cj in centers]
    )
    spatial_weight = cfg.compactness / g
    radius = int(np.ceil(g))
    ii, jj = np.indices((h, w))

    labels = np.zeros((h, w), dtype=np.int64)
    for _ in range(cfg.iterations):
        best = np.full((h, w), np.inf)
        labels.fill(-1)
        for c, (ci, cj) in enumerate(centers):
            lo_i = max(0, int(np.floor(ci)) - radius)
            hi_i = min(h, int(np.ceil(ci)) + radius + 1)
            lo_j = max(0, int(np.floor(cj)) - radius)
            hi_j = min(w, int(np.ceil(cj)) + radius + 1)
            window = np.s_[lo_i:hi_i, lo_j:hi_j]
            spatial = np.hypot(ii[window] - ci, jj[window] - cj)
            dist = np.abs(intensity[window] - center_val[c]) + spatial_weight * spatial
            better = dist < best[window]
            best[window][better] = dist[better]
            labels[window][better] = c
        # Pixels outside every search window fall back to the nearest center.
        miss = labels < 0
        if np.any(miss):
            pts = np.argwhere(miss)
            d = np.hypot(
                pts[:, 0][:, None] - centers[:, 0], pts[:, 1][:, None] - centers[:, 1]
            )
            labels[miss] = np.argmin(d, axis=1)
        for c in range(len(centers)):
            mask = labels == c
            if np.any(mask):
                centers[c] = (ii[mask].mean(), jj[mask].mean())
                center_val[c] = intensity[mask].mean()

    labels = _absorb_stray_components(labels)
    # Compress surviving labels to a dense 0..S_actual-1 range.
    present = np.unique(labels)
    remap = np.zeros(present[-1] + 1, dtype=np.int64)
    remap[present] = np.arange(present.size)
    return RegionLabeling(labels=remap[labels], s_actual=present.size)


def region_descriptors(f: FeatureTensor, lab: RegionLabeling) -> np.ndarray:
    """Per-region mean channel activations, one column per region: (c_out, s)."""
    if lab.grid_shape != f.grid_shape:
        raise ShapeError(
            f"label map {lab.grid_shape} does not match feature grid {f.grid_shape}"
        )
    flat = f.f.reshape(f.c_out, -1)
    labels = lab.labels.ravel()
    out = np.zeros((f.c_out, lab.s_actual), dtype=np.float64)
    counts = np.bincount(labels, minlength=lab.s_actual)
    for c in range(f.c_out):
        out[c] = np.bincount(labels, weights=flat[c], minlength=lab.s_actual)
    return out / counts


@dataclass(frozen=True)
class KMeansConfig:
    """Cluster count, iteration cap, seed, and relative-improvement tolerance."""

    k: int
    max_iterations: int = 100
    seed: int = 0
    tol: float = 1e-6

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError(f"k must be at least 1, got {self.k}")
        if self.max_iterations < 1:
            raise ParameterError(
                f"max_iterations must be at least 1, got {self.max_iterations}"
            )
        if self.tol < 0:
            raise ParameterError(f"tol must be non-negative, got {self.tol}")


@dataclass(frozen=True)
class KMeansResult:
    """Assignments into 0..k-1, the centroids, and the objective trace."""

    assignments: np.ndarray
    centroids: np.ndarray
    objective: float
    history: tuple
    clamped: bool = False

    @property
    def k(self):
        return self.centroids.shape[0]

    def clusters(self):
        """Member index arrays per cluster, in cluster order."""
        return [np.flatnonzero(self.assignments == c) for c in range(self.k)]


def _kmeanspp_init(points, k, rng):
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[rng.integers(n)]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = int(rng.integers(n))
        centroids[c] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centroids[c]) ** 2, axis=1))
    return centroids


def kmeans(points, cfg: KMeansConfig) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding; deterministic given the seed."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise ShapeError("points must be a non-empty (n, dim) array")
    n = points.shape[0]
    k = cfg.k
    clamped = False
    if k > n:
        warnings.warn(f"k={k} exceeds {n} points; clamped to {n}", stacklevel=2)
        k, clamped = n, True

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    centroids = _kmeanspp_init(points, k, rng)
    assignments = np.zeros(n, dtype=np.int64)
    history = []
    prev = np.inf
    for _ in range(cfg.max_iterations):
        d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        assignments = np.argmin(d2, axis=1)
        point_d2 = d2[np.arange(n), assignments]
        objective = float(point_d2.sum())
        history.append(objective)

        # Re-seed empty clusters with the point currently farthest from its
        # centroid, each grab excluded from the next empty cluster's search.
        counts = np.bincount(assignments, minlength=k)
        if np.any(counts == 0):
            grab = point_d2.copy()
            for c in np.flatnonzero(counts == 0):
                far = int(np.argmax(grab))
                centroids[c] = points[far]
                assignments[far] = c
                grab[far] = -1.0
            counts = np.bincount(assignments, minlength=k)

        for c in range(k):
            if counts[c]:
                centroids[c] = points[assignments == c].mean(axis=0)

        if objective == 0.0 or (
            np.isfinite(prev) and prev - objective <= cfg.tol * max(prev, 1e-300)
        ):
            break
        prev = objective

    return KMeansResult(
        assignments=assignments,
        centroids=centroids,
        objective=history[-1],
        history=tuple(history),
        clamped=clamped,
    )


@dataclass(frozen=True)
class ClusterModel:
    """Two-level hierarchy: spatial groups of regions, channel groups per k.

    spatial[k] holds region ids of group k; channels[k][l] holds the channel
    ids of cluster (k, l). Both levels partition their index sets; channel
    clusters may be empty (flagged via has_empty_channel_clusters).
    """

    labeling: RegionLabeling
    spatial: tuple
    channels: tuple
    pixel_supports: tuple = field(repr=False, default=())

    def __post_init__(self):
        all_regions = np.sort(np.concatenate([np.asarray(g) for g in self.spatial]))
        if not np.array_equal(all_regions, np.arange(self.labeling.s_actual)):
            raise ShapeError("spatial groups must partition the region ids")
        for per_k in self.channels:
            sizes = [len(c) for c in per_k]
            members = np.sort(np.concatenate([np.asarray(c) for c in per_k])) if sizes else []
            c_out = sum(sizes)
            if not np.array_equal(members, np.arange(c_out)):
                raise ShapeError("channel clusters must partition the channel ids")

    @property
    def k_spatial(self):
        return len(self.spatial)

    @property
    def has_empty_channel_clusters(self):
        return any(len(c) == 0 for per_k in self.channels for c in per_k)


def spatial_support_mask(lab: RegionLabeling, region_ids) -> np.ndarray:
    """Boolean pixel mask of the union of the given regions."""
    return np.isin(lab.labels, np.asarray(region_ids))


def derived_seed(seed: int, *tags: int) -> int:
    """Stable 64-bit sub-seed for the (seed, tags...) stream."""
    state = np.random.SeedSequence([int(seed)] + [int(t) for t in tags]).generate_state(2)
    return int(state[0]) << 32 | int(state[1])


def build_cluster_model(
    f: FeatureTensor,
    slic_cfg: SlicConfig,
    k_spatial: int,
    l_channels,
    seed: int = 0,
    kmeans_iterations: int = 100,
    tol: float = 1e-6,
) -> ClusterModel:
    """Cluster regions by their activation descriptors, then channels per group.

    l_channels is a single count applied to every spatial cluster, or a
    sequence giving one count per cluster.
    """
    lab = slic_segment(mean_activation_map(f), slic_cfg)
    descriptors = region_descriptors(f, lab)

    spatial_res = kmeans(
        descriptors.T,
        KMeansConfig(
            k=k_spatial,
            max_iterations=kmeans_iterations,
            seed=derived_seed(seed, 0),
            tol=tol,
        ),
    )
    spatial = tuple(spatial_res.clusters())

    if np.isscalar(l_channels):
        per_k_l = [int(l_channels)] * len(spatial)
    else:
        per_k_l = [int(x) for x in l_channels]
        if len(per_k_l) != len(spatial):
            raise ParameterError(
                f"need one channel cluster count per spatial cluster "
                f"({len(spatial)}), got {len(per_k_l)}"
            )

    flat = f.f.reshape(f.c_out, -1)
    channels = []
    supports = []
    for k, group in enumerate(spatial):
        mask = spatial_support_mask(lab, group)
        supports.append(mask)
        rows = flat[:, mask.ravel()]
        res = kmeans(
            rows,
            KMeansConfig(
                k=per_k_l[k],
                max_iterations=kmeans_iterations,
                seed=derived_seed(seed, 1, k),
                tol=tol,
            ),
        )
        channels.append(tuple(res.clusters()))

    return ClusterModel(
        labeling=lab,
        spatial=spatial,
        channels=tuple(channels),
        pixel_supports=tuple(supports),
    )
