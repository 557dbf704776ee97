"""Cost accounting (parameters, MACs, latency) and classification statistics.

FLOPs are counted in multiply-accumulate units: one MAC = 1. Bias additions
are excluded from both parameter and MAC counts, so an uncompressed layer
scores exactly c_out*c_in*k*k parameters.
"""

import time
from dataclasses import dataclass

import numpy as np

from .compress import CompressedLayer, tucker2_params
from .errors import DataError, ParameterError, ShapeError
from .tensors import WeightTensor


def original_params(c_out: int, c_in: int, kernel_size: int) -> int:
    return c_out * c_in * kernel_size * kernel_size


def compressed_params(layer: CompressedLayer) -> int:
    """Stored parameter count of one compressed layer (bias excluded)."""
    d = layer.c_in * layer.kernel_size * layer.kernel_size
    if layer.method in ("hierarchical", "global-svd"):
        return sum(
            c.rank * (c.channel_indices.size + d) for c in layer.clusters
        )
    if layer.method == "tucker2":
        t = layer.tucker
        return tucker2_params(
            layer.c_out, layer.c_in, layer.kernel_size, t.r_out, t.r_in
        )
    return original_params(layer.c_out, layer.c_in, layer.kernel_size)


def original_flops(c_out: int, c_in: int, kernel_size: int, h_out: int, w_out: int) -> int:
    return h_out * w_out * c_out * c_in * kernel_size * kernel_size


def compressed_flops(layer: CompressedLayer, h_out: int, w_out: int) -> int:
    """MAC count of the factored forward pass at the given output dims."""
    positions = h_out * w_out
    d = layer.c_in * layer.kernel_size * layer.kernel_size
    if layer.method in ("hierarchical", "global-svd"):
        per_position = sum(
            c.rank * d + c.channel_indices.size * c.rank for c in layer.clusters
        )
        return positions * per_position
    if layer.method == "tucker2":
        t = layer.tucker
        return positions * tucker2_params(
            layer.c_out, layer.c_in, layer.kernel_size, t.r_out, t.r_in
        )
    return original_flops(layer.c_out, layer.c_in, layer.kernel_size, h_out, w_out)


@dataclass(frozen=True)
class LayerCost:
    name: str
    p_orig: int
    p_comp: int
    cr_layer: float
    delta_p_pct: float
    flops_orig: int
    flops_comp: int
    flops_ratio: float
    delta_flops_pct: float

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class CostReport:
    """Model-level totals plus the per-layer breakdown."""

    p_orig: int
    p_comp: int
    cr_model: float
    delta_p_pct: float
    flops_orig: int
    flops_comp: int
    flops_ratio: float
    delta_flops_pct: float
    layers: tuple
    t_orig_ms: float = None
    t_comp_ms: float = None
    speedup: float = None
    delta_t_pct: float = None

    def to_dict(self):
        out = dict(self.__dict__)
        out["layers"] = [layer.to_dict() for layer in self.layers]
        return out


def cost_report(
    original,
    compressed,
    output_dims,
    latencies=None,
    names=None,
) -> CostReport:
    """Tally parameters and MACs for aligned original/compressed layer lists.

    output_dims gives (h_out, w_out) per layer. Model-level ratios divide the
    summed counts, not the mean of per-layer ratios.
    """
    original = list(original)
    compressed = list(compressed)
    output_dims = list(output_dims)
    if not original:
        raise ParameterError("layer lists must be non-empty")
    if len(original) != len(compressed) or len(original) != len(output_dims):
        raise ParameterError("layer lists must be aligned")
    names = list(names) if names else [f"layer{i}" for i in range(len(original))]

    layers = []
    for i, (orig, comp, dims) in enumerate(zip(original, compressed, output_dims)):
        if isinstance(orig, WeightTensor):
            c_out, c_in, k = orig.c_out, orig.c_in, orig.kernel_size
        else:
            c_out, c_in, k = orig
        if (comp.c_out, comp.c_in, comp.kernel_size) != (c_out, c_in, k):
            raise ShapeError(f"layer {i} dims differ between original and compressed")
        h_out, w_out = dims
        p_o = original_params(c_out, c_in, k)
        p_c = compressed_params(comp)
        f_o = original_flops(c_out, c_in, k, h_out, w_out)
        f_c = compressed_flops(comp, h_out, w_out)
        layers.append(
            LayerCost(
                name=names[i],
                p_orig=p_o,
                p_comp=p_c,
                cr_layer=p_o / p_c,
                delta_p_pct=(1.0 - p_c / p_o) * 100.0,
                flops_orig=f_o,
                flops_comp=f_c,
                flops_ratio=f_o / f_c,
                delta_flops_pct=(1.0 - f_c / f_o) * 100.0,
            )
        )

    p_o = sum(layer.p_orig for layer in layers)
    p_c = sum(layer.p_comp for layer in layers)
    f_o = sum(layer.flops_orig for layer in layers)
    f_c = sum(layer.flops_comp for layer in layers)
    t_orig = t_comp = speedup = delta_t = None
    if latencies is not None:
        t_orig, t_comp = float(latencies[0]), float(latencies[1])
        speedup = t_orig / t_comp
        delta_t = (1.0 - t_comp / t_orig) * 100.0
    return CostReport(
        p_orig=p_o,
        p_comp=p_c,
        cr_model=p_o / p_c,
        delta_p_pct=(1.0 - p_c / p_o) * 100.0,
        flops_orig=f_o,
        flops_comp=f_c,
        flops_ratio=f_o / f_c,
        delta_flops_pct=(1.0 - f_c / f_o) * 100.0,
        layers=tuple(layers),
        t_orig_ms=t_orig,
        t_comp_ms=t_comp,
        speedup=speedup,
        delta_t_pct=delta_t,
    )


def measure_latency(run_original, run_compressed, warmup: int = 5, trials: int = 30):
    """Median wall-clock milliseconds per call for both runners, plus speedup."""
    if trials < 1:
        raise ParameterError(f"trials must be at least 1, got {trials}")

    def timed(fn):
        for _ in range(warmup):
            fn()
        samples = []
        for _ in range(trials):
            start = time.perf_counter()
            fn()
            samples.append((time.perf_counter() - start) * 1000.0)
        return float(np.median(samples))

    t_orig = timed(run_original)
    t_comp = timed(run_compressed)
    return t_orig, t_comp, t_orig / t_comp


@dataclass(frozen=True)
class PredictionSet:
    """(true, predicted) label pairs with zero-based labels below c_cls."""

    pairs: np.ndarray
    c_cls: int

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64)
        if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] == 0:
            raise ShapeError("pairs must be a non-empty (n, 2) array")
        if self.c_cls < 1:
            raise ParameterError(f"class count must be positive, got {self.c_cls}")
        if pairs.min() < 0 or pairs.max() >= self.c_cls:
            raise DataError(
                f"labels must lie in 0..{self.c_cls - 1}, "
                f"found range {pairs.min()}..{pairs.max()}"
            )
        object.__setattr__(self, "pairs", pairs)

    @property
    def n(self):
        return self.pairs.shape[0]

    def resample(self, indices) -> "PredictionSet":
        return PredictionSet(pairs=self.pairs[np.asarray(indices)], c_cls=self.c_cls)


@dataclass(frozen=True)
class ClassificationReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    degenerate: np.ndarray

    def to_dict(self):
        out = {
            "accuracy": self.accuracy,
            "per_class": [
                {
                    "class": c,
                    "precision": float(self.precision[c]),
                    "recall": float(self.recall[c]),
                    "f1": float(self.f1[c]),
                    "support": int(self.support[c]),
                    "degenerate": bool(self.degenerate[c]),
                }
                for c in range(len(self.precision))
            ],
        }
        for name in (
            "macro_precision",
            "macro_recall",
            "macro_f1",
            "weighted_precision",
            "weighted_recall",
            "weighted_f1",
        ):
            out[name] = getattr(self, name)
        return out


def classification_report(p: PredictionSet) -> ClassificationReport:
    """Per-class precision/recall/F1 with macro and support-weighted averages.

    Zero-denominator cases score 0 and set the class's degenerate flag.
    """
    true, pred = p.pairs[:, 0], p.pairs[:, 1]
    c = p.c_cls
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (true, pred), 1)
    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    support = confusion.sum(axis=1)

    degenerate = np.zeros(c, dtype=bool)
    precision = np.zeros(c)
    recall = np.zeros(c)
    f1 = np.zeros(c)
    for i in range(c):
        if tp[i] + fp[i] > 0:
            precision[i] = tp[i] / (tp[i] + fp[i])
        else:
            degenerate[i] = True
        if tp[i] + fn[i] > 0:
            recall[i] = tp[i] / (tp[i] + fn[i])
        else:
            degenerate[i] = True
        if precision[i] + recall[i] > 0:
            f1[i] = 2 * precision[i] * recall[i] / (precision[i] + recall[i])
        else:
            degenerate[i] = True

    weights = support / p.n
    return ClassificationReport(
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        accuracy=float(tp.sum() / p.n),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        weighted_precision=float(precision @ weights),
        weighted_recall=float(recall @ weights),
        weighted_f1=float(f1 @ weights),
        degenerate=degenerate,
    )


METRIC_SELECTORS = {
    "accuracy": lambda p: classification_report(p).accuracy,
    "macro_f1": lambda p: classification_report(p).macro_f1,
    "weighted_f1": lambda p: classification_report(p).weighted_f1,
    "macro_precision": lambda p: classification_report(p).macro_precision,
    "macro_recall": lambda p: classification_report(p).macro_recall,
}


@dataclass(frozen=True)
class BootstrapResult:
    b: int
    seed: int
    theta_hat: float
    bar_theta: float
    se: float
    replicates: tuple = None

    def to_dict(self):
        out = {
            "B": self.b,
            "seed": self.seed,
            "theta_hat": self.theta_hat,
            "bar_theta": self.bar_theta,
            "se": self.se,
        }
        return out


def bootstrap_se(
    p: PredictionSet, metric="accuracy", b: int = 1000, seed: int = 0, keep_replicates=False
) -> BootstrapResult:
    """Standard error of a metric over b with-replacement resamples.

    Each replicate draws its indices from an independent generator seeded by
    (seed, replicate), so results do not depend on evaluation order. The SE
    uses the 1/(b-1) sample variance.
    """
    if b < 2:
        raise ParameterError(f"need at least 2 replicates, got {b}")
    if callable(metric):
        fn = metric
    else:
        try:
            fn = METRIC_SELECTORS[metric]
        except KeyError:
            raise ParameterError(f"unknown metric {metric!r}") from None

    theta_hat = float(fn(p))
    replicates = np.empty(b)
    for i in range(b):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, i])))
        idx = rng.integers(0, p.n, size=p.n)
        replicates[i] = fn(p.resample(idx))
    return BootstrapResult(
        b=b,
        seed=seed,
        theta_hat=theta_hat,
        bar_theta=float(replicates.mean()),
        se=float(replicates.std(ddof=1)),
        replicates=tuple(replicates) if keep_replicates else None,
    )


def format_percent(mean: float, se: float) -> str:
    """Render a proportion and its SE as percentage text, e.g. '87.76 ± 1.52'."""
    return f"{mean * 100.0:.2f} ± {se * 100.0:.2f}"
