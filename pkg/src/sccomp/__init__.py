"""Clustered low-rank compression toolkit for convolutional layers."""

from .clustering import (
    ClusterModel,
    KMeansConfig,
    KMeansResult,
    RegionLabeling,
    SlicConfig,
    build_cluster_model,
    kmeans,
    region_descriptors,
    slic_segment,
)
from .compress import (
    ClusterFactors,
    CompressedLayer,
    compress_dense,
    compress_global_svd,
    compress_hierarchical,
    compress_tucker2,
    factored_forward,
    rank_for_budget,
    reconstruct_weights,
)
from .errors import (
    DataError,
    FormatError,
    NumericError,
    ParameterError,
    SccompError,
    ShapeError,
)
from .linalg import (
    RankPolicy,
    SvdFactors,
    TuckerFactors,
    select_rank,
    svd_decompose,
    truncate,
    truncation_error,
    tucker2_decompose,
    tucker2_reconstruct,
)
from .metrics import (
    BootstrapResult,
    ClassificationReport,
    CostReport,
    PredictionSet,
    bootstrap_se,
    classification_report,
    cost_report,
    measure_latency,
)
from .tensors import (
    FeatureTensor,
    WeightTensor,
    conv2d_forward,
    im2col,
    kernel_from_row,
    mode_n_refold,
    mode_n_unfold,
    reshape_to_matrix,
)

__version__ = "0.1.0"
