"""Structural feature extraction and feature-driven generation for sparse tensors."""

from .errors import *  # noqa: F401,F403
from .extraction import (
    MethodChoice,
    build_counts_group,
    build_counts_hash,
    build_counts_hybrid,
    build_counts_sort,
    decision_metric,
    extract,
    select_top3_modes,
)
from .features import (
    ALL_MODES,
    ONLY_3_MODE,
    FeatureSet,
    GlobalFeatures,
    KindStats,
    compare,
    compute_global,
    compute_kind_stats,
    deserialize,
    feature_count,
    serialize,
)
from .generator import (
    DerivedParams,
    GeneratorSpec,
    derive_fiber_params,
    derive_slice_params,
    generate,
    generate_with_report,
    slice_indices,
    spec_from_features,
)
from .rng import DistributeResult, RngStream, box_muller, distribute, lognormal_params, rand_inds
from .tensor import (
    CooTensor,
    CountArrays,
    ModeOrder,
    load_frostt,
    permute,
    reference_extract,
    sort_by_mode_order,
    write_frostt,
)

__version__ = "0.1.0"
