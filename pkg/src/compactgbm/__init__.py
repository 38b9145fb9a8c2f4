"""Histogram gradient boosting over caller-owned columns, with implicit
merging of keyed side tables and adaptive bin resizing."""

from .binning import (
    BinMapper,
    BinnedColumn,
    adaptive_resize,
    bin_of,
    construct_bins,
    quantize,
    record_split_hit,
)
from .boosting import (
    BoosterConfig,
    MergeSpec,
    Model,
    compute_gradients,
    initial_score,
    predict,
    predict_proba,
    train,
)
from .columnar import (
    Dataset,
    FeatureColumn,
    FootprintReport,
    Session,
    attach_column,
    memory_footprint,
    read_value,
)
from .merge import (
    JoinIndex,
    MergedFeature,
    SideTable,
    build_join_index,
    implicit_histogram,
    materialize_merge,
    register_side_table,
)
from .metrics import auc, cross_validate, kfold_split, rmse
from .persistence import load_model, save_model
from .tree import (
    Histogram,
    SplitInfo,
    Tree,
    build_histogram,
    find_best_split,
    grow_tree,
    histogram_subtraction,
    leaf_weight,
    predict_tree,
)

__version__ = "0.1.0"
