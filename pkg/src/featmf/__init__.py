"""Feature-based matrix factorization trained by coordinate descent.

The model scores a query/target pair as ``(P X_i) . (Q Z_j)`` where ``X_i`` and
``Z_j`` are sparse feature vectors.  Trainers: ``naive_cd_epoch`` (reference),
``efficient_cd_epoch`` (statistic-cached), ``pl2m_epoch`` (block-parallel) and
``hogwild_epoch`` (lock-free SGD baseline).
"""
from .cd import EpochReport, RowStatistics, compute_row_statistics, efficient_cd_epoch, naive_cd_epoch
from .hogwild import SgdConfig, hogwild_epoch, sgd_pair_update
from .loss import (
    Hyperparameters,
    LossKind,
    curvature_bound,
    elastic_net_penalty,
    loss_gradient,
    loss_value,
    threshold,
)
from .metrics import (
    RankedQueryResult,
    average_precision_at_k,
    map_at_k,
    precision_at_k,
    rank_queries,
    rmse,
)
from .model import (
    FactorModel,
    LatentState,
    apply_row_delta,
    compute_latents,
    init_model,
    load_model,
    objective,
    predict_pair,
    refresh_state,
    regularized_objective,
    save_model,
)
from .parallel import conflict_weights, parallel_block_update, pl2m_epoch, schedule_partition, shrinkage_eta
from .sparse import (
    DataError,
    FeatureMatrix,
    ObservationSet,
    ParseError,
    from_triplets,
    identity_features,
    load_feature_file,
    load_observations,
)
from .synthetic import SyntheticSpec, generate
from .train import Trainer

__version__ = "0.1.0"
