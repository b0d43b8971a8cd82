"""Imbalance-aware dense mesh-contact learning toolkit."""

from .dataset import (
    ContactDataset,
    ContactSample,
    ManifestError,
    SyntheticConfig,
    compute_statistics,
    generate_synthetic,
    heatmap_csv,
    load_manifest,
    save_manifest,
)
from .labeling import (
    PROFILES,
    ThresholdProfile,
    TriangleBVH,
    brute_force_surface_distance,
    closest_point_on_triangle,
    closest_surface_distance,
    label_contacts,
)
from .losses import (
    ClassBalanceConfig,
    LossReport,
    LossWeights,
    bce,
    cb_loss,
    cb_weight,
    focal_loss,
    regularization_loss,
    smoothness_loss,
    total_loss,
    vcb_loss,
)
from .mesh import (
    LevelRegressor,
    MeshError,
    MeshTopology,
    ProxyMesh,
    build_level_regressors,
    build_topology,
    load_obj,
    make_proxy_mesh,
    project_levels,
    save_obj,
)
from .sampling import (
    SamplingPlan,
    assign_bins,
    build_plan,
    compute_bin_edges,
    contact_balance_score,
    contact_balance_scores,
    plan_for_dataset,
    stratified_resample,
    uniform_plan,
)
from .training import (
    ContactHead,
    EvalReport,
    TrainConfig,
    TrainingDivergedError,
    Variant,
    evaluate,
    load_head,
    make_head,
    predict,
    predict_batch,
    run_ablation,
    save_head,
    split_dataset,
    train,
)

__version__ = "0.1.0"
