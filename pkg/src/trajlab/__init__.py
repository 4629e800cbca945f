"""trajlab: a diffusion-trajectory laboratory over analytic oracles.

Library surface for hybrid DDIM / multistep-ODE timestep scheduling,
dual-trajectory alignment with adaptive mixing, per-step null-embedding
optimization, and attention-map gating, plus an experiment pipeline and
CLI with reproducible CSV/SVG outputs.
"""

from .align import (
    AlignedPair,
    MergeMode,
    MixingState,
    adaptive_mix_step,
    align_inversion,
    alignment_loss,
    hard_merge,
    lambda_update,
)
from .errors import (
    DegenerateScheduleError,
    DimensionMismatchError,
    InvalidRangeError,
    NonMonotoneSpliceError,
    OrderingError,
    PlanMismatchError,
    UnknownLayerError,
    ZeroRowError,
    ZeroVectorError,
)
from .gating import (
    Block,
    GatingConfig,
    LayerRule,
    OverlapRule,
    RegionWeights,
    SpatialMask,
    apply_layer_policy,
    compute_region_weights,
    default_layer_policy,
    fuse_self_attention,
    latent_blend,
    load_mask,
    replace_cross_attention,
    resample_mask,
)
from .metrics import StabilityReport, cosine_sim, psnr, stability_report
from .nulltext import (
    CfgPredictor,
    EmbeddingSchedule,
    OptimizerSettings,
    ReconTargets,
    load_embedding_schedule,
    optimize_null_embeddings,
    reconstruct_with_null,
    save_embedding_schedule,
    targets_from_aligned,
)
from .pipeline import (
    ExperimentConfig,
    PipelineResult,
    PipelineStageError,
    bench_solver,
    demo_config,
    run_parallel_batch,
    run_pipeline,
    sweep_dpm_range,
    sweep_lambda,
    sweep_overlap_weight,
)
from .predictor import (
    GaussianOracle,
    GaussianOracleConfig,
    NoisePredictor,
    finite_diff_embedding_grad,
    gaussian_oracle_eps,
    predict_x0,
)
from .sampler import (
    Direction,
    Dpm2mState,
    StepRecord,
    Trajectory,
    ddim_invert_step,
    ddim_step,
    dpm2m_step,
    hybrid_step,
    load_trajectory,
    run_trajectory,
    save_trajectory,
)
from .schedule import (
    GridKind,
    HybridPlan,
    IndexConvention,
    NoiseSchedule,
    SolverTag,
    TimestepGrid,
    build_noise_schedule,
    ddim_grid,
    dpm_grid,
    fragmented_plan,
    hybrid_grid,
    uniform_plan,
)
from .toymodel import AttentiveToyPredictor, ToyAttentionModel

__version__ = "0.1.0"
