"""End-to-end orchestration: align, disentangle, entangle.

A pipeline run inverts two sources jointly into one shared noise-end
latent, optimizes per-identity null embeddings so each reconstruction
retraces its aligned trajectory, then reconstructs a third path that
copies the first identity while attention gating transplants structure
from both sources. Batch mode runs independent configs concurrently.
"""
from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .align import AlignedPair, MergeMode, align_inversion
from .errors import InvalidRangeError, NonMonotoneSpliceError
from .gating import (
    Block,
    GatingConfig,
    OverlapRule,
    SpatialMask,
    apply_layer_policy,
    compute_region_weights,
    default_layer_policy,
    latent_blend,
    resample_mask,
)
from .metrics import StabilityReport, psnr, stability_report
from .nulltext import (
    CfgPredictor,
    EmbeddingSchedule,
    OptimizerSettings,
    optimize_null_embeddings,
    reconstruct_with_null,
    targets_from_aligned,
)
from .predictor import GaussianOracle, GaussianOracleConfig
from .sampler import (
    EMPTY_DPM_STATE,
    Direction,
    StepRecord,
    Trajectory,
    hybrid_step,
    run_trajectory,
)
from .schedule import (
    HybridPlan,
    IndexConvention,
    NoiseSchedule,
    SolverTag,
    build_noise_schedule,
    fragmented_plan,
    hybrid_grid,
    uniform_plan,
)
from .toymodel import AttentiveToyPredictor, ToyAttentionModel


class PipelineStageError(RuntimeError):
    """Wraps a failure with the pipeline stage it occurred in."""

    def __init__(self, stage: str, original: BaseException):
        self.stage = stage
        self.original = original
        super().__init__(f"[{stage}] {original}")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlanSpec:
    steps: int = 6
    s1: int = 1
    s2: int = 3
    convention: str = IndexConvention.FROM_DATA.value


@dataclass(frozen=True)
class ScheduleSpec:
    train_steps: int = 1000
    beta_start: float = 0.00085
    beta_end: float = 0.012


@dataclass(frozen=True)
class AlignSpec:
    init_lambda: float = 0.04
    eta: float = 0.01
    merge_mode: str = MergeMode.THRESHOLD.value
    merge_delta: float = 0.02


@dataclass(frozen=True)
class NullTextSpec:
    inner_iterations: int = 10
    learning_rate: float = 0.1
    line_search: bool = True
    early_stop: float = 1e-6
    cfg_weight: float = 0.0
    warn_nonconverged: bool = False

    def settings(self) -> OptimizerSettings:
        return OptimizerSettings(
            inner_iterations=self.inner_iterations,
            learning_rate=self.learning_rate,
            early_stop=self.early_stop,
            line_search=self.line_search,
            warn_nonconverged=self.warn_nonconverged,
        )


@dataclass(frozen=True)
class SourceSpec:
    """How the two identities and their data models are synthesized.

    anisotropic_pair: flat latents; the second mean is a random offset
        of the first, both share one per-coordinate sigma pattern drawn
        from sigma_range, and the embedding coupling is the identity.
    grid_scene: latents are H x W grids; the first mean is a centered
        blob ("face"), the second adds a smaller offset blob ("edit"),
        and masks cover the two blobs.
    """

    kind: str = "anisotropic_pair"
    dimension: int = 64
    separation: float = 2.6
    sigma_range: Tuple[float, float] = (0.6, 1.4)
    grid: Tuple[int, int] = (16, 16)
    blob_radius: float = 4.0
    edit_radius: float = 2.0
    edit_amplitude: float = 2.5


@dataclass(frozen=True)
class GatingSpec:
    enabled: bool = False
    w_hat: float = 0.5
    token_face: int = 1
    token_edit: int = 3
    up_256_self: bool = False
    overlap_rule: str = OverlapRule.INTERSECTION.value
    i3_null_mix: float = 0.0  # 0 follows identity 1's nulls, 1 identity 2's
    blend: bool = False


@dataclass(frozen=True)
class ToyAttentionSpec:
    enabled: bool = False
    tokens: int = 8
    self_temp: float = 2.0
    cross_temp: float = 1.0
    refine_strength: float = 1.5
    cross_gain: float = 8.0


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 23
    plan: PlanSpec = field(default_factory=PlanSpec)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    align: AlignSpec = field(default_factory=AlignSpec)
    nulltext: NullTextSpec = field(default_factory=NullTextSpec)
    sources: SourceSpec = field(default_factory=SourceSpec)
    gating: GatingSpec = field(default_factory=GatingSpec)
    toy_attention: ToyAttentionSpec = field(default_factory=ToyAttentionSpec)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "ExperimentConfig":
        def sub(cls, key):
            payload = dict(data.get(key, {}))
            known = {f for f in cls.__dataclass_fields__}
            unknown = set(payload) - known
            if unknown:
                raise InvalidRangeError(f"unknown config keys in '{key}': {sorted(unknown)}")
            for name, value in list(payload.items()):
                if isinstance(value, list):
                    payload[name] = tuple(value)
            return cls(**payload)

        return ExperimentConfig(
            seed=int(data.get("seed", 23)),
            plan=sub(PlanSpec, "plan"),
            schedule=sub(ScheduleSpec, "schedule"),
            align=sub(AlignSpec, "align"),
            nulltext=sub(NullTextSpec, "nulltext"),
            sources=sub(SourceSpec, "sources"),
            gating=sub(GatingSpec, "gating"),
            toy_attention=sub(ToyAttentionSpec, "toy_attention"),
        )

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def demo_config(**overrides) -> ExperimentConfig:
    """The desk-scale operating point used by examples and sweeps.

    Soft coefficient dynamics and a 10-step plan keep the baseline
    round trip comfortably above the 25 dB consistency threshold while
    leaving room for alignment effects to register.
    """
    cfg = ExperimentConfig(
        plan=PlanSpec(steps=10, s1=1, s2=3),
        schedule=ScheduleSpec(train_steps=1000, beta_start=0.0002, beta_end=0.004),
        nulltext=NullTextSpec(inner_iterations=5, early_stop=1e-30),
    )
    return replace(cfg, **overrides) if overrides else cfg


# ---------------------------------------------------------------------------
# Scene synthesis
# ---------------------------------------------------------------------------


def make_blob(grid: Tuple[int, int], center: Tuple[float, float], radius: float, amplitude: float) -> np.ndarray:
    """Gaussian bump on the grid, flattened to a latent vector."""
    h, w = grid
    yy, xx = np.mgrid[0:h, 0:w]
    d2 = (yy - center[0]) ** 2 + (xx - center[1]) ** 2
    return (amplitude * np.exp(-d2 / (2.0 * radius**2))).reshape(-1)


def blob_mask(grid: Tuple[int, int], center: Tuple[float, float], radius: float) -> SpatialMask:
    h, w = grid
    yy, xx = np.mgrid[0:h, 0:w]
    d2 = (yy - center[0]) ** 2 + (xx - center[1]) ** 2
    return SpatialMask((d2 <= radius**2).astype(float))


@dataclass
class Scenario:
    """Materialized sources: oracles, starting latents, masks, tokens."""

    oracle_1: GaussianOracle
    oracle_2: GaussianOracle
    z1_0: np.ndarray
    z2_0: np.ndarray
    cond_1: np.ndarray
    cond_2: np.ndarray
    mask_1: Optional[SpatialMask] = None
    mask_2: Optional[SpatialMask] = None
    face_pattern: Optional[np.ndarray] = None
    edit_pattern: Optional[np.ndarray] = None


def build_scenario(config: ExperimentConfig, schedule: NoiseSchedule) -> Scenario:
    spec = config.sources
    rng = np.random.default_rng(config.seed)
    if spec.kind == "anisotropic_pair":
        d = spec.dimension
        mu1 = rng.normal(size=d)
        mu2 = mu1 + spec.separation * rng.normal(size=d)
        lo, hi = spec.sigma_range
        sigma = lo + (hi - lo) * rng.random(d)
        K = np.eye(d)
        o1 = GaussianOracle(schedule, GaussianOracleConfig(mu=mu1, sigma_diag=sigma, coupling=K))
        o2 = GaussianOracle(schedule, GaussianOracleConfig(mu=mu2, sigma_diag=sigma, coupling=K))
        z1 = mu1 + sigma * rng.normal(size=d)
        z2 = mu2 + sigma * rng.normal(size=d)
        return Scenario(o1, o2, z1, z2, np.zeros(d), np.zeros(d))
    if spec.kind == "grid_scene":
        h, w = spec.grid
        d = h * w
        face_c = (h / 2.0 - 0.5, w / 2.0 - 0.5)
        # the edit sits at the face boundary so part of its mask lies
        # outside the face region (both exclusive zones are non-empty)
        edit_c = (face_c[0] - spec.blob_radius * 1.2, face_c[1])
        face = make_blob(spec.grid, face_c, spec.blob_radius, 3.0)
        edit = make_blob(spec.grid, edit_c, spec.edit_radius, spec.edit_amplitude)
        mu1 = face
        mu2 = face + edit
        sigma = np.full(d, 0.4)
        K = np.eye(d)
        o1 = GaussianOracle(schedule, GaussianOracleConfig(mu=mu1, sigma_diag=sigma, coupling=K))
        o2 = GaussianOracle(schedule, GaussianOracleConfig(mu=mu2, sigma_diag=sigma, coupling=K))
        z1 = mu1 + sigma * rng.normal(size=d)
        z2 = mu2 + sigma * rng.normal(size=d)
        m1 = blob_mask(spec.grid, face_c, spec.blob_radius * 1.3)
        m2 = blob_mask(spec.grid, edit_c, spec.edit_radius * 1.3)
        return Scenario(
            o1, o2, z1, z2, np.zeros(d), np.zeros(d),
            mask_1=m1, mask_2=m2, face_pattern=face, edit_pattern=edit,
        )
    raise InvalidRangeError(f"unknown source kind: {spec.kind!r}")


def _build_toy_model(config: ExperimentConfig, scenario: Scenario) -> ToyAttentionModel:
    spec = config.toy_attention
    grid = config.sources.grid
    d = grid[0] * grid[1]
    rng = np.random.default_rng(config.seed + 1)
    keys = 0.5 * rng.normal(size=(spec.tokens, d))
    values = np.zeros((spec.tokens, d))
    g = config.gating
    if scenario.face_pattern is not None:
        keys[g.token_face] = scenario.face_pattern
        values[g.token_face] = scenario.face_pattern
    if scenario.edit_pattern is not None:
        keys[g.token_edit] = scenario.edit_pattern
        values[g.token_edit] = scenario.edit_pattern
    return ToyAttentionModel(
        grid=grid,
        token_count=spec.tokens,
        seed=config.seed + 2,
        self_temp=spec.self_temp,
        cross_temp=spec.cross_temp,
        refine_strength=spec.refine_strength,
        cross_gain=spec.cross_gain,
        token_keys=keys,
        token_values=values,
    )


def build_plan(config: ExperimentConfig) -> HybridPlan:
    p = config.plan
    return hybrid_grid(p.steps, p.s1, p.s2, IndexConvention(p.convention))


# ---------------------------------------------------------------------------
# Pipeline result
# ---------------------------------------------------------------------------


@dataclass
class PipelineResult:
    config_hash: str
    z_shared: np.ndarray
    aligned: AlignedPair
    emb_1: EmbeddingSchedule
    emb_2: EmbeddingSchedule
    recon_1: Trajectory
    recon_2: Trajectory
    recon_3: Trajectory
    report_1: StabilityReport
    report_2: StabilityReport
    psnr_1: float
    psnr_2: float
    metric_rows: List[Tuple[str, float]]
    stage_log: List[Tuple[str, float]]

    def signature(self) -> dict:
        """Deterministic payload (timing excluded) for equality checks."""
        return {
            "config_hash": self.config_hash,
            "z_shared": self.z_shared,
            "final_1": self.recon_1.final_latent,
            "final_2": self.recon_2.final_latent,
            "final_3": self.recon_3.final_latent,
            "psnr_1": self.psnr_1,
            "psnr_2": self.psnr_2,
            "metric_rows": tuple(self.metric_rows),
        }


def signatures_equal(a: dict, b: dict) -> bool:
    if a.keys() != b.keys():
        return False
    for key in a:
        va, vb = a[key], b[key]
        if isinstance(va, np.ndarray):
            if not np.array_equal(va, vb):
                return False
        elif va != vb:
            return False
    return True


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------


def _entangle(
    config: ExperimentConfig,
    plan: HybridPlan,
    schedule: NoiseSchedule,
    scenario: Scenario,
    model: Optional[ToyAttentionModel],
    emb_1: EmbeddingSchedule,
    emb_2: EmbeddingSchedule,
    z_shared: np.ndarray,
    recon_1: Trajectory,
    recon_2: Trajectory,
) -> Trajectory:
    """Reconstruct the third path with gated attention injection.

    The first two reconstructions were already recorded; at each step
    their stored latents supply the source attention maps. The third
    path follows identity 1's null constraints by default (or a convex
    mix), with gated maps per the layer policy and an optional masked
    blend toward the first source.
    """
    g = config.gating
    if not g.enabled:
        return recon_1
    if model is None or scenario.mask_1 is None:
        raise InvalidRangeError("gating requires a grid scene and an attention model")

    gate_cfg = GatingConfig(
        w_hat=g.w_hat,
        token_set_1=(g.token_face,),
        token_set_2=(g.token_edit,),
        layer_policy=default_layer_policy(list(model.layer_tags()), up_256_self=g.up_256_self),
        overlap_rule=OverlapRule(g.overlap_rule),
    )
    weights_by_layer = {}
    for tag in model.layer_tags():
        n = tag[1]
        side = int(np.sqrt(n))
        m1 = resample_mask(scenario.mask_1, (side, side))
        m2 = resample_mask(scenario.mask_2, (side, side))
        weights_by_layer[tag] = compute_region_weights(m1, m2, g.w_hat, OverlapRule(g.overlap_rule))

    blend_noise_rng = np.random.default_rng(config.seed + 3)
    mix = g.i3_null_mix
    nulls_3 = [
        (1.0 - mix) * n1 + mix * n2 for n1, n2 in zip(emb_1.nulls, emb_2.nulls)
    ]

    injected: dict = {}

    def gated_maps(z3: np.ndarray, t: float):
        maps3 = model.maps(z3)
        out = {}
        for tag in model.layer_tags():
            s1, a1 = injected["maps1"][tag]
            s2, a2 = injected["maps2"][tag]
            s3, a3 = maps3[tag]
            out[tag] = apply_layer_policy(
                gate_cfg, tag, (s1, s2, s3), (a1, a2, a3), weights_by_layer[tag]
            )
        return out

    pred3 = CfgPredictor(
        AttentiveToyPredictor(scenario.oracle_1, model, schedule, map_source=gated_maps),
        emb_1.conditional,
        emb_1.cfg_weight,
    )

    from .predictor import predict_x0

    z3 = np.asarray(z_shared, dtype=float)
    state = EMPTY_DPM_STATE
    records: List[StepRecord] = []
    T = len(plan)
    blend_mask = SpatialMask(np.clip(scenario.mask_1.values + scenario.mask_2.values, 0.0, 1.0))
    for i in range(T):
        z1_i = recon_1.steps[i].latent_before
        z2_i = recon_2.steps[i].latent_before
        injected["maps1"] = model.maps(z1_i)
        injected["maps2"] = model.maps(z2_i)
        before = z3
        t_eval = float(plan.timesteps[i])
        x0_est = predict_x0(schedule, before, t_eval, pred3.eps(before, t_eval, nulls_3[i]))
        z3, state = hybrid_step(plan, i, schedule, pred3, z3, nulls_3[i], state)
        if plan.solver_tags[i] is SolverTag.DDIM:
            state = EMPTY_DPM_STATE
        if g.blend:
            level = float(plan.timesteps[i + 1]) if i < T - 1 else 0.0
            noise = blend_noise_rng.standard_normal(z3.shape[-1])
            z3 = latent_blend(z3, scenario.z1_0, blend_mask, level, schedule, noise)
        records.append(
            StepRecord(
                step_index=i,
                timestep=t_eval,
                solver_tag=plan.solver_tags[i],
                latent_before=before,
                latent_after=z3,
                x0_estimate=x0_est,
            )
        )
    return Trajectory(direction=Direction.RECONSTRUCTION, steps=records, plan=plan)


def run_pipeline(config: ExperimentConfig) -> PipelineResult:
    """Execute the full dual-source flow for one configuration."""
    stage_log: List[Tuple[str, float]] = []

    def staged(stage, fn):
        start = time.perf_counter()
        try:
            out = fn()
        except PipelineStageError:
            raise
        except Exception as exc:  # noqa: BLE001 - tag and surface every stage failure
            raise PipelineStageError(stage, exc) from exc
        stage_log.append((stage, time.perf_counter() - start))
        return out

    schedule = staged(
        "schedule",
        lambda: build_noise_schedule(
            config.schedule.train_steps, config.schedule.beta_start, config.schedule.beta_end
        ),
    )
    plan = staged("plan", lambda: build_plan(config))
    scenario = staged("scenario", lambda: build_scenario(config, schedule))

    model = None
    pred1, pred2 = scenario.oracle_1, scenario.oracle_2
    if config.toy_attention.enabled:
        model = staged("toy_attention", lambda: _build_toy_model(config, scenario))
        pred1 = AttentiveToyPredictor(scenario.oracle_1, model, schedule)
        pred2 = AttentiveToyPredictor(scenario.oracle_2, model, schedule)

    T = len(plan)
    conds1 = [scenario.cond_1] * T
    conds2 = [scenario.cond_2] * T

    def _align():
        return align_inversion(
            plan,
            schedule,
            pred1,
            pred2,
            scenario.z1_0,
            scenario.z2_0,
            conds1,
            conds2,
            init_lambda=config.align.init_lambda,
            eta=config.align.eta,
            merge_mode=MergeMode(config.align.merge_mode),
            merge_delta=config.align.merge_delta,
        )

    pair = staged("align", _align)

    def _nulltext():
        targets = targets_from_aligned(pair)
        return optimize_null_embeddings(
            plan,
            schedule,
            (pred1, pred2),
            pair.z_shared,
            targets,
            (scenario.cond_1, scenario.cond_2),
            config.nulltext.settings(),
            w_cfg=config.nulltext.cfg_weight,
        )

    emb_1, emb_2 = staged("nulltext", _nulltext)

    recon_1 = staged(
        "reconstruct_1", lambda: reconstruct_with_null(plan, schedule, pred1, pair.z_shared, emb_1)
    )
    recon_2 = staged(
        "reconstruct_2", lambda: reconstruct_with_null(plan, schedule, pred2, pair.z_shared, emb_2)
    )
    recon_3 = staged(
        "entangle",
        lambda: _entangle(
            config, plan, schedule, scenario, model, emb_1, emb_2,
            pair.z_shared, recon_1, recon_2,
        ),
    )

    def _metrics():
        rep1 = stability_report(pair.traj_1, recon_1, scenario.z1_0)
        rep2 = stability_report(pair.traj_2, recon_2, scenario.z2_0)
        p1 = psnr(scenario.z1_0, recon_1.final_latent)
        p2 = psnr(scenario.z2_0, recon_2.final_latent)
        rows = [
            ("psnr_identity_1", p1),
            ("psnr_identity_2", p2),
            ("final_l2_identity_1", rep1.final_l2),
            ("final_l2_identity_2", rep2.final_l2),
            ("max_residual_identity_1", max(emb_1.residuals)),
            ("max_residual_identity_2", max(emb_2.residuals)),
            ("lambda_final", pair.lambda_history[-1]),
        ]
        return rep1, rep2, p1, p2, rows

    rep1, rep2, p1, p2, rows = staged("metrics", _metrics)

    return PipelineResult(
        config_hash=config.config_hash(),
        z_shared=pair.z_shared,
        aligned=pair,
        emb_1=emb_1,
        emb_2=emb_2,
        recon_1=recon_1,
        recon_2=recon_2,
        recon_3=recon_3,
        report_1=rep1,
        report_2=rep2,
        psnr_1=p1,
        psnr_2=p2,
        metric_rows=rows,
        stage_log=stage_log,
    )


@dataclass
class BatchItem:
    index: int
    result: Optional[PipelineResult] = None
    error: Optional[PipelineStageError] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def run_parallel_batch(configs: Sequence[ExperimentConfig], workers: int = 4) -> List[BatchItem]:
    """Run independent configs concurrently; failures never abort siblings.

    Results are order-stable and bitwise identical to sequential runs
    (each item's work is a pure function of its config).
    """
    if workers < 1:
        raise InvalidRangeError(f"workers must be >= 1, got {workers}")

    def one(idx_cfg):
        idx, cfg = idx_cfg
        try:
            return BatchItem(index=idx, result=run_pipeline(cfg))
        except PipelineStageError as err:
            return BatchItem(index=idx, error=err)
        except Exception as err:  # noqa: BLE001 - config validation failures
            return BatchItem(index=idx, error=PipelineStageError("config", err))

    if workers == 1 or len(configs) <= 1:
        return [one(pair) for pair in enumerate(configs)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, enumerate(configs)))


# ---------------------------------------------------------------------------
# Sweep harnesses
# ---------------------------------------------------------------------------

LAMBDA_SWEEP_VALUES = (0.02, 0.04, 0.06, 0.08, 0.1, 0.3, 0.5)
OVERLAP_SWEEP_VALUES = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)


def sweep_lambda(
    values: Sequence[float] = LAMBDA_SWEEP_VALUES,
    base: Optional[ExperimentConfig] = None,
) -> List[dict]:
    """Reconstruction PSNR as a function of the initial mixing weight."""
    base = base or demo_config()
    rows = []
    for lam0 in values:
        cfg = replace(base, align=replace(base.align, init_lambda=float(lam0)))
        res = run_pipeline(cfg)
        rows.append(
            {
                "init_lambda": float(lam0),
                "psnr_1": res.psnr_1,
                "psnr_2": res.psnr_2,
                "psnr_mean": 0.5 * (res.psnr_1 + res.psnr_2),
                "lambda_final": res.aligned.lambda_history[-1],
            }
        )
    return rows


def sweep_dpm_range(
    ranges: Sequence[Tuple[int, int]],
    base: Optional[ExperimentConfig] = None,
) -> List[dict]:
    """Reconstruction PSNR across solver-window placements.

    Windows whose splice is non-monotone are reported as infeasible
    rather than silently skipped.
    """
    base = base or demo_config()
    rows = []
    for s1, s2 in ranges:
        cfg = replace(base, plan=replace(base.plan, s1=int(s1), s2=int(s2)))
        row = {"s1": int(s1), "s2": int(s2)}
        try:
            res = run_pipeline(cfg)
        except PipelineStageError as err:
            if isinstance(err.original, (NonMonotoneSpliceError, InvalidRangeError)):
                row.update({"feasible": False, "reason": str(err.original)})
                rows.append(row)
                continue
            raise
        row.update(
            {
                "feasible": True,
                "psnr_1": res.psnr_1,
                "psnr_2": res.psnr_2,
                "psnr_mean": 0.5 * (res.psnr_1 + res.psnr_2),
            }
        )
        rows.append(row)
    return rows


def overlap_weight_scores(w_hat: float, grid: Tuple[int, int] = (8, 8), seed: int = 0) -> dict:
    """Retention scores of the overlap fusion at one weight setting.

    Two sources carry disjoint column-block signatures in their self
    maps; fusing them over an overlapping mask pair and measuring how
    much of each signature survives in the overlap rows gives a
    per-source retention in [0, 1]. The co-existence score multiplies
    the two retentions (both elements matter equally); the
    layer-coverage score squares the top element's retention (the
    covering element must dominate for a physically plausible result).
    """
    from .gating import fuse_self_attention

    h, w = grid
    n = h * w
    rng = np.random.default_rng(seed)

    # left band / right band masks with a two-column overlap
    m1 = np.zeros((h, w))
    m1[:, : w // 2 + 1] = 1.0
    m2 = np.zeros((h, w))
    m2[:, w // 2 - 1 :] = 1.0
    mask1, mask2 = SpatialMask(m1), SpatialMask(m2)
    overlap_rows = np.nonzero((m1 * m2).reshape(-1) > 0)[0]

    # source signatures: uniform attention over disjoint column blocks
    block_a = np.arange(n // 2)
    block_b = np.arange(n // 2, n)
    s1 = np.zeros((n, n))
    s1[:, block_a] = 1.0 / block_a.size
    s2 = np.zeros((n, n))
    s2[:, block_b] = 1.0 / block_b.size
    s3 = np.full((n, n), 1.0 / n)

    weights = compute_region_weights(mask1, mask2, w_hat)
    fused = fuse_self_attention(s1, s2, s3, weights)
    retention_1 = float(fused[np.ix_(overlap_rows, block_a)].sum(axis=1).mean())
    retention_2 = float(fused[np.ix_(overlap_rows, block_b)].sum(axis=1).mean())
    return {
        "w_hat": float(w_hat),
        "retention_1": retention_1,
        "retention_2": retention_2,
        "coexistence_score": retention_1 * retention_2,
        "coverage_score": retention_1 * retention_2**2,
    }


def sweep_overlap_weight(values: Sequence[float] = OVERLAP_SWEEP_VALUES) -> List[dict]:
    return [overlap_weight_scores(v) for v in values]


def bench_solver(base: Optional[ExperimentConfig] = None, T: int = 11, s1: int = 5, s2: int = 10) -> List[dict]:
    """Stability comparison: single solvers vs global and fragmented hybrids."""
    base = base or demo_config()
    schedule = build_noise_schedule(
        base.schedule.train_steps, base.schedule.beta_start, base.schedule.beta_end
    )
    scenario = build_scenario(base, schedule)
    plans = {
        "ddim_only": uniform_plan(T, SolverTag.DDIM),
        "dpm_only": uniform_plan(T, SolverTag.DPM),
        "hybrid_global": hybrid_grid(T, s1, s2, IndexConvention.FROM_NOISE),
        "hybrid_fragmented": fragmented_plan(T, s1, s2),
    }
    conds = [scenario.cond_1] * T
    rows = []
    for name, plan in plans.items():
        inv = run_trajectory(plan, schedule, scenario.oracle_1, scenario.z1_0, conds, Direction.INVERSION)
        rec = run_trajectory(plan, schedule, scenario.oracle_1, inv.final_latent, conds, Direction.RECONSTRUCTION)
        rep = stability_report(inv, rec, scenario.z1_0)
        rows.append(
            {
                "method": name,
                "cumulative_mse": rep.cumulative_mse,
                "max_jump": rep.max_jump,
                "boundary_jump": rep.boundary_jump,
                "final_l2": rep.final_l2,
                "psnr_db": rep.psnr_db,
            }
        )
    return rows
