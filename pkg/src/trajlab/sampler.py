"""Deterministic solver steps and trajectory execution.

Implements the first-order deterministic step (both directions), the
second-order multistep data-prediction step, and the hybrid dispatch
that reads timestep values and solver tags from a global plan.

Step semantics over a plan of length T: reconstruction evaluates the
predictor at plan level i and moves to plan level i+1 (the final step
moves to noise level 0, the exact data end). Inversion traverses the
same T segments in reverse, evaluating at each segment's lower level.
Solver tags attach to segments, so the solver window sits at matching
noise levels in both directions.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from .errors import DegenerateScheduleError, DimensionMismatchError, OrderingError
from .predictor import ALPHA_BAR_FLOOR, NoisePredictor, embedding_jvp, predict_x0
from .schedule import HybridPlan, IndexConvention, NoiseSchedule, SolverTag


class Direction(str, Enum):
    INVERSION = "inversion"
    RECONSTRUCTION = "reconstruction"


def half_log_snr(schedule: NoiseSchedule, t: float) -> float:
    """0.5 * ln(alpha_bar / (1 - alpha_bar)), +inf at the data end."""
    ab = schedule.alpha_bar(t)
    if ab <= ALPHA_BAR_FLOOR:
        raise DegenerateScheduleError(f"alpha_bar({t}) below floor")
    if 1.0 - ab <= 0.0:
        return math.inf
    return 0.5 * (math.log(ab) - math.log(1.0 - ab))


def _coeffs(schedule: NoiseSchedule, t: float, k: float):
    """Shared per-step quantities: alpha-bars and their square roots."""
    ab_t = schedule.alpha_bar(t)
    ab_k = schedule.alpha_bar(k)
    if ab_t <= ALPHA_BAR_FLOOR or ab_k <= ALPHA_BAR_FLOOR:
        raise DegenerateScheduleError(f"alpha_bar at ({t}, {k}) below floor")
    return ab_t, ab_k


def _ddim_move(schedule: NoiseSchedule, z: np.ndarray, eps: np.ndarray, t: float, k: float) -> np.ndarray:
    """First-order deterministic transport from level t to level k.

    Algebraically identical to reconstructing the data estimate and
    re-noising it at level k; arranged in coefficient form so the k = t
    case is the exact (bitwise) identity.
    """
    ab_t, ab_k = _coeffs(schedule, t, k)
    coef_z = np.sqrt(ab_k / ab_t)
    coef_eps = np.sqrt(max(1.0 - ab_k, 0.0)) - coef_z * np.sqrt(max(1.0 - ab_t, 0.0))
    return coef_z * z + coef_eps * eps


def ddim_step(
    schedule: NoiseSchedule,
    pred: NoisePredictor,
    z: np.ndarray,
    t: float,
    k: float,
    e: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Deterministic reconstruction step from level t down to level k.

    Requires k <= t; k = t returns the input exactly.
    """
    if k > t:
        raise OrderingError(f"reconstruction requires k <= t, got k={k} > t={t}")
    eps = pred.eps(z, t, e)
    return _ddim_move(schedule, z, eps, t, k)


def ddim_invert_step(
    schedule: NoiseSchedule,
    pred: NoisePredictor,
    z: np.ndarray,
    t: float,
    t_next: float,
    e: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Inversion step from level t up to t_next (noise increases).

    Uses the standard approximation of evaluating the predictor at the
    current (lower) level.
    """
    if t_next <= t:
        raise OrderingError(f"inversion requires t_next > t, got {t_next} <= {t}")
    eps = pred.eps(z, t, e)
    return _ddim_move(schedule, z, eps, t, t_next)


@dataclass(frozen=True)
class Dpm2mState:
    """Multistep history: previous data estimate and half-log-SNR.

    Empty at the first multistep call and after every solver switch.
    ``lambda_prev`` may be +inf when the previous evaluation sat at the
    exact data end; the next update then degrades to first order.
    """

    x0_prev: Optional[np.ndarray] = None
    lambda_prev: Optional[float] = None

    @property
    def is_empty(self) -> bool:
        return self.x0_prev is None


EMPTY_DPM_STATE = Dpm2mState()


def _dpm2m_move(
    schedule: NoiseSchedule,
    z: np.ndarray,
    eps: np.ndarray,
    t: float,
    k: float,
    state: Dpm2mState,
):
    """Multistep transport given a precomputed noise estimate at level t."""
    ab_t, ab_k = _coeffs(schedule, t, k)
    a_t, a_k = math.sqrt(ab_t), math.sqrt(ab_k)
    s_t = math.sqrt(max(1.0 - ab_t, 0.0))
    s_k = math.sqrt(max(1.0 - ab_k, 0.0))
    x0 = predict_x0(schedule, z, t, eps)

    if s_t == 0.0:
        # Evaluation at the exact data end: exp(-h) diverges but its
        # coefficient vanishes in the first-order rule, which is exact here.
        lam_t = math.inf
        exp_mh = 0.0
        D = x0
    else:
        lam_t = 0.5 * (math.log(ab_t) - math.log(1.0 - ab_t))
        exp_mh = (a_t * s_k) / (a_k * s_t)
        use_history = (
            not state.is_empty
            and state.lambda_prev is not None
            and math.isfinite(state.lambda_prev)
            and s_k > 0.0
        )
        if use_history:
            lam_k = 0.5 * (math.log(ab_k) - math.log(1.0 - ab_k))
            h = lam_k - lam_t
            r = (lam_t - state.lambda_prev) / h
            c = 1.0 / (2.0 * r)
            D = (1.0 + c) * x0 - c * state.x0_prev
        else:
            D = x0

    z_k = s_k * eps + a_k * (exp_mh * x0 + (1.0 - exp_mh) * D)
    return z_k, Dpm2mState(x0_prev=x0, lambda_prev=lam_t)


def dpm2m_step(
    schedule: NoiseSchedule,
    pred: NoisePredictor,
    z: np.ndarray,
    t: float,
    k: float,
    e: Optional[np.ndarray] = None,
    state: Dpm2mState = EMPTY_DPM_STATE,
):
    """Second-order multistep data-prediction update from level t to k.

    With h = lambda(k) - lambda(t) and r = h_prev / h the combined data
    estimate is D = (1 + 1/(2r)) x0_t - 1/(2r) x0_prev, and

        z_k = (s_k / s_t) z - a_k (exp(-h) - 1) D

    where a = sqrt(alpha_bar) and s = sqrt(1 - alpha_bar). The update is
    evaluated in the equivalent singularity-free arrangement

        z_k = s_k eps + a_k (exp(-h) x0_t + (1 - exp(-h)) D),
        exp(-h) = (a_t s_k) / (a_k s_t),

    which needs no logs and is exact at both boundaries. An empty state
    (or an infinite previous half-log-SNR) degrades to the first-order
    rule D = x0_t. Works in either direction: k > t flips the sign of h.

    Returns (z_k, new_state).
    """
    if k == t:
        raise OrderingError("multistep update requires k != t")
    eps = pred.eps(z, t, e)
    return _dpm2m_move(schedule, z, eps, t, k, state)


def hybrid_step(
    plan: HybridPlan,
    step_index: int,
    schedule: NoiseSchedule,
    pred: NoisePredictor,
    z: np.ndarray,
    e: Optional[np.ndarray] = None,
    state: Dpm2mState = EMPTY_DPM_STATE,
):
    """One reconstruction step dispatched on the plan's solver tag.

    Timesteps come from the plan (never recomputed locally); the final
    step lands on noise level 0. The DDIM path clears any multistep
    history.

    Returns (z_next, new_state).
    """
    T = len(plan)
    if not (0 <= step_index < T):
        raise OrderingError(f"step_index {step_index} outside plan of length {T}")
    t = float(plan.timesteps[step_index])
    k = float(plan.timesteps[step_index + 1]) if step_index < T - 1 else 0.0
    tag = plan.solver_tags[step_index]
    if tag is SolverTag.DDIM:
        return ddim_step(schedule, pred, z, t, k, e), EMPTY_DPM_STATE
    return dpm2m_step(schedule, pred, z, t, k, e, state)


def step_embedding_jvp(
    plan: HybridPlan,
    step_index: int,
    schedule: NoiseSchedule,
    pred: NoisePredictor,
    z: np.ndarray,
    e: np.ndarray,
    v: np.ndarray,
    state: Dpm2mState = EMPTY_DPM_STATE,
) -> np.ndarray:
    """Directional derivative of hybrid_step's output w.r.t. the embedding.

    The step depends on the embedding only through the predictor output,
    so the chain rule reduces to known scalar coefficients times the
    predictor's embedding derivative.
    """
    T = len(plan)
    t = float(plan.timesteps[step_index])
    k = float(plan.timesteps[step_index + 1]) if step_index < T - 1 else 0.0
    deps = embedding_jvp(pred, z, t, e, v)
    ab_t, ab_k = _coeffs(schedule, t, k)
    tag = plan.solver_tags[step_index]
    if tag is SolverTag.DDIM:
        coef_z = math.sqrt(ab_k / ab_t)
        coef_eps = math.sqrt(max(1.0 - ab_k, 0.0)) - coef_z * math.sqrt(max(1.0 - ab_t, 0.0))
        return coef_eps * deps
    a_t, a_k = math.sqrt(ab_t), math.sqrt(ab_k)
    s_t = math.sqrt(max(1.0 - ab_t, 0.0))
    s_k = math.sqrt(max(1.0 - ab_k, 0.0))
    dx0 = -(s_t / a_t) * deps
    if s_t == 0.0:
        return s_k * deps + a_k * dx0
    exp_mh = (a_t * s_k) / (a_k * s_t)
    use_history = (
        not state.is_empty
        and state.lambda_prev is not None
        and math.isfinite(state.lambda_prev)
        and s_k > 0.0
    )
    if use_history:
        lam_t = 0.5 * (math.log(ab_t) - math.log(1.0 - ab_t))
        lam_k = 0.5 * (math.log(ab_k) - math.log(1.0 - ab_k))
        h = lam_k - lam_t
        r = (lam_t - state.lambda_prev) / h
        d_coef = 1.0 + 1.0 / (2.0 * r)
    else:
        d_coef = 1.0
    return s_k * deps + a_k * (exp_mh + (1.0 - exp_mh) * d_coef) * dx0


@dataclass(frozen=True)
class StepRecord:
    """One executed segment: where it started, landed, and what it saw."""

    step_index: int
    timestep: float
    solver_tag: SolverTag
    latent_before: np.ndarray
    latent_after: np.ndarray
    x0_estimate: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """Ordered step records for one latent over one plan."""

    direction: Direction
    steps: List[StepRecord]
    plan: HybridPlan

    def __post_init__(self):
        if len(self.steps) != len(self.plan):
            raise DimensionMismatchError(
                f"step count {len(self.steps)} != plan length {len(self.plan)}"
            )

    @property
    def final_latent(self) -> np.ndarray:
        return self.steps[-1].latent_after

    @property
    def initial_latent(self) -> np.ndarray:
        return self.steps[0].latent_before

    def state_at_plan_index(self, plan_index: int) -> np.ndarray:
        """Latent AT plan level ``plan_index``, whichever direction ran.

        Reconstruction occupies level i before executing step i;
        inversion lands on level p when executing the record with
        step_index p.
        """
        if self.direction is Direction.RECONSTRUCTION:
            return self.steps[plan_index].latent_before
        for rec in self.steps:
            if rec.step_index == plan_index:
                return rec.latent_after
        raise KeyError(plan_index)

    def data_end_state(self) -> np.ndarray:
        """Latent at noise level 0 (start of inversion, end of reconstruction)."""
        if self.direction is Direction.RECONSTRUCTION:
            return self.final_latent
        return self.initial_latent

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("direction,step_index,timestep,solver_tag,l2_latent,l2_x0\n")
        for rec in self.steps:
            buf.write(
                f"{self.direction.value},{rec.step_index},{rec.timestep!r},"
                f"{rec.solver_tag.value},"
                f"{float(np.linalg.norm(rec.latent_after))!r},"
                f"{float(np.linalg.norm(rec.x0_estimate))!r}\n"
            )
        return buf.getvalue()


def save_trajectory(traj: Trajectory, path: str) -> None:
    """Write a trajectory losslessly (repr-exact floats) as JSON."""
    import json

    payload = {
        "direction": traj.direction.value,
        "plan": {
            "timesteps": [repr(float(t)) for t in traj.plan.timesteps],
            "solver_tags": [t.value for t in traj.plan.solver_tags],
            "s1": traj.plan.s1,
            "s2": traj.plan.s2,
            "convention": traj.plan.convention.value,
            "fragmented": traj.plan.fragmented,
        },
        "steps": [
            {
                "step_index": rec.step_index,
                "timestep": repr(rec.timestep),
                "solver_tag": rec.solver_tag.value,
                "latent_before": [repr(float(v)) for v in rec.latent_before],
                "latent_after": [repr(float(v)) for v in rec.latent_after],
                "x0_estimate": [repr(float(v)) for v in rec.x0_estimate],
            }
            for rec in traj.steps
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_trajectory(path: str) -> Trajectory:
    """Inverse of :func:`save_trajectory`; bit-exact round trip."""
    import json

    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    plan = HybridPlan(
        timesteps=np.array([float(v) for v in payload["plan"]["timesteps"]]),
        solver_tags=tuple(SolverTag(v) for v in payload["plan"]["solver_tags"]),
        s1=payload["plan"]["s1"],
        s2=payload["plan"]["s2"],
        convention=IndexConvention(payload["plan"]["convention"]),
        fragmented=payload["plan"]["fragmented"],
    )
    steps = [
        StepRecord(
            step_index=rec["step_index"],
            timestep=float(rec["timestep"]),
            solver_tag=SolverTag(rec["solver_tag"]),
            latent_before=np.array([float(v) for v in rec["latent_before"]]),
            latent_after=np.array([float(v) for v in rec["latent_after"]]),
            x0_estimate=np.array([float(v) for v in rec["x0_estimate"]]),
        )
        for rec in payload["steps"]
    ]
    return Trajectory(direction=Direction(payload["direction"]), steps=steps, plan=plan)


def _segment(plan: HybridPlan, index: int):
    """(upper, lower) noise levels of segment ``index``; last lower is 0."""
    upper = float(plan.timesteps[index])
    lower = float(plan.timesteps[index + 1]) if index < len(plan) - 1 else 0.0
    return upper, lower


def run_trajectory(
    plan: HybridPlan,
    schedule: NoiseSchedule,
    pred: NoisePredictor,
    z_start: np.ndarray,
    embeddings: Sequence[Optional[np.ndarray]],
    direction: Direction,
) -> Trajectory:
    """Execute a full pass over the plan, recording every step.

    ``embeddings`` holds one embedding per plan index (length >= plan
    length); segment p consumes embeddings[p] in both directions, so an
    inversion/reconstruction pair sees identical conditioning at
    matching noise levels.

    Reconstruction starts from ``z_start`` at the plan's first (highest)
    level and ends at noise level 0. Inversion starts from data at
    noise level 0 and ends at the plan's first level. Multistep history
    is cleared at every solver switch.
    """
    T = len(plan)
    if len(embeddings) < T:
        raise DimensionMismatchError(
            f"need >= {T} per-step embeddings, got {len(embeddings)}"
        )
    z = np.asarray(z_start, dtype=float)
    state = EMPTY_DPM_STATE
    records: List[StepRecord] = []
    order = range(T) if direction is Direction.RECONSTRUCTION else range(T - 1, -1, -1)
    for p in order:
        upper, lower = _segment(plan, p)
        tag = plan.solver_tags[p]
        e = embeddings[p]
        before = z
        if direction is Direction.RECONSTRUCTION:
            t_eval, target = upper, lower
        else:
            t_eval, target = lower, upper
        eps = pred.eps(z, t_eval, e)
        x0_est = predict_x0(schedule, before, t_eval, eps)
        if tag is SolverTag.DDIM:
            z = _ddim_move(schedule, z, eps, t_eval, target)
            state = EMPTY_DPM_STATE
        else:
            z, state = _dpm2m_move(schedule, z, eps, t_eval, target, state)
        records.append(
            StepRecord(
                step_index=p,
                timestep=float(plan.timesteps[p]),
                solver_tag=tag,
                latent_before=before,
                latent_after=z,
                x0_estimate=x0_est,
            )
        )
    return Trajectory(direction=direction, steps=records, plan=plan)
