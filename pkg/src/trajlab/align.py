"""Dual-trajectory alignment via adaptive cross-mixing.

Two inversions advance independently each step, then exchange a
learnable fraction of each other's state. The mixing weight descends
the closed-form gradient of the alignment loss and is pinned to one
half once the trajectories are merged, yielding a single shared
noise-end latent with two smooth approach paths.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from .errors import DimensionMismatchError, InvalidRangeError
from .predictor import NoisePredictor, predict_x0
from .sampler import (
    EMPTY_DPM_STATE,
    Direction,
    StepRecord,
    Trajectory,
    _ddim_move,
    _dpm2m_move,
    _segment,
)
from .schedule import HybridPlan, NoiseSchedule, SolverTag

DEFAULT_ETA = 0.01
DEFAULT_INIT_LAMBDA = 0.04
DEFAULT_MERGE_DELTA = 0.02
CONVERGENCE_WARN_LAMBDA = 0.45


class MergeMode(str, Enum):
    FINAL_STEP_ONLY = "final_step_only"
    THRESHOLD = "threshold"


@dataclass(frozen=True)
class MixingState:
    """Current mixing weight and its update hyperparameters.

    lambda_t lives in [0, 0.5]; eta is the gradient-descent rate;
    THRESHOLD mode merges once lambda_t >= 0.5 - merge_delta, with a
    guaranteed merge at the final step either way.
    """

    lambda_t: float
    eta: float = DEFAULT_ETA
    merge_mode: MergeMode = MergeMode.THRESHOLD
    merge_delta: float = DEFAULT_MERGE_DELTA

    def __post_init__(self):
        if not (0.0 <= self.lambda_t <= 0.5):
            raise InvalidRangeError(f"lambda_t must be in [0, 0.5], got {self.lambda_t}")


def adaptive_mix_step(z1: np.ndarray, z2: np.ndarray, lambda_t: float):
    """Symmetric cross-mix: each latent absorbs a lambda fraction of the other.

    Returns ((1-l) z1 + l z2, (1-l) z2 + l z1). The post-mix difference
    is (1 - 2 lambda) times the pre-mix difference.
    """
    if not (0.0 <= lambda_t <= 0.5):
        raise InvalidRangeError(f"lambda_t must be in [0, 0.5], got {lambda_t}")
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if z1.shape != z2.shape:
        raise DimensionMismatchError(f"shapes {z1.shape} vs {z2.shape}")
    return (1.0 - lambda_t) * z1 + lambda_t * z2, (1.0 - lambda_t) * z2 + lambda_t * z1


def alignment_loss(z1: np.ndarray, z2: np.ndarray) -> float:
    """Mean squared per-element difference (normalized discrepancy)."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if z1.shape != z2.shape:
        raise DimensionMismatchError(f"shapes {z1.shape} vs {z2.shape}")
    return float(np.mean((z1 - z2) ** 2))


def lambda_update(state: MixingState, z1: np.ndarray, z2: np.ndarray) -> MixingState:
    """Descend the closed-form mixing-loss gradient and clamp to [0, 0.5].

    With pre-mix discrepancy D = mean((z1 - z2)^2) the post-mix loss as
    a function of the weight is (1 - 2 lambda)^2 D, whose descent step is

        lambda <- clamp(lambda + 4 eta (1 - 2 lambda) D, 0, 0.5).

    The loss evaluated after the update never exceeds the loss before.
    """
    D = alignment_loss(z1, z2)
    new_lambda = state.lambda_t + 4.0 * state.eta * (1.0 - 2.0 * state.lambda_t) * D
    new_lambda = min(0.5, max(0.0, new_lambda))
    return replace(state, lambda_t=new_lambda)


def hard_merge(z1: np.ndarray, z2: np.ndarray) -> np.ndarray:
    """Average the pair; callers assign the result to both trajectories."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if z1.shape != z2.shape:
        raise DimensionMismatchError(f"shapes {z1.shape} vs {z2.shape}")
    return (z1 + z2) / 2.0


@dataclass(frozen=True)
class AlignedPair:
    """Result of a dual aligned inversion.

    Both trajectories end bitwise equal to ``z_shared``. Histories are
    indexed by execution step (data end first).
    """

    traj_1: Trajectory
    traj_2: Trajectory
    lambda_history: List[float]
    loss_history: List[float]
    z_shared: np.ndarray

    @property
    def loss_monotone(self) -> bool:
        return all(
            self.loss_history[i + 1] <= self.loss_history[i] + 1e-12
            for i in range(len(self.loss_history) - 1)
        )


def align_inversion(
    plan: HybridPlan,
    schedule: NoiseSchedule,
    pred1: NoisePredictor,
    pred2: NoisePredictor,
    z1_0: np.ndarray,
    z2_0: np.ndarray,
    embeddings1: Sequence[Optional[np.ndarray]],
    embeddings2: Sequence[Optional[np.ndarray]],
    init_lambda: float = DEFAULT_INIT_LAMBDA,
    eta: float = DEFAULT_ETA,
    merge_mode: MergeMode = MergeMode.THRESHOLD,
    merge_delta: float = DEFAULT_MERGE_DELTA,
) -> AlignedPair:
    """Invert two latents jointly with adaptive mixing.

    Per inversion step: advance each latent independently (its own
    predictor and embedding), apply the symmetric mix at the current
    weight, then update the weight from the pre-mix discrepancy. Once
    the merge trigger fires - threshold reached, or the final step as a
    fallback - the pair is hard-merged and the weight pinned to 0.5 for
    the remaining steps.

    Records the post-mix state of each identity at every plan level;
    these are the alignment targets later consumed by the
    reconstruction-side embedding optimization.
    """
    T = len(plan)
    if len(embeddings1) < T or len(embeddings2) < T:
        raise DimensionMismatchError(f"need >= {T} per-step embeddings for each identity")
    state = MixingState(lambda_t=init_lambda, eta=eta, merge_mode=merge_mode, merge_delta=merge_delta)
    z1 = np.asarray(z1_0, dtype=float)
    z2 = np.asarray(z2_0, dtype=float)
    s1 = s2 = EMPTY_DPM_STATE
    merged = False
    lambda_history: List[float] = []
    loss_history: List[float] = []
    recs1: List[StepRecord] = []
    recs2: List[StepRecord] = []

    for j in range(T):
        p = T - 1 - j
        upper, lower = _segment(plan, p)
        tag = plan.solver_tags[p]
        b1, b2 = z1, z2

        eps1 = pred1.eps(z1, lower, embeddings1[p])
        eps2 = pred2.eps(z2, lower, embeddings2[p])
        x0_1 = predict_x0(schedule, z1, lower, eps1)
        x0_2 = predict_x0(schedule, z2, lower, eps2)
        if tag is SolverTag.DDIM:
            z1 = _ddim_move(schedule, z1, eps1, lower, upper)
            z2 = _ddim_move(schedule, z2, eps2, lower, upper)
            s1 = s2 = EMPTY_DPM_STATE
        else:
            z1, s1 = _dpm2m_move(schedule, z1, eps1, lower, upper, s1)
            z2, s2 = _dpm2m_move(schedule, z2, eps2, lower, upper, s2)

        lam = state.lambda_t
        pre1, pre2 = z1, z2
        z1, z2 = adaptive_mix_step(z1, z2, lam)
        loss_history.append((1.0 - 2.0 * lam) ** 2 * alignment_loss(pre1, pre2))
        state = lambda_update(state, pre1, pre2)

        trigger = False
        if not merged:
            if merge_mode is MergeMode.THRESHOLD and state.lambda_t >= 0.5 - merge_delta:
                trigger = True
            if j == T - 1:
                trigger = True
        if trigger:
            if state.lambda_t < CONVERGENCE_WARN_LAMBDA:
                warnings.warn(
                    f"mixing weight {state.lambda_t:.3f} < {CONVERGENCE_WARN_LAMBDA} at merge trigger",
                    RuntimeWarning,
                    stacklevel=2,
                )
            m = hard_merge(z1, z2)
            z1 = z2 = m
            state = replace(state, lambda_t=0.5)
            merged = True
        lambda_history.append(state.lambda_t)

        recs1.append(StepRecord(p, float(plan.timesteps[p]), tag, b1, z1, x0_1))
        recs2.append(StepRecord(p, float(plan.timesteps[p]), tag, b2, z2, x0_2))

    traj1 = Trajectory(direction=Direction.INVERSION, steps=recs1, plan=plan)
    traj2 = Trajectory(direction=Direction.INVERSION, steps=recs2, plan=plan)
    return AlignedPair(
        traj_1=traj1,
        traj_2=traj2,
        lambda_history=lambda_history,
        loss_history=loss_history,
        z_shared=z1,
    )


def align_csv(pair: AlignedPair) -> str:
    """Serialize per-step mixing diagnostics: step,lambda,align_loss,l2_z1_z2."""
    import io

    buf = io.StringIO()
    buf.write("step,lambda,align_loss,l2_z1_z2\n")
    for j, (lam, loss) in enumerate(zip(pair.lambda_history, pair.loss_history)):
        d = pair.traj_1.steps[j].latent_after - pair.traj_2.steps[j].latent_after
        buf.write(f"{j},{lam!r},{loss!r},{float(np.linalg.norm(d))!r}\n")
    return buf.getvalue()
