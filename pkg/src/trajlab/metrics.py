"""Reconstruction-quality metrics and trajectory-stability statistics."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatchError, InvalidRangeError, PlanMismatchError, ZeroVectorError
from .sampler import Direction, Trajectory


def psnr(a: np.ndarray, b: np.ndarray, max_value: Optional[float] = None) -> float:
    """Peak signal-to-noise ratio in dB: 10 log10(max^2 / MSE).

    ``max_value`` defaults to the empirical range (max - min) of ``a``.
    Identical inputs map to +inf.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shapes {a.shape} vs {b.shape}")
    if max_value is None:
        max_value = float(a.max() - a.min())
    if max_value <= 0.0:
        raise InvalidRangeError(f"max_value must be > 0, got {max_value}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value * max_value / mse)


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two nonzero vectors."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shapes {a.shape} vs {b.shape}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine similarity undefined for zero vectors")
    return float(a @ b) / (na * nb)


@dataclass(frozen=True)
class StabilityReport:
    """Trajectory-consistency statistics for one inversion/reconstruction pair.

    cumulative_mse: mean over matched noise levels of per-dimension
        squared distance between the two trajectories.
    max_jump: largest per-dimension squared displacement between
        consecutive reconstruction states.
    boundary_jump: per-dimension squared displacement at the first
        solver-switch boundary (0 when the plan never switches).
    final_l2: ||rec_end - source||_2 / sqrt(d).
    psnr_db: reconstruction PSNR against the source (range-normalized).
    """

    cumulative_mse: float
    max_jump: float
    boundary_jump: float
    final_l2: float
    psnr_db: float

    def summary(self) -> str:
        return (
            f"cumulative_mse={self.cumulative_mse:.6g}  max_jump={self.max_jump:.6g}  "
            f"boundary_jump={self.boundary_jump:.6g}  final_l2={self.final_l2:.6g}  "
            f"psnr_db={self.psnr_db:.4g}"
        )

    def csv_row(self, label: str) -> str:
        return (
            f"{label},{self.cumulative_mse!r},{self.max_jump!r},"
            f"{self.boundary_jump!r},{self.final_l2!r},{self.psnr_db!r}"
        )


STABILITY_CSV_HEADER = "label,cumulative_mse,max_jump,boundary_jump,final_l2,psnr_db"


def _first_switch_index(traj: Trajectory) -> Optional[int]:
    tags = traj.plan.solver_tags
    for i in range(len(tags) - 1):
        if tags[i] is not tags[i + 1]:
            return i + 1
    return None


def stability_report(inv: Trajectory, rec: Trajectory, source: np.ndarray) -> StabilityReport:
    """Compare an inversion with its reconstruction over matched levels.

    Both trajectories must run over the same plan. The matched states
    are the T plan levels plus the data end; displacements are measured
    along the reconstruction in execution order.
    """
    if inv.plan is not rec.plan and inv.plan.fingerprint() != rec.plan.fingerprint():
        raise PlanMismatchError("trajectories were produced on different plans")
    if inv.direction is not Direction.INVERSION or rec.direction is not Direction.RECONSTRUCTION:
        raise PlanMismatchError("expected one inversion and one reconstruction")
    source = np.asarray(source, dtype=float)
    d = source.shape[-1]
    T = len(inv.plan)

    diffs = []
    for p in range(T):
        diffs.append(
            float(np.mean((rec.state_at_plan_index(p) - inv.state_at_plan_index(p)) ** 2))
        )
    diffs.append(float(np.mean((rec.data_end_state() - inv.data_end_state()) ** 2)))
    cumulative = float(np.mean(diffs))

    rec_states = [rec.initial_latent] + [s.latent_after for s in rec.steps]
    jumps = [
        float(np.mean((rec_states[i + 1] - rec_states[i]) ** 2))
        for i in range(len(rec_states) - 1)
    ]
    switch = _first_switch_index(rec)
    boundary = jumps[switch] if switch is not None else 0.0

    final = rec.final_latent
    final_l2 = float(np.linalg.norm(final - source)) / math.sqrt(d)
    return StabilityReport(
        cumulative_mse=cumulative,
        max_jump=max(jumps),
        boundary_jump=boundary,
        final_l2=final_l2,
        psnr_db=psnr(source, final),
    )
