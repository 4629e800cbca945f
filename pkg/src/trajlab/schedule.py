"""Noise-coefficient tables and timestep grids.

Provides the linear-beta noise schedule with a continuous alpha-bar
evaluator, the two solver-specific timestep grids (linear for the
first-order deterministic sampler, log-uniform for the multistep ODE
solver), and the spliced hybrid plan that assigns one grid value and one
solver tag to every step of a reconstruction.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import InvalidRangeError, NonMonotoneSpliceError

# Grid boundary parameters. The linear grid spans nearly the full unit
# interval; the log-uniform grid cannot reach 0 and uses a wider margin.
TAU_MAX = 0.9999
TAU_MIN = 0.0001
SIGMA_MAX = 0.99
SIGMA_MIN = 0.01

# Default training-schedule parameters (latent-diffusion convention).
DEFAULT_TRAIN_STEPS = 1000
DEFAULT_BETA_START = 0.00085
DEFAULT_BETA_END = 0.012


class GridKind(str, Enum):
    DDIM_LINEAR = "ddim_linear"
    DPM_LOG_UNIFORM = "dpm_log_uniform"


class SolverTag(str, Enum):
    DDIM = "ddim"
    DPM = "dpm"


class IndexConvention(str, Enum):
    """How the (s1, s2) window indices count steps.

    FROM_NOISE: index 0 is the first reconstruction step (pure-noise end).
    FROM_DATA:  index 0 is the last reconstruction step (data end).
    """

    FROM_NOISE = "from_noise"
    FROM_DATA = "from_data"


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta/alpha-bar tables plus a continuous alpha-bar evaluator.

    The table holds one cumulative product per training step. The
    evaluator maps a continuous noise level t in [0, 1] to alpha_bar(t)
    by linear interpolation, anchored at alpha_bar(0) = 1 so the data
    end is an exact no-noise boundary.
    """

    num_train_steps: int
    betas: np.ndarray
    alpha_bars: np.ndarray
    _nodes: np.ndarray = field(repr=False)
    _values: np.ndarray = field(repr=False)

    def alpha_bar(self, t):
        """Evaluate alpha_bar at continuous t in [0, 1] (scalar or array)."""
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
            raise InvalidRangeError(f"timestep {t!r} outside [0, 1]")
        out = np.interp(t_arr, self._nodes, self._values)
        return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out


def build_noise_schedule(
    num_train_steps: int = DEFAULT_TRAIN_STEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Build a linear-beta schedule and its cumulative alpha-bar table.

    Args:
        num_train_steps: table length, at least 2.
        beta_start: first beta value, in (0, beta_end).
        beta_end: last beta value, in (beta_start, 1).

    Raises:
        InvalidRangeError: if the beta range or step count is invalid.
    """
    if num_train_steps < 2:
        raise InvalidRangeError(f"num_train_steps must be >= 2, got {num_train_steps}")
    if not (0.0 < beta_start < beta_end < 1.0):
        raise InvalidRangeError(
            f"require 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, num_train_steps)
    alpha_bars = np.cumprod(1.0 - betas)
    # Node i+1 sits at the fraction of training steps elapsed; node 0 pins
    # alpha_bar(0) = 1 exactly.
    nodes = np.concatenate([[0.0], (np.arange(num_train_steps) + 1) / num_train_steps])
    values = np.concatenate([[1.0], alpha_bars])
    return NoiseSchedule(
        num_train_steps=num_train_steps,
        betas=betas,
        alpha_bars=alpha_bars,
        _nodes=nodes,
        _values=values,
    )


@dataclass(frozen=True)
class TimestepGrid:
    """A strictly decreasing sequence of noise levels in [0, 1]."""

    values: np.ndarray
    kind: GridKind

    def __len__(self) -> int:
        return len(self.values)


def ddim_grid(T: int) -> TimestepGrid:
    """Uniformly spaced grid from TAU_MAX down to TAU_MIN, T points."""
    if T < 2:
        raise InvalidRangeError(f"grid length must be >= 2, got {T}")
    i = np.arange(T)
    values = TAU_MAX - (i / (T - 1)) * (TAU_MAX - TAU_MIN)
    values[0], values[-1] = TAU_MAX, TAU_MIN  # exact endpoints
    return TimestepGrid(values=values, kind=GridKind.DDIM_LINEAR)


def dpm_grid(T: int) -> TimestepGrid:
    """Log-uniformly spaced grid from SIGMA_MAX down to SIGMA_MIN, T points."""
    if T < 2:
        raise InvalidRangeError(f"grid length must be >= 2, got {T}")
    i = np.arange(T)
    values = np.exp(np.log(SIGMA_MAX) + (i / (T - 1)) * (np.log(SIGMA_MIN) - np.log(SIGMA_MAX)))
    values[0], values[-1] = SIGMA_MAX, SIGMA_MIN  # exact endpoints
    return TimestepGrid(values=values, kind=GridKind.DPM_LOG_UNIFORM)


@dataclass(frozen=True)
class HybridPlan:
    """Global timestep sequence with a per-step solver tag.

    ``timesteps`` is in reconstruction order (strictly decreasing unless
    the plan was built by :func:`fragmented_plan`, which exists only to
    reproduce the boundary-discontinuity failure mode). ``s1``/``s2``
    are the solver-window indices under ``convention``; both are None
    for a uniform single-solver plan.
    """

    timesteps: np.ndarray
    solver_tags: tuple
    s1: Optional[int]
    s2: Optional[int]
    convention: IndexConvention
    fragmented: bool = False

    def __post_init__(self):
        if len(self.timesteps) != len(self.solver_tags):
            raise InvalidRangeError("timesteps and solver_tags lengths differ")
        if not self.fragmented:
            diffs = np.diff(self.timesteps)
            bad = np.nonzero(diffs >= 0.0)[0]
            if bad.size:
                i = int(bad[0])
                raise NonMonotoneSpliceError(i, float(self.timesteps[i]), float(self.timesteps[i + 1]))

    def __len__(self) -> int:
        return len(self.timesteps)

    def noise_order_index(self, step: int) -> int:
        """Map a step index in this plan's convention to array position."""
        if self.convention is IndexConvention.FROM_DATA:
            return len(self) - 1 - step
        return step

    def dpm_steps_in_convention(self) -> tuple:
        """Step indices tagged DPM, expressed in the plan's convention."""
        out = []
        for pos, tag in enumerate(self.solver_tags):
            if tag is SolverTag.DPM:
                if self.convention is IndexConvention.FROM_DATA:
                    out.append(len(self) - 1 - pos)
                else:
                    out.append(pos)
        return tuple(sorted(out))

    def fingerprint(self) -> str:
        """Stable content hash used to pair plans across runs."""
        import hashlib

        h = hashlib.sha256()
        h.update(self.timesteps.tobytes())
        h.update("".join(t.value for t in self.solver_tags).encode())
        h.update(self.convention.value.encode())
        return h.hexdigest()[:16]


def hybrid_grid(
    T: int,
    s1: int,
    s2: int,
    convention: IndexConvention = IndexConvention.FROM_DATA,
) -> HybridPlan:
    """Splice the two full-length grids into one global plan.

    Positions inside the window [s1, s2] (under ``convention``) take the
    log-uniform grid value and the DPM tag; every other position takes
    the linear grid value and the DDIM tag. The splice must remain
    strictly decreasing; a non-monotone result raises rather than being
    silently reordered.

    Raises:
        InvalidRangeError: if the window indices are out of range.
        NonMonotoneSpliceError: naming the first offending index.
    """
    if T < 2:
        raise InvalidRangeError(f"plan length must be >= 2, got {T}")
    if not (0 <= s1 <= s2 < T):
        raise InvalidRangeError(f"require 0 <= s1 <= s2 < T, got s1={s1}, s2={s2}, T={T}")
    tau = ddim_grid(T).values
    sigma = dpm_grid(T).values
    if convention is IndexConvention.FROM_DATA:
        lo, hi = T - 1 - s2, T - 1 - s1
    else:
        lo, hi = s1, s2
    values = tau.copy()
    values[lo : hi + 1] = sigma[lo : hi + 1]
    tags = [SolverTag.DDIM] * T
    for pos in range(lo, hi + 1):
        tags[pos] = SolverTag.DPM
    return HybridPlan(
        timesteps=values,
        solver_tags=tuple(tags),
        s1=s1,
        s2=s2,
        convention=convention,
    )


def uniform_plan(T: int, solver: SolverTag) -> HybridPlan:
    """A degenerate plan running a single solver on its own grid."""
    if solver is SolverTag.DDIM:
        grid = ddim_grid(T)
        s1 = s2 = None
    else:
        grid = dpm_grid(T)
        s1, s2 = 0, T - 1
    return HybridPlan(
        timesteps=grid.values,
        solver_tags=tuple([solver] * T),
        s1=s1,
        s2=s2,
        convention=IndexConvention.FROM_NOISE,
    )


def fragmented_plan(T: int, s1: int, s2: int) -> HybridPlan:
    """Per-segment scheduling: each solver segment restarts its own grid.

    This is the known-bad baseline: every segment spans the solver's
    full default range, so the sequence jumps back up at each solver
    switch. Monotonicity validation is bypassed; the plan exists solely
    for the stability comparison against the global plan.

    Window indices are FROM_NOISE (segment layout order).
    """
    if not (0 <= s1 <= s2 < T):
        raise InvalidRangeError(f"require 0 <= s1 <= s2 < T, got s1={s1}, s2={s2}, T={T}")
    pieces = []
    tags = []

    def _seg(kind: SolverTag, n: int):
        if n == 0:
            return
        if n == 1:
            vals = np.array([TAU_MAX if kind is SolverTag.DDIM else SIGMA_MAX])
        else:
            vals = (ddim_grid(n) if kind is SolverTag.DDIM else dpm_grid(n)).values
        pieces.append(vals)
        tags.extend([kind] * n)

    _seg(SolverTag.DDIM, s1)
    _seg(SolverTag.DPM, s2 - s1 + 1)
    _seg(SolverTag.DDIM, T - 1 - s2)
    return HybridPlan(
        timesteps=np.concatenate(pieces),
        solver_tags=tuple(tags),
        s1=s1,
        s2=s2,
        convention=IndexConvention.FROM_NOISE,
        fragmented=True,
    )


def plan_to_csv(plan: HybridPlan) -> str:
    """Serialize a plan as ``step_index,timestep,solver_tag`` rows."""
    buf = io.StringIO()
    buf.write("step_index,timestep,solver_tag\n")
    for i, (t, tag) in enumerate(zip(plan.timesteps, plan.solver_tags)):
        buf.write(f"{i},{float(t)!r},{tag.value}\n")
    return buf.getvalue()
