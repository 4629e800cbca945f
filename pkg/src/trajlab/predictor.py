"""Noise-predictor contract and analytic Gaussian oracle.

A predictor maps (latent, noise level, embedding) to a noise estimate.
The Gaussian oracle is the Bayes-optimal predictor for data drawn from
a diagonal Gaussian whose mean is shifted linearly by the embedding; it
gives every solver test an exact reference point.

Operations broadcast over leading axes: a latent may be shape (d,) or
(batch, d).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Protocol, runtime_checkable

import numpy as np

from .errors import DegenerateScheduleError, DimensionMismatchError
from .schedule import NoiseSchedule

ALPHA_BAR_FLOOR = 1e-9


class EmbeddingRole(str, Enum):
    CONDITIONAL = "conditional"
    NULL = "null"


@runtime_checkable
class NoisePredictor(Protocol):
    """Deterministic noise estimator epsilon(z, t, e).

    ``eps_grad_embedding`` is optional; when present it returns the
    directional derivative of eps with respect to the embedding along
    ``v``. Callers fall back to finite differences when it is absent.
    """

    def eps(self, z: np.ndarray, t: float, e: Optional[np.ndarray]) -> np.ndarray: ...


@dataclass(frozen=True)
class GaussianOracleConfig:
    """Data model for the analytic oracle.

    mu: data mean, shape (d,).
    sigma_diag: per-coordinate data standard deviations, shape (d,), > 0.
    coupling: optional (d, m) matrix; the effective mean is
        mu + coupling @ e.
    """

    mu: np.ndarray
    sigma_diag: np.ndarray
    coupling: Optional[np.ndarray] = None

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sig = np.asarray(self.sigma_diag, dtype=float)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma_diag", sig)
        if mu.shape != sig.shape:
            raise DimensionMismatchError(
                f"mu shape {mu.shape} != sigma_diag shape {sig.shape}"
            )
        if np.any(sig <= 0.0):
            raise DimensionMismatchError("sigma_diag entries must be > 0")
        if self.coupling is not None:
            K = np.asarray(self.coupling, dtype=float)
            object.__setattr__(self, "coupling", K)
            if K.ndim != 2 or K.shape[0] != mu.shape[0]:
                raise DimensionMismatchError(
                    f"coupling shape {K.shape} inconsistent with d={mu.shape[0]}"
                )


class GaussianOracle:
    """Bayes-optimal noise predictor for N(mu + K e, diag(sigma^2)) data.

    The returned estimate is the conditional expectation of the forward
    noise given the noisy latent. Written in the cancellation-safe form

        eps*(z, t, e) = sqrt(1 - ab) * (z - sqrt(ab) * mu_e) / (ab*sigma^2 + 1 - ab)

    which stays finite (exactly zero) at the no-noise boundary ab = 1.
    """

    def __init__(self, schedule: NoiseSchedule, config: GaussianOracleConfig):
        self.schedule = schedule
        self.config = config

    @property
    def dim(self) -> int:
        return self.config.mu.shape[0]

    def effective_mean(self, e: Optional[np.ndarray]) -> np.ndarray:
        cfg = self.config
        if cfg.coupling is None or e is None:
            return cfg.mu
        e = np.asarray(e, dtype=float)
        if e.shape != (cfg.coupling.shape[1],):
            raise DimensionMismatchError(
                f"embedding shape {e.shape} != ({cfg.coupling.shape[1]},)"
            )
        return cfg.mu + cfg.coupling @ e

    def eps(self, z: np.ndarray, t: float, e: Optional[np.ndarray] = None) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.dim:
            raise DimensionMismatchError(f"latent dim {z.shape[-1]} != {self.dim}")
        ab = self.schedule.alpha_bar(t)
        mu_e = self.effective_mean(e)
        denom = ab * self.config.sigma_diag**2 + (1.0 - ab)
        return np.sqrt(max(1.0 - ab, 0.0)) * (z - np.sqrt(ab) * mu_e) / denom

    def eps_grad_embedding(
        self, z: np.ndarray, t: float, e: Optional[np.ndarray], v: np.ndarray
    ) -> np.ndarray:
        """Directional derivative of eps along v.

        ``v`` may be a single direction (m,) or a stack of directions
        (m, k); the result has matching trailing shape.
        """
        v = np.asarray(v, dtype=float)
        if self.config.coupling is None:
            shape = (self.dim,) if v.ndim == 1 else (self.dim, v.shape[1])
            return np.zeros(shape)
        ab = self.schedule.alpha_bar(t)
        denom = ab * self.config.sigma_diag**2 + (1.0 - ab)
        scale = -np.sqrt(max(1.0 - ab, 0.0)) * np.sqrt(ab)
        out = scale * (self.config.coupling @ v)
        return out / (denom if v.ndim == 1 else denom[:, None])

    def posterior_mean_x0(self, z: np.ndarray, t: float, e: Optional[np.ndarray] = None) -> np.ndarray:
        """E[x0 | z_t = z], the posterior-mean form of the same estimate."""
        ab = self.schedule.alpha_bar(t)
        mu_e = self.effective_mean(e)
        var = self.config.sigma_diag**2
        gain = ab * var + (1.0 - ab)
        return mu_e + np.sqrt(ab) * var * (np.asarray(z, dtype=float) - np.sqrt(ab) * mu_e) / gain

    def exact_flow_map(
        self, z: np.ndarray, t_from: float, t_to: float, e: Optional[np.ndarray] = None
    ) -> np.ndarray:
        """Exact probability-flow transport between two noise levels.

        For Gaussian data every marginal is Gaussian and the flow is the
        per-coordinate affine quantile map; this is the closed-form
        reference solution used by convergence studies.
        """
        mu_e = self.effective_mean(e)
        var = self.config.sigma_diag**2

        def moments(t):
            ab = self.schedule.alpha_bar(t)
            return np.sqrt(ab) * mu_e, np.sqrt(ab * var + (1.0 - ab))

        m_from, s_from = moments(t_from)
        m_to, s_to = moments(t_to)
        return m_to + (s_to / s_from) * (np.asarray(z, dtype=float) - m_from)


def gaussian_oracle_eps(
    cfg: GaussianOracleConfig,
    schedule: NoiseSchedule,
    z: np.ndarray,
    t: float,
    e: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Functional form of the oracle for one-off evaluations."""
    return GaussianOracle(schedule, cfg).eps(z, t, e)


def predict_x0(schedule: NoiseSchedule, z: np.ndarray, t: float, eps: np.ndarray) -> np.ndarray:
    """Recover the data estimate implied by a noise estimate at level t.

    Returns (z - sqrt(1 - ab) * eps) / sqrt(ab). At the data boundary
    (ab = 1) this is the identity on z.

    Raises:
        DegenerateScheduleError: if alpha_bar(t) is at or below the
            numeric floor.
    """
    ab = schedule.alpha_bar(t)
    if ab <= ALPHA_BAR_FLOOR:
        raise DegenerateScheduleError(f"alpha_bar({t}) = {ab:.3e} below floor")
    return (np.asarray(z, dtype=float) - np.sqrt(max(1.0 - ab, 0.0)) * np.asarray(eps, dtype=float)) / np.sqrt(ab)


def finite_diff_embedding_grad(
    pred: NoisePredictor,
    z: np.ndarray,
    t: float,
    e: np.ndarray,
    loss_adjoint: np.ndarray,
    h: float = 1e-4,
) -> np.ndarray:
    """Central-difference gradient of <loss_adjoint, eps(z, t, e)> in e.

    The step for coordinate j is ``h * max(1, |e_j|)`` (relative step).
    Used when a predictor exposes no analytic embedding derivative.
    """
    e = np.asarray(e, dtype=float)
    a = np.asarray(loss_adjoint, dtype=float)
    grad = np.zeros_like(e)
    for j in range(e.shape[0]):
        hj = h * max(1.0, abs(e[j]))
        ep = e.copy()
        em = e.copy()
        ep[j] += hj
        em[j] -= hj
        grad[j] = float(a @ (pred.eps(z, t, ep) - pred.eps(z, t, em))) / (2.0 * hj)
    return grad


def embedding_jvp(
    pred: NoisePredictor,
    z: np.ndarray,
    t: float,
    e: np.ndarray,
    v: np.ndarray,
    h: float = 1e-6,
) -> np.ndarray:
    """Directional derivative of eps along v, analytic when available.

    ``v`` may be one direction (m,) or a stack (m, k); the fallback
    differentiates one column at a time.
    """
    fn = getattr(pred, "eps_grad_embedding", None)
    if fn is not None:
        return fn(z, t, e, v)
    v = np.asarray(v, dtype=float)
    if v.ndim == 2:
        cols = [embedding_jvp(pred, z, t, e, v[:, j], h) for j in range(v.shape[1])]
        return np.stack(cols, axis=-1)
    scale = float(np.linalg.norm(v))
    if scale == 0.0:
        return np.zeros_like(np.asarray(pred.eps(z, t, e)))
    hv = h / scale
    return (pred.eps(z, t, e + hv * v) - pred.eps(z, t, e - hv * v)) / (2.0 * hv)
