"""Synthetic attention substrate for gating experiments.

A fixed, seeded generator produces row-stochastic self and cross maps
as deterministic functions of the current latent (softmax of pairwise
affinities against seeded biases and token keys), and a refinement
operator feeds those maps back into the noise prediction. This gives
the gating stage a live substrate without any neural backbone.

Layer layout mirrors the reference architecture's naming: full-grid
attention in the down and up blocks, a pooled 2x-coarser mid block.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .errors import DimensionMismatchError
from .predictor import NoisePredictor, embedding_jvp, predict_x0
from .schedule import NoiseSchedule
from .gating import Block

LayerTag = Tuple[Block, int]


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    w = np.exp(shifted)
    return w / w.sum(axis=1, keepdims=True)


def _pool2(grid_vec: np.ndarray, h: int, w: int) -> np.ndarray:
    """2x average pooling; accepts (d,) or (d, k) stacks of grid vectors."""
    tail = grid_vec.shape[1:]
    g = grid_vec.reshape(h, w, *tail)
    pooled = g.reshape(h // 2, 2, w // 2, 2, *tail).mean(axis=(1, 3))
    return pooled.reshape(h * w // 4, *tail)


def _unpool2(vec: np.ndarray, h: int, w: int) -> np.ndarray:
    tail = vec.shape[1:]
    g = vec.reshape(h // 2, w // 2, *tail)
    return np.repeat(np.repeat(g, 2, axis=0), 2, axis=1).reshape(h * w, *tail)


@dataclass
class ToyAttentionModel:
    """Seeded attention-map generator over an (H, W) latent grid.

    token_values maps each text token to a content pattern read out by
    cross attention; token_keys drives where each token attends. Both
    are fixed at construction, so maps depend only on the current
    latent.
    """

    grid: Tuple[int, int]
    token_count: int
    seed: int = 0
    self_temp: float = 1.0
    cross_temp: float = 1.0
    refine_strength: float = 0.35
    cross_gain: float = 1.0
    token_keys: Optional[np.ndarray] = None  # (L, d) full-resolution key patterns
    token_values: Optional[np.ndarray] = None  # (L, d) full-resolution content patterns

    def __post_init__(self):
        h, w = self.grid
        if h % 2 or w % 2:
            raise DimensionMismatchError(f"grid sides must be even, got {self.grid}")
        d = h * w
        rng = np.random.default_rng(self.seed)
        if self.token_keys is None:
            self.token_keys = rng.normal(size=(self.token_count, d)) * 0.5
        if self.token_values is None:
            self.token_values = np.zeros((self.token_count, d))
        self.token_keys = np.asarray(self.token_keys, dtype=float)
        self.token_values = np.asarray(self.token_values, dtype=float)
        if self.token_keys.shape != (self.token_count, d):
            raise DimensionMismatchError(f"token_keys shape {self.token_keys.shape}")
        if self.token_values.shape != (self.token_count, d):
            raise DimensionMismatchError(f"token_values shape {self.token_values.shape}")
        self._self_bias: Dict[LayerTag, np.ndarray] = {}
        for tag in self.layer_tags():
            n = tag[1]
            b = rng.normal(size=(n, n)) * 0.1
            self._self_bias[tag] = (b + b.T) / 2.0

    @property
    def dim(self) -> int:
        return self.grid[0] * self.grid[1]

    def layer_tags(self) -> Tuple[LayerTag, ...]:
        h, w = self.grid
        full = h * w
        mid = (h // 2) * (w // 2)
        return ((Block.DOWN, full), (Block.MID, mid), (Block.UP, full))

    def _to_layer(self, vec: np.ndarray, tag: LayerTag) -> np.ndarray:
        h, w = self.grid
        if tag[1] == self.dim:
            return vec
        return _pool2(vec, h, w)

    def _from_layer(self, vec: np.ndarray, tag: LayerTag) -> np.ndarray:
        h, w = self.grid
        if tag[1] == self.dim:
            return vec
        return _unpool2(vec, h, w)

    def self_map(self, z: np.ndarray, tag: LayerTag) -> np.ndarray:
        """Row-stochastic (n, n) affinity map of the latent at this layer."""
        x = self._to_layer(np.asarray(z, dtype=float), tag)
        diff2 = (x[:, None] - x[None, :]) ** 2
        logits = -diff2 / self.self_temp + self._self_bias[tag]
        return _softmax_rows(logits)

    def cross_map(self, z: np.ndarray, tag: LayerTag) -> np.ndarray:
        """Row-stochastic (n, L) token-affinity map at this layer."""
        x = self._to_layer(np.asarray(z, dtype=float), tag)
        keys = np.stack([self._to_layer(k, tag) for k in self.token_keys])
        logits = (x[None, :] * keys).T / self.cross_temp
        return _softmax_rows(logits)

    def maps(self, z: np.ndarray) -> Dict[LayerTag, Tuple[np.ndarray, np.ndarray]]:
        """All layers' (self, cross) maps for one latent."""
        return {tag: (self.self_map(z, tag), self.cross_map(z, tag)) for tag in self.layer_tags()}

    def _attended_x0(self, x0: np.ndarray, maps: Dict[LayerTag, Tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
        """Attention readout: spatial mixing plus token-content injection."""
        acc = np.zeros(self.dim)
        tags = self.layer_tags()
        for tag in tags:
            s_map, a_map = maps[tag]
            x_layer = self._to_layer(x0, tag)
            vals = np.stack([self._to_layer(v, tag) for v in self.token_values])
            mixed = s_map @ x_layer
            cross = self.cross_gain * np.einsum("il,li->i", a_map, vals)
            acc += self._from_layer(mixed + cross, tag)
        return acc / len(tags)

    def _mix_linear(self, vec: np.ndarray, maps) -> np.ndarray:
        """Linear part of the readout (token content excluded).

        Accepts (d,) or (d, k) stacks.
        """
        acc = np.zeros(vec.shape)
        tags = self.layer_tags()
        for tag in tags:
            s_map, _ = maps[tag]
            acc += self._from_layer(s_map @ self._to_layer(vec, tag), tag)
        return acc / len(tags)

    def refine_eps(
        self,
        schedule: NoiseSchedule,
        z: np.ndarray,
        t: float,
        eps_base: np.ndarray,
        maps: Dict[LayerTag, Tuple[np.ndarray, np.ndarray]],
    ) -> np.ndarray:
        """Pull the implied data estimate toward its attention readout.

        eps_ref = eps + rho * sqrt(ab) * (x0 - readout(x0)); the implied
        data estimate moves toward the readout with weight
        rho * sqrt(1 - ab), vanishing at the data end.
        """
        ab = schedule.alpha_bar(t)
        x0 = predict_x0(schedule, z, t, eps_base)
        target = self._attended_x0(x0, maps)
        return eps_base + self.refine_strength * np.sqrt(ab) * (x0 - target)


class AttentiveToyPredictor:
    """Base predictor wrapped with the attention readout.

    ``map_source`` returns the maps to use for a given latent; the
    default computes the path's own maps, while a gated path receives a
    callback that injects other paths' maps per the layer policy. Maps
    depend only on the latent, never on the embedding, so the embedding
    derivative chains through the (affine) readout exactly.
    """

    def __init__(
        self,
        base: NoisePredictor,
        model: ToyAttentionModel,
        schedule: NoiseSchedule,
        map_source: Optional[Callable[[np.ndarray, float], Dict[LayerTag, Tuple[np.ndarray, np.ndarray]]]] = None,
    ):
        self.base = base
        self.model = model
        self.schedule = schedule
        self.map_source = map_source or (lambda z, t: model.maps(z))

    def eps(self, z: np.ndarray, t: float, e: Optional[np.ndarray]) -> np.ndarray:
        eps_b = self.base.eps(z, t, e)
        maps = self.map_source(z, t)
        return self.model.refine_eps(self.schedule, z, t, eps_b, maps)

    def eps_grad_embedding(self, z, t, e, v):
        jv = embedding_jvp(self.base, z, t, e, v)
        ab = self.schedule.alpha_bar(t)
        s = np.sqrt(max(1.0 - ab, 0.0))
        maps = self.map_source(z, t)
        # d x0 / de = -(s / sqrt(ab)) * J v; the readout's linear part is
        # the only map-dependent term that survives differentiation.
        dx0 = -(s / np.sqrt(ab)) * jv
        return jv + self.model.refine_strength * np.sqrt(ab) * (dx0 - self.model._mix_linear(dx0, maps))
