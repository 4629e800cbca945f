"""Attention-map gating: mask-selective self-attention fusion,
token-selective cross-attention replacement, layer policy, and the
masked latent blend.

Attention maps are plain arrays: a self map is (N, N) row-stochastic
with N = H*W; a cross map is (N, L) row-stochastic over L token
columns. Masks are (H, W) grids in [0, 1] and gate self maps per query
row.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvalidRangeError,
    UnknownLayerError,
    ZeroRowError,
)
from .schedule import NoiseSchedule

ROW_SUM_TOL = 1e-6
ZERO_ROW_FLOOR = 1e-12
TOKEN_COUNT = 77  # text-token axis length of a cross map in the reference backbone


class Block(str, Enum):
    DOWN = "down"
    MID = "mid"
    UP = "up"


class OverlapRule(str, Enum):
    """How the residual weight treats the mask overlap.

    INTERSECTION is the literal fusion rule (residual weight vanishes
    only inside the overlap); UNION is the ablation variant where the
    residual also vanishes in single-source zones.
    """

    INTERSECTION = "intersection"
    UNION = "union"


@dataclass(frozen=True)
class SpatialMask:
    """Real-valued mask grid in [0, 1] with its resolution recorded."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 2:
            raise DimensionMismatchError(f"mask must be 2-D, got shape {v.shape}")
        if np.any(v < 0.0) or np.any(v > 1.0):
            raise InvalidRangeError("mask entries must lie in [0, 1]")

    @property
    def resolution(self) -> Tuple[int, int]:
        return self.values.shape

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


def resample_mask(mask: SpatialMask, resolution: Tuple[int, int], binary_threshold: Optional[float] = 0.5) -> SpatialMask:
    """Nearest-neighbor resample; binary masks re-thresholded at 0.5."""
    H, W = resolution
    h, w = mask.resolution
    if (h, w) == (H, W):
        return mask
    rows = (np.arange(H) * h) // H
    cols = (np.arange(W) * w) // W
    out = mask.values[np.ix_(rows, cols)]
    if binary_threshold is not None and set(np.unique(mask.values)) <= {0.0, 1.0}:
        out = (out >= binary_threshold).astype(float)
    return SpatialMask(values=out)


def load_mask(path: str) -> SpatialMask:
    """Read a mask from a plain-text grid or a PGM (P2/P5) file.

    Text grids hold one row of numbers per line; values above 1 are
    interpreted on a 0..255 scale.
    """
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head in (b"P2", b"P5"):
            return _load_pgm(fh)
        rows = []
        for line in fh.read().decode("utf-8").splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([float(v) for v in line.split()])
        grid = np.array(rows, dtype=float)
        if grid.size and grid.max() > 1.0:
            grid = grid / 255.0
        return SpatialMask(values=grid)


def _load_pgm(fh) -> SpatialMask:
    magic = fh.readline().strip()

    def next_token():
        while True:
            line = fh.readline()
            if not line:
                raise ValueError("truncated PGM header")
            line = line.split(b"#")[0].strip()
            if line:
                return line.split()

    tokens: list = []
    while len(tokens) < 3:
        tokens.extend(next_token())
    w, h, maxval = int(tokens[0]), int(tokens[1]), int(tokens[2])
    if magic == b"P2":
        data = np.array(fh.read().split(), dtype=float)
    else:
        raw = fh.read(w * h)
        data = np.frombuffer(raw, dtype=np.uint8).astype(float)
    grid = data[: w * h].reshape(h, w) / maxval
    return SpatialMask(values=grid)


def validate_self_attn(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionMismatchError(f"self map must be square, got {s.shape}")
    if np.any(s < 0.0):
        raise InvalidRangeError("self map entries must be >= 0")
    sums = s.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
        raise InvalidRangeError("self map rows must sum to 1 within 1e-6")
    return s


def validate_cross_attn(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise DimensionMismatchError(f"cross map must be 2-D, got {a.shape}")
    if np.any(a < 0.0):
        raise InvalidRangeError("cross map entries must be >= 0")
    sums = a.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
        raise InvalidRangeError("cross map rows must sum to 1 within 1e-6")
    return a


@dataclass(frozen=True)
class RegionWeights:
    """Per-pixel fusion weights for the two sources and the residual."""

    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray


def compute_region_weights(
    m1: SpatialMask,
    m2: SpatialMask,
    w_hat: float,
    overlap_rule: OverlapRule = OverlapRule.INTERSECTION,
) -> RegionWeights:
    """Evaluate the fusion-weight fields from the two masks.

    w1 = m1 (1 - m2) + w_hat (m1 m2)
    w2 = m2 (1 - m1) + (1 - w_hat) (m1 m2)
    w3 = 1 - (m1 m2)            [INTERSECTION rule]
    w3 = 1 - (m1 + m2 - m1 m2)  [UNION rule, ablation variant]

    Exclusive zones keep their source at full weight; overlapping zones
    split between sources by w_hat.
    """
    if not (0.0 <= w_hat <= 1.0):
        raise InvalidRangeError(f"w_hat must be in [0, 1], got {w_hat}")
    if m1.resolution != m2.resolution:
        raise DimensionMismatchError(f"mask resolutions {m1.resolution} vs {m2.resolution}")
    a, b = m1.values, m2.values
    inter = a * b
    w1 = a * (1.0 - b) + w_hat * inter
    w2 = b * (1.0 - a) + (1.0 - w_hat) * inter
    if overlap_rule is OverlapRule.INTERSECTION:
        w3 = 1.0 - inter
    else:
        w3 = 1.0 - (a + b - inter)
    return RegionWeights(w1=w1, w2=w2, w3=w3)


def fuse_self_attention(
    s1: np.ndarray,
    s2: np.ndarray,
    s3: np.ndarray,
    weights: RegionWeights,
) -> np.ndarray:
    """Blend three self maps per query row, then re-normalize rows.

    Row i of the raw blend is w1[i] s1[i,:] + w2[i] s2[i,:] + w3[i] s3[i,:];
    each row is then divided by its sum so the output is row-stochastic.

    Raises:
        ZeroRowError: if some fused row sums to (numerically) zero.
    """
    s1 = validate_self_attn(s1)
    s2 = validate_self_attn(s2)
    s3 = validate_self_attn(s3)
    if not (s1.shape == s2.shape == s3.shape):
        raise DimensionMismatchError("self maps must share one shape")
    n = s1.shape[0]
    w1, w2, w3 = (w.reshape(-1) for w in (weights.w1, weights.w2, weights.w3))
    if w1.shape[0] != n:
        raise DimensionMismatchError(
            f"weights cover {w1.shape[0]} pixels but maps have {n} rows"
        )
    raw = w1[:, None] * s1 + w2[:, None] * s2 + w3[:, None] * s3
    sums = raw.sum(axis=1)
    dead = np.nonzero(sums <= ZERO_ROW_FLOOR)[0]
    if dead.size:
        raise ZeroRowError(f"fused rows {dead.tolist()} sum to <= {ZERO_ROW_FLOOR}")
    return raw / sums[:, None]


def replace_cross_attention(
    a1: np.ndarray,
    a2: np.ndarray,
    a3: np.ndarray,
    t1: Iterable[int],
    t2: Iterable[int],
) -> np.ndarray:
    """Transplant whole per-token columns into the target cross map.

    Column c comes from a1 if c is in t1, from a2 if c is in t2, and is
    left untouched otherwise. The token sets must be disjoint and in
    range.
    """
    a1 = validate_cross_attn(a1)
    a2 = validate_cross_attn(a2)
    a3 = validate_cross_attn(a3)
    if not (a1.shape == a2.shape == a3.shape):
        raise DimensionMismatchError("cross maps must share one shape")
    set1, set2 = set(int(i) for i in t1), set(int(i) for i in t2)
    if set1 & set2:
        raise InvalidRangeError(f"token sets overlap: {sorted(set1 & set2)}")
    L = a3.shape[1]
    for idx in set1 | set2:
        if not (0 <= idx < L):
            raise InvalidRangeError(f"token index {idx} outside [0, {L - 1}]")
    out = a3.copy()
    for c in set1:
        out[:, c] = a1[:, c]
    for c in set2:
        out[:, c] = a2[:, c]
    return out


@dataclass(frozen=True)
class LayerRule:
    block: Block
    resolution: int
    self_replace: bool
    cross_replace: bool


@dataclass(frozen=True)
class GatingConfig:
    """Everything the gating stage needs at one attention site."""

    w_hat: float
    token_set_1: Tuple[int, ...]
    token_set_2: Tuple[int, ...]
    layer_policy: Tuple[LayerRule, ...]
    overlap_rule: OverlapRule = OverlapRule.INTERSECTION

    def __post_init__(self):
        if not (0.0 <= self.w_hat <= 1.0):
            raise InvalidRangeError(f"w_hat must be in [0, 1], got {self.w_hat}")
        if set(self.token_set_1) & set(self.token_set_2):
            raise InvalidRangeError("token sets must be disjoint")


def default_layer_policy(resolutions: Sequence[Tuple[Block, int]], up_256_self: bool = False) -> Tuple[LayerRule, ...]:
    """Self fusion confined to down/mid blocks; cross replacement everywhere.

    The 256-resolution up-block self flag is off by default and only
    enabled explicitly.
    """
    rules = []
    for block, res in resolutions:
        if block is Block.UP:
            self_rep = up_256_self and res == 256
        else:
            self_rep = True
        rules.append(LayerRule(block=block, resolution=res, self_replace=self_rep, cross_replace=True))
    return tuple(rules)


def apply_layer_policy(
    config: GatingConfig,
    layer: Tuple[Block, int],
    s_maps: Tuple[np.ndarray, np.ndarray, np.ndarray],
    a_maps: Tuple[np.ndarray, np.ndarray, np.ndarray],
    weights: RegionWeights,
):
    """Gate one layer's maps according to its policy entry.

    Returns (self_map, cross_map) for the target path: fused/replaced
    where the rule's flags are set, the path's own maps otherwise.

    Raises:
        UnknownLayerError: if the layer is absent from the policy.
    """
    rule = None
    for r in config.layer_policy:
        if r.block is layer[0] and r.resolution == layer[1]:
            rule = r
            break
    if rule is None:
        raise UnknownLayerError(f"layer {layer} not covered by the policy")
    s1, s2, s3 = s_maps
    a1, a2, a3 = a_maps
    s_out = fuse_self_attention(s1, s2, s3, weights) if rule.self_replace else s3
    a_out = (
        replace_cross_attention(a1, a2, a3, config.token_set_1, config.token_set_2)
        if rule.cross_replace
        else a3
    )
    return s_out, a_out


def latent_blend(
    z_gen: np.ndarray,
    z_src: np.ndarray,
    mask: SpatialMask,
    t: float,
    schedule: NoiseSchedule,
    noise: np.ndarray,
) -> np.ndarray:
    """Keep generated content inside the mask, re-noised source outside.

    z = mask * z_gen + (1 - mask) * (sqrt(ab) z_src + sqrt(1 - ab) noise)

    The noise is caller-supplied so blends stay deterministic.
    """
    z_gen = np.asarray(z_gen, dtype=float)
    z_src = np.asarray(z_src, dtype=float)
    noise = np.asarray(noise, dtype=float)
    m = mask.flat()
    if not (z_gen.shape == z_src.shape == noise.shape) or z_gen.shape[-1] != m.shape[0]:
        raise DimensionMismatchError(
            f"latents {z_gen.shape}/{z_src.shape}/{noise.shape} vs mask {m.shape}"
        )
    ab = schedule.alpha_bar(t)
    renoised = np.sqrt(ab) * z_src + np.sqrt(max(1.0 - ab, 0.0)) * noise
    return m * z_gen + (1.0 - m) * renoised
