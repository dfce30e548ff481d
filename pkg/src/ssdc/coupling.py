"""Fusing spectral invariant features with spatial backbone features.

Early pyramid levels blend a gated attention map into the backbone
features; later levels run single-head cross-attention with queries from
the spectral side. The specific (complement) planes are compressed into a
small set of guidance tokens for the detection head.

Feature maps are engine tensors shaped (batch, channels, height, width);
the two extractors here share that contract so every level of the spectral
pyramid matches its backbone counterpart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import Tensor

N_LEVELS = 5
EARLY_LEVELS = (1, 2)
LATE_LEVELS = (3, 4, 5)


@dataclass
class FeaturePyramid:
    levels: list  # five (B, C, H_l, W_l) tensors, spatial size non-increasing

    def __post_init__(self):
        if len(self.levels) != N_LEVELS:
            raise ValueError(f"expected {N_LEVELS} pyramid levels, got {len(self.levels)}")
        sizes = [lvl.data.shape[-2] * lvl.data.shape[-1] for lvl in self.levels]
        if any(a < b for a, b in zip(sizes, sizes[1:])):
            raise ValueError(f"pyramid spatial sizes must be non-increasing, got {sizes}")

    def level(self, l: int) -> Tensor:
        return self.levels[l - 1]


class SpectralPyramid(FeaturePyramid):
    """Same contract as FeaturePyramid; built from the invariant image."""

    @staticmethod
    def check_match(spec: "SpectralPyramid", base: FeaturePyramid):
        for l, (a, b) in enumerate(zip(spec.levels, base.levels), start=1):
            if a.data.shape != b.data.shape:
                raise ValueError(f"level {l}: spectral {a.data.shape} != backbone {b.data.shape}")


@dataclass
class FusionParams:
    """Cross-attention projections and the blend coefficient for one level."""

    alpha: object  # float in [0,1] or a scalar tensor
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    d: int

    def __post_init__(self):
        if self.d <= 0:
            raise ValueError(f"attention dimension must be > 0, got {self.d}")


@dataclass
class DsTokens:
    tokens: Tensor  # (B, N_t, d)

    def __post_init__(self):
        if self.tokens.data.ndim != 3:
            raise ValueError(f"tokens must be (B, N_t, d), got {self.tokens.data.shape}")
        if not np.all(np.isfinite(self.tokens.data)):
            raise ValueError("tokens contain non-finite values")

    @property
    def n_tokens(self):
        return self.tokens.data.shape[1]

    @property
    def dim(self):
        return self.tokens.data.shape[2]


# ---------------------------------------------------------------------------
# shape helpers

def to_tokens(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, H*W, C)"""
    b, c, h, w = x.data.shape
    return engine.transpose(engine.reshape(x, (b, c, h * w)), (0, 2, 1))


def from_tokens(x: Tensor, h: int, w: int) -> Tensor:
    b, s, c = x.data.shape
    return engine.reshape(engine.transpose(x, (0, 2, 1)), (b, c, h, w))


def linear_positions(x: Tensor, w: Tensor, b: Tensor = None) -> Tensor:
    """Per-position channel map of a (B, C_in, H, W) tensor: a 1x1 projection."""
    bsz, c_in, h, wd = x.data.shape
    flat = engine.reshape(to_tokens(x), (bsz * h * wd, c_in))
    out = engine.matmul(flat, w)
    if b is not None:
        out = engine.add(out, b)
    return from_tokens(engine.reshape(out, (bsz, h * wd, w.data.shape[1])), h, wd)


# ---------------------------------------------------------------------------
# fusion operations

def fuse_early(f_b: Tensor, f_inv: Tensor, alpha, gate_w: Tensor, gate_b: Tensor) -> Tensor:
    """Blend a spectrally-gated copy of the backbone features into themselves.

    The gate map is sigmoid(1x1 linear of f_inv) applied pointwise to f_b;
    alpha = 0 returns f_b unchanged, alpha = 1 returns the gated map.
    """
    if f_b.data.shape != f_inv.data.shape:
        raise ValueError(f"fuse_early: shapes {f_b.data.shape} and {f_inv.data.shape} differ")
    a_inv = engine.mul(engine.sigmoid(linear_positions(f_inv, gate_w, gate_b)), f_b)
    return engine.add(engine.mul(a_inv, alpha), engine.mul(f_b, engine.sub(1.0, engine.as_tensor(alpha))))


def fuse_late(f_b: Tensor, f_f: Tensor, params: FusionParams, return_attention: bool = False):
    """Single-head cross-attention: queries from the spectral side, keys and
    values from the backbone, all layer-normalized after projection, blended
    with the residual backbone features."""
    if f_b.data.shape != f_f.data.shape:
        raise ValueError(f"fuse_late: shapes {f_b.data.shape} and {f_f.data.shape} differ")
    b, c, h, w = f_b.data.shape
    tok_b = to_tokens(f_b)  # (B, S, C)
    tok_f = to_tokens(f_f)

    def project(tokens, weight):
        s = tokens.data.shape[1]
        flat = engine.reshape(tokens, (b * s, c))
        return engine.layer_norm(engine.reshape(engine.matmul(flat, weight), (b, s, weight.data.shape[1])))

    q = project(tok_f, params.w_q)
    k = project(tok_b, params.w_k)
    v = project(tok_b, params.w_v)
    scores = engine.mul(engine.bmm(q, engine.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(params.d))
    attn = engine.softmax(scores, axis=-1)
    ctx = engine.bmm(attn, v)  # (B, S, d)
    alpha = engine.as_tensor(params.alpha)
    out = engine.add(engine.mul(ctx, alpha), engine.mul(tok_b, engine.sub(1.0, alpha)))
    fused = from_tokens(out, h, w)
    if return_attention:
        return fused, attn
    return fused


def embed_ds_tokens(f_spe: Tensor, w_embed: Tensor, b_embed: Tensor,
                    n_tokens: int, dim: int, pool: str = "quadrant") -> DsTokens:
    """Compress the two specific-information planes into guidance tokens.

    ``quadrant`` pooling averages each plane over a 2x2 spatial split
    (8 features), ``global`` over the whole plane (2 features); a single
    linear map then produces n_tokens x dim. Purely linear by design.
    """
    if f_spe.data.ndim != 4 or f_spe.data.shape[1] != 2:
        raise ValueError(f"embed_ds_tokens expects (B, 2, H, W), got {f_spe.data.shape}")
    bsz, _, h, w = f_spe.data.shape
    if pool == "quadrant":
        if h % 2 or w % 2:
            raise ValueError(f"quadrant pooling needs even spatial dims, got {h}x{w}")
        blocks = engine.reshape(f_spe, (bsz, 2, 2, h // 2, 2, w // 2))
        pooled = engine.reshape(engine.mean(blocks, axis=(3, 5)), (bsz, 8))
    elif pool == "global":
        pooled = engine.reshape(engine.mean(f_spe, axis=(2, 3)), (bsz, 2))
    else:
        raise ValueError(f"unknown pooling {pool!r}")
    if w_embed.data.shape != (pooled.data.shape[1], n_tokens * dim):
        raise ValueError(
            f"embedding weight {w_embed.data.shape} != ({pooled.data.shape[1]}, {n_tokens * dim})")
    flat = engine.add(engine.matmul(pooled, w_embed), b_embed)
    return DsTokens(engine.reshape(flat, (bsz, n_tokens, dim)))


# ---------------------------------------------------------------------------
# five-level feature extractor: each stage linearly embeds non-overlapping
# 2x2 patches (strided pooling with learnable weights), so receptive fields
# grow to 2^l pixels and within-cell geometry stays visible to deeper levels

def patch_linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C', H/2, W/2) by a linear map of each 2x2 patch."""
    bsz, c, h, wd = x.data.shape
    if h % 2 or wd % 2:
        raise ValueError(f"patch_linear needs even spatial dims, got {h}x{wd}")
    h2, w2 = h // 2, wd // 2
    blocks = engine.transpose(engine.reshape(x, (bsz, c, h2, 2, w2, 2)), (0, 2, 4, 1, 3, 5))
    flat = engine.reshape(blocks, (bsz * h2 * w2, c * 4))
    out = engine.add(engine.matmul(flat, w), b)
    return from_tokens(engine.reshape(out, (bsz, h2 * w2, w.data.shape[1])), h2, w2)


def init_extractor_params(rng, in_channels: int, channels: int, prefix: str) -> dict:
    params = {}
    c_in = in_channels
    for l in range(1, N_LEVELS + 1):
        params[f"{prefix}.w{l}"] = engine.Tensor(
            rng.normal(0, 1.0 / np.sqrt(4 * c_in), (4 * c_in, channels)), requires_grad=True)
        params[f"{prefix}.b{l}"] = engine.Tensor(np.zeros(channels), requires_grad=True)
        c_in = channels
    return params


def extractor_stage(x: Tensor, params: dict, prefix: str, level: int) -> Tensor:
    return engine.tanh(patch_linear(x, params[f"{prefix}.w{level}"], params[f"{prefix}.b{level}"]))


def extract_pyramid(images: Tensor, params: dict, prefix: str, cls=FeaturePyramid):
    """(B, C_in, H, W) -> five levels at H/2 .. H/32, fixed channel width."""
    levels = []
    x = images
    for l in range(1, N_LEVELS + 1):
        x = extractor_stage(x, params, prefix, l)
        levels.append(x)
    return cls(levels)
