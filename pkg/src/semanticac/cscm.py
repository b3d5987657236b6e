"""Similarity-calculation head: token map -> conv attention -> conv stack -> C.

Also holds the mean-pool baseline head used for the text-assistance-only
ablation.  Both heads share the ``init(rng, dtype)`` / ``__call__(params,
tokens)`` interface so further heads can slot in.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import layers as L
from .autodiff import Tensor
from .config import ConfigError, TrainConfig


def reshape_tokens(tokens: Tensor, h: int, w: int) -> Tensor:
    """[B, h*w, d] (or [h*w, d]) tokens -> [B, d, h, w] (or [d, h, w]) map.

    Token k lands in cell (k // w, k % w); the token width becomes depth.
    """
    tokens = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    single = tokens.ndim == 2
    t = ad.reshape(tokens, (1, *tokens.shape)) if single else tokens
    b, n, d = t.shape
    if n != h * w:
        raise ad.ShapeError("reshape_tokens", (n, d), (h, w), detail=f"{n} tokens != {h}*{w}")
    m = ad.transpose(ad.reshape(t, (b, h, w, d)), (0, 3, 1, 2))
    return ad.reshape(m, (d, h, w)) if single else m


def flatten_map(m: Tensor) -> Tensor:
    """Inverse of ``reshape_tokens`` for batched maps."""
    b, d, h, w = m.shape
    return ad.reshape(ad.transpose(m, (0, 2, 3, 1)), (b, h * w, d))


def channel_gate(m: Tensor, p: L.Params, prefix: str = "cscm.attn") -> Tensor:
    """[B, d] sigmoid gate from avg- and max-pooled maps through a shared MLP."""
    avg = ad.mean_pool(m, axis=(2, 3), keepdims=False)
    mx = ad.max_pool(m, axis=(2, 3), keepdims=False)

    def mlp(v):
        return L.linear(ad.gelu(L.linear(v, p, f"{prefix}.fc1")), p, f"{prefix}.fc2")

    return ad.sigmoid(ad.add(mlp(avg), mlp(mx)))


def spatial_gate(m: Tensor, p: L.Params, prefix: str = "cscm.attn", kernel: int = 7) -> Tensor:
    """[B, 1, h, w] sigmoid gate from channel-wise mean and max maps."""
    pooled = ad.concat(
        [ad.mean_pool(m, axis=1, keepdims=True), ad.max_pool(m, axis=1, keepdims=True)], axis=1
    )
    return ad.sigmoid(L.conv(pooled, p, f"{prefix}.spatial", stride=1, padding=kernel // 2))


def conv_attention(m: Tensor, p: L.Params, prefix: str = "cscm.attn", kernel: int = 7) -> Tensor:
    """Channel gate then spatial gate on a [B, d, h, w] map; shape preserved."""
    b, d, _, _ = m.shape
    m = ad.mul(m, ad.reshape(channel_gate(m, p, prefix), (b, d, 1, 1)))
    return ad.mul(m, spatial_gate(m, p, prefix, kernel))


def project(m: Tensor, p: L.Params, prefix: str = "cscm.head") -> Tensor:
    """conv3x3/2 -> GELU -> conv3x3/2 -> GELU -> conv1x1 -> global avg -> linear."""
    x = ad.gelu(L.conv(m, p, f"{prefix}.conv1", stride=2, padding=1))
    x = ad.gelu(L.conv(x, p, f"{prefix}.conv2", stride=2, padding=1))
    x = L.conv(x, p, f"{prefix}.conv3")
    x = ad.mean_pool(x, axis=(2, 3), keepdims=False)
    return L.linear(x, p, f"{prefix}.fc")


def baseline_pool_project(tokens: Tensor, p: L.Params, prefix: str = "pool") -> Tensor:
    """Mean over the token axis then a linear map to C."""
    return L.linear(ad.mean_pool(tokens, axis=-2, keepdims=False), p, f"{prefix}.fc")


class CSCMHead:
    def __init__(self, cfg: TrainConfig):
        self.h, self.w = cfg.token_grid
        self.d = cfg.d_map
        self.embed_dim = cfg.embed_dim
        self.reduction = cfg.cscm.reduction
        self.kernel = cfg.cscm.spatial_kernel
        self.channels = cfg.cscm_channels
        if self.h < 3 or self.w < 3:
            raise ConfigError(f"map {self.h}x{self.w} too small for the stride-2 conv stack")

    def init(self, rng: np.random.Generator, dtype) -> L.Params:
        p: L.Params = {}
        hidden = max(1, self.d // self.reduction)
        L.init_linear(p, "cscm.attn.fc1", self.d, hidden, rng, dtype)
        L.init_linear(p, "cscm.attn.fc2", hidden, self.d, rng, dtype)
        L.init_conv(p, "cscm.attn.spatial", 2, 1, self.kernel, rng, dtype)
        c1, c2, c3 = self.channels
        L.init_conv(p, "cscm.head.conv1", self.d, c1, 3, rng, dtype)
        L.init_conv(p, "cscm.head.conv2", c1, c2, 3, rng, dtype)
        L.init_conv(p, "cscm.head.conv3", c2, c3, 1, rng, dtype)
        L.init_linear(p, "cscm.head.fc", c3, self.embed_dim, rng, dtype)
        return p

    def __call__(self, p: L.Params, tokens: Tensor) -> Tensor:
        m = reshape_tokens(tokens, self.h, self.w)
        return project(conv_attention(m, p, kernel=self.kernel), p)

    @staticmethod
    def param_count(d: int, c: int, channels, reduction: int = 8, kernel: int = 7) -> int:
        """Parameter count from config arithmetic alone."""
        hidden = max(1, d // reduction)
        c1, c2, c3 = channels
        attn = (d * hidden + hidden) + (hidden * d + d) + (2 * kernel * kernel + 1)
        convs = (d * c1 * 9 + c1) + (c1 * c2 * 9 + c2) + (c2 * c3 + c3)
        return attn + convs + c3 * c + c


class PoolHead:
    def __init__(self, cfg: TrainConfig):
        self.d = cfg.d_map
        self.embed_dim = cfg.embed_dim

    def init(self, rng: np.random.Generator, dtype) -> L.Params:
        p: L.Params = {}
        L.init_linear(p, "pool.fc", self.d, self.embed_dim, rng, dtype)
        return p

    def __call__(self, p: L.Params, tokens: Tensor) -> Tensor:
        return baseline_pool_project(tokens, p)


def make_head(cfg: TrainConfig):
    return CSCMHead(cfg) if cfg.head == "cscm" else PoolHead(cfg)


def dense_projection_params(n_tokens: int, d: int, c: int) -> int:
    """A single dense map from the flattened token matrix to C."""
    return n_tokens * d * c + c
