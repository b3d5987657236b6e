"""Parameter initialisation and the transformer building blocks both towers share.

Parameters live in flat ``dict[str, Tensor]`` maps keyed by dotted names so
the optimizer and checkpoint code never need to know the model structure.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

Params = dict[str, Tensor]


def param(arr: np.ndarray, name: str) -> Tensor:
    return Tensor(arr, requires_grad=True, name=name)


def init_linear(params: Params, prefix: str, d_in: int, d_out: int, rng, dtype, std=None):
    std = (1.0 / np.sqrt(d_in)) if std is None else std
    params[f"{prefix}.w"] = param((rng.standard_normal((d_in, d_out)) * std).astype(dtype), f"{prefix}.w")
    params[f"{prefix}.b"] = param(np.zeros(d_out, dtype=dtype), f"{prefix}.b")


def init_layer_norm(params: Params, prefix: str, d: int, dtype):
    params[f"{prefix}.g"] = param(np.ones(d, dtype=dtype), f"{prefix}.g")
    params[f"{prefix}.b"] = param(np.zeros(d, dtype=dtype), f"{prefix}.b")


def init_conv(params: Params, prefix: str, c_in: int, c_out: int, k: int, rng, dtype, bias=True):
    std = 1.0 / np.sqrt(c_in * k * k)
    w = (rng.standard_normal((c_out, c_in, k, k)) * std).astype(dtype)
    params[f"{prefix}.w"] = param(w, f"{prefix}.w")
    if bias:
        params[f"{prefix}.b"] = param(np.zeros(c_out, dtype=dtype), f"{prefix}.b")


def linear(x: Tensor, p: Params, prefix: str) -> Tensor:
    return ad.add(ad.matmul(x, p[f"{prefix}.w"]), p[f"{prefix}.b"])


def norm(x: Tensor, p: Params, prefix: str) -> Tensor:
    return ad.layer_norm(x, p[f"{prefix}.g"], p[f"{prefix}.b"])


def conv(x: Tensor, p: Params, prefix: str, stride=1, padding=0) -> Tensor:
    y = ad.conv2d(x, p[f"{prefix}.w"], stride=stride, padding=padding)
    b = p.get(f"{prefix}.b")
    if b is None:
        return y
    return ad.add(y, ad.reshape(b, (b.shape[0], 1, 1)))


def init_block(params: Params, prefix: str, d: int, rng, dtype, mlp_ratio: int = 4):
    init_layer_norm(params, f"{prefix}.ln1", d, dtype)
    for name in ("q", "k", "v", "o"):
        init_linear(params, f"{prefix}.attn.{name}", d, d, rng, dtype)
    init_layer_norm(params, f"{prefix}.ln2", d, dtype)
    init_linear(params, f"{prefix}.mlp.fc1", d, d * mlp_ratio, rng, dtype)
    init_linear(params, f"{prefix}.mlp.fc2", d * mlp_ratio, d, rng, dtype)


def attention(x: Tensor, p: Params, prefix: str, n_heads: int, mask=None) -> Tensor:
    """Multi-head self-attention over axis -2 of ``x`` [B, L, D].

    ``mask`` is an additive [L, L] array (large negatives block a pair).
    """
    b, length, d = x.shape
    if d % n_heads:
        raise ValueError(f"width {d} not divisible by {n_heads} heads")
    hd = d // n_heads

    def heads(t):
        return ad.transpose(ad.reshape(t, (b, length, n_heads, hd)), (0, 2, 1, 3))

    q = heads(linear(x, p, f"{prefix}.q"))
    k = heads(linear(x, p, f"{prefix}.k"))
    v = heads(linear(x, p, f"{prefix}.v"))
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
    if mask is not None:
        scores = ad.add(scores, Tensor(np.asarray(mask, dtype=x.dtype)))
    ctx = ad.matmul(ad.softmax(scores, axis=-1), v)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, length, d))
    return linear(ctx, p, f"{prefix}.o")


def block(x: Tensor, p: Params, prefix: str, n_heads: int, mask=None) -> Tensor:
    """Pre-norm transformer block: attention then GELU MLP, both residual."""
    x = ad.add(x, attention(norm(x, p, f"{prefix}.ln1"), p, f"{prefix}.attn", n_heads, mask))
    h = ad.gelu(linear(norm(x, p, f"{prefix}.ln2"), p, f"{prefix}.mlp.fc1"))
    return ad.add(x, linear(h, p, f"{prefix}.mlp.fc2"))


def count_params(p: Params, prefix: str = "") -> int:
    return sum(t.data.size for k, t in p.items() if k.startswith(prefix))
