"""Patch embedding and the hierarchical window-attention audio tower."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import layers as L
from .autodiff import Tensor
from .config import ConfigError, TrainConfig
from .dsp import LOG_FLOOR, MelSpectrogram


@dataclass(frozen=True)
class PatchSequence:
    tokens: np.ndarray  # [rows * cols, ph * pw]
    grid: tuple[int, int]


def patchify(mel: MelSpectrogram | np.ndarray, patch: tuple[int, int]) -> PatchSequence:
    """Cut the [F, T] grid into non-overlapping ph x pw patches.

    Edges are padded with ``log(1e-10)`` up to a multiple of the patch size.
    Patches are ordered frequency-major (row r, then column c) and each is
    flattened row-major.
    """
    values = mel.values if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    ph, pw = patch
    f, t = values.shape
    rows, cols = -(-f // ph), -(-t // pw)
    padded = np.full((rows * ph, cols * pw), LOG_FLOOR, dtype=values.dtype)
    padded[:f, :t] = values
    tokens = padded.reshape(rows, ph, cols, pw).transpose(0, 2, 1, 3).reshape(rows * cols, ph * pw)
    return PatchSequence(tokens, (rows, cols))


def _partition(x: Tensor, k: int) -> Tensor:
    b, r, c, d = x.shape
    x = ad.reshape(x, (b, r // k, k, c // k, k, d))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
    return ad.reshape(x, (b * (r // k) * (c // k), k * k, d))


def _unpartition(x: Tensor, b: int, r: int, c: int, k: int) -> Tensor:
    d = x.shape[-1]
    x = ad.reshape(x, (b, r // k, c // k, k, k, d))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
    return ad.reshape(x, (b, r, c, d))


def _merge(x: Tensor) -> Tensor:
    """Concatenate each 2x2 neighbourhood: [B,R,C,D] -> [B,R/2,C/2,4D]."""
    b, r, c, d = x.shape
    x = ad.reshape(x, (b, r // 2, 2, c // 2, 2, d))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
    return ad.reshape(x, (b, r // 2, c // 2, 4 * d))


class AudioTower:
    """Linear patch projection + absolute positions, then stages of
    window-attention blocks separated by 2x2 patch merging."""

    def __init__(self, cfg: TrainConfig):
        cfg.check_audio_grid()
        self.cfg = cfg.audio
        self.grid = cfg.patch_grid
        self.out_grid = cfg.token_grid
        self.patch_dim = cfg.audio.patch[0] * cfg.audio.patch[1]

    @property
    def n_tokens(self) -> int:
        return self.out_grid[0] * self.out_grid[1]

    @property
    def width(self) -> int:
        return self.cfg.widths[-1]

    def init(self, rng: np.random.Generator, dtype) -> L.Params:
        c = self.cfg
        p: L.Params = {}
        rows, cols = self.grid
        L.init_linear(p, "audio.patch", self.patch_dim, c.widths[0], rng, dtype)
        p["audio.pos"] = L.param((rng.standard_normal((rows * cols, c.widths[0])) * 0.02).astype(dtype), "audio.pos")
        for s, (depth, width) in enumerate(zip(c.depths, c.widths)):
            for j in range(depth):
                L.init_block(p, f"audio.s{s}.b{j}", width, rng, dtype)
            if s < len(c.depths) - 1:
                L.init_layer_norm(p, f"audio.merge{s}.ln", 4 * width, dtype)
                L.init_linear(p, f"audio.merge{s}.proj", 4 * width, c.widths[s + 1], rng, dtype)
        L.init_layer_norm(p, "audio.ln_f", c.widths[-1], dtype)
        return p

    def __call__(self, p: L.Params, patches: np.ndarray | Tensor) -> Tensor:
        """[B, rows*cols, ph*pw] patches -> [B, h_map*w_map, d_map] tokens."""
        x = patches if isinstance(patches, Tensor) else Tensor(patches)
        b = x.shape[0]
        rows, cols = self.grid
        if x.shape[1:] != (rows * cols, self.patch_dim):
            raise ad.ShapeError("encode_audio", x.shape, (b, rows * cols, self.patch_dim))
        x = ad.add(L.linear(x, p, "audio.patch"), p["audio.pos"])
        x = ad.reshape(x, (b, rows, cols, self.cfg.widths[0]))
        k = self.cfg.window
        for s, depth in enumerate(self.cfg.depths):
            if rows % k or cols % k:
                raise ConfigError(f"grid {rows}x{cols} not divisible by window {k}")
            h = _partition(x, k)
            for j in range(depth):
                h = L.block(h, p, f"audio.s{s}.b{j}", self.cfg.heads[s])
            x = _unpartition(h, b, rows, cols, k)
            if s < len(self.cfg.depths) - 1:
                x = L.linear(L.norm(_merge(x), p, f"audio.merge{s}.ln"), p, f"audio.merge{s}.proj")
                rows, cols = rows // 2, cols // 2
        x = L.norm(x, p, "audio.ln_f")
        out = ad.reshape(x, (b, rows * cols, self.width))
        assert (rows, cols) == self.out_grid
        return out


def encode_audio(patches: PatchSequence, params: L.Params, tower: AudioTower) -> np.ndarray:
    """Single-clip convenience wrapper returning [h_map*w_map, d_map] tokens."""
    with ad.no_grad():
        return tower(params, patches.tokens[None].astype(params["audio.pos"].dtype)).data[0]
