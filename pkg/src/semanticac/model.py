"""The full audio-text model and the waveform -> patch feature pipeline."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import layers as L
from .audio import AudioTower, patchify
from .autodiff import Tensor
from .config import TrainConfig
from .contrastive import contrastive_loss, similarity_matrix
from .cscm import make_head
from .dsp import Waveform, augment, clip_samples, fit_length, mel_spectrogram, resample
from .text import BpeVocab, TextTower, apply_prompt, load_vocab, tokenize


class ParamMismatchError(ValueError):
    pass


def clip_features(w: Waveform, cfg: TrainConfig, rate: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Waveform -> [rows*cols, ph*pw] patches; augments only when ``rng`` is given."""
    if w.sample_rate != rate:
        w = resample(w, rate)
    w = fit_length(w, clip_samples(cfg.mel))
    if rng is not None and cfg.augment.enabled:
        w = augment(w, cfg.augment, rng)
    mel = mel_spectrogram(w, cfg.mel)
    return patchify(mel, cfg.audio.patch).tokens


class SemanticAC:
    """Text tower, audio tower and similarity head sharing one parameter dict."""

    def __init__(self, cfg: TrainConfig, vocab: BpeVocab | None = None):
        self.cfg = cfg.validate()
        self.vocab = vocab or load_vocab(cfg)
        self.dtype = np.dtype(cfg.dtype)
        self.text = TextTower(cfg, self.vocab.vocab_size)
        self.audio = AudioTower(cfg)
        self.head = make_head(cfg)

    def init_params(self, rng: np.random.Generator) -> L.Params:
        p: L.Params = {}
        p.update(self.text.init(rng, self.dtype))
        p.update(self.audio.init(rng, self.dtype))
        p.update(self.head.init(rng, self.dtype))
        if self.cfg.learnable_scale:
            p["logit_scale"] = L.param(np.array(np.log(self.cfg.scale), dtype=self.dtype), "logit_scale")
        return p

    def params_from_arrays(self, arrays: dict[str, np.ndarray]) -> L.Params:
        expected = self.init_params(np.random.default_rng(0))
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        if missing or extra:
            raise ParamMismatchError(f"parameter names differ: missing {missing[:5]}, unexpected {extra[:5]}")
        out = {}
        for name, ref in expected.items():
            arr = np.asarray(arrays[name])
            if arr.shape != ref.shape:
                raise ParamMismatchError(f"{name}: checkpoint shape {arr.shape}, model expects {ref.shape}")
            out[name] = L.param(arr.astype(self.dtype, copy=False), name)
        return out

    # -- encoders ---------------------------------------------------------

    def tokens(self, labels, template: str | None = None):
        template = template or self.cfg.template
        return [tokenize(apply_prompt(lbl, template), self.vocab, self.cfg.text.max_len) for lbl in labels]

    def embed_text(self, p: L.Params, labels, template: str | None = None) -> Tensor:
        return self.text(p, self.tokens(labels, template))

    def embed_audio(self, p: L.Params, patches: np.ndarray) -> Tensor:
        return self.head(p, self.audio(p, np.asarray(patches, dtype=self.dtype)))

    def scale(self, p: L.Params):
        if "logit_scale" in p:
            return ad.exp(p["logit_scale"])
        return self.cfg.scale

    def loss(self, p: L.Params, patches: np.ndarray, labels) -> Tensor:
        S = similarity_matrix(self.embed_audio(p, patches), self.embed_text(p, labels))
        return contrastive_loss(S, self.scale(p))

    def class_matrix(self, p: L.Params, labels, template: str | None = None) -> np.ndarray:
        with ad.no_grad():
            return self.embed_text(p, labels, template).data.astype(np.float64)

    def audio_embeddings(self, p: L.Params, patches: np.ndarray, batch: int = 32) -> np.ndarray:
        out = []
        with ad.no_grad():
            for i in range(0, len(patches), batch):
                out.append(self.embed_audio(p, patches[i : i + batch]).data.astype(np.float64))
        return np.concatenate(out) if out else np.zeros((0, self.cfg.embed_dim))
