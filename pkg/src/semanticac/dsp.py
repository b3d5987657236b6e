"""Audio front end: WAV I/O, resampling, log-mel spectrograms, augmentation."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import AugmentConfig, MelConfig

__all__ = [
    "Waveform",
    "MelSpectrogram",
    "WavFormatError",
    "load_wav",
    "save_wav",
    "resample",
    "mel_filterbank",
    "mel_spectrogram",
    "fit_length",
    "augment",
    "write_mel_cache",
    "read_mel_cache",
    "LOG_FLOOR",
]

LOG_FLOOR = float(np.log(1e-10))


class WavFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError("waveform must be mono (1-D)")
        if not np.all(np.isfinite(s)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", s)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray  # [F, T]

    @property
    def bins(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# WAV
# ---------------------------------------------------------------------------

_PCM, _FLOAT, _EXTENSIBLE = 1, 3, 0xFFFE


def load_wav(path) -> Waveform:
    """Read a RIFF/WAVE file (PCM-16 or float-32, 1-2 channels) as mono."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    payload = None
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavFormatError(f"{path}: truncated fmt chunk")
            tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", body)
            if tag == _EXTENSIBLE and len(body) >= 26:
                tag = struct.unpack_from("<H", body, 24)[0]
            fmt = (tag, channels, rate, bits)
        elif cid == b"data":
            if len(body) < size:
                raise WavFormatError(f"{path}: truncated data chunk ({len(body)} of {size} bytes)")
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise WavFormatError(f"{path}: missing fmt chunk")
    if payload is None:
        raise WavFormatError(f"{path}: missing or truncated data chunk")
    tag, channels, rate, bits = fmt
    if channels not in (1, 2):
        raise WavFormatError(f"{path}: {channels} channels unsupported")
    if tag == _PCM and bits == 16:
        x = np.frombuffer(payload[: len(payload) // 2 * 2], dtype="<i2").astype(np.float64) / 32768.0
    elif tag == _FLOAT and bits == 32:
        x = np.frombuffer(payload[: len(payload) // 4 * 4], dtype="<f4").astype(np.float64)
    else:
        raise WavFormatError(f"{path}: unsupported encoding (format tag {tag}, {bits} bits)")
    if len(x) % channels:
        raise WavFormatError(f"{path}: truncated frame")
    x = x.reshape(-1, channels).mean(axis=1)
    return Waveform(x, rate)


def save_wav(path, samples, sample_rate: int, encoding: str = "pcm16") -> None:
    """Write [n] or [n, channels] samples; ``encoding`` is pcm16 or float32."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    channels = x.shape[1]
    if encoding == "pcm16":
        raw = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
        tag, bits = _PCM, 16
    elif encoding == "float32":
        raw = x.astype("<f4").tobytes()
        tag, bits = _FLOAT, 32
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, sample_rate, sample_rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(raw)) + raw
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

_TAPS = 64
_KAISER_BETA = 8.6


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Band-limited resampling with a 64-tap Kaiser-windowed sinc."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    src = w.sample_rate
    if target_rate == src:
        return w
    x = w.samples
    n_out = int(round(len(x) * target_rate / src))
    cutoff = min(1.0, target_rate / src)
    half = _TAPS // 2
    t = np.arange(n_out) * (src / target_rate)  # output instants in input samples
    base = np.floor(t).astype(np.int64)
    y = np.zeros(n_out)
    # chunked to bound the [chunk, taps] working set
    chunk = 8192
    offsets = np.arange(-half + 1, half + 1)
    for start in range(0, n_out, chunk):
        tb = t[start : start + chunk, None]
        idx = base[start : start + chunk, None] + offsets
        d = tb - idx
        win = np.i0(_KAISER_BETA * np.sqrt(np.clip(1.0 - (d / half) ** 2, 0.0, None))) / np.i0(_KAISER_BETA)
        h = cutoff * np.sinc(cutoff * d) * win
        valid = (idx >= 0) & (idx < len(x))
        vals = np.where(valid, x[np.clip(idx, 0, len(x) - 1)], 0.0)
        y[start : start + chunk] = (vals * h).sum(axis=1)
    return Waveform(y, target_rate)


# ---------------------------------------------------------------------------
# mel spectrogram
# ---------------------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular HTK-mel filters, shape [n_mels, n_fft // 2 + 1].

    A filter narrower than the FFT bin spacing would come out empty; it then
    gets unit weight on the bin nearest its centre.
    """
    if not 0 <= fmin < fmax <= sample_rate / 2:
        raise ValueError(f"need 0 <= fmin < fmax <= {sample_rate / 2}, got {fmin}, {fmax}")
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    for i in np.flatnonzero(fb.sum(axis=1) == 0):
        fb[i, np.argmin(np.abs(freqs - edges[i + 1]))] = 1.0
    return fb


_FB_CACHE: dict[tuple, np.ndarray] = {}


def _filterbank(sr, cfg: MelConfig) -> np.ndarray:
    key = (sr, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax)
    if key not in _FB_CACHE:
        _FB_CACHE[key] = mel_filterbank(sr, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax)
    return _FB_CACHE[key]


def n_frames(n_samples: int, cfg: MelConfig) -> int:
    padded = n_samples + 2 * (cfg.n_fft // 2)
    return 1 + (padded - cfg.n_fft) // cfg.hop


def mel_spectrogram(w: Waveform, cfg: MelConfig) -> MelSpectrogram:
    """Log-mel energies: centred Hann STFT -> power -> mel filters -> log.

    Frames are centred by reflecting ``n_fft // 2`` samples at both ends, so
    ``T = 1 + (len + 2 * (n_fft // 2) - n_fft) // hop``.
    """
    if cfg.hop > cfg.n_fft:
        raise ValueError("hop must not exceed n_fft")
    x = w.samples
    pad = cfg.n_fft // 2
    if len(x) <= pad:
        raise ValueError(f"clip of {len(x)} samples too short for n_fft={cfg.n_fft}")
    xp = np.pad(x, pad, mode="reflect")
    frames = sliding_window_view(xp, cfg.n_fft)[:: cfg.hop]
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(cfg.n_fft) / cfg.n_fft)
    power = np.abs(np.fft.rfft(frames * window, axis=1)) ** 2
    energy = _filterbank(w.sample_rate, cfg) @ power.T
    return MelSpectrogram(np.log(1e-10 + energy))


def fit_length(w: Waveform, n: int) -> Waveform:
    """Crop to, or zero-pad up to, exactly ``n`` samples."""
    x = w.samples
    if len(x) >= n:
        return Waveform(x[:n], w.sample_rate)
    return Waveform(np.pad(x, (0, n - len(x))), w.sample_rate)


def clip_samples(cfg: MelConfig) -> int:
    """Sample count giving exactly ``cfg.frames`` centred frames."""
    return (cfg.frames - 1) * cfg.hop


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def augment(w: Waveform, cfg: AugmentConfig, rng: np.random.Generator) -> Waveform:
    """Random crop (zero-padded back to length) then white noise at a random SNR."""
    x = w.samples
    n = len(x)
    lo, hi = cfg.crop_fraction_range
    frac = lo if lo == hi else rng.uniform(lo, hi)
    keep = max(1, min(n, int(round(frac * n))))
    if keep < n:
        start = int(rng.integers(0, n - keep + 1))
        x = np.concatenate([x[start : start + keep], np.zeros(n - keep)])
    else:
        x = x.copy()
    if cfg.noise_snr_db_range is not None:
        lo, hi = cfg.noise_snr_db_range
        snr = lo if lo == hi else rng.uniform(lo, hi)
        power = float(np.mean(x * x))
        if power > 0:
            x = x + rng.standard_normal(n) * np.sqrt(power / 10 ** (snr / 10))
    return Waveform(x, w.sample_rate)


# ---------------------------------------------------------------------------
# spectrogram cache
# ---------------------------------------------------------------------------

_CACHE_MAGIC = b"SACS"
_CACHE_VERSION = 1


def write_mel_cache(path, mel: MelSpectrogram) -> None:
    f, t = mel.values.shape
    header = _CACHE_MAGIC + struct.pack("<III", _CACHE_VERSION, f, t)
    Path(path).write_bytes(header + mel.values.astype("<f4").tobytes())


def read_mel_cache(path) -> MelSpectrogram:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != _CACHE_MAGIC:
        raise ValueError(f"{path}: not a spectrogram cache file")
    version, f, t = struct.unpack_from("<III", data, 4)
    if version != _CACHE_VERSION:
        raise ValueError(f"{path}: cache version {version}, expected {_CACHE_VERSION}")
    if len(data) != 16 + 4 * f * t:
        raise ValueError(f"{path}: truncated cache ({len(data)} bytes for {f}x{t})")
    values = np.frombuffer(data, dtype="<f4", offset=16).reshape(f, t).astype(np.float64)
    return MelSpectrogram(values)
