"""Run configuration: every hyperparameter, serialized as ``key = value`` text.

Nested sections flatten to dotted keys (``mel.n_fft = 1024``).  Tuples are
comma separated, ``none`` is None, ``#`` starts a comment.
"""

from __future__ import annotations

import dataclasses
import hashlib
import types
import typing
from dataclasses import dataclass, field

__all__ = [
    "MelConfig",
    "AugmentConfig",
    "TextTowerConfig",
    "AudioTowerConfig",
    "CSCMConfig",
    "TrainConfig",
    "ConfigError",
    "desk_config",
    "paper_config",
    "synth_config",
    "load_config",
    "parse_config",
]


class ConfigError(ValueError):
    pass


@dataclass
class MelConfig:
    n_fft: int = 1024
    hop: int = 320
    n_mels: int = 64
    fmin: float = 50.0
    fmax: float = 14000.0
    # clips are cropped/zero-padded so the mel has exactly this many frames
    frames: int = 64


@dataclass
class AugmentConfig:
    enabled: bool = True
    crop_fraction_range: tuple[float, float] = (0.6, 1.0)
    noise_snr_db_range: tuple[float, float] | None = (15.0, 40.0)


@dataclass
class TextTowerConfig:
    vocab_path: str | None = None  # None -> bundled vocabulary
    vocab_size: int = 0  # embedding rows; 0 -> size of the loaded vocabulary
    max_len: int = 76
    width: int = 256
    layers: int = 4
    heads: int = 4


@dataclass
class AudioTowerConfig:
    patch: tuple[int, int] = (4, 4)
    window: int = 4
    depths: tuple[int, ...] = (2, 2)
    widths: tuple[int, ...] = (96, 192)
    heads: tuple[int, ...] = (4, 4)


@dataclass
class CSCMConfig:
    reduction: int = 8
    spatial_kernel: int = 7
    # empty -> every conv keeps the token width
    channels: tuple[int, ...] = ()


@dataclass
class TrainConfig:
    lr0: float = 8e-5
    gamma: float = 0.96
    weight_decay: float = 5e-4
    momentum: float = 0.0
    batch_size: int = 16
    epochs: int = 50
    seed: int = 0
    embed_dim: int = 1024
    scale: float = 1.0
    learnable_scale: bool = False
    template: str = "an audio clip of {}"
    head: str = "cscm"
    profile: str = "desk"
    dtype: str = "float32"
    dataset: str = "synth"
    root: str = ""
    eval_fold: int = 4
    train_rate: int = 0  # 0 -> the dataset's own rate
    eval_rate: int = 0
    synth_classes: int = 4
    synth_clips: int = 32
    synth_rate: int = 16000
    synth_duration: float = 1.3
    synth_folds: int = 4
    mel: MelConfig = field(default_factory=MelConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    text: TextTowerConfig = field(default_factory=TextTowerConfig)
    audio: AudioTowerConfig = field(default_factory=AudioTowerConfig)
    cscm: CSCMConfig = field(default_factory=CSCMConfig)

    # -- derived geometry -------------------------------------------------

    @property
    def patch_grid(self) -> tuple[int, int]:
        ph, pw = self.audio.patch
        return -(-self.mel.n_mels // ph), -(-self.mel.frames // pw)

    @property
    def token_grid(self) -> tuple[int, int]:
        """(h_map, w_map) after all patch-merging stages."""
        rows, cols = self.patch_grid
        f = 2 ** (len(self.audio.depths) - 1)
        return rows // f, cols // f

    @property
    def d_map(self) -> int:
        return self.audio.widths[-1]

    @property
    def cscm_channels(self) -> tuple[int, int, int]:
        ch = tuple(self.cscm.channels) or (self.d_map,) * 3
        if len(ch) != 3:
            raise ConfigError(f"cscm.channels needs 3 entries, got {ch}")
        return ch  # type: ignore[return-value]

    def validate(self) -> "TrainConfig":
        for name in ("lr0", "batch_size", "embed_dim", "scale"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must be in (0, 1]")
        if self.weight_decay < 0 or self.momentum < 0 or self.epochs < 0:
            raise ConfigError("weight_decay, momentum and epochs must be non-negative")
        if self.template.count("{}") != 1:
            raise ConfigError(f"template needs exactly one '{{}}': {self.template!r}")
        if self.head not in ("cscm", "pool"):
            raise ConfigError(f"head must be cscm or pool, got {self.head!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.mel.hop > self.mel.n_fft:
            raise ConfigError("mel.hop must not exceed mel.n_fft")
        if self.text.width % self.text.heads:
            raise ConfigError("text.width not divisible by text.heads")
        self.check_audio_grid()
        if self.head == "cscm":
            h, w = self.token_grid
            if h < 3 or w < 3:
                raise ConfigError(f"token map {h}x{w} too small for two stride-2 3x3 convs")
            self.cscm_channels
            if self.d_map // self.cscm.reduction < 1:
                raise ConfigError("cscm.reduction larger than token width")
        return self

    def check_audio_grid(self) -> None:
        """Stage-by-stage grid arithmetic for the window/merge pattern."""
        a = self.audio
        if not (len(a.depths) == len(a.widths) == len(a.heads)) or not a.depths:
            raise ConfigError("audio.depths, audio.widths and audio.heads need equal, non-zero length")
        for w, h in zip(a.widths, a.heads):
            if w % h:
                raise ConfigError(f"audio width {w} not divisible by {h} heads")
        rows, cols = self.patch_grid
        for stage in range(len(a.depths)):
            if rows % a.window or cols % a.window:
                raise ConfigError(
                    f"stage {stage}: grid {rows}x{cols} not divisible by window {a.window}"
                )
            if stage < len(a.depths) - 1:
                if rows % 2 or cols % 2:
                    raise ConfigError(f"stage {stage}: grid {rows}x{cols} cannot be 2x2-merged")
                rows, cols = rows // 2, cols // 2

    # -- serialization ----------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for key, value in _flatten(self):
            lines.append(f"{key} = {_format(value)}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def replace(self, **changes) -> "TrainConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"mel.n_fft": 512})``."""
        cfg = parse_config(self.to_text())
        for key, value in changes.items():
            _set(cfg, key, value, raw=isinstance(value, str))
        return cfg


def _flatten(obj, prefix=""):
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(value):
            yield from _flatten(value, key + ".")
        else:
            yield key, value


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(hint, raw: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if raw.strip().lower() == "none":
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _convert(inner, raw)
    if origin is tuple:
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        elem = args[0] if args else str
        return tuple(_convert(elem, p) for p in parts)
    if hint is bool:
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"not a boolean: {raw!r}")
        return low in ("true", "1", "yes")
    if hint is int:
        return int(float(raw)) if "e" in raw.lower() else int(raw)
    if hint is float:
        return float(raw)
    return raw


def _set(cfg, key: str, value, raw: bool = True):
    target = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        if not hasattr(target, part) or not dataclasses.is_dataclass(getattr(target, part)):
            raise ConfigError(f"unknown config key {key!r}")
        target = getattr(target, part)
    name = parts[-1]
    hints = typing.get_type_hints(type(target))
    if name not in hints:
        raise ConfigError(f"unknown config key {key!r}")
    if raw:
        try:
            value = _convert(hints[name], value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    elif isinstance(value, list):
        value = tuple(value)
    setattr(target, name, value)


def desk_config() -> TrainConfig:
    return TrainConfig()


def paper_config() -> TrainConfig:
    """Full-scale geometry: 64 tokens of width 768 -> 768x8x8 map -> C=1024."""
    cfg = TrainConfig(profile="paper")
    cfg.mel = MelConfig(frames=1024)
    cfg.text = TextTowerConfig(vocab_size=49152, width=512, layers=12, heads=8)
    cfg.audio = AudioTowerConfig(
        patch=(1, 16),
        window=8,
        depths=(2, 2, 6, 2),
        widths=(96, 192, 384, 768),
        heads=(4, 8, 16, 32),
    )
    return cfg


def synth_config() -> TrainConfig:
    """Desk profile for the synthetic tone task.

    Plain SGD and the unscaled loss as for the full model; only the learning
    rate is raised (from-scratch CPU training) and batches hold 4 distinct
    classes.
    """
    cfg = TrainConfig(dataset="synth", lr0=0.1, batch_size=4, epochs=20, eval_fold=4)
    cfg.mel.fmax = 8000.0
    return cfg


PROFILES = {"desk": desk_config, "paper": paper_config, "synth": synth_config}


def parse_config(text: str) -> TrainConfig:
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        entries.append((key, value))
    profile = dict(entries).get("profile", "desk")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    cfg = PROFILES[profile]()
    for key, value in entries:
        _set(cfg, key, value)
    return cfg


def load_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
