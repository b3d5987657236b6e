"""Dataset metadata (ESC-50, UrbanSound8K), fold splits, a synthetic tone set and a batch sampler."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import Waveform

log = logging.getLogger(__name__)

ESC50_CLASSES = [
    "dog", "rooster", "pig", "cow", "frog", "cat", "hen", "insects", "sheep", "crow",
    "rain", "sea_waves", "crackling_fire", "crickets", "chirping_birds", "water_drops",
    "wind", "pouring_water", "toilet_flush", "thunderstorm", "crying_baby", "sneezing",
    "clapping", "breathing", "coughing", "footsteps", "laughing", "brushing_teeth",
    "snoring", "drinking_sipping", "door_wood_knock", "mouse_click", "keyboard_typing",
    "door_wood_creaks", "can_opening", "washing_machine", "vacuum_cleaner", "clock_alarm",
    "clock_tick", "glass_breaking", "helicopter", "chainsaw", "siren", "car_horn", "engine",
    "train", "church_bells", "airplane", "fireworks", "hand_saw",
]  # fmt: skip

US8K_CLASSES = [
    "air_conditioner", "car_horn", "children_playing", "dog_bark", "drilling",
    "engine_idling", "gun_shot", "jackhammer", "siren", "street_music",
]  # fmt: skip


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    path: str
    class_id: int
    label: str
    fold: int
    waveform: Waveform | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    n_classes: int
    n_folds: int
    labels: tuple[str, ...]
    train_rate: int
    eval_rate: int

    def __post_init__(self):
        if len(self.labels) != self.n_classes:
            raise DatasetError(f"{self.name}: {len(self.labels)} labels for {self.n_classes} classes")


def label_text(name: str) -> str:
    return name.replace("_", " ").strip().lower()


def _read_csv(path: Path, columns: tuple[str, ...]) -> list[dict]:
    if not path.exists():
        raise DatasetError(f"metadata file not found: {path}")
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DatasetError(f"{path}: empty metadata file")
        for col in columns:
            if col not in reader.fieldnames:
                raise DatasetError(f"{path}: missing column {col!r}")
        rows = list(reader)
    if not rows:
        raise DatasetError(f"{path}: no rows")
    return rows


def _parse_rows(rows, path, canonical, n_folds, cols, audio_path):
    fname, fold_col, id_col, name_col = cols
    samples = []
    for lineno, row in enumerate(rows, 2):
        try:
            fold, cid = int(row[fold_col]), int(row[id_col])
        except (TypeError, ValueError):
            raise DatasetError(f"{path}:{lineno}: malformed {fold_col}/{id_col}") from None
        if not 1 <= fold <= n_folds:
            raise DatasetError(f"{path}:{lineno}: fold {fold} outside 1..{n_folds}")
        if not 0 <= cid < len(canonical):
            raise DatasetError(f"{path}:{lineno}: class id {cid} outside 0..{len(canonical) - 1}")
        name = row[name_col].strip()
        if label_text(name) != label_text(canonical[cid]):
            raise DatasetError(f"{path}:{lineno}: class {cid} is {canonical[cid]!r}, row says {name!r}")
        samples.append(Sample(str(audio_path(row[fname], fold)), cid, label_text(canonical[cid]), fold))
    return samples


def load_esc50(root) -> tuple[DatasetSpec, list[Sample]]:
    """``root/meta/esc50.csv`` with audio under ``root/audio/``."""
    root = Path(root)
    path = root / "meta" / "esc50.csv"
    cols = ("filename", "fold", "target", "category")
    rows = _read_csv(path, cols)
    samples = _parse_rows(rows, path, ESC50_CLASSES, 5, cols, lambda f, _: root / "audio" / f)
    if len(samples) != 2000:
        log.warning("ESC-50 metadata has %d clips, expected 2000", len(samples))
    spec = DatasetSpec("esc50", 50, 5, tuple(label_text(c) for c in ESC50_CLASSES), 44100, 32000)
    return spec, samples


def load_us8k(root) -> tuple[DatasetSpec, list[Sample]]:
    """``root/metadata/UrbanSound8K.csv`` with audio under ``root/audio/fold{N}/``."""
    root = Path(root)
    path = root / "metadata" / "UrbanSound8K.csv"
    cols = ("slice_file_name", "fold", "classID", "class")
    rows = _read_csv(path, cols)
    samples = _parse_rows(rows, path, US8K_CLASSES, 10, cols, lambda f, k: root / "audio" / f"fold{k}" / f)
    if len(samples) != 8732:
        log.warning("US8K metadata has %d clips, expected 8732", len(samples))
    spec = DatasetSpec("us8k", 10, 10, tuple(label_text(c) for c in US8K_CLASSES), 44100, 44100)
    return spec, samples


def fold_split(samples: list[Sample], eval_fold: int) -> tuple[list[Sample], list[Sample]]:
    train = [s for s in samples if s.fold != eval_fold]
    held = [s for s in samples if s.fold == eval_fold]
    if not held:
        raise DatasetError(f"fold {eval_fold} has no samples")
    return train, held


def tone_frequency(k: int) -> float:
    return 300.0 * 2.0 ** (k / 2)


def synth_tone_dataset(
    n_classes: int = 4,
    clips_per_class: int = 32,
    sample_rate: int = 16000,
    duration: float = 1.3,
    rng: np.random.Generator | int = 0,
    n_folds: int = 4,
    noise_std: float = 0.05,
) -> tuple[DatasetSpec, list[Sample]]:
    """Class k is a sine near 300 * 2**(k/2) Hz with random phase, +-10%
    frequency jitter and white noise.  Folds are assigned round-robin."""
    if not 1 <= n_classes <= 8:
        raise DatasetError("synthetic tone set supports 1..8 classes")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    labels = tuple(f"tone {round(tone_frequency(k))} hz" for k in range(n_classes))
    samples = []
    for k in range(n_classes):
        for j in range(clips_per_class):
            f = tone_frequency(k) * rng.uniform(0.9, 1.1)
            phase = rng.uniform(0, 2 * np.pi)
            x = 0.5 * np.sin(2 * np.pi * f * t + phase) + noise_std * rng.standard_normal(n)
            samples.append(
                Sample(f"synth/{k}/{j}", k, labels[k], j % n_folds + 1, Waveform(x, sample_rate))
            )
    spec = DatasetSpec("synth", n_classes, n_folds, labels, sample_rate, sample_rate)
    return spec, samples


class BatchSampler:
    """Seeded batches that hold distinct classes whenever enough remain.

    Each epoch the per-class queues are shuffled; a batch takes one sample
    from each of the classes with the most samples left (random tie-break).
    Only when fewer classes than ``batch_size`` remain are duplicates used.
    """

    def __init__(self, samples: list[Sample], batch_size: int, seed: int = 0):
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        self.samples = list(samples)
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)

    def epoch(self) -> list[list[Sample]]:
        queues: dict[int, list[int]] = {}
        for i, s in enumerate(self.samples):
            queues.setdefault(s.class_id, []).append(i)
        for q in queues.values():
            self.rng.shuffle(q)
        batches = []
        remaining = len(self.samples)
        while remaining:
            batch = []
            while len(batch) < self.batch_size and remaining:
                live = [c for c, q in queues.items() if q]
                used = {self.samples[i].class_id for i in batch}
                fresh = [c for c in live if c not in used] or live
                noise = self.rng.random(len(fresh))
                pick = max(zip(fresh, noise), key=lambda cn: (len(queues[cn[0]]), cn[1]))[0]
                batch.append(queues[pick].pop())
                remaining -= 1
            batches.append([self.samples[i] for i in batch])
        order = self.rng.permutation(len(batches))
        return [batches[i] for i in order]
