"""Optimisation loop, evaluation reports and the prompt ablation harness."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import layers as L
from .checkpoint import Checkpoint
from .config import TrainConfig
from .contrastive import classify_batch
from .data import BatchSampler, DatasetError, DatasetSpec, Sample, fold_split, load_esc50, load_us8k, synth_tone_dataset
from .dsp import Waveform, load_wav
from .model import SemanticAC, clip_features

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def lr_at_epoch(lr0: float, gamma: float, epoch: int) -> float:
    """Exponential decay stepped once per epoch."""
    if not 0 < gamma <= 1:
        raise ValueError("gamma must be in (0, 1]")
    return lr0 * gamma**epoch


def sgd_step(
    params: dict[str, ad.Tensor],
    grads: dict[str, np.ndarray],
    lr: float,
    weight_decay: float,
    momentum: float = 0.0,
    velocity: dict[str, np.ndarray] | None = None,
) -> dict[str, ad.Tensor]:
    """p <- p - lr * (g + weight_decay * p), optionally with heavy-ball momentum.

    Returns fresh parameter tensors; ``velocity`` is updated in place.
    """
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise ad.ShapeError("sgd_step", p.shape, g.shape)
        if not np.isfinite(g.sum()) and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
        step = g + weight_decay * p.data if weight_decay else g
        if momentum:
            if velocity is None:
                raise ValueError("momentum needs a velocity dict")
            v = velocity.get(name)
            if v is None:
                v = velocity[name] = np.array(step, dtype=p.dtype)
            else:
                v *= momentum
                v += step
            step = v
        new = p.data - np.asarray(lr, dtype=p.dtype) * step
        out[name] = L.param(new, name)
    return out


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------


class FeatureSource:
    """Waveforms for samples at a given rate, cached per run."""

    def __init__(self, cfg: TrainConfig, rate: int):
        self.cfg = cfg
        self.rate = rate
        self._waves: dict[str, Waveform] = {}
        self._plain: dict[str, np.ndarray] = {}

    def waveform(self, s: Sample) -> Waveform:
        w = self._waves.get(s.path)
        if w is None:
            w = s.waveform if s.waveform is not None else load_wav(s.path)
            self._waves[s.path] = w
        return w

    def features(self, s: Sample, rng: np.random.Generator | None = None) -> np.ndarray:
        if rng is None:
            f = self._plain.get(s.path)
            if f is None:
                f = self._plain[s.path] = clip_features(self.waveform(s), self.cfg, self.rate)
            return f
        return clip_features(self.waveform(s), self.cfg, self.rate, rng)

    def batch(self, samples, rng=None) -> np.ndarray:
        return np.stack([self.features(s, rng) for s in samples])


def load_dataset(cfg: TrainConfig) -> tuple[DatasetSpec, list[Sample]]:
    """Dataset named by ``cfg.dataset``; the synthetic set is drawn from ``cfg.seed``."""
    if cfg.dataset == "synth":
        return synth_tone_dataset(
            cfg.synth_classes, cfg.synth_clips, cfg.synth_rate, cfg.synth_duration,
            rng=cfg.seed, n_folds=cfg.synth_folds,
        )  # fmt: skip
    if not cfg.root:
        raise DatasetError(f"dataset {cfg.dataset} needs a root directory")
    if cfg.dataset == "esc50":
        return load_esc50(cfg.root)
    if cfg.dataset == "us8k":
        return load_us8k(cfg.root)
    raise DatasetError(f"unknown dataset {cfg.dataset!r}")


_DATASET_RATES = {"esc50": (44100, 32000), "us8k": (44100, 44100)}


def _rates(cfg: TrainConfig, spec: DatasetSpec | None = None) -> tuple[int, int]:
    """(train, eval) sample rates: config override, else the dataset's own."""
    if spec is not None:
        base = spec.train_rate, spec.eval_rate
    else:
        base = _DATASET_RATES.get(cfg.dataset, (cfg.synth_rate, cfg.synth_rate))
    return cfg.train_rate or base[0], cfg.eval_rate or base[1]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    loss_log: list[float]
    batch_losses: list[float] = field(default_factory=list)


def _streams(seed: int):
    init, sampler, aug = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), int(sampler.generate_state(1)[0]), np.random.default_rng(aug)


def initial_checkpoint(cfg: TrainConfig, spec: DatasetSpec, model: SemanticAC | None = None) -> Checkpoint:
    model = model or SemanticAC(cfg)
    init_rng, _, _ = _streams(cfg.seed)
    params = model.init_params(init_rng)
    return Checkpoint(cfg, {k: v.data for k, v in params.items()}, labels=list(spec.labels))


def train(
    cfg: TrainConfig,
    data: list[Sample],
    spec: DatasetSpec,
    on_epoch=None,
) -> TrainResult:
    """Minimise the symmetric contrastive loss over ``data`` with SGD.

    Per batch: augment -> mel -> audio tower -> head; prompt -> tokens ->
    text tower; cosine matrix -> loss -> backward -> SGD step.
    """
    model = SemanticAC(cfg)
    init_rng, sampler_seed, aug_rng = _streams(cfg.seed)
    params = model.init_params(init_rng)
    sampler = BatchSampler(data, cfg.batch_size, seed=sampler_seed)
    source = FeatureSource(cfg, _rates(cfg, spec)[0])
    velocity: dict[str, np.ndarray] = {}
    losses: list[float] = []
    batch_losses: list[float] = []
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg.lr0, cfg.gamma, epoch)
        total, count = 0.0, 0
        for bi, batch in enumerate(sampler.epoch()):
            patches = source.batch(batch, aug_rng)
            loss = model.loss(params, patches, [s.label for s in batch])
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"loss is {value} at epoch {epoch}, batch {bi}")
            leaf_grads = ad.backward(loss, wrt=params.values())
            grads = {name: leaf_grads[p] for name, p in params.items()}
            params = sgd_step(params, grads, lr, cfg.weight_decay, cfg.momentum, velocity)
            batch_losses.append(value)
            total += value * len(batch)
            count += len(batch)
        losses.append(total / count)
        log.info("epoch %d lr %.3g loss %.5f", epoch, lr, losses[-1])
        if on_epoch is not None:
            on_epoch(epoch, losses[-1])
    ckpt = Checkpoint(
        config=cfg,
        params={k: v.data for k, v in params.items()},
        opt_state=velocity,
        epoch=cfg.epochs,
        rng_state={"augment": aug_rng.bit_generator.state, "sampler": sampler.rng.bit_generator.state},
        labels=list(spec.labels),
        loss_log=losses,
    )
    return TrainResult(ckpt, losses, batch_losses)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    class_names: list[str]
    support: list[int]
    per_class: list[float | None]  # None where the class is absent
    confusion: np.ndarray  # [true, predicted]
    accuracy: float
    fold: int
    config_hash: str

    @classmethod
    def from_predictions(cls, y_true, y_pred, class_names, fold=0, config_hash="") -> "EvalReport":
        k = len(class_names)
        conf = np.zeros((k, k), dtype=np.int64)
        for t, p in zip(y_true, y_pred):
            conf[int(t), int(p)] += 1
        support = conf.sum(axis=1)
        per = [float(conf[i, i] / support[i]) if support[i] else None for i in range(k)]
        total = int(support.sum())
        acc = float(np.trace(conf) / total) if total else float("nan")
        return cls(list(class_names), support.tolist(), per, conf, acc, fold, config_hash)

    def rows(self):
        for i, name in enumerate(self.class_names):
            acc = self.per_class[i]
            yield i, name, self.support[i], ("absent" if acc is None else f"{acc:.6f}")

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class_id", "class_name", "support", "accuracy"])
            for row in self.rows():
                w.writerow(row)
            w.writerow(["overall", f"fold={self.fold} config={self.config_hash}", sum(self.support), f"{self.accuracy:.6f}"])

    def summary(self) -> str:
        return f"fold {self.fold}: accuracy {self.accuracy:.4f} over {sum(self.support)} clips"


def evaluate(ckpt: Checkpoint, data: list[Sample], spec: DatasetSpec | None = None, rate: int | None = None) -> EvalReport:
    """Nearest-label classification of every clip; no augmentation."""
    cfg = ckpt.config
    model = SemanticAC(cfg)
    params = model.params_from_arrays(ckpt.params)
    labels = list(spec.labels) if spec is not None else list(ckpt.labels)
    if rate is None:
        rate = _rates(cfg, spec)[1]
    class_matrix = model.class_matrix(params, labels)
    source = FeatureSource(cfg, rate)
    patches = source.batch(data) if data else np.zeros((0,))
    audio = model.audio_embeddings(params, patches)
    pred, _ = classify_batch(audio, class_matrix)
    folds = {s.fold for s in data}
    fold = folds.pop() if len(folds) == 1 else 0
    return EvalReport.from_predictions([s.class_id for s in data], pred, labels, fold, cfg.digest())


# ---------------------------------------------------------------------------
# prompt ablation
# ---------------------------------------------------------------------------


@dataclass
class AblationRow:
    template: str
    accuracies: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies, ddof=1)) if len(self.accuracies) > 1 else 0.0


def prompt_ablation(cfg: TrainConfig, templates, seeds, data: list[Sample], spec: DatasetSpec) -> list[AblationRow]:
    """Train + evaluate once per (template, seed) on the configured fold split."""
    if not templates:
        raise ValueError("need at least one template")
    if len(seeds) < 2:
        warnings.warn("fewer than 2 seeds: std reported as 0", stacklevel=2)
    train_set, eval_set = fold_split(data, cfg.eval_fold)
    rows = []
    for template in templates:
        accs = []
        for seed in seeds:
            run = cfg.replace(template=template, seed=int(seed))
            result = train(run, train_set, spec)
            accs.append(evaluate(result.checkpoint, eval_set, spec).accuracy)
        rows.append(AblationRow(template, accs))
    return rows


def write_ablation(rows: list[AblationRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["template", "mean_accuracy", "std_accuracy", "runs"])
        for r in rows:
            w.writerow([r.template, f"{r.mean:.6f}", f"{r.std:.6f}", len(r.accuracies)])


def format_ablation(rows: list[AblationRow]) -> str:
    shown = [r.template.replace("{}", "[LABEL]") for r in rows]
    width = max(len(t) for t in shown + ["prompt"])
    lines = [f"{'prompt':<{width}}  accuracy"]
    for t, r in zip(shown, rows):
        lines.append(f"{t:<{width}}  {100 * r.mean:6.2f} (±{100 * r.std:.2f})")
    return "\n".join(lines)
