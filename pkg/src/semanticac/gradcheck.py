"""Central-difference checks for every primitive and every composite head.

Composite checks run on miniature configurations (width 4-8) so that every
input and parameter element is perturbed individually in float64.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import layers as L
from .audio import AudioTower
from .autodiff import Tensor
from .config import AudioTowerConfig, CSCMConfig, MelConfig, TrainConfig
from .contrastive import contrastive_loss, similarity_matrix
from .cscm import conv_attention, project

TOLERANCE = 1e-4
EPS = 1e-5


@dataclass
class CheckResult:
    name: str
    seed: int
    error: float

    @property
    def ok(self) -> bool:
        return self.error < TOLERANCE


def _t(rng, *shape):
    return Tensor(rng.standard_normal(shape))


def _named(params: L.Params, fn: Callable[[L.Params], Tensor], extra: list[Tensor]):
    """Wrap ``fn(params)`` as a function of positional tensors for the checker."""
    names = list(params)

    def f(*xs):
        p = dict(zip(names, xs[len(extra):]))
        return fn(p, *xs[: len(extra)])

    return f, [*extra, *params.values()]


def _primitive_cases(rng) -> dict[str, tuple]:
    x44, y44 = _t(rng, 4, 4), _t(rng, 4, 4)
    return {
        "matmul": ("matmul", [x44, y44], {}),
        "matmul_batched": ("matmul", [_t(rng, 2, 3, 4), _t(rng, 4, 5)], {}),
        "conv2d": ("conv2d", [_t(rng, 2, 5, 5), _t(rng, 3, 2, 3, 3)], {"stride": 2, "padding": 1}),
        "add": ("add", [_t(rng, 3, 4), _t(rng, 4)], {}),
        "mul": ("mul", [_t(rng, 3, 4), _t(rng, 3, 1)], {}),
        "layer_norm": ("layer_norm", [_t(rng, 8), _t(rng, 8), _t(rng, 8)], {}),
        "softmax": ("softmax", [_t(rng, 3, 5)], {"axis": -1}),
        "log_softmax": ("log_softmax", [_t(rng, 3, 5)], {"axis": 0}),
        "gelu": ("gelu", [_t(rng, 10)], {}),
        "sigmoid": ("sigmoid", [_t(rng, 10)], {}),
        "exp": ("exp", [_t(rng, 6)], {}),
        "mean_pool": ("mean_pool", [_t(rng, 2, 3, 4)], {"axis": (1, 2)}),
        "max_pool": ("max_pool", [_t(rng, 2, 3, 4)], {"axis": (1, 2)}),
        "sum": ("sum", [_t(rng, 3, 4)], {"axis": 1}),
        "l2_normalize": ("l2_normalize", [_t(rng, 3, 5)], {"axis": -1}),
        "reshape": ("reshape", [_t(rng, 2, 6)], {"shape": (3, 4)}),
        "transpose": ("transpose", [_t(rng, 2, 3, 4)], {"axes": (2, 0, 1)}),
        "embed_lookup": (
            "embed_lookup",
            [_t(rng, 6, 3), Tensor(rng.integers(0, 6, size=(2, 4)))],
            {},
        ),
        "concat": (lambda a, b: ad.concat([a, b], axis=1), [_t(rng, 2, 3), _t(rng, 2, 2)], {}),
    }


def _tiny_audio_config() -> TrainConfig:
    cfg = TrainConfig(dtype="float64", head="pool", embed_dim=6)
    cfg.mel = MelConfig(n_mels=8, frames=8)
    cfg.audio = AudioTowerConfig(patch=(2, 2), window=2, depths=(1, 1), widths=(4, 8), heads=(1, 2))
    cfg.cscm = CSCMConfig(reduction=4, spatial_kernel=3)
    return cfg


def _composite_cases(rng) -> dict[str, tuple]:
    dt = np.float64
    cases = {}

    p: L.Params = {}
    L.init_block(p, "blk", 8, rng, dt)
    mask = np.triu(np.full((5, 5), -1e9), k=1)
    fn, inputs = _named(p, lambda q, x: L.block(x, q, "blk", 2, mask), [_t(rng, 2, 5, 8)])
    cases["text_block"] = (fn, inputs, {})

    tower = AudioTower(_tiny_audio_config())
    p = tower.init(rng, dt)
    fn, inputs = _named(p, lambda q, x: tower(q, x), [_t(rng, 2, 16, 4)])
    cases["audio_tower_block"] = (fn, inputs, {})

    p = {}
    L.init_linear(p, "a.fc1", 8, 2, rng, dt)
    L.init_linear(p, "a.fc2", 2, 8, rng, dt)
    L.init_conv(p, "a.spatial", 2, 1, 3, rng, dt)
    fn, inputs = _named(p, lambda q, m: conv_attention(m, q, "a", kernel=3), [_t(rng, 2, 8, 4, 4)])
    cases["conv_attention"] = (fn, inputs, {})

    p = {}
    L.init_conv(p, "h.conv1", 8, 6, 3, rng, dt)
    L.init_conv(p, "h.conv2", 6, 6, 3, rng, dt)
    L.init_conv(p, "h.conv3", 6, 6, 1, rng, dt)
    L.init_linear(p, "h.fc", 6, 10, rng, dt)
    fn, inputs = _named(p, lambda q, m: project(m, q, "h"), [_t(rng, 2, 8, 5, 5)])
    cases["project"] = (fn, inputs, {})

    cases["contrastive_loss"] = (
        lambda s, scale: contrastive_loss(s, scale),
        [_t(rng, 4, 4), Tensor(np.array(1.7))],
        {},
    )
    cases["similarity_loss"] = (
        lambda a, t: contrastive_loss(similarity_matrix(a, t), 3.0),
        [_t(rng, 4, 6), _t(rng, 4, 6)],
        {},
    )
    return cases


def run_suite(seeds=range(10), names=None, report=None) -> list[CheckResult]:
    """Run every check for every seed; ``report`` receives each result as it lands."""
    results = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        cases = {**_primitive_cases(rng), **_composite_cases(rng)}
        for name, (op, inputs, attrs) in cases.items():
            if names is not None and name not in names:
                continue
            err = ad.finite_difference_check(op, inputs, eps=EPS, seed=seed, **attrs)
            res = CheckResult(name, seed, err)
            results.append(res)
            if report is not None:
                report(res)
    return results


def main(seeds=range(10)) -> int:
    start = time.perf_counter()
    worst: dict[str, float] = {}
    for r in run_suite(seeds):
        worst[r.name] = max(worst.get(r.name, 0.0), r.error)
    failed = 0
    for name, err in worst.items():
        ok = err < TOLERANCE
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name:<20} max rel err {err:.2e}")
    print(f"{len(worst) - failed}/{len(worst)} checks passed in {time.perf_counter() - start:.1f}s")
    return 1 if failed else 0
