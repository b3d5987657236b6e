"""Acceptance criteria, each checked at its stated tolerance.

Every test records exactly one PASS/FAIL line (see the ``criterion``
fixture); the lines are repeated in a summary section after the run.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from oracles import similarity, symmetric_ce
from semanticac import gradcheck
from semanticac.audio import AudioTower
from semanticac.autodiff import Tensor
from semanticac.checkpoint import load_checkpoint, save_checkpoint
from semanticac.cli import main
from semanticac.config import paper_config, synth_config
from semanticac.contrastive import classify, contrastive_loss, cosine_similarity, similarity_matrix
from semanticac.cscm import CSCMHead, reshape_tokens
from semanticac.data import fold_split
from semanticac.text import bundled_vocab, normalize, tokenize
from semanticac.train import evaluate, load_dataset, lr_at_epoch, train

SYNTH_SEEDS = (0, 1, 2)


@pytest.mark.slow
def test_gradient_suite(criterion):
    start = time.perf_counter()
    results = gradcheck.run_suite(range(10))
    elapsed = time.perf_counter() - start
    worst = max(results, key=lambda r: r.error)
    names = {r.name for r in results}
    required = {"matmul", "conv2d", "add", "mul", "layer_norm", "softmax", "gelu", "sigmoid", "mean_pool",
                "max_pool", "reshape", "transpose", "embed_lookup", "concat", "text_block",
                "audio_tower_block", "conv_attention", "project", "contrastive_loss"}  # fmt: skip
    ok = required <= names and all(r.error < 1e-4 for r in results) and elapsed < 120
    detail = f"{len(results)} checks over 10 seeds, worst {worst.error:.2e} ({worst.name}), {elapsed:.0f}s"
    assert criterion(1, "finite-difference gradient suite", ok, detail)


def test_loss_oracle(criterion):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for n in (1, 2, 3, 4):
        for _ in range(100):
            S = rng.uniform(-1, 1, (n, n))
            worst = max(worst, abs(contrastive_loss(S).item() - symmetric_ce(S.tolist())))
    zero_n1 = contrastive_loss(np.array([[0.37]])).item()
    ln2 = contrastive_loss(np.zeros((2, 2))).item()
    ok = worst <= 1e-6 and zero_n1 == 0.0 and abs(ln2 - math.log(2)) <= 1e-6
    assert criterion(2, "contrastive loss vs scalar oracle", ok, f"400 matrices, max gap {worst:.1e}; n=1 -> {zero_n1}, zeros(2) -> {ln2:.6f}")


def test_similarity_oracle(criterion):
    rng = np.random.default_rng(7)
    worst = 0.0
    for n in range(1, 17):
        for _ in range(5):
            A, T = rng.standard_normal((n, 32)), rng.standard_normal((n, 32))
            S = similarity_matrix(A, T).data
            worst = max(worst, float(np.max(np.abs(S - np.array(similarity(A.tolist(), T.tolist()))))))
    assert criterion(3, "similarity matrix vs brute force", worst <= 1e-6, f"n = 1..16, max gap {worst:.1e}")


@pytest.fixture(scope="module")
def synth_runs():
    runs = {}
    start = time.perf_counter()
    for seed in SYNTH_SEEDS:
        cfg = synth_config().replace(seed=seed)
        spec, samples = load_dataset(cfg)
        train_set, eval_set = fold_split(samples, cfg.eval_fold)
        result = train(cfg, train_set, spec)
        runs[seed] = (
            cfg,
            result,
            evaluate(result.checkpoint, train_set, spec).accuracy,
            evaluate(result.checkpoint, eval_set, spec).accuracy,
        )
    return runs, time.perf_counter() - start


@pytest.mark.slow
def test_synthetic_overfit(criterion, synth_runs):
    runs, elapsed = synth_runs
    good = [s for s, (_, _, tr, ev) in runs.items() if tr >= 0.95 and ev >= 0.90]
    epochs = {cfg.epochs for cfg, *_ in runs.values()}
    ok = len(good) >= 2 and max(epochs) <= 50 and elapsed < 600
    detail = ", ".join(f"seed {s}: train {tr:.2f} held-out {ev:.2f}" for s, (_, _, tr, ev) in runs.items())
    assert criterion(4, "synthetic 4-tone overfit", ok, f"{detail}; {max(epochs)} epochs, {elapsed:.0f}s")


@pytest.mark.slow
def test_synthetic_smoothed_loss_decreases(synth_runs):
    # module invariant checked on the same runs: window-5 smoothed loss strictly falls over 20 epochs
    runs, _ = synth_runs
    for seed, (_, result, _, _) in runs.items():
        log = np.array(result.loss_log[:20])
        smooth = np.convolve(log, np.ones(5) / 5, mode="valid")
        assert np.all(np.diff(smooth) < 0), f"seed {seed}: {np.round(smooth, 4).tolist()}"


def test_schedule_exactness(criterion):
    worst_ulps = 0.0
    exact_expr = True
    for k in range(101):
        lr = lr_at_epoch(8e-5, 0.96, k)
        exact_expr &= lr == 8e-5 * 0.96**k
        exact = Fraction(8e-5) * Fraction(0.96) ** k
        worst_ulps = max(worst_ulps, float(abs(Fraction(lr) - exact) / Fraction(math.ulp(lr))))
    ok = exact_expr and worst_ulps <= 2 and lr_at_epoch(8e-5, 0.96, 1) == pytest.approx(7.68e-5, rel=1e-15)
    assert criterion(5, "learning-rate schedule", ok, f"k = 0..100, max {worst_ulps:.2f} ulp from exact rational")


def test_paper_scale_shape_contract(criterion):
    cfg = paper_config().validate()
    tower = AudioTower(cfg)
    h, w = cfg.token_grid
    tokens = Tensor(np.zeros((1, tower.n_tokens, tower.width), dtype=np.float32))
    m = reshape_tokens(tokens, h, w)
    head = CSCMHead(cfg)
    # conv stack geometry: 8 -> 4 -> 2 spatially, then pooled; final linear maps c3 -> C
    c3 = cfg.cscm_channels[-1]
    ok = (
        (tower.n_tokens, tower.width) == (64, 768)
        and m.shape == (1, 768, 8, 8)
        and (head.d, head.h, head.w) == (768, 8, 8)
        and head.embed_dim == cfg.embed_dim == 1024
        and c3 == 768
    )
    assert criterion(6, "paper-scale shape contract", ok, f"{tower.n_tokens}x{tower.width} -> {m.shape[1:]} -> {head.embed_dim}")


@pytest.mark.slow
def test_determinism_and_persistence(criterion, tmp_path):
    cfg = synth_config().replace(dtype="float64", epochs=2, synth_clips=8)
    spec, samples = load_dataset(cfg)
    train_set, eval_set = fold_split(samples, cfg.eval_fold)
    a, b = train(cfg, train_set, spec), train(cfg, train_set, spec)
    same_logs = a.loss_log == b.loss_log and a.batch_losses == b.batch_losses
    path = tmp_path / "run.sack"
    save_checkpoint(a.checkpoint, path)
    before, after = evaluate(a.checkpoint, eval_set, spec), evaluate(load_checkpoint(path), eval_set, spec)
    same_report = (
        before.confusion.tobytes() == after.confusion.tobytes()
        and before.accuracy == after.accuracy
        and before.per_class == after.per_class
        and before.config_hash == after.config_hash
    )
    assert criterion(7, "determinism and checkpoint round trip", same_logs and same_report, f"loss log {a.loss_log}")


@pytest.mark.slow
def test_ablation_harness(criterion, tmp_path, capsys):
    templates = tmp_path / "templates.txt"
    templates.write_text("[LABEL]\na clip of [LABEL]\nan audio clip of [LABEL]\n", encoding="utf-8")
    config = tmp_path / "synth.cfg"
    config.write_text("profile = synth\nepochs = 3\n", encoding="utf-8")
    out = tmp_path / "ablation.csv"
    code = main(["ablate-prompts", "--config", str(config), "--templates", str(templates), "--seeds", "0,1", "--out", str(out)])
    table = capsys.readouterr().out.strip().splitlines()
    rows = out.read_text(encoding="utf-8").splitlines()
    ok = (
        code == 0
        and rows[0] == "template,mean_accuracy,std_accuracy,runs"
        and [r.split(",")[0] for r in rows[1:]] == ["{}", "a clip of {}", "an audio clip of {}"]
        and all(r.endswith(",2") for r in rows[1:])
        and len(table) == 4
        and all("±" in ln for ln in table[1:])
    )
    assert criterion(8, "prompt ablation table", ok, " | ".join(table[1:]))


def test_invariance_suite(criterion):
    rng = np.random.default_rng(99)
    failures = []
    for _ in range(200):
        a, t = rng.standard_normal(16), rng.standard_normal(16)
        base = cosine_similarity(a, t)
        for alpha in (1e-3, 1.0, 1e3):
            for beta in (1e-3, 1.0, 1e3):
                if abs(cosine_similarity(alpha * a, beta * t) - base) > 1e-9:
                    failures.append("cosine scale")
    for n in range(1, 9):
        for _ in range(25):
            S = rng.uniform(-1, 1, (n, n))
            if abs(contrastive_loss(S).item() - contrastive_loss(S.T.copy()).item()) > 1e-12:
                failures.append("loss transpose")
    for _ in range(200):
        classes = [(k, rng.standard_normal(8)) for k in range(6)]
        a = rng.standard_normal(8)
        cid, scores = classify(a, classes)
        for alpha in (1e-3, 0.5, 7.0, 1e3):
            cid2, scores2 = classify(alpha * a, classes)
            if cid2 != cid or max(abs(x - y) for x, y in zip(scores, scores2)) > 1e-12:
                failures.append("classify rescale")
    vocab = bundled_vocab()
    words = ["dog", "bark", "an", "audio", "clip", "of", "siren", "car", "horn", "tone", "424", "hz", "Rain"]
    for _ in range(200):
        text = " ".join(rng.choice(words, size=rng.integers(0, 8)))
        if vocab.decode(tokenize(text, vocab).ids) != normalize(text):
            failures.append("tokenizer round trip")
    ok = not failures
    assert criterion(9, "invariance suite", ok, "all hold" if ok else f"{len(failures)} violations: {sorted(set(failures))}")
