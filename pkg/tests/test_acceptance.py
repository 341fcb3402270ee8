"""Acceptance checks, one recorded PASS/FAIL line per criterion.

The lines are collected in ``conftest.ACCEPTANCE`` and printed in the
terminal summary of every pytest run that includes this module.
"""

import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE
from fairscope import augment as aug
from fairscope.augment import CutPatch, FreqMaskConfig, cutmix, freq_cutmix, high_pass, low_freq_mask, low_pass
from fairscope.cli import main
from fairscope.concepts import ConceptVector, CssRecord, css, sampling_weights
from fairscope.data import GenConfig, artifact_variant, render_video
from fairscope.fairness import PredictionRecord, Predictions, auc, f_eo, f_fpr, f_tpr
from fairscope.model import BLOCKS, TrainConfig, forward, init_params, input_gradient, loss_and_grads
from fairscope.numerics import fft2, ifft2, pca_fit
from fairscope.pipeline import PipelineConfig, ablate, run
from oracles import central_difference, naive_dft2


def record(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


# ------------------------------------------------------------ unit suites


def test_numerics_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    roundtrip = parseval = 0.0
    for _ in range(100):
        x = rng.normal(size=(32, 32))
        s = fft2(x)
        roundtrip = max(roundtrip, np.max(np.abs(ifft2(s) - x)))
        parseval = max(parseval, abs(np.sum(np.abs(s) ** 2) / x.size - np.sum(x**2)) / np.sum(x**2))
    pca = pca_fit(rng.normal(size=(200, 16)) @ rng.normal(size=(16, 16)), 8)
    ortho = np.max(np.abs(pca.basis @ pca.basis.T - np.eye(8)))
    elapsed = time.perf_counter() - t0
    ok = roundtrip < 1e-9 and parseval < 1e-6 and ortho < 1e-9 and elapsed < 5
    record(
        "numerics",
        ok,
        f"roundtrip {roundtrip:.1e} (<1e-9), parseval {parseval:.1e} (<1e-6), "
        f"orthonormality {ortho:.1e} (<1e-9), {elapsed:.2f}s (<5s)",
    )


def test_decomposition_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    ident = idem = hf_lf = 0.0
    for _ in range(50):
        x = rng.uniform(size=(32, 32))
        lf = low_pass(x)
        ident = max(ident, np.max(np.abs(lf + high_pass(x) - x)))
        idem = max(idem, np.max(np.abs(low_pass(lf) - lf)))
        hf_lf = max(hf_lf, np.max(np.abs(high_pass(lf))))
    x = rng.uniform(size=(32, 32))
    edges = (
        np.array_equal(low_pass(x, FreqMaskConfig(1.0)), x)
        and np.array_equal(high_pass(x, FreqMaskConfig(1.0)), np.zeros_like(x))
        and np.array_equal(low_pass(x, FreqMaskConfig(0.0)), np.zeros_like(x))
        and np.array_equal(high_pass(x, FreqMaskConfig(0.0)), x)
    )
    elapsed = time.perf_counter() - t0
    ok = max(ident, idem, hf_lf) < 1e-9 and edges and elapsed < 5
    record(
        "decomposition",
        ok,
        f"LF+HF {ident:.1e}, LF idempotence {idem:.1e}, HF(LF) {hf_lf:.1e} (all <1e-9), "
        f"alpha edges exact {edges}, {elapsed:.2f}s (<5s)",
    )


def test_augmentation_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    x_i, x_j = rng.uniform(size=(2, 32, 32))
    empty = np.max(np.abs(freq_cutmix(x_i, x_j, patch=CutPatch(0, 0, 0)) - x_i))

    kept_exact = True
    for _ in range(20):
        patch = aug.sample_patch(32, 32, rng)
        out = freq_cutmix(x_i, x_j, patch=patch)
        keep = patch.mask(32, 32) == 1
        lf = low_pass(x_i)
        kept_exact &= np.array_equal(out[keep], (lf + (x_i - lf))[keep])

    out = freq_cutmix(x_i, x_j, patch=CutPatch(0, 0, 32))
    outside = low_freq_mask(32, 32) == 0
    spectral = np.max(np.abs(naive_dft2(out)[outside] - naive_dft2(x_i)[outside]))

    cfg = GenConfig()
    fake = render_video(cfg, 1, 0, seed=5)[0]
    real = render_video(cfg, 0, 1, seed=6)[0]
    band = np.zeros((32, 32), dtype=bool)
    for v in range(cfg.artifact_variants):
        fr, fc, _ = artifact_variant(cfg, v)
        band[fr % 32, fc % 32] = band[-fr % 32, -fc % 32] = True
    full = CutPatch(0, 0, 32)
    base = aug.band_energy(fake, band)
    pf_ratio = aug.band_energy(freq_cutmix(fake, real, patch=full), band) / base
    cm_ratio = base / aug.band_energy(cutmix(fake, real, patch=full), band)
    elapsed = time.perf_counter() - t0
    ok = empty < 1e-9 and kept_exact and spectral < 1e-6 and pf_ratio <= 1.1 and cm_ratio >= 10 and elapsed < 10
    record(
        "augmentation",
        ok,
        f"empty patch {empty:.1e} (<1e-9), kept region exact {kept_exact}, "
        f"out-of-mask spectrum {spectral:.1e} (<1e-6), artifact PF after/before {pf_ratio:.3f} (<=1.1), "
        f"CM before/after {cm_ratio:.1f} (>=10), {elapsed:.2f}s (<10s)",
    )


def test_gradient_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    tc = TrainConfig()
    p = init_params(32 * 32, tc.hidden, tc.feature_dim, seed=4)
    x, y = rng.uniform(size=(16, 32, 32)), rng.integers(0, 2, 16)
    _, grads = loss_and_grads(p, x, y)
    sizes = np.array([getattr(p, b).size for b in BLOCKS])

    def rel(a, n):
        return abs(a - n) / max(abs(a) + abs(n), 1e-7)

    worst_param = 0.0
    for _ in range(200):
        block = BLOCKS[rng.choice(len(BLOCKS), p=sizes / sizes.sum())]
        arr = getattr(p, block)
        idx = tuple(int(rng.integers(s)) for s in arr.shape)
        num = central_difference(lambda: loss_and_grads(p, x, y)[0], arr, idx)
        worst_param = max(worst_param, rel(getattr(grads, block)[idx], num))

    frame = x[0].copy()
    g = input_gradient(p, frame)

    def margin():
        lg = forward(p, frame[None]).logits[0]
        return lg[1] - lg[0]

    worst_input = 0.0
    for _ in range(200):
        idx = (int(rng.integers(32)), int(rng.integers(32)))
        worst_input = max(worst_input, rel(g[idx], central_difference(margin, frame, idx)))
    elapsed = time.perf_counter() - t0
    ok = worst_param < 1e-4 and worst_input < 1e-4 and elapsed < 30
    record(
        "gradient",
        ok,
        f"parameters {worst_param:.1e}, saliency input gradient {worst_input:.1e} "
        f"(200 coordinates each, <1e-4), {elapsed:.2f}s (<30s)",
    )


def test_css_oracle_suite():
    M1 = np.array([[1.0, 0.0], [0.0, 1.0]])
    M2 = np.array([[3.0, 0.0], [0.0, 1.0]])
    a, b = css([ConceptVector("a", np.array([1.0, 0.0]), 1.0), ConceptVector("b", np.array([0.0, 1.0]), 1.0)], [M1, M2])
    hand = (a.score, a.dominant_class, b.score, b.dominant_class) == (1.0, 0, 0.0, 1)

    rng = np.random.default_rng(5)
    concepts = [ConceptVector(str(i), v / np.linalg.norm(v), 1.0) for i, v in enumerate(rng.normal(size=(6, 4)))]
    single = all(r.score == 0.0 for r in css(concepts, [rng.normal(size=(2, 4))]))
    masking = all(r.masked.sum() == r.score for r in css(concepts, [rng.normal(size=(2, 4)) for _ in range(4)]))

    sizes = {(0, 0): 4, (1, 0): 4, (0, 1): 4, (1, 1): 4}
    recs = [
        CssRecord("l1", 1.0, 0, np.array([1.0, 0.0])),
        CssRecord("l2", 3.0, 0, np.array([3.0, 0.0])),
    ]
    presence = {(0, 0): {"l1", "l2"}, (1, 0): set(), (0, 1): set(), (1, 1): set()}
    w = sampling_weights(sizes, recs, presence, "BS")
    union_err = abs(w.bias_score[(0, 0)] - 0.8125)
    weight_err = abs(w.weight[(0, 0)] - 0.203125)
    ok = hand and single and masking and union_err < 1e-12 and weight_err < 1e-12
    record(
        "CSS oracle",
        ok,
        f"hand examples exact {hand}, K=1 all zero {single}, masking identity {masking}, "
        f"union 0.8125 err {union_err:.1e}, weight 0.203125 err {weight_err:.1e} (<1e-12)",
    )


def test_fairness_oracle_suite():
    hand = [
        PredictionRecord(0.9, 0, 0),
        PredictionRecord(0.1, 0, 0),
        PredictionRecord(0.2, 0, 1),
        PredictionRecord(0.3, 0, 1),
        PredictionRecord(0.8, 1, 0),
        PredictionRecord(0.7, 1, 1),
    ]
    hand_ok = f_fpr(hand) == 0.25
    s = [0.9, 0.8, 0.3, 0.1]
    edges = (
        auc(Predictions(s, [1, 1, 0, 0], [0] * 4)),
        auc(Predictions(s, [0, 0, 1, 1], [0] * 4)),
        auc(Predictions([0.5] * 4, [1, 0, 1, 0], [0] * 4)),
    )
    rng = np.random.default_rng(6)
    y = rng.integers(0, 2, 200)
    y[:2] = [0, 1]
    single = Predictions(rng.uniform(size=200), y, np.zeros(200, int))
    single_ok = f_fpr(single) == f_tpr(single) == f_eo(single) == 0.0
    p = Predictions(rng.uniform(size=200), y, rng.integers(0, 3, 200))
    q = p.take(rng.permutation(200))
    perm_ok = all(abs(fn(p) - fn(q)) < 1e-12 for fn in (f_fpr, f_tpr, f_eo, auc))
    ok = hand_ok and edges == (1.0, 0.0, 0.5) and single_ok and perm_ok
    record(
        "fairness oracle",
        ok,
        f"hand F_FPR 0.25 exact {hand_ok}, AUC edges {edges}, single group zero {single_ok}, "
        f"permutation invariant {perm_ok}",
    )


# ------------------------------------------------------------ benchmark


@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    """Default seed-42 benchmark: data, vanilla and proposed runs, timed."""
    root = tmp_path_factory.mktemp("benchmark")
    data = root / "data"
    t0 = time.perf_counter()
    assert main(["generate", "--seed", "42", "--out", str(data)]) == 0
    cache = str(root / "cache")
    base = PipelineConfig(data_dir=str(data), cache_dir=cache, seed=42)
    vanilla = run(replace(base, mode="vanilla", out_dir=str(root / "vanilla")))
    proposed = run(replace(base, mode="proposed", out_dir=str(root / "proposed")))
    elapsed = time.perf_counter() - t0
    return {"root": root, "base": base, "vanilla": vanilla, "proposed": proposed, "elapsed": elapsed}


def test_end_to_end(benchmark):
    v = benchmark["vanilla"].video_report
    p = benchmark["proposed"].video_report
    reduction = 1 - p.f_eo / v.f_eo
    a_ok = v.auc > 0.8 and v.f_eo >= 0.15
    b_ok = reduction >= 0.30 and v.auc - p.auc <= 0.03
    c_ok = benchmark["elapsed"] < 600
    record(
        "end-to-end",
        a_ok and b_ok and c_ok,
        f"(a) vanilla AUC {v.auc:.4f} (>0.8), F_EO {v.f_eo:.4f} (>=0.15); "
        f"(b) proposed F_EO {p.f_eo:.4f}, reduction {reduction:.1%} (>=30%), "
        f"AUC {p.auc:.4f}, drop {v.auc - p.auc:+.4f} (<=0.03); "
        f"(c) generate+vanilla+proposed {benchmark['elapsed']:.1f}s (<600s)",
    )


def test_ablation_direction(benchmark):
    rows = ablate(benchmark["base"], benchmark["root"] / "ablation", tables=("4",))
    by_aug = {r["augment"]: r for r in rows if r["name"].startswith("T4-")}
    pf, fm, cm = by_aug["PF"], by_aug["FM"], by_aug["CM"]
    fairer = pf["f_eo"] < fm["f_eo"]
    accurate = pf["auc"] >= cm["auc"]
    record(
        "ablation direction",
        fairer and accurate,
        f"PF F_EO {pf['f_eo']:.4f} vs FM {fm['f_eo']:.4f} (need lower: {fairer}); "
        f"PF AUC {pf['auc']:.4f} vs CM {cm['auc']:.4f} (need no worse: {accurate})",
    )


def test_determinism(benchmark, tmp_path):
    base = benchmark["base"]
    cfg = replace(base, mode="proposed", out_dir=str(tmp_path / "train"), cache_dir=str(tmp_path / "cache"))
    run(cfg)
    first = Path(benchmark["root"] / "proposed" / "metrics.json").read_bytes()
    second = (tmp_path / "train" / "metrics.json").read_bytes()
    ckpt = tmp_path / "train" / "model.ckpt"
    assert main(["evaluate", "--checkpoint", str(ckpt), "--out", str(tmp_path / "eval")]) == 0
    third = (tmp_path / "eval" / "metrics.json").read_bytes()
    record(
        "determinism",
        first == second == third,
        f"metrics.json identical across two train runs {first == second} "
        f"and a separate evaluate {second == third} ({len(first)} bytes)",
    )


class TestTrainingLoss:
    def test_beats_uniform_predictor(self, benchmark):
        history = benchmark["vanilla"].report["loss_history"]["phase1"]
        assert history[-1] < np.log(2)

    def test_first_epochs_non_increasing(self, benchmark):
        losses = benchmark["vanilla"].report["loss_history"]["phase1"][:3]
        assert losses[0] >= losses[1] >= losses[2]

    def test_report_file(self, benchmark):
        report = json.loads((benchmark["root"] / "proposed" / "report.json").read_text())
        assert report["phase1_cache"]["hit"] is True
