"""Acceptance criteria 1-9, one test each; every test prints a single PASS/FAIL line."""
import contextlib
import json
import math
import time

import numpy as np
import pytest
import torch

from haaqinet.audiogram import CATEGORIES, Audiogram, build_bank, classify_audiogram, generate_audiogram, nal_r_gains
from haaqinet.cli import bench_variant, main
from haaqinet.config import RunConfig
from haaqinet.corpus import GENRES, synth_clip
from haaqinet.distill import (
    DistillExample, DistillTrainConfig, StudentConfig, StudentEncoder, batch_distill_terms, difficulty_weight,
    distill_loss, distill_train, l1_layer_loss, random_init, sigmoid_cosine_loss, step0_distill_loss,
    teacher_targets, total_loss, transfer_init,
)
from haaqinet.dsp import (
    FilterSpec, add_noise, adjust_spl, default_bank, linear_filter, measure_spl, peak_clip, quantize, rms,
)
from haaqinet.dsp.conditions import derive_seed
from haaqinet.dsp.levels import SPL_SWEEP_LEVELS
from haaqinet.evaluation import bench_runtime, lcc, mse, srcc
from haaqinet.features import EncoderConfig, TransformerEncoder, count_parameters, freeze, prep_fbank
from haaqinet.model import build_model, extract_raw
from haaqinet.predictor import (
    Example, PredictorConfig, TrainConfig, build_predictor, quality_loss, train,
)
from haaqinet.proxy import proxy_score

from conftest import ACCEPTANCE_LINES, gradient_error, tone


class Checks:
    def __init__(self):
        self.failed = []
        self.details = []

    def check(self, ok, what):
        if not ok:
            self.failed.append(what)
        return ok

    def note(self, text):
        self.details.append(text)


@contextlib.contextmanager
def criterion(n, title):
    c = Checks()
    t0 = time.perf_counter()
    try:
        yield c
    except Exception as e:
        c.failed.append(f"{type(e).__name__}: {e}")
    finally:
        status = "FAIL" if c.failed else "PASS"
        extra = "; ".join(c.details + [f"failed: {f}" for f in c.failed])
        line = f"criterion {n}: {status} ({time.perf_counter() - t0:.1f}s) {title}" + (f" | {extra}" if extra else "")
        print(line)
        ACCEPTANCE_LINES.append(line)
    assert not c.failed, c.failed


# -- 1 ----------------------------------------------------------------------

class _Leaf(torch.nn.Module):
    def __init__(self, shape, seed):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        self.p = torch.nn.Parameter(torch.randn(*shape, generator=g, dtype=torch.float64))


def test_criterion_1_gradient_suite():
    with criterion(1, "analytic vs central-difference gradients, 20 instances per loss") as c:
        t0 = time.perf_counter()
        worst = {}
        for i in range(20):
            rng = np.random.default_rng(i)
            g = torch.Generator().manual_seed(i)
            # quality loss through the full predictor forward pass
            cfg = PredictorConfig(feature_dim=int(rng.integers(2, 9)), lstm_hidden=int(rng.integers(2, 7)),
                                  fc_dim=8, num_heads=int(rng.choice([1, 2, 4])))
            m = build_predictor(cfg, i, dtype=torch.float64)
            t = int(rng.integers(1, 9))
            x = torch.tensor(rng.standard_normal((2, t, cfg.feature_dim)))
            hl = torch.tensor(rng.uniform(0, 1.2, (2, 8)))
            y = torch.tensor(rng.uniform(0, 1, 2))

            def lq():
                clip, frames = m(x, hl)
                return quality_loss(y, clip, frames)

            errs = {"L_qual": gradient_error(m, lq, seed=i)}
            tg = [torch.randn(2, 6, 4, generator=g, dtype=torch.float64) for _ in range(3)]
            leaves = [_Leaf((2, 6, 4), 1000 + 100 * i + k) for k in range(3)]
            mod = torch.nn.ModuleList(leaves)
            errs["L1"] = gradient_error(mod, lambda: l1_layer_loss(tg[0], leaves[0].p).sum(), seed=i)
            errs["sigmoid-cosine"] = gradient_error(mod, lambda: sigmoid_cosine_loss(tg[0], leaves[0].p)[0].sum(),
                                                    seed=i)

            def ld():
                losses, sims = batch_distill_terms([lf.p for lf in leaves], tg)
                return distill_loss(losses, difficulty_weight(sims))

            errs["L_distil"] = gradient_error(mod, ld, seed=i)
            joint = torch.nn.ModuleList([m, mod])
            errs["total"] = gradient_error(joint, lambda: total_loss(lq(), ld()), n_coords=40, seed=i)
            for k, v in errs.items():
                worst[k] = max(worst.get(k, 0.0), v)
        elapsed = time.perf_counter() - t0
        for k, v in worst.items():
            c.check(v < 1e-3, f"{k} relative error {v:.2e}")
        c.check(elapsed < 60, f"runtime {elapsed:.1f}s")
        c.note("worst rel. error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


# -- 2 ----------------------------------------------------------------------

def test_criterion_2_loss_oracles():
    with criterion(2, "hand-computed loss values") as c:
        q = quality_loss(torch.tensor([0.8], dtype=torch.float64), torch.tensor([0.6], dtype=torch.float64),
                         torch.tensor([[0.7, 0.9]], dtype=torch.float64)).item()
        c.check(abs(q - 0.05) < 1e-12, f"quality loss {q}")
        for s, expect in ((1.0, 0.31326), (0.0, 0.69315), (0.5, 0.72408)):
            t = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
            p = torch.tensor([[s, math.sqrt(1 - s * s)]], dtype=torch.float64)
            v = sigmoid_cosine_loss(t, p)[0].item()
            c.check(abs(v - expect) <= 1e-5, f"sigmoid-cosine at s={s}: {v}")
        for s, d in ((1.0, 1.0), (0.0, 2.0), (-1.0, 3.0)):
            got = difficulty_weight(torch.full((3,), s)).item()
            c.check(got == d, f"difficulty at s={s}: {got}")


# -- 3 ----------------------------------------------------------------------

def _pearson(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    num = sum((a - mx) * (b - my) for a, b in zip(x, y))
    return num / math.sqrt(sum((a - mx) ** 2 for a in x) * sum((b - my) ** 2 for b in y))


def _ranks(x):
    return [sum(w < v for w in x) + (sum(w == v for w in x) + 1) / 2 for v in x]


def test_criterion_3_metric_oracles():
    with criterion(3, "metrics vs brute-force reference on 100 random length-50 vectors") as c:
        rng = np.random.default_rng(3)
        worst = 0.0
        for k in range(100):
            x, y = rng.standard_normal(50), rng.standard_normal(50)
            if k % 4 == 0:
                x, y = np.round(x, 1), np.round(y, 1)
            xs, ys = x.tolist(), y.tolist()
            ref_mse = sum((a - b) ** 2 for a, b in zip(xs, ys)) / 50
            worst = max(worst, abs(lcc(x, y) - _pearson(xs, ys)), abs(srcc(x, y) - _pearson(_ranks(xs), _ranks(ys))),
                        abs(mse(x, y) - ref_mse))
        c.check(worst < 1e-9, f"max deviation {worst:.1e}")
        c.check(lcc([1, 2, 3, 4], [1, 3, 2, 4]) == 0.8, "lcc worked example")
        c.check(abs(srcc([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) < 1e-15, "srcc worked example")
        c.note(f"max deviation {worst:.1e}")


# -- 4 ----------------------------------------------------------------------

def test_criterion_4_dsp_suite():
    with criterion(4, "SNR, SPL, clipper, quantizer, filters, condition bank") as c:
        x = synth_clip("rock", 4, 1.0)
        worst_snr = 0.0
        for kind in ("ltass", "babble"):
            for snr in range(-10, 31, 2):
                y = add_noise(x, kind, snr, rng=snr + 50)
                worst_snr = max(worst_snr, abs(10 * np.log10(np.sum(x ** 2) / np.sum((y - x) ** 2)) - snr))
        c.check(worst_snr <= 0.1, f"SNR error {worst_snr:.3f} dB")
        spl = max(abs(measure_spl(adjust_spl(x, lv)) - lv) for lv in SPL_SWEEP_LEVELS)
        c.check(spl <= 0.01, f"SPL round trip {spl}")
        c.check(measure_spl(np.sqrt(2) * tone(250)) == pytest.approx(65.0, abs=1e-9), "RMS 1 -> 65 dB")
        c.check(np.array_equal(peak_clip(x, 1.0), x), "clip identity")
        c.check(np.allclose(peak_clip([0.3, 0.8, -0.9], 0.5), [0.3, 0.45, -0.45], rtol=0, atol=1e-15), "clip example")
        q16 = quantize(x / np.max(np.abs(x)), 16)
        c.check(np.array_equal(quantize(q16, 16), q16), "16-bit identity")
        c.check(quantize(0.3, 8) == 38 / 127, "quantize example")
        lp = 20 * np.log10(rms(linear_filter(x, FilterSpec("lowpass", {"cutoff": 7999}))) / rms(x))
        c.check(abs(lp) <= 0.5, f"lowpass 7999 change {lp:.2f} dB")
        hp = FilterSpec("highpass", {"cutoff": 1000})
        gap = (20 * np.log10(rms(linear_filter(tone(4000), hp)[2000:-2000]))
               - 20 * np.log10(rms(linear_filter(tone(250), hp)[2000:-2000])))
        c.check(gap >= 24, f"highpass 250 Hz vs 4 kHz {gap:.1f} dB")
        tilt = FilterSpec("tilt", {"slope_db_per_oct": 6})
        slope = (20 * np.log10(rms(linear_filter(tone(2000), tilt)[2000:-2000]))
                 - 20 * np.log10(rms(linear_filter(tone(1000), tilt)[2000:-2000])))
        c.check(abs(slope - 6) <= 1, f"tilt {slope:.2f} dB/oct")
        bank = default_bank()
        c.check(len(bank) == 100 and len({b.id for b in bank}) == 100, "100 unique conditions")
        c.note(f"worst SNR error {worst_snr:.3f} dB, tilt {slope:.2f} dB, HP gap {gap:.1f} dB")


# -- 5 ----------------------------------------------------------------------

def test_criterion_5_audiogram_suite():
    with criterion(5, "bank, round trip, NAL-R zero loss and linearity") as c:
        bank = build_bank(0)
        c.check(len(bank.all) == 300, "300 patterns")
        c.check(all(sum(a.category == k for a in bank.all) == 50 for k in CATEGORIES), "50 per category")
        misses = sum(classify_audiogram(generate_audiogram(k, s)) != k for k in CATEGORIES for s in range(1000))
        c.check(misses == 0, f"{misses} round-trip misses")
        c.check(np.all(nal_r_gains(Audiogram((0,) * 8)) == 0), "zero loss gives zero gain")
        base = nal_r_gains(Audiogram((50,) * 8))
        bumped = nal_r_gains(Audiogram((50,) * 7 + (100,)))
        expect = np.zeros(8)
        expect[-1] = 0.31 * 50
        c.check(np.allclose(bumped - base, expect, atol=1e-12), "linearity at 8 kHz")


# -- 6 ----------------------------------------------------------------------

def test_criterion_6_overfit():
    with criterion(6, "toy predictor overfits 32 clips within 500 steps") as c:
        torch.manual_seed(0)
        rng = np.random.default_rng(6)
        data = [Example(extract_raw(synth_clip(GENRES[i % 4], derive_seed(6, i), 1.0), "spectrogram"),
                        rng.uniform(0, 0.8, 8), float(rng.uniform(0.05, 0.95)), str(i)) for i in range(32)]
        model = build_model("spectrogram", EncoderConfig(), PredictorConfig(), 0)
        losses = []
        t0 = time.perf_counter()
        train(model, data, TrainConfig(lr=1e-4, batch_size=32, max_steps=500), valid_set=[],
              step_callback=lambda s, v: losses.append(v))
        elapsed = time.perf_counter() - t0
        first = next((i + 1 for i, v in enumerate(losses) if v < 1e-3), None)
        falls = sum(b < a for a, b in zip(losses[:50], losses[1:51]))
        c.check(len(losses) == 500 and min(losses) < 1e-3, f"min loss {min(losses):.2e}")
        c.check(losses[-1] < 1e-3, f"final loss {losses[-1]:.2e}")
        c.check(falls >= 45, f"loss fell on {falls}/50 early steps")
        c.check(elapsed < 300, f"runtime {elapsed:.0f}s")
        c.note(f"below 1e-3 at step {first}, final {losses[-1]:.1e}, {falls}/50 early decreases")


# -- 7 ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def teacher():
    return freeze(TransformerEncoder.from_seed(EncoderConfig(), derive_seed(0, "teacher")))


@pytest.fixture(scope="module")
def distill_set(teacher):
    rng = np.random.default_rng(7)
    out = []
    for i in range(80):
        fb = prep_fbank(synth_clip(GENRES[i % 4], derive_seed(0, "distill-clip", i), 1.0))
        out.append(DistillExample(fb, teacher_targets(teacher, fb, (6, 9, 12)), rng.uniform(0, 1, 8),
                                  float(rng.uniform(0.1, 0.9)), str(i)))
    return out[:64], out[64:]


@pytest.fixture(scope="module")
def paired_runs(teacher, distill_set):
    """Default multi-independent and single-layer students on the same 64 clips, seed and steps."""
    tr, va = distill_set
    runs = {}
    for cfg in (StudentConfig(), StudentConfig.single()):
        keep = [StudentConfig().tapped_layers.index(t) for t in cfg.tapped_layers]
        sub = lambda xs: [DistillExample(e.fbank, e.targets[keep], e.hearing_loss, e.score, e.clip_id) for e in xs]
        model = build_model("student", EncoderConfig(), PredictorConfig(), 1, cfg, teacher)
        runs[cfg.head_topology] = distill_train(model, sub(tr), cfg, DistillTrainConfig(max_steps=300), sub(va))
    return runs


def test_criterion_7a_multi_vs_single(paired_runs):
    with criterion("7a", "multi-independent TE-12 similarity >= single-layer") as c:
        multi = paired_runs["multi-independent"].final_similarity[12]
        single = paired_runs["single"].final_similarity[12]
        c.check(multi >= single, f"multi {multi:.4f} < single {single:.4f}")
        c.note(f"held-out TE-12 cosine multi {multi:.4f}, single {single:.4f}")


def test_criterion_7b_parameter_ratio(teacher):
    with criterion("7b", "student/teacher parameter ratio <= 0.30") as c:
        ratios = {cfg.head_topology: count_parameters(StudentEncoder(EncoderConfig(), cfg)) / count_parameters(teacher)
                  for cfg in (StudentConfig(), StudentConfig.single())}
        for k, r in ratios.items():
            c.check(r <= 0.30, f"{k} ratio {r:.4f}")
        c.note(", ".join(f"{k} {r:.4f}" for k, r in ratios.items()))


def test_criterion_7c_transfer_init(teacher, distill_set):
    with criterion("7c", "transfer-initialized step-0 distill loss <= random init") as c:
        tr, _ = distill_set
        cfg = StudentConfig()
        transfer = step0_distill_loss(transfer_init(teacher, cfg, 1), tr)
        rand = step0_distill_loss(random_init(EncoderConfig(), cfg, 1), tr)
        c.check(transfer <= rand, f"transfer {transfer:.4f} > random {rand:.4f}")
        wins = sum(step0_distill_loss(transfer_init(teacher, cfg, s), tr)
                   <= step0_distill_loss(random_init(EncoderConfig(), cfg, s), tr) for s in range(10))
        c.note(f"seed 1: transfer {transfer:.4f}, random {rand:.4f}; transfer lower on {wins}/10 seeds")


def test_criterion_7d_runtime(teacher):
    with criterion("7d", "student encoder strictly faster than teacher") as c:
        cfg = RunConfig(seed=0)
        clips = [synth_clip(GENRES[i % 4], derive_seed(0, "bench-clip", i), 2.0) for i in range(5)]
        rows = bench_runtime([bench_variant(n, cfg, teacher, torch.float32) for n in ("teacher", "student")],
                             clips, repeats=3)
        t, s = rows[0].feature_mean_s, rows[1].feature_mean_s
        c.check(s < t, f"student {s * 1e3:.1f} ms >= teacher {t * 1e3:.1f} ms")
        c.note(f"teacher {t * 1e3:.1f} ms, student {s * 1e3:.1f} ms per clip, ratio {t / s:.2f}")


@pytest.mark.xfail(strict=True, reason="the printed sigmoid-cosine loss settles on anti-aligned student "
                   "features (held-out TE-12 cosine about -0.86); see the decisions ledger")
def test_toy_distillation_reaches_teacher_similarity(paired_runs):
    assert paired_runs["multi-independent"].final_similarity[12] > 0.9


# -- 8 ----------------------------------------------------------------------

def test_criterion_8_proxy_monotonicity():
    with criterion(8, "proxy score strictly decreases over babble SNR {30, 12, 0, -6} dB") as c:
        ladders = []
        for i in range(5):
            x = synth_clip(GENRES[i % 4], derive_seed(8, i), 2.0)
            s = [proxy_score(x, add_noise(x, "babble", snr, rng=derive_seed(8, i, snr))) for snr in (30, 12, 0, -6)]
            ladders.append(s)
            c.check(all(a > b for a, b in zip(s, s[1:])), f"clip {i}: {np.round(s, 4).tolist()}")
        c.note("scores " + " ".join(str(np.round(s, 3).tolist()) for s in ladders))


# -- 9 ----------------------------------------------------------------------

def test_criterion_9_end_to_end(tmp_path):
    with criterion(9, "CLI smoke: build 20 clips, label, train 200 steps, eval, sweep") as c:
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps({"seed": 2024, "n_clean": 20, "train": {"max_steps": 200, "patience": 1000}}))
        d = {k: tmp_path / k for k in ("clean", "corpus", "labeled", "train", "eval", "sweep", "train2", "eval2", "sweep2")}
        t0 = time.perf_counter()
        codes = [
            main(["corpus", "synth", "--config", str(cfg), "--out", str(d["clean"])]),
            main(["corpus", "build", "--config", str(cfg), "--clean-dir", str(d["clean"]), "--out", str(d["corpus"])]),
            main(["label", "--config", str(cfg), "--manifest", str(d["corpus"] / "manifest.jsonl"),
                  "--out", str(d["labeled"])]),
            main(["train", "--config", str(cfg), "--manifest", str(d["labeled"] / "manifest.jsonl"),
                  "--out", str(d["train"])]),
        ]
        man, w = str(d["labeled"] / "manifest.jsonl"), str(d["train"] / "weights.bin")
        codes += [main(["eval", "--config", str(cfg), "--manifest", man, "--weights", w, "--out", str(d["eval"])]),
                  main(["spl-sweep", "--config", str(cfg), "--manifest", man, "--weights", w, "--out", str(d["sweep"])])]
        elapsed = time.perf_counter() - t0
        c.check(codes == [0] * 6, f"exit codes {codes}")
        steps = json.loads((d["train"] / "summary.json").read_text())["steps"]
        c.check(steps == 200, f"trained {steps} steps")
        c.check((d["eval"] / "anchor_curve.csv").exists(), "anchor curve written")
        c.check(elapsed < 600, f"runtime {elapsed:.0f}s")
        # rerun each stage from its own snapshot
        again = [main(["train", "--config", str(d["train"] / "config.json"), "--out", str(d["train2"])]),
                 main(["eval", "--config", str(d["eval"] / "config.json"), "--out", str(d["eval2"])]),
                 main(["spl-sweep", "--config", str(d["sweep"] / "config.json"), "--out", str(d["sweep2"])])]
        c.check(again == [0, 0, 0], f"rerun exit codes {again}")
        pairs = [("train", "weights.bin"), ("train", "history.csv"), ("eval", "predictions.csv"),
                 ("eval", "eval_report.json"), ("eval", "anchor_curve.csv"), ("sweep", "spl_sweep.csv")]
        for run, name in pairs:
            same = (d[run] / name).read_bytes() == (d[run + "2"] / name).read_bytes()
            c.check(same, f"{run}/{name} differs on rerun")
        metrics = json.loads((d["eval"] / "summary.json").read_text())
        c.note(f"pipeline {elapsed:.0f}s, test rows {metrics['rows']}, lcc {metrics['lcc']}")
