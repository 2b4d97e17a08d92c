"""Command-line front end.

Every subcommand writes into its own run directory: the resolved config
(``config.json``), its artifacts, and on failure an ``error.json`` record.
Run directories are never reused.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import traceback
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import torch

from . import plotting
from .audiogram import build_bank, write_bank
from .config import ConfigError, RunConfig, load_config
from .corpus import (GENRES, corpus_build, label_scores, read_manifest, resolve, synth_clean_dir, synth_clip,
                     write_manifest)
from .audiogram import read_bank as read_audiograms
from .distill import (DistillExample, StudentConfig, distill_train, teacher_targets)
from .dsp.audio_io import read_wav
from .dsp.conditions import derive_seed
from .dsp.conditions import read_bank as read_conditions
from .evaluation import (anchor_curve, bench_runtime, evaluate, spl_sweep, write_dict_rows)
from .features.encoder import EncoderConfig, TransformerEncoder, freeze
from .features.spectral import prep_fbank
from .model import HaaqiNet, build_model, extract_raw
from .predictor import Example, PredictorConfig, TrainConfig, collate, train
from .serialization import load_weights, save_weights

log = logging.getLogger("haaqinet")

RUN_ROOT_ENV = "HAAQINET_RUN_ROOT"
COMMANDS = ("corpus synth", "corpus audiograms", "corpus build", "label", "train", "distill", "eval",
            "spl-sweep", "bench", "plot-data")


# -- run directories and config -------------------------------------------

def new_run_dir(out: str | None, command: str) -> Path:
    if out:
        p = Path(out)
        if p.exists() and any(p.iterdir()):
            raise ConfigError(f"run directory {p} exists and is not empty")
        p.mkdir(parents=True, exist_ok=True)
        return p
    root = Path(os.environ.get(RUN_ROOT_ENV, "runs"))
    root.mkdir(parents=True, exist_ok=True)
    stem = command.replace(" ", "-")
    i = 1
    while (root / f"{stem}-{i:03d}").exists():
        i += 1
    p = root / f"{stem}-{i:03d}"
    p.mkdir()
    return p


def resolve_config(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
    elif args.seed is not None:
        cfg = RunConfig(seed=args.seed)
    else:
        raise ConfigError("a seed is required: pass --seed or --config")
    paths = dict(cfg.paths)
    for key in ("clean_dir", "manifest", "weights", "predictor_weights", "scores_csv", "conditions"):
        v = getattr(args, key, None)
        if v:
            paths[key] = str(v)
    cfg.paths = paths
    if getattr(args, "variant", None):
        cfg.variant = args.variant
    if getattr(args, "provider", None):
        cfg.label_provider = args.provider
    if getattr(args, "steps", None):
        if args.command == "distill":
            cfg.distill = replace(cfg.distill, max_steps=args.steps)
        else:
            cfg.train = replace(cfg.train, max_steps=args.steps)
    if getattr(args, "levels", None):
        cfg.eval.levels = tuple(float(v) for v in args.levels.split(","))
    if getattr(args, "quantiles", None):
        cfg.eval.quantiles = args.quantiles
    if getattr(args, "tolerance", None):
        cfg.eval.tolerance = args.tolerance
    if getattr(args, "variants", None):
        cfg.bench.variants = tuple(v.strip() for v in args.variants.split(","))
    return cfg


def torch_dtype(cfg: RunConfig):
    return torch.float64 if cfg.dtype == "float64" else torch.float32


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, default=float) + "\n")


# -- shared model plumbing -------------------------------------------------

def make_teacher(cfg: RunConfig) -> TransformerEncoder:
    return freeze(TransformerEncoder.from_seed(cfg.encoder, derive_seed(cfg.seed, "teacher"), torch_dtype(cfg)))


def model_meta(cfg: RunConfig, model: HaaqiNet, **extra) -> dict:
    meta = {"kind": "haaqinet", "variant": model.variant, "seed": cfg.seed, "dtype": cfg.dtype,
            "encoder": cfg.encoder.to_dict(), "predictor": cfg.predictor.to_dict(),
            "student": cfg.student.to_dict(), "winavg_k": model.winavg_k}
    meta.update(extra)
    return meta


def load_model(path):
    """Rebuild a saved model and the teacher encoder it was trained against."""
    state, meta = load_weights(path)
    if meta.get("kind") != "haaqinet":
        raise ConfigError(f"{path} is not a model weights file")
    dtype = torch.float64 if meta.get("dtype") == "float64" else torch.float32
    enc_cfg = EncoderConfig(**meta["encoder"])
    scfg = StudentConfig(**meta["student"])
    model = build_model(meta["variant"], enc_cfg, PredictorConfig(**meta["predictor"]), 0, scfg,
                        dtype=dtype, winavg_k=meta.get("winavg_k", 3))
    model.load_state_dict(state)
    model.eval()
    teacher = freeze(TransformerEncoder.from_seed(enc_cfg, derive_seed(meta["seed"], "teacher"), dtype))
    return model, teacher, meta


def manifest_tables(manifest_path):
    root = Path(manifest_path).parent
    return root, {a.id: a for a in read_audiograms(root / "audiograms.csv")}


def examples_for(rows, root, audiograms, variant, teacher) -> list:
    out = []
    for r in rows:
        x, _ = read_wav(resolve(root, r.audio_path))
        out.append(Example(extract_raw(x, variant, teacher), audiograms[r.audiogram_id].normalized(),
                           float(r.true_score) if r.true_score is not None else 0.0, r.clip_id))
    return out


def predict_examples(model, examples, dtype, batch_size=16) -> np.ndarray:
    model.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(examples), batch_size):
            raw, hl, _, lengths = collate(examples[i:i + batch_size], dtype)
            out.append(model(raw, hl, lengths)[0].numpy())
    return np.concatenate(out).astype(np.float64)


def labeled(rows, splits=None):
    rows = [r for r in rows if r.true_score is not None]
    if splits:
        rows = [r for r in rows if r.split in splits]
    return rows


# -- subcommands -----------------------------------------------------------

def cmd_corpus_synth(cfg, run, args):
    paths = synth_clean_dir(run, cfg.n_clean, cfg.seed, cfg.clean_duration_s)
    return {"clips": len(paths), "genres": list(GENRES)}


def cmd_corpus_audiograms(cfg, run, args):
    bank = build_bank(cfg.seed, cfg.corpus.audiograms_per_category, cfg.corpus.test_audiograms_per_category)
    write_bank(run / "audiograms.csv", bank.all)
    write_bank(run / "audiograms-train.csv", bank.train)
    write_bank(run / "audiograms-test.csv", bank.test)
    counts = {}
    for a in bank.all:
        counts[a.category] = counts.get(a.category, 0) + 1
    return {"audiograms": len(bank.all), "per_category": counts}


def cmd_corpus_build(cfg, run, args):
    cfg.validate(("clean_dir",))
    bank = read_conditions(cfg.paths["conditions"]) if cfg.paths.get("conditions") else None
    rows = corpus_build(cfg.paths["clean_dir"], run, cfg.seed, cfg.corpus, bank=bank, jobs=args.jobs)
    counts = {}
    for r in rows:
        counts[r.split] = counts.get(r.split, 0) + 1
    return {"rows": len(rows), "splits": counts}


def cmd_label(cfg, run, args):
    cfg.validate(("manifest",) + (("scores_csv",) if cfg.label_provider == "csv-import" else ()))
    root = Path(cfg.paths["manifest"]).parent
    rows = read_manifest(cfg.paths["manifest"])
    out = label_scores(rows, cfg.label_provider, root, cfg.paths.get("scores_csv"))
    for r in out:
        r.audio_path = os.path.relpath(resolve(root, r.audio_path), run)
        r.clean_path = os.path.relpath(resolve(root, r.clean_path), run)
    for name in ("audiograms.csv", "conditions.json"):
        if (root / name).exists():
            shutil.copyfile(root / name, run / name)
    write_manifest(run / "manifest.jsonl", out)
    scores = np.array([r.true_score for r in out])
    return {"rows": len(out), "mean_score": float(scores.mean()), "min_score": float(scores.min()),
            "max_score": float(scores.max())}


def cmd_train(cfg, run, args):
    cfg.validate(("manifest",))
    dtype = torch_dtype(cfg)
    root, ags = manifest_tables(cfg.paths["manifest"])
    rows = read_manifest(cfg.paths["manifest"])
    teacher = make_teacher(cfg)
    tr = examples_for(labeled(rows, ("train",)), root, ags, cfg.variant, teacher)
    va = examples_for(labeled(rows, ("valid",)), root, ags, cfg.variant, teacher)
    if not tr:
        raise ConfigError("manifest has no labeled train rows")
    model = build_model(cfg.variant, cfg.encoder, cfg.predictor, derive_seed(cfg.seed, "model"),
                        cfg.student, teacher, dtype)
    warm = None
    if cfg.paths.get("weights"):
        warm, _ = load_weights(cfg.paths["weights"])
    result = train(model, tr, cfg.train, valid_set=va or None, warm_start=warm, dtype=dtype)
    save_weights(run / "weights.bin", model.state_dict(), model_meta(cfg, model))
    write_dict_rows(run / "history.csv", result.history)
    plotting.plot_history(result.history, run / "history.png")
    summary = {"steps": result.steps, "best_valid": result.best_valid, "stopped_early": result.stopped_early,
               "train_rows": len(tr), "valid_rows": len(va)}
    write_json(run / "train_summary.json", summary)
    return summary


def cmd_distill(cfg, run, args):
    cfg.validate(("manifest",))
    dtype = torch_dtype(cfg)
    root, ags = manifest_tables(cfg.paths["manifest"])
    rows = read_manifest(cfg.paths["manifest"])
    teacher = make_teacher(cfg)
    taps = cfg.student.tapped_layers

    def dex(rs):
        out = []
        for r in rs:
            x, _ = read_wav(resolve(root, r.audio_path))
            fb = prep_fbank(x, 16000, cfg.encoder.mel_bins)
            out.append(DistillExample(fb, teacher_targets(teacher, fb, taps), ags[r.audiogram_id].normalized(),
                                      float(r.true_score), r.clip_id))
        return out

    tr, va = dex(labeled(rows, ("train",))), dex(labeled(rows, ("valid",)))
    if not tr:
        raise ConfigError("manifest has no labeled train rows")
    model = build_model("student", cfg.encoder, cfg.predictor, derive_seed(cfg.seed, "model"),
                        cfg.student, teacher, dtype)
    if cfg.paths.get("predictor_weights"):
        state, meta = load_weights(cfg.paths["predictor_weights"])
        keep = {k: v for k, v in state.items() if k.startswith(("predictor.", "adapter."))}
        if not any(k.startswith("adapter.") for k in keep):
            raise ConfigError("predictor weights come from a variant without an adapter")
        model.load_state_dict(keep, strict=False)
    result = distill_train(model, tr, cfg.student, cfg.distill, va or None, run / "distill_report.csv", dtype)
    cfg_meta = replace(cfg, variant="student")
    save_weights(run / "weights.bin", model.state_dict(), model_meta(cfg_meta, model, topology=cfg.student.head_topology))
    plotting.plot_history(result.report, run / "distill.png", keys=("L_qual", "L_distil"))
    summary = {"steps": result.steps, "final_similarity": {str(k): v for k, v in result.final_similarity.items()}}
    write_json(run / "similarity.json", summary)
    return summary


def cmd_eval(cfg, run, args):
    cfg.validate(("manifest", "weights"))
    model, teacher, meta = load_model(cfg.paths["weights"])
    dtype = next(model.parameters()).dtype
    root, ags = manifest_tables(cfg.paths["manifest"])
    rows = labeled(read_manifest(cfg.paths["manifest"]), cfg.eval.splits) or labeled(read_manifest(cfg.paths["manifest"]))
    if not rows:
        raise ConfigError("manifest has no labeled rows")

    def predict_fn(rs):
        return predict_examples(model, examples_for(rs, root, ags, model.variant, teacher), dtype)

    report, preds = evaluate(predict_fn, rows)
    truth = {r.clip_id: r.true_score for r in rows}
    with open(run / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_id", "predicted_score", "true_score"])
        for cid in sorted(preds):
            w.writerow([cid, repr(float(preds[cid])), repr(float(truth[cid]))])
    report.write_csv(run / "eval_report.csv")
    (run / "eval_report.json").write_text(report.to_json() + "\n")
    report.write_long_csv(run / "eval_long.csv")
    ids = sorted(preds)
    p = np.array([preds[i] for i in ids])
    t = np.array([truth[i] for i in ids])
    curve = anchor_curve(p, t, cfg.eval.quantiles, cfg.eval.tolerance)
    write_dict_rows(run / "anchor_curve.csv", curve.rows())
    write_json(run / "anchor_curve.json", asdict(curve))
    plotting.plot_anchor_curve(curve, run / "anchor_curve.png")
    plotting.plot_scatter(p, t, run / "scatter.png")
    plotting.plot_slice_metrics(report, run / "lcc_by_seen.png", "seen", "lcc")
    o = report.overall
    return {"rows": o.count, "lcc": o.lcc, "srcc": o.srcc, "mse": o.mse}


def cmd_spl_sweep(cfg, run, args):
    cfg.validate(("manifest", "weights"))
    model, teacher, meta = load_model(cfg.paths["weights"])
    dtype = next(model.parameters()).dtype
    root, ags = manifest_tables(cfg.paths["manifest"])
    rows = labeled(read_manifest(cfg.paths["manifest"]), cfg.eval.splits) or labeled(read_manifest(cfg.paths["manifest"]))
    rows = sorted(rows, key=lambda r: r.clip_id)
    if len(rows) > cfg.eval.sweep_clips:
        pick = np.random.default_rng([cfg.seed, 0x5B]).choice(len(rows), cfg.eval.sweep_clips, replace=False)
        rows = [rows[i] for i in sorted(pick)]
    clips = [read_wav(resolve(root, r.audio_path))[0] for r in rows]
    hls = [ags[r.audiogram_id].normalized() for r in rows]

    def predict_fn(waves):
        ex = [Example(extract_raw(x, model.variant, teacher), hl, 0.0) for x, hl in zip(waves, hls)]
        return predict_examples(model, ex, dtype)

    result = spl_sweep(predict_fn, clips, cfg.eval.levels, truths=[r.true_score for r in rows])
    write_dict_rows(run / "spl_sweep.csv", result)
    write_json(run / "spl_sweep.json", result)
    plotting.plot_spl_sweep(result, run / "spl_sweep.png")
    return {"levels": len(result), "clips": len(clips)}


BENCH_VARIANTS = ("teacher", "student", "spectrogram")


def bench_variant(name, cfg, teacher, dtype):
    if name not in BENCH_VARIANTS:
        raise ConfigError(f"unknown bench variant {name!r}; choose from {BENCH_VARIANTS}")
    seed = derive_seed(cfg.seed, "bench", name)
    variant = {"teacher": "ws-adapter", "student": "student", "spectrogram": "spectrogram"}[name]
    model = build_model(variant, cfg.encoder, cfg.predictor, seed, cfg.student, teacher, dtype).eval()
    hl = torch.zeros(1, 8, dtype=dtype)

    def features(x):
        with torch.no_grad():
            if variant == "spectrogram":
                return torch.as_tensor(extract_raw(x, variant)[None], dtype=dtype)
            fb = torch.as_tensor(prep_fbank(x, 16000, cfg.encoder.mel_bins)[None], dtype=dtype)
            if variant == "student":
                return model.project(model.student(fb)[1])
            return model.project(model.fusion(teacher(fb)))

    def predict(f):
        with torch.no_grad():
            return model.predictor(f, hl)[0]

    return name, features, predict


def cmd_bench(cfg, run, args):
    dtype = torch_dtype(cfg)
    teacher = make_teacher(cfg)
    clips = [synth_clip(GENRES[i % len(GENRES)], derive_seed(cfg.seed, "bench-clip", i), cfg.clean_duration_s)
             for i in range(cfg.bench.clips)]
    variants = [bench_variant(n, cfg, teacher, dtype) for n in cfg.bench.variants]
    rows = bench_runtime(variants, clips, cfg.bench.repeats)
    write_dict_rows(run / "runtime.csv", rows)
    out = {"rows": [asdict(r) for r in rows]}
    by = {r.name: r for r in rows}
    if "teacher" in by and "student" in by:
        out["teacher_over_student_feature_time"] = by["teacher"].feature_mean_s / by["student"].feature_mean_s
    write_json(run / "runtime.json", out)
    plotting.plot_runtime(rows, run / "runtime.png")
    return {"variants": [r.name for r in rows], **{k: v for k, v in out.items() if k != "rows"}}


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_plot_data(cfg, run, args):
    """Re-render figures and one long-format CSV from earlier run directories."""
    if not args.sources:
        raise ConfigError("plot-data needs at least one --from run directory")
    long_rows, figures = [], []
    for src in map(Path, args.sources):
        if not src.is_dir():
            raise ConfigError(f"not a run directory: {src}")
        tag = src.name
        if (src / "eval_long.csv").exists():
            for r in _read_csv(src / "eval_long.csv"):
                long_rows.append({"source": tag, "slice": r["slice"], "metric": r["metric"],
                                  "value": r["value"], "count": r["count"]})
        if (src / "predictions.csv").exists():
            pr = _read_csv(src / "predictions.csv")
            p = np.array([float(r["predicted_score"]) for r in pr])
            t = np.array([float(r["true_score"]) for r in pr])
            figures.append(plotting.plot_scatter(p, t, run / f"{tag}-scatter.png", tag))
            curve = anchor_curve(p, t, cfg.eval.quantiles, cfg.eval.tolerance)
            figures.append(plotting.plot_anchor_curve(curve, run / f"{tag}-anchor_curve.png", tag))
            for a, m, c in zip(curve.anchors, curve.means, curve.counts):
                long_rows.append({"source": tag, "slice": f"anchor={a!r}", "metric": "mean_prediction",
                                  "value": "" if m is None else repr(m), "count": c})
        if (src / "spl_sweep.json").exists():
            sweep = json.loads((src / "spl_sweep.json").read_text())
            figures.append(plotting.plot_spl_sweep(sweep, run / f"{tag}-spl_sweep.png"))
            for r in sweep:
                long_rows.append({"source": tag, "slice": f"level={r['level_db']!r}", "metric": "mean_prediction",
                                  "value": repr(r["mean_prediction"]), "count": ""})
        if (src / "history.csv").exists():
            h = [{k: float(v) if v not in ("", "nan") else None for k, v in r.items()}
                 for r in _read_csv(src / "history.csv")]
            figures.append(plotting.plot_history(h, run / f"{tag}-history.png"))
        if (src / "distill_report.csv").exists():
            h = [{k: float(v) if v != "" else None for k, v in r.items()} for r in _read_csv(src / "distill_report.csv")]
            figures.append(plotting.plot_history(h, run / f"{tag}-distill.png", keys=("L_qual", "L_distil")))
    with open(run / "plot_data.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["source", "slice", "metric", "value", "count"])
        w.writeheader()
        w.writerows(long_rows)
    return {"figures": [p.name for p in figures], "rows": len(long_rows)}


HANDLERS = {
    "corpus synth": cmd_corpus_synth, "corpus audiograms": cmd_corpus_audiograms,
    "corpus build": cmd_corpus_build, "label": cmd_label, "train": cmd_train, "distill": cmd_distill,
    "eval": cmd_eval, "spl-sweep": cmd_spl_sweep, "bench": cmd_bench, "plot-data": cmd_plot_data,
}


# -- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="run directory (must be new or empty)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for corpus building")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="haaqinet", description="Music quality prediction for hearing-aid listeners")
    sub = p.add_subparsers(dest="cmd", required=True, metavar="command")

    corpus = sub.add_parser("corpus", help="clean clips, audiogram bank, degraded corpus")
    csub = corpus.add_subparsers(dest="corpus_cmd", required=True, metavar="action")
    csub.add_parser("synth", parents=[common], help="synthesize clean toy music clips")
    csub.add_parser("audiograms", parents=[common], help="write the audiogram bank")
    b = csub.add_parser("build", parents=[common], help="degrade + amplify clean clips into a manifest")
    b.add_argument("--clean-dir", dest="clean_dir")
    b.add_argument("--conditions", help="condition bank JSON (default: built-in 100)")

    lab = sub.add_parser("label", parents=[common], help="attach true scores to a manifest")
    lab.add_argument("--manifest")
    lab.add_argument("--provider", choices=("csv-import", "proxy-oracle"))
    lab.add_argument("--scores-csv", dest="scores_csv")

    tr = sub.add_parser("train", parents=[common], help="train the quality predictor")
    tr.add_argument("--manifest")
    tr.add_argument("--variant")
    tr.add_argument("--weights", help="warm-start weights")
    tr.add_argument("--steps", type=int)

    di = sub.add_parser("distill", parents=[common], help="distill the student encoder")
    di.add_argument("--manifest")
    di.add_argument("--predictor-weights", dest="predictor_weights")
    di.add_argument("--steps", type=int)

    for name, helptext in (("eval", "evaluate a model on a labeled manifest"),
                           ("spl-sweep", "predictions across presentation levels")):
        e = sub.add_parser(name, parents=[common], help=helptext)
        e.add_argument("--manifest")
        e.add_argument("--weights")
        e.add_argument("--quantiles", type=int)
        e.add_argument("--tolerance", type=float)
        e.add_argument("--levels", help="comma-separated dB SPL levels")

    be = sub.add_parser("bench", parents=[common], help="runtime per clip by variant")
    be.add_argument("--variants", help=f"comma-separated, from {','.join(BENCH_VARIANTS)}")

    pd = sub.add_parser("plot-data", parents=[common], help="figures + long CSV from run directories")
    pd.add_argument("--from", dest="sources", action="append", default=[])
    pd.add_argument("--quantiles", type=int)
    pd.add_argument("--tolerance", type=float)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    args.command = f"corpus {args.corpus_cmd}" if args.cmd == "corpus" else args.cmd
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    run = None
    try:
        cfg = resolve_config(args)
        cfg.validate()
        run = new_run_dir(args.out, args.command)
        (run / "config.json").write_text(cfg.dumps())
        summary = HANDLERS[args.command](cfg, run, args)
        write_json(run / "summary.json", summary)
        print(json.dumps({"run_dir": str(run), **summary}, sort_keys=True, default=float))
        return 0
    except Exception as e:  # noqa: BLE001 - every failure becomes an error record
        record = {"command": args.command, "error": type(e).__name__, "message": str(e)}
        if run is not None:
            record["traceback"] = traceback.format_exc()
            write_json(run / "error.json", record)
        print(json.dumps({k: v for k, v in record.items() if k != "traceback"}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
