"""Clean-clip synthesis, manifests, corpus building and score labeling."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .audiogram import Audiogram, apply_prescription, build_bank, nal_r_gains
from .audiogram import read_bank as read_audiograms
from .audiogram import write_bank as write_audiograms
from .dsp.audio_io import read_wav, write_wav
from .dsp.conditions import DEFAULT_UNSEEN_FAMILIES, apply_condition, default_bank, derive_seed, unseen_ids
from .dsp.conditions import read_bank as read_conditions
from .dsp.conditions import write_bank as write_conditions
from .dsp.levels import SPL_REF_DB, adjust_spl
from .proxy import ProxyConfig, proxy_score

log = logging.getLogger(__name__)

FS = 16000
GENRES = ("classical", "rock", "electronic", "folk")
SPLITS = ("train", "valid", "test-seen", "test-unseen")


# -- synthetic clean music -------------------------------------------------

def _notes(rng, n, lo=110.0, hi=880.0):
    return lo * 2.0 ** (rng.integers(0, int(12 * np.log2(hi / lo)), n) / 12.0)


def _adsr(n, fs, a=0.01, r=0.2):
    env = np.ones(n)
    na, nr = min(n, int(a * fs)), min(n, int(r * fs))
    env[:na] = np.linspace(0, 1, na)
    if nr:
        env[-nr:] *= np.linspace(1, 0, nr)
    return env


def _tone(f, n, fs, rng, harmonics, decay=0.0, vibrato=0.0):
    t = np.arange(n) / fs
    phase = 2 * np.pi * f * t + vibrato * np.sin(2 * np.pi * 5.0 * t)
    y = sum(a * np.sin(k * phase + rng.uniform(0, 2 * np.pi)) for k, a in enumerate(harmonics, 1))
    return y * np.exp(-decay * t)


def _drums(n, fs, rng, bpm):
    out = np.zeros(n)
    beat = int(60.0 / bpm * fs)
    t = np.arange(int(0.15 * fs)) / fs
    kick = np.sin(2 * np.pi * (50 + 100 * np.exp(-30 * t)) * t) * np.exp(-20 * t)
    hat = rng.standard_normal(int(0.05 * fs)) * np.exp(-80 * np.arange(int(0.05 * fs)) / fs)
    for k, start in enumerate(range(0, n, beat // 2)):
        src = kick if k % 2 == 0 else 0.3 * hat
        m = min(len(src), n - start)
        out[start:start + m] += src[:m]
    return out


def _sequence(n, fs, rng, note_len, voice):
    out = np.zeros(n)
    step = int(note_len * fs)
    for start in range(0, n, step):
        m = min(step, n - start)
        out[start:start + m] += voice(_notes(rng, 1)[0], m) * _adsr(m, fs)
    return out


def synth_clip(genre: str, seed: int, duration_s: float = 2.0, fs: int = FS) -> np.ndarray:
    """Deterministic toy music in one of ``GENRES``, normalized to 65 dB SPL."""
    if genre not in GENRES:
        raise ValueError(f"unknown genre {genre!r}")
    rng = np.random.default_rng([int(seed), GENRES.index(genre)])
    n = int(round(duration_s * fs))
    if genre == "classical":
        x = sum(_sequence(n, fs, rng, rng.uniform(0.3, 0.6),
                          lambda f, m: _tone(f, m, fs, rng, [1, .5, .3, .2], vibrato=0.3)) for _ in range(3))
    elif genre == "rock":
        lead = _sequence(n, fs, rng, 0.25, lambda f, m: _tone(f, m, fs, rng, [1, .7, .5, .4, .3, .2]))
        x = np.tanh(3 * lead) + 0.8 * _drums(n, fs, rng, rng.uniform(100, 140))
    elif genre == "electronic":
        saw = [1.0 / k for k in range(1, 16)]
        x = _sequence(n, fs, rng, 0.125, lambda f, m: _tone(f, m, fs, rng, saw)) \
            + _drums(n, fs, rng, rng.uniform(120, 130))
    else:
        x = sum(_sequence(n, fs, rng, rng.uniform(0.2, 0.4),
                          lambda f, m: _tone(f, m, fs, rng, [1, .6, .4, .3, .2, .1], decay=6.0)) for _ in range(2))
    x = x + 1e-3 * rng.standard_normal(n)
    return adjust_spl(x, SPL_REF_DB)


def synth_clean_dir(out_dir, n_clips: int, seed: int, duration_s: float = 2.0) -> list:
    """Write ``n_clips`` clips round-robin over genres as ``<genre>/<genre>-NNN.wav``."""
    out = Path(out_dir)
    paths = []
    for i in range(n_clips):
        g = GENRES[i % len(GENRES)]
        p = out / g / f"{g}-{i:03d}.wav"
        p.parent.mkdir(parents=True, exist_ok=True)
        write_wav(p, synth_clip(g, derive_seed(seed, "clean", i), duration_s))
        paths.append(p)
    return paths


# -- manifest --------------------------------------------------------------

@dataclass
class ManifestRow:
    clip_id: str
    audio_path: str
    genre: str
    condition_id: str
    audiogram_id: str
    split: str
    true_score: float | None = None
    clean_path: str = ""
    audiogram_category: str = ""
    source_clip: str = ""

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.true_score is not None and not 0.0 <= self.true_score <= 1.0:
            raise ValueError(f"{self.clip_id}: score {self.true_score} outside [0, 1]")

    @property
    def seen(self) -> str:
        return "unseen" if self.split == "test-unseen" else "seen"


def write_manifest(path, rows) -> None:
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")


def read_manifest(path) -> list:
    names = {f.name for f in fields(ManifestRow)}
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                rows.append(ManifestRow(**{k: v for k, v in d.items() if k in names}))
    return rows


def resolve(root, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else Path(root) / p


# -- corpus building -------------------------------------------------------

@dataclass
class CorpusConfig:
    mode: str = "sampled"               # sampled | exhaustive
    conditions_per_clip: int = 1
    audiograms_per_clip: int = 1
    test_fraction: float = 0.2
    valid_fraction: float = 0.2
    unseen_families: tuple = DEFAULT_UNSEEN_FAMILIES
    audiograms_per_category: int = 50
    test_audiograms_per_category: int = 10
    wav_format: str = "float32"

    def __post_init__(self):
        self.unseen_families = tuple(self.unseen_families)
        if self.mode not in ("sampled", "exhaustive"):
            raise ValueError(f"unknown corpus mode {self.mode!r}")
        if self.conditions_per_clip < 1 or self.audiograms_per_clip < 1:
            raise ValueError("need at least one condition and one audiogram per clip")
        if not 0.0 <= self.test_fraction < 1.0 or not 0.0 <= self.valid_fraction < 1.0:
            raise ValueError("fractions must lie in [0, 1)")

    def to_dict(self):
        d = asdict(self)
        d["unseen_families"] = list(self.unseen_families)
        return d


def list_clean(clean_dir) -> list:
    root = Path(clean_dir)
    paths = sorted(p for p in root.rglob("*.wav"))
    if not paths:
        raise FileNotFoundError(f"no .wav files under {root}")
    return paths


def _genre_of(path: Path, root: Path) -> str:
    rel = path.relative_to(root)
    return rel.parts[0] if len(rel.parts) > 1 else "unknown"


def _render(job):
    clean_path, out_path, cond, gains, seed, fmt = job
    x, _ = read_wav(clean_path)
    y = apply_prescription(apply_condition(adjust_spl(x, SPL_REF_DB), cond, FS, seed), gains, FS)
    write_wav(out_path, y, FS, fmt)
    return str(out_path)


def plan_corpus(clean_paths, clean_root, bank, audiograms, cfg: CorpusConfig, seed: int) -> list:
    """Decide every (clip, condition, audiogram, split) without touching audio."""
    rng = np.random.default_rng([int(seed), 0xC0])
    unseen = set(unseen_ids(bank, cfg.unseen_families))
    seen_pool = [c for c in bank if c.id not in unseen]
    train_ags, test_ags = audiograms
    n = len(clean_paths)
    order = rng.permutation(n)
    n_test = int(round(cfg.test_fraction * n)) if n > 1 else 0
    test_clips = set(order[:n_test].tolist())
    rows = []
    for i, path in enumerate(clean_paths):
        is_test = i in test_clips
        pool = bank if is_test else seen_pool
        ag_pool = test_ags if is_test else train_ags
        if cfg.mode == "exhaustive":
            conds = list(pool)
        else:
            k = min(cfg.conditions_per_clip, len(pool))
            conds = [pool[j] for j in sorted(rng.choice(len(pool), k, replace=False))]
        m = min(cfg.audiograms_per_clip, len(ag_pool))
        stem = Path(path).stem
        for cond in conds:
            for j in sorted(rng.choice(len(ag_pool), m, replace=False)):
                ag = ag_pool[j]
                if is_test:
                    split = "test-unseen" if cond.id in unseen else "test-seen"
                else:
                    split = "train"
                rows.append(ManifestRow(
                    clip_id=f"{stem}__{cond.id}__{ag.id}", audio_path="", genre=_genre_of(Path(path), Path(clean_root)),
                    condition_id=cond.id, audiogram_id=ag.id, split=split,
                    clean_path=str(path), audiogram_category=ag.category or "", source_clip=stem))
    ids = [r.clip_id for r in rows]
    if len(set(ids)) != len(ids):
        raise ValueError("clip id collision in corpus plan")
    train_idx = [i for i, r in enumerate(rows) if r.split == "train"]
    n_valid = int(round(cfg.valid_fraction * len(train_idx))) if len(train_idx) > 1 else 0
    for i in rng.permutation(train_idx)[:n_valid]:
        rows[i].split = "valid"
    return rows


def corpus_build(clean_dir, out_dir, seed: int, cfg: CorpusConfig = CorpusConfig(), bank=None,
                 audiogram_bank=None, jobs: int = 1) -> list:
    """Degrade, amplify and write every planned row; returns the manifest rows.

    Writes ``manifest.jsonl``, ``conditions.json``, ``audiograms.csv`` and
    ``audio/<clip_id>.wav`` under ``out_dir``. Paths in the manifest are
    relative to ``out_dir``.
    """
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    clean_root = Path(clean_dir).resolve()
    clean_paths = [p.resolve() for p in list_clean(clean_root)]
    bank = bank if bank is not None else default_bank()
    ab = audiogram_bank if audiogram_bank is not None else build_bank(
        seed, cfg.audiograms_per_category, cfg.test_audiograms_per_category)
    rows = plan_corpus(clean_paths, clean_root, bank, (ab.train, ab.test), cfg, seed)
    conds = {c.id: c for c in bank}
    ags = {a.id: a for a in ab.all}
    jobs_list = []
    for r in rows:
        r.audio_path = f"audio/{r.clip_id}.wav"
        gains = nal_r_gains(ags[r.audiogram_id])
        jobs_list.append((r.clean_path, out / r.audio_path, conds[r.condition_id], gains,
                          derive_seed(seed, r.clip_id), cfg.wav_format))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            list(ex.map(_render, jobs_list, chunksize=4))
    else:
        for j in jobs_list:
            _render(j)
    write_conditions(out / "conditions.json", bank)
    write_audiograms(out / "audiograms.csv", ab.all)
    write_manifest(out / "manifest.jsonl", rows)
    log.info("built %d rows from %d clean clips", len(rows), len(clean_paths))
    return rows


# -- labeling --------------------------------------------------------------

def read_scores_csv(path) -> dict:
    with open(path, newline="") as fh:
        return {r["clip_id"]: float(r["score"]) for r in csv.DictReader(fh)}


def proxy_label(row: ManifestRow, root, audiograms: dict, cfg: ProxyConfig = ProxyConfig()) -> float:
    ag: Audiogram = audiograms[row.audiogram_id]
    clean, _ = read_wav(resolve(root, row.clean_path))
    reference = apply_prescription(adjust_spl(clean, SPL_REF_DB), nal_r_gains(ag), FS)
    processed, _ = read_wav(resolve(root, row.audio_path))
    return proxy_score(reference, processed, ag.thresholds, FS, cfg)


def label_scores(rows, provider: str, root=".", scores_csv=None, audiograms=None,
                 proxy_cfg: ProxyConfig = ProxyConfig()) -> list:
    """Return copies of ``rows`` with ``true_score`` filled in.

    ``csv-import`` reads ``clip_id,score``; every row must be present and in
    [0, 1]. ``proxy-oracle`` runs the built-in intrusive proxy.
    """
    out = []
    if provider == "csv-import":
        if scores_csv is None:
            raise ValueError("csv-import needs a scores file")
        scores = read_scores_csv(scores_csv)
        missing = [r.clip_id for r in rows if r.clip_id not in scores]
        if missing:
            raise KeyError(f"{len(missing)} rows have no score, e.g. {missing[0]}")
        for r in rows:
            s = scores[r.clip_id]
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"{r.clip_id}: score {s} outside [0, 1]")
            out.append(ManifestRow(**{**asdict(r), "true_score": s}))
    elif provider == "proxy-oracle":
        if audiograms is None:
            audiograms = {a.id: a for a in read_audiograms(Path(root) / "audiograms.csv")}
        for r in rows:
            s = float(np.clip(proxy_label(r, root, audiograms, proxy_cfg), 0.0, 1.0))
            out.append(ManifestRow(**{**asdict(r), "true_score": s}))
    else:
        raise ValueError(f"unknown score provider {provider!r}")
    return out


def load_corpus_tables(root):
    root = Path(root)
    return read_conditions(root / "conditions.json"), {a.id: a for a in read_audiograms(root / "audiograms.csv")}
