"""Hearing-loss patterns: the six audiogram families, NAL-R gains and amplification.

Thresholds are stored in dB HL at the eight audiometric frequencies in
``FREQUENCIES``. The shape predicates below are mutually exclusive, so a
valid audiogram classifies into at most one family.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import firwin2

FREQUENCIES = (250, 500, 1000, 2000, 3000, 4000, 6000, 8000)
CATEGORIES = ("flat", "sloping", "rising", "cookie-bite", "noise-notched", "high-frequency")
HEARING_LOSS_DB = 20.0
MAX_THRESHOLD_DB = 120.0


class AudiogramError(ValueError):
    pass


class AmbiguousShapeError(AudiogramError):
    pass


@dataclass(frozen=True)
class Audiogram:
    thresholds: tuple
    category: str | None = None
    id: str = ""

    def __post_init__(self):
        t = tuple(float(v) for v in self.thresholds)
        object.__setattr__(self, "thresholds", t)
        if len(t) != len(FREQUENCIES):
            raise AudiogramError(f"expected {len(FREQUENCIES)} thresholds, got {len(t)}")
        if any(not 0.0 <= v <= MAX_THRESHOLD_DB for v in t):
            raise AudiogramError(f"thresholds must lie in [0, {MAX_THRESHOLD_DB:g}] dB HL: {t}")
        if self.category is not None and self.category not in CATEGORIES:
            raise AudiogramError(f"unknown category {self.category!r}")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.thresholds, dtype=np.float64)

    @property
    def has_loss(self) -> bool:
        return max(self.thresholds) > HEARING_LOSS_DB

    def normalized(self) -> np.ndarray:
        """Thresholds scaled to the predictor input range (dB / 100)."""
        return self.array / 100.0


# -- shape predicates ------------------------------------------------------
# Index map: 0=250 1=500 2=1k 3=2k 4=3k 5=4k 6=6k 7=8k

def _nondecreasing(t):
    return bool(np.all(np.diff(t) >= 0))


def _nonincreasing(t):
    return bool(np.all(np.diff(t) <= 0))


def _span(t):
    return float(t.max() - t.min())


def is_flat(t):
    return _span(t) <= 10.0


def is_sloping(t):
    return _nondecreasing(t) and _span(t) >= 20.0 and t[:3].max() > 25.0


def is_rising(t):
    return _nonincreasing(t) and _span(t) >= 20.0


def is_cookie_bite(t):
    mid_lo, mid_hi = min(t[2], t[3]), max(t[2], t[3])
    return mid_lo >= max(t[0], t[7]) + 15.0 and mid_hi > t[4:].max()


def is_noise_notched(t):
    peak = max(t[4], t[5])
    return peak >= max(t[3], t[7]) + 15.0 and peak == t.max()


def is_high_frequency(t):
    return _nondecreasing(t) and t[:3].max() <= 25.0 and t[5:].min() >= 40.0


SHAPE_PREDICATES = {
    "flat": is_flat,
    "sloping": is_sloping,
    "rising": is_rising,
    "cookie-bite": is_cookie_bite,
    "noise-notched": is_noise_notched,
    "high-frequency": is_high_frequency,
}


def matching_categories(thresholds) -> list[str]:
    t = np.asarray(thresholds, dtype=np.float64)
    return [name for name, pred in SHAPE_PREDICATES.items() if pred(t)]


def classify_audiogram(a: Audiogram) -> str:
    """Return the single family whose shape predicate matches ``a``.

    Raises:
        AmbiguousShapeError: if no predicate or more than one predicate matches.
    """
    hits = matching_categories(a.thresholds)
    if len(hits) != 1:
        raise AmbiguousShapeError(f"thresholds {a.thresholds} match {hits or 'no family'}")
    return hits[0]


# -- generation ------------------------------------------------------------

def _sorted_steps(rng, total, n):
    """n non-negative integer increments summing to ``total``."""
    cuts = np.sort(rng.integers(0, total + 1, size=n - 1))
    return np.diff(np.concatenate([[0], cuts, [total]]))


def _gen_flat(rng):
    base = rng.integers(25, 71)
    return base + rng.integers(0, 11, size=8)


def _gen_sloping(rng):
    start = rng.integers(26, 46)
    rise = rng.integers(20, 51)
    return start + np.cumsum(np.concatenate([[0], _sorted_steps(rng, rise, 7)]))


def _gen_rising(rng):
    end = rng.integers(15, 36)
    rise = rng.integers(20, 46)
    steps = _sorted_steps(rng, rise, 7)
    return end + np.cumsum(np.concatenate([[0], steps]))[::-1]


def _gen_cookie_bite(rng):
    t = np.zeros(8, dtype=np.int64)
    t[0] = rng.integers(10, 31)
    t[7] = rng.integers(10, 31)
    mid = max(t[0], t[7]) + rng.integers(20, 41)
    t[2] = mid + rng.integers(0, 6)
    t[3] = mid + rng.integers(0, 6)
    t[1] = (t[0] + t[2]) // 2 + rng.integers(-3, 4)
    top = max(t[2], t[3])
    t[4] = top - rng.integers(3, 10)
    t[5] = (t[4] + t[7]) // 2 + rng.integers(0, 4)
    t[6] = (t[5] + t[7]) // 2
    return t


def _gen_noise_notched(rng):
    t = np.zeros(8, dtype=np.int64)
    base = rng.integers(5, 26)
    t[:4] = base + rng.integers(0, 6, size=4)
    t[7] = base + rng.integers(0, 11)
    peak = max(t[3], t[7]) + rng.integers(20, 46)
    t[5] = peak
    t[4] = peak - rng.integers(5, 16)
    t[6] = peak - rng.integers(5, 16)
    return t


def _gen_high_frequency(rng):
    t = np.zeros(8, dtype=np.int64)
    t[:3] = np.sort(rng.integers(0, 26, size=3))
    t[3] = t[2] + rng.integers(0, 16)
    t[4] = max(t[3], rng.integers(30, 56))
    t[5] = max(t[4], 40) + rng.integers(0, 16)
    t[6] = t[5] + rng.integers(0, 11)
    t[7] = t[6] + rng.integers(0, 11)
    return t


_GENERATORS = {
    "flat": _gen_flat,
    "sloping": _gen_sloping,
    "rising": _gen_rising,
    "cookie-bite": _gen_cookie_bite,
    "noise-notched": _gen_noise_notched,
    "high-frequency": _gen_high_frequency,
}


def generate_audiogram(category: str, seed: int) -> Audiogram:
    """Sample an integer-valued audiogram of the given family.

    Deterministic in ``(category, seed)``.
    """
    if category not in _GENERATORS:
        raise AudiogramError(f"unknown category {category!r}")
    rng = np.random.default_rng([int(seed), CATEGORIES.index(category)])
    t = np.clip(_GENERATORS[category](rng), 0, int(MAX_THRESHOLD_DB))
    return Audiogram(tuple(int(v) for v in t), category=category)


@dataclass
class AudiogramBank:
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)

    @property
    def all(self) -> list:
        return self.train + self.test

    def by_id(self) -> dict:
        return {a.id: a for a in self.all}


def build_bank(master_seed: int, per_category: int = 50, n_test: int = 10) -> AudiogramBank:
    """The 6 x ``per_category`` pattern bank, split train/test within each family."""
    bank = AudiogramBank()
    ss = np.random.SeedSequence(int(master_seed))
    for cat, child in zip(CATEGORIES, ss.spawn(len(CATEGORIES))):
        seeds = child.generate_state(per_category, dtype=np.uint32)
        for i, s in enumerate(seeds):
            a = generate_audiogram(cat, int(s))
            a = Audiogram(a.thresholds, category=cat, id=f"{cat}-{i:02d}")
            (bank.test if i >= per_category - n_test else bank.train).append(a)
    return bank


CSV_HEADER = ["id", "category"] + [f"t{f}" for f in FREQUENCIES]


def bank_to_csv(audiograms) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for a in audiograms:
        w.writerow([a.id, a.category] + [int(round(v)) for v in a.thresholds])
    return buf.getvalue()


def write_bank(path, audiograms) -> None:
    Path(path).write_text(bank_to_csv(audiograms))


def read_bank(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and list(rows[0].keys()) != CSV_HEADER:
        raise AudiogramError(f"unexpected audiogram CSV header in {path}")
    return [
        Audiogram(tuple(int(r[f"t{f}"]) for f in FREQUENCIES), category=r["category"], id=r["id"])
        for r in rows
    ]


# -- NAL-R -----------------------------------------------------------------

@dataclass(frozen=True)
class NalrConfig:
    # Byrne & Dillon (1986) frequency corrections; 3 kHz and above share -2 dB.
    correction_db: tuple = (-17.0, -8.0, 1.0, -1.0, -2.0, -2.0, -2.0, -2.0)
    slope: float = 0.31
    three_freq_factor: float = 0.05
    max_gain_db: float = 80.0


NALR = NalrConfig()


def nal_r_gains(a: Audiogram, cfg: NalrConfig = NALR) -> np.ndarray:
    """NAL-R insertion gains in dB at the audiogram frequencies, clamped to [0, max].

    A listener with no measurable loss gets no prescription at all, so the
    positive 1 kHz correction does not leak into normal-hearing gains.
    """
    h = a.array
    if not np.any(h > 0):
        return np.zeros_like(h)
    x = cfg.three_freq_factor * (h[1] + h[2] + h[3])
    gains = x + cfg.slope * h + np.asarray(cfg.correction_db)
    return np.clip(gains, 0.0, cfg.max_gain_db)


PRESCRIPTION_TAPS = 1023


def prescription_filter(gains_db, fs: int = 16000, numtaps: int = PRESCRIPTION_TAPS) -> np.ndarray:
    """Linear-phase FIR whose magnitude interpolates ``gains_db`` on a log-frequency axis.

    Below 250 Hz and above 8 kHz the edge gains are held constant.
    """
    gains_db = np.asarray(gains_db, dtype=np.float64)
    if gains_db.shape != (len(FREQUENCIES),):
        raise AudiogramError("gain vector must have one entry per audiogram frequency")
    nyq = fs / 2.0
    grid = np.linspace(0.0, nyq, 2049)
    logf = np.log2(np.clip(grid, FREQUENCIES[0], min(FREQUENCIES[-1], nyq)))
    centers = np.log2(np.asarray(FREQUENCIES, dtype=np.float64))
    mag = 10.0 ** (np.interp(logf, centers, gains_db) / 20.0)
    return firwin2(numtaps, grid / nyq, mag, window="hamming")


def apply_prescription(x, gains_db, fs: int = 16000) -> np.ndarray:
    """Amplify ``x`` by the interpolated gain curve with a zero-phase FIR."""
    if fs != 16000:
        raise ValueError(f"prescription expects 16 kHz input, got {fs} Hz")
    x = np.asarray(x, dtype=np.float64)
    h = prescription_filter(gains_db, fs)
    # centred full convolution keeps the output aligned with the input
    y = np.convolve(x, h)
    d = (len(h) - 1) // 2
    return y[d:d + len(x)]
