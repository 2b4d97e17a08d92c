"""The 100-condition degradation bank and its stage interpreter.

Conditions fall into three groups: 32 noise/nonlinear (A), 32 linear
filtering (B) and 36 combined (C, six nonlinear recipes crossed with six
filters). Each group-A and group-B family has four parameter settings.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .filters import FilterSpec, linear_filter
from .noise import add_noise
from .nonlinear import SpecSubConfig, WdrcConfig, peak_clip, quantize, spectral_subtract, wdrc

STAGE_OPS = ("add-noise", "peak-clip", "quantize", "wdrc", "spectral-subtract", "filter")


@dataclass(frozen=True)
class Stage:
    op: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.op not in STAGE_OPS:
            raise ValueError(f"unknown stage op {self.op!r}")

    def to_dict(self):
        return {"op": self.op, **self.params}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        return cls(d.pop("op"), d)


@dataclass(frozen=True)
class ProcessingCondition:
    id: str
    stages: tuple
    group: str = ""
    family: str = ""
    label: str = ""

    def __post_init__(self):
        if not self.stages:
            raise ValueError(f"condition {self.id!r} has no stages")
        object.__setattr__(self, "stages", tuple(
            s if isinstance(s, Stage) else Stage.from_dict(s) for s in self.stages))

    def to_dict(self):
        return {"id": self.id, "group": self.group, "family": self.family, "label": self.label,
                "stages": [s.to_dict() for s in self.stages]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["id"], tuple(Stage.from_dict(s) for s in d["stages"]),
                   d.get("group", ""), d.get("family", ""), d.get("label", ""))


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary parts (master seed, clip id, condition id, ...)."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def apply_stage(x, stage: Stage, fs: int, rng: np.random.Generator) -> np.ndarray:
    p = stage.params
    if stage.op == "add-noise":
        return add_noise(x, p["kind"], p["snr_db"], fs=fs, rng=rng)
    if stage.op == "peak-clip":
        return peak_clip(x, p.get("threshold", 1.0), p.get("level"))
    if stage.op == "quantize":
        return quantize(x, p["bits"])
    if stage.op == "wdrc":
        return wdrc(x, WdrcConfig(**p), fs=fs)
    if stage.op == "spectral-subtract":
        return spectral_subtract(x, SpecSubConfig(**p), fs=fs)
    return linear_filter(x, FilterSpec.from_dict(p), fs=fs)


def apply_condition(x, cond: ProcessingCondition, fs: int = 16000, seed: int = 0) -> np.ndarray:
    """Run the condition's stages left to right; noise draws come from ``seed``."""
    rng = np.random.default_rng(seed)
    y = np.asarray(x, dtype=np.float64)
    for stage in cond.stages:
        y = apply_stage(y, stage, fs, rng)
    return y


# -- default grid ----------------------------------------------------------

DEFAULT_GRID = {
    "snrs_db": [-6, 0, 6, 12],
    "clip_thresholds": [0.125, 0.25, 0.5, 0.75],
    "bits": [4, 6, 8, 10],
    "wdrc_ratios": [1.5, 2.0, 3.0, 4.0],
    "lowpass_hz": [2000, 3000, 4000, 6000],
    "highpass_hz": [200, 500, 1000, 2000],
    "bandpass_hz": [[200, 2000], [200, 4000], [500, 4000], [500, 6000]],
    "tilts_db_per_oct": [1.5, 3.0, 4.5, 6.0],
    "resonance_centers_hz": [500, 1000, 2000, 4000],
    "multi_resonance_centers_hz": [[250, 500, 1000], [500, 1000, 2000], [750, 1500, 3000], [1000, 2000, 4000]],
    "multi_resonance_lowpass_hz": [2000, 3000, 4000, 6000],
    "resonance_q": 10.0,
    "resonance_gain_db": 10.0,
    "combined": {
        "snr_db": 6, "clip_threshold": 0.25, "bits": 6, "wdrc_ratio": 3.0,
        "highpass_hz": 500, "lowpass_hz": 4000, "tilt_db_per_oct": 6.0,
        "resonance_center_hz": 1000, "multi_resonance_centers_hz": [500, 1000, 2000],
    },
}

# family names withheld from training by default (18 conditions in the default grid)
DEFAULT_UNSEEN_FAMILIES = (
    "comp+babble", "comp+ss+babble", "multi-peak+lp",
    "comp+babble*hp", "comp+babble*lp", "comp+babble*pos-tilt",
    "comp+babble*neg-tilt", "comp+babble*single-peak", "comp+babble*multi-peak",
)


def _noise(kind, snr):
    return Stage("add-noise", {"kind": kind, "snr_db": float(snr)})


def _wdrc(ratio):
    return Stage("wdrc", {"ratio": float(ratio)})


def _filt(kind, **params):
    return Stage("filter", {"kind": kind, **params})


def _nonlinear_recipes(g):
    """Group-A families: name -> list of (label, stages)."""
    snrs = g["snrs_db"]
    return {
        "ltass": [(f"ltass snr={s:+g}", [_noise("ltass", s)]) for s in snrs],
        "babble": [(f"babble snr={s:+g}", [_noise("babble", s)]) for s in snrs],
        "peak-clip": [(f"peak clip {t:g}", [Stage("peak-clip", {"threshold": float(t)})])
                      for t in g["clip_thresholds"]],
        "quant": [(f"quantize {b} bit", [Stage("quantize", {"bits": int(b)})]) for b in g["bits"]],
        "comp": [(f"wdrc ratio={r:g}", [_wdrc(r)]) for r in g["wdrc_ratios"]],
        "comp+babble": [(f"babble snr={s:+g} + wdrc", [_noise("babble", s), _wdrc(3.0)]) for s in snrs],
        "ssub+babble": [(f"babble snr={s:+g} + spectral subtraction",
                         [_noise("babble", s), Stage("spectral-subtract")]) for s in snrs],
        "comp+ss+babble": [(f"babble snr={s:+g} + spectral subtraction + wdrc",
                            [_noise("babble", s), Stage("spectral-subtract"), _wdrc(3.0)]) for s in snrs],
    }


def _filter_recipes(g):
    q, gain = g["resonance_q"], g["resonance_gain_db"]
    return {
        "hp": [(f"highpass {f:g} Hz", [_filt("highpass", cutoff=float(f))]) for f in g["highpass_hz"]],
        "lp": [(f"lowpass {f:g} Hz", [_filt("lowpass", cutoff=float(f))]) for f in g["lowpass_hz"]],
        "bp": [(f"bandpass {lo:g}-{hi:g} Hz", [_filt("bandpass", low=float(lo), high=float(hi))])
               for lo, hi in g["bandpass_hz"]],
        "pos-tilt": [(f"tilt {s:+g} dB/oct", [_filt("tilt", slope_db_per_oct=float(s))])
                     for s in g["tilts_db_per_oct"]],
        "neg-tilt": [(f"tilt {-s:+g} dB/oct", [_filt("tilt", slope_db_per_oct=-float(s))])
                     for s in g["tilts_db_per_oct"]],
        "single-peak": [(f"resonance {c:g} Hz", [_filt("resonance", center=float(c), q=q, gain_db=gain)])
                        for c in g["resonance_centers_hz"]],
        "multi-peak": [(f"resonances {'/'.join(f'{c:g}' for c in cs)} Hz",
                        [_filt("multi-resonance", centers=[float(c) for c in cs], q=q, gain_db=gain)])
                       for cs in g["multi_resonance_centers_hz"]],
        "multi-peak+lp": [(f"resonances 500/1000/2000 Hz + lowpass {f:g} Hz",
                           [_filt("multi-resonance-lowpass", centers=[500.0, 1000.0, 2000.0],
                                  q=q, gain_db=gain, cutoff=float(f))])
                          for f in g["multi_resonance_lowpass_hz"]],
    }


def _combined_recipes(g):
    c = g["combined"]
    q, gain = g["resonance_q"], g["resonance_gain_db"]
    nonlinear = {
        "ltass": [_noise("ltass", c["snr_db"])],
        "babble": [_noise("babble", c["snr_db"])],
        "peak-clip": [Stage("peak-clip", {"threshold": float(c["clip_threshold"])})],
        "quant": [Stage("quantize", {"bits": int(c["bits"])})],
        "comp": [_wdrc(c["wdrc_ratio"])],
        "comp+babble": [_noise("babble", c["snr_db"]), _wdrc(c["wdrc_ratio"])],
    }
    filters = {
        "hp": _filt("highpass", cutoff=float(c["highpass_hz"])),
        "lp": _filt("lowpass", cutoff=float(c["lowpass_hz"])),
        "pos-tilt": _filt("tilt", slope_db_per_oct=float(c["tilt_db_per_oct"])),
        "neg-tilt": _filt("tilt", slope_db_per_oct=-float(c["tilt_db_per_oct"])),
        "single-peak": _filt("resonance", center=float(c["resonance_center_hz"]), q=q, gain_db=gain),
        "multi-peak": _filt("multi-resonance", centers=[float(v) for v in c["multi_resonance_centers_hz"]],
                            q=q, gain_db=gain),
    }
    return {f"{n}*{f}": [(f"{n} + {f}", nl + [flt])] for n, nl in nonlinear.items()
            for f, flt in filters.items()}


def default_bank(grid: dict | None = None) -> list:
    """Enumerate the 32 + 32 + 36 default conditions."""
    g = DEFAULT_GRID if grid is None else grid
    bank = []
    for group, recipes in (("A", _nonlinear_recipes(g)), ("B", _filter_recipes(g)),
                           ("C", _combined_recipes(g))):
        i = 0
        for family, settings in recipes.items():
            for label, stages in settings:
                i += 1
                bank.append(ProcessingCondition(f"{group}{i:02d}", tuple(stages), group, family, label))
    return bank


def unseen_ids(bank, families=DEFAULT_UNSEEN_FAMILIES) -> list:
    fam = set(families)
    return [c.id for c in bank if c.family in fam]


def validate_bank(bank) -> None:
    ids = [c.id for c in bank]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"duplicate condition ids: {dup}")


def bank_to_json(bank) -> str:
    return json.dumps({"conditions": [c.to_dict() for c in bank]}, indent=1, sort_keys=True)


def write_bank(path, bank) -> None:
    Path(path).write_text(bank_to_json(bank) + "\n")


def read_bank(path) -> list:
    data = json.loads(Path(path).read_text())
    bank = [ProcessingCondition.from_dict(d) for d in data["conditions"]]
    validate_bank(bank)
    return bank
