"""Metrics, sliced evaluation reports, anchor curves, SPL sweeps and runtime benchmarks."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .dsp.levels import SPL_REF_DB, SPL_SWEEP_LEVELS, adjust_spl, measure_spl


class DegenerateMetricError(ValueError):
    pass


def _pair(x, y, min_len=2):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < min_len:
        raise ValueError(f"need at least {min_len} values")
    return x, y


def lcc(x, y) -> float:
    """Pearson linear correlation coefficient."""
    x, y = _pair(x, y)
    dx, dy = x - x.mean(), y - y.mean()
    den = math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy)))
    if den == 0.0:
        raise DegenerateMetricError("zero variance")
    return float(np.clip(np.dot(dx, dy) / den, -1.0, 1.0))


def srcc(x, y) -> float:
    """Spearman rank correlation; tied values share their average rank."""
    x, y = _pair(x, y)
    try:
        return lcc(rankdata(x), rankdata(y))
    except DegenerateMetricError:
        raise DegenerateMetricError("all ranks tied") from None


def mse(x, y) -> float:
    x, y = _pair(x, y, min_len=1)
    return float(np.mean((x - y) ** 2))


# -- sliced evaluation -----------------------------------------------------

SLICE_KEYS = ("genre", "audiogram_category", "condition_id", "seen")


@dataclass
class SliceMetrics:
    slice: str
    value: str
    count: int
    lcc: float | None = None
    srcc: float | None = None
    mse: float | None = None


@dataclass
class EvalReport:
    overall: SliceMetrics
    slices: list = field(default_factory=list)

    def rows(self):
        return [self.overall] + self.slices

    def to_json(self) -> str:
        return json.dumps({"overall": asdict(self.overall), "slices": [asdict(s) for s in self.slices]},
                          indent=1, sort_keys=True)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slice", "value", "count", "lcc", "srcc", "mse"])
            for s in self.rows():
                w.writerow([s.slice, s.value, s.count] + ["" if v is None else repr(v) for v in (s.lcc, s.srcc, s.mse)])

    def write_long_csv(self, path):
        """Plot-ready ``slice,metric,value,count``; undefined metrics are omitted."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slice", "metric", "value", "count"])
            for s in self.rows():
                for m in ("lcc", "srcc", "mse"):
                    v = getattr(s, m)
                    if v is not None:
                        w.writerow([f"{s.slice}={s.value}" if s.slice != "overall" else "overall", m, repr(v), s.count])


def slice_metrics(name, value, pred, truth) -> SliceMetrics:
    sm = SliceMetrics(name, value, len(pred))
    if len(pred) < 2:
        return sm
    sm.mse = mse(pred, truth)
    for m in ("lcc", "srcc"):
        try:
            setattr(sm, m, globals()[m](pred, truth))
        except DegenerateMetricError:
            pass
    return sm


def evaluate_predictions(pred, truth, tags=None, slice_keys=SLICE_KEYS) -> EvalReport:
    """Metrics overall and for each value of every slice key in ``tags`` (list of dicts)."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.size == 0:
        raise ValueError("empty evaluation set")
    if pred.shape != truth.shape:
        raise ValueError("prediction / truth length mismatch")
    report = EvalReport(slice_metrics("overall", "all", pred, truth))
    if tags is None:
        return report
    for key in slice_keys:
        values = sorted({str(t.get(key, "")) for t in tags})
        for v in values:
            idx = np.array([str(t.get(key, "")) == v for t in tags])
            report.slices.append(slice_metrics(key, v, pred[idx], truth[idx]))
    return report


def evaluate(predict_fn, rows, slice_keys=SLICE_KEYS) -> tuple:
    """Score manifest ``rows`` with ``predict_fn(rows) -> scores``; returns (report, predictions).

    Rows are sorted by clip id first so the result does not depend on input order.
    """
    if not rows:
        raise ValueError("empty manifest")
    if any(r.true_score is None for r in rows):
        raise ValueError("manifest rows must carry true scores")
    rows = sorted(rows, key=lambda r: r.clip_id)
    pred = np.asarray(predict_fn(rows), dtype=np.float64)
    truth = np.array([r.true_score for r in rows])
    tags = [{"genre": r.genre, "audiogram_category": r.audiogram_category,
             "condition_id": r.condition_id, "seen": r.seen} for r in rows]
    return evaluate_predictions(pred, truth, tags, slice_keys), dict(zip((r.clip_id for r in rows), pred))


# -- anchor curve ----------------------------------------------------------

@dataclass
class AnchorCurve:
    anchors: list
    means: list
    counts: list
    tolerance: float

    def rows(self):
        return [{"anchor": a, "mean_prediction": m, "count": c}
                for a, m, c in zip(self.anchors, self.means, self.counts)]


def anchor_curve(preds, truths, quantiles: int = 9, tol: float = 0.05) -> AnchorCurve:
    """Mean prediction around each of ``quantiles`` evenly spaced truth quantiles i/(q+1).

    Anchors without any truth within ``tol`` get mean None and count 0.
    Duplicate anchors (heavily tied truths) are merged.
    """
    preds, truths = _pair(preds, truths, min_len=1)
    if quantiles < 2:
        raise ValueError("need at least 2 quantiles")
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    levels = np.arange(1, quantiles + 1) / (quantiles + 1)
    anchors = np.unique(np.quantile(truths, levels))
    means, counts = [], []
    for a in anchors:
        sel = np.abs(truths - a) <= tol
        counts.append(int(sel.sum()))
        means.append(float(preds[sel].mean()) if sel.any() else None)
    return AnchorCurve([float(a) for a in anchors], means, counts, float(tol))


# -- SPL sweep -------------------------------------------------------------

def spl_sweep(predict_fn, clips, levels=SPL_SWEEP_LEVELS, truths=None, reference_db: float = SPL_REF_DB) -> list:
    """Predict every clip at every level; compare against the predictions at ``reference_db``.

    ``predict_fn`` maps a list of waveforms to scores. Returns one dict per
    level with the achieved level error and agreement with the reference
    predictions (and with ``truths`` when given).
    """
    if not clips:
        raise ValueError("no clips")
    levels = [float(v) for v in levels]
    if any(not math.isfinite(v) for v in levels):
        raise ValueError("levels must be finite")
    cache = {}

    def at(level):
        if level not in cache:
            adjusted = [adjust_spl(x, level) for x in clips]
            err = max(abs(measure_spl(x) - level) for x in adjusted)
            cache[level] = (np.asarray(predict_fn(adjusted), dtype=np.float64), err)
        return cache[level]

    ref, _ = at(float(reference_db))
    out = []
    for level in levels:
        pred, err = at(level)
        row = {"level_db": level, "max_level_error_db": err, "mean_prediction": float(pred.mean()),
               "mean_abs_shift": float(np.mean(np.abs(pred - ref))), "mse_vs_reference": mse(pred, ref)}
        for name, fn in (("lcc_vs_reference", lcc), ("srcc_vs_reference", srcc)):
            try:
                row[name] = fn(pred, ref)
            except (DegenerateMetricError, ValueError):
                row[name] = None
        if truths is not None:
            row["mse_vs_truth"] = mse(pred, truths)
            try:
                row["lcc_vs_truth"] = lcc(pred, truths)
            except (DegenerateMetricError, ValueError):
                row["lcc_vs_truth"] = None
        out.append(row)
    return out


# -- runtime ---------------------------------------------------------------

@dataclass
class RuntimeRow:
    name: str
    clips: int
    feature_mean_s: float
    feature_std_s: float
    predict_mean_s: float
    predict_std_s: float
    total_mean_s: float
    total_std_s: float


def bench_runtime(variants, clips, repeats: int = 3, warmup: int = 1) -> list:
    """Wall-clock per clip for each ``(name, feature_fn, predict_fn)``.

    ``feature_fn(x)`` returns whatever ``predict_fn`` consumes. Warm-up calls
    on the first clip are not timed. Timing uses ``time.perf_counter``.
    """
    if not variants or not clips:
        raise ValueError("need at least one variant and one clip")
    out = []
    for name, feature_fn, predict_fn in variants:
        for _ in range(warmup):
            predict_fn(feature_fn(clips[0]))
        ft, pt, tt = [], [], []
        for _ in range(repeats):
            for x in clips:
                t0 = time.perf_counter()
                f = feature_fn(x)
                t1 = time.perf_counter()
                predict_fn(f)
                t2 = time.perf_counter()
                ft.append(t1 - t0)
                pt.append(t2 - t1)
                tt.append(t2 - t0)
        out.append(RuntimeRow(name, len(clips), float(np.mean(ft)), float(np.std(ft)),
                              float(np.mean(pt)), float(np.std(pt)), float(np.mean(tt)), float(np.std(tt))))
    return out


def write_dict_rows(path, rows):
    rows = [asdict(r) if hasattr(r, "__dataclass_fields__") else r for r in rows]
    if not rows:
        raise ValueError("nothing to write")
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if r.get(k) is None else r.get(k) for k in cols})
