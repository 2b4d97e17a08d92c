"""Report figures. Every function writes one PNG and returns its path."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
WIDTH_IN = 5.0
COLORS = ["#1b6ca8", "#d1495b", "#66a182", "#edae49", "#8d6a9f", "#2e4057"]

RC = {
    "axes.prop_cycle": matplotlib.cycler(color=COLORS),
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.labelsize": 9,
    "font.size": 8,
    "legend.fontsize": 7,
    "legend.frameon": False,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "figure.dpi": 100,
    "savefig.dpi": 150,
}


def _figure(scale=1.0, aspect=GOLDEN):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(WIDTH_IN * scale, WIDTH_IN * scale * aspect))
    return fig, ax


def _save(fig, path):
    path = Path(path)
    fig.tight_layout()
    # no software/date metadata, so identical data gives identical files
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_anchor_curve(curve, path, title=""):
    with plt.rc_context(RC):
        fig, ax = _figure(0.8, 1.0)
        a = np.array(curve.anchors)
        m = np.array([np.nan if v is None else v for v in curve.means])
        ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--", label="ideal")
        ax.plot(a, m, "o-", label=f"mean prediction (+/-{curve.tolerance:g})")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        ax.set_xlabel("true score anchor")
        ax.set_ylabel("predicted score")
        ax.set_title(title)
        ax.legend(loc="upper left")
        return _save(fig, path)


def plot_scatter(pred, truth, path, title=""):
    with plt.rc_context(RC):
        fig, ax = _figure(0.8, 1.0)
        ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--")
        ax.scatter(truth, pred, s=8, alpha=0.7, edgecolors="none")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        ax.set_xlabel("true score")
        ax.set_ylabel("predicted score")
        ax.set_title(title)
        return _save(fig, path)


def plot_slice_metrics(report, path, key="seen", metric="lcc"):
    rows = [s for s in report.slices if s.slice == key and getattr(s, metric) is not None]
    with plt.rc_context(RC):
        fig, ax = _figure()
        labels = [s.value for s in rows]
        ax.bar(range(len(rows)), [getattr(s, metric) for s in rows], color=COLORS[0])
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(labels, rotation=45 if len(rows) > 6 else 0, ha="right" if len(rows) > 6 else "center")
        ax.set_ylabel(metric.upper())
        ax.set_title(f"{metric.upper()} by {key}")
        return _save(fig, path)


def plot_spl_sweep(rows, path):
    with plt.rc_context(RC):
        fig, ax = _figure()
        lv = [r["level_db"] for r in rows]
        ax.plot(lv, [r["mean_prediction"] for r in rows], "o-", label="mean prediction")
        ax.plot(lv, [r["mean_abs_shift"] for r in rows], "s--", label="mean |shift| vs 65 dB")
        ax.set_xlabel("presentation level (dB SPL)")
        ax.set_ylabel("score")
        ax.legend()
        return _save(fig, path)


def plot_history(history, path, keys=("train_loss", "valid_loss"), xkey="step", logy=True):
    with plt.rc_context(RC):
        fig, ax = _figure()
        x = [h[xkey] for h in history]
        for k in keys:
            y = [h.get(k) for h in history]
            if any(v is not None and np.isfinite(v) for v in y):
                ax.plot(x, [np.nan if v is None else v for v in y], label=k)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xkey)
        ax.set_ylabel("loss")
        ax.legend()
        return _save(fig, path)


def plot_runtime(rows, path):
    with plt.rc_context(RC):
        fig, ax = _figure()
        names = [r.name for r in rows]
        feat = np.array([r.feature_mean_s for r in rows]) * 1e3
        pred = np.array([r.predict_mean_s for r in rows]) * 1e3
        ax.barh(names, feat, color=COLORS[0], label="features")
        ax.barh(names, pred, left=feat, color=COLORS[1], label="prediction")
        ax.set_xlabel("ms per clip")
        ax.legend()
        return _save(fig, path)
