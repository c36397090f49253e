"""Report figures (matplotlib, Agg backend), written atomically as PNG."""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .formats import atomic_write_bytes  # noqa: E402
from .metrics import METRIC_NAMES, MetricReport  # noqa: E402


def _save(fig, path):
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110, metadata={"Software": None})
    plt.close(fig)
    return atomic_write_bytes(path, buf.getvalue())


def plot_loss_curves(rows: list[dict], path, warmup_iters: int | None = None):
    it = np.array([r["iter"] for r in rows])
    fig, (ax, bx) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax.semilogy(it, [r["L_photo"] for r in rows], label="L_photo")
    ls = np.array([r["L_s"] for r in rows], dtype=float)
    ok = np.isfinite(ls) & (ls > 0)
    ax.semilogy(it[ok], ls[ok], label="L_s")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend()
    bx.plot(it, [r["beta"] for r in rows], color="tab:green")
    bx.set_xlabel("iteration")
    bx.set_ylabel("beta")
    if warmup_iters is not None:
        for a in (ax, bx):
            a.axvline(warmup_iters, color="grey", ls="--", lw=0.8)
    fig.tight_layout()
    return _save(fig, path)


def plot_metrics(report: MetricReport, path):
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    x = np.arange(len(METRIC_NAMES))
    ax.bar(x, [report.mean[m] for m in METRIC_NAMES],
           yerr=[report.std[m] for m in METRIC_NAMES], capsize=3, color="tab:blue")
    ax.set_xticks(x, METRIC_NAMES)
    ax.set_ylabel("value (unit-sphere scale)")
    ax.set_title(f"{report.n_repeats} repeats x {report.n_points} points, seed {report.seed}")
    fig.tight_layout()
    return _save(fig, path)
