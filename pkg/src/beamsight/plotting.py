"""PNG figures written next to the CSV outputs (loss curves, top-k metrics, latency)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed metadata keeps PNG bytes reproducible across runs
_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def plot_loss_curves(train_loss, val_loss, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.4))
    epochs = range(1, len(train_loss) + 1)
    ax.plot(epochs, train_loss, label="train")
    ax.plot(epochs, val_loss, label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    if title:
        ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_topk(reports: dict, path) -> Path:
    """Accuracy and APL against k, one line per named EvalReport."""
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.4))
    for name, rep in reports.items():
        ks = sorted(rep.topk_accuracy)
        a1.plot(ks, [rep.topk_accuracy[k] for k in ks], marker="o", label=name)
        a2.plot(ks, [rep.apl_db[k] for k in ks], marker="o", label=name)
    a1.set_xlabel("top-k")
    a1.set_ylabel("accuracy")
    a1.set_ylim(0, 1.02)
    a2.set_xlabel("top-k")
    a2.set_ylabel("APL (dB)")
    for ax in (a1, a2):
        ax.grid(alpha=0.3)
        ax.legend()
    return _save(fig, path)


def plot_latency(report, path) -> Path:
    """Total latency and searched fraction of the codebook per candidate count."""
    rows = [r for r in report.rows if r.scheme == "top-k"]
    labels = [f"top-{r.k}" for r in rows] + [f"all {report.K}"]
    totals = [r.total_ms for r in rows] + [report.exhaustive_total_ms]
    fracs = [r.search_fraction_pct for r in rows] + [100.0]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.4))
    a1.bar(labels, totals, color="tab:blue")
    a1.set_ylabel("beam selection latency (ms)")
    a2.bar(labels, fracs, color="tab:orange")
    a2.set_ylabel("beams searched (%)")
    for ax in (a1, a2):
        ax.tick_params(axis="x", rotation=45)
        ax.grid(alpha=0.3, axis="y")
    return _save(fig, path)
