"""Report writers: CSV tables, plain-text summaries, two-column traces and
matplotlib figures.

Everything except the PNG figures is byte-for-byte reproducible; floats are
written with a fixed number of digits.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PNG_META = {"Software": None}


def fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.6f}"


def mean_std(values):
    """Mean and sample standard deviation; std is ``None`` for fewer than 2 values."""
    values = np.asarray(values, dtype=float)
    std = float(values.std(ddof=1)) if values.size >= 2 else None
    return float(values.mean()), std


def pct(mean, std) -> str:
    if std is None:
        return f"{100 * mean:.1f}"
    return f"{100 * mean:.1f} ± {100 * std:.1f}"


def write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    path = Path(path)
    path.write_text(buf.getvalue())
    return path


def write_trace(path, values) -> Path:
    path = Path(path)
    path.write_text("".join(f"{t}\t{v:.10g}\n" for t, v in enumerate(values, start=1)))
    return path


def read_trace(path) -> np.ndarray:
    rows = [line.split("\t") for line in Path(path).read_text().splitlines() if line]
    return np.array([float(v) for _, v in rows])


def write_summary(path, title, lines) -> Path:
    path = Path(path)
    path.write_text(title + "\n" + "=" * len(title) + "\n" + "\n".join(lines) + "\n")
    return path


def plot_traces(path, traces: dict, ylabel: str, title: str = "") -> Path:
    """One line per labelled trace against iteration number."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for label, values in traces.items():
        ax.plot(np.arange(1, len(values) + 1), values, lw=1.2, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if 1 < len(traces) <= 10:
        ax.legend(fontsize=7, frameon=False)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=PNG_META)
    plt.close(fig)
    return Path(path)


def plot_grid(path, matrix, train_pcts, attack_pcts) -> Path:
    """Heatmap of misclassification (%) over training and attack budgets."""
    matrix = 100 * np.asarray(matrix)
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(matrix, cmap="viridis_r", origin="upper")
    ax.set_xticks(range(len(train_pcts)), [f"{p:g}" for p in train_pcts])
    ax.set_yticks(range(len(attack_pcts)), [f"{p:g}" for p in attack_pcts])
    ax.set_xlabel("budget in robust training (%)")
    ax.set_ylabel("budget in attack (%)")
    for r in range(matrix.shape[0]):
        for c in range(matrix.shape[1]):
            ax.text(c, r, f"{matrix[r, c]:.1f}", ha="center", va="center", fontsize=8,
                    color="white" if matrix[r, c] > matrix.mean() else "black")
    fig.colorbar(im, ax=ax, label="misclassification (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=PNG_META)
    plt.close(fig)
    return Path(path)
