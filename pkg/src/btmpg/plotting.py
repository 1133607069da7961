"""Report figures written next to the JSON/TSV outputs."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def plot_rounds(series: dict[str, Sequence[float]], path: str | Path, title: str = "") -> Path:
    """One line per metric against round number (1-based)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, values in series.items():
            ax.plot(range(1, len(values) + 1), values, marker="o", ms=3, label=name)
        ax.set_xlabel("round")
        ax.set_ylabel("score")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_ablation(rows: Sequence[dict], path: str | Path) -> Path:
    """p-BLEU against lambda (left) and per-round self-BLEU for every lambda (right)."""
    lams = [r["lambda"] for r in rows]
    with plt.rc_context(STYLE):
        fig, (left, right) = plt.subplots(1, 2, figsize=(9.0, 3.4))
        left.plot(range(len(lams)), [r["p_bleu"] for r in rows], marker="o")
        left.set_xticks(range(len(lams)), [f"{lam:g}" for lam in lams])
        left.set_xlabel(r"$\lambda$")
        left.set_ylabel("p-BLEU")
        for r in rows:
            sb = r["self_bleu"]
            right.plot(range(1, len(sb) + 1), sb, marker="o", ms=3, label=rf"$\lambda$={r['lambda']:g}")
        right.set_xlabel("round")
        right.set_ylabel("self-BLEU")
        right.legend(frameon=False, fontsize=8)
        fig.savefig(path)
        plt.close(fig)
    return Path(path)
