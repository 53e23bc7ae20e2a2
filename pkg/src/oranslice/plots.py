"""PNG figures rendered from the same tables the CSV writers emit."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import build_cdf, throughput_by_slice, violation_std  # noqa: E402
from .radio import SLICE_NAMES  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 9,
}
MODE_COLORS = {"attention": "tab:blue", "baseline": "tab:orange"}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-stable
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return Path(path)


def plot_returns(path: Path, curves: dict[str, Sequence[float]], window: int = 10) -> Path:
    """Mean return per iteration with a trailing moving average per curve."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, r in curves.items():
            r = np.asarray(r, dtype=float)
            color = MODE_COLORS.get(label.split()[0])
            ax.plot(r, alpha=0.35, color=color)
            if r.size >= window:
                smooth = np.convolve(r, np.ones(window) / window, mode="valid")
                ax.plot(np.arange(window - 1, r.size), smooth, color=color, label=label)
            else:
                ax.lines[-1].set_label(label)
        ax.set_xlabel("iteration")
        ax.set_ylabel("discounted return")
        ax.legend()
        return _save(fig, path)


def plot_cdfs(out_dir: Path, phases: dict[str, Sequence[tuple[int, float]]],
              slice_names: Sequence[str] = SLICE_NAMES) -> list[Path]:
    paths = []
    split = {phase: throughput_by_slice(s, len(slice_names)) for phase, s in phases.items()}
    for sid, name in enumerate(slice_names):
        with plt.rc_context(STYLE):
            fig, ax = plt.subplots()
            for phase, per_slice in split.items():
                if per_slice[sid].size == 0:
                    continue
                t = build_cdf(per_slice[sid])
                ax.step(t.values / 1e6, t.fractions, where="post", label=phase)
            ax.set_xlabel("per-user throughput (Mbps)")
            ax.set_ylabel("CDF")
            ax.set_ylim(0, 1.02)
            ax.set_title(name)
            if ax.lines:
                ax.legend()
            paths.append(_save(fig, Path(out_dir) / f"cdf_{name}.png"))
    return paths


def plot_violations(path: Path, series: dict[str, np.ndarray],
                    slice_names: Sequence[str] = SLICE_NAMES) -> Path:
    """Grouped bars of per-slice violation std, one group member per label."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        labels = [k for k, v in series.items() if np.asarray(v).shape[0] >= 2]
        width = 0.8 / max(len(labels), 1)
        x = np.arange(len(slice_names))
        for j, label in enumerate(labels):
            std = violation_std(series[label])
            ax.bar(x + (j - (len(labels) - 1) / 2) * width, std, width,
                   label=label, color=MODE_COLORS.get(label.split()[0]))
        ax.set_xticks(x, slice_names)
        ax.set_ylabel("QoS violation std")
        if labels:
            ax.legend()
        return _save(fig, path)
