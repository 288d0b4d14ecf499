"""Delimited tables and matplotlib figures for run reports."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed metadata keeps PNG bytes stable across runs
_PNG_META = {"Software": None}

plt.rcParams.update(
    {
        "figure.figsize": (6.0, 3.8),
        "figure.dpi": 100,
        "font.size": 10,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "legend.frameon": False,
    }
)


def fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if value is None:
        return ""
    return str(value)


def write_table(path, columns: Sequence[str], rows: Iterable[Mapping]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c)) for c in columns])


def read_table(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


def _save(fig, path) -> Path:
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def plot_reward_curve(curve: Sequence[Mapping], path, window: int = 10):
    it = [r["iteration"] for r in curve]
    reward = [r["mean_reward"] for r in curve]
    fig, ax = plt.subplots()
    ax.plot(it, reward, lw=0.8, alpha=0.5, label="per iteration")
    if len(reward) >= window:
        smooth = [sum(reward[i - window + 1 : i + 1]) / window for i in range(window - 1, len(reward))]
        ax.plot(it[window - 1 :], smooth, lw=1.8, label=f"{window}-iteration mean")
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean reward")
    ax.legend()
    return _save(fig, path)


def plot_loss(rows: Sequence[Mapping], path):
    fig, ax = plt.subplots()
    ax.plot(range(1, len(rows) + 1), [r["loss"] for r in rows], marker="o")
    ax.set_xlabel("epoch (all rounds)")
    ax.set_ylabel("mean sequence NLL")
    return _save(fig, path)


def plot_pass_at_k(ks: Sequence[int], mean: Sequence[float], std: Sequence[float], path, label: str = ""):
    fig, ax = plt.subplots()
    ax.errorbar(ks, mean, yerr=std, marker="o", capsize=3, label=label or None)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("sample budget k")
    ax.set_ylabel("pass@k")
    ax.set_ylim(0, 1.02)
    if label:
        ax.legend()
    return _save(fig, path)


def plot_temperature(temps: Sequence[float], mean: Sequence[float], std: Sequence[float], path, k: int = 16):
    fig, ax = plt.subplots()
    ax.errorbar(temps, mean, yerr=std, marker="s", capsize=3)
    ax.set_xlabel("temperature")
    ax.set_ylabel(f"pass@{k}")
    ax.set_ylim(0, 1.02)
    return _save(fig, path)


def plot_failures(counts: Mapping[str, Mapping[str, int]], path, title: str = ""):
    """Stacked bars: one bar per group, one segment per failure status."""
    groups = list(counts)
    statuses = sorted({s for c in counts.values() for s in c})
    fig, ax = plt.subplots()
    bottom = [0] * len(groups)
    for status in statuses:
        vals = [counts[g].get(status, 0) for g in groups]
        ax.bar(groups, vals, bottom=bottom, label=status)
        bottom = [b + v for b, v in zip(bottom, vals)]
    ax.set_ylabel("failed samples")
    if title:
        ax.set_title(title)
    if statuses:
        ax.legend(fontsize=8)
    return _save(fig, path)


def plot_pass_histogram(hist: Sequence[int], path, lo: int | None = None, hi: int | None = None):
    fig, ax = plt.subplots()
    ax.bar(range(len(hist)), hist, color="0.5")
    if lo is not None and hi is not None:
        ax.axvspan(lo - 0.5, hi + 0.5, alpha=0.15, color="tab:green", label=f"RL window [{lo}, {hi}]")
        ax.legend()
    ax.set_xlabel(f"verified proofs out of {len(hist) - 1}")
    ax.set_ylabel("statements")
    return _save(fig, path)
