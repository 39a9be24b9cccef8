"""Avg. Metric after each task: TSV series and matplotlib figures."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from .harness import RunManifest


class MixedSettingsError(ValueError):
    pass


def prefix_series(manifest: RunManifest, metric: str) -> list[float]:
    """Mean of ``R[t, :t+1]`` for every ``t``; MULTI gives a flat line."""
    m = manifest.matrices[metric]
    if manifest.strategy == "MULTI":
        return [float(np.nanmean(m.R[-1]))] * m.T
    return [m.prefix_avg(t) for t in range(m.T)]


def collect_series(manifests: Sequence[RunManifest], metric: str) -> dict[str, np.ndarray]:
    """``strategy -> [runs, T]`` prefix series."""
    if not manifests:
        raise ValueError("no manifests")
    settings = {m.setting for m in manifests}
    if len(settings) > 1:
        raise MixedSettingsError(f"manifests mix settings: {sorted(settings)}")
    out: dict[str, list] = {}
    for m in manifests:
        if metric in m.matrices:
            out.setdefault(m.strategy, []).append(prefix_series(m, metric))
    lengths = {len(s) for runs in out.values() for s in runs}
    if len(lengths) > 1:
        raise ValueError(f"curricula of different lengths: {sorted(lengths)}")
    return {k: np.array(v) for k, v in out.items()}


def write_series(path: Path, series: dict[str, np.ndarray]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, delimiter="\t")
        w.writerow(["strategy", "task", "mean", "std", "runs"])
        for name, runs in sorted(series.items()):
            for t in range(runs.shape[1]):
                col = runs[:, t]
                w.writerow([name, t + 1, f"{col.mean():.4f}", f"{col.std():.4f}", len(col)])


def plot_series(path: Path, series: dict[str, np.ndarray], metric: str, setting: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, runs in sorted(series.items()):
        x = np.arange(1, runs.shape[1] + 1)
        mean, std = runs.mean(axis=0), runs.std(axis=0)
        if name == "MULTI":
            ax.axhline(mean[0], color="black", linestyle="--", label=name)
            continue
        ax.plot(x, mean, marker="o", label=name)
        if len(runs) > 1:
            ax.fill_between(x, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("tasks learned")
    ax.set_ylabel(f"Avg. {metric}")
    ax.set_title(setting)
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def export_plots(manifests: Sequence[RunManifest], out_dir, metrics: Sequence[str] | None = None,
                 figures: bool = True) -> list[Path]:
    """One TSV (and PNG) per metric; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not manifests:
        raise ValueError("no manifests")
    settings = {m.setting for m in manifests}
    if len(settings) > 1:
        raise MixedSettingsError(f"manifests mix settings: {sorted(settings)}")
    setting = settings.pop()
    metrics = metrics or sorted({k for m in manifests for k in m.matrices})
    written = []
    for metric in metrics:
        series = collect_series(manifests, metric)
        tsv = out_dir / f"{setting.lower()}_{metric}.tsv"
        write_series(tsv, series)
        written.append(tsv)
        if figures:
            png = tsv.with_suffix(".png")
            plot_series(png, series, metric, setting)
            written.append(png)
    return written


def write_ablation(path: Path, report) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, delimiter="\t")
        w.writerow(["capacity", report.metric])
        for cap, v in report.rows():
            w.writerow([cap, f"{v:.4f}"])
        if report.multi is not None:
            w.writerow(["MULTI", f"{report.multi:.4f}"])
