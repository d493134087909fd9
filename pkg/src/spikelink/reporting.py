"""Figure and table rendering for run artifacts.

Every command that emits a delimited table or JSON report also renders
the matching matplotlib figure next to it (PNG, non-interactive Agg
backend). These helpers take plain dict/list records so they can be
re-run from saved artifacts by the ``report`` command.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def read_jsonl(path: str | Path) -> list[dict]:
    records = []
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_training_curves(records: list[dict], path: str | Path) -> Path:
    """Loss components and validation AUC over epochs."""
    epochs = [r["epoch"] for r in records]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, [r["total"] for r in records], label="total")
    ax1.plot(epochs, [r["recon"] for r in records], label="reconstruction", ls="--")
    ax1.plot(epochs, [r["kl"] for r in records], label="kl", ls=":")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend(fontsize=8)
    ax2.plot(epochs, [r["val_auc"] for r in records], color="tab:green")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation AUC")
    ax2.set_ylim(0.4, 1.0)
    return _save(fig, path)


def plot_spike_rates(records: list[dict], path: str | Path) -> Path:
    """Per-layer firing rates over epochs."""
    epochs = [r["epoch"] for r in records]
    layers = [entry["layer"] for entry in records[0]["spike_rate_per_layer"]]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for i, layer in enumerate(layers):
        ax.plot(
            epochs,
            [r["spike_rate_per_layer"][i]["rate"] for r in records],
            label=layer,
        )
    ax.set_xlabel("epoch")
    ax.set_ylabel("firing rate")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_metric_report(report: dict, path: str | Path) -> Path:
    """Per-seed AUC/AP scatter with the mean +/- std band."""
    seeds = report["seeds"]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    x = np.arange(len(seeds))
    ax.scatter(x - 0.08, report["auc_values"], label="AUC", marker="o")
    ax.scatter(x + 0.08, report["ap_values"], label="AP", marker="s")
    for mean, std, color in (
        (report["auc_mean"], report["auc_std"], "tab:blue"),
        (report["ap_mean"], report["ap_std"], "tab:orange"),
    ):
        ax.axhline(mean, color=color, lw=0.8)
        ax.axhspan(mean - std, mean + std, color=color, alpha=0.12)
    ax.set_xticks(x, [str(s) for s in seeds])
    ax.set_xlabel("seed")
    ax.set_ylabel("score")
    ax.set_title(report.get("dataset", ""))
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_energy_report(report: dict, path: str | Path) -> Path:
    """Stacked AC/MUL energy per layer plus the per-link totals."""
    layers = [e["layer"] for e in report["per_layer"]]
    ac = np.array([e["n_ac"] for e in report["per_layer"]], dtype=float)
    mul = np.array([e["n_mul"] for e in report["per_layer"]], dtype=float)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    x = np.arange(len(layers))
    ax1.bar(x, ac, label="AC", color="tab:red")
    ax1.bar(x, mul, bottom=ac, label="MUL", color="tab:blue")
    ax1.set_xticks(x, layers, rotation=30, ha="right", fontsize=7)
    ax1.set_ylabel("operation count")
    ax1.legend(fontsize=8)
    per_link = report["per_link"]
    ax2.bar([0, 1], [per_link["e_float_pJ"], per_link["e_int_pJ"]], color="tab:purple")
    ax2.set_xticks([0, 1], ["float pJ", "int pJ"])
    ax2.set_ylabel("energy per link (pJ)")
    ax2.set_title(f"mode: {report['mode']}")
    return _save(fig, path)


def plot_sweep(rows: list[dict], param: str, path: str | Path) -> Path:
    """Metric-versus-value curve with per-seed points."""
    values = sorted({r["value"] for r in rows})
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for metric, color in (("auc", "tab:blue"), ("ap", "tab:orange")):
        means = [np.mean([r[metric] for r in rows if r["value"] == v]) for v in values]
        ax.plot(values, means, "-o", color=color, label=metric.upper())
        ax.scatter(
            [r["value"] for r in rows],
            [r[metric] for r in rows],
            color=color,
            alpha=0.35,
            s=12,
        )
    ax.set_xlabel(param)
    ax.set_ylabel("score")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_ablation(rows: list[dict], metric: str, path: str | Path) -> Path:
    """Grouped bars, one group per configuration variant."""
    variants = []
    for r in rows:
        if r["variant"] not in variants:
            variants.append(r["variant"])
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    means = []
    stds = []
    for v in variants:
        vals = [r[metric] for r in rows if r["variant"] == v]
        means.append(np.mean(vals))
        stds.append(np.std(vals))
    x = np.arange(len(variants))
    ax.bar(x, means, yerr=stds, capsize=4, color="tab:cyan")
    ax.set_xticks(x, variants, rotation=15, ha="right", fontsize=8)
    ax.set_ylabel(metric)
    return _save(fig, path)
