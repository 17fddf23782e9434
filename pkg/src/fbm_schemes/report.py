"""CSV/JSON writers and matplotlib figures for the experiment commands."""

from __future__ import annotations

import csv
import datetime as _dt
import json
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy import stats  # noqa: E402

__all__ = ["write_csv", "write_sidecar", "plot_error_rates", "plot_ratios", "plot_standardized"]

_PNG_META = {"Software": None}


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = (),
              reproducible: bool = False) -> Path:
    """CSV with ``#`` comment lines; a timestamp line is added unless ``reproducible``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not reproducible:
            fh.write(f"# generated {_dt.datetime.now().isoformat(timespec='seconds')}\n")
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_sidecar(path: Path, meta: dict, reproducible: bool = False) -> Path:
    path = Path(path)
    meta = dict(meta)
    if not reproducible:
        meta["generated"] = _dt.datetime.now().isoformat(timespec="seconds")
    path.write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n")
    return path


def plot_error_rates(path: Path, levels, mean_abs, se, slope: float, rate: float | None, title: str) -> Path:
    levels = np.asarray(levels, dtype=float)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.errorbar(levels, np.log2(mean_abs), yerr=np.asarray(se) / (np.asarray(mean_abs) * np.log(2)),
                fmt="o-", capsize=3, label=f"mean |error| (slope {slope:.3f})")
    if rate is not None:
        anchor = np.log2(mean_abs[-1]) + rate * levels[-1]
        ax.plot(levels, anchor - rate * levels, "k--", lw=1, label=f"predicted slope {-rate:.3f}")
    ax.set_xlabel("level m")
    ax.set_ylabel("log2 mean |Y_hat_T - Y_T|")
    ax.set_title(title, fontsize=9)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def plot_ratios(path: Path, levels, ratios: np.ndarray, low: float, high: float, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    q = np.percentile(ratios, [25, 50, 75], axis=1)
    ax.fill_between(levels, q[0], q[2], alpha=0.3, label="interquartile range")
    ax.plot(levels, q[1], "o-", label="median ratio")
    ax.axhspan(low, high, color="green", alpha=0.1, label="acceptance band")
    ax.axhline(1.0, color="k", lw=0.8)
    ax.set_xlabel("level m")
    ax.set_ylabel("normalized error / predicted limit")
    ax.set_title(title, fontsize=9)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def plot_standardized(path: Path, z: np.ndarray, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.hist(z, bins=40, density=True, alpha=0.6, label="standardized residuals")
    x = np.linspace(-4, 4, 200)
    ax.plot(x, stats.norm.pdf(x), "k-", lw=1, label="N(0, 1)")
    ax.set_xlabel("z")
    ax.set_title(title, fontsize=9)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)
