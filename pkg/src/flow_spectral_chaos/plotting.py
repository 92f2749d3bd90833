# src/flow_spectral_chaos/plotting.py
from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .oracle import ErrorReport  # noqa: E402
from .spectral import MomentSeries  # noqa: E402

logger = logging.getLogger(__name__)

# Fixed SVG ids and no Date entry: identical runs write identical bytes.
plt.rcParams["svg.hashsalt"] = "flow-spectral-chaos"
_SVG_METADATA = {"Date": None}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_METADATA)
    plt.close(fig)
    logger.debug(f"Wrote {path}")
    return path


def plot_moment(out_dir: Path, which: str, test: MomentSeries, reference: Optional[MomentSeries] = None,
                ylabel: Optional[str] = None) -> Path:
    """``which`` is 'mean' or 'variance'; writes <which>.svg."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(test.times, getattr(test, which), label=f"FSC {which}")
    if reference is not None:
        ax.plot(reference.times, getattr(reference, which), linestyle="--", label=f"reference {which}")
        stderr = reference.stderr
        if which == "mean" and stderr is not None:
            ax.fill_between(reference.times, reference.mean - 1.96 * stderr, reference.mean + 1.96 * stderr,
                            alpha=0.2, label="reference 95% CI")
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel or which)
    ax.set_title(f"{test.label}: {which}")
    ax.legend()
    return _save(fig, Path(out_dir) / f"{which}.svg")


def plot_local_error(out_dir: Path, report: ErrorReport, title: str = "") -> Path:
    # exact zeros (t = 0) sit on the machine-epsilon line
    floor = np.finfo(float).eps
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(report.times, np.maximum(report.eps_mean, floor), label="mean")
    ax.plot(report.times, np.maximum(report.eps_var, floor), label="variance")
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("local error")
    ax.set_title(title or f"local error vs {report.reference.value}")
    ax.legend()
    return _save(fig, Path(out_dir) / "local_error.svg")


def plot_sweep(out_dir: Path, axis: str, values: Sequence[float], global_mean: Sequence[float],
               global_var: Sequence[float], title: str = "") -> Path:
    """Global errors against the swept parameter, log error axis; NaN points are left out."""
    x = np.asarray(values, dtype=float)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, y in (("mean", global_mean), ("variance", global_var)):
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(y) & (y > 0)
        ax.plot(x[ok], y[ok], marker="o", label=label)
    ax.set_yscale("log")
    if axis in ("dt", "Q"):
        ax.set_xscale("log")
    ax.set_xlabel(axis)
    ax.set_ylabel("global error")
    ax.set_title(title or f"global error over {axis}")
    ax.legend()
    return _save(fig, Path(out_dir) / "sweep.svg")
