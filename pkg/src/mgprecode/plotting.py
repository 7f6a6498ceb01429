"""Report figures rendered next to the experiment CSV.

Figures are built on :class:`matplotlib.figure.Figure` directly so no pyplot
state is touched; the Agg canvas is used implicitly by ``savefig``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

from .harness import ResultTable
from .metrics import HIST_HIGH_DB, HIST_LOW_DB, HIST_WIDTH_DB

FIG_SIZE = (6.4, 4.0)
DPI = 120


def _label(scheme: str, regularizer: str) -> str:
    return scheme if regularizer == "none" else f"{scheme} ({regularizer})"


def _save(fig: Figure, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    return path


def sinr_curves(table: ResultTable, path: str | Path) -> Path:
    """Mean SINR (dB of the linear mean) against SNR, one line per scheme."""
    fig = Figure(figsize=FIG_SIZE)
    ax = fig.add_subplot()
    curves: dict[tuple[str, str], list[tuple[float, float]]] = {}
    for a in table.aggregates:
        curves.setdefault((a["scheme"], a["regularizer"]), []).append((a["snr_db"], a["mean_sinr_db"]))
    for (scheme, reg), pts in curves.items():
        x, y = zip(*sorted(pts))
        ax.plot(x, y, marker="o", label=_label(scheme, reg))
    ax.set_xlabel("SNR [dB]")
    ax.set_ylabel("mean SINR [dB]")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=7)
    return _save(fig, Path(path))


def histogram_figure(groups: dict[str, np.ndarray], path: str | Path, xlabel: str) -> Path:
    """Step histograms on the 1 dB report grid; non-finite values are dropped."""
    edges = np.arange(HIST_LOW_DB, HIST_HIGH_DB + HIST_WIDTH_DB / 2, HIST_WIDTH_DB)
    fig = Figure(figsize=FIG_SIZE)
    ax = fig.add_subplot()
    for label, values in groups.items():
        v = np.asarray(values, dtype=float)
        v = np.clip(v[np.isfinite(v)], HIST_LOW_DB, HIST_HIGH_DB - 1e-9)
        ax.hist(v, bins=edges, histtype="step", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("users")
    ax.grid(True, alpha=0.3)
    if groups:
        ax.legend(fontsize=7)
    return _save(fig, Path(path))


def tm_dispersion_figure(table: ResultTable, path: str | Path) -> Path:
    """Per-trial ``max(t_m)/min(t_m)`` for every on-board scheme and SNR."""
    fig = Figure(figsize=FIG_SIZE)
    ax = fig.add_subplot()
    groups: dict[tuple[str, str], list[tuple[float, float]]] = {}
    for r in table.trials:
        if r.t is not None:
            groups.setdefault((r.scheme, r.regularizer), []).append((r.snr_db, r.tm_dispersion))
    for i, ((scheme, reg), pts) in enumerate(groups.items()):
        x, y = np.array(pts).T
        # small horizontal offset keeps overlapping schemes readable
        ax.scatter(x + 0.15 * i, y, s=8, label=_label(scheme, reg))
    ax.set_xlabel("SNR [dB]")
    ax.set_ylabel("max t_m / min t_m")
    ax.grid(True, alpha=0.3)
    if groups:
        ax.legend(fontsize=7)
    return _save(fig, Path(path))


def render_report(table: ResultTable, output_path: str | Path) -> list[Path]:
    """Write every report figure next to ``output_path``; returns the files."""
    output_path = Path(output_path)
    stem = output_path.with_suffix("")
    out = [sinr_curves(table, f"{stem}_sinr_vs_snr.png")]
    if table.trials:
        top = max(r.snr_db for r in table.trials)
        at_top = [r for r in table.trials if r.snr_db == top]
        sinr: dict[str, list] = {}
        sir: dict[str, dict[int, np.ndarray]] = {}
        for r in at_top:
            sinr.setdefault(_label(r.scheme, r.regularizer), []).append(r.sinr_db)
            if r.sir_db is not None:
                # SIR ignores the regularizer; keep one copy per trial
                sir.setdefault(r.scheme, {}).setdefault(r.trial, r.sir_db)
        out.append(histogram_figure({k: np.concatenate(v) for k, v in sinr.items()},
                                    f"{stem}_sinr_hist.png", f"SINR [dB] at SNR {top:g} dB"))
        if sir:
            out.append(histogram_figure({k: np.concatenate(list(v.values())) for k, v in sir.items()},
                                        f"{stem}_sir_hist.png", "SIR without precoding [dB]"))
    if any(r.t is not None for r in table.trials):
        out.append(tm_dispersion_figure(table, f"{stem}_tm_dispersion.png"))
    return out
