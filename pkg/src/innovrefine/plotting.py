"""SVG figures: per-scene convergence, batch convergence and sweep summaries."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import ADD_THRESHOLD  # noqa: E402

RC = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.4,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.fonttype": "path",
    "svg.hashsalt": "innovrefine",
}


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def _sd_decrease(rows) -> tuple[np.ndarray, np.ndarray]:
    rho = np.array([r.rho for r in rows if r.sd is not None])
    sd = np.array([np.mean(r.sd) for r in rows if r.sd is not None])
    if len(sd) == 0 or sd[0] == 0:
        return rho, np.zeros_like(rho)
    return rho, 100.0 * (1.0 - sd / sd[0])


def plot_trace(trace, path, diameter: float, title: str = "") -> None:
    """ADD (relative to diameter) and SD decrease against interpolation distance."""
    with plt.rc_context(RC):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.0, 2.8))
        dec = [r for r in trace.rows if r.metrics is not None]
        ax1.plot([r.rho for r in dec], [r.metrics["add"] / diameter for r in dec],
                 marker="o", markersize=3, color="tab:blue")
        ax1.axhline(ADD_THRESHOLD, color="tab:red", linestyle="--", linewidth=1.0,
                    label="10% diameter")
        ax1.set_xlabel(r"interpolation distance $\rho$")
        ax1.set_ylabel("ADD / diameter")
        ax1.legend(loc="upper right")
        rho, dec_pct = _sd_decrease(trace.rows)
        ax2.plot(rho, dec_pct, color="tab:green")
        ax2.set_xlabel(r"interpolation distance $\rho$")
        ax2.set_ylabel("SD decrease (%)")
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        _save(fig, path)


def plot_batch(results, path, title: str = "") -> None:
    """Percent ADD-correct and mean SD decrease across a batch, against rho.

    Scenes that stopped early hold their final value for larger rho.
    """
    decoded = sorted({r.rho for res in results for r in res.trace.rows if r.metrics is not None})
    if not decoded:
        return
    pct = []
    for rho in decoded:
        ok = 0
        for res in results:
            rows = [r for r in res.trace.rows if r.rho <= rho and (r.metrics or r.decode_error)]
            if rows and rows[-1].metrics and rows[-1].metrics["report"].add_correct:
                ok += 1
        pct.append(100.0 * ok / len(results))
    with plt.rc_context(RC):
        fig, ax1 = plt.subplots(figsize=(4.5, 3.0))
        ax1.plot(decoded, pct, marker="o", markersize=3, color="tab:blue", label="ADD(-S) correct")
        ax1.set_xlabel(r"interpolation distance $\rho$")
        ax1.set_ylabel("ADD(-S) correct (%)")
        ax2 = ax1.twinx()
        ax2.grid(False)
        curves = [_sd_decrease(res.trace.rows) for res in results]
        grid = np.linspace(0.0, max(c[0][-1] for c in curves) or 1.0, 100)
        mean_dec = np.mean([np.interp(grid, c[0], c[1]) for c in curves], axis=0)
        ax2.plot(grid, mean_dec, color="tab:green", label="SD decrease")
        ax2.set_ylabel("SD decrease (%)")
        if title:
            ax1.set_title(title)
        fig.tight_layout()
        _save(fig, path)


def plot_sweep(rows, path) -> None:
    """Initial vs final ADD-correct percentage for every sweep cell."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(rows) + 2), 3.0))
        x = np.arange(len(rows))
        ax.bar(x - 0.2, [r["initial_add_pct"] for r in rows], 0.4, label="initial")
        ax.bar(x + 0.2, [r["final_add_pct"] for r in rows], 0.4, label="final")
        ax.set_xticks(x)
        ax.set_xticklabels([f"a={r['alpha']:g}\nT={r['iters']}\ns={r['noise_sigma']:g}" for r in rows],
                           fontsize=6)
        ax.set_ylabel("ADD(-S) correct (%)")
        ax.set_ylim(0, 105)
        ax.legend(loc="lower right")
        fig.tight_layout()
        _save(fig, path)
