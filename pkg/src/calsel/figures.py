"""Matplotlib renderings that accompany the delimited outputs.

Each helper takes plain arrays plus an output path and writes one PNG with
the non-interactive Agg backend.  The CSV/JSON artifacts stay the primary
outputs; these files are a convenience view of the same numbers.
"""

from __future__ import annotations

from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

__all__ = [
    "save_forecast_figure",
    "save_tau_compare_figure",
    "save_repro_figure",
    "save_backtest_figure",
]

DPI = 120


def save_forecast_figure(table: Dict[str, object], path: str,
                         alpha: float, tail: str) -> str:
    """Two panels: returns with the VaR/ES forecast bands, and the tau path."""
    t = np.asarray(table["date_index"])
    realized = np.asarray(table["realized_return"])
    fig, (ax1, ax2) = plt.subplots(
        2, 1, figsize=(9, 6), sharex=True,
        gridspec_kw={"height_ratios": [3, 1]})
    ax1.plot(t, realized, color="0.6", lw=0.6, label="return")
    ax1.plot(t, np.asarray(table["var_hat"]), color="tab:blue", lw=1.0,
             label="VaR (refit)")
    ax1.plot(t, np.asarray(table["es_hat"]), color="tab:red", lw=1.0,
             label="ES (refit)")
    ax1.plot(t, np.asarray(table["var_tilde"]), color="tab:blue", lw=0.8,
             ls="--", alpha=0.6, label="VaR (sieve)")
    ax1.set_ylabel("return")
    ax1.legend(loc="upper left", ncol=4, fontsize=8, frameon=False)
    ax1.set_title(f"one-step forecasts, alpha={alpha:g}, {tail} tail")

    ax2.plot(t, np.asarray(table["tau_hat"]), color="tab:green", lw=0.9)
    ax2.set_ylabel("tau")
    ax2.set_xlabel("date index")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def save_tau_compare_figure(se_el: Sequence[float], se_grid: Sequence[float],
                            path: str, title: str = "") -> str:
    """Side-by-side boxplots of squared errors for the two level estimators."""
    el = np.asarray([v for v in se_el if np.isfinite(v)])
    grid = np.asarray(se_grid, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.boxplot([el, grid], tick_labels=["likelihood", "grid"], showfliers=False)
    ax.set_ylabel("squared error of tau")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def save_repro_figure(rows: Sequence[Sequence], path: str) -> str:
    """Grouped bars of Bias/RMSE per (case, dist, model) table row.

    ``rows`` uses the accuracy-table layout: case, dist, model, var_bias,
    var_rmse, es_bias, es_rmse, ...
    """
    labels = [f"c{r[0]} {r[1]} {r[2]}" for r in rows]
    metrics = ("var_bias", "var_rmse", "es_bias", "es_rmse")
    values = np.array([[float(r[3]), float(r[4]), float(r[5]), float(r[6])]
                       for r in rows])
    x = np.arange(len(labels))
    width = 0.2
    fig, ax = plt.subplots(figsize=(max(6.0, 1.6 * len(labels)), 4))
    for j, name in enumerate(metrics):
        ax.bar(x + (j - 1.5) * width, values[:, j], width, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("error")
    ax.legend(fontsize=8, frameon=False)
    ax.set_title("forecast accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def save_backtest_figure(date_index: np.ndarray, realized: np.ndarray,
                         var_forecasts: np.ndarray, exceed: np.ndarray,
                         path: str, es_forecasts: Optional[np.ndarray] = None
                         ) -> str:
    """Returns against the VaR line with exceedance dates marked."""
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.plot(date_index, realized, color="0.6", lw=0.6, label="return")
    ax.plot(date_index, var_forecasts, color="tab:blue", lw=1.0, label="VaR")
    if es_forecasts is not None:
        ax.plot(date_index, es_forecasts, color="tab:red", lw=0.8, ls="--",
                label="ES")
    mask = np.asarray(exceed, dtype=bool)
    ax.scatter(np.asarray(date_index)[mask], np.asarray(realized)[mask],
               color="tab:orange", s=14, zorder=3, label="exceedance")
    ax.set_xlabel("date index")
    ax.set_ylabel("return")
    ax.legend(loc="upper left", ncol=4, fontsize=8, frameon=False)
    ax.set_title("backtest exceedances")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path
