"""Figures for benchmark reports."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (5.0, 3.4),
    "savefig.dpi": 150,
}


def _by_resolution(rows):
    groups = {}
    for row in rows:
        groups.setdefault(row["resolution_m"], []).append(row)
    return sorted(groups.items(), reverse=True)


def scaling_figure(rows, path):
    """Steps/s against points per worker; every layout as a dot, best layouts joined."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for res, group in _by_resolution(rows):
            pts = ax.scatter(
                [r["points_per_worker"] for r in group],
                [r["steps_per_s"] for r in group],
                s=10, alpha=0.5,
            )
            best = sorted((r for r in group if r["best"]), key=lambda r: r["points_per_worker"])
            ax.plot(
                [r["points_per_worker"] for r in best],
                [r["steps_per_s"] for r in best],
                color=pts.get_facecolor()[0], label=f"{res:g} m",
            )
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("grid points per worker")
        ax.set_ylabel("steps per second")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def exchange_figure(rows, path):
    """Communication share of the step time, averaged over layouts."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for res, group in _by_resolution(rows):
            by_x = {}
            for r in group:
                by_x.setdefault(r["points_per_worker"], []).append(r["exchange_pct"])
            xs = sorted(by_x)
            ax.plot(xs, [sum(by_x[x]) / len(by_x[x]) for x in xs], marker="o", ms=3, label=f"{res:g} m")
        ax.set_xscale("log")
        ax.set_xlabel("grid points per worker")
        ax.set_ylabel("communication (% of step time)")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
