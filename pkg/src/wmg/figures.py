"""Figure rendering for the command-line reports.

Every figure is drawn off-screen and returned as PNG bytes so the command
layer can write it atomically next to the delimited outputs.
"""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _render(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=150, bbox_inches="tight")
    plt.close(fig)
    return buf.getvalue()


def moment_heatmaps(moments) -> bytes:
    """2x2 heatmap panel of the four passage matrices."""
    fig, axes = plt.subplots(2, 2, figsize=(9, 8))
    panels = (
        ("mean passage lengths", moments.lengths),
        ("mean passage weights", moments.means),
        ("second moments", moments.second_moments),
        ("variances", moments.variances),
    )
    for ax, (title, mat) in zip(axes.ravel(), panels):
        im = ax.imshow(mat, cmap="viridis")
        ax.set_title(title)
        ax.set_xlabel("to")
        ax.set_ylabel("from")
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    return _render(fig)


def gradient_residual_bars(rows, tolerance: float = 1e-4) -> bytes:
    """Log-scale bars of the worst relative error per verified quantity."""
    names = [r.quantity for r in rows]
    errs = [max(r.rel_err, 1e-18) for r in rows]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.bar(range(len(names)), errs, color="steelblue")
    ax.axhline(tolerance, color="crimson", linestyle="--", label=f"tolerance {tolerance:g}")
    ax.set_yscale("log")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=35, ha="right", fontsize=8)
    ax.set_ylabel("worst relative error")
    ax.legend()
    fig.tight_layout()
    return _render(fig)


def grid_policy_figure(cells, P: np.ndarray, occupancy: np.ndarray,
                       obstacles=(), title: str = "", cv: np.ndarray | None = None) -> bytes:
    """Patrol policy on a lattice: arrow width tracks transition probability,
    node shade tracks occupancy, dominant edges drawn opaque.  When edge cv
    values are given, low/high-variability edges are colored green/red."""
    fig, ax = plt.subplots(figsize=(7, 7))
    xs = np.array([c for _, c in cells], dtype=float)
    ys = np.array([-r for r, _ in cells], dtype=float)
    for (r, c) in obstacles:
        ax.add_patch(plt.Rectangle((c - 0.3, -r - 0.3), 0.6, 0.6, color="black"))
    n = len(cells)
    for i in range(n):
        for j in range(n):
            p = P[i, j]
            if p <= 0:
                continue
            dx, dy = xs[j] - xs[i], ys[j] - ys[i]
            if cv is not None:
                color = "firebrick" if cv[i, j] >= 1.0 else "seagreen"
            else:
                color = "dimgray" if p > 0.5 else "lightsteelblue"
            ax.annotate(
                "", xy=(xs[i] + 0.82 * dx, ys[i] + 0.82 * dy),
                xytext=(xs[i] + 0.18 * dx, ys[i] + 0.18 * dy),
                arrowprops=dict(arrowstyle="-|>", lw=0.4 + 4.0 * p, color=color,
                                alpha=0.9 if p > 0.5 else 0.55))
    sc = ax.scatter(xs, ys, c=occupancy, s=420, cmap="YlOrRd", zorder=3,
                    edgecolors="black", linewidths=0.6)
    fig.colorbar(sc, ax=ax, fraction=0.046, label="occupancy")
    ax.set_title(title)
    ax.set_aspect("equal")
    ax.axis("off")
    return _render(fig)


def trace_figure(trace: np.ndarray, ylabel: str = "best objective") -> bytes:
    """Best-so-far objective value against iteration."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(trace[:, 0], trace[:, 1], color="steelblue", lw=1.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _render(fig)


def cascade_boxplot(runs_by_policy: dict) -> bytes:
    """Per-policy boxplots of cumulative connectivity and variance improvements."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.5))
    labels = list(runs_by_policy)
    dk = [[r.total_d_kemeny for r in runs if r.successful and r.steps]
          for runs in runs_by_policy.values()]
    dv = [[r.total_d_variance for r in runs if r.successful and r.steps]
          for runs in runs_by_policy.values()]
    for ax, data, title in ((axes[0], dk, "connectivity improvement"),
                            (axes[1], dv, "variance improvement")):
        ax.boxplot([d if d else [0.0] for d in data], tick_labels=labels)
        ax.set_title(title)
        ax.tick_params(axis="x", rotation=15)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    return _render(fig)


def cascade_dpi_bars(runs_by_policy: dict, n: int) -> bytes:
    """Mean absolute occupancy shift per node for each policy."""
    fig, ax = plt.subplots(figsize=(9, 4))
    width = 0.8 / max(len(runs_by_policy), 1)
    x = np.arange(n, dtype=float)
    for k, (policy, runs) in enumerate(runs_by_policy.items()):
        good = [r for r in runs if r.successful and r.steps]
        if good:
            per_node = np.mean([r.steps[-1].dpi_per_node for r in good], axis=0)
        else:
            per_node = np.zeros(n)
        ax.bar(x + k * width, per_node, width=width, label=policy)
    ax.set_xlabel("node")
    ax.set_ylabel("mean |occupancy shift|")
    ax.legend()
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    return _render(fig)
