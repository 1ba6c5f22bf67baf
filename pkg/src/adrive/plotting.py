"""Figures for a results CSV: delay against volume and against section length."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiment import by_volume, read_results, summarize  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 120,
    "savefig.bbox": "tight",
    "font.size": 9,
    "axes.linewidth": 0.6,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.linewidth": 0.4,
    "grid.alpha": 0.5,
    "lines.linewidth": 1.4,
    "lines.markersize": 4,
    "legend.frameon": False,
}
LOOK = {
    "adrive": {"color": "#1f6fb4", "marker": "o", "label": "A-DRIVE"},
    "lane_priority": {"color": "#c8553d", "marker": "s", "label": "lane priority"},
}


def _look(protocol: str) -> dict:
    return LOOK.get(protocol, {"label": protocol})


def delay_vs_volume(summary, protocols, path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, (ax_avg, ax_worst) = plt.subplots(1, 2, sharex=True)
        for proto in protocols:
            series = by_volume(summary, proto)
            vols = list(series)
            look = _look(proto)
            ax_avg.plot(vols, [series[v][0] for v in vols], **look)
            ax_worst.plot(vols, [series[v][1] for v in vols], linestyle="--", **look)
        ax_avg.set_title("average trip delay")
        ax_worst.set_title("worst trip delay")
        for ax in (ax_avg, ax_worst):
            ax.set_xlabel("traffic volume per direction (veh/h)")
        ax_avg.set_ylabel("delay (s), mean over seeds and sizes")
        ax_avg.legend()
        fig.savefig(path)
        plt.close(fig)
    return path


def delay_vs_size(summary, protocols, path: Path) -> Path:
    volumes = sorted({v for (_, v, _) in summary})
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(volumes), sharey=False, figsize=(2.4 * len(volumes), 3.0), squeeze=False)
        for ax, volume in zip(axes[0], volumes):
            for proto in protocols:
                pts = sorted((sz, s.avg_delay_s) for (p, v, sz), s in summary.items() if p == proto and v == volume)
                if pts:
                    ax.plot([p[0] for p in pts], [p[1] for p in pts], **_look(proto))
            ax.set_title(f"{volume} veh/h")
            ax.set_xlabel("section length (m)")
        axes[0][0].set_ylabel("average trip delay (s)")
        axes[0][0].legend()
        fig.savefig(path)
        plt.close(fig)
    return path


def render_report(csv_path: str | Path, out_dir: str | Path | None = None) -> tuple[list[Path], str]:
    """Draw both figures next to the CSV and return their paths and a text table."""
    csv_path = Path(csv_path)
    out_dir = Path(out_dir) if out_dir is not None else csv_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = read_results(csv_path)
    summary = summarize(rows)
    protocols = sorted({p for (p, _, _) in summary}, key=lambda p: (p not in LOOK, p))
    stem = csv_path.stem
    figures = [
        delay_vs_volume(summary, protocols, out_dir / f"{stem}_delay_vs_volume.png"),
        delay_vs_size(summary, protocols, out_dir / f"{stem}_delay_vs_size.png"),
    ]
    return figures, format_table(summary)


def format_table(summary) -> str:
    lines = [f"{'protocol':<14}{'volume':>7}{'size':>7}{'runs':>6}{'avg s':>10}{'worst s':>10}{'deadlocks':>11}{'coll':>6}"]
    for (proto, volume, size), s in summary.items():
        avg = "n/a" if math.isnan(s.avg_delay_s) else f"{s.avg_delay_s:.2f}"
        worst = "n/a" if math.isnan(s.worst_delay_s) else f"{s.worst_delay_s:.2f}"
        lines.append(f"{proto:<14}{volume:>7}{size:>7g}{s.runs:>6}{avg:>10}{worst:>10}{s.deadlocks:>11.1f}{s.collisions:>6}")
    return "\n".join(lines)
