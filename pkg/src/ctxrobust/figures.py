"""Matplotlib renderings of the report artifacts as PNG files.

These complement the dependency-free SVG/CSV emitters with conventional
figures for quick viewing. matplotlib is imported lazily inside the entry
point so library users who never render PNGs don't pay for it.
"""

from __future__ import annotations

from pathlib import Path

_STYLE = {
    "figure.figsize": (6.4, 4.8),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
}


def render_figures(curve_sets, distributions, out_dir) -> list[Path]:
    """Render one PNG per curve set and one box plot per distribution."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: list[Path] = []
    with plt.rc_context(_STYLE):
        for name in sorted(curve_sets):
            curves = list(curve_sets[name])
            if not curves:
                continue
            fig, ax = plt.subplots()
            for curve in curves:
                ax.plot(curve.eps_grid, curve.accuracy, linewidth=1.5, label=curve.label)
            ax.set_xlim(0.0, 1.0)
            ax.set_ylim(0.0, 1.05)
            ax.set_xlabel("perturbation level")
            ax.set_ylabel("accuracy")
            ax.set_title(name)
            ax.legend(loc="best", fontsize=8)
            path = out_dir / f"{name}.png"
            fig.savefig(path)
            plt.close(fig)
            paths.append(path)
        for dist in distributions:
            stats = []
            for c in sorted(dist.per_class):
                st = dist.per_class[c]
                if st.median is None:
                    continue
                stats.append(
                    {
                        "label": f"class {c}",
                        "whislo": st.minimum,
                        "q1": st.q1,
                        "med": st.median,
                        "q3": st.q3,
                        "whishi": st.maximum,
                        "fliers": list(st.outliers),
                    }
                )
            if not stats:
                continue
            fig, ax = plt.subplots()
            ax.bxp(stats, showfliers=True)
            ax.set_ylim(-0.05, 1.05)
            ax.set_ylabel("flip severity")
            ax.set_title(f"distribution_{dist.model_id}")
            path = out_dir / f"distribution_{dist.model_id}.png"
            fig.savefig(path)
            plt.close(fig)
            paths.append(path)
    return paths
