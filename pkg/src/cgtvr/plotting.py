"""Static log-log convergence plots written as SVG."""

import logging
import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

log = logging.getLogger(__name__)

FLOOR = 1e-16
RC = {
    "svg.hashsalt": "cgtvr",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
}
YLABELS = {
    "grad_norm_sq": r"$\|\nabla f(\bar x)\|^2$",
    "grad_map_sq": r"$\|G(\bar x)\|^2$",
    "objective": r"$f(\bar x)$",
    "consensus_error": "consensus error",
}


def series(path, metric):
    """``(data_pass + 1, metric)`` from one metrics CSV, floored for log axes.

    Returns None when the column is missing or has no finite entries.
    """
    from .experiment import read_metrics_csv

    cols = read_metrics_csv(path)
    if metric not in cols:
        return None
    x = cols["data_pass"] + 1.0
    y = cols[metric]
    if metric == "consensus_error" and y.size > 1:
        # identical initial iterates give a zero first point; drop it
        x, y = x[1:], y[1:]
    keep = np.isfinite(y)
    if not keep.any():
        return None
    return x[keep], np.maximum(y[keep], FLOOR)


def render_svg(csv_paths, metric, out_path, labels=None, title=None):
    """One SVG with one log-log polyline per CSV.  Inputs whose metric
    column is empty are skipped with a warning.  Returns the output path, or
    None if nothing could be drawn."""
    csv_paths = [Path(p) for p in csv_paths]
    labels = labels or [p.stem for p in csv_paths]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        drawn = 0
        for k, (path, label) in enumerate(zip(csv_paths, labels)):
            s = series(path, metric)
            if s is None:
                warnings.warn(f"{path.name}: column {metric!r} is empty; skipped")
                continue
            line, = ax.plot(s[0], s[1], label=label)
            line.set_gid(f"series-{k}")
            drawn += 1
        if not drawn:
            plt.close(fig)
            warnings.warn(f"no data for {metric!r}; {out_path} not written")
            return None
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("data passes + 1")
        ax.set_ylabel(YLABELS.get(metric, metric))
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        plt.close(fig)
    log.info("wrote %s", out_path)
    return out_path


def polyline_pixels(svg_path, gid):
    """Vertices of the path inside the ``<g id=gid>`` group of an SVG file."""
    import xml.etree.ElementTree as ET

    ns = "{http://www.w3.org/2000/svg}"
    root = ET.parse(svg_path).getroot()
    for g in root.iter(f"{ns}g"):
        if g.get("id") == gid:
            path = next(g.iter(f"{ns}path"))
            tokens = path.get("d").replace("M", " ").replace("L", " ").split()
            pts = np.array([float(t) for t in tokens]).reshape(-1, 2)
            return pts
    raise KeyError(gid)
