"""Visualization helpers using hvPlot and HoloViews."""

import logging
from pathlib import Path
from typing import Union

import holoviews as hv
import hvplot.pandas  # noqa: F401 (enables .hvplot() accessor)
import pandas as pd

logger = logging.getLogger(__name__)

# Cohort colours for the chemical-space scatter
COHORT_COLORS = {
    "generated": "#1f77b4",
    "desirable": "#2ca02c",
    "reference": "#d62728",
    "training": "#7f7f7f",
}


def plot_projection(
    df: pd.DataFrame,
    title: str = "Chemical space",
    width: int = 600,
    height: int = 500,
    size: int = 12,
) -> hv.Overlay:
    """
    Scatter of projected molecules coloured by cohort.

    Parameters
    ----------
    df : pd.DataFrame
        Projection table with ``id``, ``pc1``, ``pc2`` and ``cohort`` columns.
    title : str
        Plot title
    width, height : int
        Plot dimensions in pixels
    size : int
        Marker size

    Returns
    -------
    hv.Overlay
        One scatter overlay per cohort, hovering shows the molecule id.
    """
    missing = [c for c in ("id", "pc1", "pc2", "cohort") if c not in df.columns]
    if missing:
        raise ValueError(f"Projection table lacks columns {missing}. Available: {list(df.columns)}")
    layers = [
        group.hvplot.scatter(
            x="pc1",
            y="pc2",
            hover_cols=["id"],
            color=COHORT_COLORS.get(cohort, "#9467bd"),
            size=size,
            label=str(cohort),
        )
        for cohort, group in df.groupby("cohort", sort=False)
    ]
    return hv.Overlay(layers).opts(
        title=title,
        width=width,
        height=height,
        xlabel="PC 1",
        ylabel="PC 2",
    )


def save_plot(plot, path: Union[str, Path]) -> Path:
    """
    Write a plot to disk; ``.svg`` uses the matplotlib backend, anything else HTML.

    Parameters
    ----------
    plot : holoviews object
        Plot to write
    path : str or Path
        Destination file

    Returns
    -------
    Path
        The written file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".svg":
        hv.extension("matplotlib", logo=False)
        hv.save(plot, path, fmt="svg", backend="matplotlib")
    else:
        hv.save(plot, path, backend="bokeh")
    logger.info(f"✓ Wrote plot to {path}")
    return path
