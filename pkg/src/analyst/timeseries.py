"""
Brand Rating Time Series

Per-brand predicted polarity across slices next to the ground-truth mean
ratings, both scaled into [-1, 1], with a seaborn chart for reports.
"""

from pathlib import Path
from typing import Optional, Sequence, Union

import matplotlib
matplotlib.use('Agg')  # non-interactive backend
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns

from src.model.numerics import normalize_scores


def _slice_scores(timeline) -> list:
    slices = getattr(timeline, "slices", timeline)
    return [getattr(s, "scores", s) for s in slices]


def rating_time_series(timeline,
                       brand: str,
                       truth: Optional[Sequence[Optional[pd.Series]]] = None) -> pd.DataFrame:
    """
    Normalized polarity series of one brand

    Args:
        timeline: TrainedTimeline, or a list of per-slice score frames (columns raw, normalized)
        brand: Brand name
        truth: Optional per-slice ground-truth ratings (Series indexed by brand)

    Returns:
        DataFrame with columns slice, raw, normalized, slice_normalized, truth_raw, truth.
        `normalized` divides the raw series by its max |value|; `truth` is the
        mean-centred rating series scaled the same way. Slices where the brand
        has no documents carry NaN in the truth columns.
    """
    frames = _slice_scores(timeline)
    known = set()
    for frame in frames:
        known.update(map(str, frame.index))
    if brand not in known:
        raise ValueError(f"Unknown brand '{brand}'. Known brands: {', '.join(sorted(known))}")

    raw = np.array([frame["raw"].get(brand, np.nan) for frame in frames], dtype=np.float64)
    per_slice = np.array([frame["normalized"].get(brand, np.nan) for frame in frames], dtype=np.float64)
    present = ~np.isnan(raw)
    normalized = np.full_like(raw, np.nan)
    normalized[present] = normalize_scores(raw[present])

    truth_raw = np.full(len(frames), np.nan)
    if truth is not None:
        for t, series in enumerate(truth[:len(frames)]):
            if series is not None and brand in series.index:
                truth_raw[t] = float(series[brand])
    truth_norm = np.full_like(truth_raw, np.nan)
    has_truth = ~np.isnan(truth_raw)
    if has_truth.any():
        centred = truth_raw[has_truth] - truth_raw[has_truth].mean()
        truth_norm[has_truth] = normalize_scores(centred)

    return pd.DataFrame({"slice": np.arange(len(frames)), "raw": raw, "normalized": normalized,
                         "slice_normalized": per_slice, "truth_raw": truth_raw, "truth": truth_norm})


def plot_rating_series(series: pd.DataFrame, brand: str, output_image: Union[str, Path]) -> Path:
    """Predicted vs ground-truth normalized series of one brand."""
    sns.set_theme(style="darkgrid")
    fig, ax = plt.subplots(figsize=(12, 6))
    sns.lineplot(data=series, x="slice", y="normalized", ax=ax, label="Predicted polarity",
                 color="black", linewidth=2.5, marker="o")
    if series["truth"].notna().any():
        sns.lineplot(data=series, x="slice", y="truth", ax=ax, label="Ground truth (mean rating)",
                     color="royalblue", linewidth=2, linestyle="--", marker="s")
    ax.set_title(f"{brand} - Rating Time Series", fontsize=16, fontweight="bold")
    ax.set_xlabel("Time slice", fontsize=12, fontweight="bold")
    ax.set_ylabel("Normalized score", fontsize=12, fontweight="bold")
    ax.set_ylim(-1.1, 1.1)
    ax.set_xticks(series["slice"].tolist())
    ax.legend(loc="best", fontsize=11)

    output_image = Path(output_image)
    output_image.parent.mkdir(parents=True, exist_ok=True)
    plt.tight_layout()
    plt.savefig(output_image, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return output_image
