"""
Synthetic Review Streams

Brands follow planted polarity trajectories across time slices; every
review mixes words of one topic with words of a positive or a negative
polarity block chosen by its rating. Two brands cross each other (one
rising, one falling) so ranking changes between slices are observable.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
import pandas as pd

from src.corpus.reviews import ReviewRecord

SLICE_SECONDS = 1000.0


@dataclass(frozen=True)
class StreamSpec:
    n_brands: int = 8
    n_slices: int = 5
    docs_per_slice: int = 2000
    V: int = 500
    K: int = 10
    doc_length: int = 40
    polarity_share: float = 0.35
    seed: int = 0


def brand_trajectories(n_brands: int, n_slices: int) -> np.ndarray:
    """
    n_brands x n_slices planted polarity in [-0.9, 0.9]

    Brands are spread evenly; brand 0 rises and brand n_brands-1 falls
    linearly so the two trade places over the stream.
    """
    if n_brands < 2:
        raise ValueError("at least two brands are needed")
    levels = np.linspace(-0.7, 0.7, n_brands)
    traj = np.repeat(levels[:, np.newaxis], n_slices, axis=1)
    if n_slices > 1:
        ramp = np.linspace(-0.9, 0.9, n_slices)
        traj[0] = ramp
        traj[-1] = ramp[::-1]
    return traj


def term(v: int) -> str:
    return f"w{v:04d}"


def generate_stream(spec: StreamSpec = StreamSpec()) -> Tuple[List[ReviewRecord], pd.DataFrame, List[float]]:
    """
    Generate a labelled review stream with known brand polarity

    Args:
        spec: Sizes and seed of the stream

    Returns:
        Tuple of (records, truth frame with slice/brand/polarity/mean_rating, slice boundaries)
    """
    if spec.V < 4 * spec.K:
        raise ValueError(f"V={spec.V} too small for K={spec.K} topics plus two polarity blocks")
    rng = np.random.default_rng(spec.seed)
    traj = brand_trajectories(spec.n_brands, spec.n_slices)

    block = spec.V // 4
    positive_words = np.arange(spec.V - 2 * block, spec.V - block)
    negative_words = np.arange(spec.V - block, spec.V)
    topic_words = np.array_split(np.arange(spec.V - 2 * block), spec.K)
    topic_weights = [rng.dirichlet(np.full(len(w), 0.5)) for w in topic_words]
    brands = [f"brand_{b:02d}" for b in range(spec.n_brands)]

    records: List[ReviewRecord] = []
    rows = []
    for t in range(spec.n_slices):
        brand_of_doc = rng.integers(0, spec.n_brands, size=spec.docs_per_slice)
        stamps = np.sort(rng.uniform(t * SLICE_SECONDS, (t + 1) * SLICE_SECONDS, size=spec.docs_per_slice))
        ratings_by_brand = {b: [] for b in range(spec.n_brands)}
        for i, (b, stamp) in enumerate(zip(brand_of_doc, stamps)):
            polarity = traj[b, t]
            rating = int(np.clip(np.rint(3.0 + 2.0 * polarity + rng.normal(0.0, 0.8)), 1, 5))
            k = rng.integers(0, spec.K)
            n_polar = rng.binomial(spec.doc_length, spec.polarity_share)
            words = list(rng.choice(topic_words[k], size=spec.doc_length - n_polar, p=topic_weights[k]))
            if rating >= 4:
                words += list(rng.choice(positive_words, size=n_polar))
            elif rating <= 2:
                words += list(rng.choice(negative_words, size=n_polar))
            else:
                words += list(rng.choice(np.concatenate([positive_words, negative_words]), size=n_polar))
            rng.shuffle(words)
            records.append(ReviewRecord(review_id=f"s{t}-d{i:05d}", brand=brands[b], rating=rating,
                                        timestamp=float(stamp), text=" ".join(term(v) for v in words)))
            ratings_by_brand[b].append(rating)
        for b in range(spec.n_brands):
            got = ratings_by_brand[b]
            rows.append({"slice": t, "brand": brands[b], "polarity": traj[b, t],
                         "mean_rating": float(np.mean(got)) if got else float("nan")})

    boundaries = [t * SLICE_SECONDS for t in range(spec.n_slices + 1)]
    return records, pd.DataFrame(rows), boundaries


def write_jsonl(records: List[ReviewRecord], path) -> None:
    """Write records in the default ingest schema (one JSON object per line)."""
    frame = pd.DataFrame({"review_id": [r.review_id for r in records],
                          "brand": [r.brand for r in records],
                          "rating": [r.rating for r in records],
                          "ts": [r.timestamp for r in records],
                          "text": [r.text for r in records]})
    frame.to_json(path, orient="records", lines=True, double_precision=15)
