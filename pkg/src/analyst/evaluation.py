"""
Ranking and Topic Metrics

Brand ranking correlation against mean review ratings, document
co-occurrence topic coherence (log-conditional and NPMI), topic uniqueness
and the combined topic quality, collected into a per-slice metric report.
"""

import logging
import math
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
from gensim.corpora import Dictionary
from gensim.models import CoherenceModel
from scipy import stats

from src.corpus.reviews import ReviewRecord
from src.corpus.slicing import TimeSliceCorpus
from src.model.numerics import spearman_rank_correlation

LOG = logging.getLogger(__name__)

METRIC_COLUMNS = ["corr", "p_value", "coherence", "uniqueness", "quality"]


def ground_truth_rating(documents: Union[TimeSliceCorpus, Sequence[ReviewRecord]]) -> pd.Series:
    """
    Mean raw rating (1-5) of every brand with at least one document

    Returns:
        Series indexed by brand name, sorted by name
    """
    records = documents.records if isinstance(documents, TimeSliceCorpus) else list(documents)
    if not records:
        return pd.Series(dtype=np.float64, name="rating")
    df = pd.DataFrame({"brand": [r.brand for r in records], "rating": [float(r.rating) for r in records]})
    means = df.groupby("brand")["rating"].mean().sort_index()
    means.index.name = "brand"
    return means


def _p_value(corr: float, n_brands: int, method: str) -> float:
    if n_brands < 4:
        LOG.warning("p-value needs at least 4 brands, got %d", n_brands)
        return float("nan")
    if abs(corr) >= 1.0:
        return 0.0
    if method == "t":
        t_stat = corr * math.sqrt((n_brands - 2) / (1.0 - corr * corr))
        return float(2.0 * stats.t.sf(abs(t_stat), df=n_brands - 2))
    if method == "z":
        z = math.atanh(corr) * math.sqrt(n_brands - 3)
        return float(2.0 * stats.norm.sf(abs(z)))
    raise ValueError(f"method must be 't' or 'z', got '{method}'")


def ranking_correlation(predicted: Union[pd.Series, Sequence[float]],
                        truth: Union[pd.Series, Sequence[float]],
                        method: str = "t") -> Tuple[float, float]:
    """
    Spearman correlation between predicted brand scores and ground truth

    Args:
        predicted: Brand scores; a Series is aligned with `truth` on its index
        truth: Ground-truth brand ratings
        method: "t" (Student t with B-2 dof) or "z" (Fisher z) p-value

    Returns:
        Tuple of (corr, two-sided p-value)
    """
    if isinstance(predicted, pd.Series) and isinstance(truth, pd.Series):
        common = truth.index.intersection(predicted.index)
        missing = truth.index.difference(predicted.index)
        if len(missing):
            LOG.warning("%d brand(s) without a predicted score excluded from the ranking", len(missing))
        predicted, truth = predicted.loc[common], truth.loc[common]
    predicted = np.asarray(predicted, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    corr = spearman_rank_correlation(predicted, truth)
    if math.isnan(corr):
        LOG.warning("Spearman correlation undefined; reported as 0")
        corr = 0.0
    return corr, _p_value(corr, len(truth), method)


def _document_frequencies(reference: sp.spmatrix) -> Tuple[sp.csc_matrix, np.ndarray]:
    binary = (sp.csc_matrix(reference) > 0).astype(np.float64).tocsc()
    return binary, np.asarray(binary.sum(axis=0)).ravel()


def _co_doc_counts(binary: sp.csc_matrix, words: Sequence[int]) -> np.ndarray:
    cols = binary[:, list(words)]
    return np.asarray((cols.T @ cols).todense())


def _present_words(words: Sequence[int], df: np.ndarray) -> Tuple[List[int], int]:
    """Drop words absent from the reference; returns kept words and the number of i < j pairs lost."""
    kept = [w for w in words if df[w] > 0]
    n, m = len(words), len(kept)
    return kept, n * (n - 1) // 2 - m * (m - 1) // 2


def topic_coherence(topics: Sequence[Sequence[int]], reference: sp.spmatrix) -> Tuple[float, List[float], int]:
    """
    Log-conditional document co-occurrence coherence

    Each topic scores the mean over ordered pairs i < j of
    log((D(w_i, w_j) + 1) / D(w_j)); words absent from the reference are
    skipped together with every pair they take part in.

    Args:
        topics: Top-word index lists, best word first
        reference: D x V counts of the reference documents

    Returns:
        Tuple of (average coherence, per-topic coherence, skipped pair count)
    """
    binary, df = _document_frequencies(reference)
    per_topic, skipped = [], 0
    for words in topics:
        kept, lost = _present_words(words, df)
        skipped += lost
        if len(kept) < 2:
            per_topic.append(float("nan"))
            continue
        co = _co_doc_counts(binary, kept)
        i, j = np.triu_indices(len(kept), k=1)
        per_topic.append(float(np.mean(np.log((co[i, j] + 1.0) / df[np.asarray(kept)[j]]))))
    if skipped:
        LOG.warning("%d word pair(s) skipped: words absent from the reference documents", skipped)
    valid = [s for s in per_topic if not math.isnan(s)]
    return (float(np.mean(valid)) if valid else float("nan")), per_topic, skipped


def topic_npmi(topics: Sequence[Sequence[int]], reference: sp.spmatrix) -> Tuple[float, List[float], int]:
    """
    Normalized PMI over document co-occurrence, computed with gensim's c_npmi

    The sliding window is as wide as the longest reference document, so each
    document is a single window and co-occurrence is document-level.
    """
    binary = sp.csr_matrix(reference > 0)
    _, df = _document_frequencies(reference)
    texts = [[str(v) for v in binary.indices[binary.indptr[d]:binary.indptr[d + 1]]]
             for d in range(binary.shape[0])]
    dictionary = Dictionary([[str(v) for v in range(binary.shape[1])]])
    window = max(1, max((len(t) for t in texts), default=1))

    per_topic: List[float] = []
    scored: Dict[int, List[str]] = {}
    skipped = 0
    for k, words in enumerate(topics):
        kept, lost = _present_words(words, df)
        skipped += lost
        per_topic.append(float("nan"))
        if len(kept) >= 2:
            scored[k] = [str(w) for w in kept]
    if scored:
        model = CoherenceModel(topics=list(scored.values()), texts=texts, dictionary=dictionary,
                               coherence="c_npmi", window_size=window, processes=1)
        for k, value in zip(scored, model.get_coherence_per_topic()):
            per_topic[k] = float(value)
    if skipped:
        LOG.warning("%d word pair(s) skipped: words absent from the reference documents", skipped)
    valid = [s for s in per_topic if not math.isnan(s)]
    return (float(np.mean(valid)) if valid else float("nan")), per_topic, skipped


def topic_uniqueness(topics: Sequence[Sequence[Union[int, str]]]) -> float:
    """
    TU = 1/(K*N) * sum over topics and their top words of 1/cnt(w)

    cnt(w) is the number of topics listing w among their top words.
    """
    if not topics:
        raise ValueError("topic_uniqueness needs at least one topic")
    counts: Dict[Union[int, str], int] = {}
    for words in topics:
        for w in set(words):
            counts[w] = counts.get(w, 0) + 1
    total = sum(1.0 / counts[w] for words in topics for w in words)
    return total / sum(len(words) for words in topics)


def topic_quality(coherence: float, uniqueness: float) -> float:
    """uniqueness / |coherence|"""
    if coherence == 0:
        raise ValueError("topic quality is undefined for zero coherence")
    return uniqueness / abs(coherence)


def metric_report(rows: Sequence[Dict[str, float]]) -> pd.DataFrame:
    """
    One row per evaluated slice plus an Average row

    Args:
        rows: Dicts with slice, corr, p_value, coherence, uniqueness (NaN marks NA)

    Returns:
        DataFrame indexed by slice label with METRIC_COLUMNS
    """
    records = []
    for row in rows:
        coh, uni = row.get("coherence", float("nan")), row.get("uniqueness", float("nan"))
        quality = topic_quality(coh, uni) if not (pd.isna(coh) or pd.isna(uni) or coh == 0) else float("nan")
        records.append({"slice": str(row["slice"]), "corr": row.get("corr", float("nan")),
                        "p_value": row.get("p_value", float("nan")), "coherence": coh,
                        "uniqueness": uni, "quality": quality})
    report = pd.DataFrame.from_records(records, columns=["slice"] + METRIC_COLUMNS).set_index("slice")
    average = report[METRIC_COLUMNS].mean(skipna=True)
    if not (pd.isna(average["coherence"]) or pd.isna(average["uniqueness"]) or average["coherence"] == 0):
        average["quality"] = topic_quality(average["coherence"], average["uniqueness"])
    report.loc["Average"] = average
    return report


def write_metric_report(report: pd.DataFrame, out_dir: Union[str, Path], name: str = "metrics") -> Dict[str, Path]:
    """Write the report as CSV and JSON (records, NA as null)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    json_path = out_dir / f"{name}.json"
    report.to_csv(csv_path, float_format="%.6f", na_rep="NA")
    report.reset_index().to_json(json_path, orient="records", indent=2, double_precision=10)
    return {"csv": csv_path, "json": json_path}
