"""
Time Slicing, Vectorization and Validation Splits
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from src.corpus.reviews import ReviewRecord, SentimentLabel, map_rating_to_label
from src.corpus.vocabulary import Vocabulary
from src.errors import CorpusError

LOG = logging.getLogger(__name__)

# Sparse document x term counts of one slice.
CountMatrix = sp.csr_matrix


@dataclass
class TimeSliceCorpus:
    """Documents of one half-open interval [start, end)."""
    slice_id: int
    start: float
    end: float
    documents: List[Tuple[ReviewRecord, SentimentLabel]] = field(default_factory=list)
    brand_ids: Dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.documents)

    @property
    def records(self) -> List[ReviewRecord]:
        return [r for r, _ in self.documents]

    def brand_index(self) -> np.ndarray:
        return np.array([self.brand_ids[r.brand] for r, _ in self.documents], dtype=np.int64)

    def labels(self) -> np.ndarray:
        return np.array([int(lab) for _, lab in self.documents], dtype=np.int64)

    def ratings(self) -> np.ndarray:
        return np.array([r.rating for r, _ in self.documents], dtype=np.float64)

    def subset(self, positions: Sequence[int]) -> "TimeSliceCorpus":
        return TimeSliceCorpus(slice_id=self.slice_id, start=self.start, end=self.end,
                               documents=[self.documents[i] for i in positions],
                               brand_ids=self.brand_ids)


def slice_by_time(records: Sequence[ReviewRecord],
                  boundaries: Sequence[float],
                  brand_ids: Optional[Dict[str, int]] = None) -> List[TimeSliceCorpus]:
    """
    Assign records to half-open time intervals

    Args:
        records: Reviews in any order
        boundaries: Strictly increasing instants; n boundaries give n-1 slices
        brand_ids: Shared brand index; built from the in-range records when omitted

    Returns:
        List of TimeSliceCorpus, one per interval (possibly empty)
    """
    edges = np.asarray(boundaries, dtype=np.float64)
    if edges.ndim != 1 or len(edges) < 2:
        raise ValueError("At least two boundaries are required")
    if np.any(np.diff(edges) <= 0):
        raise ValueError("Boundaries must be strictly increasing")

    in_range = [r for r in records if edges[0] <= r.timestamp < edges[-1]]
    dropped = len(records) - len(in_range)
    if dropped:
        LOG.warning("%d record(s) fall outside [%s, %s) and were dropped", dropped, edges[0], edges[-1])

    if brand_ids is None:
        brand_ids = {brand: i for i, brand in enumerate(sorted({r.brand for r in in_range}))}

    slices = [TimeSliceCorpus(slice_id=t, start=float(edges[t]), end=float(edges[t + 1]), brand_ids=brand_ids)
              for t in range(len(edges) - 1)]
    for record in sorted(in_range, key=lambda r: (r.timestamp, r.review_id)):
        # side="right" puts a record sitting exactly on a boundary into the later slice
        t = int(np.searchsorted(edges, record.timestamp, side="right")) - 1
        if record.brand not in brand_ids:
            raise CorpusError(f"Brand '{record.brand}' missing from the shared brand index")
        slices[t].documents.append((record, map_rating_to_label(record.rating)))
    return slices


def vectorize(corpus: TimeSliceCorpus, vocab: Vocabulary) -> CountMatrix:
    """
    Bag-of-words counts of one slice against a frozen vocabulary

    Args:
        corpus: Slice to vectorize
        vocab: Vocabulary built on slice-0 training data

    Returns:
        CSR matrix of shape (D, V) with int64 counts
    """
    n_docs, n_terms = len(corpus), len(vocab)
    if n_docs == 0:
        return sp.csr_matrix((0, n_terms), dtype=np.int64)
    X = vocab.vectorizer().transform([r.text for r in corpus.records]).tocsr()
    if X.shape != (n_docs, n_terms):
        raise CorpusError(f"Count matrix shape {X.shape} does not match corpus/vocabulary ({n_docs}, {n_terms})")
    empty = int(np.sum(np.diff(X.indptr) == 0))
    if empty:
        LOG.warning("Slice %d: %d document(s) contain only out-of-vocabulary tokens", corpus.slice_id, empty)
    X.sort_indices()
    return X


def split_train_validation(corpus: TimeSliceCorpus,
                           fraction: float = 0.10,
                           seed: int = 0) -> Tuple[TimeSliceCorpus, TimeSliceCorpus]:
    """
    Brand-stratified train/validation split

    Args:
        corpus: Slice to split
        fraction: Share of each brand's documents held out
        seed: Seed of the permutation; identical inputs give identical splits

    Returns:
        Tuple of (train, validation) slices, documents kept in original order
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    brands = corpus.brand_index() if len(corpus) else np.array([], dtype=np.int64)

    validation: List[int] = []
    for brand in np.unique(brands):
        positions = np.flatnonzero(brands == brand)
        n = len(positions)
        if n < 2:
            LOG.warning("Slice %d: brand id %d has a single document; kept in train", corpus.slice_id, brand)
            continue
        n_val = int(np.clip(round(n * fraction), 1, n - 1))
        validation.extend(rng.permutation(positions)[:n_val].tolist())

    val_set = set(validation)
    train_pos = [i for i in range(len(corpus)) if i not in val_set]
    return corpus.subset(train_pos), corpus.subset(sorted(val_set))
