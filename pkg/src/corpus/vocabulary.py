"""
N-gram Vocabulary

Builds the shared unigram/bigram/trigram vocabulary from slice-0 training
documents and persists it as a text file (header "V=<count>", then one term
per line in index order).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from sklearn.feature_extraction.text import CountVectorizer

from src.corpus.reviews import ReviewRecord
from src.errors import CorpusError

LOG = logging.getLogger(__name__)

# Lowercased alphanumeric runs of length >= 2; everything else separates tokens.
TOKEN_PATTERN = r"(?u)[^\W_]{2,}"


@dataclass
class Vocabulary:
    terms: List[str]
    df: Optional[np.ndarray] = None
    ngram_max: int = 3
    index: Dict[str, int] = field(init=False)

    def __post_init__(self):
        self.index = {term: i for i, term in enumerate(self.terms)}
        if len(self.index) != len(self.terms):
            raise CorpusError("Vocabulary contains duplicate terms")

    def __len__(self) -> int:
        return len(self.terms)

    def vectorizer(self) -> CountVectorizer:
        """CountVectorizer frozen to this vocabulary; out-of-vocabulary n-grams are dropped."""
        return CountVectorizer(lowercase=True, token_pattern=TOKEN_PATTERN,
                               ngram_range=(1, self.ngram_max), vocabulary=self.index,
                               dtype=np.int64)


def _texts(records: Iterable[Union[ReviewRecord, str]]) -> List[str]:
    return [r if isinstance(r, str) else r.text for r in records]


def build_vocabulary(records: Sequence[Union[ReviewRecord, str]],
                     min_df: int = 20,
                     max_df_frac: float = 0.5,
                     ngram_max: int = 3,
                     stoplist: Optional[Iterable[str]] = None) -> Vocabulary:
    """
    Build the n-gram vocabulary

    Args:
        records: Reviews (or raw texts) the vocabulary is learned from
        min_df: Minimum document frequency of a kept term
        max_df_frac: Maximum document frequency as a fraction of the document count
        ngram_max: Longest n-gram added as a feature
        stoplist: Terms (any n-gram length) excluded from the vocabulary

    Returns:
        Vocabulary ordered by descending document frequency, then lexicographically
    """
    texts = _texts(records)
    n_docs = len(texts)
    if n_docs == 0:
        raise CorpusError("Cannot build a vocabulary from an empty corpus")
    thresholds = f"min_df={min_df}, max_df_frac={max_df_frac}, D={n_docs}"
    if min_df > n_docs:
        raise CorpusError(f"Empty vocabulary: min_df exceeds the document count ({thresholds})")

    vectorizer = CountVectorizer(lowercase=True, token_pattern=TOKEN_PATTERN,
                                 ngram_range=(1, ngram_max), min_df=min_df,
                                 max_df=float(max_df_frac), dtype=np.int64)
    try:
        X = vectorizer.fit_transform(texts)
    except ValueError as e:
        raise CorpusError(f"Empty vocabulary after filtering ({thresholds}): {e}") from e

    names = vectorizer.get_feature_names_out()
    df = np.asarray((X > 0).sum(axis=0)).ravel()
    stop = {s.lower().strip() for s in (stoplist or [])}
    kept = [(int(d), str(t)) for t, d in zip(names, df) if t not in stop]
    if not kept:
        raise CorpusError(f"Empty vocabulary after stoplist filtering ({thresholds})")

    kept.sort(key=lambda item: (-item[0], item[1]))
    return Vocabulary(terms=[t for _, t in kept],
                      df=np.array([d for d, _ in kept], dtype=np.int64),
                      ngram_max=ngram_max)


def save_vocabulary(vocab: Vocabulary, path: Union[str, Path]) -> Path:
    """Write the header line "V=<count>" followed by one term per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"V={len(vocab)}\n")
        for term in vocab.terms:
            f.write(term + "\n")
    return path


def load_vocabulary(path: Union[str, Path], ngram_max: int = 3) -> Vocabulary:
    """Read a vocabulary written by save_vocabulary, checking the header count."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Vocabulary file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().split("\n")
    header = lines[0]
    if not header.startswith("V="):
        raise CorpusError(f"Vocabulary file {path} lacks the 'V=<count>' header")
    count = int(header[2:])
    terms = [t for t in lines[1:] if t]
    if len(terms) != count:
        raise CorpusError(f"Vocabulary file {path} declares V={count} but lists {len(terms)} terms")
    return Vocabulary(terms=terms, ngram_max=ngram_max)
