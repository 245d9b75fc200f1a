"""
Review Ingestion

Reads timestamped brand reviews from JSON Lines and maps star ratings to
the three ordered sentiment classes.
"""

import json
import logging
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import pandas as pd

from src.config import DEFAULT_SCHEMA
from src.errors import CorpusError

LOG = logging.getLogger(__name__)

REQUIRED_FIELDS = ("brand", "rating", "timestamp", "text")


class SentimentLabel(IntEnum):
    NEGATIVE = 0
    NEUTRAL = 1
    POSITIVE = 2


@dataclass(frozen=True)
class ReviewRecord:
    """One review. Product type is carried along but never modeled."""
    review_id: str
    brand: str
    rating: int
    timestamp: float
    text: str
    product_type: Optional[str] = None

    def __post_init__(self):
        if self.rating not in (1, 2, 3, 4, 5):
            raise ValueError(f"rating must be in 1..5, got {self.rating}")
        if not self.brand:
            raise ValueError("brand must be non-empty")


@dataclass(frozen=True)
class IngestError:
    line: int
    message: str


def map_rating_to_label(rating: int) -> SentimentLabel:
    """1-2 -> Negative, 3 -> Neutral, 4-5 -> Positive."""
    if rating not in (1, 2, 3, 4, 5):
        raise ValueError(f"rating must be in 1..5, got {rating}")
    if rating <= 2:
        return SentimentLabel.NEGATIVE
    if rating == 3:
        return SentimentLabel.NEUTRAL
    return SentimentLabel.POSITIVE


def invert_label(label):
    """
    Label of the inverted rating: Positive <-> Negative, Neutral stays

    Scalars give a SentimentLabel; arrays and tensors of label codes are
    inverted elementwise.
    """
    if hasattr(label, "shape"):
        return int(SentimentLabel.POSITIVE) - label
    return SentimentLabel(int(SentimentLabel.POSITIVE) - int(label))


def _parse_timestamp(value) -> float:
    if isinstance(value, bool):
        raise ValueError("timestamp must be a number or a date string")
    if isinstance(value, (int, float)):
        return float(value)
    ts = pd.Timestamp(value)
    if ts.tzinfo is None:
        ts = ts.tz_localize("UTC")
    return ts.timestamp()


def _parse_rating(value) -> int:
    if isinstance(value, bool):
        raise ValueError(f"rating must be an integer, got {value!r}")
    rating = float(value)
    if not rating.is_integer():
        raise ValueError(f"rating must be an integer, got {value!r}")
    rating = int(rating)
    if rating not in (1, 2, 3, 4, 5):
        raise ValueError(f"rating {rating} outside 1..5")
    return rating


def ingest_reviews(path: Union[str, Path],
                   schema: Optional[Dict[str, str]] = None) -> Tuple[List[ReviewRecord], List[IngestError]]:
    """
    Read reviews from a JSON Lines file

    Args:
        path: Path to the .jsonl file, one review object per line
        schema: Mapping from record field (review_id, brand, rating, timestamp,
                text, product_type) to the key used in the file

    Returns:
        Tuple of (records sorted by timestamp, list of per-line errors)
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Review file not found: {path}")

    records: List[ReviewRecord] = []
    errors: List[IngestError] = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except (OSError, UnicodeDecodeError) as e:
        raise CorpusError(f"Cannot read review file {path}: {e}") from e

    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("line is not a JSON object")
            missing = [name for name in REQUIRED_FIELDS if schema[name] not in obj]
            if missing:
                raise ValueError(f"missing required field(s): {', '.join(schema[m] for m in missing)}")
            review_id = obj.get(schema["review_id"], f"line-{line_no}")
            product_key = schema.get("product_type")
            records.append(ReviewRecord(
                review_id=str(review_id),
                brand=str(obj[schema["brand"]]).strip(),
                rating=_parse_rating(obj[schema["rating"]]),
                timestamp=_parse_timestamp(obj[schema["timestamp"]]),
                text=str(obj[schema["text"]]),
                product_type=obj.get(product_key) if product_key else None,
            ))
        except (ValueError, TypeError) as e:
            errors.append(IngestError(line=line_no, message=str(e)))

    if errors:
        LOG.warning("%d malformed line(s) in %s (first: line %d: %s)",
                    len(errors), path, errors[0].line, errors[0].message)

    records.sort(key=lambda r: (r.timestamp, r.review_id))
    return records, errors
