"""
Corpus Artifacts

`ingest_corpus` turns a review file into the on-disk corpus used by every
later command:

    <output_dir>/corpus/vocabulary.txt
    <output_dir>/corpus/ingest_errors.json
    <output_dir>/corpus/slice_XX/documents.jsonl   one review per line, with its label
    <output_dir>/corpus/slice_XX/counts.csv        doc,term,count triplets of the BoW matrix
    <output_dir>/corpus/slice_XX/split.json        train/validation document positions

Everything is written deterministically, so rerunning with the same config
reproduces the files byte for byte.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

import pandas as pd

from src.config import RunConfig
from src.corpus.reviews import ReviewRecord, SentimentLabel, ingest_reviews
from src.corpus.slicing import TimeSliceCorpus, slice_by_time, split_train_validation, vectorize
from src.corpus.vocabulary import Vocabulary, build_vocabulary, load_vocabulary, save_vocabulary
from src.errors import CorpusError

CORPUS_DIR = "corpus"


@dataclass
class IngestedCorpus:
    vocab: Vocabulary
    slices: List[TimeSliceCorpus]
    splits: List[Tuple[TimeSliceCorpus, TimeSliceCorpus]]
    brand_ids: Dict[str, int]

    def __len__(self) -> int:
        return len(self.slices)


def slice_dir(root: Union[str, Path], t: int) -> Path:
    return Path(root) / f"slice_{t:02d}"


def _write_json(data, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def _document_row(record: ReviewRecord, label: SentimentLabel) -> Dict:
    return {"review_id": record.review_id, "brand": record.brand, "rating": record.rating,
            "timestamp": record.timestamp, "text": record.text, "product_type": record.product_type,
            "label": int(label)}


def save_slice_artifacts(corpus: TimeSliceCorpus, train: TimeSliceCorpus, validation: TimeSliceCorpus,
                         vocab: Vocabulary, out_dir: Path) -> Dict[str, int]:
    """Write documents.jsonl, counts.csv and split.json of one slice."""
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "documents.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for record, label in corpus.documents:
            f.write(json.dumps(_document_row(record, label), sort_keys=True, ensure_ascii=False) + "\n")

    counts = vectorize(corpus, vocab).tocoo()
    triplets = pd.DataFrame({"doc": counts.row, "term": counts.col, "count": counts.data})
    triplets.sort_values(["doc", "term"], kind="stable").to_csv(out_dir / "counts.csv", index=False,
                                                                 lineterminator="\n")

    positions = {id(doc): i for i, doc in enumerate(corpus.documents)}
    _write_json({"slice_id": corpus.slice_id, "start": corpus.start, "end": corpus.end,
                 "train": [positions[id(doc)] for doc in train.documents],
                 "validation": [positions[id(doc)] for doc in validation.documents]},
                out_dir / "split.json")
    return {"documents": len(corpus), "train": len(train), "validation": len(validation), "nnz": int(counts.nnz)}


def ingest_corpus(config: RunConfig) -> Path:
    """
    Read, slice, split and vectorize the configured review file

    Args:
        config: Run configuration (input, schema, boundaries, vocabulary thresholds)

    Returns:
        Path to the written corpus directory
    """
    output_dir = Path(config.output_dir)
    corpus_dir = output_dir / CORPUS_DIR
    boundaries = config.boundary_seconds()

    print(f"\n{'=' * 60}")
    print(f"Ingesting {config.input}")
    print(f"{'=' * 60}")
    records, errors = ingest_reviews(config.input, config.schema)
    if not records:
        raise CorpusError(f"No valid reviews in {config.input} ({len(errors)} malformed line(s))")
    print(f"✓ {len(records)} reviews read, {len(errors)} malformed line(s) skipped")

    slices = slice_by_time(records, boundaries)
    splits = [split_train_validation(c, config.validation_fraction, seed=config.seed + t)
              for t, c in enumerate(slices)]
    vocab = build_vocabulary(splits[0][0].records, config.min_df, config.max_df_frac,
                             config.ngram_max, config.stoplist)
    print(f"✓ Vocabulary: {len(vocab)} terms (min_df={config.min_df}, max_df_frac={config.max_df_frac})")

    corpus_dir.mkdir(parents=True, exist_ok=True)
    config.write_echo(output_dir)
    save_vocabulary(vocab, corpus_dir / "vocabulary.txt")
    _write_json([{"line": e.line, "message": e.message} for e in errors], corpus_dir / "ingest_errors.json")
    _write_json({"brands": slices[0].brand_ids, "n_slices": len(slices)}, corpus_dir / "brands.json")

    for t, (corpus, (train, validation)) in enumerate(zip(slices, splits)):
        stats = save_slice_artifacts(corpus, train, validation, vocab, slice_dir(corpus_dir, t))
        marker = "✓" if stats["documents"] else "○"
        print(f"  {marker} slice {t:02d}: {stats['documents']} docs "
              f"({stats['train']} train / {stats['validation']} validation), {stats['nnz']} nonzeros")
    print(f"\n✓ Corpus written to {corpus_dir}")
    return corpus_dir


def _read_slice(path: Path, t: int, brand_ids: Dict[str, int]) -> Tuple[TimeSliceCorpus, List[int], List[int]]:
    with open(path / "split.json", "r", encoding="utf-8") as f:
        split = json.load(f)
    documents = []
    with open(path / "documents.jsonl", "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            row = json.loads(line)
            record = ReviewRecord(review_id=row["review_id"], brand=row["brand"], rating=int(row["rating"]),
                                  timestamp=float(row["timestamp"]), text=row["text"],
                                  product_type=row.get("product_type"))
            documents.append((record, SentimentLabel(int(row["label"]))))
    corpus = TimeSliceCorpus(slice_id=t, start=float(split["start"]), end=float(split["end"]),
                             documents=documents, brand_ids=brand_ids)
    return corpus, split["train"], split["validation"]


def load_ingested(output_dir: Union[str, Path], ngram_max: int = 3) -> IngestedCorpus:
    """
    Read back the artifacts written by ingest_corpus

    Args:
        output_dir: Run directory given to ingest
        ngram_max: N-gram order the vocabulary was built with

    Returns:
        IngestedCorpus with slices and their train/validation splits
    """
    corpus_dir = Path(output_dir) / CORPUS_DIR
    if not (corpus_dir / "vocabulary.txt").exists():
        raise FileNotFoundError(f"No ingested corpus under {corpus_dir}; run ingest first")
    vocab = load_vocabulary(corpus_dir / "vocabulary.txt", ngram_max=ngram_max)
    with open(corpus_dir / "brands.json", "r", encoding="utf-8") as f:
        meta = json.load(f)
    brand_ids = {name: int(i) for name, i in meta["brands"].items()}

    slices, splits = [], []
    for t in range(int(meta["n_slices"])):
        corpus, train_pos, val_pos = _read_slice(slice_dir(corpus_dir, t), t, brand_ids)
        slices.append(corpus)
        splits.append((corpus.subset(train_pos), corpus.subset(val_pos)))
    return IngestedCorpus(vocab=vocab, slices=slices, splits=splits, brand_ids=brand_ids)
