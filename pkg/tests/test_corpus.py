import json
import logging

import numpy as np
import pytest

from conftest import make_record
from src.config import RunConfig
from src.corpus.reviews import SentimentLabel, ingest_reviews, invert_label, map_rating_to_label
from src.corpus.run import ingest_corpus, load_ingested, slice_dir
from src.corpus.slicing import TimeSliceCorpus, slice_by_time, split_train_validation, vectorize
from src.corpus.synthetic import StreamSpec, brand_trajectories, generate_stream, write_jsonl
from src.corpus.vocabulary import Vocabulary, build_vocabulary, load_vocabulary, save_vocabulary
from src.errors import CorpusError


@pytest.mark.parametrize("rating,label", [(1, SentimentLabel.NEGATIVE), (2, SentimentLabel.NEGATIVE),
                                          (3, SentimentLabel.NEUTRAL), (4, SentimentLabel.POSITIVE),
                                          (5, SentimentLabel.POSITIVE)])
def test_map_rating_to_label(rating, label):
    assert map_rating_to_label(rating) == label


@pytest.mark.parametrize("rating", [0, 6])
def test_map_rating_rejects_out_of_range(rating):
    with pytest.raises(ValueError):
        map_rating_to_label(rating)


def test_invert_label():
    assert invert_label(SentimentLabel.POSITIVE) == SentimentLabel.NEGATIVE
    assert invert_label(SentimentLabel.NEGATIVE) == SentimentLabel.POSITIVE
    assert invert_label(SentimentLabel.NEUTRAL) == SentimentLabel.NEUTRAL
    assert invert_label(np.array([0, 1, 2, 2])).tolist() == [2, 1, 0, 0]


def test_ingest_reviews_reports_malformed_lines(tmp_path, caplog):
    path = tmp_path / "reviews.jsonl"
    lines = [
        {"review_id": "a", "brand": "Acme", "rating": 5, "ts": "2015-03-01", "text": "love it"},
        {"review_id": "b", "brand": "Acme", "rating": 9, "ts": 1.0, "text": "bad rating"},
        {"review_id": "c", "brand": "Beta", "ts": 2.0, "text": "no rating"},
        {"review_id": "d", "brand": "Beta", "rating": 2, "ts": 3.0, "text": "meh"},
    ]
    path.write_text("\n".join(json.dumps(x) for x in lines) + "\nnot json\n", encoding="utf-8")
    with caplog.at_level(logging.WARNING):
        records, errors = ingest_reviews(path)
    assert [r.review_id for r in records] == ["d", "a"]  # sorted by timestamp
    assert [e.line for e in errors] == [2, 3, 5]
    assert "malformed" in caplog.text


def test_ingest_reviews_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="missing.jsonl"):
        ingest_reviews(tmp_path / "missing.jsonl")


def test_ingest_reviews_custom_schema(tmp_path):
    path = tmp_path / "hotel.jsonl"
    path.write_text(json.dumps({"hotel": "H1", "stars": 4, "date": 10, "body": "clean room"}) + "\n",
                    encoding="utf-8")
    records, errors = ingest_reviews(path, {"brand": "hotel", "rating": "stars", "timestamp": "date",
                                            "text": "body"})
    assert not errors
    assert records[0].brand == "H1" and records[0].rating == 4 and records[0].review_id == "line-1"


def test_build_vocabulary_orders_by_document_frequency():
    texts = ["good skin good", "good skin", "bad smell", "good smell"]
    vocab = build_vocabulary(texts, min_df=2, max_df_frac=1.0, ngram_max=2)
    assert vocab.terms[0] == "good"
    assert "good skin" in vocab.terms
    assert vocab.terms == sorted(vocab.terms, key=lambda t: (-vocab.df[vocab.index[t]], t))


def test_build_vocabulary_empty_echoes_thresholds():
    with pytest.raises(CorpusError, match="min_df=20"):
        build_vocabulary(["one text only"], min_df=20)


def test_build_vocabulary_stoplist():
    vocab = build_vocabulary(["good skin", "good skin", "good day"], min_df=1, max_df_frac=1.0,
                             ngram_max=1, stoplist=["good"])
    assert "good" not in vocab.terms


def test_vocabulary_round_trip(tmp_path):
    vocab = Vocabulary(terms=["good", "skin", "good skin"], ngram_max=2)
    path = save_vocabulary(vocab, tmp_path / "vocabulary.txt")
    assert path.read_text(encoding="utf-8").splitlines()[0] == "V=3"
    assert load_vocabulary(path, ngram_max=2).terms == vocab.terms


def test_load_vocabulary_count_mismatch(tmp_path):
    path = tmp_path / "vocabulary.txt"
    path.write_text("V=3\ngood\nskin\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="V=3"):
        load_vocabulary(path)


def test_slice_by_time_half_open_intervals(caplog):
    records = [make_record(0, "A", 5, 0.0), make_record(1, "B", 1, 10.0), make_record(2, "A", 3, 19.9),
               make_record(3, "B", 4, 20.0), make_record(4, "A", 4, 30.0)]
    with caplog.at_level(logging.WARNING):
        slices = slice_by_time(records, [0.0, 10.0, 20.0, 30.0])
    assert [len(s) for s in slices] == [1, 2, 1]
    assert slices[1].records[0].review_id == "r0001"  # boundary goes to the later slice
    assert slices[0].brand_ids == {"A": 0, "B": 1}
    assert "dropped" in caplog.text


def test_slice_by_time_rejects_unsorted_boundaries():
    with pytest.raises(ValueError):
        slice_by_time([], [0.0, 0.0, 1.0])


def test_vectorize_counts_and_oov_warning(caplog):
    vocab = Vocabulary(terms=["good", "skin"], ngram_max=1)
    corpus = TimeSliceCorpus(0, 0.0, 1.0, brand_ids={"A": 0})
    corpus.documents = [(make_record(0, "A", 5, 0.1, "good good skin"), SentimentLabel.POSITIVE),
                        (make_record(1, "A", 1, 0.2, "terrible"), SentimentLabel.NEGATIVE)]
    with caplog.at_level(logging.WARNING):
        X = vectorize(corpus, vocab)
    assert X.toarray().tolist() == [[2, 1], [0, 0]]
    assert "out-of-vocabulary" in caplog.text


def test_vectorize_empty_slice():
    vocab = Vocabulary(terms=["good"], ngram_max=1)
    assert vectorize(TimeSliceCorpus(0, 0.0, 1.0), vocab).shape == (0, 1)


def test_split_train_validation_is_stratified_and_deterministic():
    records = [make_record(i, "A" if i < 20 else "B", 4, i) for i in range(30)]
    corpus = slice_by_time(records, [0.0, 100.0])[0]
    train, val = split_train_validation(corpus, 0.10, seed=7)
    train2, val2 = split_train_validation(corpus, 0.10, seed=7)
    assert [r.review_id for r in val.records] == [r.review_id for r in val2.records]
    assert sorted(r.brand for r in val.records) == ["A", "A", "B"]
    assert len(train) + len(val) == len(corpus)


def test_split_keeps_singleton_brand_in_train(caplog):
    records = [make_record(i, "A", 4, i) for i in range(5)] + [make_record(9, "Solo", 2, 9)]
    corpus = slice_by_time(records, [0.0, 100.0])[0]
    with caplog.at_level(logging.WARNING):
        train, val = split_train_validation(corpus, 0.2, seed=0)
    assert "Solo" in {r.brand for r in train.records}
    assert "Solo" not in {r.brand for r in val.records}
    assert "single document" in caplog.text


def test_vectorize_is_additive_over_concatenated_documents():
    vocab = Vocabulary(terms=["bad", "good", "skin", "soft"], ngram_max=1)
    texts = ["good skin soft skin", "bad skin", "soft soft good"]
    corpus = TimeSliceCorpus(0, 0.0, 1.0, brand_ids={"A": 0})
    corpus.documents = [(make_record(i, "A", 4, 0.1 * i, t), SentimentLabel.POSITIVE) for i, t in enumerate(texts)]
    corpus.documents.append((make_record(9, "A", 4, 0.9, " ".join(texts)), SentimentLabel.POSITIVE))
    X = vectorize(corpus, vocab).toarray()
    assert X[3].tolist() == X[:3].sum(axis=0).tolist()


def test_split_holds_out_every_brand_of_a_balanced_slice():
    records = [make_record(i, f"brand_{i % 25:02d}", 4, i) for i in range(25 * 8)]
    corpus = slice_by_time(records, [0.0, 1000.0])[0]
    train, val = split_train_validation(corpus, 0.10, seed=0)
    assert len(val) == 25 and len(train) == 175
    assert {r.brand for r in val.records} == {f"brand_{b:02d}" for b in range(25)}
    assert not {r.review_id for r in val.records} & {r.review_id for r in train.records}


def test_generate_stream_plants_crossing_trends():
    traj = brand_trajectories(8, 5)
    assert traj[0, 0] < traj[-1, 0] and traj[0, -1] > traj[-1, -1]
    records, truth, boundaries = generate_stream(StreamSpec(n_brands=4, n_slices=2, docs_per_slice=50,
                                                            V=40, K=2, seed=1))
    assert len(records) == 100 and len(boundaries) == 3
    assert set(truth.columns) == {"slice", "brand", "polarity", "mean_rating"}
    again, _, _ = generate_stream(StreamSpec(n_brands=4, n_slices=2, docs_per_slice=50, V=40, K=2, seed=1))
    assert [r.text for r in again] == [r.text for r in records]


def test_ingest_corpus_artifacts_are_reproducible(tmp_path, small_stream):
    records, _, boundaries = small_stream
    write_jsonl(records, tmp_path / "reviews.jsonl")
    config = RunConfig(input=str(tmp_path / "reviews.jsonl"), output_dir=str(tmp_path / "run"),
                       boundaries=boundaries, min_df=2, max_df_frac=1.0, ngram_max=1)
    corpus_dir = ingest_corpus(config)
    first = {p.relative_to(corpus_dir): p.read_bytes() for p in corpus_dir.rglob("*") if p.is_file()}
    ingest_corpus(config)
    second = {p.relative_to(corpus_dir): p.read_bytes() for p in corpus_dir.rglob("*") if p.is_file()}
    assert first == second
    assert (slice_dir(corpus_dir, 2) / "counts.csv").exists()

    ingested = load_ingested(config.output_dir, ngram_max=1)
    assert len(ingested) == 3
    train, val = ingested.splits[0]
    assert len(train) + len(val) == len(ingested.slices[0])
    X = vectorize(ingested.slices[1], ingested.vocab)
    header, *rows = (slice_dir(corpus_dir, 1) / "counts.csv").read_text().splitlines()
    assert header == "doc,term,count"
    assert len(rows) == X.nnz
