import math

import numpy as np
import pytest
import scipy.sparse as sp
import torch

from src.config import RunConfig
from src.corpus.reviews import ReviewRecord
from src.corpus.synthetic import StreamSpec, generate_stream
from src.model.btm import BTMSettings, PriorSpec, SliceData, build_state


def make_record(i, brand, rating, ts, text="good product"):
    return ReviewRecord(review_id=f"r{i:04d}", brand=brand, rating=rating, timestamp=float(ts), text=text)


@pytest.fixture
def small_stream():
    spec = StreamSpec(n_brands=6, n_slices=3, docs_per_slice=150, V=80, K=3, doc_length=20, seed=3)
    return generate_stream(spec)


@pytest.fixture
def small_config(tmp_path):
    return RunConfig(output_dir=str(tmp_path / "run"), boundaries=[0.0, 1000.0, 2000.0, 3000.0],
                     min_df=2, max_df_frac=1.0, ngram_max=1, K=3, pf_max_iters=15, batch=32,
                     max_steps=20, checkpoint_interval=10, seed=0)


def tiny_data(seed=0, D=5, V=8, B=2):
    rng = np.random.default_rng(seed)
    counts = rng.poisson(1.5, size=(D, V)).astype(np.float64)
    counts[:, 0] += 1.0  # no empty documents
    brands = np.arange(D) % B
    labels = rng.integers(0, 3, size=D)
    return SliceData(counts=sp.csr_matrix(counts), brands=brands, labels=labels, n_brands=B)


def tiny_state(data, K=2, seed=0, settings=None, prior=None):
    rng = np.random.default_rng(seed + 100)
    D, V, B = data.n_docs, data.n_terms, data.n_brands
    state = build_state(theta_mean=rng.uniform(0.5, 1.5, size=(D, K)),
                        beta_mean=rng.uniform(0.2, 1.0, size=(K, V)),
                        x_loc=rng.normal(0.0, 1.0, size=B),
                        eta_loc=rng.normal(0.0, 0.5, size=(K, V)),
                        prior=prior or PriorSpec(),
                        settings=settings or BTMSettings(init_logscale=math.log(0.3)),
                        seed=seed)
    with torch.no_grad():
        state.model.classifier.weight.copy_(torch.from_numpy(rng.normal(0.0, 1.0, size=(3, V))))
        state.model.classifier.bias.copy_(torch.from_numpy(rng.normal(0.0, 0.5, size=3)))
    return state
