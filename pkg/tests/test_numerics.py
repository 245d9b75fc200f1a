import logging
import math

import numpy as np
import pytest
import torch
from scipy import optimize, stats

from src.model.numerics import (class_distribution, finite_difference_check, fisher_z_cdf, gamma_weight,
                                gumbel_softmax_sample, normalize_scores, ordinal_w1,
                                spearman_rank_correlation, wasserstein_1d)


def test_spearman_matches_closed_form_on_permutations():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(3, 30))
        a, b = rng.permutation(n) + 1.0, rng.permutation(n) + 1.0
        closed = 1.0 - 6.0 * np.sum((a - b) ** 2) / (n * (n * n - 1))
        assert spearman_rank_correlation(a, b) == pytest.approx(closed, abs=1e-12)


def test_spearman_with_ties_matches_pearson_of_average_ranks():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(4, 25))
        a, b = rng.integers(0, 4, size=n).astype(float), rng.integers(0, 4, size=n).astype(float)
        if np.ptp(a) == 0 or np.ptp(b) == 0:
            continue
        expected = np.corrcoef(stats.rankdata(a), stats.rankdata(b))[0, 1]
        assert spearman_rank_correlation(a, b) == pytest.approx(expected, abs=1e-12)


def test_spearman_examples(caplog):
    assert spearman_rank_correlation([1, 2, 3, 4], [10, 20, 30, 40]) == 1.0
    assert spearman_rank_correlation([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
    assert spearman_rank_correlation([1, 2, 4, 3], [1, 2, 3, 4]) == pytest.approx(0.8)
    with caplog.at_level(logging.WARNING):
        assert math.isnan(spearman_rank_correlation([1, 1, 1], [1, 2, 3]))
    with pytest.raises(ValueError):
        spearman_rank_correlation([1, 2], [1, 2, 3])


def test_fisher_z_cdf_values():
    assert fisher_z_cdf(0.3, 0.3, 25) == pytest.approx(0.5)
    oracle = stats.norm.cdf(-math.atanh(0.9) * math.sqrt(22))
    assert fisher_z_cdf(0.9, 0.0, 25) == pytest.approx(oracle, rel=1e-9)
    assert fisher_z_cdf(0.9, 0.0, 25) < 1e-9
    assert fisher_z_cdf(0.0, 0.9, 25) > 1.0 - 1e-9


def test_fisher_z_cdf_guards(caplog):
    with pytest.raises(ValueError):
        fisher_z_cdf(0.1, 0.2, 3)
    with caplog.at_level(logging.WARNING):
        assert math.isfinite(fisher_z_cdf(1.0, 0.5, 10))
    assert "clamped" in caplog.text


def test_fisher_z_cdf_raw_point():
    expected = stats.norm.cdf(0.5, loc=math.atanh(0.2), scale=math.sqrt(1 / 7))
    assert fisher_z_cdf(0.2, 0.5, 10, point="raw") == pytest.approx(expected)


def test_gamma_weight():
    assert gamma_weight(0.5) == 0.5
    assert gamma_weight(9e-11) == 0.05
    assert gamma_weight(1.0) == 1.0
    with pytest.raises(ValueError):
        gamma_weight(1.2)


def test_class_distribution(caplog):
    with caplog.at_level(logging.WARNING):
        p = class_distribution([0.2, 0.3, 0.505])
    assert p.sum() == pytest.approx(1.0)
    assert "renormalized" in caplog.text
    for bad in ([0.5, 0.5], [-0.1, 0.6, 0.5], [0.5, 0.2, 0.1]):
        with pytest.raises(ValueError):
            class_distribution(bad)


def test_wasserstein_examples():
    assert wasserstein_1d([1, 0, 0], [0, 0, 1]) == pytest.approx(2.0)
    assert wasserstein_1d([0.5, 0, 0.5], [0, 1, 0]) == pytest.approx(1.0)
    assert wasserstein_1d([0.2, 0.3, 0.5], [0.2, 0.3, 0.5]) == 0.0


def test_wasserstein_is_a_metric():
    rng = np.random.default_rng(2)
    p, q, r = (rng.dirichlet(np.ones(3), size=10000) for _ in range(3))
    pq, qp, pr, rq = ordinal_w1(p, q), ordinal_w1(q, p), ordinal_w1(p, r), ordinal_w1(r, q)
    assert np.all(np.abs(pq - qp) <= 1e-12)
    assert np.all(ordinal_w1(p, p) == 0.0)
    assert np.all(pq <= pr + rq + 1e-12)


def _transport_lp(p, q):
    cost = np.abs(np.subtract.outer(np.arange(3), np.arange(3))).ravel()
    A_eq, b_eq = [], []
    for i in range(3):
        row = np.zeros((3, 3)); row[i, :] = 1; A_eq.append(row.ravel()); b_eq.append(p[i])
        col = np.zeros((3, 3)); col[:, i] = 1; A_eq.append(col.ravel()); b_eq.append(q[i])
    res = optimize.linprog(cost, A_eq=np.array(A_eq), b_eq=np.array(b_eq), bounds=(0, None), method="highs")
    return res.fun


def test_wasserstein_matches_transport_lp():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        p, q = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))
        assert wasserstein_1d(p, q) == pytest.approx(_transport_lp(p, q), abs=1e-9)


def test_gumbel_softmax_sample():
    g = torch.Generator().manual_seed(0)
    sample = gumbel_softmax_sample(torch.zeros(5, 4, dtype=torch.float64), 0.5, g)
    assert torch.allclose(sample.sum(-1), torch.ones(5, dtype=torch.float64))
    dominant = gumbel_softmax_sample(torch.tensor([50.0, 0.0, 0.0], dtype=torch.float64), 0.5, g)
    assert dominant[0] > 0.999
    with pytest.raises(ValueError):
        gumbel_softmax_sample(torch.zeros(3), 0.0, g)


def test_gumbel_softmax_same_seed_same_draw():
    logits = torch.randn(4, 6, dtype=torch.float64)
    a = gumbel_softmax_sample(logits, 0.5, torch.Generator().manual_seed(5))
    b = gumbel_softmax_sample(logits, 0.5, torch.Generator().manual_seed(5))
    assert torch.equal(a, b)


def test_finite_difference_check():
    loss = lambda x: (x ** 2).sum()
    assert finite_difference_check(loss, [1.0, -2.0, 3.0]) < 1e-6
    wrong = lambda x: 3.0 * x
    assert finite_difference_check(loss, [1.0, -2.0, 3.0], grad=wrong) > 0.1
    assert finite_difference_check(lambda x: x.sum() * 0.0, [0.0, 0.0]) == 0.0
    with pytest.raises(ValueError):
        finite_difference_check(loss, [1.0], epsilon=0.0)


def test_normalize_scores():
    assert normalize_scores([2.0, -1.0, 0.5]).tolist() == [1.0, -0.5, 0.25]
    assert normalize_scores([0.0, 0.0]).tolist() == [0.0, 0.0]
    raw = np.array([0.3, -2.0, 1.1])
    assert np.array_equal(np.argsort(raw), np.argsort(normalize_scores(raw)))


def test_fisher_z_cdf_is_monotone():
    grid = np.linspace(-0.95, 0.95, 39)
    for ref in (-0.5, 0.0, 0.4, 0.9):
        probs = [fisher_z_cdf(rho, ref, 25) for rho in grid]
        assert np.all(np.diff(probs) <= 0) and probs[0] > probs[-1]
    for rho in (-0.3, 0.2, 0.8):
        probs = [fisher_z_cdf(rho, ref, 25) for ref in grid]
        assert np.all(np.diff(probs) >= 0) and probs[0] < probs[-1]


def test_torch_ordinal_w1_agrees_with_wasserstein_1d():
    rng = np.random.default_rng(4)
    p, q = rng.dirichlet(np.ones(3), size=200), rng.dirichlet(np.ones(3), size=200)
    batched = ordinal_w1(torch.from_numpy(p), torch.from_numpy(q)).numpy()
    expected = [wasserstein_1d(a, b) for a, b in zip(p, q)]
    assert np.allclose(batched, expected, atol=1e-12)


def test_gumbel_softmax_argmax_frequencies_follow_softmax():
    probs = np.array([0.5, 0.3, 0.15, 0.05])
    logits = torch.log(torch.from_numpy(probs)).expand(20000, -1)
    draws = gumbel_softmax_sample(logits, 0.1, torch.Generator().manual_seed(0))
    observed = np.bincount(draws.argmax(-1).numpy(), minlength=4)
    assert stats.chisquare(observed, probs * observed.sum()).pvalue > 1e-3
