import dataclasses
import math

import numpy as np
import pytest
import torch

from conftest import tiny_data, tiny_state
from src.config import RunConfig
from src.corpus.slicing import slice_by_time, split_train_validation
from src.corpus.synthetic import StreamSpec, generate_stream
from src.corpus.vocabulary import build_vocabulary
from src.model import dynamics
from src.model.btm import BREAK, CONTINUE
from src.model.dynamics import (MetaState, TransitionConfig, ValidationTarget, chain_priors, checkpoint_evaluate,
                                load_timeline, meta_initialize_beta, self_supervised_gamma, timing_frame,
                                train_stream)
from src.model.numerics import spearman_rank_correlation


def test_meta_state_histories():
    meta = MetaState()
    assert meta.gamma(0) == 0.0
    assert math.isnan(meta.gamma(3)) and math.isnan(meta.rho(0))
    meta.set_gamma(2, 0.4)
    assert math.isnan(meta.gamma(1)) and meta.gamma(2) == 0.4
    with pytest.raises(ValueError):
        meta.set_gamma(0, 0.5)


def test_meta_initialize_beta():
    prev = np.array([[1.0, 2.0], [4.0, 8.0]])
    pf = np.array([[3.0, 2.0], [1.0, 2.0]])
    assert np.array_equal(meta_initialize_beta(prev, pf, 0.0), prev)
    assert np.array_equal(meta_initialize_beta(prev, pf, 1.0), pf)
    assert np.allclose(meta_initialize_beta(prev, pf, 0.5), [[2.0, 2.0], [2.5, 5.0]])
    assert np.allclose(meta_initialize_beta(prev, pf, 0.5, "log"), [[math.sqrt(3.0), 2.0], [2.0, 4.0]])
    with pytest.raises(ValueError):
        meta_initialize_beta(prev, pf, 1.5)
    with pytest.raises(ValueError):
        meta_initialize_beta(prev, pf[:, :1], 0.5)


def test_chain_priors_centres_on_previous_fit():
    data = tiny_data()
    state = tiny_state(data)
    prior = chain_priors(state, TransitionConfig(sigma_x=0.2, sigma_eta=0.3, sigma_beta=0.4))
    assert np.array_equal(prior.x_mean, state.model.x_loc.detach().numpy())
    assert np.array_equal(prior.eta_mean, state.model.eta_loc.detach().numpy())
    assert np.array_equal(prior.beta_loc, state.model.beta_loc.detach().numpy())
    assert (prior.x_scale, prior.eta_scale, prior.sigma_beta) == (0.2, 0.3, 0.4)
    with pytest.raises(ValueError):
        TransitionConfig(sigma_x=0.0)


def _ranked_state(x):
    B = len(x)
    state = tiny_state(tiny_data(D=B, V=6, B=B))
    with torch.no_grad():
        state.model.x_loc.copy_(torch.as_tensor(x, dtype=torch.float64))
    return state


def _target(B=25):
    return ValidationTarget(np.arange(B), np.arange(B, dtype=np.float64))


def test_checkpoint_evaluate_equal_correlation_gives_half():
    x = np.random.default_rng(0).permutation(25).astype(float)
    meta = MetaState()
    meta.set_rho(0, spearman_rank_correlation(x, np.arange(25)))
    assert checkpoint_evaluate(_ranked_state(x), _target(), meta, 1) == CONTINUE
    assert meta.gamma(2) == pytest.approx(0.5)


def test_checkpoint_evaluate_improvement_gives_low_gamma():
    meta = MetaState()
    meta.set_rho(0, 0.0)
    assert checkpoint_evaluate(_ranked_state(np.arange(25.0)), _target(), meta, 1) == CONTINUE
    assert meta.gamma(2) == 0.05
    assert meta.rho(1) == pytest.approx(1.0)

    meta = MetaState()
    meta.set_rho(0, 0.0)
    assert checkpoint_evaluate(_ranked_state(np.arange(25.0)), _target(), meta, 1, direction="improve") == BREAK


def test_checkpoint_evaluate_degradation_breaks():
    meta = MetaState()
    meta.set_rho(0, 0.9)
    assert checkpoint_evaluate(_ranked_state(-np.arange(25.0)), _target(), meta, 1) == BREAK
    assert meta.gamma(2) == pytest.approx(1.0)

    meta = MetaState()
    meta.set_rho(0, 0.9)
    meta.set_gamma(2, 0.3)
    assert checkpoint_evaluate(_ranked_state(-np.arange(25.0)), _target(), meta, 1) == BREAK
    assert meta.gamma(2) == 0.3


def test_checkpoint_evaluate_degenerate_and_missing_reference():
    meta = MetaState()
    meta.set_rho(0, 0.5)
    assert checkpoint_evaluate(_ranked_state(np.arange(3.0)), _target(3), meta, 1) == CONTINUE
    assert meta.gamma(2) == 0.5 and math.isnan(meta.rho(1))

    meta = MetaState()
    meta.set_rho(0, float("nan"))
    assert checkpoint_evaluate(_ranked_state(np.arange(25.0)), _target(), meta, 1) == CONTINUE
    assert meta.gamma(2) == 0.5 and meta.rho(1) == pytest.approx(1.0)


def test_checkpoint_evaluate_without_meta_never_breaks():
    meta = MetaState()
    meta.set_rho(0, 0.9)
    assert checkpoint_evaluate(_ranked_state(-np.arange(25.0)), _target(), meta, 1, no_meta=True) == CONTINUE
    assert meta.gamma(2) == 0.0 and meta.rho(1) == pytest.approx(-1.0)


def test_break_decision_is_monotone_in_current_correlation():
    rng = np.random.default_rng(1)
    outcomes = []
    for _ in range(60):
        x = np.arange(25.0)
        for _ in range(int(rng.integers(0, 40))):
            i, j = rng.integers(0, 25, size=2)
            x[[i, j]] = x[[j, i]]
        meta = MetaState()
        meta.set_rho(0, 0.5)
        decision = checkpoint_evaluate(_ranked_state(x), _target(), meta, 1)
        outcomes.append((meta.rho(1), decision))
    broke = [rho for rho, d in outcomes if d == BREAK]
    kept = [rho for rho, d in outcomes if d == CONTINUE]
    assert broke and kept
    assert max(broke) < min(kept)


def test_self_supervised_gamma():
    assert self_supervised_gamma([1, 2, 4, 3], [1, 2, 3, 4], 4) == pytest.approx(0.8)
    with pytest.raises(ValueError):
        self_supervised_gamma([1, 2, 3], [1, 2, 3, 4], 4)


def test_self_supervised_target_scores_against_previous_ranking():
    previous = np.arange(25.0)
    meta = MetaState()
    meta.set_rho(0, 0.9)
    target = ValidationTarget(np.arange(25), previous, self_supervised=True)
    assert checkpoint_evaluate(_ranked_state(previous[::-1].copy()), target, meta, 1) == BREAK
    assert meta.rho(1) == pytest.approx(self_supervised_gamma(previous, previous[::-1], 25))
    assert meta.rho(1) == pytest.approx(-1.0)


def _stream_inputs(stream, config):
    records, _, boundaries = stream
    slices = slice_by_time(records, boundaries)
    train0, _ = split_train_validation(slices[0], config.validation_fraction, seed=config.seed)
    vocab = build_vocabulary(train0.records, config.min_df, config.max_df_frac, config.ngram_max)
    return slices, vocab


def test_train_stream_fills_meta_histories(small_stream, small_config):
    slices, vocab = _stream_inputs(small_stream, small_config)
    timeline = train_stream(slices, vocab, small_config, progress=False)
    assert timeline.failure is None and len(timeline) == 3
    assert len(timeline.meta.rho_history) == 3
    assert timeline.meta.gamma_history[0] == 0.0
    assert all(0.05 <= g <= 1.0 for g in timeline.meta.gamma_history[1:])
    assert all(r.supervised for r in timeline.slices)
    assert list(timing_frame(timeline)["slice"]) == [0, 1, 2]
    assert list(timeline.slices[0].scores.index) == timeline.brand_names


def test_train_stream_is_deterministic(small_stream, small_config):
    slices, vocab = _stream_inputs(small_stream, small_config)
    first = train_stream(slices, vocab, small_config, progress=False)
    second = train_stream(slices, vocab, small_config, progress=False)
    for a, b in zip(first.slices, second.slices):
        assert torch.equal(a.state.model.x_loc, b.state.model.x_loc)
    assert first.meta.gamma_history == second.meta.gamma_history


def test_train_stream_without_meta(small_stream, small_config):
    config = dataclasses.replace(small_config, no_meta=True)
    slices, vocab = _stream_inputs(small_stream, config)
    timeline = train_stream(slices, vocab, config, progress=False)
    assert timeline.meta.gamma_history == [0.0] * len(timeline.meta.gamma_history)
    assert all(r.steps == config.max_steps for r in timeline.slices)


def test_train_stream_unsupervised_later_slices(small_stream, small_config, monkeypatch):
    calls = []

    def recording(pred_rank_t1, pred_rank_t2, n_brands):
        calls.append(n_brands)
        return self_supervised_gamma(pred_rank_t1, pred_rank_t2, n_brands)

    monkeypatch.setattr(dynamics, "self_supervised_gamma", recording)
    config = dataclasses.replace(small_config, mode="o_dbtm")
    slices, vocab = _stream_inputs(small_stream, config)
    timeline = train_stream(slices, vocab, config, progress=False)
    assert timeline.failure is None
    assert [r.supervised for r in timeline.slices] == [True, False, False]
    assert timeline.meta.mode == "o_dbtm"
    assert calls and all(n >= 4 for n in calls)


def test_train_stream_resumes_from_run_dir(small_stream, small_config, tmp_path):
    slices, vocab = _stream_inputs(small_stream, small_config)
    full = train_stream(slices, vocab, small_config, progress=False)

    run_dir = tmp_path / "train"
    train_stream(slices[:2], vocab, small_config, run_dir=run_dir, progress=False)
    assert len(load_timeline(run_dir)) == 2
    resumed = train_stream(slices, vocab, small_config, run_dir=run_dir, progress=False)
    assert len(resumed) == 3
    assert torch.equal(resumed.slices[2].state.model.x_loc, full.slices[2].state.model.x_loc)
    assert (run_dir / "slice_02.dbtm").exists()

    reloaded = load_timeline(run_dir, small_config.digest())
    assert np.array_equal(reloaded.slices[2].scores["raw"].to_numpy(), resumed.slices[2].scores["raw"].to_numpy())


def test_train_stream_records_failure(small_stream, small_config):
    slices, vocab = _stream_inputs(small_stream, small_config)
    slices[1].documents = []
    timeline = train_stream(slices, vocab, small_config, progress=False)
    assert len(timeline) == 1
    assert timeline.failure["slice_id"] == 1


def _recovery_run(seed, **overrides):
    spec = StreamSpec(seed=seed)
    records, _, boundaries = generate_stream(spec)
    config = RunConfig(boundaries=boundaries, min_df=5, max_df_frac=1.0, ngram_max=1, K=spec.K, batch=256,
                       max_steps=1000, checkpoint_interval=250, pf_max_iters=60, seed=seed, **overrides)
    slices, vocab = _stream_inputs((records, None, boundaries), config)
    return np.array(train_stream(slices, vocab, config, progress=False).meta.rho_history)


@pytest.mark.slow
def test_synthetic_stream_recovery_beats_no_meta():
    full = np.array([_recovery_run(seed) for seed in range(5)])
    ablated = np.array([_recovery_run(seed, no_meta=True) for seed in range(5)])
    assert np.all(np.median(full, axis=0) >= 0.8)
    assert np.sum(np.median(ablated, axis=0) < np.median(full, axis=0)) >= 3


@pytest.mark.slow
def test_synthetic_stream_recovery_with_first_slice_labels_only():
    runs = np.array([_recovery_run(seed, mode="o_dbtm") for seed in range(5)])
    assert np.all(np.median(runs, axis=0) >= 0.6)
