"""
Dynamic Brand-Topic Model

Trains one Brand-Topic Model per time slice. Slice 0 starts from Poisson
factorization and zero-mean priors; every later slice chains Gaussian priors
on x and eta and a lognormal prior on beta to the previous fit, and
initialises beta as a meta-weighted blend of the previous topics and a fresh
(warm-started) Poisson factorization of the new slice. The blend weight comes
from a Fisher z-test comparing the validation ranking quality of consecutive
slices.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.analyst.evaluation import ground_truth_rating
from src.config import RunConfig
from src.corpus.slicing import TimeSliceCorpus, split_train_validation, vectorize
from src.corpus.vocabulary import Vocabulary
from src.errors import CheckpointError, DBTMError
from src.model.btm import (BREAK, CONTINUE, BTMSettings, BTMState, OptimizeConfig, PriorSpec, SliceData,
                           build_state, infer_brand_scores, optimize_slice, orient_polarity,
                           restore_state, state_tensors, topic_means)
from src.model.checkpoint import Checkpoint, load_checkpoint, read_manifest, save_checkpoint, write_manifest
from src.model.numerics import fisher_z_cdf, gamma_weight, spearman_rank_correlation
from src.model.poisson_factorization import PFPriors, PFState, cavi_fit

LOG = logging.getLogger(__name__)

BREAK_THRESHOLD = 0.95
DEGENERATE_GAMMA = 0.5
MIN_RANKED_BRANDS = 4


@dataclass
class TransitionConfig:
    sigma_x: float = 0.1
    sigma_eta: float = 0.1
    sigma_beta: float = 0.1
    init_eta_scale: float = 1.0
    checkpoint_interval: int = 1000

    def __post_init__(self):
        for name in ("sigma_x", "sigma_eta", "sigma_beta", "init_eta_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")

    @classmethod
    def from_config(cls, config: RunConfig) -> "TransitionConfig":
        return cls(sigma_x=config.sigma_x, sigma_eta=config.sigma_eta, sigma_beta=config.sigma_beta,
                   init_eta_scale=config.init_eta_scale, checkpoint_interval=config.checkpoint_interval)


@dataclass
class MetaState:
    """Per-slice validation correlations and meta weights; gamma_history[0] is always 0."""
    rho_history: List[float] = field(default_factory=list)
    gamma_history: List[float] = field(default_factory=lambda: [0.0])
    mode: str = "dbtm"

    @staticmethod
    def _put(values: List[float], t: int, value: float) -> None:
        while len(values) <= t:
            values.append(float("nan"))
        values[t] = float(value)

    def set_rho(self, t: int, rho: float) -> None:
        self._put(self.rho_history, t, rho)

    def set_gamma(self, t: int, gamma: float) -> None:
        if t == 0:
            raise ValueError("gamma of slice 0 is fixed at 0")
        self._put(self.gamma_history, t, gamma)

    def rho(self, t: int) -> float:
        return self.rho_history[t] if 0 <= t < len(self.rho_history) else float("nan")

    def gamma(self, t: int) -> float:
        return self.gamma_history[t] if 0 <= t < len(self.gamma_history) else float("nan")


@dataclass
class SliceResult:
    slice_id: int
    state: BTMState
    pf: PFState
    scores: pd.DataFrame
    rho: float
    wall_clock: float
    steps: int
    supervised: bool


@dataclass
class TrainedTimeline:
    slices: List[SliceResult]
    meta: MetaState
    brand_names: List[str]
    config_digest: str = ""
    failure: Optional[Dict[str, Any]] = None

    def __len__(self) -> int:
        return len(self.slices)


@dataclass
class ValidationTarget:
    """
    Brand ids and the scores the predicted ranking is compared with

    A self-supervised target holds the previous slice's predicted scores
    instead of observed ratings.
    """
    brands: np.ndarray
    scores: np.ndarray
    self_supervised: bool = False

    @property
    def degenerate(self) -> bool:
        return len(self.brands) < MIN_RANKED_BRANDS


def _slice_seed(seed: int, t: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(t)]).generate_state(1)[0])


def _settings(config: RunConfig) -> BTMSettings:
    return BTMSettings(lr=config.lr, tau=config.tau, init_logscale=config.init_logscale,
                       max_relaxed_draws=config.max_relaxed_draws, label_smoothing=config.label_smoothing,
                       wd_weight=config.wd_weight)


def _optimize_config(config: RunConfig) -> OptimizeConfig:
    return OptimizeConfig(batch=config.batch, max_steps=config.max_steps,
                          checkpoint_interval=config.checkpoint_interval)


def slice_data(corpus: TimeSliceCorpus, vocab: Vocabulary, supervised: bool = True) -> SliceData:
    """Counts, brand ids and labels of a slice; unsupervised slices carry label -1."""
    labels = corpus.labels() if len(corpus) else np.zeros(0, dtype=np.int64)
    if not supervised:
        labels = np.full_like(labels, -1)
    return SliceData(counts=vectorize(corpus, vocab),
                     brands=corpus.brand_index() if len(corpus) else np.zeros(0, dtype=np.int64),
                     labels=labels, n_brands=len(corpus.brand_ids))


def validation_truth(validation: TimeSliceCorpus) -> ValidationTarget:
    """Ground-truth mean ratings of the brands present in the validation documents."""
    if len(validation) == 0:
        return ValidationTarget(np.zeros(0, dtype=np.int64), np.zeros(0))
    truth = ground_truth_rating(validation)
    brands = np.array([validation.brand_ids[name] for name in truth.index], dtype=np.int64)
    return ValidationTarget(brands, truth.to_numpy(dtype=np.float64))


def _ranking_rho(state: BTMState, target: ValidationTarget) -> float:
    predicted = state.model.x_loc.detach().numpy()[target.brands]
    if target.self_supervised:
        rho = self_supervised_gamma(target.scores, predicted, len(target.brands))
    else:
        rho = spearman_rank_correlation(predicted, target.scores)
    if math.isnan(rho):
        LOG.warning("Constant score vector at validation; rho treated as 0")
        return 0.0
    return rho


def initialize_time_zero(train: TimeSliceCorpus,
                         validation: TimeSliceCorpus,
                         vocab: Vocabulary,
                         config: RunConfig,
                         progress: bool = True) -> Tuple[SliceResult, MetaState]:
    """
    Fit slice 0

    Args:
        train: Slice-0 training documents (labelled in both modes)
        validation: Slice-0 validation documents
        vocab: Shared vocabulary
        config: Run configuration
        progress: Show the training progress bar

    Returns:
        Tuple of (slice result, MetaState with gamma_history [0, gamma^1])
    """
    if len(train) == 0:
        raise ValueError("Slice 0 has no training documents")
    start = time.perf_counter()
    transition = TransitionConfig.from_config(config)
    data = slice_data(train, vocab, supervised=True)
    priors = PFPriors(config.a, config.b, config.c, config.d)
    pf = cavi_fit(data.counts, config.K, priors, config.pf_max_iters, config.pf_rel_tol, seed=config.seed)

    rng = np.random.default_rng([config.seed, 0])
    x0 = rng.normal(0.0, 1.0, size=data.n_brands)
    eta0 = rng.normal(0.0, transition.init_eta_scale, size=pf.beta_mean.shape)
    prior = PriorSpec(a=config.a, b=config.b, c=config.c, d=config.d, sigma_beta=transition.sigma_beta,
                      eta_mean=0.0, eta_scale=transition.init_eta_scale, x_mean=0.0, x_scale=1.0)
    state = build_state(pf.theta_mean, pf.beta_mean, x0, eta0, prior, _settings(config),
                        seed=_slice_seed(config.seed, 0))
    optimize_slice(state, data, _optimize_config(config), callback=None, supervised=True, progress=progress)
    if orient_polarity(state, data):
        LOG.info("Slice 0: brand score orientation flipped to follow the labels")

    meta = MetaState(mode=config.mode)
    target = validation_truth(validation)
    if target.degenerate:
        LOG.warning("Slice 0: %d validation brand(s); meta weight set to %.1f", len(target.brands), DEGENERATE_GAMMA)
        rho = float("nan")
        gamma = DEGENERATE_GAMMA
    else:
        rho = _ranking_rho(state, target)
        gamma = gamma_weight(fisher_z_cdf(rho, 0.0, len(target.brands), config.fisher_point))
    meta.set_rho(0, rho)
    meta.set_gamma(1, 0.0 if config.no_meta else gamma)

    names = _brand_names(train)
    result = SliceResult(slice_id=0, state=state, pf=pf, scores=infer_brand_scores(state, names), rho=rho,
                         wall_clock=time.perf_counter() - start, steps=state.step, supervised=True)
    return result, meta


def chain_priors(prev: BTMState, transition: TransitionConfig, config: Optional[RunConfig] = None) -> PriorSpec:
    """Priors of slice t centred on the variational locations of slice t-1."""
    model = prev.model
    base = prev.prior
    a, b = (config.a, config.b) if config is not None else (base.a, base.b)
    return PriorSpec(a=a, b=b, c=base.c, d=base.d,
                     beta_loc=model.beta_loc.detach().numpy().copy(), sigma_beta=transition.sigma_beta,
                     eta_mean=model.eta_loc.detach().numpy().copy(), eta_scale=transition.sigma_eta,
                     x_mean=model.x_loc.detach().numpy().copy(), x_scale=transition.sigma_x)


def meta_initialize_beta(beta_prev: np.ndarray, beta_pf: np.ndarray, gamma_t: float,
                         interpolation: str = "linear") -> np.ndarray:
    """
    (1 - gamma) * beta_prev + gamma * beta_pf, elementwise

    Args:
        beta_prev: K x V previous-slice topic means
        beta_pf: K x V topic means from this slice's Poisson factorization
        gamma_t: Meta weight in [0, 1] (0 only under the no-meta ablation)
        interpolation: "linear" blends means; "log" blends log means

    Returns:
        K x V initial topic means
    """
    beta_prev = np.asarray(beta_prev, dtype=np.float64)
    beta_pf = np.asarray(beta_pf, dtype=np.float64)
    if beta_prev.shape != beta_pf.shape:
        raise ValueError(f"beta shapes differ: {beta_prev.shape} vs {beta_pf.shape}")
    if not 0.0 <= gamma_t <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma_t}")
    if interpolation == "linear":
        return (1.0 - gamma_t) * beta_prev + gamma_t * beta_pf
    if interpolation == "log":
        return np.exp((1.0 - gamma_t) * np.log(beta_prev) + gamma_t * np.log(beta_pf))
    raise ValueError(f"interpolation must be 'linear' or 'log', got '{interpolation}'")


def checkpoint_evaluate(state: BTMState,
                        target: ValidationTarget,
                        meta: MetaState,
                        t: int,
                        point: str = "z",
                        direction: str = "degrade",
                        no_meta: bool = False) -> str:
    """
    Validation check of slice t during training

    Records rho^t, then compares it with rho^(t-1) through the Fisher z-test.
    With direction "degrade" training stops once Pr(z <= z(rho^(t-1))) > 0.95
    under z ~ N(z(rho^t), 1/(B-3)); "improve" stops on the mirrored test.
    Otherwise gamma^(t+1) is set from the same probability.

    Returns:
        CONTINUE or BREAK
    """
    prev_rho = meta.rho(t - 1)
    if target.degenerate or math.isnan(prev_rho):
        if not target.degenerate:
            meta.set_rho(t, _ranking_rho(state, target))
        meta.set_gamma(t + 1, 0.0 if no_meta else DEGENERATE_GAMMA)
        return CONTINUE

    rho = _ranking_rho(state, target)
    meta.set_rho(t, rho)
    if no_meta:
        meta.set_gamma(t + 1, 0.0)
        return CONTINUE

    prob = fisher_z_cdf(rho, prev_rho, len(target.brands), point)
    stop = prob > BREAK_THRESHOLD if direction == "degrade" else (1.0 - prob) > BREAK_THRESHOLD
    if stop:
        if math.isnan(meta.gamma(t + 1)):
            meta.set_gamma(t + 1, gamma_weight(prob))
        return BREAK
    meta.set_gamma(t + 1, gamma_weight(prob))
    return CONTINUE


def self_supervised_gamma(pred_rank_t1: Sequence[float], pred_rank_t2: Sequence[float], n_brands: int) -> float:
    """Spearman correlation of two consecutive predicted rankings over the same brands."""
    if len(pred_rank_t1) != n_brands or len(pred_rank_t2) != n_brands:
        raise ValueError(f"Both rankings must cover the same {n_brands} brands")
    return spearman_rank_correlation(pred_rank_t1, pred_rank_t2)


def _brand_names(corpus: TimeSliceCorpus) -> List[str]:
    return [name for name, _ in sorted(corpus.brand_ids.items(), key=lambda item: item[1])]


def train_slice(t: int,
                prev: SliceResult,
                train: TimeSliceCorpus,
                validation: TimeSliceCorpus,
                vocab: Vocabulary,
                meta: MetaState,
                config: RunConfig,
                progress: bool = True) -> SliceResult:
    """
    Fit slice t >= 1 from the previous slice's fit

    Args:
        t: Slice index
        prev: Result of slice t-1
        train: Training documents of slice t
        validation: Validation documents of slice t
        vocab: Shared vocabulary
        meta: Meta state; rho^t and gamma^(t+1) are written into it
        config: Run configuration
        progress: Show the training progress bar

    Returns:
        SliceResult of slice t
    """
    start = time.perf_counter()
    transition = TransitionConfig.from_config(config)
    supervised = config.mode == "dbtm"
    data = slice_data(train, vocab, supervised=supervised)
    if data.n_docs == 0:
        raise ValueError(f"Slice {t} has no training documents")

    beta_prev, _ = topic_means(prev.state)
    priors = PFPriors(config.a, config.b, config.c, config.d)
    pf = cavi_fit(data.counts, config.K, priors, config.pf_max_iters, config.pf_rel_tol,
                  seed=_slice_seed(config.seed, t), init_beta=beta_prev)

    gamma_t = 0.0 if config.no_meta else meta.gamma(t)
    if math.isnan(gamma_t):
        gamma_t = DEGENERATE_GAMMA
    beta_init = meta_initialize_beta(beta_prev, pf.beta_mean, gamma_t, config.beta_interpolation)

    rng = np.random.default_rng([config.seed, t])
    model = prev.state.model
    x_init = model.x_loc.detach().numpy() + rng.normal(0.0, transition.sigma_x, size=data.n_brands)
    eta_init = model.eta_loc.detach().numpy() + rng.normal(0.0, transition.sigma_eta, size=beta_init.shape)
    classifier = {"weight": model.classifier.weight.detach().clone(),
                  "bias": model.classifier.bias.detach().clone()}
    state = build_state(pf.theta_mean, beta_init, x_init, eta_init, chain_priors(prev.state, transition, config),
                        _settings(config), seed=_slice_seed(config.seed, t) + 1, classifier=classifier)

    if supervised:
        target = validation_truth(validation)
    else:
        # ranking consistency with the previous slice over this slice's validation brands
        brands = validation_truth(validation).brands
        target = ValidationTarget(brands, model.x_loc.detach().numpy()[brands], self_supervised=True)

    evaluated = {"step": -1}

    def callback(current: BTMState) -> str:
        evaluated["step"] = current.step
        decision = checkpoint_evaluate(current, target, meta, t, config.fisher_point,
                                       config.break_direction, config.no_meta)
        tqdm.write(f"  slice {t} step {current.step}: rho={meta.rho(t):.3f} "
                   f"gamma_next={meta.gamma(t + 1):.3f} ({decision})")
        return decision

    optimize_slice(state, data, _optimize_config(config), callback=callback, supervised=supervised,
                   progress=progress)
    if evaluated["step"] != state.step:
        checkpoint_evaluate(state, target, meta, t, config.fisher_point, config.break_direction, config.no_meta)

    names = _brand_names(train)
    return SliceResult(slice_id=t, state=state, pf=pf, scores=infer_brand_scores(state, names), rho=meta.rho(t),
                       wall_clock=time.perf_counter() - start, steps=state.step, supervised=supervised)


def _snapshot_path(run_dir: Path, t: int) -> Path:
    return run_dir / f"slice_{t:02d}.dbtm"


def save_slice(result: SliceResult, run_dir: Union[str, Path], n_slices: int, config_digest: str) -> Path:
    """Persist one slice (BTM state plus its Poisson factorization) to the checkpoint container."""
    tensors = state_tensors(result.state)
    tensors.update({"pf.theta_shape": result.pf.theta_shape, "pf.theta_rate": result.pf.theta_rate,
                    "pf.beta_shape": result.pf.beta_shape, "pf.beta_rate": result.pf.beta_rate,
                    "pf.elbo_trace": np.asarray(result.pf.elbo_trace, dtype=np.float64)})
    dims = dict(result.state.model.dims, T=n_slices)
    meta = {"slice_id": result.slice_id, "rho": None if math.isnan(result.rho) else result.rho,
            "wall_clock": result.wall_clock, "steps": result.steps, "supervised": result.supervised,
            "brands": list(result.scores.index)}
    return save_checkpoint(Checkpoint(tensors=tensors, dims=dims, config_digest=config_digest, meta=meta),
                           _snapshot_path(Path(run_dir), result.slice_id))


def load_slice(path: Union[str, Path], config_digest: Optional[str] = None) -> SliceResult:
    """Inverse of save_slice."""
    ckpt = load_checkpoint(path, config_digest)
    tensors = ckpt.tensors
    state = restore_state(tensors)
    pf = PFState(tensors["pf.theta_shape"], tensors["pf.theta_rate"], tensors["pf.beta_shape"],
                 tensors["pf.beta_rate"], tensors["pf.elbo_trace"].tolist())
    meta = ckpt.meta
    rho = float("nan") if meta.get("rho") is None else float(meta["rho"])
    return SliceResult(slice_id=int(meta["slice_id"]), state=state, pf=pf,
                       scores=infer_brand_scores(state, meta.get("brands")), rho=rho,
                       wall_clock=float(meta["wall_clock"]), steps=int(meta["steps"]),
                       supervised=bool(meta["supervised"]))


def _nan_to_none(values: Sequence[float]) -> List[Optional[float]]:
    return [None if math.isnan(v) else float(v) for v in values]


def _none_to_nan(values: Sequence[Optional[float]]) -> List[float]:
    return [float("nan") if v is None else float(v) for v in values]


def write_timeline_manifest(timeline: TrainedTimeline, run_dir: Union[str, Path], n_slices: int) -> Path:
    manifest = {
        "config_digest": timeline.config_digest,
        "mode": timeline.meta.mode,
        "n_slices": n_slices,
        "brands": timeline.brand_names,
        "slices": [{"slice_id": r.slice_id, "file": _snapshot_path(Path("."), r.slice_id).name,
                    "steps": r.steps, "wall_clock": r.wall_clock} for r in timeline.slices],
        "rho_history": _nan_to_none(timeline.meta.rho_history),
        "gamma_history": _nan_to_none(timeline.meta.gamma_history),
        "failure": timeline.failure,
    }
    return write_manifest(run_dir, manifest)


def load_timeline(run_dir: Union[str, Path], config_digest: Optional[str] = None) -> TrainedTimeline:
    """Reload every completed slice listed in a run directory's manifest."""
    run_dir = Path(run_dir)
    manifest = read_manifest(run_dir)
    if manifest is None:
        raise FileNotFoundError(f"No manifest in {run_dir}")
    slices = [load_slice(run_dir / entry["file"], config_digest) for entry in manifest["slices"]]
    meta = MetaState(rho_history=_none_to_nan(manifest["rho_history"]),
                     gamma_history=_none_to_nan(manifest["gamma_history"]), mode=manifest["mode"])
    return TrainedTimeline(slices=slices, meta=meta, brand_names=manifest["brands"],
                           config_digest=manifest["config_digest"], failure=manifest.get("failure"))


def train_stream(corpora: Sequence[TimeSliceCorpus],
                 vocab: Vocabulary,
                 config: RunConfig,
                 splits: Optional[Sequence[Tuple[TimeSliceCorpus, TimeSliceCorpus]]] = None,
                 run_dir: Optional[Union[str, Path]] = None,
                 fresh: bool = False,
                 progress: bool = True) -> TrainedTimeline:
    """
    Train the whole stream slice by slice

    Args:
        corpora: Time slices in order
        vocab: Shared vocabulary
        config: Run configuration
        splits: Precomputed (train, validation) pairs; split here when omitted
        run_dir: When given, every finished slice is persisted there and an
            existing manifest is resumed from
        fresh: Ignore an existing manifest
        progress: Show progress bars

    Returns:
        TrainedTimeline; on a slice failure it holds the slices before it plus a failure record
    """
    if not corpora:
        raise ValueError("At least one time slice is required")
    if splits is None:
        splits = [split_train_validation(c, config.validation_fraction, seed=config.seed + t)
                  for t, c in enumerate(corpora)]
    n_slices = len(corpora)
    digest = config.digest()
    timeline = TrainedTimeline(slices=[], meta=MetaState(mode=config.mode),
                               brand_names=_brand_names(corpora[0]), config_digest=digest)

    if run_dir is not None:
        run_dir = Path(run_dir)
        if not fresh and read_manifest(run_dir) is not None:
            try:
                timeline = load_timeline(run_dir, digest)
                timeline.failure = None
                print(f"○ Resuming after {len(timeline)} completed slice(s) in {run_dir}")
            except (CheckpointError, FileNotFoundError, KeyError) as e:
                LOG.warning("Could not resume from %s (%s); training from scratch", run_dir, e)
                timeline = TrainedTimeline(slices=[], meta=MetaState(mode=config.mode),
                                           brand_names=_brand_names(corpora[0]), config_digest=digest)

    for t in range(len(timeline), n_slices):
        train, validation = splits[t]
        print(f"\n{'=' * 60}")
        print(f"Slice {t}: {len(train)} train / {len(validation)} validation documents")
        print(f"{'=' * 60}")
        try:
            if t == 0:
                result, timeline.meta = initialize_time_zero(train, validation, vocab, config, progress)
                timeline.meta.mode = config.mode
            else:
                result = train_slice(t, timeline.slices[-1], train, validation, vocab, timeline.meta,
                                     config, progress)
        except (DBTMError, ValueError, RuntimeError) as e:
            LOG.error("Slice %d failed: %s", t, e)
            print(f"✗ Slice {t} failed: {e}")
            timeline.failure = {"slice_id": t, "error": type(e).__name__, "message": str(e)}
            break

        timeline.slices.append(result)
        rho_text = "n/a" if math.isnan(result.rho) else f"{result.rho:.3f}"
        print(f"✓ Slice {t}: {result.steps} steps, rho={rho_text}, "
              f"gamma_next={timeline.meta.gamma(t + 1):.3f}, {result.wall_clock:.1f}s")
        if run_dir is not None:
            save_slice(result, run_dir, n_slices, digest)
            write_timeline_manifest(timeline, run_dir, n_slices)

    if run_dir is not None and timeline.failure is not None:
        write_timeline_manifest(timeline, run_dir, n_slices)
    return timeline


def timing_frame(timeline: TrainedTimeline) -> pd.DataFrame:
    """Wall-clock seconds and step counts per trained slice."""
    return pd.DataFrame({"slice": [r.slice_id for r in timeline.slices],
                         "steps": [r.steps for r in timeline.slices],
                         "seconds": [r.wall_clock for r in timeline.slices]})
