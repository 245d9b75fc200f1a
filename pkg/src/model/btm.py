"""
Brand-Topic Model Inference (one time slice)

Reparameterized mean-field variational inference over
    theta (D x K, lognormal), beta (K x V, lognormal),
    eta (K x V, Gaussian), x (B, Gaussian)
with Poisson rates lambda_dv = sum_k theta_dk * beta_kv * exp(x_b * eta_kv),
a linear sentiment classifier fed with Gumbel-softmax document features, an
adversarial branch with inverted brand scores, and the combined
-ELBO + Wasserstein training loss.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
import torch
from torch import nn
from torch.distributions import Gamma, LogNormal, Normal
from tqdm import tqdm

from src.corpus.reviews import invert_label
from src.errors import TrainingError
from src.model.numerics import gumbel_softmax_sample, normalize_scores, ordinal_w1

LOG = logging.getLogger(__name__)

DTYPE = torch.float64
EXPONENT_CLAMP = 30.0
MAX_CONSECUTIVE_SKIPS = 5

CONTINUE = "continue"
BREAK = "break"

LATENTS = ("theta", "beta", "eta", "x")


@dataclass
class SliceData:
    """Counts, brand ids and labels of the documents one model is fitted to."""
    counts: sp.csr_matrix
    brands: np.ndarray
    labels: np.ndarray
    n_brands: int

    def __post_init__(self):
        self.counts = sp.csr_matrix(self.counts, dtype=np.float64)
        self.brands = np.asarray(self.brands, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (self.counts.shape[0] == len(self.brands) == len(self.labels)):
            raise ValueError("counts, brands and labels must describe the same documents")
        self.lengths = np.asarray(self.counts.sum(axis=1)).ravel()

    @property
    def n_docs(self) -> int:
        return self.counts.shape[0]

    @property
    def n_terms(self) -> int:
        return self.counts.shape[1]


@dataclass
class Batch:
    idx: torch.Tensor
    counts: torch.Tensor   # n x V dense
    brands: torch.Tensor
    labels: torch.Tensor   # -1 when unlabeled
    lengths: torch.Tensor


def make_batch(data: SliceData, idx: Union[torch.Tensor, Sequence[int]]) -> Batch:
    idx = torch.as_tensor(idx, dtype=torch.long)
    rows = idx.numpy()
    return Batch(idx=idx,
                 counts=torch.from_numpy(data.counts[rows].toarray()),
                 brands=torch.from_numpy(data.brands[rows]),
                 labels=torch.from_numpy(data.labels[rows]),
                 lengths=torch.from_numpy(data.lengths[rows]))


@dataclass
class PriorSpec:
    """
    Priors of one slice. At slice 0 beta is Gamma(c, d) and x, eta are
    zero-mean; later slices chain lognormal/Gaussian priors on the previous fit.
    """
    a: float = 0.3
    b: float = 0.3
    c: float = 0.3
    d: float = 0.3
    beta_loc: Optional[np.ndarray] = None
    sigma_beta: float = 0.1
    eta_mean: Union[float, np.ndarray] = 0.0
    eta_scale: float = 1.0
    x_mean: Union[float, np.ndarray] = 0.0
    x_scale: float = 1.0

    def __post_init__(self):
        for name in ("a", "b", "c", "d", "sigma_beta", "eta_scale", "x_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"prior scale {name} must be > 0, got {getattr(self, name)}")

    def beta_prior(self):
        if self.beta_loc is None:
            return Gamma(torch.tensor(self.c, dtype=DTYPE), torch.tensor(self.d, dtype=DTYPE))
        return LogNormal(torch.as_tensor(self.beta_loc, dtype=DTYPE), torch.tensor(self.sigma_beta, dtype=DTYPE))

    def eta_prior(self):
        return Normal(torch.as_tensor(self.eta_mean, dtype=DTYPE), torch.tensor(self.eta_scale, dtype=DTYPE))

    def x_prior(self):
        return Normal(torch.as_tensor(self.x_mean, dtype=DTYPE), torch.tensor(self.x_scale, dtype=DTYPE))

    def theta_prior(self):
        return Gamma(torch.tensor(self.a, dtype=DTYPE), torch.tensor(self.b, dtype=DTYPE))


class BrandTopicModel(nn.Module):
    """Variational parameters plus the 3-class linear sentiment classifier."""

    def __init__(self, n_docs: int, n_topics: int, n_terms: int, n_brands: int):
        super().__init__()
        self.theta_loc = nn.Parameter(torch.zeros(n_docs, n_topics, dtype=DTYPE))
        self.theta_logscale = nn.Parameter(torch.zeros(n_docs, n_topics, dtype=DTYPE))
        self.beta_loc = nn.Parameter(torch.zeros(n_topics, n_terms, dtype=DTYPE))
        self.beta_logscale = nn.Parameter(torch.zeros(n_topics, n_terms, dtype=DTYPE))
        self.eta_loc = nn.Parameter(torch.zeros(n_topics, n_terms, dtype=DTYPE))
        self.eta_logscale = nn.Parameter(torch.zeros(n_topics, n_terms, dtype=DTYPE))
        self.x_loc = nn.Parameter(torch.zeros(n_brands, dtype=DTYPE))
        self.x_logscale = nn.Parameter(torch.zeros(n_brands, dtype=DTYPE))
        self.classifier = nn.Linear(n_terms, 3, dtype=DTYPE)
        with torch.no_grad():
            self.classifier.weight.zero_()
            self.classifier.bias.zero_()

    @property
    def dims(self) -> Dict[str, int]:
        D, K = self.theta_loc.shape
        return {"D": D, "K": K, "V": self.beta_loc.shape[1], "B": self.x_loc.shape[0]}


@dataclass
class BTMSettings:
    lr: float = 0.01
    tau: float = 0.5
    init_logscale: float = math.log(0.1)
    max_relaxed_draws: int = 16
    label_smoothing: float = 0.0
    wd_weight: float = 1.0


@dataclass
class BTMState:
    model: BrandTopicModel
    prior: PriorSpec
    settings: BTMSettings
    optimizer: torch.optim.Adam
    generator: torch.Generator
    step: int = 0
    lr: float = 0.01
    consecutive_skips: int = 0
    clamp_count: int = 0


@dataclass
class OptimizeConfig:
    batch: int = 256
    max_steps: int = 50000
    checkpoint_interval: int = 1000


def build_state(theta_mean: np.ndarray,
                beta_mean: np.ndarray,
                x_loc: np.ndarray,
                eta_loc: np.ndarray,
                prior: PriorSpec,
                settings: BTMSettings = BTMSettings(),
                seed: int = 0,
                classifier: Optional[Dict[str, torch.Tensor]] = None) -> BTMState:
    """
    Initialise a slice model from Poisson-factorization means

    Args:
        theta_mean: D x K initial document intensities
        beta_mean: K x V initial topic-word means
        x_loc: Initial brand scores (B)
        eta_loc: Initial topic-word offsets (K x V)
        prior: Priors of this slice
        settings: Optimizer / sampler settings
        seed: Seed of the slice's random stream
        classifier: Optional classifier weights carried over from the previous slice

    Returns:
        Fresh BTMState at step 0
    """
    theta_mean = np.asarray(theta_mean, dtype=np.float64)
    beta_mean = np.asarray(beta_mean, dtype=np.float64)
    D, K = theta_mean.shape
    V = beta_mean.shape[1]
    B = len(x_loc)
    model = BrandTopicModel(D, K, V, B)
    with torch.no_grad():
        model.theta_loc.copy_(torch.from_numpy(np.log(np.maximum(theta_mean, 1e-12))))
        model.beta_loc.copy_(torch.from_numpy(np.log(np.maximum(beta_mean, 1e-12))))
        model.eta_loc.copy_(torch.as_tensor(eta_loc, dtype=DTYPE))
        model.x_loc.copy_(torch.as_tensor(x_loc, dtype=DTYPE))
        for name in ("theta_logscale", "beta_logscale", "eta_logscale", "x_logscale"):
            getattr(model, name).fill_(settings.init_logscale)
        if classifier is not None:
            model.classifier.weight.copy_(classifier["weight"])
            model.classifier.bias.copy_(classifier["bias"])
    generator = torch.Generator().manual_seed(int(seed))
    optimizer = torch.optim.Adam(model.parameters(), lr=settings.lr)
    return BTMState(model=model, prior=prior, settings=settings, optimizer=optimizer,
                    generator=generator, lr=settings.lr)


def poisson_rate(theta_d: torch.Tensor, beta: torch.Tensor, eta: torch.Tensor, x_b,
                 counter: Optional[List[int]] = None) -> torch.Tensor:
    """
    lambda_dv = sum_k theta_dk * beta_kv * exp(x_b * eta_kv)

    Args:
        theta_d: K (or n x K) positive intensities
        beta: K x V positive topic-word weights
        eta: K x V topic-word offsets
        x_b: Brand score (scalar)
        counter: Optional one-element list accumulating clamped exponents

    Returns:
        Rates of shape V (or n x V)
    """
    theta_d = torch.as_tensor(theta_d, dtype=DTYPE)
    beta = torch.as_tensor(beta, dtype=DTYPE)
    eta = torch.as_tensor(eta, dtype=DTYPE)
    exponent = torch.as_tensor(x_b, dtype=DTYPE) * eta
    if counter is not None:
        counter[0] += int((exponent.detach().abs() > EXPONENT_CLAMP).sum())
    exponent = torch.clamp(exponent, -EXPONENT_CLAMP, EXPONENT_CLAMP)
    return theta_d @ (beta * torch.exp(exponent))


def batch_rates(theta: torch.Tensor, beta: torch.Tensor, eta: torch.Tensor, x: torch.Tensor,
                brands: torch.Tensor, counter: Optional[List[int]] = None) -> torch.Tensor:
    """Rates of a batch, one K x V brand-tilted topic matrix per distinct brand."""
    parts, order = [], []
    for brand in torch.unique(brands).tolist():
        sel = (brands == brand).nonzero(as_tuple=True)[0]
        parts.append(poisson_rate(theta[sel], beta, eta, x[brand], counter))
        order.append(sel)
    order = torch.cat(order)
    inverse = torch.empty_like(order)
    inverse[order] = torch.arange(len(order))
    return torch.cat(parts)[inverse]


def draw_noise(state: BTMState, batch: Batch, generator: torch.Generator) -> Dict[str, torch.Tensor]:
    """Standard-normal reparameterization noise for one Monte-Carlo sample."""
    dims = state.model.dims
    return {
        "theta": torch.randn(len(batch.idx), dims["K"], generator=generator, dtype=DTYPE),
        "beta": torch.randn(dims["K"], dims["V"], generator=generator, dtype=DTYPE),
        "eta": torch.randn(dims["K"], dims["V"], generator=generator, dtype=DTYPE),
        "x": torch.randn(dims["B"], generator=generator, dtype=DTYPE),
    }


def _sample_latents(model: BrandTopicModel, batch: Batch,
                    noise: Dict[str, torch.Tensor]) -> Tuple[Dict[str, torch.Tensor], Dict[str, torch.Tensor]]:
    """Reparameterized samples and log q at those samples."""
    q = {
        "theta": LogNormal(model.theta_loc[batch.idx], torch.exp(model.theta_logscale[batch.idx])),
        "beta": LogNormal(model.beta_loc, torch.exp(model.beta_logscale)),
        "eta": Normal(model.eta_loc, torch.exp(model.eta_logscale)),
        "x": Normal(model.x_loc, torch.exp(model.x_logscale)),
    }
    samples = {
        "theta": torch.exp(q["theta"].loc + q["theta"].scale * noise["theta"]),
        "beta": torch.exp(q["beta"].loc + q["beta"].scale * noise["beta"]),
        "eta": q["eta"].loc + q["eta"].scale * noise["eta"],
        "x": q["x"].loc + q["x"].scale * noise["x"],
    }
    log_q = {name: q[name].log_prob(samples[name]) for name in LATENTS}
    return samples, log_q


@dataclass
class ElboTerms:
    log_likelihood: torch.Tensor
    log_prior: Dict[str, torch.Tensor]
    log_q: Dict[str, torch.Tensor]
    elbo: torch.Tensor
    samples: Dict[str, torch.Tensor]
    rates: torch.Tensor


def elbo_estimate(state: BTMState, data: SliceData, batch: Batch, generator: torch.Generator,
                  noise: Optional[Dict[str, torch.Tensor]] = None) -> ElboTerms:
    """
    Single-sample reparameterized ELBO of a minibatch

    Local (document) terms are scaled by D / |batch|. The constant -log c! is
    dropped from the Poisson likelihood.

    Args:
        state: Slice state
        data: Full slice data (for D)
        batch: Minibatch
        generator: Random stream for the noise when `noise` is not given
        noise: Optional pre-drawn standard-normal noise

    Returns:
        ElboTerms; `elbo` is differentiable with respect to all variational parameters
    """
    if len(batch.idx) == 0:
        raise ValueError("batch must be nonempty")
    model, prior = state.model, state.prior
    noise = noise if noise is not None else draw_noise(state, batch, generator)
    samples, log_q = _sample_latents(model, batch, noise)

    counter = [0]
    rates = batch_rates(samples["theta"], samples["beta"], samples["eta"], samples["x"], batch.brands, counter)
    state.clamp_count += counter[0]
    log_rates = torch.log(rates.clamp_min(torch.finfo(DTYPE).tiny))
    log_likelihood = (batch.counts * log_rates - rates).sum()

    log_prior = {
        "theta": prior.theta_prior().log_prob(samples["theta"]),
        "beta": prior.beta_prior().log_prob(samples["beta"]),
        "eta": prior.eta_prior().log_prob(samples["eta"]),
        "x": prior.x_prior().log_prob(samples["x"]),
    }
    scale = data.n_docs / len(batch.idx)
    local = log_likelihood + (log_prior["theta"] - log_q["theta"]).sum()
    global_ = sum((log_prior[name] - log_q[name]).sum() for name in ("beta", "eta", "x"))
    elbo = scale * local + global_

    for name, value in [("log_likelihood", log_likelihood)] + \
                       [(f"log_prior[{n}]", log_prior[n].sum()) for n in LATENTS] + \
                       [(f"log_q[{n}]", log_q[n].sum()) for n in LATENTS]:
        if not torch.isfinite(value):
            raise TrainingError(f"ELBO term {name} is not finite ({value.item()})")
    return ElboTerms(log_likelihood, log_prior, log_q, elbo, samples, rates)


def elbo_and_gradients(state: BTMState, data: SliceData, batch: Batch,
                       generator: torch.Generator) -> Tuple[float, Dict[str, torch.Tensor]]:
    """ELBO estimate together with its gradient for every named parameter."""
    params = dict(state.model.named_parameters())
    terms = elbo_estimate(state, data, batch, generator)
    grads = torch.autograd.grad(terms.elbo, list(params.values()), allow_unused=True)
    return float(terms.elbo), {name: (g if g is not None else torch.zeros_like(p))
                               for (name, p), g in zip(params.items(), grads)}


def document_representation(rates: torch.Tensor, lengths: torch.Tensor, tau: float,
                            generator: torch.Generator, max_draws: int = 16) -> torch.Tensor:
    """
    Relaxed word-count features z_d built from Gumbel-softmax draws over log rates

    Each document gets min(length_d, max_draws) draws; their sum is rescaled
    by length_d / draws so every row sums to length_d. Zero-length documents
    map to the zero vector.

    Args:
        rates: n x V (or V) positive rates
        lengths: Token counts per document
        tau: Gumbel-softmax temperature
        generator: Random stream
        max_draws: Cap on relaxed draws per document

    Returns:
        n x V (or V) nonnegative features
    """
    single = rates.dim() == 1
    rates = rates.reshape(1, -1) if single else rates
    lengths = torch.as_tensor(lengths, dtype=DTYPE).reshape(-1)
    draws = torch.clamp(torch.minimum(lengths, torch.tensor(float(max_draws), dtype=DTYPE)), min=0)
    n_draws = int(draws.max().item()) if draws.numel() else 0
    if n_draws == 0:
        z = torch.zeros_like(rates)
        return z[0] if single else z

    logits = torch.log(rates.clamp_min(torch.finfo(DTYPE).tiny))
    relaxed = gumbel_softmax_sample(logits.unsqueeze(1).expand(-1, n_draws, -1), tau, generator)
    mask = (torch.arange(n_draws, dtype=DTYPE).unsqueeze(0) < draws.unsqueeze(1)).to(DTYPE)
    total = (relaxed * mask.unsqueeze(-1)).sum(dim=1)
    scale = torch.where(draws > 0, lengths / draws.clamp(min=1.0), torch.zeros_like(lengths))
    z = total * scale.unsqueeze(1)
    return z[0] if single else z


def classify_sentiment(z: torch.Tensor, lengths: torch.Tensor, classifier: nn.Linear) -> torch.Tensor:
    """softmax(W . z/length + bias) over (Negative, Neutral, Positive)."""
    lengths = torch.as_tensor(lengths, dtype=DTYPE).clamp(min=1.0)
    features = z / (lengths.unsqueeze(-1) if z.dim() > 1 else lengths)
    return torch.softmax(classifier(features), dim=-1)


def label_targets(labels: torch.Tensor, smoothing: float = 0.0) -> torch.Tensor:
    """One-hot class distributions, optionally smoothed toward uniform."""
    onehot = torch.nn.functional.one_hot(labels.clamp(min=0), num_classes=3).to(DTYPE)
    return (1.0 - smoothing) * onehot + smoothing / 3.0


def adversarial_representation(state: BTMState, batch: Batch, samples: Dict[str, torch.Tensor],
                               generator: torch.Generator) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Features and predictions with every document's brand score negated

    Returns:
        Tuple of (z_tilde, y_tilde predicted distribution, inverted target distribution)
    """
    rates = batch_rates(samples["theta"], samples["beta"], samples["eta"], -samples["x"], batch.brands)
    z_tilde = document_representation(rates, batch.lengths, state.settings.tau, generator,
                                      state.settings.max_relaxed_draws)
    y_tilde = classify_sentiment(z_tilde, batch.lengths, state.model.classifier)
    target = label_targets(invert_label(batch.labels.clamp(min=0)), state.settings.label_smoothing)
    return z_tilde, y_tilde, target


def total_loss(state: BTMState, data: SliceData, batch: Batch, generator: torch.Generator,
               supervised: bool = True,
               noise: Optional[Dict[str, torch.Tensor]] = None) -> torch.Tensor:
    """
    -ELBO + (1/|batch|) sum_d [W1(y_hat_d, y_d) + W1(y_tilde_d, y_bar_d)]

    The Wasserstein terms are skipped for unsupervised slices, for unlabeled
    documents and for documents without in-vocabulary tokens.
    """
    terms = elbo_estimate(state, data, batch, generator, noise)
    loss = -terms.elbo
    if not supervised:
        return loss

    usable = (batch.labels >= 0) & (batch.lengths > 0)
    if not bool(usable.any()):
        return loss
    z = document_representation(terms.rates, batch.lengths, state.settings.tau, generator,
                                state.settings.max_relaxed_draws)
    y_hat = classify_sentiment(z, batch.lengths, state.model.classifier)
    y = label_targets(batch.labels, state.settings.label_smoothing)
    _, y_tilde, y_bar = adversarial_representation(state, batch, terms.samples, generator)
    wd = (ordinal_w1(y_hat, y) + ordinal_w1(y_tilde, y_bar)) * usable.to(DTYPE)
    return loss + state.settings.wd_weight * wd.sum() / len(batch.idx)


def _set_lr(state: BTMState, lr: float) -> None:
    state.lr = lr
    for group in state.optimizer.param_groups:
        group["lr"] = lr


def optimize_slice(state: BTMState,
                   data: SliceData,
                   config: OptimizeConfig = OptimizeConfig(),
                   callback: Optional[Callable[[BTMState], str]] = None,
                   supervised: bool = True,
                   progress: bool = True) -> BTMState:
    """
    Minibatch Adam on the total loss

    Args:
        state: Initialised (or resumed) slice state; trained in place
        data: Training documents of the slice
        config: Batch size, step budget and checkpoint interval
        callback: Called every checkpoint_interval steps; returning BREAK stops training
        supervised: Include the Wasserstein sentiment terms
        progress: Show a tqdm progress bar

    Returns:
        The same state, advanced
    """
    D = data.n_docs
    if D == 0:
        raise ValueError("Cannot optimize on an empty slice")
    model, generator = state.model, state.generator
    bar = tqdm(total=config.max_steps, initial=state.step, disable=not progress, desc="BTM", leave=False)
    clamp_before = state.clamp_count

    while state.step < config.max_steps:
        idx = torch.randperm(D, generator=generator)[:config.batch]
        batch = make_batch(data, idx)
        state.optimizer.zero_grad(set_to_none=True)
        try:
            loss = total_loss(state, data, batch, generator, supervised)
            loss.backward()
            finite = all(torch.isfinite(p.grad).all() for p in model.parameters() if p.grad is not None)
        except TrainingError as e:
            LOG.warning("Step %d: %s", state.step, e)
            finite = False

        if finite:
            state.optimizer.step()
            state.consecutive_skips = 0
        else:
            state.consecutive_skips += 1
            _set_lr(state, state.lr * 0.5)
            LOG.warning("Step %d skipped (non-finite gradient); lr decayed to %.3g", state.step, state.lr)
            if state.consecutive_skips >= MAX_CONSECUTIVE_SKIPS:
                bar.close()
                raise TrainingError(f"{MAX_CONSECUTIVE_SKIPS} consecutive non-finite steps at step {state.step}")

        state.step += 1
        bar.update(1)
        if callback is not None and config.checkpoint_interval > 0 \
                and state.step % config.checkpoint_interval == 0:
            if finite:
                bar.set_postfix(loss=f"{loss.item():.1f}")
            if callback(state) == BREAK:
                bar.write(f"  ○ early stop at step {state.step}")
                break
    bar.close()
    if state.clamp_count > clamp_before:
        LOG.warning("%d rate exponent(s) clamped to +/-%.0f during training",
                    state.clamp_count - clamp_before, EXPONENT_CLAMP)
    return state


def orient_polarity(state: BTMState, data: SliceData) -> bool:
    """
    Fix the (x, eta) sign gauge so brand scores rise with the labels

    The loss is invariant under the joint flip (x, eta) -> (-x, -eta) when the
    priors on x and eta are zero-mean, so the flip only chooses a
    representative. Returns True when a flip was applied.
    """
    if not (np.all(np.asarray(state.prior.x_mean) == 0) and np.all(np.asarray(state.prior.eta_mean) == 0)):
        raise ValueError("orient_polarity only applies to zero-mean x/eta priors")
    labeled = data.labels >= 0
    if not labeled.any():
        return False
    brand_means = pd.Series(data.labels[labeled]).groupby(data.brands[labeled]).mean()
    x = state.model.x_loc.detach().numpy()[brand_means.index.to_numpy()]
    if len(brand_means) < 2 or np.std(x) == 0 or brand_means.std() == 0:
        return False
    if np.corrcoef(x, brand_means.to_numpy())[0, 1] >= 0:
        return False
    with torch.no_grad():
        state.model.x_loc.neg_()
        state.model.eta_loc.neg_()
    for group in state.optimizer.param_groups:
        for p in group["params"]:
            if p is state.model.x_loc or p is state.model.eta_loc:
                moments = state.optimizer.state.get(p, {})
                if "exp_avg" in moments:
                    moments["exp_avg"].neg_()
    return True


def infer_brand_scores(state: BTMState, brand_names: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """
    Raw brand scores (x_loc) and their max-abs normalized copy

    Returns:
        DataFrame indexed by brand with columns raw, normalized
    """
    raw = state.model.x_loc.detach().numpy().copy()
    names = list(brand_names) if brand_names is not None else list(range(len(raw)))
    return pd.DataFrame({"raw": raw, "normalized": normalize_scores(raw)}, index=pd.Index(names, name="brand"))


def topic_means(state: BTMState) -> Tuple[np.ndarray, np.ndarray]:
    """E[beta] under the lognormal factor and the mean of eta."""
    model = state.model
    beta = torch.exp(model.beta_loc + 0.5 * torch.exp(2.0 * model.beta_logscale))
    return beta.detach().numpy().copy(), model.eta_loc.detach().numpy().copy()


def state_tensors(state: BTMState) -> Dict[str, np.ndarray]:
    """Everything needed to continue training bit-identically, as named fp64 arrays."""
    out: Dict[str, np.ndarray] = {}
    names = {id(p): name for name, p in state.model.named_parameters()}
    for name, p in state.model.named_parameters():
        out[f"param.{name}"] = p.detach().numpy().astype(np.float64, copy=True)
    for p, moments in state.optimizer.state.items():
        name = names[id(p)]
        for key in ("exp_avg", "exp_avg_sq"):
            out[f"adam.{key}.{name}"] = moments[key].detach().numpy().astype(np.float64, copy=True)
        out[f"adam.step.{name}"] = np.array([float(moments["step"])], dtype=np.float64)
    out["rng.state"] = state.generator.get_state().numpy().astype(np.float64)
    out["scalar.counters"] = np.array([state.step, state.lr, state.consecutive_skips, state.clamp_count],
                                      dtype=np.float64)
    prior = state.prior
    out["prior.scalars"] = np.array([prior.a, prior.b, prior.c, prior.d, prior.sigma_beta,
                                     prior.eta_scale, prior.x_scale], dtype=np.float64)
    out["prior.eta_mean"] = np.asarray(prior.eta_mean, dtype=np.float64).reshape(-1)
    out["prior.x_mean"] = np.asarray(prior.x_mean, dtype=np.float64).reshape(-1)
    if prior.beta_loc is not None:
        out["prior.beta_loc"] = np.asarray(prior.beta_loc, dtype=np.float64)
    s = state.settings
    out["settings"] = np.array([s.lr, s.tau, s.init_logscale, s.max_relaxed_draws, s.label_smoothing,
                                s.wd_weight], dtype=np.float64)
    return out


def _prior_mean(values: np.ndarray, shape) -> Union[float, np.ndarray]:
    return float(values[0]) if values.size == 1 else values.reshape(shape)


def restore_state(tensors: Dict[str, np.ndarray]) -> BTMState:
    """Inverse of state_tensors."""
    D, K = tensors["param.theta_loc"].shape
    V = tensors["param.beta_loc"].shape[1]
    B = tensors["param.x_loc"].shape[0]
    lr, tau, init_logscale, max_draws, smoothing, wd_weight = tensors["settings"].tolist()
    settings = BTMSettings(lr=lr, tau=tau, init_logscale=init_logscale, max_relaxed_draws=int(max_draws),
                           label_smoothing=smoothing, wd_weight=wd_weight)
    a, b, c, d, sigma_beta, eta_scale, x_scale = tensors["prior.scalars"].tolist()
    prior = PriorSpec(a=a, b=b, c=c, d=d, sigma_beta=sigma_beta, eta_scale=eta_scale, x_scale=x_scale,
                      beta_loc=tensors.get("prior.beta_loc"),
                      eta_mean=_prior_mean(tensors["prior.eta_mean"], (K, V)),
                      x_mean=_prior_mean(tensors["prior.x_mean"], (B,)))

    model = BrandTopicModel(D, K, V, B)
    with torch.no_grad():
        for name, p in model.named_parameters():
            p.copy_(torch.from_numpy(tensors[f"param.{name}"]))
    step, cur_lr, skips, clamps = tensors["scalar.counters"].tolist()
    optimizer = torch.optim.Adam(model.parameters(), lr=settings.lr)
    for group in optimizer.param_groups:
        group["lr"] = cur_lr
    for name, p in model.named_parameters():
        key = f"adam.exp_avg.{name}"
        if key in tensors:
            optimizer.state[p] = {
                "step": torch.tensor(tensors[f"adam.step.{name}"][0], dtype=torch.float32),
                "exp_avg": torch.from_numpy(tensors[key].copy()),
                "exp_avg_sq": torch.from_numpy(tensors[f"adam.exp_avg_sq.{name}"].copy()),
            }
    generator = torch.Generator()
    generator.set_state(torch.from_numpy(tensors["rng.state"].astype(np.uint8)))
    return BTMState(model=model, prior=prior, settings=settings, optimizer=optimizer, generator=generator,
                    step=int(step), lr=cur_lr, consecutive_skips=int(skips), clamp_count=int(clamps))
