"""
Numerical Kernels

Rank statistics, the Fisher-z machinery behind the meta weight, the ordinal
Wasserstein distance, Gumbel-softmax sampling and a finite-difference
gradient checker. Everything here is a pure function; random streams are
passed in explicitly.
"""

import logging
import math
from typing import Callable, Optional, Sequence, Union

import numpy as np
import torch
from scipy import stats

LOG = logging.getLogger(__name__)

GAMMA_FLOOR = 0.05
RHO_CLAMP = 1.0 - 1e-6
ORDINAL_SUPPORT = np.array([0.0, 1.0, 2.0])

ArrayLike = Union[np.ndarray, Sequence[float]]


def average_ranks(scores: ArrayLike) -> np.ndarray:
    """Ranks 1..B with ties sharing their average rank."""
    return stats.rankdata(np.asarray(scores, dtype=np.float64), method="average")


def spearman_rank_correlation(predicted: ArrayLike, truth: ArrayLike) -> float:
    """
    Spearman's rho as the Pearson correlation of average ranks

    Args:
        predicted: Scores (or ranks) of B brands
        truth: Scores (or ranks) of the same brands, same order

    Returns:
        rho in [-1, 1], or NaN when either rank vector is constant
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predicted.shape != truth.shape:
        raise ValueError(f"Brand sets differ: {predicted.shape} vs {truth.shape}")
    if predicted.size < 2:
        raise ValueError("Spearman correlation needs at least 2 brands")

    rp = average_ranks(predicted)
    rt = average_ranks(truth)
    dp = rp - rp.mean()
    dt = rt - rt.mean()
    denom = math.sqrt(float(np.dot(dp, dp)) * float(np.dot(dt, dt)))
    if denom == 0.0:
        LOG.warning("Constant rank vector; Spearman correlation undefined")
        return float("nan")
    return float(np.clip(np.dot(dp, dt) / denom, -1.0, 1.0))


def _clamp_rho(rho: float, name: str) -> float:
    if abs(rho) >= 1.0:
        LOG.warning("|%s| = %.6f clamped to %.6f for the Fisher z-transform", name, abs(rho), RHO_CLAMP)
        return math.copysign(RHO_CLAMP, rho)
    return rho


def fisher_z_cdf(rho_current: float, rho_ref: float, n_brands: int, point: str = "z") -> float:
    """
    Pr(z <= point) with z ~ Normal(atanh(rho_current), 1/(B-3))

    Args:
        rho_current: Correlation whose z-transform sets the mean
        rho_ref: Reference correlation; the evaluation point
        n_brands: Number of ranked brands B (>= 4)
        point: "z" evaluates at atanh(rho_ref); "raw" evaluates at rho_ref itself

    Returns:
        Probability in (0, 1)
    """
    if n_brands < 4:
        raise ValueError(f"Fisher z-test needs at least 4 brands, got {n_brands}")
    if point not in ("z", "raw"):
        raise ValueError(f"point must be 'z' or 'raw', got '{point}'")
    rho_current = _clamp_rho(float(rho_current), "rho_current")
    rho_ref = _clamp_rho(float(rho_ref), "rho_ref")
    at = math.atanh(rho_ref) if point == "z" else rho_ref
    return float(stats.norm.cdf(at, loc=math.atanh(rho_current), scale=math.sqrt(1.0 / (n_brands - 3))))


def gamma_weight(prob: float) -> float:
    """Meta weight max(0.05, prob)."""
    if not 0.0 <= prob <= 1.0:
        raise ValueError(f"prob must lie in [0, 1], got {prob}")
    return max(GAMMA_FLOOR, float(prob))


def class_distribution(probs: ArrayLike) -> np.ndarray:
    """
    Validate a distribution over (Negative, Neutral, Positive)

    Sums within [0.99, 1.01] are renormalized with a warning; anything further
    off, negative, or of the wrong length is rejected.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.shape[-1:] != (3,):
        raise ValueError(f"class distribution must have 3 entries, got shape {p.shape}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError(f"class distribution has negative or non-finite entries: {p}")
    total = p.sum(axis=-1, keepdims=True)
    if np.any(np.abs(total - 1.0) > 1e-9):
        if np.any((total < 0.99) | (total > 1.01)):
            raise ValueError(f"class distribution sums to {total.ravel()}, not 1")
        LOG.warning("class distribution summing to %s renormalized", total.ravel())
        p = p / total
    return p


def ordinal_w1(p, q):
    """
    W1 on the ordered support {0, 1, 2} with unit spacing

    Works on numpy arrays and torch tensors alike, batched over leading axes.
    """
    diff = p.cumsum(-1) - q.cumsum(-1)
    return diff[..., :-1].abs().sum(-1) if isinstance(diff, torch.Tensor) \
        else np.abs(diff[..., :-1]).sum(-1)


def wasserstein_1d(p: ArrayLike, q: ArrayLike) -> float:
    """
    1-Wasserstein distance between two class distributions

    Args:
        p: Distribution over (Negative, Neutral, Positive)
        q: Distribution over the same classes

    Returns:
        Distance in [0, 2]
    """
    return float(stats.wasserstein_distance(ORDINAL_SUPPORT, ORDINAL_SUPPORT,
                                            class_distribution(p), class_distribution(q)))


def sample_gumbel(shape, generator: torch.Generator, dtype=torch.float64) -> torch.Tensor:
    """Standard Gumbel noise -log(-log U)."""
    # F.gumbel_softmax samples from the global RNG; draws here come from the caller's generator
    tiny = torch.finfo(dtype).tiny
    u = torch.rand(shape, generator=generator, dtype=dtype).clamp(min=tiny, max=1.0 - 1e-16)
    return -torch.log(-torch.log(u))


def gumbel_softmax_sample(logits: torch.Tensor, tau: float, generator: torch.Generator) -> torch.Tensor:
    """
    Relaxed one-hot draw softmax((logits + g) / tau)

    Args:
        logits: Tensor whose last axis holds the V category logits
        tau: Temperature (> 0)
        generator: Random stream owned by the caller

    Returns:
        Tensor of the same shape, each last-axis slice summing to 1
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    logits = torch.as_tensor(logits, dtype=torch.float64)
    g = sample_gumbel(logits.shape, generator, dtype=logits.dtype)
    return torch.softmax((logits + g) / tau, dim=-1)


def finite_difference_check(loss: Callable[[torch.Tensor], torch.Tensor],
                            params: ArrayLike,
                            epsilon: float = 1e-5,
                            grad: Optional[Callable[[torch.Tensor], torch.Tensor]] = None) -> float:
    """
    Compare an analytic gradient against central differences

    Args:
        loss: Scalar function of a flat float64 tensor
        params: Point at which gradients are compared
        epsilon: Half-width of the central difference (> 0)
        grad: Analytic gradient; defaults to autograd through `loss`

    Returns:
        max_i |g_a - g_fd| / max(1e-8, |g_a| + |g_fd|)
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    x0 = torch.as_tensor(np.asarray(params, dtype=np.float64)).clone()

    if grad is None:
        x = x0.clone().requires_grad_(True)
        value = loss(x)
        if not torch.isfinite(value):
            raise ValueError(f"loss is not finite at params: {value.item()}")
        g_a = torch.autograd.grad(value, x)[0].detach()
    else:
        g_a = torch.as_tensor(grad(x0.clone()), dtype=torch.float64).detach()

    g_fd = torch.empty_like(x0)
    with torch.no_grad():
        for i in range(x0.numel()):
            up, down = x0.clone(), x0.clone()
            up[i] += epsilon
            down[i] -= epsilon
            f_up, f_down = loss(up), loss(down)
            if not (torch.isfinite(f_up) and torch.isfinite(f_down)):
                raise ValueError(f"loss is not finite around coordinate {i}")
            g_fd[i] = (f_up - f_down) / (2.0 * epsilon)

    rel = (g_a - g_fd).abs() / torch.clamp((g_a.abs() + g_fd.abs()), min=1e-8)
    return float(rel.max()) if rel.numel() else 0.0


def normalize_scores(raw: ArrayLike) -> np.ndarray:
    """Scale by max |raw| into [-1, 1]; the zero vector stays zero."""
    raw = np.asarray(raw, dtype=np.float64)
    peak = np.max(np.abs(raw)) if raw.size else 0.0
    return raw / peak if peak > 0 else np.zeros_like(raw)
