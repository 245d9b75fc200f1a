"""
Poisson Factorization (coordinate-ascent variational inference)

Vanilla Gamma-Poisson factorization c_dv ~ Poisson(sum_k theta_dk beta_kv)
with Gamma variational factors. Used to initialise theta and beta at slice 0
and to produce theta_(p), beta_(p) at every later slice.

Auxiliary responsibilities are only ever formed at nonzero counts; zero
entries enter through the rate sums alone.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy import special

from src.errors import TrainingError

LOG = logging.getLogger(__name__)


@dataclass(frozen=True)
class PFPriors:
    """Gamma(a, b) on theta and Gamma(c, d) on beta (shape, rate)."""
    a: float = 0.3
    b: float = 0.3
    c: float = 0.3
    d: float = 0.3

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            if getattr(self, name) <= 0:
                raise ValueError(f"prior {name} must be > 0, got {getattr(self, name)}")


@dataclass
class PFState:
    theta_shape: np.ndarray  # D x K
    theta_rate: np.ndarray   # D x K
    beta_shape: np.ndarray   # K x V
    beta_rate: np.ndarray    # K x V
    elbo_trace: List[float] = field(default_factory=list)

    @property
    def theta_mean(self) -> np.ndarray:
        return self.theta_shape / self.theta_rate

    @property
    def beta_mean(self) -> np.ndarray:
        return self.beta_shape / self.beta_rate


def _compute_expectations(shape: np.ndarray, rate: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Given x ~ Gamma(shape, rate), return E[x] and E[log x]."""
    return shape / rate, special.digamma(shape) - np.log(rate)


def _gamma_term(a: float, b: float, shape: np.ndarray, rate: np.ndarray,
                Ex: np.ndarray, Elogx: np.ndarray) -> float:
    """E_q[log Gamma(x; a, b)] - E_q[log q(x)] summed over entries."""
    return float(np.sum(a * np.log(b) - special.gammaln(a)
                        + (a - shape) * Elogx - (b - rate) * Ex
                        + special.gammaln(shape) - shape * np.log(rate)))


def _nonzero_ratio(counts: sp.csr_matrix, exp_elog_theta: np.ndarray,
                   exp_elog_beta: np.ndarray) -> sp.csr_matrix:
    """
    Sparse matrix of c_dv / sum_k exp(E[log theta_dk] + E[log beta_kv]) at nonzeros

    Multiplying it back through exp(E[log .]) yields sum_v c_dv phi_dvk
    without materialising phi.
    """
    coo = counts.tocoo()
    denom = np.einsum("nk,kn->n", exp_elog_theta[coo.row], exp_elog_beta[:, coo.col])
    return sp.csr_matrix((coo.data / denom, (coo.row, coo.col)), shape=counts.shape)


def pf_elbo(state: PFState, counts: sp.spmatrix, priors: PFPriors = PFPriors()) -> float:
    """
    Evidence lower bound with responsibilities at their optimum

    Args:
        state: Variational parameters
        counts: D x V count matrix matching the state
        priors: Gamma hyperparameters

    Returns:
        ELBO (log c! included)
    """
    counts = sp.csr_matrix(counts, dtype=np.float64)
    D, V = counts.shape
    if state.theta_shape.shape[0] != D or state.beta_shape.shape[1] != V:
        raise ValueError(f"State dims {state.theta_shape.shape}/{state.beta_shape.shape} "
                         f"do not match counts {counts.shape}")
    Et, Elogt = _compute_expectations(state.theta_shape, state.theta_rate)
    Eb, Elogb = _compute_expectations(state.beta_shape, state.beta_rate)

    coo = counts.tocoo()
    bound = 0.0
    if coo.nnz:
        # log sum_k exp(Elogt + Elogb) at the nonzeros, computed stably
        log_mix = special.logsumexp(Elogt[coo.row] + Elogb[:, coo.col].T, axis=1)
        bound += float(np.sum(coo.data * log_mix - special.gammaln(coo.data + 1.0)))
    bound -= float(np.sum(Et * Eb.sum(axis=1)[np.newaxis, :]))
    bound += _gamma_term(priors.a, priors.b, state.theta_shape, state.theta_rate, Et, Elogt)
    bound += _gamma_term(priors.c, priors.d, state.beta_shape, state.beta_rate, Eb, Elogb)
    if not np.isfinite(bound):
        raise TrainingError("Poisson factorization ELBO is not finite")
    return bound


def cavi_fit(counts: sp.spmatrix,
             K: int,
             priors: PFPriors = PFPriors(),
             max_iters: int = 200,
             rel_tol: float = 1e-4,
             seed: int = 0,
             init_beta: Optional[np.ndarray] = None,
             verbose: bool = False) -> PFState:
    """
    Fit Poisson factorization by coordinate ascent

    Args:
        counts: D x V nonnegative counts
        K: Number of topics
        priors: Gamma hyperparameters
        max_iters: Iteration cap
        rel_tol: Stop when the relative ELBO change falls below this
        seed: Seed for the initial jitter
        init_beta: Optional K x V beta means to warm-start from (keeps topic order)
        verbose: Print the ELBO after every iteration

    Returns:
        Fitted PFState with its ELBO trace
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    counts = sp.csr_matrix(counts, dtype=np.float64)
    D, V = counts.shape
    if D == 0 or V == 0:
        raise ValueError(f"counts must be nonempty, got shape {counts.shape}")
    if K > V or K > D:
        LOG.warning("K=%d exceeds the count matrix dims (D=%d, V=%d)", K, D, V)

    rng = np.random.default_rng(seed)
    theta_shape = priors.a + rng.uniform(0.0, 1.0, size=(D, K))
    theta_rate = priors.b + np.ones((D, K))
    if init_beta is None:
        beta_shape = priors.c + rng.uniform(0.0, 1.0, size=(K, V))
        beta_rate = priors.d + np.ones((K, V))
    else:
        init_beta = np.asarray(init_beta, dtype=np.float64)
        if init_beta.shape != (K, V):
            raise ValueError(f"init_beta shape {init_beta.shape} != ({K}, {V})")
        beta_rate = priors.d + np.ones((K, V))
        beta_shape = np.maximum(init_beta * beta_rate, 1e-8)

    state = PFState(theta_shape, theta_rate, beta_shape, beta_rate)
    old = pf_elbo(state, counts, priors)
    state.elbo_trace.append(old)

    for it in range(max_iters):
        Et, Elogt = _compute_expectations(state.theta_shape, state.theta_rate)
        Eb, Elogb = _compute_expectations(state.beta_shape, state.beta_rate)

        # theta given current beta
        exp_t, exp_b = np.exp(Elogt), np.exp(Elogb)
        ratio = _nonzero_ratio(counts, exp_t, exp_b)
        state.theta_shape = priors.a + exp_t * np.asarray(ratio @ exp_b.T)
        state.theta_rate = priors.b + np.broadcast_to(Eb.sum(axis=1), (D, K)).copy()
        Et, Elogt = _compute_expectations(state.theta_shape, state.theta_rate)

        # beta given the new theta
        exp_t = np.exp(Elogt)
        ratio = _nonzero_ratio(counts, exp_t, exp_b)
        state.beta_shape = priors.c + exp_b * np.asarray((ratio.T @ exp_t).T)
        state.beta_rate = priors.d + np.broadcast_to(Et.sum(axis=0)[:, np.newaxis], (K, V)).copy()

        try:
            bound = pf_elbo(state, counts, priors)
        except TrainingError as e:
            raise TrainingError(f"Poisson factorization ELBO is not finite at iteration {it}") from e
        state.elbo_trace.append(bound)
        improvement = (bound - old) / abs(old) if old != 0 else np.inf
        if verbose:
            print(f"\r\tCAVI iteration {it}: ELBO {bound:.2f} (improvement {improvement:.6f})", end="")
        if abs(improvement) < rel_tol:
            break
        old = bound
    if verbose:
        print()
    return state


def pf_topics(state: PFState) -> np.ndarray:
    """K x V expected topic-word matrix E[beta] = shape / rate."""
    return state.beta_shape / state.beta_rate
