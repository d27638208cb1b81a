"""Forward filtering and backward sampling for the latent presence chains.

Conditional on parameters and observed counts the presence chains are
independent across areas, so every routine here vectorizes over areas and
loops only over time.  Filtering runs on normalized probabilities with one
log-scale factor per cell, which keeps long panels away from underflow while
still producing exact per-cell log marginals

    cell_loglik[i, s] = log p(y_{i,t} | y_{i,1:t-1}, totals, params),  t = s+2,

whose sum is the marginal log-likelihood with the states integrated out.

enumerate_posterior is the brute-force twin used as an oracle: it builds the
full joint log-probability tensor over all state paths of one area and reads
every quantity off it by summation.  It is exact and deliberately shares no
code with the recursive filter.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import NumericalError
from .model import (
    ModelData,
    ModelVariant,
    ParameterState,
    emission_at_bits,
    emission_table,
    initial_distribution,
    log_odds_field,
    presence_logit_base,
    state_table,
    transition_tensor,
)

PATH_BUDGET = 1_000_000


@dataclass
class FilterResult:
    """Forward pass output; time axis s indexes t = s+2."""

    predictive: np.ndarray   # (N, S, L) P(S*_t = l | y_{1:t-1})
    filtered: np.ndarray     # (N, S, L) P(S*_t = l | y_{1:t})
    cell_loglik: np.ndarray  # (N, S)
    loglik: float


def forward_filter(emission, trans, init) -> FilterResult:
    """Run the scaled forward recursion.

    emission: (N, S, L) log emission densities; trans: (N, S, L, L) row l-1
    = from state l; init: (L,) distribution of the state at t = 1.
    """
    emission = np.asarray(emission)
    n_areas, n_steps, n_states = emission.shape
    predictive = np.empty_like(emission)
    filtered = np.empty_like(emission)
    cell_loglik = np.empty((n_areas, n_steps))
    carry = np.broadcast_to(np.asarray(init, dtype=float), (n_areas, n_states))
    for s in range(n_steps):
        pred = np.einsum("nk,nkl->nl", carry, trans[:, s])
        shift = emission[:, s].max(axis=1)
        dead = ~np.isfinite(shift)
        if np.any(dead):
            i = int(np.argmax(dead))
            raise NumericalError(
                f"counts at area index {i}, time {s + 2} are impossible "
                "under every presence state")
        weights = pred * np.exp(emission[:, s] - shift[:, None])
        mass = weights.sum(axis=1)
        if np.any(mass <= 0.0) or not np.all(np.isfinite(mass)):
            i = int(np.argmax(~(mass > 0.0) | ~np.isfinite(mass)))
            raise NumericalError(
                f"zero or non-finite filter mass at area index {i}, time {s + 2}")
        carry = weights / mass[:, None]
        predictive[:, s] = pred
        filtered[:, s] = carry
        cell_loglik[:, s] = np.log(mass) + shift
    return FilterResult(predictive, filtered, cell_loglik,
                        float(cell_loglik.sum()))


def _categorical_rows(probs, rng) -> np.ndarray:
    """One draw per row from row-normalized probabilities."""
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cum[:, -1]
    return np.minimum((cum < u[:, None]).sum(axis=1), probs.shape[1] - 1)


def backward_sample(result: FilterResult, trans, init, rng) -> np.ndarray:
    """Draw one state path per area from the exact joint posterior.

    Returns encoded states, shape (N, T).  The draw at t = 1 replaces the
    (nonexistent) filtered distribution with the initial distribution.
    """
    n_areas, n_steps, n_states = result.filtered.shape
    rows = np.arange(n_areas)
    path = np.empty((n_areas, n_steps + 1), dtype=np.int64)
    state = _categorical_rows(result.filtered[:, -1], rng)
    path[:, -1] = state
    for s in range(n_steps - 1, -1, -1):
        back = trans[rows, s, :, state]                       # (N, L)
        base = result.filtered[:, s - 1] if s > 0 else init[None, :]
        weights = back * base
        mass = weights.sum(axis=1)
        if np.any(mass <= 0.0):
            i = int(np.argmax(~(mass > 0.0)))
            raise NumericalError(
                f"backward sampling hit zero mass at area index {i}, time {s + 1}")
        state = _categorical_rows(weights / mass[:, None], rng)
        path[:, s] = state
    return path + 1


def smoothed_marginals(result: FilterResult, trans, init) -> np.ndarray:
    """P(S*_t = l | all data), shape (N, T, L); t = 1 uses the initial law."""
    n_areas, n_steps, n_states = result.filtered.shape
    out = np.empty((n_areas, n_steps + 1, n_states))
    out[:, -1] = result.filtered[:, -1]
    for t in range(n_steps, 0, -1):
        nxt = out[:, t]                                        # time t+1, sm index t
        pred = result.predictive[:, t - 1]                     # P(S_{t+1} | y_{1:t})
        ratio = np.where(pred > 0, nxt / np.where(pred > 0, pred, 1.0), 0.0)
        flow = np.einsum("nlj,nj->nl", trans[:, t - 1], ratio)
        base = result.filtered[:, t - 2] if t >= 2 else init[None, :]
        out[:, t - 1] = base * flow
    return out


def presence_marginals(state_probs, n_switching: int) -> np.ndarray:
    """Per-disease presence probabilities from state distributions.

    state_probs: (..., L).  Computed as one minus the absent mass so a
    disease whose conflicting states carry exactly zero probability comes
    out exactly 1.
    """
    absent = 1.0 - state_table(n_switching).astype(float)
    return 1.0 - np.asarray(state_probs) @ absent


def marginal_loglik(md: ModelData, params: ParameterState,
                    variant: ModelVariant) -> float:
    """log p(y | params) with presence states integrated out."""
    return float(cell_logliks(md, params, variant).sum())


def cell_logliks(md: ModelData, params: ParameterState,
                 variant: ModelVariant) -> np.ndarray:
    """Per-cell marginal log-likelihoods, shape (N, T-1)."""
    if variant.has_latent_states:
        emission, trans, init = model_tables(md, params, variant)
        return forward_filter(emission, trans, init).cell_loglik
    params.validate(md, variant)
    lls = log_odds_field(md, params)
    bits = np.ones((md.n_switching, md.n_areas, md.n_steps), dtype=np.int8)
    return emission_at_bits(lls, bits, md.y_cur[1:], md.totals_cur, md.logcoef)


def model_tables(md: ModelData, params: ParameterState,
                 variant: ModelVariant):
    """Emission table, transition tensor and initial law for the filter."""
    if not variant.has_latent_states:
        raise ValueError(f"{variant.value} has no latent state space")
    params.validate(md, variant)
    lls = log_odds_field(md, params)
    emission = emission_table(md, lls)
    base = presence_logit_base(md, params, variant)
    trans = transition_tensor(base, params.persistence, params.interaction,
                              variant, md.states)
    init = initial_distribution(params.init_presence)
    return emission, trans, init


def filter_panel(md: ModelData, params: ParameterState,
                 variant: ModelVariant) -> FilterResult:
    emission, trans, init = model_tables(md, params, variant)
    return forward_filter(emission, trans, init)


# ---------------------------------------------------------------------------
# brute-force oracle


@dataclass
class ExactPosterior:
    paths: np.ndarray      # (P, T) encoded states, all of them
    log_probs: np.ndarray  # (P,) normalized log posterior over paths
    loglik: float
    smoothed: np.ndarray   # (T, L)
    filtered: np.ndarray   # (S, L), P(S*_t | y_{1:t}) for t = 2..T


def enumerate_posterior(emission, trans, init) -> ExactPosterior:
    """Exact path posterior of a single area by full enumeration.

    emission: (S, L) log densities, trans: (S, L, L), init: (L,).  Guarded
    by the documented budget of L^(T-1) <= 1e6 paths.
    """
    emission = np.asarray(emission, dtype=float)
    n_steps, n_states = emission.shape
    n_times = n_steps + 1
    if n_states ** n_steps > PATH_BUDGET:
        raise ValueError(f"enumeration over {n_states}^{n_steps} paths "
                         f"exceeds the budget of {PATH_BUDGET}")
    with np.errstate(divide="ignore"):
        log_init = np.log(np.asarray(init, dtype=float))
        log_trans = np.log(np.asarray(trans, dtype=float))

    def joint_tensor(upto: int) -> np.ndarray:
        shape_of = lambda axes: tuple(n_states if a in axes else 1
                                      for a in range(upto))
        joint = log_init.reshape(shape_of({0}))
        joint = np.broadcast_to(joint, (n_states,) * upto).copy()
        for s in range(upto - 1):
            joint += log_trans[s].reshape(shape_of({s, s + 1}))
            joint += emission[s].reshape(shape_of({s + 1}))
        return joint

    joint = joint_tensor(n_times)
    loglik = float(logsumexp(joint))
    log_probs = (joint - loglik).reshape(-1)
    post = np.exp(joint - loglik)
    smoothed = np.stack([post.sum(axis=tuple(a for a in range(n_times) if a != t))
                         for t in range(n_times)])
    filtered = np.empty((n_steps, n_states))
    for t in range(2, n_times + 1):
        part = joint_tensor(t)
        w = np.exp(part - logsumexp(part))
        filtered[t - 2] = w.sum(axis=tuple(range(t - 1)))
        filtered[t - 2] /= filtered[t - 2].sum()
    paths = np.indices((n_states,) * n_times).reshape(n_times, -1).T + 1
    return ExactPosterior(paths, log_probs, loglik, smoothed, filtered)


def enumerate_area(md: ModelData, params: ParameterState,
                   variant: ModelVariant, area: int) -> ExactPosterior:
    """Oracle posterior for one area of a panel."""
    emission, trans, init = model_tables(md, params, variant)
    return enumerate_posterior(emission[area], trans[area], init)
