"""Posterior summaries: WAIC, fitted values, presence, derived curves.

Everything here is a pure reduction over retained draws.  WAIC uses the
state-marginalized per-cell likelihoods, either as stored by the sampler or
recomputed from the parameter draws with the forward filter; the two paths
agree exactly because the sampler records cell terms rebuilt from the same
parameter values it stores.  Fitted values follow the posterior-predictive
recipe of drawing a fresh random effect from the fitted covariance for the
predicted cell, then sampling counts from the mixture at the drawn state
with the observed total.  Credible intervals throughout are equal-tailed
sample quantiles with linear interpolation.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from .diagnostics import effective_sample_size, gelman_rubin
from .errors import NumericalError
from .ffbs import cell_logliks
from .mcmc import PosteriorDraws
from .model import (
    ModelData,
    ParameterState,
    _log_denominator,
    bits_from_encoded,
    log_odds_field,
    mixture_probs,
    state_table,
)


# ---------------------------------------------------------------------------
# reconstructing parameter states from stored draws


class _DrawView:
    """Stacked draw arrays with per-draw ParameterState reconstruction."""

    def __init__(self, draws: PosteriorDraws, need_random_effects=False):
        self.draws = draws
        self.n = draws.n_draws * draws.n_chains
        if self.n == 0:
            raise ValueError("no retained draws")
        names = ["mixing", "intercept_mean", "intercept_sd", "area_intercepts",
                 "odds_coefs", "re_cov", "presence_intercepts",
                 "presence_coefs", "persistence", "interaction"]
        if need_random_effects:
            if "random_effects" not in draws.chains[0]:
                raise ValueError("this run stored no random effects; refit "
                                 "with store_random_effects=True")
            names.append("random_effects")
        self.arr = {name: draws.stacked(name) for name in names}
        if draws.variant.has_latent_states:
            self.arr["states"] = draws.stacked("states")

    def params(self, j: int, random_effects=None) -> ParameterState:
        a = self.arr
        if random_effects is None:
            random_effects = a["random_effects"][j]
        return ParameterState.create(
            mixing=a["mixing"][j],
            intercept_mean=a["intercept_mean"][j],
            intercept_sd=a["intercept_sd"][j],
            area_intercepts=a["area_intercepts"][j],
            odds_coefs=a["odds_coefs"][j],
            re_cov=a["re_cov"][j],
            random_effects=random_effects,
            presence_intercepts=a["presence_intercepts"][j],
            presence_coefs=a["presence_coefs"][j],
            persistence=a["persistence"][j],
            interaction=a["interaction"][j],
            init_presence=self.draws.init_presence,
        )

    def bits(self, j: int, md: ModelData) -> np.ndarray:
        """Presence bits (K-1, N, S) at model times t >= 2 for draw j."""
        if "states" in self.arr:
            return bits_from_encoded(self.arr["states"][j], md.n_switching)[:, :, 1:]
        return np.ones((md.n_switching, md.n_areas, md.n_steps), dtype=np.int64)


# ---------------------------------------------------------------------------
# WAIC


@dataclass
class WaicReport:
    """State-marginalized WAIC = -2 (lppd - p_waic) with cell breakdown."""

    waic: float
    lppd: float
    p_waic: float
    se: float
    n_cells: int
    pointwise_lppd: np.ndarray  # (N, S)
    pointwise_p: np.ndarray     # (N, S)


def waic(draws: PosteriorDraws, md: ModelData | None = None, *,
         recompute: bool = False) -> WaicReport:
    """WAIC over retained draws from per-cell marginal log-likelihoods.

    By default uses the cell terms stored during sampling; recompute=True
    rebuilds them from the parameter draws with the forward filter (md
    required), which must give the same numbers.  A cell whose posterior
    mean likelihood is zero raises an error naming the cell.
    """
    if recompute:
        if md is None:
            raise ValueError("recompute needs the model data")
        view = _DrawView(draws, need_random_effects=True)
        cells = np.stack([cell_logliks(md, view.params(j), draws.variant)
                          for j in range(view.n)])
    else:
        cells = draws.stacked("cell_loglik")
    n = cells.shape[0]
    if n == 0:
        raise ValueError("no retained draws")
    lppd_cell = logsumexp(cells, axis=0) - np.log(n)
    if np.any(np.isneginf(lppd_cell)):
        i, s = np.argwhere(np.isneginf(lppd_cell))[0]
        area = draws.area_names[i] if draws.area_names else str(i)
        raise NumericalError(f"cell (area {area}, time {s + 2}) has zero "
                             "posterior mean likelihood")
    if n > 1:
        with np.errstate(invalid="ignore"):
            p_cell = cells.var(axis=0, ddof=1)
        p_cell[np.isneginf(cells).any(axis=0)] = np.inf
    else:
        p_cell = np.zeros_like(lppd_cell)
    elpd = lppd_cell - p_cell
    n_cells = elpd.size
    se = (2.0 * np.sqrt(n_cells * np.var(elpd, ddof=1)) if n_cells > 1
          else 0.0)
    return WaicReport(
        waic=float(-2.0 * elpd.sum()),
        lppd=float(lppd_cell.sum()),
        p_waic=float(p_cell.sum()),
        se=float(se),
        n_cells=int(n_cells),
        pointwise_lppd=lppd_cell,
        pointwise_p=p_cell,
    )


# ---------------------------------------------------------------------------
# presence probabilities


def presence_probabilities(draws: PosteriorDraws) -> np.ndarray:
    """Posterior presence probability per (switching disease, area, time).

    The Monte Carlo mean of the sampled indicators; exactly 1.0 wherever
    every draw agrees, in particular on positive-count cells at t >= 2.
    Variants without presence switching return all ones.
    """
    n_sw = len(draws.disease_names) - 1
    shape = (n_sw, len(draws.area_names), draws.n_times)
    if not draws.variant.has_latent_states:
        return np.ones(shape)
    states = draws.stacked("states")
    if states.shape[0] == 0:
        raise ValueError("no retained draws")
    bits = state_table(n_sw)[states - 1]          # (D, N, T, K-1)
    return np.moveaxis(bits.mean(axis=0), -1, 0)


def presence_probability(draws: PosteriorDraws, disease, area, time: int) -> float:
    """One cell of presence_probabilities; time is 1-based model time."""
    probs = presence_probabilities(draws)
    sw = list(draws.disease_names[1:])
    k = sw.index(disease) if isinstance(disease, str) else int(disease)
    i = (list(draws.area_names).index(area) if isinstance(area, str)
         else int(area))
    if not 1 <= time <= draws.n_times:
        raise ValueError(f"time must lie in 1..{draws.n_times}")
    return float(probs[k, i, time - 1])


# ---------------------------------------------------------------------------
# fitted values


def _mixture_field(lls, bits):
    """Mixture probabilities (K, N, S) given presence bits (K-1, N, S)."""
    present = bits.astype(bool)
    log_den = _log_denominator(lls, present)
    out = np.empty((lls.shape[0] + 1,) + lls.shape[1:])
    out[0] = np.exp(-log_den)
    out[1:] = np.exp(np.where(present, lls - log_den, -np.inf))
    return out


def _multinomial_chain(rng, totals, probs):
    """Multinomial draws cell by cell via conditional binomials.

    probs: (K, ...) summing to 1 over axis 0; totals: (...) integers.  The
    conditional for each category is computed against a fresh tail sum, so
    a zero-probability category gets count exactly 0 and the last positive
    category always absorbs every remaining trial.
    """
    remaining = np.array(totals, dtype=np.int64, copy=True)
    out = np.empty((probs.shape[0],) + remaining.shape, dtype=np.int64)
    for k in range(probs.shape[0] - 1):
        mass = probs[k] + probs[k + 1:].sum(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.where(mass > 0, probs[k] / mass, 0.0)
        cond = np.clip(cond, 0.0, 1.0)
        out[k] = rng.binomial(remaining, cond)
        remaining -= out[k]
    out[-1] = remaining
    return out


def fitted_values(draws: PosteriorDraws, md: ModelData, area, time: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Posterior-predictive count draws for one cell, shape (draws, K).

    For each retained draw: a fresh cell random effect from MVN(0, Sigma),
    the mixture at that draw's sampled state, and a multinomial draw with
    the observed total.  time is 1-based and must be >= 2.
    """
    if not 2 <= time <= md.n_times:
        raise ValueError(f"time must lie in 2..{md.n_times}")
    i = (list(md.area_names).index(area) if isinstance(area, str)
         else int(area))
    s = time - 2
    view = _DrawView(draws)
    a = view.arr
    chol = np.linalg.cholesky(a["re_cov"])
    total = int(md.totals_cur[i, s])
    out = np.empty((view.n, md.n_diseases), dtype=np.int64)
    zeta = a["mixing"]
    lag = md.lag_log1p[:, i, s]
    for j in range(view.n):
        coefs = md.x_layout.expand(a["odds_coefs"][j])
        phi = chol[j] @ rng.standard_normal(md.n_switching)
        lls = a["area_intercepts"][j, :, i] + phi
        lls += zeta[j, 1:] * lag[1:] - zeta[j, 0] * lag[0]
        for k in range(md.n_switching):
            if coefs[k].size:
                lls[k] += md.x[k][i, s] @ coefs[k]
        state = (int(a["states"][j, i, time - 1]) if "states" in a else 1)
        probs = mixture_probs(state, np.exp(lls))
        out[j] = rng.multinomial(total, probs)
    return out


@dataclass
class FittedSummary:
    """Posterior-predictive count draws and quantiles for every cell."""

    samples: np.ndarray          # (draws, K, N, S) predictive counts
    mean: np.ndarray             # (K, N, S)
    quantiles: dict              # prob -> (K, N, S)


def fitted_quantiles(draws: PosteriorDraws, md: ModelData, *,
                     rng: np.random.Generator,
                     probs=(0.025, 0.5, 0.975)) -> FittedSummary:
    """fitted_values over the whole panel at once."""
    view = _DrawView(draws)
    chol = np.linalg.cholesky(view.arr["re_cov"])
    samples = np.empty((view.n, md.n_diseases, md.n_areas, md.n_steps),
                       dtype=np.int32)
    for j in range(view.n):
        z = rng.standard_normal((md.n_switching, md.n_areas, md.n_steps))
        phi = np.einsum("ij,jns->ins", chol[j], z)
        params = view.params(j, random_effects=phi)
        lls = log_odds_field(md, params)
        field = _mixture_field(lls, view.bits(j, md))
        samples[j] = _multinomial_chain(rng, md.totals_cur, field)
    return FittedSummary(
        samples=samples,
        mean=samples.mean(axis=0),
        quantiles={p: np.quantile(samples, p, axis=0) for p in probs},
    )


# ---------------------------------------------------------------------------
# parameter summaries


def summarize(draws: PosteriorDraws, exp_names=()) -> pd.DataFrame:
    """Posterior mean, sd, equal-tailed 95% interval, R-hat and ESS per
    scalar parameter.  Names in exp_names are reported on the exp scale.
    """
    if draws.n_draws == 0:
        raise ValueError("no retained draws")
    series = draws.scalar_series()
    exp_set = set(exp_names)
    unknown = exp_set - set(series)
    if unknown:
        raise ValueError(f"unknown parameter {sorted(unknown)[0]!r} in exp_names")
    rows = []
    for name, tr in series.items():
        vals = np.exp(tr) if name in exp_set else tr
        flat = vals.reshape(-1)
        q = np.quantile(flat, (0.025, 0.5, 0.975))
        rows.append({
            "param": name,
            "mean": flat.mean(),
            "sd": flat.std(ddof=1) if flat.size > 1 else 0.0,
            "q2.5": q[0], "q50": q[1], "q97.5": q[2],
            "rhat": gelman_rubin(vals),
            "ess": effective_sample_size(vals),
            "exponentiated": name in exp_set,
        })
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# derived quantities


@dataclass
class ResponseCurve:
    """Posterior multiplier exp(beta x) over a covariate grid."""

    grid: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    threshold: float
    crossings: dict  # curve name -> grid values where it crosses threshold


def _crossings(x, f, threshold):
    out = []
    g = f - threshold
    for a in range(len(x) - 1):
        if g[a] == 0.0:
            out.append(float(x[a]))
        elif g[a] * g[a + 1] < 0:
            out.append(float(x[a] + (x[a + 1] - x[a]) * (-g[a])
                             / (g[a + 1] - g[a])))
    if g[-1] == 0.0:
        out.append(float(x[-1]))
    return tuple(out)


def response_curve(draws: PosteriorDraws, name: str, grid, *, record=None,
                   threshold: float = 1.0,
                   levels=(0.025, 0.975)) -> ResponseCurve:
    """Curve of the posterior multiplier exp(beta x) for one coefficient.

    name is a scalar-series key (e.g. "odds.dengue.temp").  grid is in the
    covariate's working units unless a StandardizeRecord is given, in which
    case grid is raw and gets the same shift and scale the model saw.  The
    multiplier is relative to the covariate's reference point (zero on the
    working scale).  Crossing locations of each curve with the threshold
    are linearly interpolated.
    """
    series = draws.scalar_series()
    if name not in series:
        raise ValueError(f"unknown parameter {name!r}")
    beta = series[name].reshape(-1)
    if beta.size == 0:
        raise ValueError("no retained draws")
    grid = np.asarray(grid, dtype=float)
    xs = (grid - record.mean) / record.sd if record is not None else grid
    curves = np.exp(np.outer(beta, xs))
    mean = curves.mean(axis=0)
    lower = np.quantile(curves, levels[0], axis=0)
    upper = np.quantile(curves, levels[1], axis=0)
    return ResponseCurve(
        grid=grid, mean=mean, lower=lower, upper=upper, threshold=threshold,
        crossings={
            "mean": _crossings(grid, mean, threshold),
            "lower": _crossings(grid, lower, threshold),
            "upper": _crossings(grid, upper, threshold),
        },
    )


@dataclass
class MeanOddsReport:
    """Presence-weighted time averages of the favorability lambda.

    excluded[k, i] counts draws whose sampled path had no presence at all
    for that disease and area; those draws leave the average undefined and
    drop out of the summary.
    """

    mean: np.ndarray      # (K-1, N)
    lower: np.ndarray
    upper: np.ndarray
    excluded: np.ndarray  # (K-1, N) int
    n_draws: int


def mean_relative_odds(draws: PosteriorDraws, md: ModelData,
                       levels=(0.025, 0.975),
                       chunk: int = 256) -> MeanOddsReport:
    """Per-cell average of lambda over the times the disease was present.

    lambda here is the favorability exp(intercept + x beta + random
    effect), without the autoregressive adjustment, averaged over t with
    the drawn presence indicators as weights.
    """
    view = _DrawView(draws, need_random_effects=True)
    a = view.arr
    n_sw = md.n_switching
    lam_bar = np.empty((view.n, n_sw, md.n_areas))
    for lo in range(0, view.n, chunk):
        hi = min(lo + chunk, view.n)
        lam_log = (a["area_intercepts"][lo:hi, :, :, None]
                   + a["random_effects"][lo:hi])
        for k in range(n_sw):
            cols = list(md.x_layout.col_to_flat[k])
            if cols:
                coefs = a["odds_coefs"][lo:hi][:, cols]
                lam_log[:, k] += np.einsum("nsp,dp->dns", md.x[k], coefs)
        lam = np.exp(lam_log)
        if "states" in a:
            bits = state_table(n_sw)[a["states"][lo:hi] - 1]  # (d, N, T, K-1)
            w = np.moveaxis(bits, -1, 1)[:, :, :, 1:].astype(float)
        else:
            w = np.ones_like(lam)
        cnt = w.sum(axis=-1)
        with np.errstate(invalid="ignore"):
            lam_bar[lo:hi] = np.where(cnt > 0, (lam * w).sum(axis=-1) / cnt,
                                      np.nan)
    excluded = np.isnan(lam_bar).sum(axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(lam_bar, axis=0)
        lower = np.nanquantile(lam_bar, levels[0], axis=0)
        upper = np.nanquantile(lam_bar, levels[1], axis=0)
    return MeanOddsReport(mean=mean, lower=lower, upper=upper,
                          excluded=excluded.astype(int), n_draws=view.n)
