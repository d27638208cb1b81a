"""Adaptive Metropolis-within-Gibbs sampler.

Each iteration sweeps the parameter blocks in a fixed order: mixing
exponents, odds coefficients, cell random effects, random-effect covariance
(conjugate inverse-Wishart), area intercepts with their hierarchical mean
(conjugate) and sd, presence-model parameters, and finally one forward
filter / backward sampling draw of the presence states.  Random-walk steps
adapt during burn-in only, in batches of 50 iterations, moving each log step
by min(0.1, n^-1/2) toward a 0.44 acceptance target for scalar moves and
0.234 for multivariate blocks; block proposals also estimate a covariance
shape from the burn-in history.  After burn-in every proposal distribution
is frozen, so retained draws come from a fixed-kernel chain.

Chains start from prior draws whose sds are multiplied by init_scale, with
random effects at zero and presence states set to one wherever a positive
count forces them (Bernoulli(1/2) elsewhere).  Each chain derives its
generator from one spawn of the root seed, which makes runs reproducible
and independent of how chains are distributed over worker processes.
"""
from __future__ import annotations

import concurrent.futures
import multiprocessing
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import invwishart

from .diagnostics import effective_sample_size, gelman_rubin
from .errors import NumericalError
from .ffbs import backward_sample, forward_filter
from .model import (
    ModelData,
    ModelVariant,
    ParameterState,
    _bernoulli_loglik,
    bits_from_encoded,
    emission_at_bits,
    emission_table,
    initial_distribution,
    log_odds_field,
    presence_logit_base,
    transition_tensor,
)

ADAPT_BATCH = 50
COEF_CLASSES = ("intercept_mean", "odds", "presence_intercept", "presence",
                "persistence", "interaction")


# ---------------------------------------------------------------------------
# priors


@dataclass
class PriorSpec:
    """Prior hyperparameters.

    coef_priors maps a coefficient class to its normal (mean, sd); missing
    classes get (0, 10).  intercept_sd_scale is the half-normal scale on the
    random-intercept sds.  The inverse-Wishart on the random-effect
    covariance defaults to (K degrees of freedom, identity scale).
    init_presence holds the fixed presence probabilities at t = 1.
    """

    coef_priors: dict = field(default_factory=dict)
    intercept_sd_scale: float = 5.0
    re_cov_df: float | None = None
    re_cov_scale: np.ndarray | None = None
    init_presence: float | np.ndarray = 0.5

    def __post_init__(self):
        unknown = set(self.coef_priors) - set(COEF_CLASSES)
        if unknown:
            raise ValueError(f"unknown coefficient class {sorted(unknown)[0]!r}")
        self.coef_priors = {c: tuple(map(float, self.coef_priors.get(c, (0.0, 10.0))))
                            for c in COEF_CLASSES}
        for c, (_, sd) in self.coef_priors.items():
            if sd <= 0:
                raise ValueError(f"prior sd for {c!r} must be positive")
        if self.intercept_sd_scale <= 0:
            raise ValueError("intercept_sd_scale must be positive")

    def resolve(self, md: ModelData):
        """Concrete (df, scale, init_presence) for a panel."""
        n_sw = md.n_switching
        df = float(self.re_cov_df if self.re_cov_df is not None
                   else md.n_diseases)
        if df < n_sw:
            raise ValueError(f"inverse-Wishart df {df} below dimension {n_sw}")
        scale = (np.eye(n_sw) if self.re_cov_scale is None
                 else np.asarray(self.re_cov_scale, dtype=float))
        if scale.shape != (n_sw, n_sw) or not np.allclose(scale, scale.T):
            raise ValueError("re_cov_scale must be a symmetric (K-1, K-1) matrix")
        if np.any(np.linalg.eigvalsh(scale) <= 0):
            raise ValueError("re_cov_scale must be positive definite")
        q = np.broadcast_to(np.asarray(self.init_presence, dtype=float),
                            (n_sw,)).copy()
        if np.any(q <= 0) or np.any(q >= 1):
            raise ValueError("init_presence must lie strictly in (0, 1)")
        return df, scale, q


def _normal_logpdf(x, mean, sd):
    return -0.5 * ((x - mean) / sd) ** 2 - np.log(sd)


def _logit_jacobian(u):
    # log |d expit(u) / du|
    return -np.logaddexp(0.0, u) - np.logaddexp(0.0, -u)


# ---------------------------------------------------------------------------
# adaptation machinery


class ScalarAdapter:
    """Per-component random-walk scales chasing a target acceptance rate."""

    def __init__(self, shape, target=0.44, initial_step=0.5):
        self.log_step = np.full(shape, np.log(initial_step))
        self.target = target
        self.frozen = False
        self._acc = np.zeros(shape)
        self._count = 0
        self._batches = 0
        self.total_acc = np.zeros(shape)
        self.total_trials = 0

    @property
    def step(self):
        return np.exp(self.log_step)

    def record(self, accepted):
        accepted = np.asarray(accepted, dtype=float)
        self.total_acc += accepted
        self.total_trials += 1
        if self.frozen:
            return
        self._acc += accepted
        self._count += 1
        if self._count >= ADAPT_BATCH:
            delta = min(0.1, 1.0 / np.sqrt(self._batches + 1.0))
            self.log_step += np.where(self._acc / self._count > self.target,
                                      delta, -delta)
            self._acc[...] = 0.0
            self._count = 0
            self._batches += 1

    def freeze(self):
        self.frozen = True

    def acceptance_rate(self):
        if self.total_trials == 0:
            return float("nan")
        return float(np.mean(self.total_acc) / self.total_trials)


class BlockAdapter:
    """Per-cell multivariate proposals with adapted scale and shape.

    Cells are laid out on a (N, S) grid; each owns a dim-vector block.  The
    proposal is scale * L z with L the Cholesky factor of a running
    covariance estimate (identity until enough history accumulates).
    """

    def __init__(self, grid, dim, target=0.234, initial_step=0.5):
        self.grid = grid
        self.dim = dim
        self.target = target
        self.frozen = False
        self.log_step = np.full(grid, np.log(initial_step))
        self.chol = np.broadcast_to(np.eye(dim), grid + (dim, dim)).copy()
        self._mean = np.zeros((dim,) + grid)
        self._m2 = np.zeros((dim, dim) + grid)
        self._n = 0
        self._acc = np.zeros(grid)
        self._count = 0
        self._batches = 0
        self.total_acc = np.zeros(grid)
        self.total_trials = 0

    @property
    def step(self):
        return np.exp(self.log_step)

    def propose(self, rng):
        z = rng.standard_normal((self.dim,) + self.grid)
        eps = np.einsum("nsij,jns->ins", self.chol, z)
        return eps * np.exp(self.log_step)[None]

    def observe(self, value):
        if self.frozen:
            return
        self._n += 1
        delta = value - self._mean
        self._mean += delta / self._n
        self._m2 += np.einsum("ins,jns->ijns", delta, value - self._mean)

    def record(self, accepted):
        accepted = np.asarray(accepted, dtype=float)
        self.total_acc += accepted
        self.total_trials += 1
        if self.frozen:
            return
        self._acc += accepted
        self._count += 1
        if self._count >= ADAPT_BATCH:
            delta = min(0.1, 1.0 / np.sqrt(self._batches + 1.0))
            self.log_step += np.where(self._acc / self._count > self.target,
                                      delta, -delta)
            self._acc[...] = 0.0
            self._count = 0
            self._batches += 1
            if self._batches % 5 == 0 and self._n > 20 * self.dim:
                self._refresh_shape()

    def _refresh_shape(self):
        cov = np.moveaxis(self._m2 / (self._n - 1), (0, 1), (-2, -1)).copy()
        trace = np.einsum("...ii->...", cov) / self.dim
        ridge = 1e-8 + 1e-3 * trace
        cov += ridge[..., None, None] * np.eye(self.dim)
        try:
            self.chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            pass

    def freeze(self):
        self.frozen = True

    def acceptance_rate(self):
        if self.total_trials == 0:
            return float("nan")
        return float(np.mean(self.total_acc) / self.total_trials)


class VectorAdapter:
    """Single-block version of BlockAdapter for coefficient groups."""

    def __init__(self, dim, target=None, initial_step=None):
        self.dim = dim
        self.target = target if target is not None else (0.44 if dim == 1
                                                         else 0.234)
        self.log_step = np.log(initial_step if initial_step is not None
                               else (0.5 if dim == 1 else 1.19 / np.sqrt(dim)))
        self.chol = np.eye(dim)
        self.frozen = False
        self._mean = np.zeros(dim)
        self._m2 = np.zeros((dim, dim))
        self._n = 0
        self._acc = 0.0
        self._count = 0
        self._batches = 0
        self.total_acc = 0.0
        self.total_trials = 0

    @property
    def step(self):
        return float(np.exp(self.log_step))

    def propose(self, rng):
        return self.step * self.chol @ rng.standard_normal(self.dim)

    def observe(self, value):
        if self.frozen:
            return
        self._n += 1
        delta = value - self._mean
        self._mean += delta / self._n
        self._m2 += np.outer(delta, value - self._mean)

    def record(self, accepted):
        self.total_acc += bool(accepted)
        self.total_trials += 1
        if self.frozen:
            return
        self._acc += bool(accepted)
        self._count += 1
        if self._count >= ADAPT_BATCH:
            delta = min(0.1, 1.0 / np.sqrt(self._batches + 1.0))
            self.log_step += delta if self._acc / self._count > self.target else -delta
            self._acc = 0.0
            self._count = 0
            self._batches += 1
            if self._batches % 5 == 0 and self._n > 20 * self.dim:
                cov = self._m2 / (self._n - 1)
                cov = cov + (1e-8 + 1e-3 * np.trace(cov) / self.dim) * np.eye(self.dim)
                try:
                    self.chol = np.linalg.cholesky(cov)
                except np.linalg.LinAlgError:
                    pass

    def freeze(self):
        self.frozen = True

    def acceptance_rate(self):
        if self.total_trials == 0:
            return float("nan")
        return self.total_acc / self.total_trials


def adaptive_rwm_update(value, logp, log_target, step, rng):
    """One scalar random-walk proposal.

    Returns (value, logp, accepted); the caller owns step adaptation.
    """
    prop = value + step * rng.standard_normal()
    logp_prop = log_target(prop)
    if np.log(rng.random()) < logp_prop - logp:
        return prop, logp_prop, True
    return value, logp, False


def update_sigma(effects, prior_df, prior_scale, rng):
    """Conjugate inverse-Wishart draw for a MVN(0, Sigma) effect matrix.

    effects: (dim, M).  Posterior is IW(prior_df + M, prior_scale + E E^T).
    """
    effects = np.atleast_2d(np.asarray(effects, dtype=float))
    df = prior_df + effects.shape[1]
    scale = np.asarray(prior_scale, dtype=float) + effects @ effects.T
    draw = np.atleast_2d(invwishart.rvs(df=df, scale=scale, random_state=rng))
    if not np.all(np.isfinite(draw)) or np.any(np.linalg.eigvalsh(draw) <= 0):
        raise NumericalError("inverse-Wishart draw left the SPD cone")
    return draw


# ---------------------------------------------------------------------------
# one chain


@dataclass
class _Options:
    iterations: int
    burn_in: int
    thin: int
    init_scale: float
    prior_only: bool
    odds_blocks: tuple
    store_random_effects: bool


class _Chain:
    def __init__(self, md: ModelData, variant: ModelVariant, prior: PriorSpec,
                 seed_seq: np.random.SeedSequence, opts: _Options):
        self.md = md
        self.variant = variant
        self.prior = prior
        self.opts = opts
        self.rng = np.random.default_rng(seed_seq)
        self.df0, self.scale0, self.q = prior.resolve(md)
        self.n_sw = md.n_switching
        self.grid = (md.n_areas, md.n_steps)
        self._zero_em = np.zeros(self.grid)
        self._x_contrib = self._contributions(md.x_layout, md.x)
        self._z_contrib = self._contributions(md.z_layout, md.z)
        self._init_state()
        self._init_adapters()

    # -- setup ------------------------------------------------------------

    @staticmethod
    def _contributions(layout, arrays):
        out = []
        for f in range(layout.n_flat):
            out.append([(k, arrays[k][:, :, c]) for k, c in layout.slots_of(f)])
        return out

    def _prior_of(self, cls):
        return self.prior.coef_priors[cls]

    def _init_state(self):
        md, rng = self.md, self.rng
        scale = self.opts.init_scale
        for attempt in range(20):
            p = self._draw_initial_params(scale)
            forced = md.y > 0
            bits = np.where(forced[1:], 1,
                            (rng.random((self.n_sw,) + md.y.shape[1:]) < 0.5))
            self.p = p
            self.bits = bits.astype(np.int8)
            if not self.variant.has_latent_states:
                self.bits = np.ones_like(self.bits)
            self.lls = log_odds_field(md, p)
            self.em = self._em_at(self.lls)
            self.pres_base = presence_logit_base(md, p, self.variant)
            self.re_prec = np.linalg.inv(p.re_cov)
            if np.isfinite(self.em.sum()):
                self.em_total = float(self.em.sum())
                self.cell_ll = np.zeros(self.grid)
                return
        raise NumericalError("could not initialize a finite posterior "
                             "after 20 attempts")

    def _draw_initial_params(self, scale) -> ParameterState:
        md, rng, n_sw = self.md, self.rng, self.n_sw
        draw = lambda cls, size: (self._prior_of(cls)[0]
                                  + self._prior_of(cls)[1] * scale
                                  * rng.standard_normal(size))
        intercept_mean = draw("intercept_mean", n_sw)
        intercept_sd = np.maximum(
            np.abs(rng.standard_normal(n_sw)) * self.prior.intercept_sd_scale
            * scale, 0.05)
        re_cov = np.atleast_2d(invwishart.rvs(df=self.df0, scale=self.scale0,
                                              random_state=rng))
        vals, vecs = np.linalg.eigh(re_cov)
        re_cov = (vecs * np.clip(vals, 1e-3, 1e3)) @ vecs.T
        live_coupling = self.variant.has_state_coupling
        live_z = self.variant.has_presence_covariates
        interaction = np.zeros((n_sw, n_sw))
        if live_coupling:
            interaction = draw("interaction", (n_sw, n_sw))
            np.fill_diagonal(interaction, 0.0)
        return ParameterState.create(
            mixing=rng.uniform(0.02, 0.98, md.n_diseases),
            intercept_mean=intercept_mean,
            intercept_sd=intercept_sd,
            area_intercepts=(intercept_mean[:, None] + intercept_sd[:, None]
                             * rng.standard_normal((n_sw, md.n_areas))),
            odds_coefs=draw("odds", md.x_layout.n_flat),
            re_cov=re_cov,
            random_effects=np.zeros((n_sw, md.n_areas, md.n_steps)),
            presence_intercepts=(draw("presence_intercept", n_sw)
                                 if self.variant.has_latent_states
                                 else np.zeros(n_sw)),
            presence_coefs=(draw("presence", md.z_layout.n_flat) if live_z
                            else np.zeros(md.z_layout.n_flat)),
            persistence=(draw("persistence", n_sw) if live_coupling
                         else np.zeros(n_sw)),
            interaction=interaction,
            init_presence=self.q,
        )

    def _init_adapters(self):
        md, n_sw = self.md, self.n_sw
        self.ad_mixing = ScalarAdapter(md.n_diseases)
        self.ad_mixing_shift = ScalarAdapter(md.n_diseases)
        self.lag_mean = md.lag_log1p.mean(axis=(1, 2))
        self.ad_area = ScalarAdapter((n_sw, md.n_areas))
        self.ad_shift = ScalarAdapter(n_sw)
        self.ad_sd = ScalarAdapter(n_sw)
        self.ad_phi = BlockAdapter(self.grid, n_sw)
        blocks = []
        declared = [tuple(b) for b in self.opts.odds_blocks]
        flat_names = list(md.x_layout.flat_names)
        used: set[int] = set()
        for names in declared:
            idx = []
            for name in names:
                if name not in flat_names:
                    raise ValueError(f"unknown odds coefficient {name!r} in block")
                f = flat_names.index(name)
                if f in used:
                    raise ValueError(f"odds coefficient {name!r} in two blocks")
                used.add(f)
                idx.append(f)
            blocks.append((tuple(idx), VectorAdapter(len(idx))))
        for f in range(md.x_layout.n_flat):
            if f not in used:
                blocks.append(((f,), VectorAdapter(1)))
        self.odds_blocks = blocks
        self.ad_pres_int = ScalarAdapter(n_sw)
        self.ad_pres_coef = ScalarAdapter(md.z_layout.n_flat)
        self.ad_persistence = ScalarAdapter(n_sw)
        self.pairs = [(j, k) for j in range(n_sw) for k in range(n_sw) if j != k]
        self.ad_interaction = ScalarAdapter(len(self.pairs))

    def _all_adapters(self):
        ads = {"mixing": self.ad_mixing, "mixing_shift": self.ad_mixing_shift,
               "area_intercepts": self.ad_area,
               "intercept_shift": self.ad_shift,
               "intercept_sd": self.ad_sd, "random_effects": self.ad_phi,
               "presence_intercepts": self.ad_pres_int,
               "presence_coefs": self.ad_pres_coef,
               "persistence": self.ad_persistence,
               "interaction": self.ad_interaction}
        for i, (_, ad) in enumerate(self.odds_blocks):
            ads[f"odds_block{i}"] = ad
        return ads

    # -- likelihood pieces -------------------------------------------------

    def _em_at(self, lls):
        if self.opts.prior_only:
            return self._zero_em
        md = self.md
        return emission_at_bits(lls, self.bits[:, :, 1:], md.y_cur[1:],
                                md.totals_cur, md.logcoef)

    # -- update steps -------------------------------------------------------

    def update_mixing(self):
        md, rng = self.md, self.rng
        u = self.p.mixing_logit
        step = self.ad_mixing.step
        accepted = np.zeros(md.n_diseases, dtype=bool)
        for m in range(md.n_diseases):
            prop = u[m] + step[m] * rng.standard_normal()
            shift = expit(prop) - expit(u[m])
            if m == 0:
                lls_new = self.lls - shift * md.lag_log1p[0]
            else:
                lls_new = self.lls.copy()
                lls_new[m - 1] = lls_new[m - 1] + shift * md.lag_log1p[m]
            em_new = self._em_at(lls_new)
            dlp = (em_new.sum() - self.em_total
                   + _logit_jacobian(prop) - _logit_jacobian(u[m]))
            if np.log(rng.random()) < dlp:
                u[m] = prop
                self.lls = lls_new
                self.em = em_new
                self.em_total = float(em_new.sum())
                accepted[m] = True
        self.ad_mixing.record(accepted)

    def update_mixing_coupled(self):
        """Move a mixing exponent together with the levels it trades with.

        The baseline exponent scales every row through the shared lag
        denominator, so its average effect is indistinguishable from
        translating both intercept levels at once; every other exponent
        trades the same way against its own disease's level.  Proposing
        the exponent jointly with the compensating translation (the mean
        lagged log count times the exponent change) follows that ridge,
        leaving only the centered lag variation to resist the move.
        """
        md, rng = self.md, self.rng
        mean_pr, sd_pr = self._prior_of("intercept_mean")
        u = self.p.mixing_logit
        step = self.ad_mixing_shift.step
        accepted = np.zeros(md.n_diseases, dtype=bool)
        for m in range(md.n_diseases):
            prop = u[m] + step[m] * rng.standard_normal()
            shift = expit(prop) - expit(u[m])
            mu = self.p.intercept_mean
            if m == 0:
                comp = self.lag_mean[0] * shift
                lls_new = self.lls - shift * md.lag_log1p[0] + comp
                dprior = (_normal_logpdf(mu + comp, mean_pr, sd_pr)
                          - _normal_logpdf(mu, mean_pr, sd_pr)).sum()
            else:
                comp = -self.lag_mean[m] * shift
                lls_new = self.lls.copy()
                lls_new[m - 1] = lls_new[m - 1] + shift * md.lag_log1p[m] + comp
                dprior = (_normal_logpdf(mu[m - 1] + comp, mean_pr, sd_pr)
                          - _normal_logpdf(mu[m - 1], mean_pr, sd_pr))
            em_new = self._em_at(lls_new)
            dlp = (em_new.sum() - self.em_total + dprior
                   + _logit_jacobian(prop) - _logit_jacobian(u[m]))
            if np.log(rng.random()) < dlp:
                u[m] = prop
                if m == 0:
                    self.p.intercept_mean += comp
                    self.p.area_intercepts += comp
                else:
                    self.p.intercept_mean[m - 1] += comp
                    self.p.area_intercepts[m - 1] += comp
                self.lls = lls_new
                self.em = em_new
                self.em_total = float(em_new.sum())
                accepted[m] = True
        self.ad_mixing_shift.record(accepted)

    def update_odds_coefs(self):
        rng = self.rng
        mean, sd = self._prior_of("odds")
        for idx, adapter in self.odds_blocks:
            delta = adapter.propose(rng)
            lls_new = self.lls.copy()
            for d, f in zip(np.atleast_1d(delta), idx):
                for k, col in self._x_contrib[f]:
                    lls_new[k] = lls_new[k] + d * col
            em_new = self._em_at(lls_new)
            cur = self.p.odds_coefs[list(idx)]
            dprior = (_normal_logpdf(cur + delta, mean, sd)
                      - _normal_logpdf(cur, mean, sd)).sum()
            accepted = np.log(rng.random()) < em_new.sum() - self.em_total + dprior
            if accepted:
                self.p.odds_coefs[list(idx)] = cur + delta
                self.lls = lls_new
                self.em = em_new
                self.em_total = float(em_new.sum())
            adapter.observe(self.p.odds_coefs[list(idx)])
            adapter.record(accepted)

    def update_random_effects(self):
        rng = self.rng
        phi = self.p.random_effects
        eps = self.ad_phi.propose(rng)
        phi_new = phi + eps
        lls_new = self.lls + eps
        em_new = self._em_at(lls_new)
        quad_old = np.einsum("ins,ij,jns->ns", phi, self.re_prec, phi)
        quad_new = np.einsum("ins,ij,jns->ns", phi_new, self.re_prec, phi_new)
        dlp = (em_new - self.em) - 0.5 * (quad_new - quad_old)
        accept = np.log(rng.random(self.grid)) < dlp
        phi[:, accept] = phi_new[:, accept]
        self.lls[:, accept] = lls_new[:, accept]
        if not self.opts.prior_only:
            self.em = np.where(accept, em_new, self.em)
            self.em_total = float(self.em.sum())
        self.ad_phi.observe(phi)
        self.ad_phi.record(accept)

    def update_re_cov(self):
        flat = self.p.random_effects.reshape(self.n_sw, -1)
        self.p.re_cov = update_sigma(flat, self.df0, self.scale0, self.rng)
        self.re_prec = np.linalg.inv(self.p.re_cov)

    def update_random_intercepts(self):
        md, rng = self.md, self.rng
        mean_pr, sd_pr = self._prior_of("intercept_mean")
        steps = self.ad_area.step
        accepted = np.zeros((self.n_sw, md.n_areas), dtype=bool)
        for k in range(self.n_sw):
            delta = steps[k] * rng.standard_normal(md.n_areas)
            lls_new = self.lls.copy()
            lls_new[k] = lls_new[k] + delta[:, None]
            em_new = self._em_at(lls_new)
            d_em = (em_new - self.em).sum(axis=1)
            a = self.p.area_intercepts[k]
            dprior = (_normal_logpdf(a + delta, self.p.intercept_mean[k],
                                     self.p.intercept_sd[k])
                      - _normal_logpdf(a, self.p.intercept_mean[k],
                                       self.p.intercept_sd[k]))
            acc = np.log(rng.random(md.n_areas)) < d_em + dprior
            a[acc] += delta[acc]
            self.lls[k, acc] = lls_new[k, acc]
            if not self.opts.prior_only:
                self.em[acc] = em_new[acc]
            accepted[k] = acc
        if not self.opts.prior_only:
            self.em_total = float(self.em.sum())
        self.ad_area.record(accepted)
        # conjugate hierarchical mean
        for k in range(self.n_sw):
            var = self.p.intercept_sd[k] ** 2
            prec = md.n_areas / var + 1.0 / sd_pr ** 2
            loc = (self.p.area_intercepts[k].sum() / var
                   + mean_pr / sd_pr ** 2) / prec
            self.p.intercept_mean[k] = loc + rng.standard_normal() / np.sqrt(prec)
        # random-walk on log sd with half-normal prior
        steps_sd = self.ad_sd.step
        acc_sd = np.zeros(self.n_sw, dtype=bool)
        hn_scale = self.prior.intercept_sd_scale
        for k in range(self.n_sw):
            cur = self.p.intercept_sd[k]
            prop = cur * np.exp(steps_sd[k] * rng.standard_normal())
            a = self.p.area_intercepts[k]
            dlp = (_normal_logpdf(a, self.p.intercept_mean[k], prop).sum()
                   - _normal_logpdf(a, self.p.intercept_mean[k], cur).sum()
                   - 0.5 * (prop ** 2 - cur ** 2) / hn_scale ** 2
                   + np.log(prop) - np.log(cur))
            if np.log(rng.random()) < dlp:
                self.p.intercept_sd[k] = prop
                acc_sd[k] = True
        self.ad_sd.record(acc_sd)

    def update_intercept_shift(self):
        """Translate one disease's area intercepts and their mean together.

        Per-area proposals move intercepts around their current mean, and
        the conjugate mean update tracks their average, so the common level
        itself only drifts one area at a time.  Adding the same offset to
        the mean and to every area intercept leaves the centered deviations
        fixed: only the hyperprior on the mean and the likelihood change.
        """
        rng = self.rng
        mean_pr, sd_pr = self._prior_of("intercept_mean")
        steps = self.ad_shift.step
        acc = np.zeros(self.n_sw, dtype=bool)
        for k in range(self.n_sw):
            delta = steps[k] * rng.standard_normal()
            lls_new = self.lls.copy()
            lls_new[k] = lls_new[k] + delta
            em_new = self._em_at(lls_new)
            mu = self.p.intercept_mean[k]
            dlp = (em_new.sum() - self.em_total
                   + _normal_logpdf(mu + delta, mean_pr, sd_pr)
                   - _normal_logpdf(mu, mean_pr, sd_pr))
            if np.log(rng.random()) < dlp:
                self.p.intercept_mean[k] = mu + delta
                self.p.area_intercepts[k] += delta
                self.lls = lls_new
                self.em = em_new
                self.em_total = float(em_new.sum())
                acc[k] = True
        self.ad_shift.record(acc)

    def update_presence_params(self):
        if not self.variant.has_latent_states:
            return
        md, rng, n_sw = self.md, self.rng, self.n_sw
        prev = self.bits[:, :, :-1].astype(float)
        target_bits = self.bits[:, :, 1:]
        if self.variant.has_state_coupling:
            coup = (self.p.persistence[:, None, None] * prev
                    + np.einsum("jns,jk->kns", prev, self.p.interaction))
        else:
            coup = np.zeros_like(self.pres_base)
        logits = self.pres_base + coup
        cur = np.array([_bernoulli_loglik(logits[k], target_bits[k]).sum()
                        for k in range(n_sw)])

        def try_scalar(k, delta_field):
            new_logits = logits[k] + delta_field
            new_ll = _bernoulli_loglik(new_logits, target_bits[k]).sum()
            return new_logits, new_ll

        # intercepts
        mean, sd = self._prior_of("presence_intercept")
        step = self.ad_pres_int.step
        acc = np.zeros(n_sw, dtype=bool)
        for k in range(n_sw):
            delta = step[k] * rng.standard_normal()
            new_logits, new_ll = try_scalar(k, delta)
            v = self.p.presence_intercepts[k]
            dlp = (new_ll - cur[k] + _normal_logpdf(v + delta, mean, sd)
                   - _normal_logpdf(v, mean, sd))
            if np.log(rng.random()) < dlp:
                self.p.presence_intercepts[k] = v + delta
                self.pres_base[k] = self.pres_base[k] + delta
                logits[k] = new_logits
                cur[k] = new_ll
                acc[k] = True
        self.ad_pres_int.record(acc)
        # covariate coefficients
        if self.variant.has_presence_covariates and md.z_layout.n_flat:
            mean, sd = self._prior_of("presence")
            step = self.ad_pres_coef.step
            acc = np.zeros(md.z_layout.n_flat, dtype=bool)
            for f in range(md.z_layout.n_flat):
                delta = step[f] * rng.standard_normal()
                users = self._z_contrib[f]
                news = [try_scalar(k, delta * col) for k, col in users]
                v = self.p.presence_coefs[f]
                dlp = (sum(nl for _, nl in news)
                       - sum(cur[k] for k, _ in users)
                       + _normal_logpdf(v + delta, mean, sd)
                       - _normal_logpdf(v, mean, sd))
                if np.log(rng.random()) < dlp:
                    self.p.presence_coefs[f] = v + delta
                    for (k, col), (new_logits, new_ll) in zip(users, news):
                        self.pres_base[k] = self.pres_base[k] + delta * col
                        logits[k] = new_logits
                        cur[k] = new_ll
                    acc[f] = True
            self.ad_pres_coef.record(acc)
        if not self.variant.has_state_coupling:
            return
        # own-state persistence
        mean, sd = self._prior_of("persistence")
        step = self.ad_persistence.step
        acc = np.zeros(n_sw, dtype=bool)
        for k in range(n_sw):
            delta = step[k] * rng.standard_normal()
            new_logits, new_ll = try_scalar(k, delta * prev[k])
            v = self.p.persistence[k]
            dlp = (new_ll - cur[k] + _normal_logpdf(v + delta, mean, sd)
                   - _normal_logpdf(v, mean, sd))
            if np.log(rng.random()) < dlp:
                self.p.persistence[k] = v + delta
                logits[k] = new_logits
                cur[k] = new_ll
                acc[k] = True
        self.ad_persistence.record(acc)
        # cross-disease interactions
        mean, sd = self._prior_of("interaction")
        step = self.ad_interaction.step
        acc = np.zeros(len(self.pairs), dtype=bool)
        for ix, (j, k) in enumerate(self.pairs):
            delta = step[ix] * rng.standard_normal()
            new_logits, new_ll = try_scalar(k, delta * prev[j])
            v = self.p.interaction[j, k]
            dlp = (new_ll - cur[k] + _normal_logpdf(v + delta, mean, sd)
                   - _normal_logpdf(v, mean, sd))
            if np.log(rng.random()) < dlp:
                self.p.interaction[j, k] = v + delta
                logits[k] = new_logits
                cur[k] = new_ll
                acc[ix] = True
        self.ad_interaction.record(acc)

    def refresh_and_sample_states(self):
        """Rebuild caches from the parameter arrays and draw new states."""
        md = self.md
        self.lls = log_odds_field(md, self.p)
        if not self.variant.has_latent_states:
            self.em = self._em_at(self.lls)
            self.em_total = float(self.em.sum())
            self.cell_ll = self.em.copy()
            return
        if self.opts.prior_only:
            table = np.zeros(self.grid + (md.n_states,))
        else:
            table = emission_table(md, self.lls)
        self.pres_base = presence_logit_base(md, self.p, self.variant)
        trans = transition_tensor(self.pres_base, self.p.persistence,
                                  self.p.interaction, self.variant, md.states)
        init = initial_distribution(self.p.init_presence)
        result = forward_filter(table, trans, init)
        enc = backward_sample(result, trans, init, self.rng)
        self.enc = enc
        self.bits = bits_from_encoded(enc, self.n_sw)
        # a flat emission table integrates to exactly nothing, not rounding noise
        self.cell_ll = (np.zeros(self.grid) if self.opts.prior_only
                        else result.cell_loglik)
        gather = (enc[:, 1:] - 1)[:, :, None]
        self.em = np.take_along_axis(table, gather, axis=2)[:, :, 0]
        self.em_total = float(self.em.sum())

    # -- main loop ----------------------------------------------------------

    def run(self):
        opts = self.opts
        n_keep = (opts.iterations - opts.burn_in) // opts.thin
        store = self._allocate(n_keep)
        if not self.variant.has_latent_states:
            self.enc = np.ones((self.md.n_areas, self.md.n_times), dtype=np.int64)
        kept = 0
        steps_at_burn_end = None
        for it in range(1, opts.iterations + 1):
            if it == opts.burn_in + 1:
                for ad in self._all_adapters().values():
                    ad.freeze()
                steps_at_burn_end = self._step_snapshot()
            self.update_mixing()
            self.update_mixing_coupled()
            self.update_odds_coefs()
            self.update_random_effects()
            self.update_re_cov()
            self.update_random_intercepts()
            self.update_intercept_shift()
            self.update_presence_params()
            self.refresh_and_sample_states()
            if it > opts.burn_in and (it - opts.burn_in) % opts.thin == 0:
                self._record(store, kept)
                kept += 1
        if steps_at_burn_end is None:
            steps_at_burn_end = self._step_snapshot()
        store["_acceptance"] = {name: ad.acceptance_rate()
                                for name, ad in self._all_adapters().items()}
        store["_steps_burn_end"] = steps_at_burn_end
        store["_steps_final"] = self._step_snapshot()
        return store

    def _step_snapshot(self):
        out = {}
        for name, ad in self._all_adapters().items():
            out[name] = np.array(ad.log_step, dtype=float, copy=True)
        return out

    def _allocate(self, n_keep):
        md, n_sw = self.md, self.n_sw
        store = {
            "mixing": np.empty((n_keep, md.n_diseases)),
            "intercept_mean": np.empty((n_keep, n_sw)),
            "intercept_sd": np.empty((n_keep, n_sw)),
            "odds_coefs": np.empty((n_keep, md.x_layout.n_flat)),
            "area_intercepts": np.empty((n_keep, n_sw, md.n_areas)),
            "re_cov": np.empty((n_keep, n_sw, n_sw)),
            "presence_intercepts": np.empty((n_keep, n_sw)),
            "presence_coefs": np.empty((n_keep, md.z_layout.n_flat)),
            "persistence": np.empty((n_keep, n_sw)),
            "interaction": np.empty((n_keep, n_sw, n_sw)),
            "cell_loglik": np.empty((n_keep, md.n_areas, md.n_steps)),
            "marginal_loglik": np.empty(n_keep),
        }
        if self.opts.store_random_effects:
            store["random_effects"] = np.empty((n_keep, n_sw, md.n_areas,
                                                md.n_steps))
        if self.variant.has_latent_states:
            store["states"] = np.empty((n_keep, md.n_areas, md.n_times),
                                       dtype=np.int16)
        return store

    def _record(self, store, i):
        p = self.p
        store["mixing"][i] = p.mixing
        store["intercept_mean"][i] = p.intercept_mean
        store["intercept_sd"][i] = p.intercept_sd
        store["odds_coefs"][i] = p.odds_coefs
        store["area_intercepts"][i] = p.area_intercepts
        store["re_cov"][i] = p.re_cov
        store["presence_intercepts"][i] = p.presence_intercepts
        store["presence_coefs"][i] = p.presence_coefs
        store["persistence"][i] = p.persistence
        store["interaction"][i] = p.interaction
        store["cell_loglik"][i] = self.cell_ll
        store["marginal_loglik"][i] = self.cell_ll.sum()
        if "random_effects" in store:
            store["random_effects"][i] = p.random_effects
        if "states" in store:
            store["states"][i] = self.enc


# ---------------------------------------------------------------------------
# public entry point


@dataclass
class PosteriorDraws:
    """Retained draws from every chain plus bookkeeping."""

    variant: ModelVariant
    disease_names: tuple[str, ...]
    area_names: tuple[str, ...]
    x_names: tuple[str, ...]
    z_names: tuple[str, ...]
    init_presence: np.ndarray
    chains: list[dict]
    iterations: int
    burn_in: int
    thin: int
    seed: int
    n_times: int

    @property
    def n_chains(self) -> int:
        return len(self.chains)

    @property
    def n_draws(self) -> int:
        return 0 if not self.chains else len(self.chains[0]["mixing"])

    def per_chain(self, name: str) -> np.ndarray:
        return np.stack([c[name] for c in self.chains])

    def stacked(self, name: str) -> np.ndarray:
        return np.concatenate([c[name] for c in self.chains])

    def scalar_series(self) -> dict[str, np.ndarray]:
        """Named scalar traces, each (chains, draws); live families only."""
        sw = self.disease_names[1:]
        out: dict[str, np.ndarray] = {}

        def add(name, arr):
            out[name] = arr

        mixing = self.per_chain("mixing")
        for k, d in enumerate(self.disease_names):
            add(f"mixing.{d}", mixing[:, :, k])
        for field_name, label in (("intercept_mean", "intercept_mean"),
                                  ("intercept_sd", "intercept_sd")):
            arr = self.per_chain(field_name)
            for k, d in enumerate(sw):
                add(f"{label}.{d}", arr[:, :, k])
        odds = self.per_chain("odds_coefs")
        for f, name in enumerate(self.x_names):
            add(f"odds.{name}", odds[:, :, f])
        re_cov = self.per_chain("re_cov")
        for a in range(len(sw)):
            for b in range(a, len(sw)):
                add(f"re_cov.{sw[a]}.{sw[b]}", re_cov[:, :, a, b])
        if self.variant.has_latent_states:
            arr = self.per_chain("presence_intercepts")
            for k, d in enumerate(sw):
                add(f"presence_intercept.{d}", arr[:, :, k])
        if self.variant.has_presence_covariates:
            arr = self.per_chain("presence_coefs")
            for f, name in enumerate(self.z_names):
                add(f"presence.{name}", arr[:, :, f])
        if self.variant.has_state_coupling:
            arr = self.per_chain("persistence")
            for k, d in enumerate(sw):
                add(f"persistence.{d}", arr[:, :, k])
            inter = self.per_chain("interaction")
            for j in range(len(sw)):
                for k in range(len(sw)):
                    if j != k:
                        add(f"interaction.{sw[j]}.{sw[k]}", inter[:, :, j, k])
        return out

    def diagnostics(self) -> dict[str, tuple[float, float]]:
        """R-hat and ESS per scalar series."""
        return {name: (gelman_rubin(tr), effective_sample_size(tr))
                for name, tr in self.scalar_series().items()}


def _run_chain_worker(args):
    md, variant, prior, seed_seq, opts = args
    return _Chain(md, variant, prior, seed_seq, opts).run()


def run_gibbs(md: ModelData, variant: ModelVariant,
              prior: PriorSpec | None = None, *, iterations: int,
              burn_in: int, thin: int = 1, chains: int = 3, seed: int = 0,
              threads: int = 1, init_scale: float = 1.0,
              prior_only: bool = False, odds_blocks=(),
              store_random_effects: bool = True) -> PosteriorDraws:
    """Run the Gibbs sampler; returns retained draws for every chain.

    Retains iteration m when m > burn_in and (m - burn_in) % thin == 0.
    iterations == burn_in == 0 is a valid zero-draw run.  threads > 1
    distributes chains over processes; results are identical either way
    because each chain owns one spawned seed stream.
    """
    if iterations < 0 or burn_in < 0 or iterations < burn_in:
        raise ValueError("need iterations >= burn_in >= 0")
    if thin < 1 or chains < 1 or threads < 1:
        raise ValueError("thin, chains and threads must be >= 1")
    if init_scale <= 0:
        raise ValueError("init_scale must be positive")
    prior = prior or PriorSpec()
    _, _, q = prior.resolve(md)
    opts = _Options(iterations, burn_in, thin, init_scale, prior_only,
                    tuple(tuple(b) for b in odds_blocks), store_random_effects)
    seeds = np.random.SeedSequence(seed).spawn(chains)
    jobs = [(md, variant, prior, s, opts) for s in seeds]
    if threads > 1 and chains > 1:
        ctx = multiprocessing.get_context("fork")
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=min(threads, chains), mp_context=ctx) as pool:
            results = list(pool.map(_run_chain_worker, jobs))
    else:
        results = [_run_chain_worker(j) for j in jobs]
    return PosteriorDraws(
        variant=variant,
        disease_names=md.disease_names,
        area_names=tuple(md.area_names),
        x_names=md.x_layout.flat_names,
        z_names=md.z_layout.flat_names,
        init_presence=q,
        chains=results,
        iterations=iterations,
        burn_in=burn_in,
        thin=thin,
        seed=seed,
        n_times=md.n_times,
    )
