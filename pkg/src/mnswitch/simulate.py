"""Generative machinery: forward panel simulation and epidemic oracles.

simulate_panel runs the fitted observation model forward with known
parameters: presence states evolve by the coupled Markov chains (or stay
all-present for the ARMN variant), each cell gets a fresh random effect
from the declared covariance, and counts are multinomial given the totals.
The multinomial model never generates totals, so the design either carries
a totals matrix or the simulator draws totals from a negative binomial.

simulate_reed_frost draws per-disease Poisson count paths whose conditional
means follow a chain-binomial recipe: susceptible share times reproduction
number times damped previous counts, optionally inflated by weighted
prevalence in neighbouring areas.  Conditioning those independent Poisson
counts on their sum yields exactly the multinomial observation model with
relative odds equal to ratios of effective reproduction numbers;
check_conditioning_identity verifies the distributional identity by Monte
Carlo and the parameter mapping numerically.

correlation_study measures the correlation between two switching diseases'
counts, conditional on the total, that multivariate normal random effects
on the log relative odds induce, together with the closed-form baseline of
the plain multinomial.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.special import expit
from scipy.stats import multinomial as _multinomial_dist

from .data import AreaMetadata, CovariateBundle, DiseasePanel, build_model_data
from .errors import NumericalError
from .model import CoefLayout, ModelData, ModelVariant, ParameterState
from .posterior import _mixture_field, _multinomial_chain

__all__ = [
    "ConditioningReport",
    "CorrelationStudy",
    "PanelDesign",
    "ReedFrostParams",
    "ReedFrostResult",
    "SimulatedPanel",
    "check_conditioning_identity",
    "conditional_means",
    "correlation_study",
    "mapping_discrepancy",
    "multinomial_baseline_correlation",
    "simulate_panel",
    "simulate_reed_frost",
]


# ---------------------------------------------------------------------------
# chain-binomial (Reed-Frost) epidemic simulator


@dataclass
class ReedFrostParams:
    """Inputs of the chain-binomial epidemic simulator.

    Shapes: K diseases, N areas, S generation steps, P covariates.  The
    log reproduction number of disease k in area i at step s is

        intercepts[k, i] + covariates[i, s] @ coefs[k]
                         + psi[k, i, s] + shared[i, s]

    with psi drawn from MVN(0, re_cov) independently over areas and steps.
    susceptibles may be given per step (K, N, S) or constant (K, N).
    weights[j, i] is the influence of area j on area i; spatial holds the
    per-disease exponents on weighted neighbour prevalence plus one.
    """

    intercepts: np.ndarray                 # (K, N)
    susceptibles: np.ndarray               # (K, N, S) or (K, N)
    population: np.ndarray                 # (N,)
    mixing: np.ndarray                     # (K,) exponents in [0, 1]
    re_cov: np.ndarray                     # (K, K)
    n_steps: int
    coefs: np.ndarray | None = None        # (K, P)
    covariates: np.ndarray | None = None   # (N, S, P)
    shared: np.ndarray | None = None       # (N, S) common log factor
    weights: np.ndarray | None = None      # (N, N)
    spatial: np.ndarray | None = None      # (K,)

    def __post_init__(self):
        self.intercepts = np.asarray(self.intercepts, dtype=float)
        if self.intercepts.ndim != 2:
            raise ValueError("intercepts must have shape (diseases, areas)")
        k, n = self.intercepts.shape
        s = int(self.n_steps)
        if s < 1:
            raise ValueError("need at least one generation step")
        self.n_steps = s
        self.population = np.asarray(self.population, dtype=float)
        if self.population.shape != (n,) or np.any(self.population <= 0):
            raise ValueError("population must hold one positive value per area")
        sus = np.asarray(self.susceptibles, dtype=float)
        if sus.shape == (k, n):
            sus = np.repeat(sus[:, :, None], s, axis=2)
        if sus.shape != (k, n, s):
            raise ValueError(f"susceptibles must have shape {(k, n, s)} or {(k, n)}")
        if np.any(sus < 0) or np.any(sus > self.population[None, :, None]):
            raise ValueError("susceptibles must lie in [0, population]")
        self.susceptibles = sus
        self.mixing = np.asarray(self.mixing, dtype=float)
        if self.mixing.shape != (k,) or np.any(self.mixing < 0) \
                or np.any(self.mixing > 1):
            raise ValueError("mixing exponents must lie in [0, 1], one per disease")
        cov = np.asarray(self.re_cov, dtype=float)
        if cov.shape != (k, k) or not np.allclose(cov, cov.T):
            raise ValueError("re_cov must be a symmetric (diseases, diseases) matrix")
        if np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ValueError("re_cov must be positive definite")
        self.re_cov = cov
        if (self.coefs is None) != (self.covariates is None):
            raise ValueError("coefs and covariates must be given together")
        if self.coefs is None:
            self.coefs = np.zeros((k, 0))
            self.covariates = np.zeros((n, s, 0))
        else:
            self.coefs = np.asarray(self.coefs, dtype=float)
            self.covariates = np.asarray(self.covariates, dtype=float)
            if self.coefs.ndim != 2 or self.coefs.shape[0] != k:
                raise ValueError("coefs must have shape (diseases, covariates)")
            want = (n, s, self.coefs.shape[1])
            if self.covariates.shape != want:
                raise ValueError(f"covariates must have shape {want}")
        self.shared = (np.zeros((n, s)) if self.shared is None
                       else np.asarray(self.shared, dtype=float))
        if self.shared.shape != (n, s):
            raise ValueError(f"shared factor must have shape {(n, s)}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (n, n) or np.any(w < 0):
                raise ValueError("weights must be a non-negative (areas, areas) matrix")
            if np.any(np.diag(w) != 0):
                raise ValueError("weights must have a zero diagonal")
            self.weights = w
        self.spatial = (np.zeros(k) if self.spatial is None
                        else np.asarray(self.spatial, dtype=float))
        if self.spatial.shape != (k,):
            raise ValueError("spatial exponents must hold one value per disease")

    @property
    def n_diseases(self) -> int:
        return self.intercepts.shape[0]

    @property
    def n_areas(self) -> int:
        return self.intercepts.shape[1]


def conditional_means(params: ReedFrostParams, y_prev, psi,
                      step: int) -> np.ndarray:
    """Poisson means for one generation given the previous counts.

    y_prev and psi have shape (K, N).  The mean is the susceptible share
    times the reproduction number times (y_prev + 1)^mixing, times the
    weighted-neighbour-prevalence factor when weights are set.
    """
    y_prev = np.asarray(y_prev, dtype=float)
    log_r = params.intercepts + psi + params.shared[None, :, step]
    if params.coefs.shape[1]:
        log_r = log_r + np.einsum("np,kp->kn", params.covariates[:, step],
                                  params.coefs)
    phi = (params.susceptibles[:, :, step] / params.population
           * np.exp(log_r) * (y_prev + 1.0) ** params.mixing[:, None])
    if params.weights is not None:
        prev = y_prev @ params.weights
        phi = phi * (prev + 1.0) ** params.spatial[:, None]
    return phi


@dataclass
class ReedFrostResult:
    """Simulated count paths plus the randomness and means behind them."""

    counts: np.ndarray           # (K, N, S+1)
    random_effects: np.ndarray   # (K, N, S) psi draws
    means: np.ndarray            # (K, N, S) conditional means after capping
    capped: np.ndarray           # (K, N, S) bool, True where the cap bound

    @property
    def n_capped(self) -> int:
        return int(self.capped.sum())


def _as_initial(params, initial) -> np.ndarray:
    initial = np.asarray(initial)
    want = (params.n_diseases, params.n_areas)
    if initial.shape != want or np.any(initial < 0) \
            or np.any(initial != np.floor(initial)):
        raise ValueError(f"initial counts must be non-negative integers "
                         f"with shape {want}")
    return initial.astype(np.int64)


def simulate_reed_frost(params: ReedFrostParams, initial,
                        rng: np.random.Generator, *,
                        mean_cap: float = 1e6) -> ReedFrostResult:
    """Draw per-disease Poisson count paths of length n_steps + 1.

    initial: (K, N) counts at the first time point.  Conditional means
    above mean_cap are clamped, and flagged in the result, so explosive
    parameter settings cannot overflow the Poisson sampler.
    """
    initial = _as_initial(params, initial)
    if mean_cap <= 0:
        raise ValueError("mean_cap must be positive")
    k, n, s = params.n_diseases, params.n_areas, params.n_steps
    chol = np.linalg.cholesky(params.re_cov)
    counts = np.zeros((k, n, s + 1), dtype=np.int64)
    counts[:, :, 0] = initial
    psi = np.empty((k, n, s))
    means = np.empty((k, n, s))
    capped = np.zeros((k, n, s), dtype=bool)
    for t in range(s):
        psi[:, :, t] = chol @ rng.standard_normal((k, n))
        phi = conditional_means(params, counts[:, :, t], psi[:, :, t], t)
        capped[:, :, t] = phi > mean_cap
        means[:, :, t] = np.minimum(phi, mean_cap)
        counts[:, :, t + 1] = rng.poisson(means[:, :, t])
    return ReedFrostResult(counts, psi, means, capped)


# ---------------------------------------------------------------------------
# Poisson -> multinomial conditioning identity and parameter mapping


def _pi_via_means(params, y_prev, psi, step) -> np.ndarray:
    phi = conditional_means(params, y_prev, psi, step)
    total = phi.sum(axis=0)
    if np.any(total <= 0):
        raise ValueError("the mapping check needs a positive mean total")
    return phi / total


def _pi_via_mapping(params, y_prev, psi, step) -> np.ndarray:
    """Category probabilities rebuilt from the relative-odds parameters.

    The first disease is the baseline: differences of intercepts,
    coefficients and random effects give the log relative favorability,
    the log susceptible ratio enters as an offset, and each disease's
    lagged counts are damped by its own mixing exponent.
    """
    y_prev = np.asarray(y_prev, dtype=float)
    sus = params.susceptibles[:, :, step]
    if np.any(sus[0] <= 0):
        raise ValueError("the mapping needs positive baseline susceptibles")
    with np.errstate(divide="ignore"):
        log_lam = (params.intercepts[1:] - params.intercepts[0]
                   + psi[1:] - psi[0] + np.log(sus[1:] / sus[0]))
    if params.coefs.shape[1]:
        log_lam = log_lam + np.einsum("np,kp->kn", params.covariates[:, step],
                                      params.coefs[1:] - params.coefs[0])
    log_star = (log_lam + params.mixing[1:, None] * np.log1p(y_prev[1:])
                - params.mixing[0] * np.log1p(y_prev[0]))
    if params.weights is not None:
        prev = np.log1p(y_prev @ params.weights)
        log_star = log_star + (params.spatial[1:, None] * prev[1:]
                               - params.spatial[0] * prev[0])
    star = np.exp(log_star)
    den = 1.0 + star.sum(axis=0)
    out = np.empty((params.n_diseases, params.n_areas))
    out[0] = 1.0 / den
    out[1:] = star / den
    return out


def mapping_discrepancy(params: ReedFrostParams, y_prev, psi,
                        step: int = 0) -> tuple[float, float]:
    """Disagreement between the two parameterizations, for one input.

    Returns (pi_error, cov_error): the largest absolute difference between
    the normalized Poisson means and the relative-odds reconstruction of
    the category probabilities, and between the mapped random-effect
    covariance computed by congruence versus by entrywise differencing.
    """
    psi = np.asarray(psi, dtype=float)
    pi_err = float(np.max(np.abs(_pi_via_means(params, y_prev, psi, step)
                                 - _pi_via_mapping(params, y_prev, psi, step))))
    k = params.n_diseases
    diff = np.hstack([-np.ones((k - 1, 1)), np.eye(k - 1)])
    congruence = diff @ params.re_cov @ diff.T
    entrywise = (params.re_cov[1:, 1:] - params.re_cov[1:, :1]
                 - params.re_cov[:1, 1:] + params.re_cov[0, 0])
    cov_err = float(np.max(np.abs(congruence - entrywise)))
    return pi_err, cov_err


def _compositions(total, k):
    """All ordered splits of total into k non-negative integer parts."""
    if k == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in _compositions(total - head, k - 1):
            yield (head,) + rest


@dataclass(frozen=True)
class ConditioningReport:
    """Result of the Poisson-given-total versus multinomial comparison."""

    tv: float                 # total variation distance
    total: int                # the total conditioned on
    acceptance_rate: float    # share of draws hitting the total
    draws: int
    probs: np.ndarray         # (K,) multinomial probabilities used
    pi_error: float           # worst probability-mapping discrepancy
    cov_error: float          # worst covariance-mapping discrepancy


def check_conditioning_identity(params: ReedFrostParams, initial,
                                rng: np.random.Generator, *,
                                draws: int = 1_000_000, total: int | None = None,
                                area: int = 0,
                                mapping_checks: int = 10) -> ConditioningReport:
    """Monte Carlo check that Poisson counts given their sum are multinomial.

    Simulates draws of independent Poisson vectors for one area's first
    generation (random effects fixed at zero), keeps those whose sum equals
    total (default: the rounded expected total), and reports the total
    variation distance between their empirical distribution and the
    multinomial with probabilities proportional to the conditional means.
    Also reports the worst parameter-mapping discrepancy over
    mapping_checks random histories and random-effect draws.
    """
    initial = _as_initial(params, initial)
    draws = int(draws)
    if draws < 1:
        raise ValueError("draws must be positive")
    k = params.n_diseases
    zero_psi = np.zeros((k, params.n_areas))
    phi = conditional_means(params, initial, zero_psi, 0)[:, area]
    if not np.all(np.isfinite(phi)) or phi.sum() <= 0:
        raise ValueError("conditional means must be finite with a positive sum")
    if total is None:
        total = max(int(round(phi.sum())), 1)
    total = int(total)
    sims = rng.poisson(phi, size=(draws, k))
    keep = sims[sims.sum(axis=1) == total]
    rate = keep.shape[0] / draws
    if rate < 1e-4:
        raise NumericalError(
            f"only {keep.shape[0]} of {draws} draws hit total {total}; "
            f"try a total near {phi.sum():.1f}")
    probs = phi / phi.sum()
    comps = np.array(list(_compositions(total, k)), dtype=np.int64)
    exact = np.atleast_1d(_multinomial_dist(total, probs).pmf(comps))
    seen, freq = np.unique(keep, axis=0, return_counts=True)
    empirical = dict(zip(map(tuple, seen), freq / keep.shape[0]))
    tv = 0.5 * sum(abs(empirical.get(tuple(c), 0.0) - p)
                   for c, p in zip(comps, exact))

    pi_err = cov_err = 0.0
    chol = np.linalg.cholesky(params.re_cov)
    for _ in range(int(mapping_checks)):
        history = rng.poisson(3.0, size=(k, params.n_areas))
        psi = chol @ rng.standard_normal((k, params.n_areas))
        step = int(rng.integers(params.n_steps))
        pe, ce = mapping_discrepancy(params, history, psi, step)
        pi_err, cov_err = max(pi_err, pe), max(cov_err, ce)
    return ConditioningReport(float(tv), total, rate, draws, probs,
                              pi_err, cov_err)


# ---------------------------------------------------------------------------
# forward simulation of the observation model


@dataclass
class PanelDesign:
    """Everything the forward simulator needs besides parameters.

    Covariate declarations reuse the fitting-side specs.  Builder kinds are
    evaluated step by step against the counts generated so far, which is
    well defined because every builder reads only lagged counts.
    Standardization is rejected here: generating coefficients are defined
    on the raw builder scale, and a fit of the simulated panel should
    declare the same raw columns to recover them.

    Totals come from the totals matrix when given, otherwise from a
    negative binomial with the configured mean and dispersion.  initial
    optionally pins the counts at the first time point, which the model
    conditions on rather than explains.
    """

    n_times: int
    disease_names: tuple[str, ...]
    area_names: tuple[str, ...] = ()
    meta: AreaMetadata | None = None
    x_specs: dict = field(default_factory=dict)
    z_specs: dict = field(default_factory=dict)
    external: dict = field(default_factory=dict)
    share_x: tuple = ()
    share_z: tuple = ()
    totals: np.ndarray | None = None       # (N, T) integers
    total_mean: float = 10.0
    total_dispersion: float = 5.0
    initial: np.ndarray | None = None      # (K, N) counts at t = 1

    def __post_init__(self):
        if self.n_times < 2:
            raise ValueError("need at least two time points")
        self.disease_names = tuple(str(d) for d in self.disease_names)
        if len(self.disease_names) < 2 \
                or len(set(self.disease_names)) != len(self.disease_names):
            raise ValueError("need a baseline plus distinct switching diseases")
        if self.meta is not None:
            if self.area_names and tuple(self.area_names) != self.meta.area_names:
                raise ValueError("area_names disagree with the area metadata")
            self.area_names = self.meta.area_names
        elif self.area_names:
            self.area_names = tuple(str(a) for a in self.area_names)
        else:
            raise ValueError("area_names or meta must identify the areas")
        for specs in (self.x_specs, self.z_specs):
            for d, cols in specs.items():
                for spec in cols:
                    if spec.standardize:
                        raise ValueError(
                            f"covariate {spec.name!r} for {d!r} requests "
                            "standardization; simulation needs raw columns")
        if self.totals is not None:
            t = np.asarray(self.totals)
            want = (len(self.area_names), self.n_times)
            if t.shape != want:
                raise ValueError(f"totals must have shape {want}")
            if np.any(t < 0) or np.any(t != np.floor(t)):
                raise ValueError("totals must be non-negative integers")
            self.totals = t.astype(np.int64)
        if self.total_mean <= 0 or self.total_dispersion <= 0:
            raise ValueError("total_mean and total_dispersion must be positive")
        if self.initial is not None:
            init = np.asarray(self.initial)
            want = (len(self.disease_names), len(self.area_names))
            if init.shape != want or np.any(init < 0) \
                    or np.any(init != np.floor(init)):
                raise ValueError(f"initial counts must be non-negative "
                                 f"integers with shape {want}")
            self.initial = init.astype(np.int64)

    @property
    def n_diseases(self) -> int:
        return len(self.disease_names)

    @property
    def n_areas(self) -> int:
        return len(self.area_names)


@dataclass
class SimulatedPanel:
    """A generated panel plus the latent truth behind it."""

    md: ModelData
    panel: DiseasePanel
    bundle: CovariateBundle
    truth: ParameterState         # generating parameters, drawn effects included
    states: np.ndarray | None     # (N, T) encoded presence states
    random_effects: np.ndarray    # (K-1, N, T-1)


def _bundle_of(design: PanelDesign, counts) -> CovariateBundle:
    panel = DiseasePanel(counts, design.disease_names, design.area_names)
    return CovariateBundle.build(panel, design.meta,
                                 x_specs=design.x_specs, z_specs=design.z_specs,
                                 external=design.external,
                                 share_x=design.share_x, share_z=design.share_z)


def simulate_panel(design: PanelDesign, params: ParameterState,
                   variant: ModelVariant | str,
                   rng: np.random.Generator) -> SimulatedPanel:
    """Run the observation model forward with known parameters.

    Per step: draw next presence bits from the chains (gated by variant),
    draw a fresh random effect from MVN(0, re_cov), form the mixture
    probabilities and draw counts from the multinomial given the total.
    Absent diseases receive exactly zero counts.  The first time point is
    not modelled: its counts split the first total uniformly across the
    baseline and the initially present diseases unless pinned by
    design.initial, in which case positive pinned counts force presence.
    The random_effects field of params is ignored; the drawn effects are
    returned on the truth parameter state.
    """
    if isinstance(variant, str):
        variant = ModelVariant(variant)
    k, n, t_len = design.n_diseases, design.n_areas, design.n_times
    n_sw, steps = k - 1, t_len - 1
    switching = design.disease_names[1:]
    x_layout = CoefLayout.build(
        switching, [tuple(c.name for c in design.x_specs.get(d, ()))
                    for d in switching], design.share_x)
    z_layout = CoefLayout.build(
        switching, [tuple(c.name for c in design.z_specs.get(d, ()))
                    for d in switching], design.share_z)
    shapes = {"area_intercepts": (n_sw, n), "odds_coefs": (x_layout.n_flat,),
              "presence_coefs": (z_layout.n_flat,), "mixing_logit": (k,),
              "re_cov": (n_sw, n_sw), "presence_intercepts": (n_sw,),
              "persistence": (n_sw,), "interaction": (n_sw, n_sw),
              "init_presence": (n_sw,)}
    for name, want in shapes.items():
        got = getattr(params, name).shape
        if got != want:
            raise ValueError(f"{name} has shape {got}, expected {want}")

    if design.totals is not None:
        totals = design.totals.copy()
    else:
        disp, mean = design.total_dispersion, design.total_mean
        totals = rng.negative_binomial(disp, disp / (disp + mean),
                                       size=(n, t_len)).astype(np.int64)

    counts = np.zeros((k, n, t_len), dtype=np.int64)
    bits = np.ones((n_sw, n, t_len), dtype=np.int64)
    if variant.has_latent_states:
        bits[:, :, 0] = rng.random((n_sw, n)) < params.init_presence[:, None]
    if design.initial is not None:
        if design.totals is not None and np.any(
                design.initial.sum(axis=0) != totals[:, 0]):
            raise ValueError("initial counts disagree with the first totals column")
        counts[:, :, 0] = design.initial
        totals[:, 0] = design.initial.sum(axis=0)
        bits[:, :, 0] |= counts[1:, :, 0] > 0
    else:
        share = np.vstack([np.ones((1, n)), bits[:, :, 0].astype(float)])
        counts[:, :, 0] = _multinomial_chain(rng, totals[:, 0],
                                             share / share.sum(axis=0))

    dynamic = any(spec.kind != "external"
                  for specs in (design.x_specs, design.z_specs)
                  for cols in specs.values() for spec in cols)
    bundle = _bundle_of(design, counts)
    coefs = x_layout.expand(params.odds_coefs)
    pcoefs = z_layout.expand(params.presence_coefs)
    chol = np.linalg.cholesky(params.re_cov)
    zeta = params.mixing
    effects = np.empty((n_sw, n, steps))
    for s in range(steps):
        if dynamic and s:
            bundle = _bundle_of(design, counts)
        if variant.has_latent_states:
            logits = np.broadcast_to(params.presence_intercepts[:, None],
                                     (n_sw, n)).astype(float).copy()
            if variant.has_presence_covariates:
                for m in range(n_sw):
                    if pcoefs[m].size:
                        logits[m] += bundle.z[m][:, s] @ pcoefs[m]
            if variant.has_state_coupling:
                prev = bits[:, :, s].astype(float)
                logits += params.persistence[:, None] * prev
                logits += params.interaction.T @ prev
            bits[:, :, s + 1] = rng.random((n_sw, n)) < expit(logits)
        effects[:, :, s] = chol @ rng.standard_normal((n_sw, n))
        lls = params.area_intercepts + effects[:, :, s]
        lls = lls + zeta[1:, None] * np.log1p(counts[1:, :, s]) \
            - zeta[0] * np.log1p(counts[0, :, s])
        for m in range(n_sw):
            if coefs[m].size:
                lls[m] += bundle.x[m][:, s] @ coefs[m]
        probs = _mixture_field(lls, bits[:, :, s + 1])
        counts[:, :, s + 1] = _multinomial_chain(rng, totals[:, s + 1], probs)

    panel = DiseasePanel(counts, design.disease_names, design.area_names)
    bundle = _bundle_of(design, counts)
    md = build_model_data(panel, bundle)
    truth = replace(params, random_effects=effects)
    truth.validate(md, variant)
    states = None
    if variant.has_latent_states:
        weights = 1 << np.arange(n_sw)
        states = 1 + ((1 - bits) * weights[:, None, None]).sum(axis=0)
    return SimulatedPanel(md, panel, bundle, truth, states, effects)


# ---------------------------------------------------------------------------
# random-effect correlation study


def multinomial_baseline_correlation(alpha2: float, alpha3: float,
                                     total: int) -> float:
    """corr(y_2, y_3 | total) for the plain multinomial, no random effects."""
    e2, e3 = math.exp(alpha2), math.exp(alpha3)
    den = 1.0 + e2 + e3
    p2, p3 = e2 / den, e3 / den
    return (-total * p2 * p3
            / (math.sqrt(total * p2 * (1.0 - p2))
               * math.sqrt(total * p3 * (1.0 - p3))))


@dataclass(frozen=True)
class CorrelationStudy:
    """Marginal count correlation versus random-effect correlation."""

    rho: np.ndarray
    correlation: np.ndarray
    mc_se: np.ndarray
    baseline: float
    total: int
    draws: int

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"rho": self.rho, "correlation": self.correlation,
                             "mc_se": self.mc_se, "baseline": self.baseline})

    def baseline_crossing(self) -> float | None:
        """First rho where the curve crosses the no-random-effect line."""
        diff = self.correlation - self.baseline
        for j in range(diff.size - 1):
            if diff[j] == 0.0:
                return float(self.rho[j])
            if diff[j] * diff[j + 1] < 0:
                frac = diff[j] / (diff[j] - diff[j + 1])
                return float(self.rho[j] + frac * (self.rho[j + 1] - self.rho[j]))
        if diff[-1] == 0.0:
            return float(self.rho[-1])
        return None


def correlation_study(rho_grid, rng: np.random.Generator, *,
                      alpha2: float = math.log(1.14), alpha3: float = 0.0,
                      sigma2: float = 0.75, sigma3: float = 0.8,
                      total: int = 10, draws: int = 1_000_000,
                      batches: int = 10) -> CorrelationStudy:
    """Marginal corr(y_2, y_3 | total) against the random-effect correlation.

    For each rho on the grid: draw correlated perturbations of the two log
    relative odds, form the three-category probabilities, sample counts
    from the multinomial with the fixed total, and record the Pearson
    correlation of the second and third counts.  The standard error is the
    batch-means estimate over the stated number of batches.
    """
    rho = np.atleast_1d(np.asarray(rho_grid, dtype=float))
    if rho.size == 0 or np.any(np.abs(rho) >= 1):
        raise ValueError("rho values must lie strictly in (-1, 1)")
    if total < 1:
        raise ValueError("total must be at least 1")
    if sigma2 <= 0 or sigma3 <= 0:
        raise ValueError("random-effect scales must be positive")
    draws, batches = int(draws), int(batches)
    if batches < 2 or draws < 10 * batches:
        raise ValueError("need at least two batches and 10 draws per batch")
    correlation = np.empty(rho.size)
    mc_se = np.empty(rho.size)
    edges = np.linspace(0, draws, batches + 1).astype(int)
    for g, r in enumerate(rho):
        z1 = rng.standard_normal(draws)
        z2 = rng.standard_normal(draws)
        l2 = alpha2 + sigma2 * z1
        l3 = alpha3 + sigma3 * (r * z1 + math.sqrt(1.0 - r * r) * z2)
        top = np.maximum(np.maximum(l2, l3), 0.0)
        pvals = np.stack([np.exp(-top), np.exp(l2 - top), np.exp(l3 - top)],
                         axis=1)
        pvals /= pvals.sum(axis=1, keepdims=True)
        y = rng.multinomial(total, pvals)
        y2 = y[:, 1].astype(float)
        y3 = y[:, 2].astype(float)
        correlation[g] = np.corrcoef(y2, y3)[0, 1]
        per_batch = [np.corrcoef(y2[a:b], y3[a:b])[0, 1]
                     for a, b in zip(edges[:-1], edges[1:])]
        mc_se[g] = float(np.std(per_batch, ddof=1) / math.sqrt(batches))
    baseline = multinomial_baseline_correlation(alpha2, alpha3, total)
    return CorrelationStudy(rho, correlation, mc_se, baseline,
                            int(total), draws)
