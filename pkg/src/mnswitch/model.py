"""Core model formulas for switching zero-inflated multinomial panels.

A panel holds counts y[k, i, t] for K diseases (k = 0 is the baseline and is
always present), N areas and T time points.  Conditional on the per-cell total
n_it = sum_k y[k, i, t], counts at t >= 2 follow a multinomial whose
probabilities mix on a latent presence vector S_it over the K-1 non-baseline
("switching") diseases:

    pi_0  = 1 / (1 + sum_j S_j * lam*_j)
    pi_k  = S_k * lam*_k / (1 + sum_j S_j * lam*_j)

lam*_k is the relative odds of a case being disease k rather than baseline,

    lam*_k = lam_k * (y[k, i, t-1] + 1)^zeta_k / (y[0, i, t-1] + 1)^zeta_0
    log lam_k = a0[k, i] + x[k, i, t] . coef_k + re[k, i, t]

with area intercepts a0[k, i] ~ N(mean_k, sd_k^2) and cell-level random
effects re[., i, t] ~ MVN(0, Sigma) correlated across diseases.  Presence
follows one coupled Markov chain per switching disease,

    logit p[k, i, t] = b0[k] + z[k, i, t] . eta_k
                       + persistence[k] * S[k, i, t-1]
                       + sum_{j != k} interaction[j, k] * S[j, i, t-1]

so the joint state S*_it lives on L = 2^(K-1) configurations.  States are
encoded 1..L with index = 1 + sum_k (1 - S_k) * 2^k, i.e. state 1 is
everything present and state L is everything absent.

Array conventions used throughout the package:

  - disease axis first: lls, random effects and presence logits have shape
    (K-1, N, S) where S = T-1 indexes model time t = 2..T (s = t-2);
  - states are stored encoded as (N, T) integers in 1..L;
  - impossible configurations carry log-probability -inf (numpy's float
    infinity), which propagates safely through sums because no +inf value
    is ever produced.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, gammaln, logit


class ModelVariant(enum.Enum):
    """Nested model family: which parts of the switching machinery are live."""

    MS_ZIARMN = "MS_ZIARMN"  # full model: coupled Markov presence chains
    ZIARMN = "ZIARMN"        # presence independent across time (no coupling)
    ZENG = "ZENG"            # presence iid with intercept-only logit
    ARMN = "ARMN"            # no zero inflation, everything always present

    @property
    def has_latent_states(self) -> bool:
        return self is not ModelVariant.ARMN

    @property
    def has_presence_covariates(self) -> bool:
        return self in (ModelVariant.MS_ZIARMN, ModelVariant.ZIARMN)

    @property
    def has_state_coupling(self) -> bool:
        return self is ModelVariant.MS_ZIARMN


# ---------------------------------------------------------------------------
# state encoding


def encode_state(bits) -> int:
    """Encode a presence vector over switching diseases to a 1-based index."""
    bits = np.asarray(bits)
    if bits.ndim != 1 or not np.isin(bits, (0, 1)).all():
        raise ValueError("presence bits must be a 1-d 0/1 vector")
    weights = 1 << np.arange(bits.size)
    return int(1 + ((1 - bits) * weights).sum())


def decode_state(index: int, n_switching: int) -> np.ndarray:
    """Inverse of encode_state; returns the 0/1 presence vector."""
    n_states = 1 << n_switching
    if not 1 <= index <= n_states:
        raise ValueError(f"state index {index} out of range 1..{n_states}")
    absent = (index - 1) >> np.arange(n_switching) & 1
    return (1 - absent).astype(np.int8)


def state_table(n_switching: int) -> np.ndarray:
    """All presence vectors, shape (L, K-1); row l-1 decodes state l."""
    return np.stack([decode_state(l, n_switching)
                     for l in range(1, (1 << n_switching) + 1)])


# ---------------------------------------------------------------------------
# coefficient layout (supports coefficients shared across diseases)


@dataclass(frozen=True)
class CoefLayout:
    """Maps per-disease covariate columns to a flat coefficient vector.

    Sharing groups tie one coefficient to several (disease, column) slots;
    every other slot gets its own entry.  flat order follows first
    appearance scanning diseases then columns.
    """

    disease_names: tuple[str, ...]            # switching diseases only
    col_names: tuple[tuple[str, ...], ...]    # per disease
    col_to_flat: tuple[tuple[int, ...], ...]  # per disease, per column
    flat_names: tuple[str, ...]

    @property
    def n_flat(self) -> int:
        return len(self.flat_names)

    def expand(self, flat: np.ndarray) -> list[np.ndarray]:
        """Per-disease coefficient vectors from the flat vector."""
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_flat,):
            raise ValueError(f"expected {self.n_flat} coefficients, got {flat.shape}")
        return [flat[np.asarray(ix, dtype=int)] if ix else np.empty(0)
                for ix in self.col_to_flat]

    def slots_of(self, flat_index: int) -> list[tuple[int, int]]:
        """(disease, column) slots bound to one flat coefficient."""
        return [(d, c)
                for d, cols in enumerate(self.col_to_flat)
                for c, f in enumerate(cols) if f == flat_index]

    @classmethod
    def build(cls, disease_names, col_names, sharing_groups=()) -> "CoefLayout":
        disease_names = tuple(disease_names)
        col_names = tuple(tuple(c) for c in col_names)
        if len(col_names) != len(disease_names):
            raise ValueError("one column-name tuple per switching disease required")
        slot_group: dict[tuple[int, int], int] = {}
        groups = [tuple((str(d), str(c)) for d, c in g) for g in sharing_groups]
        lookup = {name: i for i, name in enumerate(disease_names)}
        for gi, group in enumerate(groups):
            if len(group) < 2:
                raise ValueError("a sharing group needs at least two slots")
            for dname, cname in group:
                if dname not in lookup:
                    raise ValueError(f"unknown disease {dname!r} in sharing group")
                d = lookup[dname]
                if cname not in col_names[d]:
                    raise ValueError(f"unknown covariate {cname!r} for disease {dname!r}")
                slot = (d, col_names[d].index(cname))
                if slot in slot_group:
                    raise ValueError(f"slot {dname}.{cname} appears in two sharing groups")
                slot_group[slot] = gi
        flat_names: list[str] = []
        group_flat: dict[int, int] = {}
        col_to_flat = []
        for d, cols in enumerate(col_names):
            ix = []
            for c, cname in enumerate(cols):
                gi = slot_group.get((d, c))
                if gi is None:
                    ix.append(len(flat_names))
                    flat_names.append(f"{disease_names[d]}.{cname}")
                elif gi in group_flat:
                    ix.append(group_flat[gi])
                else:
                    group_flat[gi] = len(flat_names)
                    ix.append(len(flat_names))
                    names = {c2 for _, c2 in groups[gi]}
                    shared = names.pop() if len(names) == 1 else "+".join(
                        f"{d2}.{c2}" for d2, c2 in groups[gi])
                    flat_names.append(f"shared.{shared}")
            col_to_flat.append(tuple(ix))
        return cls(disease_names, col_names, tuple(col_to_flat), tuple(flat_names))

    @classmethod
    def empty(cls, disease_names) -> "CoefLayout":
        names = tuple(disease_names)
        return cls(names, tuple(() for _ in names), tuple(() for _ in names), ())


# ---------------------------------------------------------------------------
# parameters


@dataclass
class ParameterState:
    """One point in parameter space.

    Mixing exponents are stored on the logit scale (mixing_logit, length K
    including the baseline) so samplers can move unconstrained; the natural
    (0,1) values are exposed via .mixing.  interaction[j, k] is the effect of
    switching disease j's previous presence on disease k's chain; its
    diagonal must be zero.
    """

    intercept_mean: np.ndarray       # (K-1,)
    intercept_sd: np.ndarray         # (K-1,)
    area_intercepts: np.ndarray      # (K-1, N)
    odds_coefs: np.ndarray           # (x_layout.n_flat,)
    mixing_logit: np.ndarray         # (K,)
    re_cov: np.ndarray               # (K-1, K-1)
    random_effects: np.ndarray       # (K-1, N, T-1)
    presence_intercepts: np.ndarray  # (K-1,)
    presence_coefs: np.ndarray       # (z_layout.n_flat,)
    persistence: np.ndarray          # (K-1,)
    interaction: np.ndarray          # (K-1, K-1), zero diagonal
    init_presence: np.ndarray        # (K-1,) fixed presence probs at t=1

    @property
    def mixing(self) -> np.ndarray:
        return expit(self.mixing_logit)

    @classmethod
    def create(cls, *, mixing, **kw) -> "ParameterState":
        """Build from natural-scale mixing exponents in (0, 1)."""
        mixing = np.asarray(mixing, dtype=float)
        if np.any(mixing <= 0) or np.any(mixing >= 1):
            raise ValueError("mixing exponents must lie strictly in (0, 1)")
        kw = {k: np.asarray(v, dtype=float) for k, v in kw.items()}
        return cls(mixing_logit=logit(mixing), **kw)

    def copy(self) -> "ParameterState":
        return replace(self, **{f: getattr(self, f).copy()
                                for f in self.__dataclass_fields__})

    def validate(self, md: "ModelData", variant: ModelVariant) -> None:
        n_sw, N, S = md.n_switching, md.n_areas, md.n_steps
        shapes = {
            "intercept_mean": (n_sw,), "intercept_sd": (n_sw,),
            "area_intercepts": (n_sw, N), "odds_coefs": (md.x_layout.n_flat,),
            "mixing_logit": (md.n_diseases,), "re_cov": (n_sw, n_sw),
            "random_effects": (n_sw, N, S), "presence_intercepts": (n_sw,),
            "presence_coefs": (md.z_layout.n_flat,), "persistence": (n_sw,),
            "interaction": (n_sw, n_sw), "init_presence": (n_sw,),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ValueError(f"{name} has shape {got}, expected {want}")
        if np.any(self.intercept_sd <= 0):
            raise ValueError("intercept sds must be positive")
        if np.any(np.diag(self.interaction) != 0):
            raise ValueError("interaction diagonal must be zero")
        if not np.allclose(self.re_cov, self.re_cov.T):
            raise ValueError("random-effect covariance must be symmetric")
        if np.any(np.linalg.eigvalsh(self.re_cov) <= 0):
            raise ValueError("random-effect covariance must be positive definite")
        if np.any(self.init_presence <= 0) or np.any(self.init_presence >= 1):
            raise ValueError("initial presence probabilities must lie in (0, 1)")
        if not variant.has_state_coupling:
            if np.any(self.persistence != 0) or np.any(self.interaction != 0):
                raise ValueError(f"{variant.value} requires zero coupling parameters")
        if not variant.has_presence_covariates and np.any(self.presence_coefs != 0):
            raise ValueError(f"{variant.value} admits no presence covariates")


# ---------------------------------------------------------------------------
# data in model coordinates


@dataclass
class ModelData:
    """Array view of one panel plus covariates, everything the formulas need.

    x[k] and z[k] hold covariate values for switching disease k at model
    times t = 2..T, shape (N, T-1, P_k).  Derived fields are filled by
    from_arrays.
    """

    y: np.ndarray                 # (K, N, T) counts
    disease_names: tuple[str, ...]
    x: tuple[np.ndarray, ...]
    z: tuple[np.ndarray, ...]
    x_layout: CoefLayout
    z_layout: CoefLayout
    area_names: tuple[str, ...] = ()
    totals: np.ndarray = field(init=False)
    y_cur: np.ndarray = field(init=False)      # (K, N, S) counts at t >= 2
    totals_cur: np.ndarray = field(init=False)
    lag_log1p: np.ndarray = field(init=False)  # (K, N, S) log(y[t-1] + 1)
    logcoef: np.ndarray = field(init=False)    # (N, S) multinomial coefficient

    def __post_init__(self):
        y = np.asarray(self.y)
        if y.ndim != 3:
            raise ValueError("counts must have shape (diseases, areas, times)")
        if y.shape[0] != len(self.disease_names):
            raise ValueError("one disease name per count layer required")
        if y.shape[0] < 2:
            raise ValueError("need a baseline plus at least one switching disease")
        if y.shape[2] < 2:
            raise ValueError("need at least two time points")
        if np.any(y < 0) or np.any(y != np.floor(y)):
            raise ValueError("counts must be non-negative integers")
        self.y = y.astype(np.int64)
        if not self.area_names:
            self.area_names = tuple(f"area{i}" for i in range(y.shape[1]))
        n_sw = y.shape[0] - 1
        for name, covs in (("x", self.x), ("z", self.z)):
            if len(covs) != n_sw:
                raise ValueError(f"{name} needs one array per switching disease")
            for arr in covs:
                if arr.shape[:2] != (y.shape[1], y.shape[2] - 1):
                    raise ValueError(f"{name} arrays must have shape (areas, T-1, p)")
        self.totals = self.y.sum(axis=0)
        self.y_cur = self.y[:, :, 1:]
        self.totals_cur = self.totals[:, 1:]
        self.lag_log1p = np.log1p(self.y[:, :, :-1].astype(float))
        self.logcoef = (gammaln(self.totals_cur + 1.0)
                        - gammaln(self.y_cur + 1.0).sum(axis=0))

    @classmethod
    def from_arrays(cls, y, disease_names, x=None, z=None,
                    x_layout=None, z_layout=None, area_names=()) -> "ModelData":
        y = np.asarray(y)
        sw = tuple(disease_names[1:])
        n, s = y.shape[1], y.shape[2] - 1
        if x is None:
            x = tuple(np.empty((n, s, 0)) for _ in sw)
        if z is None:
            z = tuple(np.empty((n, s, 0)) for _ in sw)
        x = tuple(np.asarray(a, dtype=float) for a in x)
        z = tuple(np.asarray(a, dtype=float) for a in z)
        if x_layout is None:
            x_layout = CoefLayout.build(sw, [tuple(f"x{j}" for j in range(a.shape[2]))
                                             for a in x])
        if z_layout is None:
            z_layout = CoefLayout.build(sw, [tuple(f"z{j}" for j in range(a.shape[2]))
                                             for a in z])
        return cls(y, tuple(disease_names), x, z, x_layout, z_layout,
                   tuple(area_names))

    @property
    def n_diseases(self) -> int:
        return self.y.shape[0]

    @property
    def n_switching(self) -> int:
        return self.y.shape[0] - 1

    @property
    def n_areas(self) -> int:
        return self.y.shape[1]

    @property
    def n_times(self) -> int:
        return self.y.shape[2]

    @property
    def n_steps(self) -> int:
        """Model time steps t = 2..T."""
        return self.y.shape[2] - 1

    @property
    def n_states(self) -> int:
        return 1 << self.n_switching

    @property
    def states(self) -> np.ndarray:
        return state_table(self.n_switching)


# ---------------------------------------------------------------------------
# emission side


def relative_odds(lam, y_prev, y_prev_base, zeta, zeta_base):
    """lam* = lam (y_prev+1)^zeta / (y_prev_base+1)^zeta_base."""
    return lam * (np.asarray(y_prev) + 1.0) ** zeta \
        / (np.asarray(y_prev_base) + 1.0) ** zeta_base


def log_favorability(area_intercept, x, coefs, random_effect=0.0):
    """Log relative favorability before the autoregressive adjustment."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(area_intercept + x @ np.atleast_1d(coefs) + random_effect)


def log_odds_field(md: ModelData, params: ParameterState) -> np.ndarray:
    """log lam* for every switching disease and cell, shape (K-1, N, S)."""
    coefs = md.x_layout.expand(params.odds_coefs)
    zeta = params.mixing
    lls = params.area_intercepts[:, :, None] + params.random_effects
    lls = lls + zeta[1:, None, None] * md.lag_log1p[1:] \
        - zeta[0] * md.lag_log1p[0]
    for k in range(md.n_switching):
        if coefs[k].size:
            lls[k] += md.x[k] @ coefs[k]
    return lls


def _log_denominator(lls, bits):
    """log(1 + sum over present diseases of exp(lls)); disease axis first."""
    present = bits.astype(bool)
    m = np.where(present, lls, -np.inf).max(axis=0)
    m0 = np.maximum(m, 0.0)
    terms = np.exp(np.where(present, lls - m0, -np.inf)).sum(axis=0)
    return m0 + np.log(np.exp(-m0) + terms)


def mixture_probs(state: int, lam_star) -> np.ndarray:
    """Category probabilities (length K) for one cell at one presence state.

    Absent diseases get probability exactly 0; the vector sums to 1 up to
    float rounding.
    """
    lam_star = np.asarray(lam_star, dtype=float)
    if np.any(lam_star <= 0) or not np.all(np.isfinite(lam_star)):
        raise ValueError("relative odds must be positive and finite")
    bits = decode_state(state, lam_star.size)
    lls = np.log(lam_star)
    log_den = _log_denominator(lls[:, None], bits[:, None])[0]
    probs = np.empty(lam_star.size + 1)
    probs[0] = np.exp(-log_den)
    probs[1:] = np.where(bits, np.exp(lls - log_den), 0.0)
    return probs


def emission_logpmf(y, state: int, lam_star, total: int) -> float:
    """Multinomial log-pmf of one cell's counts under one presence state.

    Returns -inf when a positive count falls on an absent disease.  The
    total must match sum(y); a mismatch is a caller error.
    """
    y = np.asarray(y)
    if y.sum() != total:
        raise ValueError(f"total {total} does not match counts summing to {y.sum()}")
    probs = mixture_probs(state, lam_star)
    if np.any((probs == 0) & (y > 0)):
        return -np.inf
    out = gammaln(total + 1.0) - gammaln(y + 1.0).sum()
    live = y > 0
    return float(out + (y[live] * np.log(probs[live])).sum())


def emission_at_bits(lls, bits, y_sw, totals, logcoef):
    """Vectorized multinomial log-pmf at given presence bits.

    lls, bits, y_sw: (K-1, ...); totals, logcoef: (...).  Cells where an
    absent disease has a positive count come back -inf.
    """
    present = bits.astype(bool)
    log_den = _log_denominator(lls, present)
    score = np.where(present, y_sw * lls, 0.0).sum(axis=0)
    out = logcoef + score - totals * log_den
    violated = (~present & (y_sw > 0)).any(axis=0)
    return np.where(violated, -np.inf, out)


def emission_table(md: ModelData, lls) -> np.ndarray:
    """Emission log-pmf for every cell and state, shape (N, S, L)."""
    out = np.empty((md.n_areas, md.n_steps, md.n_states))
    for l, bits in enumerate(md.states):
        out[:, :, l] = emission_at_bits(lls, bits[:, None, None],
                                        md.y_cur[1:], md.totals_cur, md.logcoef)
    return out


# ---------------------------------------------------------------------------
# presence side


def presence_prob(intercept, z, coefs, prev_bits, k, persistence, interaction,
                  variant: ModelVariant) -> float:
    """Probability that switching disease k is present given the last state."""
    logit_p = float(intercept)
    if variant.has_presence_covariates:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        logit_p += float(z @ np.atleast_1d(coefs)) if z.size else 0.0
    if variant.has_state_coupling:
        prev = np.asarray(prev_bits, dtype=float)
        logit_p += persistence[k] * prev[k]
        logit_p += float(prev @ np.asarray(interaction)[:, k])
    return float(expit(logit_p))


def presence_logit_base(md: ModelData, params: ParameterState,
                        variant: ModelVariant) -> np.ndarray:
    """Presence logits before state coupling, shape (K-1, N, S)."""
    base = np.broadcast_to(params.presence_intercepts[:, None, None],
                           (md.n_switching, md.n_areas, md.n_steps)).copy()
    if variant.has_presence_covariates:
        coefs = md.z_layout.expand(params.presence_coefs)
        for k in range(md.n_switching):
            if coefs[k].size:
                base[k] += md.z[k] @ coefs[k]
    return base


def coupling_offsets(persistence, interaction, table) -> np.ndarray:
    """Additive logit shift per previous state, shape (L, K-1)."""
    bits = table.astype(float)
    return bits * np.asarray(persistence) + bits @ np.asarray(interaction)


def transition_matrix(base, persistence, interaction,
                      variant: ModelVariant) -> np.ndarray:
    """One cell's state transition matrix, rows = previous state."""
    base = np.asarray(base, dtype=float)
    table = state_table(base.size)
    out = transition_tensor(base[:, None, None], persistence, interaction,
                            variant, table)
    return out[0, 0]


def transition_tensor(base, persistence, interaction, variant: ModelVariant,
                      table=None) -> np.ndarray:
    """Transition matrices for every cell, shape (N, S, L, L).

    base: presence logits without coupling, (K-1, N, S).  Row l-1 holds the
    distribution of the next state given previous state l; rows sum to 1 up
    to float rounding by construction.
    """
    n_sw = base.shape[0]
    if table is None:
        table = state_table(n_sw)
    n_states = table.shape[0]
    if variant.has_state_coupling:
        offsets = coupling_offsets(persistence, interaction, table)
    else:
        offsets = np.zeros((n_states, n_sw))
    out = np.empty(base.shape[1:] + (n_states, n_states))
    for l in range(n_states):
        p = expit(base + offsets[l][:, None, None])  # (K-1, N, S)
        for m, bits in enumerate(table):
            factors = np.where(bits[:, None, None].astype(bool), p, 1.0 - p)
            out[:, :, l, m] = factors.prod(axis=0)
    return out


def initial_distribution(init_presence) -> np.ndarray:
    """Distribution of the encoded state at t = 1, shape (L,)."""
    q = np.asarray(init_presence, dtype=float)
    table = state_table(q.size)
    probs = np.where(table.astype(bool), q, 1.0 - q).prod(axis=1)
    return probs


def _bernoulli_loglik(logits, bits):
    """Stable sum-free elementwise Bernoulli log-likelihood."""
    logits = np.asarray(logits, dtype=float)
    return np.where(bits.astype(bool),
                    -np.logaddexp(0.0, -logits), -np.logaddexp(0.0, logits))


def presence_loglik(md: ModelData, params: ParameterState, bits,
                    variant: ModelVariant) -> float:
    """Log-probability of a presence path: initial term plus chain terms.

    bits: (K-1, N, T) presence indicators for every switching disease.
    """
    q = params.init_presence[:, None]
    first = np.where(bits[:, :, 0].astype(bool), np.log(q), np.log1p(-q)).sum()
    logits = presence_logit_base(md, params, variant)
    if variant.has_state_coupling:
        prev = bits[:, :, :-1].astype(float)
        logits = logits + params.persistence[:, None, None] * prev \
            + np.einsum("jns,jk->kns", prev, params.interaction)
    return float(first + _bernoulli_loglik(logits, bits[:, :, 1:]).sum())


# ---------------------------------------------------------------------------
# complete-data likelihood


def bits_from_encoded(encoded, n_switching: int) -> np.ndarray:
    """Presence bits (K-1, N, T) from encoded states (N, T)."""
    table = state_table(n_switching)
    return np.moveaxis(table[np.asarray(encoded) - 1], -1, 0)


def complete_data_loglik(md: ModelData, params: ParameterState, states,
                         variant: ModelVariant) -> float:
    """Joint log-density of counts and presence states given parameters.

    states: encoded (N, T) array, or None for the ARMN variant where
    everything is always present.  The density conditions on the observed
    totals and on the first observation, so only emissions at t >= 2 enter.
    """
    params.validate(md, variant)
    lls = log_odds_field(md, params)
    if not variant.has_latent_states:
        if states is not None and np.any(states != 1):
            raise ValueError("ARMN admits no absent states")
        bits = np.ones((md.n_switching, md.n_areas, md.n_steps), dtype=np.int8)
        return float(emission_at_bits(lls, bits, md.y_cur[1:],
                                      md.totals_cur, md.logcoef).sum())
    states = np.asarray(states)
    if states.shape != (md.n_areas, md.n_times):
        raise ValueError("states must have shape (areas, times)")
    bits = bits_from_encoded(states, md.n_switching)
    emit = emission_at_bits(lls, bits[:, :, 1:], md.y_cur[1:],
                            md.totals_cur, md.logcoef).sum()
    return float(emit + presence_loglik(md, params, bits, variant))
