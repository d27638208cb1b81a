"""Shared builders for random panels and parameter states."""
import numpy as np

from mnswitch.model import ModelData, ModelVariant, ParameterState


def make_params(md, **overrides):
    """A valid, mostly-zero ParameterState for md; override what matters."""
    n_sw, n, s = md.n_switching, md.n_areas, md.n_steps
    base = dict(
        mixing=np.full(md.n_diseases, 0.5),
        intercept_mean=np.zeros(n_sw),
        intercept_sd=np.ones(n_sw),
        area_intercepts=np.zeros((n_sw, n)),
        odds_coefs=np.zeros(md.x_layout.n_flat),
        re_cov=np.eye(n_sw),
        random_effects=np.zeros((n_sw, n, s)),
        presence_intercepts=np.zeros(n_sw),
        presence_coefs=np.zeros(md.z_layout.n_flat),
        persistence=np.zeros(n_sw),
        interaction=np.zeros((n_sw, n_sw)),
        init_presence=np.full(n_sw, 0.5),
    )
    base.update(overrides)
    return ParameterState.create(**base)


def random_md(rng, n_diseases=3, n_areas=1, n_times=5, max_count=6,
              n_x=0, n_z=0):
    """Random panel with optional standard-normal covariates."""
    y = rng.integers(0, max_count + 1, size=(n_diseases, n_areas, n_times))
    names = tuple(f"d{k}" for k in range(n_diseases))
    sw = n_diseases - 1
    x = [rng.normal(size=(n_areas, n_times - 1, n_x)) for _ in range(sw)]
    z = [rng.normal(size=(n_areas, n_times - 1, n_z)) for _ in range(sw)]
    return ModelData.from_arrays(y, names, x=x, z=z)


def random_params(md, rng, variant=ModelVariant.MS_ZIARMN, scale=0.8):
    """Draw a valid random ParameterState, respecting variant constraints."""
    n_sw = md.n_switching
    root = rng.normal(size=(n_sw, n_sw)) * 0.4
    re_cov = root @ root.T + np.eye(n_sw) * 0.3
    interaction = rng.normal(size=(n_sw, n_sw)) * scale
    np.fill_diagonal(interaction, 0.0)
    coupled = variant.has_state_coupling
    with_z = variant.has_presence_covariates
    return make_params(
        md,
        mixing=rng.uniform(0.15, 0.85, md.n_diseases),
        intercept_mean=rng.normal(size=n_sw) * scale,
        intercept_sd=rng.uniform(0.2, 1.0, n_sw),
        area_intercepts=rng.normal(size=(n_sw, md.n_areas)) * scale,
        odds_coefs=rng.normal(size=md.x_layout.n_flat) * scale,
        re_cov=re_cov,
        random_effects=rng.normal(size=(n_sw, md.n_areas, md.n_steps)) * 0.5,
        presence_intercepts=rng.normal(size=n_sw) * scale,
        presence_coefs=(rng.normal(size=md.z_layout.n_flat) * scale
                        if with_z else np.zeros(md.z_layout.n_flat)),
        persistence=rng.normal(size=n_sw) * scale if coupled else np.zeros(n_sw),
        interaction=interaction if coupled else np.zeros((n_sw, n_sw)),
        init_presence=rng.uniform(0.1, 0.9, n_sw),
    )
