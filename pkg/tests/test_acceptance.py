"""Acceptance checks, one test per numbered criterion.

Each test computes its verdict, prints a single line

    [criterion N] label: PASS/FAIL (measurements)

and then asserts, so a complete run shows nine lines.  Run with

    pytest tests/test_acceptance.py -v -s

to see the lines as they complete.  The parameter-recovery and
model-comparison entries each take several minutes; everything else is
seconds to a couple of minutes.
"""
import time

import numpy as np
import pytest
import yaml

from mnswitch.cli import main as cli_main
from mnswitch.data import CovariateSpec
from mnswitch.diagnostics import effective_sample_size, gelman_rubin
from mnswitch.ffbs import (
    backward_sample,
    enumerate_area,
    filter_panel,
    forward_filter,
    model_tables,
    smoothed_marginals,
)
from mnswitch.mcmc import (
    PriorSpec,
    ScalarAdapter,
    VectorAdapter,
    adaptive_rwm_update,
    run_gibbs,
    update_sigma,
)
from mnswitch.model import ModelVariant, ParameterState, mixture_probs, transition_tensor
from mnswitch.posterior import waic
from mnswitch.simulate import (
    PanelDesign,
    ReedFrostParams,
    check_conditioning_identity,
    correlation_study,
    simulate_panel,
)

from conftest import random_md, random_params


def report(num: int, label: str, ok: bool, detail: str) -> bool:
    verdict = "PASS" if ok else "FAIL"
    print(f"\n[criterion {num}] {label}: {verdict} ({detail})", flush=True)
    return ok


# ---------------------------------------------------------------------------
# 1. forward filter against brute-force path enumeration


def test_criterion_1_filter_matches_enumeration():
    t0 = time.time()
    rng = np.random.default_rng(314)
    worst = 0.0
    for _ in range(50):
        md = random_md(rng, n_areas=1, n_times=5)
        params = random_params(md, rng)
        res = filter_panel(md, params, ModelVariant.MS_ZIARMN)
        _, trans, init = model_tables(md, params, ModelVariant.MS_ZIARMN)
        oracle = enumerate_area(md, params, ModelVariant.MS_ZIARMN, 0)
        worst = max(worst, abs(res.loglik - oracle.loglik))
        worst = max(worst, float(np.abs(res.filtered[0] - oracle.filtered).max()))
        sm = smoothed_marginals(res, trans, init)
        worst = max(worst, float(np.abs(sm[0] - oracle.smoothed).max()))

    # backward sampling against the exact path posterior, one more setting
    md = random_md(rng, n_areas=1, n_times=5)
    params = random_params(md, rng)
    emission, trans, init = model_tables(md, params, ModelVariant.MS_ZIARMN)
    oracle = enumerate_area(md, params, ModelVariant.MS_ZIARMN, 0)
    n_rep = 200_000
    em_t = np.broadcast_to(emission, (n_rep,) + emission.shape[1:])
    tr_t = np.broadcast_to(trans, (n_rep,) + trans.shape[1:])
    res = forward_filter(em_t, tr_t, init)
    paths = backward_sample(res, tr_t, init, np.random.default_rng(99))
    n_states = init.size
    code = np.zeros(n_rep, dtype=np.int64)
    for t in range(paths.shape[1]):
        code = code * n_states + (paths[:, t] - 1)
    emp = np.bincount(code, minlength=n_states ** paths.shape[1]) / n_rep
    exact = np.zeros_like(emp)
    ocode = np.zeros(oracle.paths.shape[0], dtype=np.int64)
    for t in range(oracle.paths.shape[1]):
        ocode = ocode * n_states + (oracle.paths[:, t] - 1)
    exact[ocode] = np.exp(oracle.log_probs)
    tv = 0.5 * float(np.abs(emp - exact).sum())

    elapsed = time.time() - t0
    ok = worst < 1e-10 and tv < 0.01 and elapsed < 30
    assert report(1, "forward filter matches exhaustive enumeration", ok,
                  f"max marginal error {worst:.1e} over 50 settings (tol 1e-10), "
                  f"path-sampling TV {tv:.4f} at 2e5 draws (tol 0.01), "
                  f"{elapsed:.1f}s (limit 30s)")


# ---------------------------------------------------------------------------
# 2. structural zeros: absent diseases never produce counts


def _ms_panel(rng, n_areas, n_times, **design_kw):
    design = PanelDesign(
        n_times=n_times,
        disease_names=("d0", "d1", "d2"),
        area_names=tuple(f"a{i:02d}" for i in range(n_areas)),
        **design_kw)
    shapes = random_md(rng, n_areas=n_areas, n_times=n_times)
    params = random_params(shapes, rng, scale=0.6)
    return simulate_panel(design, params, ModelVariant.MS_ZIARMN, rng)


def test_criterion_2_structural_zero_law():
    rng = np.random.default_rng(7)
    ok = True

    # forward simulations: the law holds at every time point
    sim_cells = 0
    for _ in range(25):
        sim = _ms_panel(rng, n_areas=8, n_times=26, total_mean=8.0)
        bits = sim.md.states[sim.states - 1]  # (N, T, K-1)
        for k in range(sim.md.n_switching):
            ok &= bool(np.all(sim.md.y[k + 1][bits[:, :, k] == 0] == 0))
            sim_cells += bits[:, :, k].size

    # posterior state draws from a fitted panel; the emission binds the
    # law at t >= 2, the first time point carries no observation term
    sim = _ms_panel(rng, n_areas=6, n_times=20, total_mean=10.0)
    draws = run_gibbs(sim.md, ModelVariant.MS_ZIARMN, PriorSpec(),
                      iterations=400, burn_in=100, thin=5, chains=1, seed=13,
                      init_scale=0.5)
    states = draws.stacked("states")      # (D, N, T)
    bits = sim.md.states[states - 1]      # (D, N, T, K-1)
    draw_cells = 0
    for k in range(sim.md.n_switching):
        y_rep = np.broadcast_to(sim.md.y[k + 1][:, 1:], states[:, :, 1:].shape)
        ok &= bool(np.all(y_rep[bits[:, :, 1:, k] == 0] == 0))
        draw_cells += bits[:, :, 1:, k].size

    # positive counts pin the filtered presence probability at exactly one:
    # states with the disease absent carry exactly zero filtered mass
    filt_cells = 0
    pos_cells = 0
    for _ in range(100):
        md = random_md(rng, n_areas=5, n_times=12, max_count=9)
        params = random_params(md, rng)
        res = filter_panel(md, params, ModelVariant.MS_ZIARMN)
        absent = ~md.states.astype(bool)  # (L, K-1)
        for k in range(md.n_switching):
            off_mass = res.filtered[:, :, absent[:, k]].sum(axis=2)
            pos = md.y[k + 1][:, 1:] > 0
            ok &= bool(np.all(off_mass[pos] == 0.0))
            filt_cells += pos.size
            pos_cells += int(pos.sum())

    enough = min(sim_cells, draw_cells, filt_cells) >= 10_000
    ok = ok and enough
    assert report(2, "absent diseases never carry counts", ok,
                  f"{sim_cells} simulated cells, {draw_cells} posterior draw "
                  f"cells, {filt_cells} filtered cells ({pos_cells} positive); "
                  f"all respect the law")


# ---------------------------------------------------------------------------
# 3. probabilities normalize


def test_criterion_3_probability_normalization():
    rng = np.random.default_rng(11)
    worst_mix = 0.0
    for _ in range(10_000):
        n_sw = int(rng.integers(1, 4))
        lam = np.exp(rng.normal(size=n_sw) * 1.5)
        state = int(rng.integers(1, (1 << n_sw) + 1))
        p = mixture_probs(state, lam)
        worst_mix = max(worst_mix, abs(float(p.sum()) - 1.0))

    worst_tr = 0.0
    n_rows = 0
    for _ in range(100):
        n_sw = int(rng.integers(1, 4))
        base = rng.normal(size=(n_sw, 10, 10)) * 2.0
        persistence = rng.normal(size=n_sw) * 1.5
        inter = rng.normal(size=(n_sw, n_sw)) * 1.5
        np.fill_diagonal(inter, 0.0)
        tens = transition_tensor(base, persistence, inter,
                                 ModelVariant.MS_ZIARMN)
        worst_tr = max(worst_tr, float(np.abs(tens.sum(axis=-1) - 1.0).max()))
        n_rows += tens.shape[0] * tens.shape[1] * tens.shape[2]

    ok = worst_mix < 1e-12 and worst_tr < 1e-12
    assert report(3, "mixture and transition probabilities normalize", ok,
                  f"mixture sum error {worst_mix:.1e} over 10000 draws, "
                  f"transition row error {worst_tr:.1e} over {n_rows} rows "
                  f"(tol 1e-12)")


# ---------------------------------------------------------------------------
# 4. parameter recovery at panel scale


@pytest.mark.slow
def test_criterion_4_parameter_recovery():
    rng = np.random.default_rng(2026)
    n_sw, n_areas, n_times = 2, 40, 52
    ext = {
        "x1": rng.normal(size=(n_areas, n_times - 1)),
        "x2": rng.normal(size=(n_areas, n_times - 1)),
        "z1": rng.normal(size=(n_areas, n_times - 1)),
    }
    xspec = [CovariateSpec("x1", kind="external", standardize=False),
             CovariateSpec("x2", kind="external", standardize=False)]
    zspec = [CovariateSpec("z1", kind="external", standardize=False)]
    design = PanelDesign(
        n_times=n_times,
        disease_names=("d0", "d1", "d2"),
        area_names=tuple(f"a{i:02d}" for i in range(n_areas)),
        x_specs={"d1": list(xspec), "d2": list(xspec)},
        z_specs={"d1": list(zspec), "d2": list(zspec)},
        external=ext,
        total_mean=15.0, total_dispersion=8.0)
    sds = np.array([0.75, 0.8])
    re_cov = np.array([[sds[0] ** 2, 0.59 * sds[0] * sds[1]],
                       [0.59 * sds[0] * sds[1], sds[1] ** 2]])
    mu_true = np.array([np.log(1.14), 0.0])
    sd_true = np.array([0.3, 0.25])
    truth = ParameterState.create(
        mixing=np.array([0.44, 0.36, 0.43]),
        intercept_mean=mu_true,
        intercept_sd=sd_true,
        area_intercepts=rng.normal(mu_true[:, None], sd_true[:, None],
                                   (n_sw, n_areas)),
        odds_coefs=np.array([0.3, -0.4, 0.2, 0.5]),
        re_cov=re_cov,
        random_effects=np.zeros((n_sw, n_areas, n_times - 1)),
        presence_intercepts=np.array([-1.0, -1.5]),
        presence_coefs=np.array([0.8, 0.6]),
        persistence=np.array([2.5, 3.0]),
        interaction=np.array([[0.0, 0.7], [0.5, 0.0]]),
        init_presence=np.array([0.3, 0.2]),
    )
    sim = simulate_panel(design, truth, ModelVariant.MS_ZIARMN, rng)

    t0 = time.time()
    draws = run_gibbs(sim.md, ModelVariant.MS_ZIARMN, PriorSpec(),
                      iterations=20_000, burn_in=5_000, thin=10, chains=3,
                      seed=7, threads=3, init_scale=0.1)
    elapsed = time.time() - t0

    truth_map = {
        "mixing.d0": 0.44, "mixing.d1": 0.36, "mixing.d2": 0.43,
        "intercept_mean.d1": float(np.log(1.14)), "intercept_mean.d2": 0.0,
        "intercept_sd.d1": 0.3, "intercept_sd.d2": 0.25,
        "odds.d1.x1": 0.3, "odds.d1.x2": -0.4,
        "odds.d2.x1": 0.2, "odds.d2.x2": 0.5,
        "presence.d1.z1": 0.8, "presence.d2.z1": 0.6,
        "re_cov.d1.d1": re_cov[0, 0], "re_cov.d1.d2": re_cov[0, 1],
        "re_cov.d2.d2": re_cov[1, 1],
        "presence_intercept.d1": -1.0, "presence_intercept.d2": -1.5,
        "persistence.d1": 2.5, "persistence.d2": 3.0,
        "interaction.d1.d2": 0.7, "interaction.d2.d1": 0.5,
    }
    series = draws.scalar_series()
    n_in = 0
    min_ess = np.inf
    for name, tv in truth_map.items():
        tr = series[name]
        lo, hi = np.quantile(tr.reshape(-1), [0.025, 0.975])
        n_in += lo <= tv <= hi
        min_ess = min(min_ess, effective_sample_size(tr))
    rhats = [gelman_rubin(tr) for tr in series.values()]
    max_rhat = max(r for r in rhats if np.isfinite(r))

    coverage = n_in / len(truth_map)
    ok = (coverage >= 0.90 and max_rhat < 1.05 and min_ess > 400
          and elapsed < 1800)
    assert report(4, "generating parameters recovered at panel scale", ok,
                  f"coverage {n_in}/{len(truth_map)} (need 90%), "
                  f"max R-hat {max_rhat:.4f} (need <1.05), "
                  f"min ESS {min_ess:.0f} (need >400), "
                  f"{elapsed/60:.1f} min (limit 30)")


# ---------------------------------------------------------------------------
# 5. model comparison recovers the generating structure


@pytest.mark.slow
def test_criterion_5_model_comparison_ordering():
    t0 = time.time()
    lines = []
    n_ordered = 0
    for seed in (101, 102, 103, 104, 105):
        rng = np.random.default_rng(seed)
        n_sw, n_areas, n_times = 2, 15, 60
        zspec = [CovariateSpec("lag_self", kind="lagged_log_counts",
                               standardize=False)]
        design = PanelDesign(
            n_times=n_times,
            disease_names=("base", "d1", "d2"),
            area_names=tuple(f"a{i:02d}" for i in range(n_areas)),
            z_specs={"d1": list(zspec), "d2": list(zspec)},
            total_mean=50.0, total_dispersion=10.0)
        truth = ParameterState.create(
            mixing=np.array([0.5, 0.4, 0.45]),
            intercept_mean=np.array([np.log(1.2), np.log(1.1)]),
            intercept_sd=np.array([0.3, 0.25]),
            area_intercepts=rng.normal([[np.log(1.2)], [np.log(1.1)]],
                                       [[0.3], [0.25]], (n_sw, n_areas)),
            odds_coefs=np.zeros(0),
            re_cov=np.array([[0.1225, 0.3 * 0.35 * 0.35],
                             [0.3 * 0.35 * 0.35, 0.1225]]),
            random_effects=np.zeros((n_sw, n_areas, n_times - 1)),
            presence_intercepts=np.array([-3.6, -3.8]),
            presence_coefs=np.array([1.25, 1.25]),
            persistence=np.array([2.5, 2.5]),
            interaction=np.array([[0.0, 1.2], [1.2, 0.0]]),
            init_presence=np.array([0.5, 0.5]),
        )
        sim = simulate_panel(design, truth, ModelVariant.MS_ZIARMN, rng)
        scores = {}
        for variant in (ModelVariant.MS_ZIARMN, ModelVariant.ZIARMN,
                        ModelVariant.ARMN):
            draws = run_gibbs(sim.md, variant, PriorSpec(),
                              iterations=5000, burn_in=2000, thin=4,
                              chains=1, seed=seed + 7, threads=1,
                              init_scale=0.5)
            scores[variant] = waic(draws).waic
        gap_zi = scores[ModelVariant.ZIARMN] - scores[ModelVariant.MS_ZIARMN]
        gap_ar = scores[ModelVariant.ARMN] - scores[ModelVariant.ZIARMN]
        n_ordered += gap_zi > 5 and gap_ar > 5
        lines.append(f"seed {seed}: +{gap_zi:.0f}/+{gap_ar:.0f}")
    elapsed = time.time() - t0
    ok = n_ordered == 5
    assert report(5, "information criterion orders the model family", ok,
                  f"{n_ordered}/5 seeds ordered with both gaps > 5; "
                  f"gaps ({'; '.join(lines)}); {elapsed/60:.1f} min")


# ---------------------------------------------------------------------------
# 6. random-effect correlation study


def test_criterion_6_correlation_crossing():
    t0 = time.time()
    rng = np.random.default_rng(42)
    grid = np.round(np.arange(0.30, 0.7001, 0.05), 2)
    study = correlation_study(grid, rng, alpha2=float(np.log(1.14)),
                              alpha3=0.0, sigma2=0.75, sigma3=0.8,
                              total=10, draws=1_000_000)
    crossing = study.baseline_crossing()
    max_se = float(study.mc_se.max())
    elapsed = time.time() - t0
    ok = (crossing is not None and 0.4 <= crossing <= 0.6
          and max_se < 0.005 and elapsed < 300)
    where = "none" if crossing is None else f"{crossing:.3f}"
    assert report(6, "count correlation crosses the no-random-effect line", ok,
                  f"crossing at rho={where} (window [0.4, 0.6]), "
                  f"max MC SE {max_se:.4f} at 1e6 draws/point (tol 0.005), "
                  f"{elapsed:.0f}s (limit 300s)")


# ---------------------------------------------------------------------------
# 7. epidemic counts given their total are multinomial


def test_criterion_7_conditioning_identity():
    rng = np.random.default_rng(17)
    target = np.array([2.5, 2.0, 1.5])
    frac = 0.8
    params = ReedFrostParams(
        intercepts=np.log(target / frac)[:, None],
        susceptibles=np.full((3, 1), frac * 1000.0),
        population=np.array([1000.0]),
        mixing=np.array([0.5, 0.4, 0.45]),
        re_cov=np.eye(3) * 0.25,
        n_steps=5)
    rep = check_conditioning_identity(params, np.zeros((3, 1)), rng,
                                      draws=1_000_000, mapping_checks=100)
    ok = rep.tv < 0.01 and rep.pi_error < 1e-12 and rep.cov_error < 1e-12
    assert report(7, "counts given their total are multinomial", ok,
                  f"TV {rep.tv:.4f} at total {rep.total} over 1e6 draws "
                  f"(keep rate {rep.acceptance_rate:.3f}, tol 0.01); "
                  f"mapping identities {rep.pi_error:.1e}/{rep.cov_error:.1e} "
                  f"over 100 configurations (tol 1e-12)")


# ---------------------------------------------------------------------------
# 8. sampler calibration on known targets


@pytest.mark.slow
def test_criterion_8_sampler_calibration():
    problems = []
    n_checks = 0

    def moments(label, series, want_mean, want_sd):
        nonlocal n_checks
        n_checks += 2
        ess = max(effective_sample_size(series[None, :]), 10.0)
        se_mean = series.std() / np.sqrt(ess)
        if abs(series.mean() - want_mean) > 3 * se_mean:
            problems.append(f"{label} mean {series.mean():.3f} "
                            f"(want {want_mean:.3f} within {3 * se_mean:.3f})")
        centered = series - series.mean()
        m2 = float(np.mean(centered ** 2))
        kurt = float(np.mean(centered ** 4)) / m2 ** 2 - 3.0
        se_sd = series.std() * np.sqrt(max(kurt + 2.0, 0.5) / (4.0 * ess))
        if abs(series.std() - want_sd) > 3 * se_sd:
            problems.append(f"{label} sd {series.std():.3f} "
                            f"(want {want_sd:.3f} within {3 * se_sd:.3f})")

    # prior-only marginals, one check per parameter class
    md = random_md(np.random.default_rng(11), n_areas=3, n_times=8,
                   n_x=1, n_z=1)
    prior = PriorSpec(
        coef_priors={c: (0.0, 2.0) for c in
                     ("intercept_mean", "odds", "presence_intercept",
                      "presence", "persistence", "interaction")},
        intercept_sd_scale=1.0,
        re_cov_df=11.0)
    draws = run_gibbs(md, ModelVariant.MS_ZIARMN, prior, iterations=40_000,
                      burn_in=2000, chains=1, seed=23, prior_only=True)
    ser = {k: v[0] for k, v in draws.scalar_series().items()}
    moments("mixing", ser["mixing.d0"], 0.5, np.sqrt(1.0 / 12.0))
    moments("intercept_mean", ser["intercept_mean.d1"], 0.0, 2.0)
    moments("odds", ser["odds.d1.x0"], 0.0, 2.0)
    moments("presence_intercept", ser["presence_intercept.d1"], 0.0, 2.0)
    moments("presence", ser["presence.d1.z0"], 0.0, 2.0)
    moments("persistence", ser["persistence.d1"], 0.0, 2.0)
    moments("interaction", ser["interaction.d1.d2"], 0.0, 2.0)
    moments("intercept_sd", ser["intercept_sd.d1"],
            np.sqrt(2.0 / np.pi), np.sqrt(1.0 - 2.0 / np.pi))
    moments("re_cov diagonal", ser["re_cov.d1.d1"],
            1.0 / 8.0, np.sqrt(2.0 / (64.0 * 6.0)))
    moments("re_cov off-diagonal", ser["re_cov.d1.d2"],
            0.0, np.sqrt(1.0 / 432.0))

    # scalar random walk on a standard normal
    rng = np.random.default_rng(5)
    ad = ScalarAdapter(1)
    x, lp = 0.0, 0.0
    chain = np.empty(40_000)
    for i in range(chain.size):
        x, lp, acc = adaptive_rwm_update(x, lp, lambda v: -0.5 * v * v,
                                         ad.step[0], rng)
        ad.record(np.array([acc]))
        chain[i] = x
    moments("scalar walk", chain[5000:], 0.0, 1.0)

    # vector random walk on a correlated bivariate normal
    rng = np.random.default_rng(9)
    mu = np.array([1.0, -2.0])
    cov = np.array([[1.0, 0.7], [0.7, 1.0]])
    prec = np.linalg.inv(cov)
    ad2 = VectorAdapter(2)
    x = np.zeros(2)
    lp = -0.5 * (x - mu) @ prec @ (x - mu)
    chain2 = np.empty((40_000, 2))
    for i in range(chain2.shape[0]):
        prop = x + ad2.propose(rng)
        lp_prop = -0.5 * (prop - mu) @ prec @ (prop - mu)
        acc = np.log(rng.random()) < lp_prop - lp
        if acc:
            x, lp = prop, lp_prop
        ad2.observe(x)
        ad2.record(acc)
        chain2[i] = x
    tail = chain2[10_000:]
    moments("vector walk first", tail[:, 0], 1.0, 1.0)
    moments("vector walk second", tail[:, 1], -2.0, 1.0)
    r = float(np.corrcoef(tail.T)[0, 1])
    ess_r = max(min(effective_sample_size(tail[None, :, 0]),
                    effective_sample_size(tail[None, :, 1])), 10.0)
    se_r = (1.0 - r * r) / np.sqrt(ess_r)
    n_checks += 1
    if abs(r - 0.7) > 3 * se_r:
        problems.append(f"vector walk correlation {r:.3f} "
                        f"(want 0.700 within {3 * se_r:.3f})")

    # conjugate covariance update against the analytic posterior mean,
    # prior df one per disease, plus one synthetic effect per area-step
    rng = np.random.default_rng(3)
    m_cols = 20 * 5
    root = np.linalg.cholesky(np.array([[0.3, 0.1], [0.1, 0.5]]))
    phi = root @ rng.standard_normal((2, m_cols))
    want = (np.eye(2) + phi @ phi.T) / (3.0 + m_cols - 2 - 1)
    samp = np.array([update_sigma(phi, 3.0, np.eye(2), rng)
                     for _ in range(4000)])
    for i, j in ((0, 0), (0, 1), (1, 1)):
        n_checks += 1
        se = samp[:, i, j].std(ddof=1) / np.sqrt(samp.shape[0])
        if abs(samp[:, i, j].mean() - want[i, j]) > 3 * se:
            problems.append(f"conjugate update entry ({i},{j}) "
                            f"{samp[:, i, j].mean():.4f} "
                            f"(want {want[i, j]:.4f} within {3 * se:.4f})")

    ok = not problems
    detail = (f"{n_checks} moment checks within 3 MC standard errors"
              if ok else "; ".join(problems))
    assert report(8, "sampler reproduces known targets", ok, detail)


# ---------------------------------------------------------------------------
# 9. bitwise determinism through the command line


def test_criterion_9_determinism(tmp_path):
    cfg = {
        "schema_version": 1,
        "variant": "MS_ZIARMN",
        "seed": 31,
        "output_dir": "sim",
        "data": {"diseases": ["den", "zik", "chk"]},
        "run": {"iterations": 120, "burn_in": 60, "chains": 2},
        "simulate": {
            "n_times": 12,
            "n_areas": 4,
            "total_mean": 12.0,
            "total_dispersion": 6.0,
            "params": {
                "mixing": [0.5, 0.4, 0.45],
                "intercept_mean": [0.1, 0.0],
                "intercept_sd": [0.3, 0.3],
                "re_cov": {"sd": [0.4, 0.4], "corr": 0.2},
                "presence_intercepts": [-0.5, -0.7],
                "persistence": [1.0, 1.0],
                "interaction": [[0.0, 0.5], [0.5, 0.0]],
                "init_presence": [0.5, 0.5],
            },
        },
    }
    bases = []
    for run in ("one", "two"):
        base = tmp_path / run
        base.mkdir()
        path = base / "config.yaml"
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(cfg, fh)
        assert cli_main(["simulate", "--config", str(path)]) == 0
        assert cli_main(["fit", "--config", str(base / "sim" / "fit_config.yaml")]) == 0
        bases.append(base / "sim" / "fit")
    names = ("draws.npz", "draws.csv", "diagnostics.csv", "summary.csv",
             "presence_prob.csv", "waic.json", "manifest.json")
    differing = [n for n in names
                 if (bases[0] / n).read_bytes() != (bases[1] / n).read_bytes()]
    ok = not differing
    assert report(9, "equal inputs give byte-identical outputs", ok,
                  f"{len(names)} fit artifacts compared across two runs"
                  + ("" if ok else f"; differing: {', '.join(differing)}"))
