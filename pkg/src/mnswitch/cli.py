"""Batch command-line interface.

Four subcommands cover the full workflow:

* ``simulate`` draws a synthetic panel and writes it together with the
  generating truth (parameters, presence states, random effects) and a
  ready-to-run fit configuration.
* ``fit`` loads a panel, assembles the covariate design, runs the Gibbs
  sampler and writes the draw archive plus diagnostic, summary, presence
  and WAIC tables.
* ``waic`` recomputes WAIC from a persisted draw archive through the
  forward-filter path, without refitting.
* ``summarize`` rebuilds summary tables and response curves from a
  persisted draw archive.

Every command reads a single YAML configuration file (``--config``).  The
file is schema versioned (``schema_version: 1``) and validated strictly:
unknown keys anywhere are rejected and every referenced file must exist at
validation time.  Relative paths resolve against the directory containing
the config file.  The flags ``--variant``, ``--seed``, ``--threads``,
``--output-dir`` and ``--strict`` override the matching config keys;
precedence is flag, then config, then built-in default.  Relative paths
given on the command line resolve against the caller's working directory.

Every command writes ``manifest.json`` recording the command name, the
hash of the effective configuration, input data hashes, the seed, package
versions and the hash of each output file.  Manifests carry no timestamps,
so runs with equal seed, configuration and input hashes produce
byte-identical outputs.

Exit codes: 0 success, 2 validation error, 3 numerical failure,
4 non-convergence when ``--strict`` is set.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from importlib import metadata as _im
from pathlib import Path

import numpy as np
import pandas as pd
import scipy
import yaml

from .data import (
    BUILDER_KINDS,
    AreaMetadata,
    CovariateBundle,
    CovariateSpec,
    build_model_data,
    load_area_metadata,
    load_covariates,
    load_panel,
    write_area_metadata,
    write_covariates,
    write_panel,
)
from .errors import ConvergenceError, NumericalError
from .mcmc import COEF_CLASSES, PosteriorDraws, PriorSpec, run_gibbs
from .model import CoefLayout, ModelVariant, ParameterState
from .posterior import (
    presence_probabilities,
    response_curve,
    summarize,
    waic,
)
from .simulate import PanelDesign, simulate_panel

_SCHEMA_VERSION = 1

_TOP_KEYS = {"schema_version", "variant", "seed", "output_dir", "threads",
             "strict", "data", "model", "run", "priors", "simulate", "output"}
_DATA_KEYS = {"counts", "adjacency", "population", "covariates", "diseases"}
_MODEL_KEYS = {"x", "z", "share_x", "share_z", "odds_blocks"}
_SPEC_KEYS = {"name", "kind", "source", "standardize"}
_RUN_KEYS = {"iterations", "burn_in", "thin", "chains", "init_scale",
             "store_random_effects", "prior_only", "rhat_threshold"}
_PRIOR_KEYS = {"coef", "intercept_sd_scale", "re_cov_df", "re_cov_scale",
               "init_presence"}
_SIM_KEYS = {"n_times", "n_areas", "population", "ring", "total_mean",
             "total_dispersion", "external", "params"}
_SIM_PARAM_KEYS = {"mixing", "intercept_mean", "intercept_sd",
                   "area_intercepts", "odds", "re_cov",
                   "presence_intercepts", "presence", "persistence",
                   "interaction", "init_presence"}
_OUTPUT_KEYS = {"exponentiate", "response_curves"}
_CURVE_KEYS = {"coefficient", "lo", "hi", "points", "threshold"}


# ---------------------------------------------------------------------------
# validation helpers


def _mapping(value, where) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ValueError(f"{where} must be a mapping")
    return value


def _sequence(value, where) -> list:
    if value is None:
        return []
    if not isinstance(value, (list, tuple)):
        raise ValueError(f"{where} must be a list")
    return list(value)


def _reject_unknown(d: dict, allowed, where) -> None:
    for key in d:
        if key not in allowed:
            raise ValueError(f"unknown key {key!r} in {where}")


def _int(value, where, minimum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{where} must be an integer")
    if minimum is not None and value < minimum:
        raise ValueError(f"{where} must be >= {minimum}")
    return value


def _float(value, where, positive=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{where} must be a number")
    value = float(value)
    if positive and value <= 0:
        raise ValueError(f"{where} must be positive")
    return value


def _bool(value, where) -> bool:
    if not isinstance(value, bool):
        raise ValueError(f"{where} must be true or false")
    return value


def _str(value, where) -> str:
    if not isinstance(value, str) or not value:
        raise ValueError(f"{where} must be a non-empty string")
    return value


def _str_list(value, where) -> tuple[str, ...]:
    items = _sequence(value, where)
    out = tuple(_str(v, f"{where}[{i}]") for i, v in enumerate(items))
    if len(set(out)) != len(out):
        raise ValueError(f"{where} has duplicate entries")
    return out


def _parse_variant(value) -> ModelVariant:
    name = _str(value, "variant").upper().replace("-", "_")
    try:
        return ModelVariant(name)
    except ValueError:
        choices = ", ".join(v.value for v in ModelVariant)
        raise ValueError(f"unknown variant {value!r}; choose one of {choices}")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """One validated run configuration.

    resolved holds the raw mapping after flag overrides (paths still as
    written, so its hash does not depend on where the tree lives);
    data_paths holds the resolved locations of the referenced files.
    """

    path: Path
    base: Path
    resolved: dict
    config_hash: str
    variant: ModelVariant
    seed: int
    output_dir: Path
    threads: int  # 0 means "one worker per chain"
    strict: bool
    data_paths: dict[str, Path]
    diseases: tuple[str, ...] | None
    x_specs: dict[str, list[CovariateSpec]]
    z_specs: dict[str, list[CovariateSpec]]
    share_x: tuple
    share_z: tuple
    odds_blocks: tuple
    run: dict
    priors: dict
    simulate: dict | None
    output: dict


def _covariate_specs(section, where) -> dict[str, list[CovariateSpec]]:
    specs: dict[str, list[CovariateSpec]] = {}
    for disease, entries in _mapping(section, where).items():
        disease = _str(disease, f"{where} key")
        parsed = []
        for i, entry in enumerate(_sequence(entries, f"{where}.{disease}")):
            here = f"{where}.{disease}[{i}]"
            entry = _mapping(entry, here)
            _reject_unknown(entry, _SPEC_KEYS, here)
            name = _str(entry.get("name"), f"{here}.name")
            kind = entry.get("kind", "external")
            if kind not in BUILDER_KINDS:
                raise ValueError(f"{here}.kind: unknown covariate kind "
                                 f"{kind!r}")
            source = entry.get("source")
            if source is not None:
                source = _str(source, f"{here}.source")
            std = _bool(entry.get("standardize", True),
                        f"{here}.standardize")
            parsed.append(CovariateSpec(name=name, kind=kind, source=source,
                                        standardize=std))
        specs[disease] = parsed
    return specs


def _share_groups(section, where) -> tuple:
    groups = []
    for g, group in enumerate(_sequence(section, where)):
        here = f"{where}[{g}]"
        pairs = _sequence(group, here)
        if len(pairs) < 2:
            raise ValueError(f"{here} must name at least two columns")
        parsed = []
        for i, pair in enumerate(pairs):
            pair = _sequence(pair, f"{here}[{i}]")
            if len(pair) != 2:
                raise ValueError(f"{here}[{i}] must be a [disease, column] "
                                 "pair")
            parsed.append((_str(pair[0], f"{here}[{i}][0]"),
                           _str(pair[1], f"{here}[{i}][1]")))
        groups.append(tuple(parsed))
    return tuple(groups)


def _validate_run(section) -> dict:
    run = _mapping(section, "run")
    _reject_unknown(run, _RUN_KEYS, "run")
    out = {}
    if "iterations" in run:
        out["iterations"] = _int(run["iterations"], "run.iterations", 0)
    if "burn_in" in run:
        out["burn_in"] = _int(run["burn_in"], "run.burn_in", 0)
    if "thin" in run:
        out["thin"] = _int(run["thin"], "run.thin", 1)
    if "chains" in run:
        out["chains"] = _int(run["chains"], "run.chains", 1)
    if "init_scale" in run:
        out["init_scale"] = _float(run["init_scale"], "run.init_scale",
                                   positive=True)
    if "store_random_effects" in run:
        out["store_random_effects"] = _bool(run["store_random_effects"],
                                            "run.store_random_effects")
    if "prior_only" in run:
        out["prior_only"] = _bool(run["prior_only"], "run.prior_only")
    if "rhat_threshold" in run:
        out["rhat_threshold"] = _float(run["rhat_threshold"],
                                       "run.rhat_threshold", positive=True)
    return out


def _validate_priors(section) -> dict:
    priors = _mapping(section, "priors")
    _reject_unknown(priors, _PRIOR_KEYS, "priors")
    out = {}
    if "coef" in priors:
        coef = {}
        for cls, pair in _mapping(priors["coef"], "priors.coef").items():
            if cls not in COEF_CLASSES:
                raise ValueError(f"priors.coef: unknown coefficient class "
                                 f"{cls!r}")
            pair = _sequence(pair, f"priors.coef.{cls}")
            if len(pair) != 2:
                raise ValueError(f"priors.coef.{cls} must be [mean, sd]")
            coef[cls] = (_float(pair[0], f"priors.coef.{cls}[0]"),
                         _float(pair[1], f"priors.coef.{cls}[1]",
                                positive=True))
        out["coef"] = coef
    if "intercept_sd_scale" in priors:
        out["intercept_sd_scale"] = _float(priors["intercept_sd_scale"],
                                           "priors.intercept_sd_scale",
                                           positive=True)
    if "re_cov_df" in priors and priors["re_cov_df"] is not None:
        out["re_cov_df"] = _float(priors["re_cov_df"], "priors.re_cov_df",
                                  positive=True)
    if "re_cov_scale" in priors and priors["re_cov_scale"] is not None:
        scale = priors["re_cov_scale"]
        if isinstance(scale, (int, float)) and not isinstance(scale, bool):
            out["re_cov_scale"] = float(scale)
        else:
            out["re_cov_scale"] = [
                [_float(v, "priors.re_cov_scale entry") for v in row]
                for row in _sequence(scale, "priors.re_cov_scale")]
    if "init_presence" in priors:
        q = priors["init_presence"]
        if isinstance(q, dict):
            out["init_presence"] = {
                _str(d, "priors.init_presence key"):
                    _float(v, f"priors.init_presence.{d}")
                for d, v in q.items()}
        else:
            out["init_presence"] = _float(q, "priors.init_presence")
    return out


def _validate_simulate(section) -> dict | None:
    if section is None:
        return None
    sim = _mapping(section, "simulate")
    _reject_unknown(sim, _SIM_KEYS, "simulate")
    for key in ("n_times", "n_areas"):
        if key not in sim:
            raise ValueError(f"simulate.{key} is required")
    out = {"n_times": _int(sim["n_times"], "simulate.n_times", 2),
           "n_areas": _int(sim["n_areas"], "simulate.n_areas", 1)}
    if "population" in sim:
        pop = sim["population"]
        if isinstance(pop, (list, tuple)):
            out["population"] = [_float(v, "simulate.population entry",
                                        positive=True) for v in pop]
        else:
            out["population"] = _float(pop, "simulate.population",
                                       positive=True)
    if "ring" in sim:
        out["ring"] = _bool(sim["ring"], "simulate.ring")
    if "total_mean" in sim:
        out["total_mean"] = _float(sim["total_mean"], "simulate.total_mean",
                                   positive=True)
    if "total_dispersion" in sim:
        out["total_dispersion"] = _float(sim["total_dispersion"],
                                         "simulate.total_dispersion",
                                         positive=True)
    if "external" in sim:
        out["external"] = _str_list(sim["external"], "simulate.external")
    params = _mapping(sim.get("params"), "simulate.params")
    _reject_unknown(params, _SIM_PARAM_KEYS, "simulate.params")
    out["params"] = params
    return out


def _validate_output(section) -> dict:
    output = _mapping(section, "output")
    _reject_unknown(output, _OUTPUT_KEYS, "output")
    out = {}
    if "exponentiate" in output:
        out["exponentiate"] = _str_list(output["exponentiate"],
                                        "output.exponentiate")
    curves = []
    for i, entry in enumerate(_sequence(output.get("response_curves"),
                                        "output.response_curves")):
        here = f"output.response_curves[{i}]"
        entry = _mapping(entry, here)
        _reject_unknown(entry, _CURVE_KEYS, here)
        lo = _float(entry.get("lo"), f"{here}.lo")
        hi = _float(entry.get("hi"), f"{here}.hi")
        if hi <= lo:
            raise ValueError(f"{here}: hi must exceed lo")
        curves.append({
            "coefficient": _str(entry.get("coefficient"),
                                f"{here}.coefficient"),
            "lo": lo, "hi": hi,
            "points": _int(entry.get("points", 41), f"{here}.points", 2),
            "threshold": _float(entry.get("threshold", 1.0),
                                f"{here}.threshold", positive=True),
        })
    out["response_curves"] = curves
    return out


def load_config(path, overrides=None) -> RunConfig:
    """Parse, override and validate one configuration file."""
    path = Path(path)
    if not path.is_file():
        raise ValueError(f"config file {path} does not exist")
    raw = yaml.safe_load(path.read_text())
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a mapping")
    base = path.parent
    resolved = dict(raw)
    for key, value in (overrides or {}).items():
        resolved[key] = value

    _reject_unknown(resolved, _TOP_KEYS, "config")
    if resolved.get("schema_version") != _SCHEMA_VERSION:
        raise ValueError(f"{path}: schema_version must be {_SCHEMA_VERSION}")
    if "variant" not in resolved:
        raise ValueError(f"{path}: variant is required")
    variant = _parse_variant(resolved["variant"])
    seed = _int(resolved.get("seed", 0), "seed", 0)
    threads = _int(resolved.get("threads", 0), "threads", 0)
    strict = _bool(resolved.get("strict", False), "strict")
    out_dir = _str(resolved.get("output_dir", "out"), "output_dir")
    output_dir = Path(out_dir)
    if not output_dir.is_absolute():
        output_dir = base / output_dir

    data = _mapping(resolved.get("data"), "data")
    _reject_unknown(data, _DATA_KEYS, "data")
    data_paths: dict[str, Path] = {}
    for role in ("counts", "adjacency", "population", "covariates"):
        if data.get(role) is None:
            continue
        p = Path(_str(data[role], f"data.{role}"))
        if not p.is_absolute():
            p = base / p
        if not p.is_file():
            raise ValueError(f"data.{role}: file {p} does not exist")
        data_paths[role] = p
    if ("adjacency" in data_paths) != ("population" in data_paths):
        raise ValueError("data.adjacency and data.population must be given "
                         "together")
    diseases = None
    if data.get("diseases") is not None:
        diseases = _str_list(data["diseases"], "data.diseases")
        if len(diseases) < 2:
            raise ValueError("data.diseases needs the baseline plus at "
                             "least one switching disease")

    model = _mapping(resolved.get("model"), "model")
    _reject_unknown(model, _MODEL_KEYS, "model")
    x_specs = _covariate_specs(model.get("x"), "model.x")
    z_specs = _covariate_specs(model.get("z"), "model.z")
    share_x = _share_groups(model.get("share_x"), "model.share_x")
    share_z = _share_groups(model.get("share_z"), "model.share_z")
    odds_blocks = tuple(
        tuple(_str(n, f"model.odds_blocks[{g}][{i}]")
              for i, n in enumerate(_sequence(block,
                                              f"model.odds_blocks[{g}]")))
        for g, block in enumerate(_sequence(model.get("odds_blocks"),
                                            "model.odds_blocks")))

    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"),
                       default=str)
    return RunConfig(
        path=path, base=base, resolved=resolved,
        config_hash=hashlib.sha256(canon.encode()).hexdigest(),
        variant=variant, seed=seed, output_dir=output_dir, threads=threads,
        strict=strict, data_paths=data_paths, diseases=diseases,
        x_specs=x_specs, z_specs=z_specs, share_x=share_x, share_z=share_z,
        odds_blocks=odds_blocks, run=_validate_run(resolved.get("run")),
        priors=_validate_priors(resolved.get("priors")),
        simulate=_validate_simulate(resolved.get("simulate")),
        output=_validate_output(resolved.get("output")),
    )


# ---------------------------------------------------------------------------
# shared plumbing


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _versions() -> dict:
    try:
        own = _im.version("mnswitch")
    except _im.PackageNotFoundError:
        own = "unknown"
    return {"mnswitch": own, "numpy": np.__version__,
            "scipy": scipy.__version__, "pandas": pd.__version__,
            "pyyaml": yaml.__version__}


def _write_manifest(cfg: RunConfig, command: str, data_hashes: dict,
                    outputs) -> None:
    manifest = {
        "command": command,
        "schema_version": _SCHEMA_VERSION,
        "variant": cfg.variant.value,
        "seed": cfg.seed,
        "config_sha256": cfg.config_hash,
        "data_sha256": dict(sorted(data_hashes.items())),
        "output_sha256": {name: _sha256_file(cfg.output_dir / name)
                          for name in sorted(outputs)},
        "versions": _versions(),
    }
    text = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    (cfg.output_dir / "manifest.json").write_text(text)


def _load_inputs(cfg: RunConfig):
    """Panel + covariate design + model data + input hashes for fit paths."""
    if "counts" not in cfg.data_paths:
        raise ValueError("data.counts is required for this command")
    panel = load_panel(cfg.data_paths["counts"], cfg.diseases)
    meta = None
    if "adjacency" in cfg.data_paths:
        meta = load_area_metadata(cfg.data_paths["adjacency"],
                                  cfg.data_paths["population"],
                                  panel.area_names)
    external = {}
    if "covariates" in cfg.data_paths:
        external = load_covariates(cfg.data_paths["covariates"],
                                   panel.area_names, panel.n_times)
    bundle = CovariateBundle.build(panel, meta, x_specs=cfg.x_specs,
                                   z_specs=cfg.z_specs, external=external,
                                   share_x=cfg.share_x, share_z=cfg.share_z)
    md = build_model_data(panel, bundle)
    hashes = {role: _sha256_file(p) for role, p in cfg.data_paths.items()}
    return md, bundle, panel, hashes


def _prior_spec(cfg: RunConfig, disease_names) -> PriorSpec:
    priors = cfg.priors
    n_sw = len(disease_names) - 1
    scale = priors.get("re_cov_scale")
    if isinstance(scale, float):
        scale = np.eye(n_sw) * scale
    elif scale is not None:
        scale = np.asarray(scale, dtype=float)
    init = priors.get("init_presence", 0.5)
    if isinstance(init, dict):
        missing = [d for d in disease_names[1:] if d not in init]
        if missing:
            raise ValueError(f"priors.init_presence is missing disease "
                             f"{missing[0]!r}")
        init = np.array([init[d] for d in disease_names[1:]])
    return PriorSpec(coef_priors=priors.get("coef", {}),
                     intercept_sd_scale=priors.get("intercept_sd_scale", 5.0),
                     re_cov_df=priors.get("re_cov_df"),
                     re_cov_scale=scale, init_presence=init)


# ---------------------------------------------------------------------------
# draw archive


def save_draws(path, draws: PosteriorDraws, data_hashes: dict,
               config_hash: str) -> None:
    """Persist every chain of a run to one self-describing npz archive."""
    meta = {
        "variant": draws.variant.value,
        "disease_names": list(draws.disease_names),
        "area_names": list(draws.area_names),
        "x_names": list(draws.x_names),
        "z_names": list(draws.z_names),
        "iterations": draws.iterations, "burn_in": draws.burn_in,
        "thin": draws.thin, "seed": draws.seed, "n_times": draws.n_times,
        "n_chains": draws.n_chains,
        "data_sha256": dict(sorted(data_hashes.items())),
        "config_sha256": config_hash,
        "acceptance": [{k: float(v) for k, v in c["_acceptance"].items()}
                       for c in draws.chains],
        "steps_burn_end": [{k: np.asarray(v).tolist()
                            for k, v in c["_steps_burn_end"].items()}
                           for c in draws.chains],
        "steps_final": [{k: np.asarray(v).tolist()
                         for k, v in c["_steps_final"].items()}
                        for c in draws.chains],
    }
    arrays = {"__meta__": np.array(json.dumps(meta, sort_keys=True)),
              "init_presence": draws.init_presence}
    for j, chain in enumerate(draws.chains):
        for key, value in chain.items():
            if not key.startswith("_"):
                arrays[f"c{j}__{key}"] = value
    np.savez_compressed(path, **arrays)


def load_draws(path) -> tuple[PosteriorDraws, dict]:
    """Rebuild a PosteriorDraws from an archive written by save_draws."""
    path = Path(path)
    if not path.is_file():
        raise ValueError(f"draws archive {path} does not exist")
    with np.load(path, allow_pickle=False) as z:
        if "__meta__" not in z.files:
            raise ValueError(f"{path} is not a draws archive")
        meta = json.loads(str(z["__meta__"][()]))
        chains = []
        for j in range(meta["n_chains"]):
            prefix = f"c{j}__"
            chain = {key[len(prefix):]: z[key] for key in z.files
                     if key.startswith(prefix)}
            chain["_acceptance"] = dict(meta["acceptance"][j])
            chain["_steps_burn_end"] = {
                k: np.asarray(v) for k, v in meta["steps_burn_end"][j].items()}
            chain["_steps_final"] = {
                k: np.asarray(v) for k, v in meta["steps_final"][j].items()}
            chains.append(chain)
        draws = PosteriorDraws(
            variant=ModelVariant(meta["variant"]),
            disease_names=tuple(meta["disease_names"]),
            area_names=tuple(meta["area_names"]),
            x_names=tuple(meta["x_names"]),
            z_names=tuple(meta["z_names"]),
            init_presence=z["init_presence"],
            chains=chains, iterations=meta["iterations"],
            burn_in=meta["burn_in"], thin=meta["thin"], seed=meta["seed"],
            n_times=meta["n_times"])
    return draws, meta


def _check_draws_match(cfg: RunConfig, meta: dict, panel,
                       data_hashes: dict) -> None:
    if meta["data_sha256"] != dict(sorted(data_hashes.items())):
        raise ValueError("data files do not match the draws archive "
                         "(hash mismatch); refusing to proceed")
    if tuple(meta["disease_names"]) != panel.disease_names:
        raise ValueError("disease ordering differs from the draws archive")
    if meta["variant"] != cfg.variant.value:
        raise ValueError(f"draws were sampled under {meta['variant']}, the "
                         f"effective config asks for {cfg.variant.value}")


# ---------------------------------------------------------------------------
# table writers


def _write_waic_json(report, path) -> None:
    payload = {"waic": float(report.waic), "lppd": float(report.lppd),
               "p_waic": float(report.p_waic), "se": float(report.se),
               "n_cells": int(report.n_cells)}
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write_draws_csv(draws: PosteriorDraws, path) -> None:
    with open(path, "w") as fh:
        fh.write("param,chain,draw,value\n")
        for name, trace in draws.scalar_series().items():
            for c in range(trace.shape[0]):
                for i in range(trace.shape[1]):
                    fh.write(f"{name},{c},{i},{float(trace[c, i])!r}\n")


def _write_diagnostics_csv(draws: PosteriorDraws, path) -> None:
    with open(path, "w") as fh:
        fh.write("param,rhat,ess\n")
        for name, (rhat, ess) in draws.diagnostics().items():
            fh.write(f"{name},{float(rhat)!r},{float(ess)!r}\n")


def _write_presence_csv(draws: PosteriorDraws, path) -> None:
    probs = presence_probabilities(draws)
    with open(path, "w") as fh:
        fh.write("disease,area,time,probability\n")
        for k, d in enumerate(draws.disease_names[1:]):
            for i, a in enumerate(draws.area_names):
                for t in range(probs.shape[2]):
                    fh.write(f"{d},{a},{t + 1},{float(probs[k, i, t])!r}\n")


def _write_summary_csv(cfg: RunConfig, draws: PosteriorDraws, path) -> None:
    table = summarize(draws, exp_names=cfg.output.get("exponentiate", ()))
    table.to_csv(path, index=False)


def _record_for(md, bundle, coefficient):
    """StandardizeRecord behind a scalar-series coefficient name, if any."""
    for prefix, layout, role in (("odds.", md.x_layout, "x"),
                                 ("presence.", md.z_layout, "z")):
        if not coefficient.startswith(prefix):
            continue
        flat = coefficient[len(prefix):]
        if flat not in layout.flat_names:
            return None
        slots = layout.slots_of(layout.flat_names.index(flat))
        d_ix, c_ix = slots[0]
        disease = layout.disease_names[d_ix]
        col = layout.col_names[d_ix][c_ix]
        return bundle.records.get(f"{role}:{disease}:{col}")
    return None


def _write_response_curves(cfg: RunConfig, draws: PosteriorDraws, md,
                           bundle) -> list[str]:
    files = []
    crossing_rows = []
    for spec in cfg.output.get("response_curves", ()):
        name = spec["coefficient"]
        grid = np.linspace(spec["lo"], spec["hi"], spec["points"])
        curve = response_curve(draws, name, grid,
                               record=_record_for(md, bundle, name),
                               threshold=spec["threshold"])
        safe = name.replace("/", "_").replace("\\", "_")
        fname = f"response_curve.{safe}.csv"
        with open(cfg.output_dir / fname, "w") as fh:
            fh.write("x,mean,lower,upper\n")
            for i in range(grid.size):
                fh.write(f"{float(grid[i])!r},{float(curve.mean[i])!r},"
                         f"{float(curve.lower[i])!r},"
                         f"{float(curve.upper[i])!r}\n")
        files.append(fname)
        for which, xs in sorted(curve.crossings.items()):
            crossing_rows += [(name, which, float(x)) for x in xs]
    if cfg.output.get("response_curves"):
        with open(cfg.output_dir / "response_crossings.csv", "w") as fh:
            fh.write("coefficient,curve,x\n")
            for name, which, x in crossing_rows:
                fh.write(f"{name},{which},{x!r}\n")
        files.append("response_crossings.csv")
    return files


# ---------------------------------------------------------------------------
# simulate


def _vector(value, n, where) -> np.ndarray:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return np.full(n, float(value))
    arr = np.asarray(_sequence(value, where), dtype=float)
    if arr.shape != (n,):
        raise ValueError(f"{where} must be a number or a list of length {n}")
    return arr


def _matrix(value, n, where) -> np.ndarray:
    arr = np.asarray(_sequence(value, where), dtype=float)
    if arr.shape != (n, n):
        raise ValueError(f"{where} must be a {n}x{n} matrix")
    return arr


def _coef_vector(value, layout: CoefLayout, where) -> np.ndarray:
    """Flat coefficient vector from a list or a disease -> column mapping."""
    if value is None:
        return np.zeros(layout.n_flat)
    if isinstance(value, (list, tuple)):
        arr = np.asarray(value, dtype=float)
        if arr.shape != (layout.n_flat,):
            raise ValueError(f"{where} must have length {layout.n_flat}")
        return arr
    vec = np.zeros(layout.n_flat)
    assigned: dict[int, float] = {}
    for disease, cols in _mapping(value, where).items():
        if disease not in layout.disease_names:
            raise ValueError(f"{where}: unknown disease {disease!r}")
        d_ix = layout.disease_names.index(disease)
        for col, v in _mapping(cols, f"{where}.{disease}").items():
            if col not in layout.col_names[d_ix]:
                raise ValueError(f"{where}.{disease}: unknown column "
                                 f"{col!r}")
            flat = layout.col_to_flat[d_ix][layout.col_names[d_ix].index(col)]
            v = _float(v, f"{where}.{disease}.{col}")
            if flat in assigned and assigned[flat] != v:
                raise ValueError(f"{where}: conflicting values for shared "
                                 f"slot {layout.flat_names[flat]!r}")
            assigned[flat] = v
            vec[flat] = v
    return vec


def _re_cov_matrix(value, n_sw, where) -> np.ndarray:
    if value is None:
        return np.eye(n_sw) * 0.25
    if isinstance(value, dict):
        _reject_unknown(value, {"sd", "corr"}, where)
        sd = _vector(value.get("sd", 1.0), n_sw, f"{where}.sd")
        if np.any(sd <= 0):
            raise ValueError(f"{where}.sd must be positive")
        corr = value.get("corr", 0.0)
        if isinstance(corr, (int, float)) and not isinstance(corr, bool):
            rho = float(corr)
            if not -1 < rho < 1:
                raise ValueError(f"{where}.corr must lie in (-1, 1)")
            R = np.full((n_sw, n_sw), rho)
            np.fill_diagonal(R, 1.0)
        else:
            R = _matrix(corr, n_sw, f"{where}.corr")
        return np.outer(sd, sd) * R
    return _matrix(value, n_sw, where)


def _truth_params(cfg: RunConfig, disease_names, n_areas, n_steps,
                  x_layout: CoefLayout, z_layout: CoefLayout,
                  rng) -> ParameterState:
    p = cfg.simulate["params"]
    K = len(disease_names)
    n_sw = K - 1
    where = "simulate.params"
    mixing = _vector(p.get("mixing", 0.5), K, f"{where}.mixing")
    mean = _vector(p.get("intercept_mean", 0.0), n_sw,
                   f"{where}.intercept_mean")
    sd = _vector(p.get("intercept_sd", 0.5), n_sw, f"{where}.intercept_sd")
    if "area_intercepts" in p:
        area = np.asarray(p["area_intercepts"], dtype=float)
        if area.shape != (n_sw, n_areas):
            raise ValueError(f"{where}.area_intercepts must be "
                             f"{n_sw}x{n_areas}")
    else:
        area = rng.normal(mean[:, None], sd[:, None], size=(n_sw, n_areas))
    interaction = (np.zeros((n_sw, n_sw)) if "interaction" not in p
                   else _matrix(p["interaction"], n_sw,
                                f"{where}.interaction"))
    return ParameterState.create(
        mixing=mixing, intercept_mean=mean, intercept_sd=sd,
        area_intercepts=area,
        odds_coefs=_coef_vector(p.get("odds"), x_layout, f"{where}.odds"),
        re_cov=_re_cov_matrix(p.get("re_cov"), n_sw, f"{where}.re_cov"),
        random_effects=np.zeros((n_sw, n_areas, n_steps)),
        presence_intercepts=_vector(p.get("presence_intercepts", 0.0), n_sw,
                                    f"{where}.presence_intercepts"),
        presence_coefs=_coef_vector(p.get("presence"), z_layout,
                                    f"{where}.presence"),
        persistence=_vector(p.get("persistence", 0.0), n_sw,
                            f"{where}.persistence"),
        interaction=interaction,
        init_presence=_vector(p.get("init_presence", 0.5), n_sw,
                              f"{where}.init_presence"),
    )


def _truth_rows(truth: ParameterState, variant: ModelVariant, disease_names,
                area_names, x_layout, z_layout):
    sw = disease_names[1:]
    rows = [(f"mixing.{d}", truth.mixing[k])
            for k, d in enumerate(disease_names)]
    rows += [(f"intercept_mean.{d}", truth.intercept_mean[k])
             for k, d in enumerate(sw)]
    rows += [(f"intercept_sd.{d}", truth.intercept_sd[k])
             for k, d in enumerate(sw)]
    rows += [(f"odds.{name}", truth.odds_coefs[f])
             for f, name in enumerate(x_layout.flat_names)]
    for a in range(len(sw)):
        for b in range(a, len(sw)):
            rows.append((f"re_cov.{sw[a]}.{sw[b]}", truth.re_cov[a, b]))
    if variant.has_latent_states:
        rows += [(f"presence_intercept.{d}", truth.presence_intercepts[k])
                 for k, d in enumerate(sw)]
        rows += [(f"init_presence.{d}", truth.init_presence[k])
                 for k, d in enumerate(sw)]
    if variant.has_presence_covariates:
        rows += [(f"presence.{name}", truth.presence_coefs[f])
                 for f, name in enumerate(z_layout.flat_names)]
    if variant.has_state_coupling:
        rows += [(f"persistence.{d}", truth.persistence[k])
                 for k, d in enumerate(sw)]
        for j in range(len(sw)):
            for k in range(len(sw)):
                if j != k:
                    rows.append((f"interaction.{sw[j]}.{sw[k]}",
                                 truth.interaction[j, k]))
    rows += [(f"area_intercept.{d}.{a}", truth.area_intercepts[k, i])
             for k, d in enumerate(sw) for i, a in enumerate(area_names)]
    return rows


def cmd_simulate(cfg: RunConfig) -> None:
    """Draw one synthetic panel and write it with its generating truth."""
    sim = cfg.simulate
    if sim is None:
        raise ValueError("config has no simulate section")
    params_cfg = sim["params"]
    if cfg.diseases is not None:
        disease_names = cfg.diseases
    elif "mixing" in params_cfg and isinstance(params_cfg["mixing"],
                                               (list, tuple)):
        disease_names = tuple(f"d{k}"
                              for k in range(len(params_cfg["mixing"])))
    else:
        disease_names = ("d0", "d1", "d2")
    n_times, n_areas = sim["n_times"], sim["n_areas"]
    area_names = tuple(f"a{i:03d}" for i in range(n_areas))
    population = np.asarray(_vector(sim.get("population", 1000.0), n_areas,
                                    "simulate.population"))
    meta = None
    if sim.get("ring"):
        edges = ([(area_names[i], area_names[(i + 1) % n_areas])
                  for i in range(n_areas)] if n_areas > 1 else [])
        meta = AreaMetadata.from_edges(area_names, population, edges)

    switching = disease_names[1:]
    x_layout = CoefLayout.build(
        switching, [tuple(s.name for s in cfg.x_specs.get(d, ()))
                    for d in switching], cfg.share_x)
    z_layout = CoefLayout.build(
        switching, [tuple(s.name for s in cfg.z_specs.get(d, ()))
                    for d in switching], cfg.share_z)

    rng = np.random.default_rng(cfg.seed)
    external = {name: rng.standard_normal((n_areas, n_times - 1))
                for name in sim.get("external", ())}
    truth = _truth_params(cfg, disease_names, n_areas, n_times - 1,
                          x_layout, z_layout, rng)
    design = PanelDesign(
        n_times=n_times, disease_names=disease_names, area_names=area_names,
        meta=meta, x_specs=cfg.x_specs, z_specs=cfg.z_specs,
        external=external, share_x=cfg.share_x, share_z=cfg.share_z,
        total_mean=sim.get("total_mean", 10.0),
        total_dispersion=sim.get("total_dispersion", 5.0))
    result = simulate_panel(design, truth, cfg.variant, rng)

    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    outputs = ["counts.csv"]
    write_panel(result.panel, out / "counts.csv")
    if external:
        write_covariates(external, area_names, out / "covariates.csv")
        outputs.append("covariates.csv")
    if meta is not None:
        write_area_metadata(meta, out / "adjacency.csv",
                            out / "population.csv")
        outputs += ["adjacency.csv", "population.csv"]

    with open(out / "truth_params.csv", "w") as fh:
        fh.write("param,value\n")
        for name, value in _truth_rows(result.truth, cfg.variant,
                                       disease_names, area_names,
                                       x_layout, z_layout):
            fh.write(f"{name},{float(value)!r}\n")
    outputs.append("truth_params.csv")
    if result.states is not None:
        with open(out / "truth_states.csv", "w") as fh:
            fh.write("area,time,state\n")
            for i, a in enumerate(area_names):
                for t in range(n_times):
                    fh.write(f"{a},{t + 1},{result.states[i, t]}\n")
        outputs.append("truth_states.csv")
    with open(out / "truth_random_effects.csv", "w") as fh:
        fh.write("disease,area,time,value\n")
        for k, d in enumerate(switching):
            for i, a in enumerate(area_names):
                for s in range(n_times - 1):
                    value = float(result.truth.random_effects[k, i, s])
                    fh.write(f"{d},{a},{s + 2},{value!r}\n")
    outputs.append("truth_random_effects.csv")

    fit_data = {"counts": "counts.csv", "diseases": list(disease_names)}
    if external:
        fit_data["covariates"] = "covariates.csv"
    if meta is not None:
        fit_data["adjacency"] = "adjacency.csv"
        fit_data["population"] = "population.csv"
    fit_cfg = {"schema_version": _SCHEMA_VERSION,
               "variant": cfg.variant.value, "seed": cfg.seed,
               "output_dir": "fit", "data": fit_data}
    for section in ("model", "run", "priors", "output"):
        if cfg.resolved.get(section):
            fit_cfg[section] = cfg.resolved[section]
    fit_cfg.setdefault("run", {"iterations": 2000, "burn_in": 1000})
    (out / "fit_config.yaml").write_text(
        yaml.safe_dump(fit_cfg, sort_keys=True))
    outputs.append("fit_config.yaml")

    _write_manifest(cfg, "simulate", {}, outputs)
    print(f"simulate: wrote {len(outputs) + 1} files to {out}")


# ---------------------------------------------------------------------------
# fit


def cmd_fit(cfg: RunConfig) -> None:
    """Fit the configured variant and write draws plus report tables."""
    md, bundle, panel, data_hashes = _load_inputs(cfg)
    if "iterations" not in cfg.run:
        raise ValueError("run.iterations is required to fit")
    iterations = cfg.run["iterations"]
    burn_in = cfg.run.get("burn_in", iterations // 2)
    chains = cfg.run.get("chains", 3)
    threads = cfg.threads if cfg.threads >= 1 else chains
    draws = run_gibbs(
        md, cfg.variant, _prior_spec(cfg, panel.disease_names),
        iterations=iterations, burn_in=burn_in,
        thin=cfg.run.get("thin", 1), chains=chains, seed=cfg.seed,
        threads=threads, init_scale=cfg.run.get("init_scale", 1.0),
        prior_only=cfg.run.get("prior_only", False),
        odds_blocks=cfg.odds_blocks,
        store_random_effects=cfg.run.get("store_random_effects", True))

    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    save_draws(out / "draws.npz", draws, data_hashes, cfg.config_hash)
    _write_draws_csv(draws, out / "draws.csv")
    _write_diagnostics_csv(draws, out / "diagnostics.csv")
    _write_summary_csv(cfg, draws, out / "summary.csv")
    _write_presence_csv(draws, out / "presence_prob.csv")
    report = waic(draws)
    _write_waic_json(report, out / "waic.json")
    outputs = ["draws.npz", "draws.csv", "diagnostics.csv", "summary.csv",
               "presence_prob.csv", "waic.json"]
    outputs += _write_response_curves(cfg, draws, md, bundle)
    _write_manifest(cfg, "fit", data_hashes, outputs)

    diag = draws.diagnostics()
    finite = {n: r for n, (r, _) in diag.items() if np.isfinite(r)}
    worst = max(finite, key=finite.get) if finite else None
    if worst is not None:
        print(f"fit: waic {report.waic:.4f}, worst R-hat "
              f"{finite[worst]:.4f} ({worst}), outputs in {out}")
    else:
        print(f"fit: waic {report.waic:.4f}, outputs in {out}")
    threshold = cfg.run.get("rhat_threshold", 1.05)
    bad = {n: r for n, r in finite.items() if r > threshold}
    if bad:
        names = ", ".join(f"{n} ({bad[n]:.4f})" for n in sorted(bad))
        message = (f"{len(bad)} parameters exceed R-hat {threshold}: "
                   f"{names}")
        if cfg.strict:
            raise ConvergenceError(message)
        print(f"warning: {message}", file=sys.stderr)


# ---------------------------------------------------------------------------
# waic / summarize


def cmd_waic(cfg: RunConfig, draws_path) -> None:
    """Recompute WAIC from persisted draws through the filter path."""
    draws, meta = load_draws(draws_path)
    md, bundle, panel, data_hashes = _load_inputs(cfg)
    _check_draws_match(cfg, meta, panel, data_hashes)
    report = waic(draws, md, recompute=True)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_waic_json(report, out / "waic_recomputed.json")
    _write_manifest(cfg, "waic", data_hashes, ["waic_recomputed.json"])
    print(f"waic: {report.waic!r} (lppd {report.lppd:.4f}, "
          f"p_waic {report.p_waic:.4f})")


def cmd_summarize(cfg: RunConfig, draws_path) -> None:
    """Summary tables and response curves from persisted draws."""
    draws, meta = load_draws(draws_path)
    md, bundle, panel, data_hashes = _load_inputs(cfg)
    _check_draws_match(cfg, meta, panel, data_hashes)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_summary_csv(cfg, draws, out / "summary.csv")
    _write_diagnostics_csv(draws, out / "diagnostics.csv")
    _write_presence_csv(draws, out / "presence_prob.csv")
    outputs = ["summary.csv", "diagnostics.csv", "presence_prob.csv"]
    outputs += _write_response_curves(cfg, draws, md, bundle)
    _write_manifest(cfg, "summarize", data_hashes, outputs)
    print(f"summarize: wrote {len(outputs) + 1} files to {out}")


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mnswitch",
        description="Simulate, fit and compare switching zero-inflated "
                    "autoregressive multinomial disease panel models.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "draw a synthetic panel plus generating truth",
        "fit": "run the Gibbs sampler on a panel",
        "waic": "recompute WAIC from persisted draws",
        "summarize": "summary tables and response curves from draws",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", required=True,
                        help="YAML run configuration")
        sp.add_argument("--variant", help="override the config's variant")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--threads", type=int,
                        help="chain-level workers (default: chain count)")
        sp.add_argument("--output-dir", help="override the output directory")
        sp.add_argument("--strict", action="store_true", default=None,
                        help="exit 4 when any R-hat exceeds the threshold")
        if name in ("waic", "summarize"):
            sp.add_argument("--draws",
                            help="draw archive (default: "
                                 "<output_dir>/draws.npz)")
    return parser


def _overrides(args) -> dict:
    out = {}
    for key in ("variant", "seed", "threads", "strict"):
        value = getattr(args, key)
        if value is not None:
            out[key] = value
    if args.output_dir is not None:
        # flag paths are relative to the caller's directory, not the config
        out["output_dir"] = str(Path(args.output_dir).absolute())
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "fit":
            cmd_fit(cfg)
        else:
            draws_path = getattr(args, "draws", None)
            if draws_path is None:
                draws_path = cfg.output_dir / "draws.npz"
            else:
                draws_path = Path(draws_path).absolute()
            if args.command == "waic":
                cmd_waic(cfg, draws_path)
            else:
                cmd_summarize(cfg, draws_path)
    except ConvergenceError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return 4
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


__all__ = ["RunConfig", "load_config", "save_draws", "load_draws",
           "cmd_simulate", "cmd_fit", "cmd_waic", "cmd_summarize",
           "build_parser", "main"]


if __name__ == "__main__":
    sys.exit(main())
