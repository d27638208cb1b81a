"""End-to-end tests for the batch command-line interface."""

import json

import numpy as np
import pandas as pd
import pytest
import yaml

from mnswitch.cli import load_config, load_draws, main, save_draws
from mnswitch.data import load_panel
from mnswitch.model import ModelVariant


def write_yaml(path, mapping):
    path.write_text(yaml.safe_dump(mapping, sort_keys=True))


def sim_config(variant="MS_ZIARMN", n_areas=4, n_times=10, seed=11,
               iterations=80, burn_in=40, chains=2):
    cfg = {
        "schema_version": 1,
        "variant": variant,
        "seed": seed,
        "output_dir": "simout",
        "data": {"diseases": ["dengue", "zika", "chik"]},
        "simulate": {
            "n_times": n_times,
            "n_areas": n_areas,
            "ring": True,
            "population": 50000.0,
            "total_mean": 25.0,
            "external": ["temp"],
            "params": {
                "mixing": [0.5, 0.45, 0.55],
                "intercept_mean": [0.1, -0.2],
                "intercept_sd": [0.3, 0.25],
                "odds": {"zika": {"temp": 0.4}, "chik": {"temp": 0.4}},
                "re_cov": {"sd": [0.5, 0.6], "corr": 0.3},
                "presence_intercepts": [-0.5, -0.8],
                "presence": {"zika": {"temp": 0.5}, "chik": {"temp": 0.3}},
                "persistence": [2.0, 2.2],
                "interaction": [[0.0, 0.4], [0.3, 0.0]],
                "init_presence": [0.4, 0.3],
            },
        },
        "model": {
            "x": {"zika": [{"name": "temp", "standardize": False}],
                  "chik": [{"name": "temp", "standardize": False}]},
            "z": {"zika": [{"name": "temp", "standardize": False}],
                  "chik": [{"name": "temp", "standardize": False}]},
            "share_x": [[["zika", "temp"], ["chik", "temp"]]],
        },
        "run": {"iterations": iterations, "burn_in": burn_in, "thin": 1,
                "chains": chains},
        "output": {
            "exponentiate": ["intercept_mean.zika"],
            "response_curves": [{"coefficient": "odds.shared.temp",
                                 "lo": -2.0, "hi": 2.0, "points": 9}],
        },
    }
    # dead parameter families must stay zero under the reduced variants
    dead = {"MS_ZIARMN": (), "ZIARMN": ("persistence", "interaction"),
            "ZENG": ("persistence", "interaction", "presence"),
            "ARMN": ("persistence", "interaction", "presence")}[variant]
    for key in dead:
        cfg["simulate"]["params"].pop(key, None)
    return cfg


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One shared simulate + fit run for the read-only tests."""
    base = tmp_path_factory.mktemp("pipeline")
    write_yaml(base / "sim.yaml", sim_config())
    assert main(["simulate", "--config", str(base / "sim.yaml")]) == 0
    fit_cfg = base / "simout" / "fit_config.yaml"
    assert main(["fit", "--config", str(fit_cfg)]) == 0
    return {"base": base, "sim_dir": base / "simout",
            "fit_cfg": fit_cfg, "fit_dir": base / "simout" / "fit"}


# ---------------------------------------------------------------------------
# configuration validation


class TestConfigValidation:
    def test_missing_config_file(self, tmp_path):
        assert main(["fit", "--config", str(tmp_path / "none.yaml")]) == 2

    def test_config_must_be_mapping(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("- just\n- a list\n")
        with pytest.raises(ValueError, match="mapping"):
            load_config(p)

    def test_yaml_syntax_error_exits_2(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("a: [unclosed\n")
        assert main(["fit", "--config", str(p)]) == 2

    def test_schema_version_required(self, tmp_path):
        p = tmp_path / "c.yaml"
        write_yaml(p, {"variant": "ARMN"})
        with pytest.raises(ValueError, match="schema_version"):
            load_config(p)

    def test_wrong_schema_version(self, tmp_path):
        p = tmp_path / "c.yaml"
        write_yaml(p, {"schema_version": 2, "variant": "ARMN"})
        with pytest.raises(ValueError, match="schema_version"):
            load_config(p)

    def test_unknown_top_level_key(self, tmp_path):
        p = tmp_path / "c.yaml"
        write_yaml(p, {"schema_version": 1, "variant": "ARMN", "bogus": 1})
        with pytest.raises(ValueError, match="unknown key 'bogus'"):
            load_config(p)

    def test_unknown_nested_keys(self, tmp_path):
        for section, payload in (
                ("run", {"iterations": 10, "warmup": 5}),
                ("data", {"rows": "x.csv"}),
                ("priors", {"sd": 1.0}),
                ("output", {"plots": True})):
            p = tmp_path / f"{section}.yaml"
            write_yaml(p, {"schema_version": 1, "variant": "ARMN",
                           section: payload})
            with pytest.raises(ValueError, match="unknown key"):
                load_config(p)

    def test_unknown_simulate_param(self, tmp_path):
        cfg = sim_config()
        cfg["simulate"]["params"]["gamma"] = 1.0
        p = tmp_path / "c.yaml"
        write_yaml(p, cfg)
        with pytest.raises(ValueError, match="simulate.params"):
            load_config(p)

    def test_variant_required_and_spelled(self, tmp_path):
        p = tmp_path / "c.yaml"
        write_yaml(p, {"schema_version": 1})
        with pytest.raises(ValueError, match="variant"):
            load_config(p)
        write_yaml(p, {"schema_version": 1, "variant": "ZIMARN"})
        with pytest.raises(ValueError, match="unknown variant"):
            load_config(p)

    def test_variant_case_insensitive(self, tmp_path):
        p = tmp_path / "c.yaml"
        write_yaml(p, {"schema_version": 1, "variant": "ms-ziarmn"})
        assert load_config(p).variant is ModelVariant.MS_ZIARMN

    def test_referenced_file_must_exist(self, tmp_path):
        p = tmp_path / "c.yaml"
        write_yaml(p, {"schema_version": 1, "variant": "ARMN",
                       "data": {"counts": "nope.csv"}})
        with pytest.raises(ValueError, match="does not exist"):
            load_config(p)

    def test_adjacency_needs_population(self, tmp_path):
        (tmp_path / "adj.csv").write_text("area_a,area_b\n")
        p = tmp_path / "c.yaml"
        write_yaml(p, {"schema_version": 1, "variant": "ARMN",
                       "data": {"adjacency": "adj.csv"}})
        with pytest.raises(ValueError, match="together"):
            load_config(p)

    def test_bad_covariate_kind(self, tmp_path):
        p = tmp_path / "c.yaml"
        write_yaml(p, {"schema_version": 1, "variant": "ARMN",
                       "model": {"x": {"zika": [{"name": "t",
                                                 "kind": "spline"}]}}})
        with pytest.raises(ValueError, match="unknown covariate kind"):
            load_config(p)

    def test_share_group_needs_two_columns(self, tmp_path):
        p = tmp_path / "c.yaml"
        write_yaml(p, {"schema_version": 1, "variant": "ARMN",
                       "model": {"share_x": [[["zika", "temp"]]]}})
        with pytest.raises(ValueError, match="at least two"):
            load_config(p)

    def test_unknown_coef_class(self, tmp_path):
        p = tmp_path / "c.yaml"
        write_yaml(p, {"schema_version": 1, "variant": "ARMN",
                       "priors": {"coef": {"slope": [0.0, 1.0]}}})
        with pytest.raises(ValueError, match="coefficient class"):
            load_config(p)

    def test_response_curve_bounds(self, tmp_path):
        p = tmp_path / "c.yaml"
        write_yaml(p, {"schema_version": 1, "variant": "ARMN",
                       "output": {"response_curves": [
                           {"coefficient": "odds.z.t", "lo": 2.0,
                            "hi": 1.0}]}})
        with pytest.raises(ValueError, match="hi must exceed lo"):
            load_config(p)

    def test_flag_overrides_beat_config(self, tmp_path):
        p = tmp_path / "c.yaml"
        write_yaml(p, {"schema_version": 1, "variant": "ARMN", "seed": 3})
        cfg = load_config(p)
        assert cfg.seed == 3 and cfg.variant is ModelVariant.ARMN
        over = load_config(p, {"seed": 9, "variant": "ZENG"})
        assert over.seed == 9 and over.variant is ModelVariant.ZENG
        assert over.config_hash != cfg.config_hash

    def test_simulate_requires_dimensions(self, tmp_path):
        p = tmp_path / "c.yaml"
        write_yaml(p, {"schema_version": 1, "variant": "ARMN",
                       "simulate": {"n_areas": 3}})
        with pytest.raises(ValueError, match="n_times is required"):
            load_config(p)


# ---------------------------------------------------------------------------
# simulate command


class TestSimulateCommand:
    def test_outputs_and_shapes(self, pipeline):
        out = pipeline["sim_dir"]
        for name in ("counts.csv", "covariates.csv", "adjacency.csv",
                     "population.csv", "truth_params.csv",
                     "truth_states.csv", "truth_random_effects.csv",
                     "fit_config.yaml", "manifest.json"):
            assert (out / name).is_file(), name
        panel = load_panel(out / "counts.csv", ["dengue", "zika", "chik"])
        assert panel.counts.shape == (3, 4, 10)

    def test_truth_param_names(self, pipeline):
        table = pd.read_csv(pipeline["sim_dir"] / "truth_params.csv")
        names = set(table["param"])
        for expected in ("mixing.dengue", "intercept_mean.zika",
                         "odds.shared.temp", "re_cov.zika.chik",
                         "presence_intercept.chik", "presence.zika.temp",
                         "persistence.zika", "interaction.zika.chik",
                         "init_presence.zika", "area_intercept.zika.a000"):
            assert expected in names, expected
        odds = table.set_index("param").loc["odds.shared.temp", "value"]
        assert odds == 0.4

    def test_simulate_config_missing_section(self, tmp_path):
        p = tmp_path / "c.yaml"
        write_yaml(p, {"schema_version": 1, "variant": "ARMN"})
        assert main(["simulate", "--config", str(p)]) == 2

    def test_manifest_fields(self, pipeline):
        manifest = json.loads(
            (pipeline["sim_dir"] / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["seed"] == 11
        assert manifest["variant"] == "MS_ZIARMN"
        assert "counts.csv" in manifest["output_sha256"]
        assert "mnswitch" in manifest["versions"]
        assert "timestamp" not in json.dumps(manifest).lower()

    def test_armn_truth_has_no_states(self, tmp_path):
        cfg = sim_config(variant="ARMN")
        write_yaml(tmp_path / "sim.yaml", cfg)
        assert main(["simulate", "--config", str(tmp_path / "sim.yaml")]) == 0
        out = tmp_path / "simout"
        assert not (out / "truth_states.csv").exists()
        table = pd.read_csv(out / "truth_params.csv")
        assert not any(n.startswith("presence") for n in table["param"])
        fit_cfg = yaml.safe_load((out / "fit_config.yaml").read_text())
        assert fit_cfg["variant"] == "ARMN"

    def test_seed_flag_changes_panel(self, tmp_path):
        write_yaml(tmp_path / "sim.yaml", sim_config())
        a = tmp_path / "a"
        b = tmp_path / "b"
        args = ["simulate", "--config", str(tmp_path / "sim.yaml")]
        assert main(args + ["--output-dir", str(a)]) == 0
        assert main(args + ["--output-dir", str(b), "--seed", "99"]) == 0
        assert (a / "counts.csv").read_text() != (b / "counts.csv").read_text()

    def test_output_dir_flag(self, tmp_path):
        write_yaml(tmp_path / "sim.yaml", sim_config())
        target = tmp_path / "elsewhere"
        assert main(["simulate", "--config", str(tmp_path / "sim.yaml"),
                     "--output-dir", str(target)]) == 0
        assert (target / "counts.csv").is_file()

    def test_city_scale_shape_round_trips_into_fit(self, tmp_path):
        cfg = sim_config(n_areas=160, n_times=52)
        write_yaml(tmp_path / "sim.yaml", cfg)
        assert main(["simulate", "--config", str(tmp_path / "sim.yaml")]) == 0
        fit_cfg = load_config(tmp_path / "simout" / "fit_config.yaml")
        from mnswitch.cli import _load_inputs
        md, bundle, panel, hashes = _load_inputs(fit_cfg)
        assert panel.counts.shape == (3, 160, 52)
        assert md.n_areas == 160 and md.n_steps == 51
        assert set(hashes) == {"counts", "adjacency", "population",
                               "covariates"}


# ---------------------------------------------------------------------------
# fit command


class TestFitCommand:
    def test_outputs_exist(self, pipeline):
        out = pipeline["fit_dir"]
        for name in ("draws.npz", "draws.csv", "diagnostics.csv",
                     "summary.csv", "presence_prob.csv", "waic.json",
                     "response_curve.odds.shared.temp.csv",
                     "response_crossings.csv", "manifest.json"):
            assert (out / name).is_file(), name

    def test_draw_archive_round_trip(self, pipeline):
        draws, meta = load_draws(pipeline["fit_dir"] / "draws.npz")
        assert draws.variant is ModelVariant.MS_ZIARMN
        assert draws.n_chains == 2
        assert draws.n_draws == 40
        assert draws.disease_names == ("dengue", "zika", "chik")
        assert "states" in draws.chains[0]
        assert set(meta["data_sha256"]) == {"counts", "adjacency",
                                            "population", "covariates"}
        series = draws.scalar_series()
        assert series["odds.shared.temp"].shape == (2, 40)

    def test_waic_json_finite(self, pipeline):
        report = json.loads((pipeline["fit_dir"] / "waic.json").read_text())
        for key in ("waic", "lppd", "p_waic", "se"):
            assert np.isfinite(report[key])
        assert report["n_cells"] == 4 * 9

    def test_presence_probabilities_respect_positive_counts(self, pipeline):
        counts = pd.read_csv(pipeline["sim_dir"] / "counts.csv")
        probs = pd.read_csv(pipeline["fit_dir"] / "presence_prob.csv")
        assert probs["probability"].between(0, 1).all()
        merged = counts.merge(probs, on=["disease", "area", "time"])
        positive = merged[(merged["count"] > 0) & (merged["time"] >= 2)]
        assert len(positive) > 0
        assert (positive["probability"] == 1.0).all()

    def test_draws_csv_matches_archive(self, pipeline):
        table = pd.read_csv(pipeline["fit_dir"] / "draws.csv",
                            float_precision="round_trip")
        draws, _ = load_draws(pipeline["fit_dir"] / "draws.npz")
        series = draws.scalar_series()
        assert set(table["param"]) == set(series)
        row = table[(table["param"] == "mixing.zika")
                    & (table["chain"] == 1) & (table["draw"] == 3)]
        assert row["value"].iloc[0] == series["mixing.zika"][1, 3]

    def test_missing_iterations_exits_2(self, pipeline, tmp_path, capsys):
        cfg = yaml.safe_load(pipeline["fit_cfg"].read_text())
        del cfg["run"]["iterations"]
        cfg["data"] = {k: str(pipeline["sim_dir"] / v) if k != "diseases"
                       else v for k, v in cfg["data"].items()}
        write_yaml(tmp_path / "fit.yaml", cfg)
        assert main(["fit", "--config", str(tmp_path / "fit.yaml")]) == 2
        assert "iterations" in capsys.readouterr().err

    def test_corrupt_counts_coordinate_diagnostic(self, tmp_path, capsys):
        write_yaml(tmp_path / "sim.yaml", sim_config(n_areas=2, n_times=4))
        assert main(["simulate", "--config", str(tmp_path / "sim.yaml")]) == 0
        out = tmp_path / "simout"
        lines = (out / "counts.csv").read_text().splitlines(keepends=True)
        victim = lines.pop(5)  # drop one cell from the grid
        (out / "counts.csv").write_text("".join(lines))
        assert main(["fit", "--config", str(out / "fit_config.yaml")]) == 2
        err = capsys.readouterr().err
        assert "missing cell" in err
        disease, area, time = victim.split(",")[:3]
        assert disease in err and area in err and time in err

    def test_variant_flag_switches_model(self, pipeline, tmp_path):
        out = tmp_path / "armn"
        assert main(["fit", "--config", str(pipeline["fit_cfg"]),
                     "--variant", "ARMN", "--output-dir", str(out),
                     "--seed", "5"]) == 0
        draws, meta = load_draws(out / "draws.npz")
        assert draws.variant is ModelVariant.ARMN
        assert "states" not in draws.chains[0]
        names = set(draws.scalar_series())
        assert not any(n.startswith("presence") for n in names)
        probs = pd.read_csv(out / "presence_prob.csv")
        assert (probs["probability"] == 1.0).all()

    def test_strict_nonconvergence_exit_4(self, pipeline, tmp_path, capsys):
        cfg = yaml.safe_load(pipeline["fit_cfg"].read_text())
        cfg["data"] = {k: str(pipeline["sim_dir"] / v) if k != "diseases"
                       else v for k, v in cfg["data"].items()}
        cfg["run"] = {"iterations": 30, "burn_in": 10, "chains": 2,
                      "rhat_threshold": 0.5}
        write_yaml(tmp_path / "fit.yaml", cfg)
        out = tmp_path / "fitout"
        base = ["fit", "--config", str(tmp_path / "fit.yaml"),
                "--output-dir", str(out)]
        assert main(base + ["--strict"]) == 4
        assert "R-hat" in capsys.readouterr().err
        # outputs are still written before the strict gate trips
        assert (out / "draws.npz").is_file()
        assert (out / "manifest.json").is_file()
        # without --strict the same run only warns
        assert main(base) == 0

    def test_zero_retained_draws_exit_2(self, pipeline, tmp_path):
        cfg = yaml.safe_load(pipeline["fit_cfg"].read_text())
        cfg["data"] = {k: str(pipeline["sim_dir"] / v) if k != "diseases"
                       else v for k, v in cfg["data"].items()}
        cfg["run"] = {"iterations": 0, "burn_in": 0, "chains": 1}
        write_yaml(tmp_path / "fit.yaml", cfg)
        assert main(["fit", "--config", str(tmp_path / "fit.yaml"),
                     "--output-dir", str(tmp_path / "out")]) == 2


# ---------------------------------------------------------------------------
# waic command


class TestWaicCommand:
    def test_recompute_matches_fit_value(self, pipeline, tmp_path):
        out = tmp_path / "rewaic"
        assert main(["waic", "--config", str(pipeline["fit_cfg"]),
                     "--output-dir", str(out),
                     "--draws", str(pipeline["fit_dir"] / "draws.npz")]) == 0
        fitted = json.loads((pipeline["fit_dir"] / "waic.json").read_text())
        redone = json.loads((out / "waic_recomputed.json").read_text())
        assert abs(fitted["waic"] - redone["waic"]) < 1e-10
        assert abs(fitted["lppd"] - redone["lppd"]) < 1e-10
        assert abs(fitted["p_waic"] - redone["p_waic"]) < 1e-10

    def test_default_draws_location(self, pipeline, tmp_path):
        # output_dir still points at the fit directory, so draws.npz is found
        assert main(["waic", "--config", str(pipeline["fit_cfg"])]) == 0
        assert (pipeline["fit_dir"] / "waic_recomputed.json").is_file()

    def test_missing_archive_exits_2(self, pipeline, tmp_path):
        assert main(["waic", "--config", str(pipeline["fit_cfg"]),
                     "--draws", str(tmp_path / "none.npz")]) == 2

    def test_data_hash_mismatch_refused(self, pipeline, tmp_path, capsys):
        altered = tmp_path / "data"
        altered.mkdir()
        for name in ("counts.csv", "covariates.csv", "adjacency.csv",
                     "population.csv"):
            (altered / name).write_text(
                (pipeline["sim_dir"] / name).read_text())
        text = (altered / "counts.csv").read_text().splitlines()
        head, first = text[0], text[1].split(",")
        first[-1] = str(int(first[-1]) + 1)
        (altered / "counts.csv").write_text(
            "\n".join([head, ",".join(first)] + text[2:]) + "\n")
        cfg = yaml.safe_load(pipeline["fit_cfg"].read_text())
        write_yaml(altered / "fit.yaml", cfg)
        assert main(["waic", "--config", str(altered / "fit.yaml"),
                     "--draws", str(pipeline["fit_dir"] / "draws.npz"),
                     "--output-dir", str(tmp_path / "o")]) == 2
        assert "hash mismatch" in capsys.readouterr().err

    def test_variant_mismatch_refused(self, pipeline, tmp_path, capsys):
        assert main(["waic", "--config", str(pipeline["fit_cfg"]),
                     "--variant", "ZENG",
                     "--draws", str(pipeline["fit_dir"] / "draws.npz"),
                     "--output-dir", str(tmp_path / "o")]) == 2
        assert "sampled under" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# summarize command


class TestSummarizeCommand:
    def test_tables_match_fit(self, pipeline, tmp_path):
        out = tmp_path / "summ"
        assert main(["summarize", "--config", str(pipeline["fit_cfg"]),
                     "--output-dir", str(out),
                     "--draws", str(pipeline["fit_dir"] / "draws.npz")]) == 0
        for name in ("summary.csv", "diagnostics.csv", "presence_prob.csv"):
            assert ((out / name).read_bytes()
                    == (pipeline["fit_dir"] / name).read_bytes()), name

    def test_exponentiate_flag_in_summary(self, pipeline, tmp_path):
        table = pd.read_csv(pipeline["fit_dir"] / "summary.csv")
        row = table[table["param"] == "intercept_mean.zika"]
        assert bool(row["exponentiated"].iloc[0])
        assert (row["mean"] > 0).all()

    def test_response_curve_table(self, pipeline):
        curve = pd.read_csv(
            pipeline["fit_dir"] / "response_curve.odds.shared.temp.csv")
        assert list(curve.columns) == ["x", "mean", "lower", "upper"]
        assert len(curve) == 9
        assert curve["x"].iloc[0] == -2.0 and curve["x"].iloc[-1] == 2.0
        assert (curve["lower"] <= curve["mean"]).all()
        assert (curve["mean"] <= curve["upper"]).all()
        assert np.allclose(curve.loc[curve["x"] == 0.0,
                                     ["mean", "lower", "upper"]], 1.0)

    def test_crossings_within_grid(self, pipeline):
        rows = pd.read_csv(pipeline["fit_dir"] / "response_crossings.csv")
        if len(rows):
            assert rows["x"].between(-2.0, 2.0).all()
            assert set(rows["curve"]) <= {"mean", "lower", "upper"}

    def test_constant_draws_give_point_mass_intervals(self, pipeline,
                                                      tmp_path):
        draws, meta = load_draws(pipeline["fit_dir"] / "draws.npz")
        for chain in draws.chains:
            chain["mixing"][:] = 0.25
        save_draws(tmp_path / "const.npz", draws, meta["data_sha256"],
                   meta["config_sha256"])
        out = tmp_path / "summ"
        assert main(["summarize", "--config", str(pipeline["fit_cfg"]),
                     "--output-dir", str(out),
                     "--draws", str(tmp_path / "const.npz")]) == 0
        table = pd.read_csv(out / "summary.csv").set_index("param")
        row = table.loc["mixing.zika"]
        assert row["mean"] == 0.25
        assert row["sd"] == 0.0
        assert row["q2.5"] == row["q97.5"] == 0.25

    def test_hash_mismatch_refused(self, pipeline, tmp_path):
        draws, meta = load_draws(pipeline["fit_dir"] / "draws.npz")
        save_draws(tmp_path / "tampered.npz", draws,
                   {"counts": "0" * 64}, meta["config_sha256"])
        assert main(["summarize", "--config", str(pipeline["fit_cfg"]),
                     "--output-dir", str(tmp_path / "o"),
                     "--draws", str(tmp_path / "tampered.npz")]) == 2


# ---------------------------------------------------------------------------
# determinism


class TestDeterminism:
    def run_pipeline(self, base):
        base.mkdir(parents=True, exist_ok=True)
        write_yaml(base / "sim.yaml",
                   sim_config(n_areas=3, n_times=8, iterations=40,
                              burn_in=20))
        assert main(["simulate", "--config", str(base / "sim.yaml")]) == 0
        assert main(["fit", "--config",
                     str(base / "simout" / "fit_config.yaml")]) == 0
        return base / "simout"

    def test_reruns_are_byte_identical(self, tmp_path):
        first = self.run_pipeline(tmp_path / "one")
        second = self.run_pipeline(tmp_path / "two")
        files = sorted(p.relative_to(first) for p in first.rglob("*")
                       if p.is_file())
        assert (first / "fit" / "draws.npz").relative_to(first) in files
        for rel in files:
            assert ((first / rel).read_bytes()
                    == (second / rel).read_bytes()), str(rel)

    def test_equal_manifests_imply_equal_outputs(self, tmp_path):
        first = self.run_pipeline(tmp_path / "one")
        second = self.run_pipeline(tmp_path / "two")
        for rel in ("manifest.json", "fit/manifest.json"):
            a = json.loads((first / rel).read_text())
            b = json.loads((second / rel).read_text())
            assert a == b, rel
