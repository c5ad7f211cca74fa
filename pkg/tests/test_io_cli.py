import json
from pathlib import Path

import numpy as np
import pytest

from frictionchan import __version__
from frictionchan.cli import SCENARIOS, config_from_string, main, validate
from frictionchan.core import char_function, gaussian_state, make_grid
from frictionchan.io import (
    config_hash,
    make_metadata,
    read_csv,
    read_json,
    strip_timestamp,
    write_char_csv,
    write_csv,
    write_json,
)

CONFIGS = Path(__file__).resolve().parents[1] / "scripts" / "configs"
CONFIG_FILE = {
    "simulate": "simulate.ini",
    "trajectories": "trajectories.ini",
    "moments": "moments.ini",
    "stability": "stability.ini",
    "equilibrium": "equilibrium.ini",
    "diffusion-compare": "diffusion.ini",
    "dcsl-map": "dcsl_map.ini",
    "dcsl-identity": "dcsl_identity.ini",
    "bystander": "bystander.ini",
    "charfunc-iterate": "charfunc.ini",
}

MOMENT_COLS = ["t", "x", "p", "xx", "xp", "pp", "energy"]
CSV_SCHEMA = {
    "simulate": {"simulate.csv": MOMENT_COLS},
    "trajectories": {"trajectories.csv": MOMENT_COLS + ["se_x", "se_p", "se_xx", "se_xp", "se_pp"]},
    "moments": {"moments.csv": MOMENT_COLS},
    "stability": {
        "stability.csv": ["gamma_over_omega", "alpha", "max_re_over_omega", "det", "det_formula", "predicted_stable"]
    },
    "diffusion-compare": {
        "diffusion_compare.csv": [
            "t", "full_xx", "full_xp", "full_pp", "cl_xx", "cl_xp", "cl_pp",
            "trace_distance", "rel_xx", "rel_xp", "rel_pp",
        ]
    },
    "charfunc-iterate": {
        "charfunc_iterate.csv": ["iteration", "offaxis_sup", "onaxis_error"],
        "charfunc_final.csv": ["P", "X", "re", "im"],
    },
}
JSON_SCHEMA = {
    "equilibrium": {
        "equilibrium.json": {
            "correlation_closed_form", "energy_closed_form", "energy_over_hbar_omega",
            "imbalance_closed_form", "quadrature_moments",
        }
    },
    "diffusion-compare": {"diffusion_summary.json": {"coefficients", "max_rel_error"}},
    "dcsl-map": {
        "dcsl_map.json": {"Gamma", "alpha", "sigma", "dims", "frictionless", "critical_mass", "scaled", "com_reduction"}
    },
    "dcsl-identity": {"dcsl_identity.json": {"grid_n", "grid_p_max", "k", "r_csl", "max_relative_residual"}},
    "bystander": {"bystander.json": {"control_norm", "cross_norm", "imbalance", "raw_norm"}},
}
META_KEYS = {"scenario", "version", "config_hash", "seed", "timestamp"}


def _cfg_text(scenario, **overrides):
    """Shipped config text with ``section.key`` overrides (None deletes the key)."""
    cfg = config_from_string((CONFIGS / CONFIG_FILE[scenario]).read_text()).as_dict()
    for dotted, v in overrides.items():
        sec, key = dotted.split(".")
        if v is None:
            cfg.get(sec, {}).pop(key, None)
        else:
            cfg.setdefault(sec, {})[key] = str(v)
    return "\n".join(f"[{s}]\n" + "\n".join(f"{k} = {v}" for k, v in kv.items()) for s, kv in cfg.items()) + "\n"


def _write(tmp_path, scenario, **overrides):
    p = tmp_path / f"{scenario}.ini"
    p.write_text(_cfg_text(scenario, **overrides))
    return str(p)


def _drop_section(tmp_path, scenario, section):
    cfg = config_from_string((CONFIGS / CONFIG_FILE[scenario]).read_text()).as_dict()
    cfg.pop(section)
    p = tmp_path / f"{scenario}_no_{section}.ini"
    p.write_text("\n".join(f"[{s}]\n" + "\n".join(f"{k} = {v}" for k, v in kv.items()) for s, kv in cfg.items()) + "\n")
    return str(p)


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_shipped_configs_validate_clean(scenario):
    cfg = config_from_string((CONFIGS / CONFIG_FILE[scenario]).read_text())
    report = validate(cfg, scenario)
    assert report.errors == [] and report.warnings == []
    assert report.exit_code == 0


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_golden_schema(tmp_path, scenario):
    out = tmp_path / "out"
    assert main([scenario, "--config", str(CONFIGS / CONFIG_FILE[scenario]), "--out", str(out)]) == 0
    expected = set(CSV_SCHEMA.get(scenario, {})) | set(JSON_SCHEMA.get(scenario, {}))
    assert {p.name for p in out.iterdir()} == expected
    for name, cols in CSV_SCHEMA.get(scenario, {}).items():
        meta, got, data = read_csv(out / name)
        assert got == cols
        assert set(meta) == META_KEYS and meta["scenario"] == scenario and meta["version"] == __version__
        assert data.shape[0] > 0 and np.all(np.isfinite(data))
    for name, keys in JSON_SCHEMA.get(scenario, {}).items():
        doc = read_json(out / name)
        assert set(doc) == {"metadata", "result"}
        assert set(doc["metadata"]) == META_KEYS
        assert set(doc["result"]) == keys


@pytest.mark.parametrize("scenario", ["simulate", "trajectories", "stability", "dcsl-map", "charfunc-iterate"])
def test_outputs_deterministic_modulo_timestamp(tmp_path, scenario):
    cfg = str(CONFIGS / CONFIG_FILE[scenario])
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([scenario, "--config", cfg, "--out", str(a), "--seed", "11"]) == 0
    assert main([scenario, "--config", cfg, "--out", str(b), "--seed", "11", "--workers", "2"]) == 0
    for f in a.iterdir():
        ta, tb = f.read_text(), (b / f.name).read_text()
        assert "timestamp" in ta
        assert strip_timestamp(ta) == strip_timestamp(tb)
        assert "timestamp" not in strip_timestamp(ta)


def test_trajectory_seed_changes_output(tmp_path):
    cfg = str(CONFIGS / CONFIG_FILE["trajectories"])
    main(["trajectories", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["trajectories", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "2"])
    _, _, da = read_csv(tmp_path / "a" / "trajectories.csv")
    _, _, db = read_csv(tmp_path / "b" / "trajectories.csv")
    assert not np.array_equal(da[1:], db[1:])


def test_stability_sign_structure_from_cli(tmp_path):
    main(["stability", "--config", str(CONFIGS / "stability.ini"), "--out", str(tmp_path)])
    _, cols, d = read_csv(tmp_path / "stability.csv")
    c = {k: d[:, i] for i, k in enumerate(cols)}
    assert d.shape[0] == 100 * 100
    assert np.array_equal(c["max_re_over_omega"] < 0, c["predicted_stable"] == 1)
    assert np.max(np.abs(c["det"] - c["det_formula"])) <= 1e-12 * max(1.0, np.max(np.abs(c["det_formula"])))


def test_dcsl_identity_residual_from_cli(tmp_path):
    main(["dcsl-identity", "--config", str(CONFIGS / "dcsl_identity.ini"), "--out", str(tmp_path)])
    r = read_json(tmp_path / "dcsl_identity.json")["result"]
    assert (r["k"], r["r_csl"]) == (0.2, 1.0)
    assert r["max_relative_residual"] <= 1e-8


def test_missing_mu_exits_2_naming_key(tmp_path, capsys):
    cfg = _drop_section(tmp_path, "simulate", "mu")
    assert main(["simulate", "--config", cfg, "--validate-only"]) == 2
    assert "mu" in capsys.readouterr().err
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "mu" in capsys.readouterr().err
    assert not (tmp_path / "o" / "simulate.csv").exists()


def test_missing_sigma_names_key(tmp_path, capsys):
    cfg = _write(tmp_path, "simulate", **{"mu.sigma": None})
    assert main(["simulate", "--config", cfg, "--validate-only"]) == 2
    assert "[mu] sigma" in capsys.readouterr().err


def test_heating_regime_is_a_warning(tmp_path, capsys):
    cfg = _write(tmp_path, "simulate", **{"feedback.alpha": 2.5})
    assert main(["simulate", "--config", cfg, "--validate-only"]) == 0
    assert "heating regime" in capsys.readouterr().err
    report = validate(config_from_string(_cfg_text("simulate", **{"feedback.alpha": 2.5})), "simulate")
    assert report.errors == [] and any("heating regime" in w for w in report.warnings)


def test_dcsl_scale_into_heating_fails(tmp_path, capsys):
    # alpha0 = 1/3, so m = 0.1 gives alpha = 10/3
    cfg = _write(tmp_path, "dcsl-map", **{"dcsl.scale_to": "2 0.1"})
    assert main(["dcsl-map", "--config", cfg, "--validate-only"]) == 3
    assert "precondition" in capsys.readouterr().err
    assert main(["dcsl-map", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_validate_only_writes_nothing(tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(CONFIGS / "simulate.ini"), "--validate-only", "--out", str(out)]) == 0
    assert not out.exists()


def test_bad_values_exit_2(tmp_path):
    for over in ({"grid.n": "abc"}, {"time.dt": -0.1}, {"mu.sigma": 0}, {"hamiltonian.potential": "quartic"}):
        cfg = _write(tmp_path, "simulate", **over)
        assert main(["simulate", "--config", cfg, "--validate-only"]) in (2, 3), over


def test_unknown_scenario_and_missing_file(tmp_path):
    with pytest.raises(SystemExit):
        main(["teleport", "--config", str(CONFIGS / "simulate.ini")])
    assert main(["simulate", "--config", str(tmp_path / "missing.ini")]) == 2
    assert validate(config_from_string("[grid]\nn = 64\n"), "teleport").exit_code == 2


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    rows = rng.normal(size=(7, 3)) * 10.0 ** rng.integers(-20, 20, size=(7, 3))
    meta = make_metadata({"a": {"b": "1"}}, 5, "test")
    write_csv(tmp_path / "t.csv", ["a", "b", "c"], rows, meta)
    m, cols, back = read_csv(tmp_path / "t.csv")
    assert cols == ["a", "b", "c"]
    assert np.array_equal(back, rows)
    assert m["seed"] == "5" and m["config_hash"] == meta["config_hash"]
    with pytest.raises(ValueError):
        write_csv(tmp_path / "u.csv", ["a"], rows, meta)


def test_json_round_trip(tmp_path):
    rec = {"x": np.float64(0.1), "arr": np.arange(3), "z": 1 + 2j, "flag": np.bool_(True), "n": np.int64(4)}
    write_json(tmp_path / "t.json", rec, make_metadata({}, None, "test"))
    doc = read_json(tmp_path / "t.json")
    assert doc["result"] == {"x": 0.1, "arr": [0, 1, 2], "z": {"re": 1.0, "im": 2.0}, "flag": True, "n": 4}
    assert doc["metadata"]["seed"] is None
    json.dumps(doc)


def test_char_csv_round_trip(tmp_path):
    g = make_grid(16, 4.0)
    chi = char_function(gaussian_state(g, 0.3, 0.2, 1.0))
    write_char_csv(tmp_path / "c.csv", chi, make_metadata({}, 0, "test"))
    _, cols, d = read_csv(tmp_path / "c.csv")
    assert cols == ["P", "X", "re", "im"] and d.shape == (16 * 16, 4)
    back = (d[:, 2] + 1j * d[:, 3]).reshape(16, 16)
    assert np.array_equal(back, chi.values)
    assert np.array_equal(d[:: 16, 0], chi.P) and np.array_equal(d[:16, 1], chi.X)


def test_config_hash_canonical():
    a = config_hash({"mu": {"sigma": "1", "kind": "gaussian"}, "grid": {"n": "64"}})
    b = config_hash({"grid": {"n": "64"}, "mu": {"kind": "gaussian", "sigma": "1"}})
    c = config_hash({"grid": {"n": "65"}, "mu": {"kind": "gaussian", "sigma": "1"}})
    assert a == b != c and len(a) == 64


def test_strip_timestamp_only_removes_timestamp():
    text = '# seed: 1\n# timestamp: 2020\nt,x\n{\n  "timestamp": "x",\n  "seed": 1\n'
    assert strip_timestamp(text) == '# seed: 1\nt,x\n{\n  "seed": 1\n'
