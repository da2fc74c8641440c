"""Config parsing, sweep orchestration, series emission, resume, CLI."""

import json
import math
import os
import warnings

import numpy as np
import pytest

from transmech.cli import main
from transmech.dynamics import HealthReport, Trajectory
from transmech.errors import CheckpointError, ConfigError
from transmech.fock import FockLayout
from transmech.model import TWO_PI, SystemParams
from transmech.scenarios import (
    CSV_COLUMNS,
    PARAM_KEYS,
    SCENARIOS,
    ScenarioConfig,
    emit_series,
    initial_state,
    load_config,
    make_observer,
    params_fingerprint,
    read_series,
    resolve_params,
    resume,
    run_scenario,
    sweep_points,
)

# dims used by the fast end-to-end runs; mech depth 4 keeps the initial
# thermal state's truncated-ladder gap inside the clamp band
TINY = 'transmon = 2\nmr1 = 4\nmr2 = 4'


def write_config(tmp_path, body, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(body)
    return path


# ---------------------------------------------------------------------------
# parameter resolution


def test_resolver_converts_hz_once():
    p = resolve_params({"omega1_hz": 12e6})
    assert p.omega1 == pytest.approx(TWO_PI * 12e6)


def test_resolver_rejects_unknown_and_unsuffixed_keys():
    with pytest.raises(ConfigError, match="gamma_x"):
        resolve_params({"gamma_x": 1.0})
    with pytest.raises(ConfigError, match="omega1_hz"):
        resolve_params({"omega1": 10e6})


def test_resolver_delta_split_preserves_mean():
    base = SystemParams.default()
    p = resolve_params({"delta_g_hz": 13.9e3})
    assert p.g01 - p.g02 == pytest.approx(TWO_PI * 13.9e3)
    assert (p.g01 + p.g02) / 2 == pytest.approx((base.g01 + base.g02) / 2)


def test_resolver_gamma_tie_and_override():
    tied = resolve_params({"gamma_t_hz": 100.0})
    assert tied.gamma_phi == pytest.approx(2 * tied.gamma_t)
    free = resolve_params({"gamma_t_hz": 100.0, "gamma_phi_hz": 30.0})
    assert free.gamma_phi == pytest.approx(TWO_PI * 30.0)


def test_resolver_n_th_sets_both_baths():
    p = resolve_params({"n_th": 8.0})
    assert p.nbar1 == 8.0 and p.nbar2 == 8.0


def test_fingerprint_tracks_physics_only():
    p = SystemParams.default()
    a = params_fingerprint(p, (3, 8, 8), "rotating")
    assert a == params_fingerprint(p, (3, 8, 8), "rotating")
    assert a != params_fingerprint(resolve_params({"nbar1": 0.3}), (3, 8, 8), "rotating")
    assert a != params_fingerprint(p, (3, 8, 10), "rotating")
    assert a != params_fingerprint(p, (3, 8, 8), "lab")
    assert a != params_fingerprint(p, (3, 8, 8), "rotating", initial_phonons=0.2)
    assert len(a) == 32


# ---------------------------------------------------------------------------
# config loading


def test_minimal_config_gets_scenario_defaults(tmp_path):
    cfg = load_config(write_config(tmp_path, 'scenario = "stability"'))
    assert cfg.scenario == "stability"
    assert cfg.layout.dims == (3, 8, 8)
    assert cfg.horizon_tau == 200.0
    assert cfg.frame == "rotating"
    # the stability preset applies the published coupling asymmetry
    assert cfg.params.g01 - cfg.params.g02 == pytest.approx(TWO_PI * 13.9e3)
    base = SystemParams.default()
    assert (cfg.params.g01 + cfg.params.g02) / 2 == pytest.approx(base.g01)


def test_preset_sweeps_survive_loading(tmp_path):
    cfg = load_config(write_config(tmp_path, 'scenario = "coupling_asymmetry"'))
    assert cfg.sweep_parameter == "delta_g_hz"
    assert cfg.sweep_values == (0.0, 6.1e3, 13.9e3)
    cfg2 = load_config(write_config(tmp_path, 'scenario = "thermal_noise"'))
    assert cfg2.sweep_parameter == "n_th"
    assert cfg2.sweep_values == (0.2, 8.0, 20.0)
    cfg3 = load_config(write_config(tmp_path, 'scenario = "qubit_decoherence"'))
    assert cfg3.sweep_parameter == "gamma_t_hz"
    assert cfg3.sweep_values == (4.5e3, 0.05e3)


def test_file_sweep_overrides_preset(tmp_path):
    body = 'scenario = "coupling_asymmetry"\n[sweep]\nparameter = "n_th"\nvalues = [0.2, 2.0]\n'
    cfg = load_config(write_config(tmp_path, body))
    assert cfg.sweep_parameter == "n_th"
    assert cfg.sweep_values == (0.2, 2.0)


@pytest.mark.parametrize(
    "body, fragment",
    [
        ('scenario = "nope"', "unknown scenario"),
        ('scenario = "custom"\nbogus = 1', "unknown config keys"),
        ('scenario = "custom"\n[params]\ngamma_x = 1.0', "gamma_x"),
        ('scenario = "custom"\n[params]\nomega1 = 10e6', "omega1_hz"),
        ('scenario = "custom"\n[dims]\nqubit = 2', "unknown dims"),
        ('scenario = "custom"\n[integrator]\nt_end = 1.0', "integrator"),
        ('scenario = "custom"\nframe = "sideways"', "frame"),
        ('scenario = "custom"\nhorizon_tau = -1', "horizon"),
        ('scenario = "custom"\n[sweep]\nparameter = "nope_hz"\nvalues = [1.0]', "schema"),
        ('scenario = "custom"\n[sweep]\nparameter = "n_th"\nvalues = [1.0, 1.0]', "distinct"),
        ('scenario = "custom"\n[sweep]\nparameter = "n_th"\nvalues = []', "nonempty"),
        ('scenario = "custom"\n[sweep]\nvalues = [1.0]', "parameter"),
        ('horizon_tau = 5', "scenario"),
        ('scenario = custom', "parse error"),
    ],
)
def test_config_rejections(tmp_path, body, fragment):
    with pytest.raises(ConfigError, match=fragment):
        load_config(write_config(tmp_path, body))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.toml")


def test_sweep_nonfinite_rejected(tmp_path):
    body = 'scenario = "custom"\n[sweep]\nparameter = "n_th"\nvalues = [1.0, inf]\n'
    with pytest.raises(ConfigError, match="finite"):
        load_config(write_config(tmp_path, body))


def test_sweep_point_labels_and_params(tmp_path):
    cfg = load_config(write_config(tmp_path, 'scenario = "coupling_asymmetry"'))
    points = sweep_points(cfg)
    assert [p[0] for p in points] == [
        "point_0_delta_g_hz_0",
        "point_1_delta_g_hz_6100",
        "point_2_delta_g_hz_13900",
    ]
    assert points[0][1].g01 == points[0][1].g02
    assert points[2][1].g01 - points[2][1].g02 == pytest.approx(TWO_PI * 13.9e3)


def test_single_run_label_is_scenario(tmp_path):
    cfg = load_config(write_config(tmp_path, 'scenario = "entanglement_ng"'))
    (label, params, value), = sweep_points(cfg)
    assert label == "entanglement_ng"
    assert value is None
    assert params == cfg.params


# ---------------------------------------------------------------------------
# initial state and observer


def test_initial_state_is_triple_ground():
    params = SystemParams.default()
    layout = FockLayout((2, 4, 4))
    rho = initial_state(layout)
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)
    assert rho[0, 0].real == pytest.approx(1.0, abs=1e-12)
    rec = make_observer(params, layout)(0.0, rho)
    assert rec["n_transmon"] == pytest.approx(0.0, abs=1e-12)
    assert rec["n_mr1"] == pytest.approx(0.0, abs=1e-12)
    assert rec["EN_bits"] == 0.0
    assert rec["delta12_nats"] == pytest.approx(0.0, abs=1e-12)
    assert set(rec) == {
        "EN_bits", "delta12_nats", "nu_plus", "nu_minus", "n_transmon", "n_mr1", "n_mr2",
    }


def test_initial_state_optional_occupancy():
    layout = FockLayout((2, 6, 6))
    rho = initial_state(layout, 0.2)
    rec = make_observer(SystemParams.default(), layout)(0.0, rho)
    # truncated thermal occupation sits just under the requested value
    assert 0.19 < rec["n_mr1"] < 0.2
    assert rec["n_mr1"] == rec["n_mr2"]


# ---------------------------------------------------------------------------
# series emission


def _traj(times, records):
    health = HealthReport(0.0, 0.0, 0.0, 0.0, 1e-7, 1e-7, 1e-4, True, False)
    return Trajectory(
        times=np.asarray(times, dtype=float),
        records={k: np.asarray(v, dtype=float) for k, v in records.items()},
        health=health,
        final_state=np.eye(2) / 2,
        final_time=float(times[-1]) if len(times) else 0.0,
        tau=2.0,
        n_steps=1,
        n_rejected=0,
        wall_time=0.0,
    )


def _full_records(n):
    base = {}
    for i, name in enumerate(CSV_COLUMNS[2:]):
        base[name] = [1 / 3 + i * 0.1, 1e-17 * (i + 1), float(i)][:n] if n <= 3 else np.linspace(0, 1, n)
    return {k: np.asarray(v)[:n] for k, v in base.items()}


def test_emit_series_roundtrip_exact(tmp_path):
    n = 3
    records = {name: np.array([1 / 3, 1e-17, 0.1]) * (i + 1) for i, name in enumerate(CSV_COLUMNS[2:])}
    traj = _traj([0.0, 2.0, 4.0], records)
    path = tmp_path / "s.csv"
    emit_series(traj, path)
    back = read_series(path)
    assert list(back) == list(CSV_COLUMNS)
    np.testing.assert_array_equal(back["t_over_tau"], [0.0, 1.0, 2.0])
    np.testing.assert_array_equal(back["t_seconds"], [0.0, 2.0, 4.0])
    for name in CSV_COLUMNS[2:]:
        np.testing.assert_array_equal(back[name], records[name])


def test_emit_series_refuses_empty_and_incomplete(tmp_path):
    empty = _traj([], {name: [] for name in CSV_COLUMNS[2:]})
    target = tmp_path / "never.csv"
    with pytest.raises(ValueError, match="empty"):
        emit_series(empty, target)
    assert not target.exists()
    partial = _traj([0.0], {"EN_bits": [0.0]})
    with pytest.raises(ValueError, match="lacks"):
        emit_series(partial, target)
    assert not target.exists()


def test_emit_single_sample(tmp_path):
    records = {name: np.array([0.5]) for name in CSV_COLUMNS[2:]}
    path = tmp_path / "one.csv"
    emit_series(_traj([2.0], records), path)
    text = path.read_text().splitlines()
    assert len(text) == 2
    assert text[0] == ",".join(CSV_COLUMNS)


# ---------------------------------------------------------------------------
# end-to-end runs (tiny layouts)


def tiny_body(scenario="entanglement_ng", horizon=1.0, extra=""):
    return (
        f'scenario = "{scenario}"\nhorizon_tau = {horizon}\n{extra}\n'
        f"[dims]\n{TINY}\n[integrator]\nrtol = 1e-7\n"
    )


@pytest.fixture()
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def test_run_scenario_end_to_end(tmp_path, quiet):
    out = str(tmp_path / "out")
    cfg = load_config(write_config(tmp_path, tiny_body(extra=f'out_dir = "{out}"\n')))
    manifest = run_scenario(cfg)
    assert manifest.passed
    csv = os.path.join(out, "entanglement_ng.csv")
    ckpt = os.path.join(out, "entanglement_ng.ckpt")
    assert os.path.exists(csv) and os.path.exists(ckpt)
    assert os.path.exists(os.path.join(out, "config.toml"))
    data = read_series(csv)
    assert len(data["t_over_tau"]) == 3  # horizon 1 tau, two samples per tau
    assert list(data["t_over_tau"]) == [0.0, 0.5, 1.0]
    doc = json.load(open(os.path.join(out, "manifest.json")))
    assert doc["passed"] is True
    assert doc["config_hash"] == cfg.config_hash()
    assert doc["version"]
    assert doc["parameter_snapshots"]["entanglement_ng"]["omega1"] == pytest.approx(TWO_PI * 10e6)


def test_run_scenario_is_deterministic(tmp_path, quiet):
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    body1 = tiny_body(extra=f'out_dir = "{out1}"\n')
    path1 = write_config(tmp_path, body1, "c1.toml")
    run_scenario(load_config(path1))
    run_scenario(load_config(path1))  # rerun into the same directory
    first = open(os.path.join(out1, "entanglement_ng.csv"), "rb").read()
    cfg2 = load_config(write_config(tmp_path, tiny_body(extra=f'out_dir = "{out2}"\n'), "c2.toml"))
    run_scenario(cfg2)
    second = open(os.path.join(out2, "entanglement_ng.csv"), "rb").read()
    assert first == second


def test_sweep_outputs_order_independent(tmp_path, quiet):
    def base(out):
        return (
            f'scenario = "custom"\nhorizon_tau = 0.5\nout_dir = "{out}"\n'
            f"[dims]\n{TINY}\n[integrator]\nrtol = 1e-7\n"
            '[sweep]\nparameter = "n_th"\nvalues = [0.05, 0.15]\n'
        )

    out1, out2 = str(tmp_path / "serial"), str(tmp_path / "pool")
    cfg1 = load_config(write_config(tmp_path, base(out1), "s.toml"))
    cfg2 = load_config(write_config(tmp_path, base(out2), "p.toml"))
    m1 = run_scenario(cfg1, workers=1)
    m2 = run_scenario(cfg2, workers=2)
    assert m1.passed and m2.passed
    for label, _ in m1.points:
        a = open(os.path.join(out1, f"{label}.csv"), "rb").read()
        b = open(os.path.join(out2, f"{label}.csv"), "rb").read()
        assert a == b


def test_health_failure_keeps_partial_output(tmp_path, quiet):
    # transmon depth 3 puts the Kerr ladder in play; a deliberately coarse
    # fixed step then breaks positivity within the first sample interval
    out = str(tmp_path / "broken")
    body = (
        'scenario = "custom"\nhorizon_tau = 2.0\n'
        f'out_dir = "{out}"\n'
        "[dims]\ntransmon = 3\nmr1 = 4\nmr2 = 4\n"
        '[integrator]\nmethod = "rk4"\ndt_init = 2e-9\n'
    )
    manifest = run_scenario(load_config(write_config(tmp_path, body)))
    assert not manifest.passed
    health = manifest.health["custom"]
    assert not health["passed"]
    assert "min_eig" in health["message"] or "observer" in health["message"]
    data = read_series(os.path.join(out, "custom.csv"))
    assert len(data["t_over_tau"]) >= 1  # partial series kept


def test_resume_continues_and_matches(tmp_path, quiet):
    import dataclasses

    out = str(tmp_path / "resume")
    cfg_path = write_config(tmp_path, tiny_body(horizon=1.0, extra=f'out_dir = "{out}"\n'))
    cfg = load_config(cfg_path)
    run_scenario(cfg)
    ckpt = os.path.join(out, "entanglement_ng.ckpt")

    longer = dataclasses.replace(cfg, horizon_tau=2.0)
    manifest = resume(ckpt, longer)
    assert manifest.passed
    tail_csv = [p for p in manifest.outputs if p.endswith(".csv")]
    assert tail_csv and "_from_1tau" in tail_csv[0]
    tail = read_series(tail_csv[0])
    assert tail["t_over_tau"][0] == pytest.approx(1.0)
    assert tail["t_over_tau"][-1] == pytest.approx(2.0)

    out2 = str(tmp_path / "oneshot")
    single = load_config(write_config(tmp_path, tiny_body(horizon=2.0, extra=f'out_dir = "{out2}"\n'), "d.toml"))
    run_scenario(single)
    direct = read_series(os.path.join(out2, "entanglement_ng.csv"))
    # continuation property: occupations at the horizon agree to integrator accuracy
    assert tail["n_mr1"][-1] == pytest.approx(direct["n_mr1"][-1], abs=1e-6)
    assert tail["EN_bits"][-1] == pytest.approx(direct["EN_bits"][-1], abs=1e-6)


def test_resume_noop_at_horizon(tmp_path, quiet):
    out = str(tmp_path / "noop")
    cfg = load_config(write_config(tmp_path, tiny_body(extra=f'out_dir = "{out}"\n')))
    run_scenario(cfg)
    manifest = resume(os.path.join(out, "entanglement_ng.ckpt"), cfg)
    assert manifest.passed
    assert manifest.outputs == ()


def test_resume_refuses_mismatch_and_sweeps(tmp_path, quiet):
    import dataclasses

    out = str(tmp_path / "guard")
    cfg = load_config(write_config(tmp_path, tiny_body(extra=f'out_dir = "{out}"\n')))
    run_scenario(cfg)
    ckpt = os.path.join(out, "entanglement_ng.ckpt")

    other = dataclasses.replace(cfg, params=resolve_params({"nbar1": 0.35}), horizon_tau=3.0)
    with pytest.raises(CheckpointError, match="stored .* vs config"):
        resume(ckpt, other)

    swept = dataclasses.replace(cfg, sweep_parameter="n_th", sweep_values=(0.1, 0.2))
    with pytest.raises(ConfigError, match="single-point"):
        resume(ckpt, swept)

    shrunk = dataclasses.replace(cfg, layout=FockLayout((2, 3, 3)))
    with pytest.raises(CheckpointError, match="dims"):
        resume(ckpt, shrunk)


# ---------------------------------------------------------------------------
# command line


def test_cli_run_and_flags(tmp_path, capsys, quiet):
    out = str(tmp_path / "cli")
    path = write_config(tmp_path, tiny_body())
    code = main(["run", str(path), "--out-dir", out, "--horizon-tau", "0.5"])
    assert code == 0
    assert os.path.exists(os.path.join(out, "entanglement_ng.csv"))
    doc = json.load(open(os.path.join(out, "manifest.json")))
    assert doc["cli_overrides"] == {"out_dir": out, "horizon_tau": 0.5}
    data = read_series(os.path.join(out, "entanglement_ng.csv"))
    assert data["t_over_tau"][-1] == pytest.approx(0.5)


def test_cli_validate_and_params(tmp_path, capsys):
    path = write_config(tmp_path, 'scenario = "thermal_noise"')
    assert main(["validate", str(path)]) == 0
    text = capsys.readouterr().out
    assert "thermal_noise" in text and "3 point(s)" in text
    assert main(["params"]) == 0
    text = capsys.readouterr().out
    for key in PARAM_KEYS:
        assert key in text
    for scenario in SCENARIOS:
        assert scenario in text


def test_cli_exit_codes(tmp_path, capsys, quiet):
    bad = write_config(tmp_path, 'scenario = "nope"')
    assert main(["validate", str(bad)]) == 2
    assert main(["run", str(bad)]) == 2

    out = str(tmp_path / "h")
    body = (
        'scenario = "custom"\nhorizon_tau = 1.0\n'
        f'out_dir = "{out}"\n'
        "[dims]\ntransmon = 3\nmr1 = 4\nmr2 = 4\n"
        '[integrator]\nmethod = "rk4"\ndt_init = 2e-9\n'
    )
    unhealthy = write_config(tmp_path, body, "h.toml")
    assert main(["run", str(unhealthy)]) == 3

    garbage = tmp_path / "garbage.ckpt"
    garbage.write_bytes(b"not a checkpoint at all")
    okcfg = write_config(tmp_path, tiny_body(), "ok.toml")
    assert main(["resume", str(garbage), "--config", str(okcfg)]) == 4


def test_cli_resume_finds_sibling_config(tmp_path, quiet):
    out = str(tmp_path / "sib")
    path = write_config(tmp_path, tiny_body(extra=f'out_dir = "{out}"\n'))
    assert main(["run", str(path)]) == 0
    ckpt = os.path.join(out, "entanglement_ng.ckpt")
    # config.toml was copied beside the checkpoint by the run
    assert main(["resume", ckpt, "--horizon-tau", "1.5"]) == 0
    resumed = [f for f in os.listdir(out) if "_from_" in f]
    assert resumed


def test_cli_rejects_bad_dims(tmp_path, capsys):
    path = write_config(tmp_path, tiny_body())
    with pytest.raises(SystemExit) as exc:
        main(["run", str(path), "--dims", "3,8"])
    assert exc.value.code == 2
