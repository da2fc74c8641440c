"""Experiment orchestration: configs, sweeps, series emission, manifests.

Config files are TOML. Frequencies are plain Hz there (suffix _hz) and are
converted to angular units exactly once, on load. The sweepable schema is
every frequency field of SystemParams plus the dimensionless occupations
and two convenience keys: delta_g_hz (symmetric coupling split about the
mean) and n_th (sets both mechanical bath occupations). Setting gamma_t_hz
without an explicit gamma_phi_hz keeps the dephasing rate tied at twice
the relaxation rate.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import partial

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    import tomli as tomllib

from . import __version__
from .dynamics import IntegratorConfig, Trajectory, integrate, read_checkpoint, write_checkpoint
from .errors import CheckpointError, ConfigError, HealthError
from .fock import FockLayout, embed, number, partial_trace, thermal_state
from .measures import measure_record
from .model import TWO_PI, FullSystem, SystemParams

_FREQ_FIELDS = (
    "omega_t", "lam", "omega1", "omega2", "g01", "g02", "amp1", "amp2",
    "omega_l1", "omega_l2", "gamma_t", "gamma_phi", "gamma1", "gamma2",
)
_PLAIN_FIELDS = ("nbar1", "nbar2")
_DERIVED_KEYS = ("delta_g_hz", "n_th")

PARAM_KEYS = tuple(f"{name}_hz" for name in _FREQ_FIELDS) + _PLAIN_FIELDS + _DERIVED_KEYS

# per-scenario parameter presets and sweep axes; the asymmetry, decoherence
# and thermal sweeps mirror the published three-curve comparisons
SCENARIOS = {
    "stability": {"params": {"delta_g_hz": 13.9e3}, "sweep": None},
    "entanglement_ng": {"params": {}, "sweep": None},
    "coupling_asymmetry": {"params": {}, "sweep": ("delta_g_hz", (0.0, 6.1e3, 13.9e3))},
    "qubit_decoherence": {"params": {}, "sweep": ("gamma_t_hz", (4.5e3, 0.05e3))},
    "thermal_noise": {"params": {}, "sweep": ("n_th", (0.2, 8.0, 20.0))},
    "custom": {"params": {}, "sweep": None},
}

CSV_COLUMNS = (
    "t_over_tau", "t_seconds", "EN_bits", "delta12_nats", "nu_plus", "nu_minus",
    "n_transmon", "n_mr1", "n_mr2", "trace_err", "min_eig", "top_level_pop",
)


def resolve_params(overrides: dict) -> SystemParams:
    """Turn config-file keys into a SystemParams, converting Hz once.

    Unknown keys are hard errors; a frequency field given without its _hz
    suffix gets a targeted message.
    """
    values = SystemParams.default().asdict()
    derived = {}
    for key, raw in overrides.items():
        if key in _DERIVED_KEYS:
            derived[key] = float(raw)
        elif key in _PLAIN_FIELDS:
            values[key] = float(raw)
        elif key.endswith("_hz") and key[:-3] in _FREQ_FIELDS:
            values[key[:-3]] = TWO_PI * float(raw)
        elif key in _FREQ_FIELDS:
            raise ConfigError(f"frequency key {key!r} needs the _hz suffix ({key}_hz)")
        else:
            raise ConfigError(f"unknown parameter key {key!r}")
    if "gamma_t_hz" in overrides and "gamma_phi_hz" not in overrides:
        values["gamma_phi"] = 2.0 * values["gamma_t"]
    if "n_th" in derived:
        values["nbar1"] = values["nbar2"] = derived["n_th"]
    if "delta_g_hz" in derived:
        mean = 0.5 * (values["g01"] + values["g02"])
        half = TWO_PI * derived["delta_g_hz"] / 2.0
        values["g01"] = mean + half
        values["g02"] = mean - half
    return SystemParams(**values)


def params_fingerprint(params: SystemParams, dims, frame: str, initial_phonons: float = 0.0) -> bytes:
    """32-byte digest of the physical identity of a run (not its horizon)."""
    blob = json.dumps(
        {
            "params": {k: repr(v) for k, v in params.asdict().items()},
            "dims": list(int(d) for d in dims),
            "frame": frame,
            "initial_phonons": repr(float(initial_phonons)),
        },
        sort_keys=True,
    ).encode()
    return hashlib.sha256(blob).digest()


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    scenario: str
    params: SystemParams
    layout: FockLayout
    integrator_options: dict
    horizon_tau: float = 200.0
    frame: str = "rotating"
    initial_phonons: float = 0.0
    sweep_parameter: str | None = None
    sweep_values: tuple = ()
    out_dir: str = ""
    checkpoint_every_tau: float = 0.0
    overrides: dict = field(default_factory=dict)
    source_bytes: bytes = b""

    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(t_end=self.horizon_tau * self.params.tau, **self.integrator_options)

    def config_hash(self) -> str:
        return hashlib.sha256(self.source_bytes).hexdigest()


_TOP_KEYS = {
    "scenario", "out_dir", "horizon_tau", "frame", "checkpoint_every_tau",
    "initial_phonons", "dims", "params", "integrator", "sweep",
}
_DIM_KEYS = {"transmon", "mr1", "mr2"}
_INTEGRATOR_KEYS = {"method", "rtol", "atol", "dt_init", "dt_max", "sample_stride"}


def load_config(path) -> ScenarioConfig:
    """Parse and fully validate a scenario file; unknown keys are errors."""
    try:
        with open(path, "rb") as fh:
            source = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = tomllib.loads(source.decode())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error in {path}: {exc}") from exc

    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "scenario" not in doc:
        raise ConfigError("config must name a scenario")
    scenario = doc["scenario"]
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}, expected one of {sorted(SCENARIOS)}")
    preset = SCENARIOS[scenario]

    overrides = dict(preset["params"])
    overrides.update(doc.get("params", {}))
    params = resolve_params(overrides)

    dims_doc = doc.get("dims", {})
    bad = set(dims_doc) - _DIM_KEYS
    if bad:
        raise ConfigError(f"unknown dims keys: {sorted(bad)}")
    dims = (dims_doc.get("transmon", 3), dims_doc.get("mr1", 8), dims_doc.get("mr2", 8))
    layout = FockLayout(tuple(int(d) for d in dims))

    integ = dict(doc.get("integrator", {}))
    bad = set(integ) - _INTEGRATOR_KEYS
    if bad:
        raise ConfigError(f"unknown integrator keys: {sorted(bad)} (the horizon sets t_end)")

    sweep_parameter, sweep_values = None, ()
    sweep_doc = doc.get("sweep", preset["sweep"])
    if isinstance(sweep_doc, dict):
        bad = set(sweep_doc) - {"parameter", "values"}
        if bad:
            raise ConfigError(f"unknown sweep keys: {sorted(bad)}")
        if "parameter" not in sweep_doc or "values" not in sweep_doc:
            raise ConfigError("sweep needs both 'parameter' and 'values'")
        sweep_doc = (sweep_doc["parameter"], tuple(sweep_doc["values"]))
    if sweep_doc is not None:
        sweep_parameter, sweep_values = sweep_doc[0], tuple(float(v) for v in sweep_doc[1])
        if sweep_parameter not in PARAM_KEYS:
            raise ConfigError(
                f"sweep parameter {sweep_parameter!r} is not in the schema; "
                f"known keys: {', '.join(PARAM_KEYS)}"
            )
        if not sweep_values:
            raise ConfigError("sweep values must be nonempty")
        if any(not math.isfinite(v) for v in sweep_values):
            raise ConfigError("sweep values must be finite")
        if len(set(sweep_values)) != len(sweep_values):
            raise ConfigError("sweep values must be distinct")

    frame = doc.get("frame", "rotating")
    if frame not in ("rotating", "lab"):
        raise ConfigError(f"unknown frame {frame!r}")
    horizon = float(doc.get("horizon_tau", 200.0))
    if horizon <= 0:
        raise ConfigError("horizon_tau must be positive")
    initial_phonons = float(doc.get("initial_phonons", 0.0))
    if not math.isfinite(initial_phonons) or initial_phonons < 0:
        raise ConfigError("initial_phonons must be a finite occupancy >= 0")

    cfg = ScenarioConfig(
        scenario=scenario,
        params=params,
        layout=layout,
        integrator_options=integ,
        horizon_tau=horizon,
        frame=frame,
        initial_phonons=initial_phonons,
        sweep_parameter=sweep_parameter,
        sweep_values=sweep_values,
        out_dir=doc.get("out_dir", os.path.join("runs", scenario)),
        checkpoint_every_tau=float(doc.get("checkpoint_every_tau", 0.0)),
        overrides=overrides,
        source_bytes=source,
    )
    cfg.integrator()  # validate integrator options eagerly
    return cfg


def initial_state(layout: FockLayout, occupancy: float = 0.0) -> np.ndarray:
    """Product state: qubit ground, both mechanical modes at `occupancy`.

    The default is the triple ground state of a sideband-cooled device; the
    bath occupations in SystemParams only enter the dissipators and do not
    affect this state.
    """
    dt, d1, d2 = layout.dims
    ground = np.zeros((dt, dt))
    ground[0, 0] = 1.0
    return np.kron(
        np.kron(ground, thermal_state(d1, occupancy)), thermal_state(d2, occupancy)
    ).astype(complex)


def make_observer(params: SystemParams, layout: FockLayout):
    """Per-sample record of occupations and two-mode measures."""
    diags = [np.real(np.diag(embed(number(layout.dims[s]), layout, s))) for s in range(3)]
    mech_dims = (layout.dims[1], layout.dims[2])

    def observe(t, rho):
        pops = np.real(np.diag(rho))
        rec = measure_record(partial_trace(rho, layout, keep=(1, 2)), mech_dims)
        return {
            "EN_bits": rec.en_bits,
            "delta12_nats": rec.delta12_nats,
            "nu_plus": rec.nu_plus,
            "nu_minus": rec.nu_minus,
            "n_transmon": float(pops @ diags[0]),
            "n_mr1": float(pops @ diags[1]),
            "n_mr2": float(pops @ diags[2]),
        }

    return observe


def emit_series(traj: Trajectory, path) -> None:
    """Write the sampled series as CSV, 17 significant digits per value.

    The format round-trips: parsing a value back with float() recovers the
    exact double that was written.
    """
    if len(traj.times) == 0:
        raise ValueError("refusing to emit an empty trajectory")
    missing = [
        c for c in CSV_COLUMNS
        if c not in ("t_over_tau", "t_seconds") and c not in traj.records
    ]
    if missing:
        raise ValueError(f"trajectory lacks series {missing}")
    cols = {
        "t_over_tau": np.asarray(traj.times) / traj.tau,
        "t_seconds": np.asarray(traj.times),
        **{k: np.asarray(traj.records[k]) for k in CSV_COLUMNS if k in traj.records},
    }
    n = len(traj.times)
    lines = [",".join(CSV_COLUMNS)]
    for i in range(n):
        lines.append(",".join("%.17g" % cols[c][i] for c in CSV_COLUMNS))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_series(path) -> dict:
    """Load an emitted CSV back into named float arrays."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.array([[float(x) for x in line.split(",")] for line in fh if line.strip()])
    if data.size == 0:
        data = data.reshape(0, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


@dataclass(frozen=True)
class RunManifest:
    scenario: str
    config_hash: str
    version: str
    started: str
    finished: str
    outputs: tuple
    points: tuple  # (label, value or None) per trajectory
    health: dict  # label -> health report dict
    passed: bool
    cli_overrides: dict = field(default_factory=dict)

    def asdict(self) -> dict:
        d = dataclasses.asdict(self)
        d["outputs"] = list(self.outputs)
        d["points"] = [list(p) for p in self.points]
        return d


def _point_label(cfg: ScenarioConfig, idx: int, value) -> str:
    if cfg.sweep_parameter is None:
        return cfg.scenario
    return f"point_{idx}_{cfg.sweep_parameter}_{value:g}"


def sweep_points(cfg: ScenarioConfig):
    """(label, params, swept value) for every trajectory of the run."""
    if cfg.sweep_parameter is None:
        return [(cfg.scenario, cfg.params, None)]
    points = []
    for i, v in enumerate(cfg.sweep_values):
        overrides = dict(cfg.overrides)
        overrides[cfg.sweep_parameter] = v
        points.append((_point_label(cfg, i, v), resolve_params(overrides), v))
    return points


def _run_point(point, layout, integrator_cfg, frame, out_dir, ckpt_every_tau, initial_phonons=0.0):
    label, params, value = point
    system = FullSystem(params, layout, frame=frame)
    rho0 = initial_state(layout, initial_phonons)
    fingerprint = params_fingerprint(params, layout.dims, frame, initial_phonons)
    ckpt_path = os.path.join(out_dir, f"{label}.ckpt")

    snapshot_every = 0
    on_snapshot = None
    if ckpt_every_tau > 0:
        stride = integrator_cfg.sample_stride
        snapshot_every = max(1, round(ckpt_every_tau * stride))
        on_snapshot = lambda t, rho: write_checkpoint(ckpt_path, t, rho, layout.dims, fingerprint)

    failure = ""
    try:
        traj = integrate(
            rho0, integrator_cfg, system,
            observer=make_observer(params, layout),
            on_snapshot=on_snapshot, snapshot_every=snapshot_every,
        )
    except HealthError as exc:
        traj = exc.trajectory
        failure = str(exc)
        if traj is None or len(traj.times) == 0:
            raise

    csv_path = os.path.join(out_dir, f"{label}.csv")
    emit_series(traj, csv_path)
    write_checkpoint(ckpt_path, traj.final_time, traj.final_state, layout.dims, fingerprint)
    health = traj.health.asdict()
    if failure:
        health["passed"] = False
        health["message"] = failure
    return {
        "label": label,
        "value": value,
        "params": params.asdict(),
        "outputs": [csv_path, ckpt_path],
        "health": health,
    }


def run_scenario(cfg: ScenarioConfig, workers: int = 1, cli_overrides: dict | None = None) -> RunManifest:
    """Integrate every sweep point, emit CSVs and checkpoints, write a manifest.

    A health failure in one point keeps its partial series on disk and marks
    the manifest; remaining points still run.
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    if cfg.source_bytes:
        with open(os.path.join(cfg.out_dir, "config.toml"), "wb") as fh:
            fh.write(cfg.source_bytes)
    started = datetime.now(timezone.utc).isoformat()
    points = sweep_points(cfg)
    runner = partial(
        _run_point,
        layout=cfg.layout,
        integrator_cfg=cfg.integrator(),
        frame=cfg.frame,
        out_dir=cfg.out_dir,
        ckpt_every_tau=cfg.checkpoint_every_tau,
        initial_phonons=cfg.initial_phonons,
    )
    if workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(runner, points))
    else:
        results = [runner(p) for p in points]

    outputs = [p for r in results for p in r["outputs"]]
    health = {r["label"]: r["health"] for r in results}
    manifest = RunManifest(
        scenario=cfg.scenario,
        config_hash=cfg.config_hash(),
        version=__version__,
        started=started,
        finished=datetime.now(timezone.utc).isoformat(),
        outputs=tuple(outputs),
        points=tuple((r["label"], r["value"]) for r in results),
        health=health,
        passed=all(h["passed"] for h in health.values()),
        cli_overrides=dict(cli_overrides or {}),
    )
    _write_manifest(cfg.out_dir, manifest, results)
    return manifest


def _write_manifest(out_dir, manifest: RunManifest, results) -> None:
    doc = manifest.asdict()
    doc["parameter_snapshots"] = {r["label"]: r["params"] for r in results}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def resume(checkpoint_path, cfg: ScenarioConfig, cli_overrides: dict | None = None) -> RunManifest:
    """Continue a single-point run from its checkpoint.

    The stored parameter fingerprint must match the config; on mismatch both
    digests are reported. Resuming at or past the horizon is a no-op.
    """
    if cfg.sweep_parameter is not None:
        raise ConfigError("resume works on single-point configs; rerun the sweep instead")
    t, rho, dims, stored = read_checkpoint(checkpoint_path)
    expected = params_fingerprint(cfg.params, cfg.layout.dims, cfg.frame, cfg.initial_phonons)
    if tuple(dims) != cfg.layout.dims:
        raise CheckpointError(f"checkpoint dims {tuple(dims)} do not match config dims {cfg.layout.dims}")
    if stored != expected:
        raise CheckpointError(
            "checkpoint parameters do not match config: "
            f"stored {stored.hex()} vs config {expected.hex()}"
        )
    os.makedirs(cfg.out_dir, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    label = cfg.scenario
    integ = cfg.integrator()
    t_end = cfg.horizon_tau * cfg.params.tau
    outputs = []
    if t < t_end - 1e-9 * cfg.params.tau:
        system = FullSystem(cfg.params, cfg.layout, frame=cfg.frame)
        failure = ""
        try:
            traj = integrate(rho, integ, system, observer=make_observer(cfg.params, cfg.layout), t0=t)
        except HealthError as exc:
            traj = exc.trajectory
            failure = str(exc)
            if traj is None or len(traj.times) == 0:
                raise
        csv_path = os.path.join(cfg.out_dir, f"{label}_from_{t / cfg.params.tau:g}tau.csv")
        emit_series(traj, csv_path)
        write_checkpoint(checkpoint_path, traj.final_time, traj.final_state, cfg.layout.dims, expected)
        outputs = [csv_path, str(checkpoint_path)]
        health = traj.health.asdict()
        if failure:
            health["passed"] = False
            health["message"] = failure
        results = [{"label": label, "value": None, "params": cfg.params.asdict(),
                    "outputs": outputs, "health": health}]
    else:
        health = {"passed": True, "message": "checkpoint already at horizon; nothing to do"}
        results = [{"label": label, "value": None, "params": cfg.params.asdict(),
                    "outputs": [], "health": health}]
    manifest = RunManifest(
        scenario=cfg.scenario,
        config_hash=cfg.config_hash(),
        version=__version__,
        started=started,
        finished=datetime.now(timezone.utc).isoformat(),
        outputs=tuple(outputs),
        points=((label, None),),
        health={label: results[0]["health"]},
        passed=results[0]["health"]["passed"],
        cli_overrides=dict(cli_overrides or {}),
    )
    _write_manifest(cfg.out_dir, manifest, results)
    return manifest
