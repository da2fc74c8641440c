"""Time integration of Lindblad dynamics with physicality tracking.

The integrator is generic over a small duck-typed "system" interface:

    system.dim            full Hilbert-space dimension
    system.dims           slot dimensions (for truncation monitoring)
    system.tau            reference period defining the sample grid
    system.rhs(t, y)      generator evaluated in the integration frame
    system.to_physical(t, y)    map integration-frame state -> physical state
    system.from_physical(t, rho)

Systems are free to integrate in a transformed frame; all recorded samples,
health metrics and checkpoints live in the physical frame.
"""

from __future__ import annotations

import math
import os
import struct
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CheckpointError,
    ConfigError,
    HealthError,
    HermiticityError,
    IntegrationError,
    PositivityError,
    TraceError,
)
from .fock import validate_density_matrix

# Dormand-Prince 5(4) tableau; the last row equals the 5th-order weights, so
# the 7th stage of an accepted step is the first stage of the next (FSAL).
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_ERR = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))

_METHODS = ("adaptive", "rk4")


@dataclass(frozen=True)
class IntegratorConfig:
    """Integration controls.

    sample_stride is the number of recorded samples per tau. For the rk4
    method dt_init doubles as the fixed step (subdivided to land exactly on
    sample times). trace_tol and eig_floor are hard physicality gates that
    abort the run; top_level_tol only flags likely truncation trouble.
    """

    t_end: float
    method: str = "adaptive"
    rtol: float = 1e-8
    atol: float = 1e-12
    dt_init: float = 5e-11
    dt_max: float = 1e-9
    sample_stride: int = 2
    trace_tol: float = 1e-7
    eig_floor: float = 1e-7
    top_level_tol: float = 1e-4

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ConfigError(f"unknown method {self.method!r}, expected one of {_METHODS}")
        if self.t_end <= 0:
            raise ConfigError("t_end must be positive")
        if self.rtol <= 0 or self.atol <= 0:
            raise ConfigError("rtol and atol must be positive")
        if self.dt_init <= 0:
            raise ConfigError("dt_init must be positive")
        if self.method == "adaptive" and self.dt_max < self.dt_init:
            raise ConfigError("need dt_init <= dt_max")
        if int(self.sample_stride) != self.sample_stride or self.sample_stride < 1:
            raise ConfigError("sample_stride must be a positive integer")


@dataclass(frozen=True)
class HealthReport:
    """Worst-case physicality metrics over the sampled trajectory."""

    max_trace_err: float
    max_herm_err: float
    min_eig: float
    max_top_level_pop: float
    trace_tol: float
    eig_floor: float
    top_level_tol: float
    passed: bool
    truncation_flagged: bool
    message: str = ""

    def asdict(self) -> dict:
        return {
            "max_trace_err": self.max_trace_err,
            "max_herm_err": self.max_herm_err,
            "min_eig": self.min_eig,
            "max_top_level_pop": self.max_top_level_pop,
            "passed": self.passed,
            "truncation_flagged": self.truncation_flagged,
            "message": self.message,
        }


@dataclass
class Trajectory:
    """Sampled solution of one integration run.

    records holds one float array per series (health metrics plus whatever
    the observer produced), aligned with times.
    """

    times: np.ndarray
    records: dict
    health: HealthReport
    final_state: np.ndarray
    final_time: float
    tau: float
    n_steps: int
    n_rejected: int
    wall_time: float


def lindblad_rhs(rho: np.ndarray, t: float, hamiltonian, collapse_set) -> np.ndarray:
    """Reference Lindblad generator, written exactly as defined.

    hamiltonian is either a matrix or a callable t -> matrix; collapse_set
    iterates as (operator, rate) pairs. Slow but direct; the structured
    backends are cross-checked against this.
    """
    h = hamiltonian(t) if callable(hamiltonian) else hamiltonian
    out = -1j * (h @ rho - rho @ h)
    for op, rate in collapse_set:
        if rate == 0.0:
            continue
        opd = op.conj().T
        ada = opd @ op
        out += rate * (op @ rho @ opd - 0.5 * (ada @ rho + rho @ ada))
    return out


class GenericSystem:
    """Adapter running an arbitrary H(t) and collapse set through lindblad_rhs."""

    def __init__(self, h_at, collapse_set, tau: float, dims):
        self.dims = tuple(int(d) for d in dims)
        self.dim = math.prod(self.dims)
        self.tau = float(tau)
        self._h_at = h_at
        # (op, op^dag, rate * precomputed A^dag A) with zero rates dropped
        self._channels = []
        for op, rate in collapse_set:
            if rate > 0.0:
                self._channels.append((op, op.conj().T, rate, op.conj().T @ op))

    def rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        h = self._h_at(t)
        out = -1j * (h @ y - y @ h)
        for op, opd, rate, ada in self._channels:
            out += rate * (op @ y @ opd) - 0.5 * rate * (ada @ y + y @ ada)
        return out

    def to_physical(self, t: float, y: np.ndarray) -> np.ndarray:
        return y.copy()

    def from_physical(self, t: float, rho: np.ndarray) -> np.ndarray:
        return rho.astype(complex, copy=True)


def _top_level_masks(dims) -> list:
    """Flat-index masks selecting the highest Fock level of each slot."""
    grids = np.indices(dims).reshape(len(dims), -1)
    return [grids[s] == dims[s] - 1 for s in range(len(dims))]


def _error_norm(err: np.ndarray, y0: np.ndarray, y1: np.ndarray, rtol: float, atol: float) -> float:
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((np.abs(err) / scale) ** 2)))


def integrate(
    rho0: np.ndarray,
    config: IntegratorConfig,
    system,
    observer=None,
    t0: float = 0.0,
    on_snapshot=None,
    snapshot_every: int = 0,
) -> Trajectory:
    """Integrate rho0 from t0 to config.t_end, sampling tau/stride apart.

    observer, if given, is a callable (t, rho_physical) -> dict of floats
    merged into the trajectory records (a sequence of such callables also
    works). on_snapshot(t, rho_physical) fires every snapshot_every samples,
    for periodic checkpointing.

    Raises HealthError (with the partial trajectory attached) when a hard
    physicality gate fails, and IntegrationError when the step size
    underflows or the state stops being finite.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (system.dim, system.dim):
        raise ConfigError(f"initial state shape {rho0.shape} does not match system dim {system.dim}")
    validate_density_matrix(rho0, eps_herm=1e-9, eps_trace=1e-8)
    if config.t_end <= t0:
        raise ConfigError(f"t_end {config.t_end:.6g} must exceed start time {t0:.6g}")

    observers = []
    if observer is not None:
        observers = list(observer) if isinstance(observer, (list, tuple)) else [observer]

    sample_dt = system.tau / config.sample_stride
    n_samples = max(1, math.ceil((config.t_end - t0) / sample_dt - 1e-9))
    times = t0 + sample_dt * np.arange(n_samples + 1)

    masks = _top_level_masks(system.dims)
    records: dict[str, list] = {
        "trace_err": [],
        "herm_err": [],
        "min_eig": [],
        "top_level_pop": [],
    }
    stats = {"steps": 0, "rejected": 0}
    flagged = [False]
    start_wall = time.perf_counter()

    def close(final_t, y, message, passed):
        rec = {k: np.asarray(v) for k, v in records.items()}
        n_done = len(rec["trace_err"])
        health = HealthReport(
            max_trace_err=float(rec["trace_err"].max()) if n_done else math.nan,
            max_herm_err=float(rec["herm_err"].max()) if n_done else math.nan,
            min_eig=float(rec["min_eig"].min()) if n_done else math.nan,
            max_top_level_pop=float(rec["top_level_pop"].max()) if n_done else math.nan,
            trace_tol=config.trace_tol,
            eig_floor=config.eig_floor,
            top_level_tol=config.top_level_tol,
            passed=passed,
            truncation_flagged=flagged[0],
            message=message,
        )
        return Trajectory(
            times=times[:n_done],
            records=rec,
            health=health,
            final_state=system.to_physical(final_t, y),
            final_time=final_t,
            tau=system.tau,
            n_steps=stats["steps"],
            n_rejected=stats["rejected"],
            wall_time=time.perf_counter() - start_wall,
        )

    def record_sample(idx, t, y):
        rho = system.to_physical(t, y)
        if not np.isfinite(rho).all():
            raise IntegrationError(f"non-finite state at t = {t:.6g}")
        herm_err = float(np.abs(rho - rho.conj().T).max())
        trace_err = abs(float(np.trace(rho).real) - 1.0) + abs(float(np.trace(rho).imag))
        diag = np.real(np.diag(rho))
        top = max(float(diag[m].sum()) for m in masks)
        min_eig = float(np.linalg.eigvalsh((rho + rho.conj().T) / 2).min())
        failure = None
        merged = {}
        if trace_err > config.trace_tol or min_eig < -config.eig_floor:
            failure = (
                f"health gate failed at t/tau = {t / system.tau:.3f}: "
                f"trace_err {trace_err:.3e} (tol {config.trace_tol:.1e}), "
                f"min_eig {min_eig:.3e} (floor -{config.eig_floor:.1e})"
            )
        else:
            try:
                for obs in observers:
                    merged.update(obs(t, rho))
            except (PositivityError, TraceError, HermiticityError) as exc:
                failure = f"observer rejected the state at t/tau = {t / system.tau:.3f}: {exc}"
        if failure is not None:
            # the offending sample stays out of the series so all columns
            # remain aligned; its state is kept as final_state for forensics
            partial = close(t, y, failure, passed=False)
            raise HealthError(failure, trajectory=partial, report=partial.health)
        records["trace_err"].append(trace_err)
        records["herm_err"].append(herm_err)
        records["min_eig"].append(min_eig)
        records["top_level_pop"].append(top)
        for key, val in merged.items():
            records.setdefault(key, []).append(float(val))
        if top > config.top_level_tol and not flagged[0]:
            flagged[0] = True
            warnings.warn(
                f"top-level population {top:.3e} exceeds {config.top_level_tol:.1e} "
                f"at t/tau = {t / system.tau:.2f}: truncation suspect"
            )
        if on_snapshot is not None and snapshot_every > 0 and idx % snapshot_every == 0 and idx > 0:
            on_snapshot(t, rho)

    t = float(t0)
    y = system.from_physical(t, rho0)
    record_sample(0, t, y)

    if config.method == "rk4":
        for idx in range(1, n_samples + 1):
            target = times[idx]
            nsub = max(1, math.ceil((target - t) / config.dt_init - 1e-12))
            h = (target - t) / nsub
            for _ in range(nsub):
                k1 = system.rhs(t, y)
                k2 = system.rhs(t + h / 2, y + (h / 2) * k1)
                k3 = system.rhs(t + h / 2, y + (h / 2) * k2)
                k4 = system.rhs(t + h, y + h * k3)
                y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
                t += h
                stats["steps"] += 1
            t = target
            y = 0.5 * (y + y.conj().T)
            record_sample(idx, t, y)
        return close(t, y, "", passed=True)

    # adaptive embedded pair
    h = min(config.dt_init, config.dt_max)
    k1 = system.rhs(t, y)
    for idx in range(1, n_samples + 1):
        target = times[idx]
        while t < target - 1e-12 * sample_dt:
            h = min(h, config.dt_max, target - t)
            if h < 1e-15 * sample_dt:
                raise IntegrationError(f"step size underflow at t = {t:.6g} (h = {h:.3e})")
            attempts = 0
            while True:
                ks = [k1]
                yi = None
                for i in range(1, 7):
                    yi = y
                    for aij, kj in zip(_A[i], ks):
                        if aij != 0.0:
                            yi = yi + (h * aij) * kj
                    ks.append(system.rhs(t + _C[i] * h, yi))
                ynew = yi  # stage 7 input equals the 5th-order solution
                err_mat = None
                for e, kj in zip(_ERR, ks):
                    if e != 0.0:
                        term = (h * e) * kj
                        err_mat = term if err_mat is None else err_mat + term
                err = _error_norm(err_mat, y, ynew, config.rtol, config.atol)
                if math.isfinite(err) and err <= 1.0:
                    t = t + h
                    y = ynew
                    k1 = ks[6]
                    stats["steps"] += 1
                    fac = 0.9 * err ** -0.2 if err > 0 else 5.0
                    h = h * min(5.0, max(0.2, fac))
                    break
                stats["rejected"] += 1
                attempts += 1
                if attempts > 60:
                    raise IntegrationError(f"step at t = {t:.6g} rejected {attempts} times")
                fac = 0.9 * err ** -0.2 if math.isfinite(err) else 0.1
                h = h * min(1.0, max(0.1, fac))
                if h < 1e-15 * sample_dt:
                    raise IntegrationError(f"step size underflow at t = {t:.6g} (h = {h:.3e})")
        t = target
        y = 0.5 * (y + y.conj().T)
        k1 = system.rhs(t, y)
        record_sample(idx, t, y)
    return close(t, y, "", passed=True)


@dataclass(frozen=True)
class StabilityReport:
    """Tail-window drift assessment of the occupation series."""

    stationary: bool
    diverged: bool
    drifts: dict
    window: int
    tol: float


def stability_monitor(traj: Trajectory, window: int, tol: float = 0.02, ceilings=None) -> StabilityReport:
    """Check whether the occupation series have settled.

    Looks at every record whose name starts with "n_": relative drift
    (max - min) / max over the final `window` samples must stay below tol,
    and no series may exceed its ceiling (dict by name, or one number for
    all; ceilings guard Fock truncation).
    """
    series = {k: np.asarray(v) for k, v in traj.records.items() if k.startswith("n_")}
    if not series:
        raise ValueError("trajectory has no occupation records (names starting with 'n_')")
    if any(len(v) < window + 1 for v in series.values()):
        raise ValueError(f"trajectory shorter than the stability window ({window} samples)")
    if ceilings is None:
        ceilings = {}
    elif np.isscalar(ceilings):
        ceilings = {k: float(ceilings) for k in series}
    drifts = {}
    diverged = False
    for name, vals in series.items():
        tail = vals[-window:]
        scale = max(float(np.abs(tail).max()), 1e-12)
        drifts[name] = float((tail.max() - tail.min()) / scale)
        ceiling = ceilings.get(name, math.inf)
        if float(vals.max()) > ceiling:
            diverged = True
    stationary = (not diverged) and all(d <= tol for d in drifts.values())
    return StabilityReport(
        stationary=stationary, diverged=diverged, drifts=drifts, window=window, tol=tol
    )


# ---------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = b"TMECHCP1"
_CKPT_VERSION = 1


def write_checkpoint(path, t: float, rho: np.ndarray, dims, params_hash: bytes) -> None:
    """Binary state snapshot: layout, time, parameter fingerprint, then the
    density matrix as row-major little-endian complex128. Written atomically."""
    dims = tuple(int(d) for d in dims)
    if len(params_hash) != 32:
        raise CheckpointError("params_hash must be a 32-byte digest")
    d = math.prod(dims)
    rho = np.ascontiguousarray(rho, dtype=complex)
    if rho.shape != (d, d):
        raise CheckpointError(f"state shape {rho.shape} does not match dims {dims}")
    header = struct.pack("<8sII", _CKPT_MAGIC, _CKPT_VERSION, len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    header += struct.pack("<d", float(t))
    header += params_hash
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(rho.astype("<c16").tobytes())
    os.replace(tmp, path)


def read_checkpoint(path):
    """Inverse of write_checkpoint; returns (t, rho, dims, params_hash)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    fixed = struct.calcsize("<8sII")
    if len(raw) < fixed:
        raise CheckpointError("checkpoint truncated before header")
    magic, version, nslots = struct.unpack_from("<8sII", raw, 0)
    if magic != _CKPT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    if version != _CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = fixed
    if len(raw) < off + 4 * nslots + 8 + 32:
        raise CheckpointError("checkpoint truncated in header")
    dims = struct.unpack_from(f"<{nslots}I", raw, off)
    off += 4 * nslots
    (t,) = struct.unpack_from("<d", raw, off)
    off += 8
    params_hash = raw[off : off + 32]
    off += 32
    d = math.prod(dims)
    payload = raw[off:]
    if len(payload) != d * d * 16:
        raise CheckpointError(
            f"checkpoint payload has {len(payload)} bytes, expected {d * d * 16}"
        )
    rho = np.frombuffer(payload, dtype="<c16").reshape(d, d).astype(complex)
    return t, rho, dims, params_hash
