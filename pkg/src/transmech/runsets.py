"""Registry of the named long runs behind the trend analyses.

The acceptance checks and the precompute script must agree bit-for-bit on
what each run is, so the definitions live here once. A run is identified by
its override dict, layout, horizon and integrator settings; the module-wide
defaults were validated against a tighter-tolerance reference (observable
shifts from the tightening were < 1e-8 bits, far below any threshold used
downstream). Arms whose trajectory rides the vacuum uncertainty bound pin
tighter per-run tolerances, because integrator noise in the second moments
must stay inside the nu >= 1 - 1e-6 physicality gate for every sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cache import cached_run

DESK_DIMS = (3, 8, 8)
CONV_DIMS = (4, 10, 10)

RTOL = 1e-7
ATOL = 1e-9
DT_MAX = 4e-9


@dataclass(frozen=True)
class RunSpec:
    """One named trajectory run; tag doubles as the cache file prefix."""

    tag: str
    overrides: dict = field(default_factory=dict)
    horizon_tau: float = 200.0
    dims: tuple = DESK_DIMS
    rtol: float = RTOL
    atol: float = ATOL


# Desk-scale arms. delta_g splits the couplings about their mean; n_th sets
# both bath occupations; the detuned arm moves one drive tone so the beat
# misses the sum resonance by ten times the mechanical splitting.
DESK_RUNS = (
    RunSpec("baseline", {}, 200.0),
    RunSpec("dg139", {"delta_g_hz": 13.9e3}, 200.0),
    RunSpec("detuned", {"omega_l1_hz": 10.5e6}, 200.0),
    # The equal-frequency null stays within ~1e-2 quanta of vacuum, so its
    # symplectic eigenvalues sit on the nu = 1 bound with no thermal or
    # squeezing lift. At the default tolerances the accumulated integrator
    # noise reaches ~6e-6 by 76 tau and trips the physicality gate; 1e-9
    # keeps the dip two orders under the gate across the full horizon.
    RunSpec("eqfreq", {"omega2_hz": 10e6, "omega_l2_hz": 10e6}, 200.0,
            rtol=1e-9, atol=1e-12),
    RunSpec("dg61", {"delta_g_hz": 6.1e3}, 50.0),
    RunSpec("nth8", {"n_th": 8.0}, 100.0),
    RunSpec("nth20", {"n_th": 20.0}, 100.0),
    # With transmon damping at 50 Hz nothing smooths the switch-on transient,
    # and at the default atol the near-zero eigenvalues pick up a -3e-6 spike
    # that trips the positivity floor. Measured spike at 1e-8/1e-11: -1e-10.
    RunSpec("gt005", {"gamma_t_hz": 50.0}, 200.0, rtol=1e-8, atol=1e-11),
)

# Same arms at the enlarged layout, for the truncation-convergence check.
# dg61 is omitted: the short-horizon agreement check it feeds is itself a
# 10%-level comparison and gains nothing from a 2% convergence gate.
CONV_RUNS = tuple(
    RunSpec("conv_" + r.tag, r.overrides, r.horizon_tau, CONV_DIMS,
            rtol=r.rtol, atol=r.atol)
    for r in DESK_RUNS
    if r.tag in ("baseline", "dg139", "detuned", "eqfreq", "nth8", "nth20")
)

# Extended-budget arms (decoherence-lifetime ordering and the long-time
# separable-but-non-Gaussian regime). Kept separate so the desk set stays
# inside a lunch break.
LONG_RUNS = (
    RunSpec("long_baseline", {}, 700.0),
    RunSpec("long_gt005", {"gamma_t_hz": 50.0}, 700.0, rtol=1e-8, atol=1e-11),
    RunSpec("long_gt45k", {"gamma_t_hz": 45e3}, 400.0),
)

ALL_RUNS = DESK_RUNS + CONV_RUNS + LONG_RUNS


def fetch(spec: RunSpec, cache_dir: str, progress: bool = False) -> dict:
    """Load (or compute) one registered run from the given cache directory."""
    return cached_run(
        spec.tag,
        overrides=spec.overrides,
        dims=spec.dims,
        horizon_tau=spec.horizon_tau,
        cache_dir=cache_dir,
        rtol=spec.rtol,
        atol=spec.atol,
        dt_max=DT_MAX,
        progress=progress,
    )


def get(tag: str) -> RunSpec:
    for spec in ALL_RUNS:
        if spec.tag == tag:
            return spec
    raise KeyError(f"no registered run named {tag!r}")


def half_peak_crossing(times, series, tau: float):
    """Time (in tau) of the first dip below half the global peak, or None.

    Only samples after the peak count, so small oscillations during onset
    cannot register as a crossing; a series still at its maximum when the
    horizon ends has by construction no crossing.
    """
    series = np.asarray(series)
    if len(series) == 0 or series.max() <= 0:
        return None
    k = int(np.argmax(series))
    below = np.nonzero(series[k:] < 0.5 * series[k])[0]
    if len(below) == 0:
        return None
    return float(times[k + below[0]] / tau)
