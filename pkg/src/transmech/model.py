"""Physical model: a driven anharmonic (transmon) mode coupled longitudinally
to two mechanical resonators, plus the dressed-frame reduction of the qubit.

All frequencies, rates and amplitudes are angular (rad/s). The tensor order
is (transmon, mech 1, mech 2). Two frames are supported: "rotating" (default,
co-rotating with the bare transmon) and "lab".
"""

from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from types import SimpleNamespace

import numpy as np

from .errors import DimensionError, LayoutError, SingularityError
from .fock import FockLayout, annihilation, creation, dag, embed, number

TWO_PI = 2.0 * math.pi

_FRAMES = ("rotating", "lab")


@dataclass(frozen=True)
class SystemParams:
    """Model parameters, all angular (rad/s) except the unitless occupations.

    amp1/amp2 are the two drive tone amplitudes; the drive phasor is
    amp1 exp(-i omega_l1 t) + amp2 exp(+i omega_l2 t), so the beat frequency
    is omega_l1 + omega_l2.
    """

    omega_t: float  # bare transmon frequency
    lam: float  # transmon anharmonicity (self-Kerr)
    omega1: float  # mechanical frequencies
    omega2: float
    g01: float  # bare longitudinal couplings
    g02: float
    amp1: float  # drive amplitudes (real, nonnegative)
    amp2: float
    omega_l1: float  # drive tone frequencies (rotating frame)
    omega_l2: float
    gamma_t: float  # transmon energy relaxation rate
    gamma_phi: float  # transmon pure dephasing rate
    gamma1: float  # mechanical damping rates
    gamma2: float
    nbar1: float  # thermal occupations of the mechanical baths
    nbar2: float

    def __post_init__(self):
        for name in ("omega_t", "lam", "omega1", "omega2", "omega_l1", "omega_l2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("g01", "g02", "amp1", "amp2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0 (phases are not supported)")
        for name in ("gamma_t", "gamma_phi", "gamma1", "gamma2", "nbar1", "nbar2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def delta(self) -> float:
        """Mechanical frequency difference omega1 - omega2."""
        return self.omega1 - self.omega2

    @property
    def omega_d(self) -> float:
        """Drive beat frequency omega_l1 + omega_l2."""
        return self.omega_l1 + self.omega_l2

    @property
    def tau(self) -> float:
        """Reference period 2 pi / (omega1 + omega2); trajectory time unit."""
        return TWO_PI / (self.omega1 + self.omega2)

    @classmethod
    def default(cls, **overrides) -> "SystemParams":
        """Baseline operating point used throughout the experiments.

        10 / 9.95 MHz mechanics with Q = 2e5 at 0.2 thermal quanta, a 17 GHz
        transmon with 0.25 GHz anharmonicity relaxing at 4.5 kHz (dephasing
        twice that), 325.6 kHz couplings, and two 8 MHz tones on the
        mechanical resonances so the beat sits at omega1 + omega2.
        """
        q = 2e5
        base = dict(
            omega_t=TWO_PI * 17e9,
            lam=TWO_PI * 0.25e9,
            omega1=TWO_PI * 10e6,
            omega2=TWO_PI * 9.95e6,
            g01=TWO_PI * 325.6e3,
            g02=TWO_PI * 325.6e3,
            amp1=TWO_PI * 8e6,
            amp2=TWO_PI * 8e6,
            omega_l1=TWO_PI * 10e6,
            omega_l2=TWO_PI * 9.95e6,
            gamma_t=TWO_PI * 4.5e3,
            gamma_phi=2.0 * TWO_PI * 4.5e3,
            gamma1=TWO_PI * 10e6 / q,
            gamma2=TWO_PI * 9.95e6 / q,
            nbar1=0.2,
            nbar2=0.2,
        )
        base.update(overrides)
        return cls(**base)

    def asdict(self) -> dict:
        return {k: float(getattr(self, k)) for k in self.__dataclass_fields__}


def derive_transmon(ej: float, ec: float) -> tuple[float, float, float]:
    """Transmon frequency, anharmonicity and energy ratio from (EJ, EC).

    omega_t = EC (sqrt(8 EJ/EC) - 1), anharmonicity EC/2. Warns when
    EJ/EC < 20, where the charge dispersion stops being negligible.
    """
    if ej <= 0 or ec <= 0:
        raise ValueError("junction energies must be positive")
    zeta = ej / ec
    if zeta < 20:
        warnings.warn(f"EJ/EC = {zeta:.3g} < 20: charge dispersion is not negligible")
    omega_t = ec * (math.sqrt(8.0 * zeta) - 1.0)
    return omega_t, ec / 2.0, zeta


def coupling_from_geometry(ec: float, zeta: float, cap_ratio: float, zp_ratio: float) -> float:
    """Bare longitudinal coupling sqrt(2 zeta) EC cap_ratio zp_ratio.

    cap_ratio is the motional capacitance participation, zp_ratio the
    zero-point displacement over the gap.
    """
    if ec <= 0 or zeta <= 0:
        raise ValueError("ec and zeta must be positive")
    if cap_ratio < 0 or zp_ratio < 0:
        raise ValueError("geometry ratios must be >= 0")
    return math.sqrt(2.0 * zeta) * ec * cap_ratio * zp_ratio


@lru_cache(maxsize=16)
def _ops3(layout: FockLayout) -> SimpleNamespace:
    """Embedded operators on a 3-slot layout, built once per layout."""
    if len(layout) != 3:
        raise LayoutError(f"expected a 3-slot layout, got {len(layout)} slots")
    d0 = layout.dims[0]
    a = embed(annihilation(d0), layout, 0)
    na = embed(number(d0), layout, 0)
    b1 = embed(annihilation(layout.dims[1]), layout, 1)
    b2 = embed(annihilation(layout.dims[2]), layout, 2)
    return SimpleNamespace(
        a=a,
        adag=a.conj().T,
        na=na,
        na_diag=np.real(np.diag(na)).copy(),
        b1=b1,
        b2=b2,
        n1_diag=np.real(np.diag(dag(b1) @ b1)).copy(),
        n2_diag=np.real(np.diag(dag(b2) @ b2)).copy(),
    )


@lru_cache(maxsize=16)
def _ops2(layout: FockLayout) -> SimpleNamespace:
    """Embedded operators on a 2-slot mechanical layout."""
    if len(layout) != 2:
        raise LayoutError(f"expected a 2-slot layout, got {len(layout)} slots")
    b1 = embed(annihilation(layout.dims[0]), layout, 0)
    b2 = embed(annihilation(layout.dims[1]), layout, 1)
    return SimpleNamespace(
        b1=b1,
        b2=b2,
        n1=dag(b1) @ b1,
        n2=dag(b2) @ b2,
        b1sq=b1 @ b1,
        b2sq=b2 @ b2,
        b1b2=b1 @ b2,
        b1dag_b2=dag(b1) @ b2,
    )


def static_hamiltonian(params: SystemParams, layout: FockLayout, frame: str = "rotating") -> np.ndarray:
    """Drive-independent Hamiltonian: Kerr term, mechanical energies, couplings.

    In the rotating frame the transmon carrier is absent; the lab frame adds
    omega_t n_a.
    """
    if frame not in _FRAMES:
        raise ValueError(f"unknown frame {frame!r}, expected one of {_FRAMES}")
    ops = _ops3(layout)
    na = ops.na
    h = -params.lam * (na @ na - na)
    h = h + params.omega1 * (dag(ops.b1) @ ops.b1) + params.omega2 * (dag(ops.b2) @ ops.b2)
    h = h + params.g01 * (na @ (ops.b1 + dag(ops.b1)))
    h = h + params.g02 * (na @ (ops.b2 + dag(ops.b2)))
    if frame == "lab":
        h = h + params.omega_t * na
    return h


def drive_amplitude(t, params: SystemParams):
    """Complex drive phasor multiplying a^dag in the rotating frame."""
    t = np.asarray(t, dtype=float)
    out = params.amp1 * np.exp(-1j * params.omega_l1 * t) + params.amp2 * np.exp(
        1j * params.omega_l2 * t
    )
    return complex(out) if out.ndim == 0 else out


def lambda_envelope(t, params: SystemParams):
    """Beat envelope of the drive, 2 |phasor| evaluated in closed form."""
    t = np.asarray(t, dtype=float)
    a1, a2 = params.amp1, params.amp2
    sq = a1 * a1 + a2 * a2 + 2.0 * a1 * a2 * np.cos(params.omega_d * t)
    out = 2.0 * np.sqrt(np.maximum(sq, 0.0))
    return float(out) if out.ndim == 0 else out


def hamiltonian_at(
    t: float,
    params: SystemParams,
    layout: FockLayout,
    static: np.ndarray,
    frame: str = "rotating",
) -> np.ndarray:
    """Total H(t) = static + drive; static must match the requested frame."""
    if frame not in _FRAMES:
        raise ValueError(f"unknown frame {frame!r}, expected one of {_FRAMES}")
    if static.shape != (layout.dim, layout.dim):
        raise DimensionError(f"static shape {static.shape} does not match layout dim {layout.dim}")
    # frame consistency probe: the |1,0,0> diagonal is 0 in the rotating frame
    # and omega_t in the lab frame
    idx = layout.dims[1] * layout.dims[2]
    want = params.omega_t if frame == "lab" else 0.0
    if params.omega_t > 0 and abs(float(static[idx, idx].real) - want) > 1e-6 * params.omega_t:
        raise LayoutError(f"static Hamiltonian diagonal does not match frame {frame!r}")
    ops = _ops3(layout)
    phasor = drive_amplitude(t, params)
    if frame == "lab":
        phasor *= cmath.exp(-1j * params.omega_t * t)
    return static + phasor * ops.adag + phasor.conjugate() * ops.a


@dataclass(frozen=True)
class DressedSnapshot:
    """Dressed-qubit quantities at one instant.

    envelope = 2 sqrt(amp1^2 + amp2^2 + 2 amp1 amp2 cos(omega_d t)),
    splitting = sqrt(delta^2 + envelope^2),
    mixing_angle = arctan(envelope / delta) / 2,
    gjx = g0j envelope / splitting (transverse couplings),
    squeezej = 2 splitting gjx^2 / (splitting^2 - omega_j^2),
    cross = g1x g2x splitting (omega1^2 - omega2^2)
            / ((splitting^2 - omega1^2)(splitting^2 - omega2^2)).
    """

    t: float
    envelope: float
    splitting: float
    mixing_angle: float
    g1x: float
    g2x: float
    squeeze1: float
    squeeze2: float
    cross: float


def dressed_snapshot(t: float, params: SystemParams, margin: float = 10.0) -> DressedSnapshot:
    """Evaluate the dressed-frame quantities at time t.

    Raises SingularityError when the dressed splitting sits within
    margin * gjx of either mechanical frequency, where the second-order
    coefficients blow up.
    """
    env = lambda_envelope(t, params)
    delta = params.delta
    eps = math.hypot(delta, env)
    theta = 0.5 * math.atan2(env, delta)
    gx = []
    for g0 in (params.g01, params.g02):
        gx.append(g0 * env / eps if eps > 0 else 0.0)
    sq = []
    for gjx, om in zip(gx, (params.omega1, params.omega2)):
        if gjx == 0.0:
            sq.append(0.0)
            continue
        if abs(eps - om) <= margin * gjx:
            raise SingularityError(
                f"dressed splitting {eps:.6g} within {margin:g} x {gjx:.3g} of mode at {om:.6g}"
            )
        sq.append(2.0 * eps * gjx * gjx / (eps * eps - om * om))
    if gx[0] == 0.0 or gx[1] == 0.0:
        cross = 0.0
    else:
        w1, w2 = params.omega1, params.omega2
        cross = (
            gx[0]
            * gx[1]
            * eps
            * (w1 * w1 - w2 * w2)
            / ((eps * eps - w1 * w1) * (eps * eps - w2 * w2))
        )
    return DressedSnapshot(
        t=float(t),
        envelope=env,
        splitting=eps,
        mixing_angle=theta,
        g1x=gx[0],
        g2x=gx[1],
        squeeze1=sq[0],
        squeeze2=sq[1],
        cross=cross,
    )


def _envelope_rate(t: float, params: SystemParams) -> float:
    """d(envelope)/dt in closed form; 0 where the envelope vanishes."""
    env = lambda_envelope(t, params)
    if env == 0.0:
        return 0.0
    return -4.0 * params.amp1 * params.amp2 * params.omega_d * math.sin(params.omega_d * t) / env


@dataclass(frozen=True)
class ValidityReport:
    """Worst-case dressed-model small parameters over one beat period.

    ratio_j = gjx / |splitting - omega_j| (perturbative parameter),
    slow_j = |d ln gjx / dt| / |splitting - omega_j| (adiabaticity of the
    envelope). Both must stay below the threshold for the reduction to hold.
    """

    threshold: float
    max_ratio1: float
    max_ratio2: float
    max_slow1: float
    max_slow2: float
    passed: bool


def validity_check(params: SystemParams, threshold: float = 0.1, samples: int = 4096) -> ValidityReport:
    """Scan one beat period for the dressed-model validity parameters.

    Raises SingularityError if the dressed splitting crosses (or comes within
    the pole margin of) either mechanical frequency anywhere on the scan.
    """
    if params.omega_d > 0:
        ts = np.linspace(0.0, TWO_PI / params.omega_d, samples)
    else:
        ts = np.array([0.0])
    ratios = [[], []]
    slows = [[], []]
    prev_sign = [0.0, 0.0]
    for t in ts:
        snap = dressed_snapshot(t, params)  # raises inside the pole margin
        env_rate = _envelope_rate(t, params)
        for j, (gjx, om) in enumerate(
            ((snap.g1x, params.omega1), (snap.g2x, params.omega2))
        ):
            gap = snap.splitting - om
            sign = math.copysign(1.0, gap) if gap != 0 else 0.0
            if prev_sign[j] and sign and sign != prev_sign[j]:
                raise SingularityError(
                    f"dressed splitting crosses mode {j + 1} frequency during the beat"
                )
            prev_sign[j] = sign
            ratios[j].append(gjx / abs(gap) if gap != 0 else math.inf)
            if snap.envelope > 0 and snap.splitting > 0:
                dlng = abs(
                    env_rate
                    / snap.envelope
                    * (params.delta**2 / snap.splitting**2)
                )
            elif env_rate != 0.0:
                dlng = math.inf
            else:
                dlng = 0.0
            slows[j].append(dlng / abs(gap) if gap != 0 else math.inf)
    r1, r2 = max(ratios[0]), max(ratios[1])
    s1, s2 = max(slows[0]), max(slows[1])
    passed = max(r1, r2, s1, s2) < threshold
    return ValidityReport(
        threshold=threshold,
        max_ratio1=r1,
        max_ratio2=r2,
        max_slow1=s1,
        max_slow2=s2,
        passed=passed,
    )


def effective_hamiltonian(t: float, params: SystemParams, mech_layout: FockLayout) -> np.ndarray:
    """Folded two-mode mechanical Hamiltonian at time t.

    Seven terms: two dressed detuning shifts (note the opposite signs), two
    single-mode squeezing drives rotating at 2 omega_j, and the
    beam-splitter / two-mode-squeezing cross couplings weighted by the
    antisymmetric cross coefficient. Callers integrating this model should
    run validity_check once on the parameter set; per-call the only guard is
    the pole margin inside dressed_snapshot.
    """
    ops = _ops2(mech_layout)
    snap = dressed_snapshot(t, params)
    w1, w2 = params.omega1, params.omega2
    h = -snap.squeeze1 * ops.n1 + snap.squeeze2 * ops.n2
    half = -0.5 * (
        snap.squeeze1 * cmath.exp(-2j * w1 * t) * ops.b1sq
        - snap.squeeze2 * cmath.exp(-2j * w2 * t) * ops.b2sq
    )
    half = half - snap.cross * (
        cmath.exp(-1j * (w1 + w2) * t) * ops.b1b2
        + cmath.exp(1j * (w1 - w2) * t) * ops.b1dag_b2
    )
    return h + half + half.conj().T


def _qubit_mech_ops(layout: FockLayout) -> SimpleNamespace:
    """Embedded operators for the dressed (qubit, mech, mech) layout."""
    if len(layout) != 3 or layout.dims[0] != 2:
        raise LayoutError("folded-model layout must be (2, mech, mech)")
    # dressed qubit basis ordered (ground, excited)
    sp = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)  # |e><g|
    sz = np.diag([1.0, -1.0]).astype(complex)  # |g><g| - |e><e|
    sx = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    return SimpleNamespace(
        sp=embed(sp, layout, 0),
        sm=embed(sp.conj().T, layout, 0),
        sz=embed(sz, layout, 0),
        sx=embed(sx, layout, 0),
        b1=embed(annihilation(layout.dims[1]), layout, 1),
        b2=embed(annihilation(layout.dims[2]), layout, 2),
    )


def fn_generator(t: float, params: SystemParams, layout: FockLayout) -> np.ndarray:
    """Anti-Hermitian folding generator S(t) on the (qubit, mech, mech) layout.

    S = sum_j gjx [ (bj^dag s+ - bj s-)/(splitting + omega_j)
                  + (bj s+ - bj^dag s-)/(splitting - omega_j) ]
    with the dressed qubit ordered (ground, excited).
    """
    ops = _qubit_mech_ops(layout)
    snap = dressed_snapshot(t, params)
    s = np.zeros((layout.dim, layout.dim), dtype=complex)
    for gjx, om, b in ((snap.g1x, params.omega1, ops.b1), (snap.g2x, params.omega2, ops.b2)):
        bd = b.conj().T
        s += gjx * (
            (bd @ ops.sp - b @ ops.sm) / (snap.splitting + om)
            + (b @ ops.sp - bd @ ops.sm) / (snap.splitting - om)
        )
    return s


def fn_residual(t: float, params: SystemParams, layout: FockLayout) -> tuple[np.ndarray, float]:
    """First-order folding residual R = H1 + [H0, S] - i dS/dt.

    The time derivative of S is analytic (chain rule through the drive
    envelope). Returns (R, |R|_F / |H1|_F); the relative norm is 0 for a
    frozen drive and grows linearly with the envelope modulation rate.
    """
    ops = _qubit_mech_ops(layout)
    snap = dressed_snapshot(t, params)
    eps = snap.splitting
    w1, w2 = params.omega1, params.omega2

    n1 = ops.b1.conj().T @ ops.b1
    n2 = ops.b2.conj().T @ ops.b2
    h0 = -0.5 * eps * ops.sz + w1 * n1 + w2 * n2
    h1 = -(snap.g1x * (ops.b1 + ops.b1.conj().T) + snap.g2x * (ops.b2 + ops.b2.conj().T)) @ ops.sx

    s = fn_generator(t, params, layout)

    env_rate = _envelope_rate(t, params)
    eps_rate = snap.envelope * env_rate / eps if eps > 0 else 0.0
    ds = np.zeros_like(s)
    for g0, gjx, om, b in (
        (params.g01, snap.g1x, w1, ops.b1),
        (params.g02, snap.g2x, w2, ops.b2),
    ):
        g_rate = g0 * env_rate * params.delta**2 / eps**3 if eps > 0 else 0.0
        cp_rate = (g_rate * (eps + om) - gjx * eps_rate) / (eps + om) ** 2
        cm_rate = (g_rate * (eps - om) - gjx * eps_rate) / (eps - om) ** 2
        bd = b.conj().T
        ds += cp_rate * (bd @ ops.sp - b @ ops.sm) + cm_rate * (b @ ops.sp - bd @ ops.sm)

    resid = h1 + h0 @ s - s @ h0 - 1j * ds
    h1_norm = np.linalg.norm(h1)
    rel = float(np.linalg.norm(resid) / h1_norm) if h1_norm > 0 else 0.0
    return resid, rel


@dataclass(frozen=True)
class CollapseSet:
    """The six collapse channels of the full model.

    Zero-rate entries are kept so the structure is always the same:
    qubit decay, qubit dephasing, then decay/heating for each mechanical mode.
    """

    ops: tuple
    rates: tuple
    labels: tuple

    def __iter__(self):
        return iter(zip(self.ops, self.rates))


def collapse_operators(params: SystemParams, layout: FockLayout) -> CollapseSet:
    """Jump operators and rates on the full layout.

    The set is frame-independent: the frame transformations multiply each
    jump operator by a global phase, which leaves the dissipator unchanged.
    """
    ops = _ops3(layout)
    entries = (
        (ops.a, params.gamma_t, "qubit_decay"),
        (ops.na, params.gamma_phi, "qubit_dephasing"),
        (ops.b1, (params.nbar1 + 1.0) * params.gamma1, "mech1_decay"),
        (ops.b1.conj().T, params.nbar1 * params.gamma1, "mech1_heating"),
        (ops.b2, (params.nbar2 + 1.0) * params.gamma2, "mech2_decay"),
        (ops.b2.conj().T, params.nbar2 * params.gamma2, "mech2_heating"),
    )
    return CollapseSet(
        ops=tuple(e[0] for e in entries),
        rates=tuple(float(e[1]) for e in entries),
        labels=tuple(e[2] for e in entries),
    )


# ---------------------------------------------------------------------------
# structured integrator backends


def _axis_vec(vec: np.ndarray, ndim: int, axis: int) -> np.ndarray:
    shape = [1] * ndim
    shape[axis] = len(vec)
    return vec.reshape(shape)


def _sandwich_shift(y: np.ndarray, dims: tuple, slot: int, coeff: np.ndarray, raise_: bool) -> np.ndarray:
    """A rho A^dag for a one-step ladder operator A on one slot.

    coeff[m] is the amplitude of the m -> m-1 step (lowering) or the
    m-1 -> m step (raising); coeff[0] is unused. Rates are folded into coeff
    by the caller.
    """
    n = dims[slot]
    k = len(dims)
    y6 = y.reshape(*dims, *dims)
    out = np.zeros_like(y)
    o6 = out.reshape(*dims, *dims)
    src_sl = slice(1, n) if not raise_ else slice(0, n - 1)
    dst_sl = slice(0, n - 1) if not raise_ else slice(1, n)
    src = [slice(None)] * (2 * k)
    dst = [slice(None)] * (2 * k)
    src[slot] = src_sl
    src[k + slot] = src_sl
    dst[slot] = dst_sl
    dst[k + slot] = dst_sl
    c = coeff[1:]
    nd = 2 * k
    o6[tuple(dst)] = (
        y6[tuple(src)] * _axis_vec(c, nd, slot) * _axis_vec(c.conj(), nd, k + slot)
    )
    return out


class FullSystem:
    """Structured Lindblad generator for the full (transmon, mech, mech) model.

    The state stays a dense (d, d) matrix. Every A^dag A of the six collapse
    channels is diagonal, so the commutator and the anticommutator halves fold
    into a single K = H(t) - (i/2) diag(damping) product per evaluation:

        rho_dot = -i (K rho - (K rho)^dag) + sum_k A_k rho A_k^dag

    which is exact for Hermitian rho (Runge-Kutta stages stay Hermitian to
    rounding, and accepted samples are re-symmetrized). Jump sandwiches are
    slot-local ladder applications, not matrix products.

    With interaction_picture=True the static diagonal (Kerr ladder,
    mechanical carriers, and in the lab frame the qubit carrier) is removed
    analytically and reinstated at sample times by to_physical().
    """

    def __init__(
        self,
        params: SystemParams,
        layout: FockLayout,
        frame: str = "rotating",
        interaction_picture: bool = True,
        backend: str = "banded",
    ):
        if frame not in _FRAMES:
            raise ValueError(f"unknown frame {frame!r}, expected one of {_FRAMES}")
        if backend not in ("banded", "dense"):
            raise ValueError(f"unknown backend {backend!r}, expected 'banded' or 'dense'")
        self.params = params
        self.layout = layout
        self.frame = frame
        self.interaction_picture = interaction_picture
        # the banded apply exploits the single-band structure of the
        # interaction-picture K; without the picture K is dense
        self.backend = backend if interaction_picture else "dense"
        self.dim = layout.dim
        self.dims = layout.dims
        self.tau = params.tau

        ops = _ops3(layout)
        static = static_hamiltonian(params, layout, frame)
        dvec = np.real(np.diag(static)).copy()

        # damping diagonal: sum_k rate_k diag(A_k^dag A_k); taken from the
        # actual truncated operators (b b^dag kills the top Fock level, so the
        # heating diagonal is not n+1 there)
        mvec = np.zeros(self.dim)
        for op, rate in collapse_operators(params, layout):
            if rate > 0:
                mvec += rate * np.einsum("ki,ki->i", op.conj(), op).real

        d0 = layout.dims[0]
        # transmon site energies in this frame; rung r couples levels r-1, r
        site = np.array(
            [-params.lam * r * (r - 1) + (params.omega_t * r if frame == "lab" else 0.0) for r in range(d0)]
        )

        terms = []  # (M, M^dag, coefficient closure)
        bands = []  # (mech axis, coefficient closure) for the couplings
        rungs = []  # (transmon rung, sqrt(r), coefficient closure)
        if interaction_picture:
            self._dvec = dvec
            kbase = np.zeros((self.dim, self.dim), dtype=complex)
            # longitudinal couplings pick up the mechanical carrier phases
            for axis, (g0, om, b) in enumerate(
                ((params.g01, params.omega1, ops.b1), (params.g02, params.omega2, ops.b2)), start=1
            ):
                if g0 == 0:
                    continue
                m = g0 * ((ops.na_diag[:, None]) * b)  # n_a is diagonal
                cf = _phase_closure(-om)
                terms.append((m, m.conj().T.copy(), cf))
                bands.append((axis, g0, cf))
            # drive enters rung by rung: each transmon rung rotates at its own
            # Kerr-split frequency
            for r in range(1, d0):
                rung = np.zeros((d0, d0), dtype=complex)
                rung[r, r - 1] = math.sqrt(r)
                m = embed(rung, layout, 0)
                freq = site[r] - site[r - 1]
                cf = _drive_closure(params, freq, frame)
                terms.append((m, m.conj().T.copy(), cf))
                rungs.append((r, math.sqrt(r), cf))
        else:
            self._dvec = None
            kbase = static.astype(complex)
            terms.append(
                (ops.adag.copy(), ops.a.copy(), _drive_closure(params, 0.0, frame))
            )
        kbase = kbase - 0.5j * np.diag(mvec)
        self._kbase = kbase
        self._terms = terms
        self._scratch = np.empty_like(kbase)

        if self.backend == "banded":
            # K y applied band by band on the 4-axis view (nt, m1, m2, col).
            # Per coupling the bond weight at bond index k is g0 * n_t *
            # sqrt(k+1); the same real cube serves M (lowering) and M^dag.
            d = self.dim
            dt_, d1, d2 = layout.dims
            grid_nt = np.arange(dt_, dtype=float).reshape(dt_, 1, 1)
            self._band_data = []
            for axis, g0, cf in bands:
                dj = layout.dims[axis]
                shape = [dt_, d1, d2]
                shape[axis] = dj - 1
                ladder = np.sqrt(np.arange(1, dj, dtype=float))
                w = np.broadcast_to(grid_nt, shape) * _axis_vec(ladder, 3, axis)
                w = (g0 * w)[..., None]  # broadcast over the column index
                lo = [slice(None)] * 3 + [slice(None)]
                hi = list(lo)
                lo[axis] = slice(0, dj - 1)
                hi[axis] = slice(1, dj)
                buf = np.empty(tuple(shape) + (d,), dtype=complex)
                self._band_data.append((tuple(lo), tuple(hi), w, buf, cf))
            self._rung_data = rungs
            self._kdiag = kbase.diagonal().copy()
            self._shape4 = (dt_, d1, d2, d)
            self._xbuf = np.empty((d, d), dtype=complex)
            self._rbuf = np.empty((d1, d2, d), dtype=complex)
            self._shape6 = layout.dims + layout.dims

        # jump sandwiches: (slot, raising?, sqrt(rate) * ladder coeffs, rung freqs)
        jumps = []
        sq0 = np.sqrt(np.arange(d0, dtype=float))
        if params.gamma_t > 0:
            rung_freq = np.zeros(d0)
            if interaction_picture and params.lam != 0:
                # relative rung phases survive in the sandwich; uniform parts cancel
                rung_freq[1:] = 2.0 * params.lam * np.arange(d0 - 1, dtype=float)
            freqs = rung_freq if interaction_picture and params.lam != 0 else None
            jumps.append((0, False, math.sqrt(params.gamma_t) * sq0, freqs))
        for slot, nbar, gamma in ((1, params.nbar1, params.gamma1), (2, params.nbar2, params.gamma2)):
            if gamma == 0:
                continue
            sq = np.sqrt(np.arange(layout.dims[slot], dtype=float))
            down = math.sqrt((nbar + 1.0) * gamma) * sq
            jumps.append((slot, False, down, None))
            if nbar > 0:
                up = math.sqrt(nbar * gamma) * sq
                jumps.append((slot, True, up, None))
        self._jumps = jumps

        if self.backend == "banded":
            # sandwiches as one fused weight cube per channel: the amplitude
            # of both ladder sides premultiplied on the destination block
            self._jump_data = []
            for slot, raise_, base, freqs in jumps:
                n = layout.dims[slot]
                shape = list(layout.dims + layout.dims)
                shape[slot] = shape[3 + slot] = n - 1
                c = base[1:]
                w = np.broadcast_to(
                    _axis_vec(c, 6, slot) * _axis_vec(c, 6, 3 + slot), shape
                ).copy()
                side = slice(1, n) if not raise_ else slice(0, n - 1)
                home = slice(0, n - 1) if not raise_ else slice(1, n)
                src = [slice(None)] * 6
                dst = [slice(None)] * 6
                src[slot] = src[3 + slot] = side
                dst[slot] = dst[3 + slot] = home
                phase = None
                if freqs is not None:
                    f = freqs[1:]
                    phase = f[:, None] - f[None, :]  # left minus right rung
                    phase = phase.reshape(
                        [len(f) if a in (slot, 3 + slot) else 1 for a in range(6)]
                    )
                buf = np.empty(shape, dtype=complex)
                self._jump_data.append((tuple(dst), tuple(src), w, buf, phase))

        self._dephasing = None
        if params.gamma_phi > 0:
            navec = ops.na_diag
            self._dephasing = params.gamma_phi * np.outer(navec, navec)

    def hamiltonian(self, t: float) -> np.ndarray:
        """Dense Hamiltonian in the integration frame (diagnostics and tests)."""
        h = self._kbase.copy()
        np.fill_diagonal(h, h.diagonal().real)  # drop the damping part
        for m, mdag, cf in self._terms:
            c = cf(t)
            h += c * m + c.conjugate() * mdag
        return h

    def rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        if self.backend == "banded":
            x = self._apply_k(t, y)
            dy = x - x.conj().T
            dy *= -1j
            y6 = y.reshape(self._shape6)
            d6 = dy.reshape(self._shape6)
            for dst, src, w, buf, phase in self._jump_data:
                np.multiply(y6[src], w, out=buf)
                if phase is not None:
                    buf *= np.exp((1j * t) * phase)
                d6[dst] += buf
        else:
            k = self._kbase.copy()
            for m, mdag, cf in self._terms:
                c = cf(t)
                np.multiply(m, c, out=self._scratch)
                k += self._scratch
                np.multiply(mdag, c.conjugate(), out=self._scratch)
                k += self._scratch
            x = k @ y
            dy = -1j * (x - x.conj().T)
            for slot, raise_, base, freqs in self._jumps:
                coeff = base if freqs is None else base * np.exp(1j * freqs * t)
                dy += _sandwich_shift(y, self.dims, slot, coeff, raise_)
        if self._dephasing is not None:
            dy += self._dephasing * y
        return dy

    def _apply_k(self, t: float, y: np.ndarray) -> np.ndarray:
        """K y without materializing K: diagonal plus one pass per band."""
        x = self._xbuf
        np.multiply(self._kdiag[:, None], y, out=x)
        y4 = y.reshape(self._shape4)
        x4 = x.reshape(self._shape4)
        for lo, hi, w, buf, cf in self._band_data:
            c = cf(t)
            np.multiply(y4[hi], w, out=buf)
            buf *= c
            x4[lo] += buf
            np.multiply(y4[lo], w, out=buf)
            buf *= c.conjugate()
            x4[hi] += buf
        rbuf = self._rbuf
        for r, sq, cf in self._rung_data:
            c = cf(t) * sq
            np.multiply(y4[r - 1], c, out=rbuf)
            x4[r] += rbuf
            np.multiply(y4[r], c.conjugate(), out=rbuf)
            x4[r - 1] += rbuf
        return x

    def to_physical(self, t: float, y: np.ndarray) -> np.ndarray:
        """Map the integrator-frame state back to the physical frame."""
        if self._dvec is None:
            return y.copy()
        u = np.exp(-1j * self._dvec * t)
        return (u[:, None] * y) * u.conj()[None, :]

    def from_physical(self, t: float, rho: np.ndarray) -> np.ndarray:
        if self._dvec is None:
            return rho.astype(complex, copy=True)
        u = np.exp(1j * self._dvec * t)
        return (u[:, None] * rho.astype(complex)) * u.conj()[None, :]


def _phase_closure(freq: float):
    def cf(t: float) -> complex:
        return cmath.exp(1j * freq * t)

    return cf


def _drive_closure(params: SystemParams, extra_freq: float, frame: str):
    """Coefficient of the raising rung: drive phasor times the rung rotation."""
    a1, a2 = params.amp1, params.amp2
    w1, w2 = params.omega_l1, params.omega_l2
    shift = params.omega_t if frame == "lab" else 0.0

    def cf(t: float) -> complex:
        phasor = a1 * cmath.exp(-1j * w1 * t) + a2 * cmath.exp(1j * w2 * t)
        return phasor * cmath.exp(1j * (extra_freq - shift) * t)

    return cf


class EffectiveSystem:
    """Closed-system backend for the folded two-mode mechanical model."""

    def __init__(self, params: SystemParams, mech_layout: FockLayout):
        if len(mech_layout) != 2:
            raise LayoutError("effective model needs a 2-slot mechanical layout")
        self.params = params
        self.layout = mech_layout
        self.dim = mech_layout.dim
        self.dims = mech_layout.dims
        self.tau = params.tau

    def rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        h = effective_hamiltonian(t, self.params, self.layout)
        x = h @ y
        return -1j * (x - x.conj().T)

    def to_physical(self, t: float, y: np.ndarray) -> np.ndarray:
        return y.copy()

    def from_physical(self, t: float, rho: np.ndarray) -> np.ndarray:
        return rho.astype(complex, copy=True)
