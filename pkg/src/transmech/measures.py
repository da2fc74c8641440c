"""Entanglement and non-Gaussianity measures for two-mode states.

All functions take a density matrix on a two-mode Fock space together with
its (d1, d2) truncation. The covariance matrix lives in the ladder basis
X = (b1, b2, b1^dag, b2^dag):

    sigma_ij = <{X_i, X_j^dag}> - 2 <X_i><X_j^dag>

which is Hermitian and equals the identity on vacuum. Symplectic
eigenvalues are |eig(Omega sigma)| with Omega = diag(1, 1, -1, -1); they
come in two degenerate pairs and satisfy nu >= 1 for physical states with
negligible top-level truncation weight.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError, PositivityError
from .fock import (
    annihilation,
    expectation,
    partial_transpose,
    trace_norm_hermitian,
    von_neumann_entropy,
)

EPS_PHYS = 1e-6  # slack on the uncertainty bound nu >= 1
EPS_NG = 1e-6  # threshold for calling a state non-Gaussian
# Truncated ladder operators obey <[b, b+]> = 1 - d p_top, which biases the
# Gaussian entropy low and can push the gap slightly negative on thermal-ish
# states. Within EPS_NUM that is a known artifact (bounded by ~2 d ln-scale
# times the top-level population, well under 0.05 while the health ceiling
# of 1e-3 holds); beyond it the state is treated as broken.
EPS_NUM = 0.05

_OMEGA = np.diag([1.0, 1.0, -1.0, -1.0])


@lru_cache(maxsize=8)
def _mode_ops(dims):
    d1, d2 = dims
    b1 = np.kron(annihilation(d1), np.eye(d2))
    b2 = np.kron(np.eye(d1), annihilation(d2))
    basis = (b1, b2, b1.conj().T, b2.conj().T)
    anti = tuple(
        tuple(xi @ xj.conj().T + xj.conj().T @ xi for xj in basis) for xi in basis
    )
    return basis, anti


def covariance_matrix(rho: np.ndarray, dims) -> np.ndarray:
    """Hermitian 4x4 second-moment matrix of the two modes."""
    dims = (int(dims[0]), int(dims[1]))
    d = dims[0] * dims[1]
    if rho.shape != (d, d):
        raise DimensionError(f"state shape {rho.shape} does not match dims {dims}")
    basis, anti = _mode_ops(dims)
    firsts = np.array([expectation(x, rho) for x in basis])
    sigma = np.empty((4, 4), dtype=complex)
    for i in range(4):
        for j in range(4):
            sigma[i, j] = expectation(anti[i][j], rho) - 2 * firsts[i] * firsts[j].conjugate()
    return (sigma + sigma.conj().T) / 2


def symplectic_eigenvalues(sigma: np.ndarray, eps_phys: float = EPS_PHYS, pair_tol: float = 1e-8):
    """(nu_plus, nu_minus) of a physical-state covariance matrix.

    The spectrum of Omega sigma must split into two +/- pairs; a spread
    beyond pair_tol means sigma is not a valid second-moment matrix.
    Truncation artifacts can push nu slightly under 1; below 1 - eps_phys
    the state is treated as unphysical.
    """
    sigma = np.asarray(sigma)
    if sigma.shape != (4, 4):
        raise DimensionError(f"covariance matrix must be 4x4, got {sigma.shape}")
    if np.abs(sigma - sigma.conj().T).max() > 1e-8 * max(1.0, np.abs(sigma).max()):
        raise ValueError("covariance matrix is not hermitian")
    w = np.sort(np.abs(np.linalg.eigvals(_OMEGA @ sigma)))[::-1]
    scale = max(1.0, w[0])
    if abs(w[0] - w[1]) > pair_tol * scale or abs(w[2] - w[3]) > pair_tol * scale:
        raise ValueError(f"symplectic spectrum does not pair up: {w}")
    nu_plus = (w[0] + w[1]) / 2
    nu_minus = (w[2] + w[3]) / 2
    if nu_minus < 1.0 - eps_phys:
        raise PositivityError(
            f"symplectic eigenvalue {nu_minus:.9f} violates the uncertainty bound"
        )
    return float(nu_plus), float(nu_minus)


def _h(x: float) -> float:
    # entropy of a thermal mode with symplectic eigenvalue x; zero at x <= 1
    if x <= 1.0:
        return 0.0
    p, m = (x + 1) / 2, (x - 1) / 2
    return p * math.log(p) - m * math.log(m)


def gaussian_entropy(nu_plus: float, nu_minus: float) -> float:
    """Entropy (nats) of the Gaussian state with the given symplectic spectrum."""
    return _h(nu_plus) + _h(nu_minus)


def _clamp_gap(delta: float, eps_num: float) -> float:
    if delta < -eps_num:
        raise PositivityError(f"entropy gap {delta:.3e} below -{eps_num:.1e}")
    if delta < 0.0:
        warnings.warn("negative entropy gap clamped to zero (truncated-ladder artifact)")
        return 0.0
    return delta


def non_gaussianity(rho: np.ndarray, dims, eps_num: float = EPS_NUM) -> float:
    """Relative entropy of non-Gaussianity (nats).

    delta = S(Gaussian with same covariance) - S(rho) is non-negative in
    exact arithmetic; values in [-eps_num, 0) are clamped to zero with a
    warning, anything lower raises.
    """
    sigma = covariance_matrix(rho, dims)
    s_gauss = gaussian_entropy(*symplectic_eigenvalues(sigma))
    return _clamp_gap(s_gauss - von_neumann_entropy(rho), eps_num)


def log_negativity(rho: np.ndarray, dims, mode: int = 1) -> float:
    """Logarithmic negativity (bits) under partial transposition of `mode`."""
    tn = trace_norm_hermitian(partial_transpose(rho, dims, which=mode))
    return max(0.0, math.log2(tn))


@dataclass(frozen=True)
class MeasureRecord:
    """One sample's worth of entanglement diagnostics."""

    en_bits: float
    delta12_nats: float
    nu_plus: float
    nu_minus: float
    entropy_nats: float
    gauss_entropy_nats: float
    non_gaussian: bool

    def asdict(self) -> dict:
        return {
            "EN_bits": self.en_bits,
            "delta12_nats": self.delta12_nats,
            "nu_plus": self.nu_plus,
            "nu_minus": self.nu_minus,
            "entropy_nats": self.entropy_nats,
            "gauss_entropy_nats": self.gauss_entropy_nats,
            "non_gaussian": self.non_gaussian,
        }


def measure_record(rho: np.ndarray, dims, eps_num: float = EPS_NUM, eps_ng: float = EPS_NG) -> MeasureRecord:
    """All measures of one two-mode state, sharing the spectral work."""
    sigma = covariance_matrix(rho, dims)
    nu_plus, nu_minus = symplectic_eigenvalues(sigma)
    s_gauss = gaussian_entropy(nu_plus, nu_minus)
    s_vn = von_neumann_entropy(rho)
    delta = _clamp_gap(s_gauss - s_vn, eps_num)
    return MeasureRecord(
        en_bits=log_negativity(rho, dims),
        delta12_nats=delta,
        nu_plus=nu_plus,
        nu_minus=nu_minus,
        entropy_nats=s_vn,
        gauss_entropy_nats=s_gauss,
        non_gaussian=delta > eps_ng,
    )
