"""Truncated Fock-space operators and dense linear-algebra helpers.

Everything here works on plain complex ndarrays. States are density matrices
of shape (d, d) with d the product of the slot dimensions in a FockLayout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    HermiticityError,
    LayoutError,
    PositivityError,
    TraceError,
)

# Default tolerances, shared across the package.
EPS_HERM = 1e-9
EPS_TRACE = 1e-8
EPS_POS = 1e-8


@dataclass(frozen=True)
class FockLayout:
    """Ordered truncation dimensions of a tensor-product Hilbert space."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) == 0:
            raise LayoutError("layout needs at least one slot")
        if any(d < 2 for d in dims):
            raise DimensionError(f"slot dimensions must be >= 2, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def dim(self) -> int:
        return math.prod(self.dims)

    def __len__(self) -> int:
        return len(self.dims)


def annihilation(n: int) -> np.ndarray:
    """Lowering operator on an n-level space: M[k, k+1] = sqrt(k+1)."""
    n = int(n)
    if n < 2:
        raise DimensionError(f"annihilation needs dimension >= 2, got {n}")
    a = np.zeros((n, n), dtype=complex)
    k = np.arange(1, n)
    a[k - 1, k] = np.sqrt(k)
    return a


def creation(n: int) -> np.ndarray:
    return annihilation(n).conj().T


def number(n: int) -> np.ndarray:
    if int(n) < 2:
        raise DimensionError(f"number needs dimension >= 2, got {n}")
    return np.diag(np.arange(int(n), dtype=float)).astype(complex)


def identity(n: int) -> np.ndarray:
    return np.eye(int(n), dtype=complex)


def dag(op: np.ndarray) -> np.ndarray:
    return op.conj().T


def ket(n: int, k: int) -> np.ndarray:
    """Fock basis column vector |k> on an n-level space."""
    if not 0 <= k < n:
        raise DimensionError(f"level {k} outside 0..{n - 1}")
    v = np.zeros(n, dtype=complex)
    v[k] = 1.0
    return v


def density(psi: np.ndarray) -> np.ndarray:
    """Pure-state density matrix |psi><psi| (normalizes psi)."""
    psi = np.asarray(psi, dtype=complex).ravel()
    nrm = np.linalg.norm(psi)
    if nrm == 0:
        raise DimensionError("zero vector has no associated state")
    psi = psi / nrm
    return np.outer(psi, psi.conj())


def thermal_state(n: int, nbar: float) -> np.ndarray:
    """Thermal (geometric) state truncated to n levels, renormalized to trace 1."""
    if nbar < 0:
        raise DimensionError(f"mean occupation must be >= 0, got {nbar}")
    if nbar == 0:
        return density(ket(n, 0))
    r = nbar / (1.0 + nbar)
    p = r ** np.arange(n)
    p /= p.sum()
    return np.diag(p).astype(complex)


def embed(op: np.ndarray, layout: FockLayout, slot: int) -> np.ndarray:
    """Lift a single-slot operator to the full product space by kron with identities."""
    op = np.asarray(op, dtype=complex)
    if not 0 <= slot < len(layout):
        raise LayoutError(f"slot {slot} outside layout with {len(layout)} slots")
    d = layout.dims[slot]
    if op.shape != (d, d):
        raise DimensionError(f"operator shape {op.shape} does not match slot dimension {d}")
    full = np.array([[1.0 + 0j]])
    for s, ds in enumerate(layout.dims):
        full = np.kron(full, op if s == slot else np.eye(ds, dtype=complex))
    return full


def expectation(op: np.ndarray, rho: np.ndarray) -> complex:
    """tr(op @ rho) without forming the product matrix."""
    op = np.asarray(op)
    rho = np.asarray(rho)
    if op.shape != rho.shape or op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise DimensionError(f"incompatible shapes {op.shape} and {rho.shape}")
    return complex(np.einsum("ij,ji->", op, rho))


def partial_trace(rho: np.ndarray, layout: FockLayout, keep) -> np.ndarray:
    """Reduced density matrix over the kept slots, in original slot order."""
    if isinstance(keep, (int, np.integer)):
        keep = (int(keep),)
    keep = tuple(sorted(int(s) for s in keep))
    n = len(layout)
    if len(keep) == 0:
        raise LayoutError("keep must name at least one slot")
    if len(set(keep)) != len(keep) or any(not 0 <= s < n for s in keep):
        raise LayoutError(f"invalid keep slots {keep} for {n}-slot layout")
    rho = np.asarray(rho)
    if rho.shape != (layout.dim, layout.dim):
        raise DimensionError(f"state shape {rho.shape} does not match layout dim {layout.dim}")

    # einsum subscripts: traced slots share a letter between bra and ket side
    bra = [chr(ord("a") + s) for s in range(n)]
    kets = [bra[s] if s not in keep else chr(ord("a") + n + s) for s in range(n)]
    out = "".join(bra[s] for s in keep) + "".join(kets[s] for s in keep)
    sub = "".join(bra) + "".join(kets) + "->" + out
    reduced = np.einsum(sub, rho.reshape(*layout.dims, *layout.dims))
    dk = math.prod(layout.dims[s] for s in keep)
    return np.ascontiguousarray(reduced.reshape(dk, dk))


def partial_transpose(rho: np.ndarray, dims: tuple[int, int], which: int = 1) -> np.ndarray:
    """Transpose one mode of a bipartite state; which is the 0-based mode index."""
    d1, d2 = (int(d) for d in dims)
    rho = np.asarray(rho)
    if rho.shape != (d1 * d2, d1 * d2):
        raise DimensionError(f"state shape {rho.shape} does not match dims {dims}")
    t = rho.reshape(d1, d2, d1, d2)
    if which == 1:
        t = t.transpose(0, 3, 2, 1)
    elif which == 0:
        t = t.transpose(2, 1, 0, 3)
    else:
        raise LayoutError(f"which must be 0 or 1, got {which}")
    return np.ascontiguousarray(t.reshape(d1 * d2, d1 * d2))


def _hermiticity_defect(mat: np.ndarray) -> float:
    return float(np.abs(mat - mat.conj().T).max())


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigensystem of a Hermitian matrix; eigenvalues ascending, eigenvectors as columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


def hermitian_spectrum(mat: np.ndarray, tol: float = EPS_HERM) -> SpectralDecomposition:
    """Guarded eigendecomposition.

    The hermiticity defect is measured in max norm, scaled by max(1, |mat|_max)
    so the guard is absolute for density matrices and relative for operators
    with large physical magnitudes.
    """
    mat = np.asarray(mat)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {mat.shape}")
    scale = max(1.0, float(np.abs(mat).max()))
    if _hermiticity_defect(mat) > tol * scale:
        raise HermiticityError(
            f"hermiticity defect {_hermiticity_defect(mat):.3e} exceeds {tol:.1e} x {scale:.3e}"
        )
    w, v = np.linalg.eigh(mat)
    return SpectralDecomposition(w, v)


def trace_norm_hermitian(mat: np.ndarray, tol: float = EPS_HERM) -> float:
    """Sum of absolute eigenvalues of a Hermitian matrix."""
    spec = hermitian_spectrum(mat, tol=tol)
    return float(np.abs(spec.eigenvalues).sum())


def von_neumann_entropy(rho: np.ndarray, eps_pos: float = EPS_POS) -> float:
    """-tr(rho ln rho) in nats.

    Eigenvalues in [-eps_pos, 0) are treated as numerically zero; anything
    below -eps_pos raises PositivityError.
    """
    w = np.linalg.eigvalsh(np.asarray(rho))
    if w.min() < -eps_pos:
        raise PositivityError(f"eigenvalue {w.min():.3e} below -{eps_pos:.1e}")
    w = w[w > 0.0]
    return float(-(w * np.log(w)).sum())


def unitary_from_generator(gen: np.ndarray, tol: float = EPS_HERM) -> np.ndarray:
    """exp(-i gen) for Hermitian gen, exp(gen) for anti-Hermitian gen.

    Anything that is neither (within tol, scaled as in hermitian_spectrum)
    raises HermiticityError.
    """
    gen = np.asarray(gen, dtype=complex)
    if gen.ndim != 2 or gen.shape[0] != gen.shape[1]:
        raise DimensionError(f"expected a square generator, got shape {gen.shape}")
    scale = max(1.0, float(np.abs(gen).max()))
    if _hermiticity_defect(gen) <= tol * scale:
        herm = gen
    elif float(np.abs(gen + gen.conj().T).max()) <= tol * scale:
        herm = 1j * gen
    else:
        raise HermiticityError("generator is neither Hermitian nor anti-Hermitian")
    w, v = np.linalg.eigh(herm)
    return (v * np.exp(-1j * w)) @ v.conj().T


def validate_density_matrix(
    rho: np.ndarray,
    eps_herm: float = EPS_HERM,
    eps_trace: float = EPS_TRACE,
    eps_pos: float = EPS_POS,
    check_positivity: bool = False,
) -> None:
    """Raise if rho is not a physical state within the given tolerances.

    Positivity needs an eigendecomposition, so it is opt-in; hermiticity and
    trace checks are O(d^2).
    """
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {rho.shape}")
    defect = _hermiticity_defect(rho)
    if defect > eps_herm:
        raise HermiticityError(f"hermiticity defect {defect:.3e} exceeds {eps_herm:.1e}")
    tr = complex(np.trace(rho))
    if abs(tr - 1.0) > eps_trace:
        raise TraceError(f"trace {tr:.12g} differs from 1 by more than {eps_trace:.1e}")
    if check_positivity:
        wmin = float(np.linalg.eigvalsh(rho).min())
        if wmin < -eps_pos:
            raise PositivityError(f"eigenvalue {wmin:.3e} below -{eps_pos:.1e}")
