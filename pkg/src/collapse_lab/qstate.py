"""Finite-dimensional states, operators and generalized Bloch vectors.

Operators are plain complex ``numpy`` arrays; states are wrapped in
:class:`QuantumState` so the basis kind (discrete levels or a position
grid) travels with the amplitudes.  ħ = 1 throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import TYPE_CHECKING, Sequence, Union

import numpy as np

from ._tolerances import TOL
from .errors import DimensionMismatch, NonHermitianLeak, ZeroVector

if TYPE_CHECKING:  # pragma: no cover
    from .measurement import PositionGridConfig

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)


class BasisKind(str, Enum):
    LEVEL = "level"
    POSITION_GRID = "position-grid"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class QuantumState:
    """Complex amplitude vector over a finite basis.

    Amplitudes are not forced to unit norm on construction; use
    :func:`normalize` for that.
    """

    amplitudes: np.ndarray
    basis_kind: BasisKind = BasisKind.LEVEL
    grid: "PositionGridConfig | None" = None

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.ndim != 1:
            raise DimensionMismatch("amplitudes must be a 1-D vector")
        if amps.size < 2:
            raise DimensionMismatch("a state needs at least two basis elements")
        object.__setattr__(self, "amplitudes", _frozen(amps))
        kind = BasisKind(self.basis_kind)
        object.__setattr__(self, "basis_kind", kind)
        if kind is BasisKind.POSITION_GRID:
            if self.grid is None:
                raise ValueError("position-grid states need a grid descriptor")
            if self.grid.n_points != amps.size:
                raise DimensionMismatch(
                    f"grid has {self.grid.n_points} points, state has {amps.size}"
                )

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def is_normalized(self, tol: float = TOL.norm) -> bool:
        return abs(self.norm - 1.0) < tol

    def with_amplitudes(self, amplitudes) -> "QuantumState":
        return QuantumState(amplitudes, self.basis_kind, self.grid)

    @classmethod
    def basis(cls, n: int, i: int) -> "QuantumState":
        v = np.zeros(n, dtype=complex)
        v[i] = 1.0
        return cls(v)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.amplitudes, dtype=dtype)

    def __repr__(self) -> str:
        return f"QuantumState(dim={self.dim}, kind={self.basis_kind.value}, amplitudes={self.amplitudes!r})"


StateLike = Union[QuantumState, Sequence[complex], np.ndarray]


def as_vector(state: StateLike) -> np.ndarray:
    if isinstance(state, QuantumState):
        return state.amplitudes
    return np.asarray(state, dtype=complex)


def as_state(state: StateLike) -> QuantumState:
    return state if isinstance(state, QuantumState) else QuantumState(state)


def normalize(state: StateLike) -> QuantumState:
    """Rescale to unit norm; raises :class:`ZeroVector` on a null vector."""
    s = as_state(state)
    nrm = np.linalg.norm(s.amplitudes)
    if not nrm >= TOL.zero_vector:
        raise ZeroVector(f"cannot normalize vector of norm {nrm}")
    return s.with_amplitudes(s.amplitudes / nrm)


def density_from_pure(state: StateLike) -> np.ndarray:
    v = as_vector(state)
    return np.outer(v, v.conj())


def is_hermitian(op: np.ndarray, tol: float = TOL.hermitian) -> bool:
    op = np.asarray(op)
    return op.ndim == 2 and op.shape[0] == op.shape[1] and bool(
        np.max(np.abs(op - op.conj().T), initial=0.0) <= tol
    )


def hermitian_part(op: np.ndarray) -> np.ndarray:
    op = np.asarray(op, dtype=complex)
    return 0.5 * (op + op.conj().T)


def purity(rho: np.ndarray) -> float:
    return float(np.real(np.trace(rho @ rho)))


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    ev = np.linalg.eigvalsh(hermitian_part(np.asarray(rho) - np.asarray(sigma)))
    return 0.5 * float(np.sum(np.abs(ev)))


def fidelity_pure(a: StateLike, b: StateLike) -> float:
    """|<a|b>|^2 for pure states."""
    return float(abs(np.vdot(as_vector(a), as_vector(b))) ** 2)


def expm_hermitian(h: np.ndarray, t: float) -> np.ndarray:
    """exp(-i h t) through the eigendecomposition of the Hermitian ``h``."""
    w, v = np.linalg.eigh(hermitian_part(h))
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def propagate(h: np.ndarray, state: StateLike, t: float) -> np.ndarray:
    return expm_hermitian(h, t) @ as_vector(state)


@dataclass(frozen=True, eq=False)
class GeneratorBasis:
    """Generalized Gell-Mann generators of SU(n), normalized to Tr(ΛiΛj) = 2δij.

    ``generators`` has shape (n²-1, n, n).  Ordering: all symmetric
    matrices by (j, k) lexicographic, then all antisymmetric, then the
    diagonal ones Λ¹..Λⁿ⁻¹.
    """

    n: int
    generators: np.ndarray
    labels: tuple = field(default=())

    def __len__(self) -> int:
        return self.generators.shape[0]

    def __iter__(self):
        return iter(self.generators)

    def __getitem__(self, i):
        return self.generators[i]


@lru_cache(maxsize=None)
def gellmann_basis(n: int) -> GeneratorBasis:
    if int(n) != n or n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    n = int(n)
    sym, anti, diag, labels_s, labels_a, labels_d = [], [], [], [], [], []
    for j in range(n):
        for k in range(j + 1, n):
            s = np.zeros((n, n), dtype=complex)
            s[j, k] = s[k, j] = 1.0
            a = np.zeros((n, n), dtype=complex)
            a[j, k] = -1j
            a[k, j] = 1j
            sym.append(s)
            anti.append(a)
            labels_s.append(f"s{j}{k}")
            labels_a.append(f"a{j}{k}")
    for l in range(1, n):
        d = np.zeros(n)
        d[:l] = 1.0
        d[l] = -l
        diag.append(np.diag(np.sqrt(2.0 / (l * (l + 1))) * d).astype(complex))
        labels_d.append(f"d{l}")
    gens = np.array(sym + anti + diag)
    gens.setflags(write=False)
    return GeneratorBasis(n, gens, tuple(labels_s + labels_a + labels_d))


@dataclass(frozen=True, eq=False)
class BlochVector:
    identity_coefficient: float
    components: np.ndarray

    def reconstruct(self, basis: GeneratorBasis) -> np.ndarray:
        if len(self.components) != len(basis):
            raise DimensionMismatch("component count does not match basis")
        out = self.identity_coefficient * np.eye(basis.n, dtype=complex)
        return out + np.tensordot(self.components, basis.generators, axes=1)

    def dot(self, other: "BlochVector") -> float:
        return float(np.dot(self.components, other.components))


def bloch_decompose(op: np.ndarray, basis: GeneratorBasis | None = None) -> BlochVector:
    """Coefficients λ0 = Tr(op)/n and λi = Tr(op Λi)/2."""
    op = np.asarray(op, dtype=complex)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise DimensionMismatch("operator must be square")
    if basis is None:
        basis = gellmann_basis(op.shape[0])
    if op.shape[0] != basis.n:
        raise DimensionMismatch(f"operator is {op.shape[0]}x{op.shape[0]}, basis is for n={basis.n}")
    # Tr(A B) = sum_ij A_ij B_ji
    comps = np.einsum("ij,kji->k", op, basis.generators).real / 2.0
    return BlochVector(float(np.trace(op).real / basis.n), comps)


def expectation(op: np.ndarray, state: StateLike) -> float:
    v = as_vector(state)
    op = np.asarray(op)
    if op.shape != (v.size, v.size):
        raise DimensionMismatch(f"operator {op.shape} vs state of dim {v.size}")
    val = np.vdot(v, op @ v)
    if abs(val.imag) >= TOL.imag_leak:
        raise NonHermitianLeak(f"expectation has imaginary part {val.imag:.3e}")
    return float(val.real)


def random_state(n: int, rng: np.random.Generator) -> QuantumState:
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return normalize(v)


def random_hermitian(n: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return hermitian_part(a)
