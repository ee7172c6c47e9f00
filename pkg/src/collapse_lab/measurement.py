"""Gaussian measurement operators, readout sampling and one-step updates.

The measurement operator over pointer values λ_i is diagonal with entries

    M_i = (δt / 2πτ)^(1/4) exp[-(δt / 4τ) (r - λ_i)²]

and the readout density is P(r | ρ) = Tr[ρ M M†], which for a diagonal
operator is the Gaussian mixture Σ_i |a_i|² N(λ_i, τ/δt).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from ._tolerances import TOL
from .errors import DimensionMismatch, GridTooNarrow, NonPositive, VanishingBranch
from .qstate import (
    BasisKind,
    QuantumState,
    StateLike,
    as_state,
    as_vector,
    expm_hermitian,
    hermitian_part,
)
from .rng import TrajectoryStreams


class WeakRegimeWarning(UserWarning):
    """dt/tau exceeds the weak-measurement guideline."""


class TruncationWarning(UserWarning):
    """A readout lies so far from the grid that edge truncation matters."""


@dataclass(frozen=True, eq=False)
class GaussianMeasurementConfig:
    """Measurement strength 1/tau, step dt and pointer values.

    ``eigenvalues`` may be omitted for position-grid measurements, where
    the grid positions play the role of the pointer values.
    """

    tau: float
    dt: float
    eigenvalues: np.ndarray | None = None

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau) or self.tau == math.inf):
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if self.eigenvalues is not None:
            lam = np.array(self.eigenvalues, dtype=float)
            if lam.ndim != 1 or lam.size < 2:
                raise ValueError("need at least two pointer values")
            if np.unique(lam).size < 2:
                raise ValueError("pointer values must contain at least two distinct entries")
            if not np.all(np.isfinite(lam)):
                raise ValueError("pointer values must be finite")
            lam.setflags(write=False)
            object.__setattr__(self, "eigenvalues", lam)
        if self.dt / self.tau > TOL.weak_regime_ratio:
            warnings.warn(
                f"dt/tau = {self.dt / self.tau:.3g} > {TOL.weak_regime_ratio}: outside the weak-measurement regime",
                WeakRegimeWarning,
                stacklevel=3,
            )

    @property
    def n(self) -> int:
        return 0 if self.eigenvalues is None else self.eigenvalues.size

    @property
    def is_off(self) -> bool:
        return self.tau == math.inf

    @property
    def noise_std(self) -> float:
        return math.sqrt(self.tau / self.dt)

    @property
    def prefactor(self) -> float:
        return (self.dt / (2.0 * math.pi * self.tau)) ** 0.25

    def replace(self, **changes) -> "GaussianMeasurementConfig":
        kw = dict(tau=self.tau, dt=self.dt, eigenvalues=self.eigenvalues)
        kw.update(changes)
        return GaussianMeasurementConfig(**kw)


@dataclass(frozen=True)
class Readout:
    r: float
    t: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.r):
            raise ValueError(f"readout must be finite, got {self.r}")


ReadoutLike = Union[Readout, float]


def _r(r: ReadoutLike) -> float:
    return r.r if isinstance(r, Readout) else float(r)


@dataclass(frozen=True)
class PositionGridConfig:
    """Uniform position grid plus the oscillator parameters (m, ω)."""

    x_min: float
    dx: float
    n_points: int
    mass: float = 1.0
    omega: float = 1.0

    def __post_init__(self):
        if self.n_points < 64:
            raise ValueError(f"need at least 64 grid points, got {self.n_points}")
        if not self.dx > 0:
            raise ValueError("dx must be positive")
        if not (self.mass > 0 and self.omega > 0):
            raise ValueError("mass and omega must be positive")

    @classmethod
    def centered(cls, center: float, half_width: float, n_points: int, mass: float = 1.0, omega: float = 1.0):
        dx = 2.0 * half_width / (n_points - 1)
        return cls(center - half_width, dx, n_points, mass, omega)

    @property
    def points(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_points)

    @property
    def x_max(self) -> float:
        return self.x_min + self.dx * (self.n_points - 1)

    @property
    def ground_variance(self) -> float:
        """ΔX² = ħ / 2mω of the oscillator ground state."""
        return 1.0 / (2.0 * self.mass * self.omega)


def gaussian_tail_mass(grid: PositionGridConfig, mean: float, variance: float) -> float:
    """Mass of N(mean, variance) outside the cells covered by ``grid``."""
    sigma = math.sqrt(variance)
    lo = (grid.x_min - 0.5 * grid.dx - mean) / (sigma * math.sqrt(2))
    hi = (grid.x_max + 0.5 * grid.dx - mean) / (sigma * math.sqrt(2))
    return 0.5 * (math.erfc(-lo) + math.erfc(hi))


def ground_state(grid: PositionGridConfig, x0: float) -> QuantumState:
    """Ground-state Gaussian centered at ``x0`` sampled on ``grid``.

    Amplitudes are ψ(x_k)·√dx so the discrete vector has unit norm in the
    grid limit; it is renormalized exactly.
    """
    sigma = math.sqrt(grid.ground_variance)
    if x0 - 6 * sigma < grid.x_min or x0 + 6 * sigma > grid.x_max:
        raise GridTooNarrow(f"grid [{grid.x_min}, {grid.x_max}] does not span ±6σ around x0={x0}")
    tail = gaussian_tail_mass(grid, x0, grid.ground_variance)
    if tail > TOL.gaussian_tail_mass:
        raise GridTooNarrow(f"Gaussian mass outside grid is {tail:.2e}")
    x = grid.points
    mw = grid.mass * grid.omega
    psi = (mw / math.pi) ** 0.25 * np.exp(-0.5 * mw * (x - x0) ** 2) * math.sqrt(grid.dx)
    psi = psi / np.linalg.norm(psi)
    return QuantumState(psi.astype(complex), BasisKind.POSITION_GRID, grid)


def pointer_values(state: StateLike, cfg: GaussianMeasurementConfig) -> np.ndarray:
    if isinstance(state, QuantumState) and state.basis_kind is BasisKind.POSITION_GRID:
        return state.grid.points
    if cfg.eigenvalues is None:
        raise ValueError("measurement config has no pointer values for a level state")
    n = as_vector(state).size
    if cfg.n != n:
        raise DimensionMismatch(f"{cfg.n} pointer values for a {n}-level state")
    return cfg.eigenvalues


def _gaussian_diag(r: float, lam: np.ndarray, cfg: GaussianMeasurementConfig) -> np.ndarray:
    return cfg.prefactor * np.exp(-(cfg.dt / (4.0 * cfg.tau)) * (r - lam) ** 2)


def measurement_operator(r: ReadoutLike, cfg: GaussianMeasurementConfig) -> np.ndarray:
    if cfg.eigenvalues is None:
        raise ValueError("config has no pointer values")
    return np.diag(_gaussian_diag(_r(r), cfg.eigenvalues, cfg)).astype(complex)


def position_measurement_operator(
    r: ReadoutLike, grid: PositionGridConfig, cfg: GaussianMeasurementConfig
) -> np.ndarray:
    """Diagonal position measurement over the grid points.

    Emits :class:`TruncationWarning` when ``r`` lies more than 12 readout
    standard deviations outside the grid.
    """
    r = _r(r)
    gap = max(grid.x_min - r, r - grid.x_max, 0.0)
    if gap > 12.0 * cfg.noise_std:
        warnings.warn(f"readout {r} lies {gap:.3g} outside the grid", TruncationWarning, stacklevel=2)
    return np.diag(_gaussian_diag(r, grid.points, cfg)).astype(complex)


def readout_density(state: StateLike, r: ReadoutLike, cfg: GaussianMeasurementConfig) -> float:
    """P(r | ψ) = <ψ| M† M |ψ>."""
    lam = pointer_values(state, cfg)
    m = _gaussian_diag(_r(r), lam, cfg)
    return float(np.sum(np.abs(as_vector(state)) ** 2 * m**2))


def readout_density_matrix(rho: np.ndarray, r: ReadoutLike, cfg: GaussianMeasurementConfig) -> float:
    m = measurement_operator(r, cfg)
    return float(np.real(np.trace(rho @ m @ m.conj().T)))


def select_index(populations: np.ndarray, u: float) -> int:
    cdf = np.cumsum(populations)
    return int(min(np.searchsorted(cdf, u * cdf[-1], side="right"), populations.size - 1))


def sample_readout(
    state: StateLike,
    cfg: GaussianMeasurementConfig,
    rng: TrajectoryStreams | np.random.Generator,
    t: float = 0.0,
) -> Readout:
    """Draw r from Σ_i |a_i|² N(λ_i, τ/δt): pick an index, then add noise."""
    lam = pointer_values(state, cfg)
    if isinstance(rng, TrajectoryStreams):
        u, z = rng.draw()
    else:
        u, z = float(rng.random()), float(rng.standard_normal())
    i = select_index(np.abs(as_vector(state)) ** 2, u)
    return Readout(float(lam[i] + cfg.noise_std * z), t)


def measurement_weights(r: float, lam: np.ndarray, amps: np.ndarray, cfg: GaussianMeasurementConfig) -> np.ndarray:
    """Diagonal Gaussian weights rescaled so the largest on the support is 1.

    The rescaling cancels after normalization and avoids underflow for
    readouts far from every pointer value.
    """
    expo = -(cfg.dt / (4.0 * cfg.tau)) * (r - lam) ** 2
    support = np.abs(amps) > 0
    if np.any(support):
        expo = expo - np.max(expo[support])
    return np.exp(expo)


def apply_measurement(state: StateLike, r: ReadoutLike, cfg: GaussianMeasurementConfig) -> QuantumState:
    """Return M|ψ> / ‖M|ψ>‖."""
    s = as_state(state)
    if cfg.is_off:
        return s
    lam = pointer_values(s, cfg)
    out = measurement_weights(_r(r), lam, s.amplitudes, cfg) * s.amplitudes
    nrm = np.linalg.norm(out)
    if not nrm >= TOL.zero_vector:
        raise VanishingBranch(f"measurement annihilated the state for r={_r(r)}")
    return s.with_amplitudes(out / nrm)


def monitored_rhs(rho: np.ndarray, h_s: np.ndarray, r: ReadoutLike, cfg: GaussianMeasurementConfig) -> np.ndarray:
    """First-order generator of :func:`monitored_qubit_step`.

    For pointer values (+1, -1) this is
    -i[H, ρ] + (r/2τ){σz, ρ} - (r/τ)<σz> ρ.
    """
    r = _r(r)
    d = (r - cfg.eigenvalues) ** 2
    g = np.diag(d).astype(complex)
    mean_g = float(np.real(np.trace(g @ rho)))
    return (
        -1j * (h_s @ rho - rho @ h_s)
        - (g @ rho + rho @ g) / (4.0 * cfg.tau)
        + (mean_g / (2.0 * cfg.tau)) * rho
    )


def monitored_qubit_step(
    rho: np.ndarray, h_s: np.ndarray, r: ReadoutLike, cfg: GaussianMeasurementConfig
) -> np.ndarray:
    """ρ' = UρU† / Tr[UρU†] with U = exp(-i H_s δt) M."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (cfg.n, cfg.n):
        raise DimensionMismatch(f"rho {rho.shape} vs {cfg.n} pointer values")
    m = np.diag(measurement_weights(_r(r), cfg.eigenvalues, np.ones(cfg.n), cfg))
    u = expm_hermitian(h_s, cfg.dt) @ m
    out = u @ rho @ u.conj().T
    out = hermitian_part(out / np.trace(out).real)
    ev = np.linalg.eigvalsh(out)
    if ev[0] < -TOL.negative_eigenvalue:
        raise NonPositive(f"density matrix eigenvalue {ev[0]:.3e}")
    return out


def pointer_operator(lam: Sequence[float]) -> np.ndarray:
    return np.diag(np.asarray(lam, dtype=float)).astype(complex)
