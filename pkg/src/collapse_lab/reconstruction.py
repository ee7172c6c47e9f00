"""Measuring-Hamiltonian reconstruction from state trajectories.

Given ψ(t) and its time derivative, the Hamiltonian

    H = i(|∂ψ̃><ψ̃| - |ψ̃><∂ψ̃|) + φ̇·1,   ψ̃ = e^{iφ} ψ,

satisfies H|ψ> = i|∂ψ>.  This module implements that reconstruction,
the closed forms it yields for Gaussian measurements (qubit, n-level,
oscillator ground state), the associated energy uncertainties, and the
space of Hermitian operators annihilating ψ which parameterizes every
Hamiltonian producing the same trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._tolerances import TOL
from .errors import (
    DimensionMismatch,
    DuplicateTime,
    GridTooNarrow,
    InconsistentInput,
    NotInKernel,
)
from .measurement import (
    GaussianMeasurementConfig,
    PositionGridConfig,
    Readout,
    ReadoutLike,
    _r,
    apply_measurement,
    gaussian_tail_mass,
)
from .qstate import QuantumState, StateLike, as_vector, gellmann_basis, hermitian_part


@dataclass(frozen=True, eq=False)
class TrajectorySample:
    t: float
    state: QuantumState
    readout: Readout | None = None


@dataclass(frozen=True, eq=False)
class ReconstructionResult:
    H: np.ndarray
    dH: float
    residual: float
    phase_rate: float = 0.0


def _check_times(times: Sequence[float]) -> None:
    d = np.diff(np.asarray(times, dtype=float))
    if np.any(d == 0):
        raise DuplicateTime("trajectory contains repeated time stamps")
    if np.any(d < 0):
        raise ValueError("trajectory times must be strictly increasing")


def time_derivative(series: Sequence[TrajectorySample], k: int) -> np.ndarray:
    """Finite-difference |∂ψ> at sample ``k``.

    Interior samples use the central difference over the actual spacing,
    (ψ[k+1] - ψ[k-1]) / (t[k+1] - t[k-1]).  The two endpoints fall back
    to first-order one-sided differences.
    """
    if len(series) < 3:
        raise ValueError("need at least three samples")
    k = range(len(series))[k]
    _check_times([s.t for s in series])
    lo, hi = max(k - 1, 0), min(k + 1, len(series) - 1)
    a, b = series[lo], series[hi]
    return (as_vector(b.state) - as_vector(a.state)) / (b.t - a.t)


def project_tangent(state: StateLike, dstate: np.ndarray) -> np.ndarray:
    """Drop the component of ``dstate`` that changes the norm of ψ.

    Finite differences of a normalized path leave a small real part in
    <ψ|∂ψ>; exact trajectories have none.
    """
    v = as_vector(state)
    d = np.asarray(dstate, dtype=complex)
    return d - np.real(np.vdot(v, d)) * v


@dataclass
class PhaseAccumulator:
    """Running global phase φ(t) = ∫ φ̇ dt with trapezoid steps."""

    phi: float = 0.0
    method: str = "trapezoid"
    _last_rate: float | None = None

    def advance(self, dt: float, rate: float) -> float:
        if self._last_rate is not None:
            self.phi += 0.5 * dt * (self._last_rate + rate)
        self._last_rate = rate
        return self.phi


def phase_rate(state: StateLike, dstate: np.ndarray) -> float:
    """φ̇ = -Im<ψ|∂ψ>, the rate that makes <ψ̃|∂ψ̃> vanish."""
    return -float(np.imag(np.vdot(as_vector(state), dstate)))


def reconstruct_hamiltonian(
    state: StateLike,
    dstate: np.ndarray,
    phase_rate_value: float | None = None,
    *,
    tol: float = TOL.tangent_real_part,
) -> ReconstructionResult:
    """Build H with H|ψ> = i|∂ψ> from a state and its time derivative.

    ``phase_rate_value`` defaults to -Im<ψ|∂ψ>; any other value adds a
    multiple of |ψ> to H|ψ> and shows up in ``residual``.
    """
    v = as_vector(state)
    d = np.asarray(dstate, dtype=complex)
    if d.shape != v.shape:
        raise DimensionMismatch("state and derivative differ in shape")
    overlap = np.vdot(v, d)
    if abs(overlap.real) > tol:
        raise InconsistentInput(f"Re<ψ|∂ψ> = {overlap.real:.3e}: norm is not conserved")
    rate = -overlap.imag if phase_rate_value is None else float(phase_rate_value)
    # the global phase factor cancels in both outer products
    dt_tilde = d + 1j * rate * v
    h = 1j * (np.outer(dt_tilde, v.conj()) - np.outer(v, dt_tilde.conj()))
    h = h + rate * np.eye(v.size)
    residual = float(np.linalg.norm(h @ v - 1j * d))
    dh2 = float(np.vdot(d, d).real) - abs(overlap) ** 2
    return ReconstructionResult(h, math.sqrt(max(dh2, 0.0)), residual, rate)


def reconstruct_from_step(
    state: StateLike, r: ReadoutLike, cfg: GaussianMeasurementConfig
) -> ReconstructionResult:
    """Apply one measurement step, difference forward and reconstruct H."""
    v = as_vector(state)
    nxt = as_vector(apply_measurement(state, r, cfg))
    d = project_tangent(v, (nxt - v) / cfg.dt)
    return reconstruct_hamiltonian(v, d)


def closed_form_qubit_h(a: complex, b: complex, r: float, tau: float) -> np.ndarray:
    off = 1j * a * np.conj(b) * r / tau
    return np.array([[0.0, off], [np.conj(off), 0.0]], dtype=complex)


def eta_matrix(lambdas: Sequence[float], r: float) -> np.ndarray:
    """η_ij = (λ_i - λ_j)(2r - λ_i - λ_j)."""
    lam = np.asarray(lambdas, dtype=float)
    return (lam[:, None] - lam[None, :]) * (2.0 * r - lam[:, None] - lam[None, :])


def _rates(amps: np.ndarray, lambdas, r: float, tau: float) -> np.ndarray:
    # c_j = (1/4τ) Σ_i |a_i|² η_ij
    return (np.abs(amps) ** 2 @ eta_matrix(lambdas, r)) / (4.0 * tau)


def measurement_tangent(amps, lambdas, r: float, tau: float) -> np.ndarray:
    """Exact δt→0 derivative of the measured state: (∂ψ)_j = -a_j c_j."""
    a = np.asarray(amps, dtype=complex)
    return -a * _rates(a, lambdas, r, tau)


def closed_form_nlevel_h(amps, lambdas, r: float, tau: float) -> np.ndarray:
    """[H]_ij = i a_i a_j* /(4τ) Σ_k |a_k|² (η_ik + η_kj)."""
    a = np.asarray(amps, dtype=complex)
    lam = np.asarray(lambdas, dtype=float)
    if a.size != lam.size:
        raise DimensionMismatch("amplitudes and pointer values differ in length")
    eta = eta_matrix(lam, _r(r))
    p = np.abs(a) ** 2
    # Σ_k p_k (η_ik + η_kj) = (η p)_i + (p η)_j
    s = (eta @ p)[:, None] + (p @ eta)[None, :]
    h = 1j * np.outer(a, a.conj()) * s / (4.0 * tau)
    if np.max(np.abs(h - h.conj().T)) > 1e-10 * max(1.0, np.max(np.abs(h))):
        raise ArithmeticError("closed-form Hamiltonian is not Hermitian")
    return hermitian_part(h)


def energy_variance_nlevel(amps, lambdas, r: float, tau: float) -> float:
    """ΔH² = Σ_j |a_j|²/(16τ²) (Σ_i |a_i|² η_ij)²."""
    a = np.asarray(amps, dtype=complex)
    c = _rates(a, lambdas, _r(r), tau)
    return float(np.sum(np.abs(a) ** 2 * c**2))


def closed_form_gaussian_h(
    mean: float, variance: float, r: float, tau: float, grid: PositionGridConfig
) -> np.ndarray:
    """Measuring Hamiltonian for a real Gaussian |ψ(x)|² of given mean/variance.

    H(x_k, x_l) = i η(x_k, x_l)/(4τ) ψ(x_k) ψ(x_l) dx with
    η(x, x') = (x - x')(2r - x - x').  The dx factor makes matrix-vector
    products approximate integrals.
    """
    if gaussian_tail_mass(grid, mean, variance) > TOL.gaussian_tail_mass:
        raise GridTooNarrow("Gaussian mass outside the grid exceeds tolerance")
    x = grid.points
    # ψ(x)ψ(x') = (1/(2π var))^{1/2} exp(-((x-m)² + (x'-m)²)/(4 var))
    amp = (1.0 / (2.0 * math.pi * variance)) ** 0.5
    g = np.exp(-((x - mean) ** 2) / (4.0 * variance))
    eta = (x[:, None] - x[None, :]) * (2.0 * r - x[:, None] - x[None, :])
    return 1j * eta / (4.0 * tau) * amp * np.outer(g, g) * grid.dx


def closed_form_position_h(
    grid_state: StateLike, x0: float, r: float, tau: float, grid: PositionGridConfig
) -> np.ndarray:
    """Ground-state measuring Hamiltonian, with √(mω/π) exp[-mω((x-x0)²+(x'-x0)²)/2]."""
    if as_vector(grid_state).size != grid.n_points:
        raise DimensionMismatch("grid state does not match the grid")
    return closed_form_gaussian_h(x0, grid.ground_variance, _r(r), tau, grid)


def ground_energy_uncertainty(r: float, x0: float, tau: float, mass: float = 1.0, omega: float = 1.0) -> float:
    """ΔH(0) = √[(1 + 4mω(r - x0)²) / (32 m² ω² τ²)] with ħ = 1."""
    mw = mass * omega
    return math.sqrt((1.0 + 4.0 * mw * (r - x0) ** 2) / (32.0 * mw**2 * tau**2))


def energy_uncertainty_position(dX: float, r: float, x_mean: float, tau: float) -> float:
    """ΔH = √(2(r - x̄)² ΔX² + ΔX⁴) / (2√2 τ); ``dX`` is the standard deviation."""
    if not (dX > 0 and tau > 0):
        raise ValueError("dX and tau must be positive")
    v = dX * dX
    return math.sqrt(2.0 * (r - x_mean) ** 2 * v + v * v) / (2.0 * math.sqrt(2.0) * tau)


def position_variance_law(var0: float, tau: float, t):
    """ΔX(t)² = ΔX(0)² τ / (ΔX(0)² t + τ)."""
    return var0 * tau / (var0 * np.asarray(t, dtype=float) + tau)


def strong_limit_uncertainty(r: float, x_mean: float, tau: float, t: float) -> float:
    return abs(r - x_mean) / (2.0 * math.sqrt(tau * t))


def _hermitian_real_basis(n: int) -> np.ndarray:
    """n² Hermitian matrices orthogonal under Tr(AB): √(2/n)·1 plus Gell-Mann."""
    ident = np.sqrt(2.0 / n) * np.eye(n, dtype=complex)
    return np.concatenate([ident[None], gellmann_basis(n).generators])


def kernel_space_basis(state: StateLike) -> list[np.ndarray]:
    """Real-linear basis of {T Hermitian : T|ψ> = 0}.

    Solves the 2n × n² real system for the coefficients of T and keeps
    right singular vectors whose singular value is below 1e-10 times the
    largest one.
    """
    v = as_vector(state)
    n = v.size
    basis = _hermitian_real_basis(n)
    cols = basis @ v  # (n², n): B_m ψ
    a = np.concatenate([cols.real.T, cols.imag.T], axis=0)
    _, sv, vh = np.linalg.svd(a)
    cutoff = TOL.kernel_sv_rel * (sv[0] if sv.size else 1.0)
    rank = int(np.sum(sv > cutoff))
    null = vh[rank:]
    return [hermitian_part(np.tensordot(c, basis, axes=1)) for c in null]


def kernel_dimension_report(state: StateLike) -> dict:
    n = as_vector(state).size
    observed = len(kernel_space_basis(state))
    return {"n": n, "observed_dimension": observed, "claimed_dimension": n * n - n, "expected_real_count": (n - 1) ** 2}


def kernel_coordinates(t_op: np.ndarray, basis: Sequence[np.ndarray]) -> tuple[np.ndarray, float]:
    """Least-squares coordinates of ``t_op`` in ``basis`` and the residual norm."""
    if not basis:
        return np.zeros(0), float(np.linalg.norm(t_op))
    mat = np.stack([np.concatenate([b.real.ravel(), b.imag.ravel()]) for b in basis], axis=1)
    target = np.concatenate([np.real(t_op).ravel(), np.imag(t_op).ravel()])
    coef, *_ = np.linalg.lstsq(mat, target, rcond=None)
    return coef, float(np.linalg.norm(mat @ coef - target))


def equivalent_hamiltonian(h: np.ndarray, t_op: np.ndarray, state: StateLike) -> np.ndarray:
    """H' = H + T, after checking T|ψ> = 0."""
    v = as_vector(state)
    leak = float(np.linalg.norm(np.asarray(t_op) @ v))
    if leak >= TOL.kernel_membership:
        raise NotInKernel(f"‖Tψ‖ = {leak:.3e}")
    return np.asarray(h, dtype=complex) + np.asarray(t_op, dtype=complex)


def energy_uncertainty(h: np.ndarray, state: StateLike) -> float:
    v = as_vector(state)
    hv = h @ v
    mean = np.vdot(v, hv).real
    return math.sqrt(max(np.vdot(hv, hv).real - mean**2, 0.0))


@dataclass(frozen=True)
class PowerIdentityReport:
    omega_sq: float
    square_defect: float
    cube_defect: float

    @property
    def max_defect(self) -> float:
        return max(self.square_defect, self.cube_defect)


def power_identity_check(state: StateLike, dstate: np.ndarray) -> PowerIdentityReport:
    """Check H² = |∂ψ̃><∂ψ̃| + ω²|ψ><ψ| and H³ = ω²H, ω² = <∂ψ̃|∂ψ̃>.

    The derivative is first gauge-fixed so that <ψ|∂ψ̃> = 0, and H is the
    reconstruction without the φ̇·1 shift.
    """
    v = as_vector(state)
    d = np.asarray(dstate, dtype=complex)
    d = d - np.vdot(v, d) * v
    h = reconstruct_hamiltonian(v, d, 0.0, tol=np.inf).H
    w2 = float(np.vdot(d, d).real)
    h2 = h @ h
    sq = h2 - np.outer(d, d.conj()) - w2 * np.outer(v, v.conj())
    cube = h2 @ h - w2 * h
    return PowerIdentityReport(w2, float(np.linalg.norm(sq, 2)), float(np.linalg.norm(cube, 2)))
