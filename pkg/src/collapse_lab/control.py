"""Feedback control built on the measuring Hamiltonian.

Two schemes: the "freeze" feedback that cancels the measurement back-action
with H_c = -(H_s + H_m), and the effective Hamiltonian of the most probable
path of a monitored qubit together with its counter-Hamiltonian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._tolerances import TOL
from .errors import DegenerateEndpoint, OutsideWorkedCase
from .measurement import GaussianMeasurementConfig, Readout, ReadoutLike, _r, apply_measurement, sample_readout
from .qstate import (
    IDENTITY_2,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    QuantumState,
    StateLike,
    as_vector,
    expm_hermitian,
    normalize,
    trace_distance,
)
from .reconstruction import closed_form_nlevel_h
from .rng import TrajectoryStreams


def freeze_feedback_step(
    state: StateLike,
    h_s: np.ndarray | None,
    r: ReadoutLike,
    cfg: GaussianMeasurementConfig,
) -> QuantumState:
    """Measurement step, system evolution, then the counter-unitary exp(-i H_c δt).

    H_m is the closed-form measuring Hamiltonian at the pre-step state, so
    the counter-rotation cancels the back-action to first order in δt.
    """
    s = normalize(state)
    v = s.amplitudes
    h_m = closed_form_nlevel_h(v, cfg.eigenvalues, _r(r), cfg.tau)
    h_s = np.zeros_like(h_m) if h_s is None else np.asarray(h_s, dtype=complex)
    out = as_vector(apply_measurement(s, r, cfg))
    if np.any(h_s):
        out = expm_hermitian(h_s, cfg.dt) @ out
    out = expm_hermitian(-(h_s + h_m), cfg.dt) @ out
    return s.with_amplitudes(out)


@dataclass(eq=False)
class FreezeRun:
    times: np.ndarray
    states: np.ndarray
    readouts: np.ndarray
    drift: np.ndarray
    collapsed: bool

    @property
    def max_drift(self) -> float:
        return float(self.drift.max())

    @property
    def final_drift(self) -> float:
        return float(self.drift[-1])


def freeze_run(
    initial: StateLike,
    cfg: GaussianMeasurementConfig,
    n_steps: int | None = None,
    *,
    h_s: np.ndarray | None = None,
    seed: int = 0,
    readouts: Sequence[float] | None = None,
    control: bool = True,
    collapse_threshold: float = TOL.collapse_threshold,
) -> FreezeRun:
    """Run the freeze scheme (or the uncontrolled evolution with ``control=False``).

    Readouts come from ``readouts`` when given, otherwise they are sampled
    from the current state with the stream ``(seed, 0)``.
    """
    s = normalize(initial)
    v0 = s.amplitudes.copy()
    if readouts is not None:
        n_steps = len(readouts) if n_steps is None else n_steps
    if n_steps is None:
        raise ValueError("give n_steps or a readout sequence")
    streams = TrajectoryStreams(seed, 0)
    hs = None if h_s is None else np.asarray(h_s, dtype=complex)
    states = [v0]
    rs = []
    collapsed = False
    for k in range(n_steps):
        r = float(readouts[k]) if readouts is not None else sample_readout(s, cfg, streams).r
        if control:
            s = freeze_feedback_step(s, hs, r, cfg)
        else:
            s = apply_measurement(s, r, cfg)
            if hs is not None:
                s = s.with_amplitudes(expm_hermitian(hs, cfg.dt) @ s.amplitudes)
        rs.append(r)
        states.append(s.amplitudes)
        if s.populations.max() > collapse_threshold:
            collapsed = True
    states = np.array(states)
    drift = np.linalg.norm(states - v0[None, :], axis=1)
    return FreezeRun(np.arange(n_steps + 1) * cfg.dt, states, np.array(rs), drift, collapsed)


@dataclass(frozen=True)
class MostProbablePathParams:
    """Boundary data for the most probable path of a σz-monitored qubit.

    H_s = (ε/2)σz - (Δ/2)σx; only Δ = 0 has a closed-form path.
    """

    x_I: float
    y_I: float
    z_I: float
    z_F: float
    T: float
    epsilon: float = 0.0
    tau: float = 1.0
    Delta: float = 0.0

    def __post_init__(self):
        if self.Delta != 0:
            raise ValueError("the closed-form path requires Delta = 0")
        if not abs(self.z_F) < 1:
            raise ValueError("need |z_F| < 1")
        if math.sqrt(self.x_I**2 + self.y_I**2 + self.z_I**2) > 1 + 1e-12:
            raise ValueError("initial Bloch vector must lie in the unit ball")
        if not (self.T > 0 and self.tau > 0):
            raise ValueError("T and tau must be positive")

    @property
    def r_bar(self) -> float:
        """r̄ = (τ/T) artanh[(z_I - z_F)/(z_I z_F - 1)]."""
        den = self.z_I * self.z_F - 1.0
        if abs(den) < TOL.degenerate_endpoint:
            raise DegenerateEndpoint("z_I z_F = 1")
        q = (self.z_I - self.z_F) / den
        if not abs(q) < 1:
            raise DegenerateEndpoint(f"artanh argument {q} is outside (-1, 1)")
        return self.tau / self.T * math.atanh(q)


def most_probable_path(params: MostProbablePathParams, t: float) -> np.ndarray:
    """Bloch components (x̄, ȳ, z̄) of the most probable path at time t.

    These are the standard components, ρ = (1 + x σx + y σy + z σz)/2.
    """
    if not -1e-12 <= t <= params.T * (1 + 1e-12):
        raise ValueError(f"t={t} outside [0, T]")
    p = params
    g = p.r_bar * t / p.tau
    ch, sh = math.cosh(g), math.sinh(g)
    den = ch + p.z_I * sh
    c, s = math.cos(p.epsilon * t), math.sin(p.epsilon * t)
    return np.array(
        [
            (p.x_I * c - p.y_I * s) / den,
            (p.y_I * c + p.x_I * s) / den,
            (p.z_I * ch + sh) / den,
        ]
    )


def bloch_density(v: Sequence[float]) -> np.ndarray:
    return 0.5 * (IDENTITY_2 + v[0] * SIGMA_X + v[1] * SIGMA_Y + v[2] * SIGMA_Z)


def path_density(params: MostProbablePathParams, t: float) -> np.ndarray:
    return bloch_density(most_probable_path(params, t))


@dataclass(frozen=True, eq=False)
class EffectiveHamiltonianSample:
    t: float
    H_eff: np.ndarray
    variance: float


def _is_worked_case(p: MostProbablePathParams) -> bool:
    return abs(p.x_I - 1) < 1e-12 and abs(p.y_I) < 1e-12 and abs(p.z_I) < 1e-12


def effective_hamiltonian_mpp(params: MostProbablePathParams, t: float) -> EffectiveHamiltonianSample:
    """Closed-form H_eff(t) for the path starting at x_I = 1, y_I = z_I = 0.

    With α = (t/T) artanh z_F and A = artanh z_F,

        H_00 = -H_11 = (ε/2) sech²α
        H_01 = (i e^{-iεt} / 2T)(A + iTε tanh α) sech α

    and variance (T²ε² + A²) sech²α / (4T²).
    """
    if not _is_worked_case(params):
        raise OutsideWorkedCase("closed form is only available for x_I=1, y_I=0, z_I=0")
    p = params
    big_a = math.atanh(p.z_F)
    alpha = t / p.T * big_a
    sech = 1.0 / math.cosh(alpha)
    th = math.tanh(alpha)
    eps = p.epsilon
    diag = 0.5 * eps * sech**2
    off = 1j * np.exp(-1j * t * eps) / (2 * p.T) * (big_a + 1j * p.T * eps * th) * sech
    h = np.array([[diag, off], [np.conj(off), -diag]], dtype=complex)
    var = (p.T**2 * eps**2 + big_a**2) * sech**2 / (4 * p.T**2)
    return EffectiveHamiltonianSample(t, h, var)


def rk4_density(
    h_of_t: Callable[[float], np.ndarray], rho0: np.ndarray, t_end: float, dt: float
) -> tuple[np.ndarray, np.ndarray]:
    """Classical RK4 for dρ/dt = -i[H(t), ρ] on a fixed step.

    Returns the times and the stacked density matrices, endpoints included.
    """
    n = int(round(t_end / dt))
    h = t_end / n

    def f(t, rho):
        hm = h_of_t(t)
        return -1j * (hm @ rho - rho @ hm)

    rho = np.array(rho0, dtype=complex)
    out = [rho]
    for k in range(n):
        t = k * h
        k1 = f(t, rho)
        k2 = f(t + h / 2, rho + h / 2 * k1)
        k3 = f(t + h / 2, rho + h / 2 * k2)
        k4 = f(t + h, rho + h * k3)
        rho = rho + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(rho)
    return np.arange(n + 1) * h, np.array(out)


@dataclass(frozen=True)
class CounterHamiltonianReport:
    stationary_distance: float
    tracking_error: float
    endpoint_bloch: tuple

    @property
    def endpoint_z(self) -> float:
        return self.endpoint_bloch[2]


def counter_hamiltonian_check(params: MostProbablePathParams, dt: float = 1e-4) -> CounterHamiltonianReport:
    """Propagate ρ̄(0) under H_eff - H_eff (should not move) and under H_eff alone.

    ``tracking_error`` is the largest trace distance between the RK4 path
    under H_eff and the closed-form most probable path.
    """
    rho0 = path_density(params, 0.0)

    def h_eff(t):
        return effective_hamiltonian_mpp(params, min(t, params.T)).H_eff

    def h_cancel(t):
        h = h_eff(t)
        return h + (-h)

    _, frozen = rk4_density(h_cancel, rho0, params.T, dt)
    stationary = max(trace_distance(r, rho0) for r in frozen)
    times, driven = rk4_density(h_eff, rho0, params.T, dt)
    tracking = max(trace_distance(r, path_density(params, min(t, params.T))) for t, r in zip(times, driven))
    end = driven[-1]
    bloch = tuple(float(np.real(np.trace(end @ s))) for s in (SIGMA_X, SIGMA_Y, SIGMA_Z))
    return CounterHamiltonianReport(stationary, tracking, bloch)
