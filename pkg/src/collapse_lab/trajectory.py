"""Stochastic collapse trajectories and ensembles.

Single trajectories and ensembles share one vectorized stepping engine.
Every trajectory draws from its own :class:`~collapse_lab.rng.TrajectoryStreams`
keyed by ``(base_seed, index)``, and per-trajectory arithmetic is
elementwise, so a trajectory's record does not depend on which batch or
worker thread produced it.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._tolerances import TOL
from .errors import AllWeightsVanish, GridTooNarrow
from .measurement import (
    GaussianMeasurementConfig,
    PositionGridConfig,
    Readout,
    apply_measurement,
    gaussian_tail_mass,
    ground_state,
    pointer_values,
    sample_readout,
    select_index,
)
from .qstate import (
    BasisKind,
    QuantumState,
    StateLike,
    as_state,
    as_vector,
    expm_hermitian,
    normalize,
)
from .reconstruction import (
    ReconstructionResult,
    TrajectorySample,
    project_tangent,
    reconstruct_hamiltonian,
    time_derivative,
)
from .rng import TrajectoryStreams

_BLOCK = 1024
_MAX_SERIES_POINTS = 1000
HADAMARD = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=complex) / math.sqrt(2.0)


def default_t_max(cfg: GaussianMeasurementConfig) -> float:
    return 50.0 * cfg.tau


def worker_count() -> int:
    raw = os.environ.get("COLLAPSE_LAB_THREADS")
    if raw:
        return max(1, int(raw))
    return max(1, min(4, os.cpu_count() or 1))


@dataclass(eq=False)
class TrajectoryRecord:
    """Time series of states and the readouts that produced them.

    ``readouts[k]`` is the readout applied between ``samples[k]`` and
    ``samples[k + 1]``.
    """

    seed: int
    samples: list[TrajectorySample]
    readouts: list[Readout]
    outcome: int | None = None
    index: int = 0
    collapse_time: float | None = None
    config: dict = field(default_factory=dict)
    reconstructions: list[ReconstructionResult] | None = None
    aux_readouts: list[Readout] | None = None

    def __post_init__(self):
        if self.samples and len(self.readouts) != len(self.samples) - 1:
            raise ValueError("need exactly one readout per step")

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([s.state.amplitudes for s in self.samples])

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def reconstruct(self) -> list[ReconstructionResult]:
        """Reconstruct H at every sample (computed once, then cached)."""
        if self.reconstructions is None:
            out = []
            if len(self.samples) >= 3:
                for k, s in enumerate(self.samples):
                    d = project_tangent(s.state, time_derivative(self.samples, k))
                    out.append(reconstruct_hamiltonian(s.state, d))
            self.reconstructions = out
        return self.reconstructions


@dataclass(eq=False)
class EnsembleStats:
    n_trajectories: int
    outcome_counts: np.ndarray
    times: np.ndarray
    mean_population_series: np.ndarray
    mean_collapse_time: float
    outcomes: np.ndarray
    collapse_times: np.ndarray
    base_seed: int = 0
    config: dict = field(default_factory=dict)

    @property
    def n_collapsed(self) -> int:
        return int(self.outcome_counts.sum())

    @property
    def frequencies(self) -> np.ndarray:
        c = self.n_collapsed
        return self.outcome_counts / c if c else np.zeros_like(self.outcome_counts, dtype=float)


@dataclass
class _BatchResult:
    outcome: np.ndarray
    collapse_time: np.ndarray
    series: np.ndarray  # (B, T, n) populations at the stride points
    states: list | None = None
    readouts: list | None = None


def _series_stride(max_steps: int) -> int:
    return max(1, math.ceil(max_steps / _MAX_SERIES_POINTS))


def _simulate_batch(
    amps0: np.ndarray,
    cfg: GaussianMeasurementConfig,
    streams: Sequence[TrajectoryStreams],
    max_steps: int,
    threshold: float,
    *,
    record: bool = False,
    fixed_readouts: Sequence[float] | None = None,
    stride: int = 1,
) -> _BatchResult:
    a = np.array(amps0, dtype=complex)
    b, n = a.shape
    lam = np.asarray(cfg.eigenvalues, dtype=float)
    s = cfg.dt / (4.0 * cfg.tau)
    std = cfg.noise_std
    done = np.zeros(b, dtype=bool)
    outcome = np.full(b, -1)
    t_col = np.full(b, np.nan)
    series = [np.abs(a) ** 2]
    states = [a.copy()] if record else None
    readouts = [] if record else None
    u_blk = z_blk = None
    p = np.abs(a) ** 2
    steps = 0
    for k in range(max_steps):
        if done.all():
            break
        steps = k + 1
        j = k % _BLOCK
        if fixed_readouts is None:
            if j == 0:
                blocks = [st.draw_block(_BLOCK) for st in streams]
                u_blk = np.array([x[0] for x in blocks])
                z_blk = np.array([x[1] for x in blocks])
            p = np.abs(a) ** 2
            acc = np.zeros(b)
            cum = []
            for c in range(n):
                acc = acc + p[:, c]
                cum.append(acc)
            target = u_blk[:, j] * acc
            idx = np.zeros(b, dtype=int)
            for c in range(n - 1):
                idx += cum[c] <= target
            r = lam[idx] + std * z_blk[:, j]
        else:
            r = np.full(b, float(fixed_readouts[k]))
        expo = -s * (r[:, None] - lam[None, :]) ** 2
        top = np.where(np.abs(a) > 0, expo, -np.inf).max(axis=1)
        new = np.exp(expo - top[:, None]) * a
        nrm2 = np.zeros(b)
        for c in range(n):
            nrm2 = nrm2 + (new[:, c].real ** 2 + new[:, c].imag ** 2)
        new = new / np.sqrt(nrm2)[:, None]
        active = ~done
        a = np.where(active[:, None], new, a)
        p = np.abs(a) ** 2
        hit = active & (p.max(axis=1) > threshold)
        outcome[hit] = p[hit].argmax(axis=1)
        t_col[hit] = (k + 1) * cfg.dt
        done |= hit
        if record:
            states.append(a.copy())
            readouts.append(r.copy())
        if (k + 1) % stride == 0:
            series.append(p)
    if steps < max_steps and steps % stride:
        # every trajectory is frozen from here on, so this is the next stride point
        series.append(p)
    return _BatchResult(outcome, t_col, np.stack(series, axis=1), states, readouts)


def run_trajectory(
    initial: StateLike,
    cfg: GaussianMeasurementConfig,
    seed: int,
    t_max: float | None = None,
    collapse_threshold: float = TOL.collapse_threshold,
    *,
    index: int = 0,
    readouts: Sequence[float] | None = None,
) -> TrajectoryRecord:
    """Repeated weak measurement until collapse or ``t_max``.

    With ``readouts`` given, that sequence is applied instead of sampling
    (one step per entry); otherwise readouts are drawn from the stream
    ``(seed, index)``.
    """
    init = normalize(initial)
    pointer_values(init, cfg)
    if readouts is not None:
        max_steps = len(readouts)
    else:
        max_steps = int(round((default_t_max(cfg) if t_max is None else t_max) / cfg.dt))
    res = _simulate_batch(
        init.amplitudes[None, :],
        cfg,
        [TrajectoryStreams(seed, index)],
        max_steps,
        collapse_threshold,
        record=True,
        fixed_readouts=readouts,
    )
    rs = [Readout(float(r[0]), k * cfg.dt) for k, r in enumerate(res.readouts)]
    samples = [TrajectorySample(0.0, init.with_amplitudes(res.states[0][0]))]
    for k, ro in enumerate(rs):
        samples.append(TrajectorySample((k + 1) * cfg.dt, init.with_amplitudes(res.states[k + 1][0]), ro))
    oc = int(res.outcome[0])
    return TrajectoryRecord(
        seed=seed,
        index=index,
        samples=samples,
        readouts=rs,
        outcome=None if oc < 0 else oc,
        collapse_time=None if oc < 0 else float(res.collapse_time[0]),
        config=_cfg_echo(cfg, init, t_max=t_max, collapse_threshold=collapse_threshold),
    )


def _cfg_echo(cfg: GaussianMeasurementConfig, init: QuantumState, **extra) -> dict:
    out = {
        "tau": cfg.tau,
        "dt": cfg.dt,
        "eigenvalues": None if cfg.eigenvalues is None else [float(x) for x in cfg.eigenvalues],
        "initial_re": [float(x) for x in init.amplitudes.real],
        "initial_im": [float(x) for x in init.amplitudes.imag],
    }
    out.update(extra)
    return out


def run_ensemble(
    initial: StateLike,
    cfg: GaussianMeasurementConfig,
    n: int,
    base_seed: int,
    t_max: float | None = None,
    collapse_threshold: float = TOL.collapse_threshold,
    *,
    workers: int | None = None,
) -> EnsembleStats:
    """Run ``n`` trajectories on substreams ``(base_seed, 0..n-1)``.

    The result is identical for any ``workers`` value.
    """
    if n < 1:
        raise ValueError("need at least one trajectory")
    init = normalize(initial)
    pointer_values(init, cfg)
    t_max = default_t_max(cfg) if t_max is None else t_max
    max_steps = int(round(t_max / cfg.dt))
    stride = _series_stride(max_steps)
    workers = worker_count() if workers is None else max(1, workers)
    bounds = np.linspace(0, n, min(workers, n) + 1).astype(int)

    def job(lo: int, hi: int) -> _BatchResult:
        streams = [TrajectoryStreams(base_seed, i) for i in range(lo, hi)]
        amps = np.repeat(init.amplitudes[None, :], hi - lo, axis=0)
        return _simulate_batch(amps, cfg, streams, max_steps, collapse_threshold, stride=stride)

    chunks = list(zip(bounds[:-1], bounds[1:]))
    if len(chunks) == 1:
        results = [job(*chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(pool.map(lambda c: job(*c), chunks))

    length = max(r.series.shape[1] for r in results)
    padded = []
    for r in results:
        s = r.series
        if s.shape[1] < length:
            # finished trajectories are frozen, so repeating the last point is exact
            s = np.concatenate([s, np.repeat(s[:, -1:, :], length - s.shape[1], axis=1)], axis=1)
        padded.append(s)
    series = np.concatenate(padded, axis=0)
    outcomes = np.concatenate([r.outcome for r in results])
    ctimes = np.concatenate([r.collapse_time for r in results])
    counts = np.bincount(outcomes[outcomes >= 0], minlength=init.dim)
    collapsed = ctimes[outcomes >= 0]
    times = np.arange(length) * stride * cfg.dt
    return EnsembleStats(
        n_trajectories=n,
        outcome_counts=counts,
        times=times,
        mean_population_series=series.mean(axis=0),
        mean_collapse_time=float(collapsed.mean()) if collapsed.size else math.nan,
        outcomes=outcomes,
        collapse_times=ctimes,
        base_seed=base_seed,
        config=_cfg_echo(cfg, init, t_max=t_max, collapse_threshold=collapse_threshold, n_trajectories=n),
    )


@dataclass(frozen=True)
class ReplayReport:
    defects: np.ndarray
    infidelities: np.ndarray

    @property
    def max_defect(self) -> float:
        return float(self.defects.max()) if self.defects.size else 0.0

    @property
    def max_infidelity(self) -> float:
        return float(self.infidelities.max()) if self.infidelities.size else 0.0


def replay_consistency(record: TrajectoryRecord) -> ReplayReport:
    """Propagate each interior sample with exp(-iHδt) and compare to the next.

    H comes from :meth:`TrajectoryRecord.reconstruct`.  For a smooth
    readout sequence the per-step defect is O(δt²).
    """
    if len(record.samples) < 3:
        raise ValueError("need at least three samples")
    recon = record.reconstruct()
    defects, infid = [], []
    for k in range(1, len(record.samples) - 1):
        s0, s1 = record.samples[k], record.samples[k + 1]
        v1 = as_vector(s1.state)
        pred = expm_hermitian(recon[k].H, s1.t - s0.t) @ as_vector(s0.state)
        defects.append(np.linalg.norm(pred - v1))
        infid.append(1.0 - abs(np.vdot(pred, v1)) ** 2)
    return ReplayReport(np.array(defects), np.maximum(np.array(infid), 0.0))


def coarsen_readouts(readouts: Sequence[float]) -> np.ndarray:
    """Pairwise means of a readout record.

    Two Gaussian steps of length δt with readouts r1, r2 act on the state
    exactly like one step of length 2δt with readout (r1 + r2)/2, so the
    coarse record reproduces every second fine state.
    """
    r = np.asarray(readouts, dtype=float)
    m = r.size // 2 * 2
    return 0.5 * (r[0:m:2] + r[1:m:2])


@dataclass(frozen=True, eq=False)
class OscillatorRunConfig:
    grid: PositionGridConfig
    x0: float
    tau: float
    dt: float
    t_max: float
    seed: int = 0

    def __post_init__(self):
        if not (self.tau > 0 and self.dt > 0 and self.t_max > 0):
            raise ValueError("tau, dt and t_max must be positive")
        if self.dt * self.grid.ground_variance / self.tau > 0.1:
            raise ValueError("dt·ΔX²/τ must be small for a stable grid update")


@dataclass(eq=False)
class OscillatorRun:
    record: TrajectoryRecord
    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    excess_kurtosis: np.ndarray


def grid_moments(state: QuantumState) -> tuple[float, float, float]:
    """Mean, variance and excess kurtosis of |ψ(x)|² on the grid."""
    x = state.grid.points
    p = state.populations
    p = p / p.sum()
    mean = float(p @ x)
    d = x - mean
    var = float(p @ d**2)
    kurt = float(p @ d**4) / var**2 - 3.0
    return mean, var, kurt


def oscillator_trajectory(cfg: OscillatorRunConfig) -> OscillatorRun:
    """Repeated weak position measurement of the oscillator ground state."""
    grid = cfg.grid
    state = ground_state(grid, cfg.x0)
    mcfg = GaussianMeasurementConfig(cfg.tau, cfg.dt)
    streams = TrajectoryStreams(cfg.seed, 0)
    n_steps = int(round(cfg.t_max / cfg.dt))
    samples = [TrajectorySample(0.0, state)]
    readouts = []
    moments = [grid_moments(state)]
    for k in range(n_steps):
        ro = sample_readout(state, mcfg, streams, t=k * cfg.dt)
        state = apply_measurement(state, ro, mcfg)
        mean, var, kurt = grid_moments(state)
        if gaussian_tail_mass(grid, mean, var) > TOL.gaussian_tail_mass:
            raise GridTooNarrow(f"posterior drifted to the grid edge at t={(k + 1) * cfg.dt:.4g}")
        readouts.append(ro)
        samples.append(TrajectorySample((k + 1) * cfg.dt, state, ro))
        moments.append((mean, var, kurt))
    m = np.array(moments)
    record = TrajectoryRecord(
        seed=cfg.seed,
        samples=samples,
        readouts=readouts,
        config={
            "tau": cfg.tau,
            "dt": cfg.dt,
            "t_max": cfg.t_max,
            "x0": cfg.x0,
            "grid": {"x_min": grid.x_min, "dx": grid.dx, "n_points": grid.n_points, "mass": grid.mass, "omega": grid.omega},
        },
    )
    return OscillatorRun(record, record.times, m[:, 0], m[:, 1], m[:, 2])


def _measure_in_basis(amps, rotation, cfg, u, z):
    """One Gaussian step in the basis defined by the unitary ``rotation``."""
    local = rotation @ amps
    p = np.abs(local) ** 2
    i = select_index(p, u)
    r = float(cfg.eigenvalues[i] + cfg.noise_std * z)
    local = as_vector(apply_measurement(local, r, cfg))
    return rotation.conj().T @ local, r


def dual_axis_trajectory(
    initial: StateLike,
    cfg_z: GaussianMeasurementConfig,
    cfg_x: GaussianMeasurementConfig | None,
    seed: int,
    t_max: float,
    *,
    index: int = 0,
) -> TrajectoryRecord:
    """Alternate σz and σx measurements on a qubit.

    Each step of length ``cfg_z.dt`` is a z-measurement of duration dt/2
    followed by an x-measurement of duration dt/2 (x pointer values are
    taken in the Hadamard-rotated basis).  With ``cfg_x`` None or of zero
    strength (tau = inf) this reduces to :func:`run_trajectory` with the
    same seed and no collapse stop.
    """
    init = normalize(initial)
    if init.dim != 2:
        raise ValueError("dual-axis measurement is defined for qubits")
    streams = TrajectoryStreams(seed, index)
    x_on = cfg_x is not None and not cfg_x.is_off
    dt = cfg_z.dt
    z_cfg = cfg_z.replace(dt=dt / 2) if x_on else cfg_z
    x_cfg = cfg_x.replace(dt=dt / 2) if x_on else None
    ident = np.eye(2, dtype=complex)
    amps = init.amplitudes.copy()
    n_steps = int(round(t_max / dt))
    samples = [TrajectorySample(0.0, init)]
    zr, xr = [], []
    for k in range(n_steps):
        u, z = streams.draw()
        amps, r = _measure_in_basis(amps, ident, z_cfg, u, z)
        zr.append(Readout(r, k * dt))
        if x_on:
            u, z = streams.draw_aux()
            amps, r = _measure_in_basis(amps, HADAMARD, x_cfg, u, z)
            xr.append(Readout(r, (k + 0.5) * dt))
        samples.append(TrajectorySample((k + 1) * dt, init.with_amplitudes(amps), zr[-1]))
    return TrajectoryRecord(
        seed=seed,
        index=index,
        samples=samples,
        readouts=zr,
        aux_readouts=xr if x_on else None,
        config={
            "tau_z": cfg_z.tau,
            "tau_x": None if not x_on else cfg_x.tau,
            "dt": dt,
            "t_max": t_max,
        },
    )


@dataclass(frozen=True, eq=False)
class MixedEnsemble:
    """Observer's classical mixture {p_i, ψ_i} over pure states."""

    weights: np.ndarray
    states: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        if abs(w.sum() - 1.0) > TOL.norm:
            raise ValueError(f"weights sum to {w.sum()}")
        if len(self.states) != w.size:
            raise ValueError("one state per weight")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "states", tuple(as_state(s) for s in self.states))

    @classmethod
    def prepare(cls, weights, states) -> "MixedEnsemble":
        """Build a t=0 ensemble; member states must be orthonormal."""
        vs = np.array([as_vector(s) for s in states])
        gram = vs.conj() @ vs.T
        if np.max(np.abs(gram - np.eye(len(vs)))) > 1e-10:
            raise ValueError("initial member states must be orthonormal")
        return cls(np.asarray(weights, dtype=float), tuple(states))

    def density_matrix(self) -> np.ndarray:
        vs = np.array([as_vector(s) for s in self.states])
        return np.einsum("i,ij,ik->jk", self.weights, vs, vs.conj())


def _log_likelihood(state: QuantumState, r: float, cfg: GaussianMeasurementConfig) -> float:
    lam = pointer_values(state, cfg)
    var = cfg.tau / cfg.dt
    p = state.populations
    logs = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)) - (r - lam) ** 2 / (2 * var), -np.inf)
    top = logs.max()
    return float(top + np.log(np.exp(logs - top).sum()) - 0.5 * math.log(2 * math.pi * var))


def bayesian_mixed_update(ensemble: MixedEnsemble, r: Readout | float, cfg: GaussianMeasurementConfig) -> MixedEnsemble:
    """Update every member with the shared readout and reweight by P(r | ψ_i)."""
    rv = r.r if isinstance(r, Readout) else float(r)
    logl = np.array([_log_likelihood(s, rv, cfg) for s in ensemble.states])
    with np.errstate(divide="ignore"):
        logw = np.log(ensemble.weights) + logl
    top = logw.max()
    if not np.isfinite(top) or top + np.log(np.exp(logw - top).sum()) < math.log(1e-300):
        raise AllWeightsVanish(f"total likelihood of readout {rv} underflows")
    w = np.exp(logw - top)
    w = w / w.sum()
    states = tuple(apply_measurement(s, rv, cfg) for s in ensemble.states)
    return MixedEnsemble(w, states)


@dataclass(eq=False)
class MixedRun:
    true_index: int
    times: np.ndarray
    weight_series: np.ndarray
    readouts: list
    final: MixedEnsemble

    @property
    def winner(self) -> int:
        return int(np.argmax(self.final.weights))


def run_mixed_trajectory(
    ensemble: MixedEnsemble,
    cfg: GaussianMeasurementConfig,
    seed: int,
    t_max: float,
    *,
    index: int = 0,
    purity_threshold: float = TOL.collapse_threshold,
) -> MixedRun:
    """Pick the true member by p_i(0), measure it, and track the observer's weights."""
    streams = TrajectoryStreams(seed, index)
    true_index = select_index(ensemble.weights, float(streams.select.random()))
    true_state = ensemble.states[true_index]
    n_steps = int(round(t_max / cfg.dt))
    weights = [ensemble.weights]
    readouts = []
    for k in range(n_steps):
        ro = sample_readout(true_state, cfg, streams, t=k * cfg.dt)
        true_state = apply_measurement(true_state, ro, cfg)
        ensemble = bayesian_mixed_update(ensemble, ro, cfg)
        weights.append(ensemble.weights)
        readouts.append(ro)
        if ensemble.weights.max() > purity_threshold:
            break
    times = np.arange(len(weights)) * cfg.dt
    return MixedRun(true_index, times, np.array(weights), readouts, ensemble)
