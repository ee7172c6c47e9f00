import math

import numpy as np
import pytest

from collapse_lab.errors import AllWeightsVanish, GridTooNarrow
from collapse_lab.measurement import GaussianMeasurementConfig, PositionGridConfig, apply_measurement, sample_readout
from collapse_lab.qstate import random_state
from collapse_lab.rng import TrajectoryStreams
from collapse_lab.trajectory import (
    MixedEnsemble,
    OscillatorRunConfig,
    bayesian_mixed_update,
    coarsen_readouts,
    dual_axis_trajectory,
    oscillator_trajectory,
    replay_consistency,
    run_ensemble,
    run_mixed_trajectory,
    run_trajectory,
)

QUBIT = GaussianMeasurementConfig(0.2, 1e-3, [1.0, -1.0])


class TestStreams:
    def test_block_equals_single(self):
        a, b = TrajectoryStreams(3, 7), TrajectoryStreams(3, 7)
        singles = [a.draw() for _ in range(50)]
        u, z = b.draw_block(50)
        assert np.array_equal([s[0] for s in singles], u)
        assert np.array_equal([s[1] for s in singles], z)

    def test_substreams_differ(self):
        assert TrajectoryStreams(1, 0).draw() != TrajectoryStreams(1, 1).draw()
        assert TrajectoryStreams(1, 0).draw() != TrajectoryStreams(2, 0).draw()

    def test_aux_independent_of_main(self):
        a = TrajectoryStreams(9)
        first = a.draw()
        b = TrajectoryStreams(9)
        b.draw_aux_block(10)
        assert b.draw() == first

    def test_negative_seed(self):
        with pytest.raises(ValueError):
            TrajectoryStreams(-1)


def test_eigenstate_collapses_at_first_step():
    rec = run_trajectory([0, 1], QUBIT, seed=1)
    assert rec.outcome == 1
    assert len(rec.samples) == 2
    assert rec.collapse_time == pytest.approx(QUBIT.dt)
    assert np.array_equal(rec.populations[0], rec.populations[-1])


def test_same_seed_identical():
    psi = [math.sqrt(0.3), math.sqrt(0.7)]
    a, b = run_trajectory(psi, QUBIT, 42), run_trajectory(psi, QUBIT, 42)
    assert np.array_equal(a.amplitudes, b.amplitudes)
    assert [r.r for r in a.readouts] == [r.r for r in b.readouts]
    c = run_trajectory(psi, QUBIT, 43)
    assert len(c.samples) != len(a.samples) or not np.array_equal(c.amplitudes, a.amplitudes)


def test_engine_matches_plain_loop():
    cfg = GaussianMeasurementConfig(0.5, 1e-3, [1.0, 0.2, -1.0])
    psi = random_state(3, np.random.default_rng(0))
    rec = run_trajectory(psi, cfg, seed=11, index=4, t_max=1.5)
    streams = TrajectoryStreams(11, 4)
    s = psi
    for k, ro in enumerate(rec.readouts):
        r = sample_readout(s, cfg, streams)
        assert r.r == ro.r
        s = apply_measurement(s, r, cfg)
        assert np.allclose(s.amplitudes, rec.samples[k + 1].state.amplitudes, atol=1e-12)


def test_norm_preserved_every_step():
    rec = run_trajectory(random_state(4, np.random.default_rng(1)), GaussianMeasurementConfig(0.3, 1e-3, [0, 1, 2, 3]), 5)
    norms = np.linalg.norm(rec.amplitudes, axis=1)
    assert np.abs(norms - 1).max() < 1e-12


def test_fixed_readouts():
    rec = run_trajectory([0.6, 0.8], QUBIT, 0, readouts=[0.5, -0.2, 3.0])
    assert [r.r for r in rec.readouts] == [0.5, -0.2, 3.0]
    s = np.array([0.6, 0.8])
    for r in (0.5, -0.2, 3.0):
        s = apply_measurement(s, r, QUBIT).amplitudes
    assert np.allclose(rec.samples[-1].state.amplitudes, s)


class TestEnsemble:
    def test_single_run(self):
        stats = run_ensemble([0.6, 0.8], QUBIT, 1, 3)
        rec = run_trajectory([0.6, 0.8], QUBIT, 3)
        assert stats.n_trajectories == 1
        assert set(stats.frequencies) <= {0.0, 1.0}
        assert stats.outcomes[0] == rec.outcome
        assert stats.collapse_times[0] == pytest.approx(rec.collapse_time)

    def test_eigenstate(self):
        stats = run_ensemble([0, 0, 1], GaussianMeasurementConfig(0.2, 1e-3, [1, 0, -1]), 20, 0)
        assert list(stats.outcome_counts) == [0, 0, 20]

    def test_worker_count_invariance(self):
        cfg = GaussianMeasurementConfig(0.2, 1e-3, [1, -1])
        a = run_ensemble([0.6, 0.8], cfg, 30, 8, workers=1)
        b = run_ensemble([0.6, 0.8], cfg, 30, 8, workers=7)
        assert np.array_equal(a.mean_population_series, b.mean_population_series)
        assert np.array_equal(a.outcomes, b.outcomes)

    def test_martingale_equal_superposition(self):
        stats = run_ensemble(np.array([1, 1]) / math.sqrt(2), QUBIT, 4000, 17)
        assert np.abs(stats.mean_population_series[:, 0] - 0.5).max() < 0.025
        assert stats.frequencies.sum() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("n", [3, 5])
    def test_born_rule_n_levels(self, n):
        rng = np.random.default_rng(n)
        psi = random_state(n, rng)
        runs = 1500
        stats = run_ensemble(psi, GaussianMeasurementConfig(0.2, 2e-3, 2.0 * np.arange(n)), runs, 100 + n)
        assert stats.n_collapsed == runs
        p = psi.populations
        band = 3 * np.sqrt(p * (1 - p) / runs)
        assert np.all(np.abs(stats.frequencies - p) <= band)


class TestReplay:
    def test_eigenstate_has_no_defect(self):
        rec = run_trajectory([1, 0], QUBIT, 0, collapse_threshold=2.0, readouts=np.linspace(-1, 1, 20))
        rep = replay_consistency(rec)
        assert rep.max_infidelity == 0.0

    def test_second_order_for_smooth_readouts(self):
        defects = []
        for dt in (1e-3, 5e-4, 2.5e-4):
            cfg = GaussianMeasurementConfig(1.0, dt, [1.0, -1.0])
            n = int(round(0.5 / dt))
            rs = np.cos(np.arange(n) * dt * 3.0)
            defects.append(replay_consistency(run_trajectory([0.6, 0.8j], cfg, 0, readouts=rs)).max_defect)
        assert defects[0] / defects[1] == pytest.approx(4, rel=0.1)
        assert defects[1] / defects[2] == pytest.approx(4, rel=0.1)

    def test_coarsened_record_reproduces_even_states(self):
        fine_cfg = GaussianMeasurementConfig(0.5, 5e-4, [1.0, 0.0, -1.0])
        psi = random_state(3, np.random.default_rng(2))
        fine = run_trajectory(psi, fine_cfg, 3, t_max=0.4)
        rs = [r.r for r in fine.readouts]
        coarse = run_trajectory(psi, fine_cfg.replace(dt=1e-3), 0, readouts=coarsen_readouts(rs))
        assert np.allclose(coarse.amplitudes, fine.amplitudes[: 2 * len(coarse.readouts) + 1 : 2], atol=1e-12)

    def test_lazy_reconstruction_cached(self):
        rec = run_trajectory([0.6, 0.8], QUBIT, 1, t_max=0.05)
        first = rec.reconstruct()
        assert rec.reconstruct() is first
        assert len(first) == len(rec.samples)


class TestOscillator:
    grid = PositionGridConfig.centered(0.0, 10 * math.sqrt(0.5), 512)

    def test_variance_at_t1(self):
        run = oscillator_trajectory(OscillatorRunConfig(self.grid, 0.0, 1.0, 1e-3, 1.0, seed=2))
        assert run.variance[0] == pytest.approx(0.5, rel=1e-9)
        assert run.variance[-1] == pytest.approx(1 / 3, rel=0.01)
        assert np.abs(run.excess_kurtosis).max() < 0.01

    def test_drift_to_edge_raises(self):
        tight = PositionGridConfig.centered(0.0, 6.6 * math.sqrt(0.5), 128)
        with pytest.raises(GridTooNarrow):
            for seed in range(20):
                oscillator_trajectory(OscillatorRunConfig(tight, 0.0, 0.5, 1e-3, 2.0, seed=seed))

    def test_step_too_large(self):
        with pytest.raises(ValueError):
            OscillatorRunConfig(self.grid, 0.0, 1.0, 0.5, 1.0)


class TestDualAxis:
    z = GaussianMeasurementConfig(1.0, 1e-3, [1.0, -1.0])

    def test_x_off_matches_single_axis(self):
        psi = [0.6, 0.8]
        rec = run_trajectory(psi, self.z, 5, t_max=1.0)
        for off in (None, self.z.replace(tau=math.inf)):
            dual = dual_axis_trajectory(psi, self.z, off, 5, 1.0)
            m = len(rec.samples)
            assert np.allclose(dual.amplitudes[:m], rec.amplitudes, atol=1e-12)
            assert dual.aux_readouts is None

    def test_escape_from_eigenstate(self):
        escaped = 0
        for seed in range(1000):
            rec = dual_axis_trajectory([1, 0], self.z, self.z, seed, 0.1)
            escaped += rec.populations[:, 0].min() < 1 - 1e-3
        assert escaped >= 990

    def test_readout_spread_exceeds_single_axis(self):
        # Variance of windowed z-readout means.  The reference run keeps the
        # same dt/2 z-substeps with a negligible x-measurement, so both runs
        # share the same readout noise floor (τ/(dt/2)/w = 2 here).
        z = GaussianMeasurementConfig(1.0, 1e-2, [1.0, -1.0])
        w = 100

        def spread(rec):
            r = np.array([x.r for x in rec.readouts])
            return r[: r.size // w * w].reshape(-1, w).mean(axis=1).var()

        single = dual_axis_trajectory([1, 0], z, z.replace(tau=1e15), 0, 100.0)
        dual = dual_axis_trajectory([1, 0], z, z, 0, 100.0)
        assert spread(dual) > spread(single)

    def test_rejects_qutrit(self):
        with pytest.raises(ValueError):
            dual_axis_trajectory([1, 0, 0], self.z, self.z, 0, 0.1)


class TestMixed:
    def test_bayes_example(self):
        with pytest.warns(UserWarning):
            cfg = GaussianMeasurementConfig(1.0, 1.0, [1.0, -1.0])
        ens = MixedEnsemble.prepare([0.5, 0.5], [[1, 0], [0, 1]])
        out = bayesian_mixed_update(ens, 1.0, cfg)
        assert out.weights[0] == pytest.approx(1 / (1 + math.exp(-2)), rel=1e-12)

    def test_single_member(self):
        cfg = GaussianMeasurementConfig(1.0, 1e-2, [1.0, -1.0])
        ens = MixedEnsemble.prepare([1.0], [np.array([0.6, 0.8])])
        out = bayesian_mixed_update(ens, 0.7, cfg)
        assert out.weights[0] == 1.0
        assert np.allclose(out.states[0].amplitudes, apply_measurement([0.6, 0.8], 0.7, cfg).amplitudes)

    def test_orthonormal_required(self):
        with pytest.raises(ValueError):
            MixedEnsemble.prepare([0.5, 0.5], [[1, 0], [0.6, 0.8]])

    def test_all_weights_vanish(self):
        cfg = GaussianMeasurementConfig(1e-4, 1e-5, [1.0, -1.0])
        ens = MixedEnsemble.prepare([0.5, 0.5], [[1, 0], [0, 1]])
        with pytest.raises(AllWeightsVanish):
            bayesian_mixed_update(ens, 1e6, cfg)

    def test_density_matrix(self):
        ens = MixedEnsemble.prepare([0.25, 0.75], [[1, 0], [0, 1]])
        assert np.allclose(ens.density_matrix(), np.diag([0.25, 0.75]))

    def test_purification_census(self):
        cfg = GaussianMeasurementConfig(0.2, 1e-2, [1.0, 0.0, -1.0])
        p0 = np.array([0.2, 0.5, 0.3])
        basis = np.eye(3)
        wins = np.zeros(3)
        runs = 600
        for seed in range(runs):
            run = run_mixed_trajectory(MixedEnsemble.prepare(p0, list(basis)), cfg, seed, 30.0)
            assert run.final.weights.max() > 1 - 1e-6
            assert run.winner == run.true_index
            wins[run.winner] += 1
        band = 3 * np.sqrt(p0 * (1 - p0) / runs)
        assert np.all(np.abs(wins / runs - p0) <= band)
