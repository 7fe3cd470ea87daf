import math

import numpy as np
import pytest

from spintomo.dynamics import (
    ControlParams,
    ControlWaveforms,
    InhomogeneityModel,
    ensemble_observables,
    evolve_observables,
    hamiltonian_at,
    informational_completeness,
    propagator_step,
    random_waveforms,
)
from spintomo.records import truncate_series
from spintomo.spin_system import SpinSpace, angular_momentum_ops, embed_block, probe_observable

from conftest import random_hermitian

TWO_PI = 2 * math.pi


class TestWaveforms:
    def test_step_counts(self):
        wf = random_waveforms(30.0, 0)
        assert len(wf.phi_x) == 2
        assert len(wf.phi_y) == 2
        assert len(wf.phi_uw) == 3

    def test_full_duration_counts(self):
        wf = random_waveforms(3000.0, 7)
        assert len(wf.phi_x) == 200
        assert len(wf.phi_uw) == 300

    def test_determinism(self):
        a = random_waveforms(500.0, 42)
        b = random_waveforms(500.0, 42)
        assert np.array_equal(a.phi_x, b.phi_x)
        assert np.array_equal(a.phi_y, b.phi_y)
        assert np.array_equal(a.phi_uw, b.phi_uw)

    def test_phase_range_and_uniformity(self):
        wf = random_waveforms(75_000.0, 3)  # 5000 rf steps per axis
        phases = np.concatenate([wf.phi_x, wf.phi_y, wf.phi_uw])
        assert phases.min() >= 0 and phases.max() < TWO_PI
        n = len(phases)
        sd_mean = TWO_PI / np.sqrt(12 * n)
        assert abs(phases.mean() - math.pi) < 3 * sd_mean

    def test_rejects_bad_duration(self):
        with pytest.raises(ValueError):
            random_waveforms(0.0, 1)

    def test_rejects_wrong_lengths(self):
        with pytest.raises(ValueError):
            ControlWaveforms(30.0, np.zeros(3), np.zeros(2), np.zeros(3))

    def test_rejects_out_of_range_phase(self):
        with pytest.raises(ValueError):
            ControlWaveforms(30.0, np.full(2, 7.0), np.zeros(2), np.zeros(3))


class TestHamiltonian:
    def test_zero_drive_is_zero(self):
        wf = random_waveforms(100.0, 1)
        params = ControlParams(omega_rf=0.0, omega_uw=0.0)
        h = hamiltonian_at(wf, params, 50.0)
        assert np.abs(h).max() == 0.0

    def test_hermitian(self):
        wf = random_waveforms(100.0, 2)
        h = hamiltonian_at(wf, ControlParams(), 42.0)
        assert np.abs(h - h.conj().T).max() < 1e-12 * np.abs(h).max()

    def test_uw_two_level_algebra(self, space):
        wf = random_waveforms(100.0, 3)
        omega = TWO_PI * 30e3
        params = ControlParams(omega_rf=0.0, omega_uw=omega)
        h = hamiltonian_at(wf, params, 0.0)
        idx = [space.index_of(3, 3), space.index_of(4, 4)]
        h2 = (h @ h)[np.ix_(idx, idx)]
        assert np.abs(h2 - (omega / 2) ** 2 * np.eye(2)).max() < 1e-6 * (omega / 2) ** 2
        # everything else untouched by the microwave coupling
        rest = np.delete(np.delete(h, idx, axis=0), idx, axis=1)
        assert np.abs(rest).max() == 0.0

    def test_detuning_terms(self, space):
        wf = random_waveforms(100.0, 4)
        params = ControlParams(omega_rf=0.0, omega_uw=0.0, detuning_rf=100.0, detuning_uw=40.0)
        h = hamiltonian_at(wf, params, 0.0)
        _, _, fz3 = angular_momentum_ops(3)
        _, _, fz4 = angular_momentum_ops(4)
        expect = 100.0 * (embed_block(fz4, space, 4) - embed_block(fz3, space, 3))
        i33, i44 = space.index_of(3, 3), space.index_of(4, 4)
        expect[i44, i44] += 20.0
        expect[i33, i33] -= 20.0
        assert np.abs(h - expect).max() < 1e-12 * np.abs(expect).max()

    def test_phase_step_boundaries(self):
        wf = random_waveforms(100.0, 5)
        a = hamiltonian_at(wf, ControlParams(), 14.999)
        b = hamiltonian_at(wf, ControlParams(), 15.0)
        assert np.abs(a - b).max() > 0  # rf phase switched at 15 us

    def test_time_out_of_range(self):
        wf = random_waveforms(100.0, 6)
        with pytest.raises(ValueError):
            hamiltonian_at(wf, ControlParams(), 100.0)
        with pytest.raises(ValueError):
            hamiltonian_at(wf, ControlParams(), -1.0)


class TestPropagator:
    def test_zero_hamiltonian(self):
        u = propagator_step(np.zeros((4, 4)), 10.0)
        assert np.abs(u - np.eye(4)).max() < 1e-14

    def test_diagonal_phase(self, space):
        _, _, fz = angular_momentum_ops(3)
        h = embed_block(fz, space, 3) * (math.pi * 1e6)  # pi per unit m over 1 us
        u = propagator_step(h, 1.0)
        m = np.concatenate([np.arange(-3.0, 4.0), np.zeros(9)])
        expect = np.exp(-1j * m * math.pi)
        assert np.abs(np.diag(u) - expect).max() < 1e-12

    def test_unitarity(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            h = random_hermitian(rng, 16, scale=1e5)
            u = propagator_step(h, 3.0)
            assert np.abs(u.conj().T @ u - np.eye(16)).max() < 1e-11

    def test_rejects_non_hermitian(self):
        bad = np.array([[0.0, 1.0], [0.0, 0.0]])
        with pytest.raises(ValueError):
            propagator_step(bad, 1.0)


class TestEvolution:
    def test_first_observable_is_probe(self, series_short, space):
        assert np.array_equal(series_short.operators[0], probe_observable(space))

    def test_all_traceless(self, series_short):
        traces = np.einsum("nii->n", series_short.operators)
        assert np.abs(traces).max() < 1e-10

    def test_spectrum_preserved(self, series_short):
        spec0 = np.linalg.eigvalsh(series_short.operators[0])
        for i in (1, 57, 311, 600):
            spec = np.linalg.eigvalsh(series_short.operators[i])
            assert np.abs(spec - spec0).max() < 1e-9

    def test_norm_drift(self, waveforms_2ms):
        series = evolve_observables(waveforms_2ms, ControlParams(), 1.0, 2000.0)
        norms = np.sqrt(np.sum(np.abs(series.operators) ** 2, axis=(1, 2)))
        assert np.abs(norms - norms[0]).max() < 1e-8

    def test_determinism(self, waveforms_short):
        a = evolve_observables(waveforms_short, ControlParams(), 1.0, 400.0)
        b = evolve_observables(waveforms_short, ControlParams(), 1.0, 400.0)
        assert np.abs(a.operators - b.operators).max() < 1e-13

    def test_sample_count(self, waveforms_short):
        series = evolve_observables(waveforms_short, ControlParams(), 1.0, 400.0)
        assert len(series) == 401
        assert series.times_us[0] == 0.0
        assert series.times_us[-1] == 400.0

    def test_rejects_misaligned_dt(self, waveforms_short):
        with pytest.raises(ValueError):
            evolve_observables(waveforms_short, ControlParams(), 2.0, 400.0)

    def test_accepts_coarser_aligned_dt(self, waveforms_short):
        series = evolve_observables(waveforms_short, ControlParams(), 5.0, 400.0)
        assert len(series) == 81

    def test_rejects_bad_duration(self, waveforms_short):
        with pytest.raises(ValueError):
            evolve_observables(waveforms_short, ControlParams(), 1.0, -5.0)
        with pytest.raises(ValueError):
            evolve_observables(waveforms_short, ControlParams(), 1.0, 1e6)


class TestEnsemble:
    def test_zero_spread_matches_homogeneous(self, waveforms_short, series_short):
        model = InhomogeneityModel(enabled=True, fractional_spread=0.0, n_samples=5)
        series = ensemble_observables(waveforms_short, ControlParams(), model, 1.0, 600.0)
        assert np.abs(series.operators - series_short.operators).max() < 1e-12

    def test_single_sample_matches_homogeneous(self, waveforms_short, series_short):
        model = InhomogeneityModel(enabled=True, fractional_spread=0.05, n_samples=1)
        series = ensemble_observables(waveforms_short, ControlParams(), model, 1.0, 600.0)
        assert np.abs(series.operators - series_short.operators).max() < 1e-12

    def test_disabled_matches_homogeneous(self, waveforms_short, series_short):
        model = InhomogeneityModel(enabled=False)
        series = ensemble_observables(waveforms_short, ControlParams(), model, 1.0, 600.0)
        assert np.abs(series.operators - series_short.operators).max() < 1e-12

    def test_average_traceless_hermitian(self, waveforms_short):
        model = InhomogeneityModel(enabled=True, fractional_spread=0.02, n_samples=5)
        series = ensemble_observables(waveforms_short, ControlParams(), model, 1.0, 600.0)
        traces = np.einsum("nii->n", series.operators)
        assert np.abs(traces).max() < 1e-10
        skew = series.operators - np.conj(np.transpose(series.operators, (0, 2, 1)))
        assert np.abs(skew).max() < 1e-12

    def test_average_changes_spectrum(self, waveforms_short, series_short):
        model = InhomogeneityModel(enabled=True, fractional_spread=0.02, n_samples=5)
        series = ensemble_observables(waveforms_short, ControlParams(), model, 1.0, 600.0)
        spec0 = np.linalg.eigvalsh(series_short.operators[-1])
        spec = np.linalg.eigvalsh(series.operators[-1])
        assert np.abs(spec - spec0).max() > 1e-6

    def test_weights_normalized(self):
        model = InhomogeneityModel(enabled=True, fractional_spread=0.01, n_samples=5)
        x, w = model.nodes_weights()
        assert w.min() >= 0
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert len(x) == 5

    def test_uniform_scheme(self):
        model = InhomogeneityModel(
            enabled=True, fractional_spread=0.01, n_samples=4, scheme="uniform"
        )
        x, w = model.nodes_weights()
        assert np.allclose(w, 0.25)

    def test_rejects_bad_samples(self):
        with pytest.raises(ValueError):
            InhomogeneityModel(n_samples=0)


class TestCompleteness:
    def test_single_observable_rank_one(self, series_short, basis16):
        rank, cond, sv = informational_completeness(series_short.head(1), basis16, 1.0)
        assert rank == 1
        assert cond == np.inf

    def test_trace_column_zero(self, series_short, basis16):
        from spintomo.records import design_matrix

        a = design_matrix(series_short, basis16, 2.5).A
        assert np.abs(a[:, 0]).max() == 0.0

    def test_rank_grows_with_duration(self, series_short, basis16):
        r100, _, _ = informational_completeness(truncate_series(series_short, 100), basis16, 1.0)
        r600, _, _ = informational_completeness(series_short, basis16, 1.0)
        assert r100 < r600
        assert r600 <= 255

    def test_empty_series_rejected(self, series_short, basis16):
        with pytest.raises(ValueError):
            informational_completeness(series_short.head(0), basis16, 1.0)
