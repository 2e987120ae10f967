"""
Tests for services/experiments.py
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from exceptions import ModelValidationError
from services.experiments import (
    InputKind,
    SensorKind,
    SystemSource,
    TrialSpec,
    X0Kind,
    aggregate,
    auto_fractions,
    draw_scenario,
    metrics,
    random_system,
    run_fd_td_study,
    run_horizon_study,
    run_sensor_study,
    run_sweep,
    run_trial,
    synth_inputs,
    trial_support,
)
from services.trial_pool import TrialPool


@pytest.fixture
def small_spec():
    """Small random-system campaign that runs in well under a second per trial."""
    return TrialSpec(
        n=4, m=3, p=3, m_star=1, n_horizon=6, sigma=0.01,
        max_spectral_radius=0.9, trials=3, seed=5, lambda_grid="auto(3)",
    )


@pytest.fixture
def file_spec(system_file):
    return TrialSpec(
        system_source=SystemSource.FROM_FILE, system_path=system_file,
        m_star=1, n_horizon=4, sigma=0.01, trials=4, seed=2, lambda_grid=[0.0, 1e3],
    )


class TestMetrics:
    """Tests for FPR/FNR/ERR."""

    def test_partial_overlap(self):
        assert metrics([0, 1], [1, 2], 4) == (0.5, 0.5, 0.5)

    def test_exact_recovery(self):
        assert metrics([1], [1], 3) == (0.0, 0.0, 1.0)

    def test_empty_estimate(self):
        assert metrics([0, 2], [], 3) == (0.0, 1.0, pytest.approx(1.0 / 3.0))

    def test_all_active(self):
        """Test FPR is zero when S^c is empty."""
        assert metrics([0, 1], [0, 1], 2) == (0.0, 0.0, 1.0)

    def test_out_of_range(self):
        with pytest.raises(ModelValidationError):
            metrics([0], [5], 3)


class TestTrialSpec:
    """Tests for the campaign definition."""

    def test_defaults(self):
        spec = TrialSpec()

        assert spec.system_source == SystemSource.RANDOM_GAUSSIAN
        assert spec.input_kind == InputKind.UNIFORM_BOX
        assert spec.x0_kind == X0Kind.STANDARD_GAUSSIAN
        assert spec.grid_mode == "auto"
        assert spec.grid_size() == 10

    def test_m_star_exceeds_m(self):
        with pytest.raises(ValidationError):
            TrialSpec(m=2, m_star=3)

    def test_first_states_needs_p_le_n(self):
        with pytest.raises(ValidationError):
            TrialSpec(n=3, m=2, p=4, sensor_kind=SensorKind.FIRST_STATES)

    def test_from_file_needs_path(self):
        with pytest.raises(ValidationError):
            TrialSpec(system_source=SystemSource.FROM_FILE)

    def test_active_set_size(self):
        with pytest.raises(ValidationError):
            TrialSpec(m_star=2, active_set=[0])

    @pytest.mark.parametrize("grid", ["auto(0)", "automatic", "", []])
    def test_bad_grid(self, grid):
        with pytest.raises(ValidationError):
            TrialSpec(lambda_grid=grid)

    def test_value_grid_sorted(self):
        spec = TrialSpec(lambda_grid=[0.5, 0.1])

        assert spec.lambda_grid == [0.1, 0.5]
        assert spec.grid_labels() == ["0.1", "0.5"]

    def test_auto_labels(self):
        spec = TrialSpec(lambda_grid="auto(3)")
        assert spec.grid_labels() == ["0.01*lambda_max", "0.1*lambda_max", "1*lambda_max"]

    def test_theory_grid(self):
        spec = TrialSpec(lambda_grid="theory")

        assert spec.grid_size() == 1
        assert spec.grid_labels() == ["theory"]

    def test_frozen(self):
        with pytest.raises(ValidationError):
            TrialSpec().seed = 3

    def test_with_overrides_validates(self):
        spec = TrialSpec(m=3)

        assert spec.with_overrides(n_horizon=7).n_horizon == 7
        with pytest.raises(ValidationError):
            spec.with_overrides(m_star=4)


class TestAutoFractions:

    def test_single_point(self):
        assert auto_fractions(1) == [1.0]

    def test_log_spaced(self):
        np.testing.assert_allclose(auto_fractions(3), [0.01, 0.1, 1.0])


class TestRandomSystem:
    """Tests for random test-system generation."""

    def test_deterministic(self):
        first = random_system(5, 2, 3, seed=4)
        second = random_system(5, 2, 3, seed=4)

        np.testing.assert_array_equal(first.a, second.a)
        np.testing.assert_array_equal(first.c, second.c)

    def test_input_matrix(self):
        sys = random_system(5, 2, 3, seed=1)
        np.testing.assert_array_equal(sys.b, np.vstack([np.eye(2), np.zeros((3, 2))]))

    def test_first_states_sensors(self):
        sys = random_system(5, 2, 3, seed=1, sensor_kind=SensorKind.FIRST_STATES)
        np.testing.assert_array_equal(sys.c, np.eye(5)[:3])

    def test_radius_cap(self):
        sys = random_system(8, 2, 3, seed=9, max_spectral_radius=0.7)
        assert sys.spectral_radius <= 0.7 + 1e-12

    def test_too_many_sources(self):
        with pytest.raises(ModelValidationError):
            random_system(2, 3, 1, seed=0)


class TestSynthInputs:
    """Tests for input waveform synthesis."""

    def test_box_inputs(self):
        spec = TrialSpec(m=4, m_star=2, n_horizon=9)
        u = synth_inputs(spec, [1, 3], seed=0)

        assert u.shape == (4, 10)
        assert np.all(u[[0, 2]] == 0)
        assert np.all(np.abs(u[[1, 3]]) <= 2.0)
        assert np.all(u[[1, 3]] != 0)

    def test_sinusoid_per_source_amplitude(self):
        spec = TrialSpec(
            m=3, m_star=2, n_horizon=49, input_kind=InputKind.SINUSOID,
            amplitudes=[1.0, 0.0], jitter_sigma=0.0,
        )
        u = synth_inputs(spec, [0, 2], seed=3)

        assert np.max(np.abs(u[0])) <= 1.0
        assert np.all(u[2] == 0)
        assert np.all(u[1] == 0)

    def test_deterministic(self):
        spec = TrialSpec(m=3, m_star=1, input_kind=InputKind.SINUSOID)
        np.testing.assert_array_equal(synth_inputs(spec, [2], seed=8), synth_inputs(spec, [2], seed=8))

    def test_support_size_mismatch(self):
        spec = TrialSpec(m=3, m_star=1)
        with pytest.raises(ModelValidationError):
            synth_inputs(spec, [0, 1], seed=0)


class TestScenario:
    """Tests for seeded trial scenarios."""

    def test_fixed_active_set(self, decoupled_system, system_file):
        spec = TrialSpec(
            system_source=SystemSource.FROM_FILE, system_path=system_file,
            m_star=1, active_set=[1], n_horizon=4,
        )
        sys, s, measured = draw_scenario(spec, 0, decoupled_system)

        assert s == (1,)
        assert measured.support == (1,)
        assert measured.y.size == 15
        assert np.all(measured.u_true[[0, 2]] == 0)
        assert sys.name == "decoupled"

    def test_loads_system_when_not_given(self, system_file):
        spec = TrialSpec(system_source=SystemSource.FROM_FILE, system_path=system_file, m_star=2, n_horizon=3)
        sys, s, _ = draw_scenario(spec, 1)

        assert sys.m == 3
        assert len(s) == 2

    def test_deterministic_per_trial(self, small_spec):
        _, s_a, first = draw_scenario(small_spec, 2)
        _, s_b, second = draw_scenario(small_spec, 2)

        assert s_a == s_b
        np.testing.assert_array_equal(first.y, second.y)

    def test_trials_differ(self, small_spec):
        _, _, first = draw_scenario(small_spec, 0)
        _, _, second = draw_scenario(small_spec, 1)
        assert not np.array_equal(first.y, second.y)

    def test_zero_initial_state(self, small_spec):
        _, _, measured = draw_scenario(small_spec.with_overrides(x0_kind=X0Kind.ZERO), 0)
        assert np.all(measured.x0_true == 0)

    def test_support_larger_than_system(self, system_file):
        spec = TrialSpec(system_source=SystemSource.FROM_FILE, system_path=system_file, m_star=4)
        with pytest.raises(ModelValidationError):
            trial_support(spec, 0, 3)


class TestRunTrial:
    """Tests for one seeded trial."""

    def test_deterministic(self, small_spec):
        first = [r.to_row() for r in run_trial(small_spec, 1)]
        second = [r.to_row() for r in run_trial(small_spec, 1)]
        assert first == second

    def test_grid_order_and_zero_solution(self, small_spec):
        records = run_trial(small_spec, 0)

        assert [r.grid_index for r in records] == [0, 1, 2]
        assert records[0].lam < records[1].lam < records[2].lam
        # the largest auto point is lambda_max itself
        assert records[2].support == ()
        assert records[2].fnr == 1.0
        assert records[2].fpr == 0.0

    def test_theory_lambda(self, decoupled_system, system_file):
        spec = TrialSpec(
            system_source=SystemSource.FROM_FILE, system_path=system_file,
            m_star=1, active_set=[0], n_horizon=4, lambda_grid="theory",
        )
        records = run_trial(spec, 0, decoupled_system)

        assert len(records) == 1
        assert not records[0].skipped
        assert 0.0 < records[0].alpha_implied < 1.0
        assert records[0].lam > 0

    def test_theory_skips_incoherent_trials(self, decoupled_system, system_file):
        """Test two active channels push the implied alpha past one."""
        spec = TrialSpec(
            system_source=SystemSource.FROM_FILE, system_path=system_file,
            m_star=2, active_set=[0, 1], n_horizon=4, lambda_grid="theory",
        )
        records = run_trial(spec, 0, decoupled_system)

        assert records[0].skipped
        assert records[0].alpha_implied >= 1.0

        rows = aggregate(spec, records)
        assert rows[0].trials == 0
        assert rows[0].skipped == 1
        assert math.isnan(rows[0].fpr)

    def test_sweep_counts_skipped_trials(self, decoupled_system, system_file):
        spec = TrialSpec(
            system_source=SystemSource.FROM_FILE, system_path=system_file,
            m_star=2, active_set=[0, 1], n_horizon=4, lambda_grid="theory", trials=2,
        )
        report = run_sweep(spec, TrialPool(1), system=decoupled_system)

        assert report.skipped_trials == 2
        assert report.to_dict()["skipped_trials"] == 2
        assert report.rows[0].trials == 0


class TestRunSweep:
    """Tests for lambda sweeps."""

    def test_extreme_lambdas(self, file_spec):
        report = run_sweep(file_spec, TrialPool(2))
        low, high = report.rows

        assert low.lambda_mean == 0.0
        assert low.fpr >= 0.8
        assert high.fnr == 1.0
        assert high.fpr == 0.0
        assert high.exact_recovery_count == 0

    def test_worker_count_does_not_change_results(self, small_spec):
        serial = run_sweep(small_spec, TrialPool(1))
        parallel = run_sweep(small_spec, TrialPool(3))

        assert serial.trial_rows() == parallel.trial_rows()
        assert [r.to_dict() for r in serial.rows] == [r.to_dict() for r in parallel.rows]

    def test_aggregates_are_trial_means(self, small_spec):
        report = run_sweep(small_spec, TrialPool(2))

        for row in report.rows:
            at_index = [r for r in report.records if r.grid_index == row.grid_index]
            assert row.fpr == pytest.approx(np.mean([r.fpr for r in at_index]))
            assert row.err == pytest.approx(np.mean([r.err for r in at_index]))
            assert row.trials == small_spec.trials

    def test_rows_ordered_by_lambda(self, small_spec):
        report = run_sweep(small_spec, TrialPool(2))
        means = [row.lambda_mean for row in report.rows]
        assert means == sorted(means)

    def test_report_dict(self, small_spec):
        data = run_sweep(small_spec, TrialPool(2)).to_dict()

        assert data["trials"] == 3
        assert data["spec"]["seed"] == 5
        assert len(data["rows"]) == 3

    def test_progress_reported(self, small_spec):
        seen = []
        run_sweep(small_spec, TrialPool(1), progress_callback=lambda p: seen.append(p.processed))
        assert seen == [1, 2, 3]


class TestStudies:
    """Tests for the horizon, sensor and frequency-vs-time studies."""

    def test_horizon_study(self, file_spec):
        spec = file_spec.with_overrides(lambda_grid=[0.01], trials=2)
        rows = run_horizon_study(spec, [3, 5], TrialPool(2))

        assert [row.horizon for row in rows] == [3, 5]
        assert all(row.trials == 2 for row in rows)

    def test_sensor_study(self):
        spec = TrialSpec(n=4, m=2, p=2, m_star=1, n_horizon=5, trials=3, seed=1, max_spectral_radius=0.9)
        rows = run_sensor_study(spec, [2, 4], TrialPool(2))

        assert [row.p for row in rows] == [2, 4]
        for row in rows:
            assert row.trials == 3
            assert row.mic_l2_with_x0 >= 0
            assert row.mic_l1_without_x0 >= 0

    def test_sensor_study_needs_counts(self):
        with pytest.raises(ModelValidationError):
            run_sensor_study(TrialSpec(), [])

    def test_fd_td_study(self):
        spec = TrialSpec(n=3, m=2, p=2, m_star=1, trials=3, seed=4, max_spectral_radius=0.8, x0_kind=X0Kind.ZERO)
        rows = run_fd_td_study(spec, [5, 10], TrialPool(2))

        assert [row.horizon for row in rows] == [5, 10]
        assert all(row.skipped == 0 and row.trials == 3 for row in rows)
        assert all(math.isfinite(row.mean_gap) for row in rows)
        assert all(row.min_gap >= -1e-9 for row in rows)
        assert rows[1].min_gap <= rows[0].min_gap + 1e-9
