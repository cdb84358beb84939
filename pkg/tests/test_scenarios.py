import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glab.errors import ConfigurationError, DomainError, ScenarioError, ShapeError
from glab.models import VolatilityBand
from glab.services.scenarios import (
    ControlKind,
    FamilyMember,
    ScenarioFamily,
    UpperExpectation,
    bang_bang_control,
    constant_control,
    default_family,
    ito_integral,
    piecewise_random_control,
    qv_band_violations,
    qv_integral,
    simulate_bundle,
    simulate_family,
    simulate_scenario,
    steps_for,
    time_integral,
    upper_expectation,
    upper_expectation_of,
)

BAND = VolatilityBand(sigma_lo=0.5, sigma_hi=1.0)

seeds = st.integers(min_value=0, max_value=2**32 - 1)


class TestControls:
    def test_constant_stays_in_band(self):
        with pytest.raises(DomainError):
            constant_control(1.5, BAND, 4)

    def test_bang_bang_switches(self):
        c = bang_bang_control(0.5, 1.0, 0.25, BAND, 1 / 8, 1.0)
        np.testing.assert_allclose(c.values, [0.5, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0])
        assert c.kind == ControlKind.bang_bang

    @given(seed=seeds)
    @settings(max_examples=30, deadline=None)
    def test_random_control_in_band(self, seed):
        c = piecewise_random_control(BAND, 32, seed)
        assert np.all((c.values >= BAND.sigma_lo) & (c.values <= BAND.sigma_hi))

    def test_coarsen_keeps_quadratic_variation(self):
        c = piecewise_random_control(BAND, 16, 5)
        coarse = c.coarsen(4)
        assert coarse.n_steps == 4
        assert np.sum(coarse.values**2) * 4 == pytest.approx(np.sum(c.values**2))

    def test_steps_for(self):
        assert steps_for(1 / 64, 1.0) == 64
        with pytest.raises(ConfigurationError):
            steps_for(0.3, 1.0)


class TestSimulation:
    def test_constant_qv_is_deterministic(self):
        path = simulate_scenario(constant_control(1.0, BAND, 64), 9, 1 / 64, 1.0)
        np.testing.assert_allclose(path.qv, path.times)
        assert path.B[0] == 0.0
        assert path.scenario_id == "constant(1)#0"

    def test_same_seed_same_path(self):
        control = constant_control(0.5, BAND, 64)
        a = simulate_scenario(control, 42, 1 / 64, 1.0, path_index=3)
        b = simulate_scenario(control, 42, 1 / 64, 1.0, path_index=3)
        np.testing.assert_array_equal(a.B, b.B)

    def test_batches_do_not_change_paths(self, family):
        member = family.members[0]
        full = simulate_bundle(member, family.dt, family.horizon)
        part = simulate_bundle(member, family.dt, family.horizon, [3, 4])
        np.testing.assert_array_equal(part.B, full.B[3:5])
        np.testing.assert_array_equal(part.path_indices, [3, 4])

    def test_control_length_checked(self):
        with pytest.raises(ShapeError):
            simulate_scenario(constant_control(1.0, BAND, 10), 1, 1 / 64, 1.0)

    def test_coarsened_bundle_is_a_subsample(self, bundles):
        b = bundles[-1]
        coarse = b.coarsen(4)
        np.testing.assert_array_equal(coarse.B, b.B[:, ::4])
        np.testing.assert_allclose(coarse.qv, b.qv[::4], rtol=1e-12)
        with pytest.raises(ConfigurationError):
            b.coarsen(3)

    def test_increment_variance(self):
        member = FamilyMember(constant_control(0.5, BAND, 4), 20_000, 17)
        bundle = simulate_bundle(member, 0.25, 1.0)
        assert np.var(bundle.B[:, -1]) == pytest.approx(0.25, rel=0.05)


class TestFamily:
    def test_default_family_layout(self, family):
        labels = [m.label for m in family.members]
        assert labels[:2] == ["constant-lo", "constant-hi"]
        assert len(labels) == 6
        assert family.n_paths == 6 * 16

    def test_needs_extreme_constants(self):
        member = FamilyMember(constant_control(0.7, BAND, 64), 4, 1)
        with pytest.raises(ConfigurationError):
            ScenarioFamily((member,), 1 / 64, 1.0, BAND)

    def test_labels_unique(self, family):
        with pytest.raises(ConfigurationError):
            ScenarioFamily(family.members + family.members[:1], family.dt, family.horizon, BAND)

    def test_refine_repeats_controls(self, family):
        fine = family.refine(2)
        assert fine.dt == pytest.approx(family.dt / 2)
        np.testing.assert_array_equal(fine.members[3].control.values[::2], family.members[3].control.values)

    def test_with_paths_shifts_seeds(self, family):
        other = family.with_paths(8, seed_offset=1)
        assert other.members[0].n_paths == 8
        assert other.members[0].base_seed == family.members[0].base_seed + 1

    def test_qv_stays_in_band(self, bundles):
        assert sum(qv_band_violations(b, BAND) for b in bundles) == 0


class TestIntegrals:
    def test_constant_integrands(self, bundles):
        b = bundles[0]
        np.testing.assert_allclose(ito_integral(1.0, b), b.B - b.B[:, :1], atol=1e-12)
        np.testing.assert_allclose(qv_integral(1.0, b), b.qv, atol=1e-12)
        np.testing.assert_allclose(time_integral(1.0, b), b.times, atol=1e-12)

    def test_left_point_rule(self, bundles):
        b = bundles[1]
        got = ito_integral(b.B, b)[:, -1]
        dB = np.diff(b.B, axis=1)
        np.testing.assert_allclose(got, np.sum(b.B[:, :-1] * dB, axis=1), atol=1e-12)

    def test_shape_mismatch(self, bundles):
        with pytest.raises(ShapeError):
            ito_integral(np.zeros(7), bundles[0])


class TestUpperExpectation:
    def test_deterministic_functional(self, family):
        est = upper_expectation(lambda b: np.full(len(b), b.qv[-1]), family)
        assert est.estimate == pytest.approx(BAND.var_hi)
        assert est.argmax == "constant-hi"
        low = upper_expectation(lambda b: np.full(len(b), -b.qv[-1]), family)
        assert low.estimate == pytest.approx(-BAND.var_lo)
        assert low.argmax == "constant-lo"

    def test_independent_of_threads_and_batches(self, family):
        functional = lambda b: np.sin(b.B[:, -1])  # noqa: E731
        serial = upper_expectation(functional, family, batch_size=5, max_workers=1)
        threaded = upper_expectation(functional, family, batch_size=64, max_workers=3)
        assert serial.means == threaded.means
        assert serial.argmax == threaded.argmax

    def test_matches_precomputed_values(self, family, bundles):
        functional = lambda b: b.B[:, -1] ** 2  # noqa: E731
        streamed = upper_expectation(functional, family)
        direct = upper_expectation_of([(b, functional(b)) for b in bundles])
        assert streamed.estimate == pytest.approx(direct.estimate, rel=1e-12)

    def test_nan_values_are_reported(self):
        est = UpperExpectation.from_samples({"a": np.array([1.0, np.nan, 3.0]), "b": np.array([0.0, 0.0])})
        assert est.estimate == 2.0
        assert est.failures == {"a": ["a#1"]}
        assert est.n_failures == 1

    def test_all_nan_fails(self):
        with pytest.raises(ScenarioError):
            UpperExpectation.from_samples({"a": np.array([np.nan])})

    def test_functional_errors(self, family):
        with pytest.raises(ShapeError):
            upper_expectation(lambda b: np.zeros(len(b) + 1), family)
        with pytest.raises(ScenarioError):
            upper_expectation(lambda b: 1 / 0, family)

    def test_family_of_different_sizes(self):
        family = default_family(BAND, 1.0, 1 / 8, 4, seed=1, n_bang_bang=0, n_random=0)
        assert len(simulate_family(family)) == 2
