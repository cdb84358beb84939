import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glab.errors import ConfigurationError, DomainError, ShapeError
from glab.models import TimePartition, VolatilityBand
from glab.services import gcore
from glab.services.presets import build_generator, build_path_generator, build_terminal

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)
scale = st.floats(min_value=0.0, max_value=1e2, allow_nan=False, allow_infinity=False)
sigma = st.floats(min_value=0.05, max_value=3.0, allow_nan=False, allow_infinity=False)
constant = st.floats(min_value=0.0, max_value=3.0, allow_nan=False, allow_infinity=False)

BAND = VolatilityBand(sigma_lo=0.5, sigma_hi=1.0)


class TestGFunction:
    def test_unit_values(self):
        assert gcore.g_function(1.0, BAND) == 0.5
        assert gcore.g_function(-1.0, BAND) == -0.125
        assert gcore.g_function(0.0, BAND) == 0.0

    def test_vectorized(self):
        out = gcore.g_function(np.array([-2.0, 0.0, 2.0]), BAND)
        np.testing.assert_allclose(out, [-0.25, 0.0, 1.0])

    @given(a=finite, b=finite)
    @settings(max_examples=200, deadline=None)
    def test_subadditive(self, a, b):
        assert gcore.g_function(a + b, BAND) <= gcore.g_function(a, BAND) + gcore.g_function(b, BAND) + 1e-9

    @given(a=finite, lam=scale)
    @settings(max_examples=200, deadline=None)
    def test_positively_homogeneous(self, a, lam):
        assert gcore.g_function(lam * a, BAND) == pytest.approx(lam * gcore.g_function(a, BAND), rel=1e-12, abs=1e-12)

    @given(a=finite, lo=sigma, extra=constant)
    @settings(max_examples=200, deadline=None)
    def test_is_the_largest_linear_variance(self, a, lo, extra):
        band = VolatilityBand(sigma_lo=lo, sigma_hi=lo + extra)
        expected = max(0.5 * band.var_lo * a, 0.5 * band.var_hi * a)
        assert gcore.g_function(a, band) == pytest.approx(expected, rel=1e-12, abs=1e-12)


class TestEmbedPath:
    partition = TimePartition.uniform(1.0, 2)

    def test_full_path_interpolates_partial_sums(self):
        path = gcore.embed_path([1.0, 2.0], self.partition, 1.0)
        np.testing.assert_allclose(path.at([0.0, 0.25, 0.5, 0.75, 1.0]), [0.0, 0.5, 1.0, 2.0, 3.0])
        assert float(path.current()) == 3.0

    def test_stopped_path_is_constant_after_stop(self):
        path = gcore.embed_path([1.0, 2.0], self.partition, 0.25)
        np.testing.assert_allclose(path.at([0.125, 0.25, 0.6, 1.0]), [0.5, 1.0, 1.0, 1.0])
        assert float(path.current()) == 1.0

    def test_running_mean(self):
        path = gcore.embed_path([1.0, 2.0], self.partition, 1.0)
        assert float(path.running_mean()) == pytest.approx(1.25)

    def test_batched(self):
        x = np.array([[1.0, 2.0], [-1.0, 0.5], [0.0, 0.0]])
        path = gcore.embed_path(x, self.partition, np.array([1.0, 0.75, 0.5]))
        np.testing.assert_allclose(path.current(), [3.0, -0.5, 0.0])

    def test_sup_distance(self):
        a = gcore.embed_path([1.0, 2.0], self.partition, 1.0)
        b = gcore.embed_path([1.0, 1.0], self.partition, 1.0)
        assert float(a.sup_distance(b)) == pytest.approx(1.0)

    def test_wrong_shape(self):
        with pytest.raises(ShapeError):
            gcore.embed_path([1.0, 2.0, 3.0], self.partition, 1.0)

    def test_stop_outside_horizon(self):
        with pytest.raises(DomainError):
            gcore.embed_path([1.0, 2.0], self.partition, 1.5)


class TestDiscretizePathGenerator:
    partition = TimePartition.uniform(1.0, 2)

    def test_markovian_uses_running_sum(self):
        f = gcore.discretize_path_generator(build_path_generator("clamp-current", {"kappa": 0.5, "cap": 1.0}), self.partition)
        assert f.reduction == "sum"
        assert f.n_vars == 2
        assert float(f(0.5, np.array([0.2, 0.3]), 0.0, 0.0)) == pytest.approx(0.25)
        assert float(f(0.5, np.array([2.0, 3.0]), 0.0, 0.0)) == pytest.approx(0.5)

    def test_path_dependent_sees_running_mean(self):
        f = gcore.discretize_path_generator(build_path_generator("clamp-average", {"kappa": 0.5, "cap": 2.0}), self.partition)
        assert f.reduction == "none"
        assert float(f(1.0, np.array([1.0, 2.0]), 0.0, 0.0)) == pytest.approx(0.5 * 1.25)


class TestMollifier:
    @pytest.mark.parametrize("n, dim", [(1, 1), (4, 2), (3, 3)])
    def test_normalized_and_supported_in_ball(self, n, dim):
        rho = gcore.build_mollifier(n, dim, nodes_per_axis=8)
        assert rho.is_normalized()
        assert rho.radius == pytest.approx(1.0 / n)
        assert np.all(np.linalg.norm(rho.nodes, axis=1) < rho.radius)
        np.testing.assert_allclose(rho.weights @ rho.nodes, 0.0, atol=1e-12)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ConfigurationError):
            gcore.build_mollifier(0, 2)
        with pytest.raises(ConfigurationError):
            gcore.build_mollifier(2, 2, nodes_per_axis=1)

    def test_yz_mollification_keeps_affine_generators(self):
        f = build_generator("linear-y", 2, {"alpha": 0.5, "c": 0.2})
        fn = gcore.mollify_generator_yz(f, gcore.build_mollifier(3, 2, nodes_per_axis=8))
        y = np.linspace(-2.0, 2.0, 9)
        np.testing.assert_allclose(fn(0.3, np.zeros((9, 2)), y, 0.0), 0.5 * y + 0.2, atol=1e-12)

    def test_yz_needs_two_dimensional_kernel(self):
        f = build_generator("zero", 2)
        with pytest.raises(ConfigurationError):
            gcore.mollify_generator_yz(f, gcore.build_mollifier(2, 3, nodes_per_axis=4))

    @pytest.mark.parametrize("n", [1, 2, 5])
    def test_gap_within_bound(self, n):
        rng = np.random.default_rng(n)
        f = build_generator("lipschitz-random", 2, {"seed": 3})
        rho_tx = gcore.build_mollifier(n, 2, nodes_per_axis=6)
        rho_yz = gcore.build_mollifier(n, 2, nodes_per_axis=6)
        fn = gcore.mollify_generator_yz(gcore.mollify_generator_tx(f, rho_tx, 1.0), rho_yz)
        t = rng.uniform(0.0, 1.0, 200)
        x = rng.normal(size=(200, 2))
        y = rng.normal(size=200)
        z = rng.uniform(-2.0, 2.0, 200)
        gap = np.max(np.abs(fn(t, x, y, z) - f(t, x, y, z)))
        assert gap <= gcore.mollification_gap_bound(f, n, 2.0, 2) + 1e-12


class TestGeneratorTransforms:
    def test_truncate_z(self):
        f = gcore.truncate_generator_z(build_generator("quadratic-z", 1, {"kappa": 1.0}), 1.0)
        np.testing.assert_allclose(f(0.0, np.zeros((3, 1)), 0.0, np.array([-3.0, 0.5, 3.0])), [1.0, 0.25, 1.0])
        with pytest.raises(DomainError):
            gcore.truncate_generator_z(f, 0.0)

    def test_shifts(self):
        f = gcore.shifted_generator(build_generator("zero", 1), 0.1)
        assert float(f(0.0, np.zeros(1), 0.0, 0.0)) == pytest.approx(0.1)
        assert f.m0 == pytest.approx(0.1)
        phi = gcore.shifted_terminal(build_terminal("sin-sum", 1, {"amplitude": 0.5}), -0.2)
        assert float(phi(np.zeros(1))) == pytest.approx(-0.2)
        assert phi.bound == pytest.approx(0.7)


class TestLedger:
    def test_hand_values(self):
        single = gcore.derivative_bound_ledger(1.0, 0.0, 1.0, BAND, TimePartition.uniform(1.0, 1))
        assert single.bounds[0] == pytest.approx(math.e, abs=1e-12)
        double = gcore.derivative_bound_ledger(1.0, 1.0, 1.0, BAND, TimePartition.uniform(1.0, 2))
        assert double.bound(2) == pytest.approx(2 * math.exp(0.5) - 1, abs=1e-12)
        assert double.bound(1) == pytest.approx(2 * math.e - 1, abs=1e-12)
        assert double.m_z == double.bound(1)

    def test_no_y_dependence_adds_linearly(self):
        ledger = gcore.derivative_bound_ledger(0.5, 2.0, 0.0, BAND, TimePartition.uniform(1.0, 4))
        np.testing.assert_allclose(ledger.bounds, [2.5, 2.0, 1.5, 1.0])

    @given(phi_lip=constant, l_x=constant, l_y=constant, n=st.integers(min_value=1, max_value=8))
    @settings(max_examples=100, deadline=None)
    def test_nonincreasing_in_k(self, phi_lip, l_x, l_y, n):
        ledger = gcore.derivative_bound_ledger(phi_lip, l_x, l_y, BAND, TimePartition.uniform(1.0, n))
        bounds = np.asarray(ledger.bounds)
        assert np.all(np.diff(bounds) <= 1e-9 * (1 + bounds[:-1]))
        assert bounds[-1] >= phi_lip - 1e-12

    def test_rejects_negative_constants(self):
        with pytest.raises(DomainError):
            gcore.derivative_bound_ledger(-1.0, 0.0, 0.0, BAND, TimePartition.uniform(1.0, 1))

    def test_z_cap(self):
        ledger = gcore.derivative_bound_ledger(1.0, 0.0, 0.0, BAND, TimePartition.uniform(1.0, 1))
        assert ledger.z_cap() == pytest.approx(1.1)
        unbounded = gcore.derivative_bound_ledger(math.inf, 0.0, 0.0, BAND, TimePartition.uniform(1.0, 1))
        assert unbounded.z_cap() is None


def test_y_ceiling():
    assert gcore.y_ceiling(1.0, 0.0, BAND, 1.0) == pytest.approx(2.0)
    assert gcore.y_ceiling(0.0, 5.0, BAND, 1.0) == 0.0
