import numpy as np
import pytest

from glab.errors import ConfigurationError, GridRangeError, ShapeError
from glab.models import TimePartition
from glab.schemas import GridConfig
from glab.services.cascade import (
    RefinementStudy,
    build_solution_paths,
    interval_of_index,
    knot_indices,
    path_states,
    residual_check,
    residual_refinement,
    solve_cascade,
)
from glab.services.presets import build_generator, build_terminal


@pytest.fixture
def constant_case(band, partition, grid_config, bundles):
    f = build_generator("constant", 2, {"c": 0.3})
    phi = build_terminal("zero", 2)
    cas = solve_cascade(f, phi, partition, band, grid_config)
    return cas, build_solution_paths(cas, bundles)


@pytest.fixture
def lipschitz_case(band, partition, grid_config, bundles):
    f = build_generator("lipschitz-random", 2)
    phi = build_terminal("sin-sum", 2)
    cas = solve_cascade(f, phi, partition, band, grid_config)
    return cas, build_solution_paths(cas, bundles)


class TestKnots:
    def test_knot_indices(self):
        times = np.arange(9) / 8
        np.testing.assert_array_equal(knot_indices(times, TimePartition.uniform(1.0, 4)), [0, 2, 4, 6, 8])

    def test_grid_must_refine_partition(self):
        with pytest.raises(ConfigurationError):
            knot_indices(np.arange(9) / 8, TimePartition(times=(0.0, 0.3, 1.0)))

    def test_intervals_are_right_continuous(self):
        k = interval_of_index(np.array([0, 2, 4]), 5)
        np.testing.assert_array_equal(k, [1, 1, 2, 2, 2])

    def test_path_states(self, bundles, partition):
        b = bundles[2]
        states = path_states(b, partition, "increments")
        assert states.shape == b.B.shape + (2,)
        mid = 32
        np.testing.assert_allclose(states[:, mid, 0], b.B[:, mid])
        np.testing.assert_allclose(states[:, mid, 1], 0.0)
        np.testing.assert_allclose(states[:, -1].sum(axis=-1), b.B[:, -1], atol=1e-12)
        summed = path_states(b, partition, "running_sum")
        np.testing.assert_array_equal(summed[..., 0], b.B)


class TestSolveCascade:
    def test_constant_driver(self, constant_case, band):
        cas, _ = constant_case
        assert cas.mode == "running_sum"
        assert cas.y0 == pytest.approx(0.3 * band.var_hi, abs=1e-12)
        assert cas.stitching_gap() <= 1e-12

    def test_linear_in_y(self, band, partition, grid_config):
        f = build_generator("linear-y", 2, {"alpha": 0.5})
        phi = build_terminal("constant", 2, {"value": 1.0})
        cas = solve_cascade(f, phi, partition, band, grid_config)
        assert cas.y0 == pytest.approx(np.exp(0.5 * band.var_hi), rel=1e-2)

    def test_ledger_holds(self, lipschitz_case):
        cas, _ = lipschitz_case
        assert max(cas.derivative_excess()) <= 0.0
        assert np.isfinite(cas.max_abs_u())

    def test_increments_mode_matches_running_sum(self, band, partition):
        grid_config = GridConfig(nodes=61, param_nodes=61, store_steps=None)
        f = build_generator("constant", 2, {"c": 0.2})
        phi = build_terminal("sin-sum", 2)
        summed = solve_cascade(f, phi, partition, band, grid_config)
        full = solve_cascade(f, phi, partition, band, grid_config, mode="increments")
        assert full.mode == "increments"
        assert full.y0 == pytest.approx(summed.y0, abs=5e-3)
        # h²/8 · max|u''| on a parameter axis with spacing 0.2
        assert 1e-5 < full.stitching_gap() <= 5e-3

    def test_stitching_gap_shrinks_with_parameter_nodes(self, band, partition):
        f = build_generator("constant", 2, {"c": 0.2})
        phi = build_terminal("sin-sum", 2)
        gaps = [
            solve_cascade(
                f, phi, partition, band, GridConfig(nodes=61, param_nodes=p, store_steps=None), mode="increments"
            ).stitching_gap()
            for p in (11, 61)
        ]
        assert gaps[0] > 10 * gaps[1]

    def test_affine_stitch_is_exact(self, band, partition, grid_config):
        phi = build_terminal("affine", 2, {"coefficients": [1.0, 2.0], "offset": 0.25})
        cas = solve_cascade(build_generator("zero", 2), phi, partition, band, grid_config)
        assert cas.stitching_gap() <= 1e-9

    def test_affine_terminal_on_increments(self, band, partition, grid_config):
        phi = build_terminal("affine", 2, {"coefficients": [1.0, 2.0], "offset": 0.25})
        cas = solve_cascade(build_generator("zero", 2), phi, partition, band, grid_config)
        assert cas.mode == "increments"
        assert cas.y0 == pytest.approx(0.25, abs=1e-9)

    def test_shape_mismatch(self, band, partition, grid_config):
        with pytest.raises(ShapeError):
            solve_cascade(build_generator("zero", 3), build_terminal("zero", 2), partition, band, grid_config)

    def test_running_sum_needs_sum_reduction(self, band, partition, grid_config):
        phi = build_terminal("product", 2)
        with pytest.raises(ConfigurationError):
            solve_cascade(build_generator("zero", 2), phi, partition, band, grid_config, mode="running_sum")

    def test_increment_limit(self, band, grid_config):
        partition = TimePartition.uniform(1.0, 5)
        phi = build_terminal("affine", 5, {"coefficients": [1.0, 2.0, 3.0, 4.0, 5.0]})
        with pytest.raises(ConfigurationError, match="at most"):
            solve_cascade(build_generator("zero", 5), phi, partition, band, grid_config)


class TestSolutionPaths:
    def test_constant_driver_triple(self, constant_case, band):
        _, paths = constant_case
        lo = paths.blocks[0]
        hi = paths.blocks[1]
        np.testing.assert_allclose(lo.Y[:, 0], 0.3 * band.var_hi, atol=1e-12)
        np.testing.assert_allclose(lo.Z, 0.0, atol=1e-12)
        np.testing.assert_allclose(hi.K[:, -1], 0.0, atol=1e-12)
        np.testing.assert_allclose(lo.K[:, -1], 0.3 * (band.var_lo - band.var_hi), atol=1e-12)

    def test_k_nonincreasing(self, lipschitz_case):
        _, paths = lipschitz_case
        assert paths.k_monotonicity_violation() <= 1e-12
        np.testing.assert_allclose(paths.K[:, 0], 0.0)

    def test_terminal_value(self, lipschitz_case, partition):
        cas, paths = lipschitz_case
        for block in paths.blocks:
            expected = cas.terminal(path_states(block.bundle, partition, paths.mode)[:, -1, :])
            # linear interpolation between nodes: dx²/8 · max|φ''|
            np.testing.assert_allclose(block.Y[:, -1], expected, atol=5e-3)

    def test_bookkeeping(self, lipschitz_case, family):
        _, paths = lipschitz_case
        assert paths.n_paths == family.n_paths
        assert paths.rejected == 0
        assert len(paths.scenario_ids) == paths.n_paths
        assert set(paths.seeds) == {m.label for m in family.members}

    def test_paths_leaving_the_grid(self, band, partition, bundles):
        narrow = GridConfig(half_width=1.0, nodes=21, param_nodes=5, store_steps=None)
        cas = solve_cascade(build_generator("constant", 2), build_terminal("zero", 2), partition, band, narrow)
        with pytest.raises(GridRangeError):
            build_solution_paths(cas, bundles)
        kept = build_solution_paths(cas, bundles, on_exit="reject")
        assert kept.rejected > 0
        assert kept.n_paths + kept.rejected == sum(len(b) for b in bundles)

    def test_horizon_must_match(self, band, bundles, grid_config):
        partition = TimePartition.uniform(0.5, 1)
        cas = solve_cascade(build_generator("zero", 1), build_terminal("zero", 1), partition, band, grid_config)
        with pytest.raises(ConfigurationError):
            build_solution_paths(cas, bundles)


class TestResiduals:
    def test_constant_driver_is_exact(self, constant_case):
        cas, paths = constant_case
        report = residual_check(paths, cas.generator, cas.terminal, cas.partition)
        assert report.max <= 1e-9
        assert not report.nan_paths

    def test_refinement(self, lipschitz_case, bundles):
        cas, _ = lipschitz_case
        study = residual_refinement(cas, bundles, factors=(4, 2, 1))
        assert study.dts == pytest.approx([4 / 64, 2 / 64, 1 / 64])
        assert all(np.isfinite(study.max_residuals))
        # constants, bang-bang and piecewise-random controls alike
        assert study.scenarios == [b.label for b in bundles]
        assert len(study.scenarios) == 6
        assert study.nonincreasing()
        assert study.mean_residuals[-1] <= study.mean_residuals[0]

    def test_nonincreasing_allows_a_floor(self):
        study = RefinementStudy(dts=[0.1, 0.05], max_residuals=[1e-13, 2e-13], mean_residuals=[0.0, 0.0])
        assert not study.nonincreasing()
        assert study.nonincreasing(1e-9)
