import numpy as np
import pytest

from glab.errors import ConfigurationError
from glab.models import TimePartition
from glab.schemas import GridConfig
from glab.services.approximation import (
    ApproxReport,
    LevelReport,
    approximation_pipeline,
    chord_errors,
    common_pde_dt,
    embedding_error,
    kernel_order,
)
from glab.services.gcore import build_mollifier
from glab.services.presets import build_path_generator


class TestEmbeddingError:
    def test_linear_paths_are_exact(self, bundles):
        b = bundles[0]
        straight = b.with_B(np.broadcast_to(2.0 * b.times, b.B.shape).copy())
        worst, bound = chord_errors(straight, TimePartition.dyadic(1.0, 2))
        np.testing.assert_allclose(worst, 0.0, atol=1e-12)
        assert np.all(bound > 0)

    def test_bounded_by_oscillation(self, bundles):
        partition = TimePartition.dyadic(1.0, 2)
        for b in bundles:
            worst, bound = chord_errors(b, partition)
            assert np.all(worst <= bound + 1e-12)
            assert np.all(worst > 0)

    def test_decreases_with_level(self, bundles):
        errors = [embedding_error(n, bundles) for n in (1, 3)]
        assert errors[1].value < errors[0].value
        assert all(e.pathwise_violations == 0 for e in errors)
        assert errors[0].level == 1

    def test_partition_must_fit_the_grid(self, bundles):
        with pytest.raises(ConfigurationError, match="level 7"):
            embedding_error(7, bundles)


class TestCommonDt:
    def test_divides_finest_interval(self, band, grid_config):
        dt = common_pde_dt(band, 1.0, grid_config, 3)
        grid = grid_config.space_grid(band, 1.0)
        assert dt <= grid.cfl_dt(band, grid_config.dt_safety) * (1 + 1e-12)
        steps = 0.125 / dt
        assert steps == pytest.approx(round(steps))
        assert dt == pytest.approx(1 / 64)


class TestKernelOrder:
    @pytest.mark.parametrize("dims, order", [(2, 16), (3, 16), (4, 8), (5, 5), (9, 3)])
    def test_fits_budget(self, dims, order):
        assert kernel_order(16, dims) == order

    def test_reduced_rule_is_usable(self):
        rho = build_mollifier(2, 5, kernel_order(16, 5))
        assert rho.size > 0
        assert rho.is_normalized()


def _report(levels, errors, stderrs):
    return ApproxReport(
        generator="h",
        terminal="phi",
        pde_dt=1 / 64,
        levels=[
            LevelReport(
                level=n,
                n_intervals=2**n,
                mode="running_sum",
                y0=0.0,
                sup_gap=None,
                z_gap=None,
                embedding_error=err,
                embedding_stderr=se,
                oscillation_bound=2 * err,
                generator_gap_bound=0.0,
                m_z=0.0,
                tx_nodes_per_axis=4,
            )
            for n, err, se in zip(levels, errors, stderrs)
        ],
    )


class TestEmbeddingDecay:
    def test_flat_errors_fail(self):
        report = _report([2, 3], [0.4, 0.4], [1e-3, 1e-3])
        assert report.decay_ratios() == pytest.approx([1.0])
        assert not report.embedding_decays(3.0)

    def test_sqrt2_per_level(self):
        report = _report([2, 4], [0.4, 0.19], [1e-3, 1e-3])
        assert report.decay_targets() == pytest.approx([2.0])
        assert report.embedding_decays(3.0)
        assert not _report([2, 3], [0.4, 0.3], [1e-3, 1e-3]).embedding_decays(3.0)

    def test_band_follows_the_standard_errors(self):
        report = _report([2, 3], [0.4, 0.3], [0.03, 0.03])
        # ratio 4/3 with relative errors 0.075 and 0.1
        assert report.decay_bands(3.0)[0] == pytest.approx(3.0 * (4 / 3) * 0.125)
        assert report.embedding_decays(3.0)

    def test_on_scenario_paths(self, bundles):
        errors = [embedding_error(n, bundles) for n in (3, 4)]
        report = _report([3, 4], [e.value for e in errors], [e.estimate.stderr for e in errors])
        ratio, target, band = report.decay_ratios()[0], report.decay_targets()[0], report.decay_bands(3.0)[0]
        assert 0 < band < 0.5
        assert ratio >= target - band
        assert report.embedding_decays(3.0)


class TestPipeline:
    def test_path_free_generator_is_level_invariant(self, band, grid_config, bundles):
        h = build_path_generator("path-free", {"c": 0.2})
        report = approximation_pipeline(h, "zero", None, [1, 2], band, 1.0, grid_config, bundles, nodes_per_axis=4)
        assert [lv.level for lv in report.levels] == [1, 2]
        assert [lv.n_intervals for lv in report.levels] == [2, 4]
        assert report.level_invariant(1e-9)
        assert report.levels[0].y0 == pytest.approx(0.2 * band.var_hi, abs=1e-9)
        assert report.levels[0].sup_gap is None
        assert report.sup_gaps[0] <= 1e-9
        assert report.gaps_nonincreasing()
        assert report.pde_dt == pytest.approx(1 / 64)

    def test_clamp_current_levels(self, band, grid_config, bundles):
        h = build_path_generator("clamp-current")
        report = approximation_pipeline(h, "sin-sum", None, [1, 2, 3], band, 1.0, grid_config, bundles, nodes_per_axis=4)
        assert all(lv.mode == "running_sum" for lv in report.levels)
        assert len(report.sup_gaps) == 2
        assert np.all(np.isfinite(report.sup_gaps))
        assert np.isfinite(report.levels[1].z_gap)
        assert report.gaps_nonincreasing()
        bounds = [lv.generator_gap_bound for lv in report.levels]
        assert bounds[2] < bounds[1] < bounds[0]
        assert report.decay_targets() == pytest.approx([np.sqrt(2.0), np.sqrt(2.0)])

    def test_path_dependent_generator_in_increments_mode(self, band, bundles):
        h = build_path_generator("clamp-average")
        coarse = GridConfig(nodes=21, param_nodes=2, store_steps=None)
        report = approximation_pipeline(h, "zero", None, [1, 2], band, 1.0, coarse, bundles, nodes_per_axis=6)
        assert [lv.mode for lv in report.levels] == ["increments", "increments"]
        # (t, x) kernels on 3 and 5 axes
        assert [lv.tx_nodes_per_axis for lv in report.levels] == [6, 5]
        assert all(np.isfinite(lv.y0) for lv in report.levels)
        assert np.isfinite(report.levels[1].sup_gap)
        assert np.isfinite(report.levels[1].z_gap)

    def test_increment_limit(self, band, grid_config, bundles):
        h = build_path_generator("clamp-average")
        with pytest.raises(ConfigurationError, match="level 3"):
            approximation_pipeline(h, "zero", None, [3], band, 1.0, grid_config, bundles, nodes_per_axis=4)

    @pytest.mark.parametrize("levels", [[], [2, 1], [0, 1]])
    def test_bad_levels(self, band, grid_config, bundles, levels):
        h = build_path_generator("path-free")
        with pytest.raises(ConfigurationError, match="levels"):
            approximation_pipeline(h, "zero", None, levels, band, 1.0, grid_config, bundles)
