import math

import numpy as np
import pytest
from pydantic import ValidationError

from glab.errors import DomainError, ShapeError
from glab.models import GeneratorSpec, HolderModulus, SpaceGrid, TerminalSpec, TimePartition, VolatilityBand


class TestVolatilityBand:
    def test_variances(self, band):
        assert band.var_lo == 0.25
        assert band.var_hi == 1.0
        assert not band.is_degenerate

    def test_degenerate(self):
        assert VolatilityBand(sigma_lo=0.7, sigma_hi=0.7).is_degenerate

    @pytest.mark.parametrize("lo, hi", [(0.0, 1.0), (1.0, 0.5), (-1.0, 1.0), (0.5, math.inf)])
    def test_rejects_bad_bands(self, lo, hi):
        with pytest.raises(ValidationError):
            VolatilityBand(sigma_lo=lo, sigma_hi=hi)


class TestTimePartition:
    def test_uniform(self):
        p = TimePartition.uniform(2.0, 4)
        assert p.times == (0.0, 0.5, 1.0, 1.5, 2.0)
        assert p.n_intervals == 4
        assert p.mesh() == pytest.approx(0.5)

    def test_dyadic_levels_are_nested(self):
        coarse = TimePartition.dyadic(1.0, 2)
        fine = TimePartition.dyadic(1.0, 4)
        assert fine.contains(coarse)
        assert not coarse.contains(fine)

    @pytest.mark.parametrize("times", [(0.0,), (0.1, 1.0), (0.0, 0.5, 0.5, 1.0), (0.0, 0.7, 0.3)])
    def test_rejects_bad_times(self, times):
        with pytest.raises(ValidationError):
            TimePartition(times=times)

    def test_locate_is_left_closed_at_knots(self):
        p = TimePartition.uniform(1.0, 4)
        assert p.locate(0.0) == 1
        assert p.locate(0.25) == 1
        assert p.locate(0.3) == 2
        assert p.locate(1.0) == 4
        with pytest.raises(DomainError):
            p.locate(1.5)


class TestSpaceGrid:
    def test_symmetric(self):
        grid = SpaceGrid.symmetric(6.0, 61)
        assert grid.dx == pytest.approx(0.2)
        assert grid.nodes[30] == pytest.approx(0.0)

    def test_cfl(self, band):
        grid = SpaceGrid.symmetric(6.0, 61)
        assert grid.cfl_dt(band) == pytest.approx(0.4 * 0.04)

    def test_covers(self):
        grid = SpaceGrid.symmetric(1.0, 11)
        np.testing.assert_array_equal(grid.covers(np.array([-1.0, 0.0, 1.0, 1.5])), [True, True, True, False])

    def test_needs_three_nodes(self):
        with pytest.raises(ValidationError):
            SpaceGrid(x_min=0.0, x_max=1.0, m=2)


class TestSpecs:
    def test_generator_checks_increment_count(self):
        f = GeneratorSpec(eval=lambda t, x, y, z: y, n_vars=2, m0=0.0, l_y=1.0, l_z=0.0)
        with pytest.raises(ShapeError):
            f(0.0, np.zeros(3), 0.0, 0.0)

    def test_generator_broadcasts(self):
        f = GeneratorSpec(eval=lambda t, x, y, z: 1.0, n_vars=2, m0=1.0, l_y=0.0, l_z=0.0)
        out = f(np.zeros(5), np.zeros((5, 2)), 0.0, 0.0)
        assert out.shape == (5,)

    def test_sum_reduced_accepts_single_column(self):
        f = GeneratorSpec(
            eval=lambda t, x, y, z: np.sum(x, axis=-1), n_vars=3, m0=0.0, l_y=0.0, l_z=0.0, reduction="sum"
        )
        assert float(f(0.0, np.array([2.0]), 0.0, 0.0)) == 2.0

    def test_negative_constants_rejected(self):
        with pytest.raises(DomainError):
            GeneratorSpec(eval=lambda t, x, y, z: 0.0, n_vars=1, m0=-1.0, l_y=0.0, l_z=0.0)

    def test_terminal_boundedness(self):
        phi = TerminalSpec(phi=lambda x: x[..., 0], n_vars=1, bound=math.inf, lipschitz=1.0)
        assert not phi.is_bounded

    def test_holder_modulus(self):
        w = HolderModulus(2.0, 0.5)
        assert float(w(0.25)) == pytest.approx(1.0)
        with pytest.raises(DomainError):
            HolderModulus(1.0, 1.5)
