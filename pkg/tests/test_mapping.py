"""Equal-area disk/square maps and the equal-flux target prescription."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lumenforge import optics as op
from lumenforge.designgen import mapping


class TestConcentricMap:
    def test_center_fixed_point(self):
        assert mapping.disk_to_square(0.0, 0.0) == (0.0, 0.0)
        u, v = mapping.square_to_disk(0.0, 0.0)
        assert float(u) == 0.0 and float(v) == 0.0

    def test_diagonal_maps_to_corner(self):
        sx, sy = mapping.disk_to_square(math.cos(math.pi / 4), math.sin(math.pi / 4))
        assert sx == pytest.approx(1.0, abs=1e-12)
        assert sy == pytest.approx(1.0, abs=1e-12)

    def test_axis_points(self):
        assert mapping.disk_to_square(1.0, 0.0) == pytest.approx((1.0, 0.0), abs=1e-12)
        assert mapping.disk_to_square(0.0, 1.0) == pytest.approx((0.0, 1.0), abs=1e-12)
        assert mapping.disk_to_square(-1.0, 0.0) == pytest.approx((-1.0, 0.0), abs=1e-12)
        assert mapping.disk_to_square(0.0, -1.0) == pytest.approx((0.0, -1.0), abs=1e-12)

    def test_round_trip_square_disk_square(self):
        rng = np.random.default_rng(31)
        sx = rng.uniform(-1.0, 1.0, 10_000)
        sy = rng.uniform(-1.0, 1.0, 10_000)
        u, v = mapping.square_to_disk(sx, sy)
        assert np.all(u * u + v * v <= 1.0 + 1e-12)
        bx, by = mapping.disk_to_square(u, v)
        assert np.abs(bx - sx).max() < 1e-12
        assert np.abs(by - sy).max() < 1e-12

    def test_round_trip_disk_square_disk(self):
        rng = np.random.default_rng(32)
        r = np.sqrt(rng.uniform(0.0, 1.0, 5_000))
        phi = rng.uniform(-math.pi, math.pi, 5_000)
        u, v = r * np.cos(phi), r * np.sin(phi)
        sx, sy = mapping.disk_to_square(u, v)
        u2, v2 = mapping.square_to_disk(sx, sy)
        assert np.abs(u2 - u).max() < 1e-12
        assert np.abs(v2 - v).max() < 1e-12

    def test_equal_area_property(self):
        # any disk region of area a maps to a square region of area (4/pi) a:
        # uniform samples on the disk stay uniform on the square
        rng = np.random.default_rng(33)
        n = 200_000
        r = np.sqrt(rng.uniform(0.0, 1.0, n))
        phi = rng.uniform(-math.pi, math.pi, n)
        sx, sy = mapping.disk_to_square(r * np.cos(phi), r * np.sin(phi))
        counts, _, _ = np.histogram2d(sx, sy, bins=10, range=[[-1, 1], [-1, 1]])
        expected = n / 100.0
        # 3.5 sigma on 100 multinomial cells
        assert np.abs(counts - expected).max() < 3.5 * math.sqrt(expected)

    @given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
    @settings(max_examples=200, deadline=None)
    def test_square_to_disk_stays_in_disk(self, sx, sy):
        u, v = mapping.square_to_disk(sx, sy)
        assert float(u) ** 2 + float(v) ** 2 <= 1.0 + 1e-12


class TestTargetMap:
    def test_on_axis_hits_center(self):
        scenario = op.Scenario.lens()
        target = op.RectTarget(3000.0, 2000.0, 1200.0)
        pt = mapping.target_map(scenario, target, np.array([0.0, 0.0, 1.0]))
        assert np.abs(pt).max() < 1e-12

    def test_cone_edge_diagonal_hits_corner(self):
        scenario = op.Scenario.lens()
        target = op.RectTarget(3000.0, 2000.0, 1200.0)
        t = scenario.cone_half_angle
        d = np.array([math.sin(t) * math.cos(math.pi / 4),
                      math.sin(t) * math.sin(math.pi / 4),
                      math.cos(t)])
        pt = mapping.target_map(scenario, target, d)
        assert pt[0] == pytest.approx(1500.0, abs=1e-9)
        assert pt[1] == pytest.approx(1000.0, abs=1e-9)

    def test_reflector_offset_center(self):
        scenario = op.Scenario.reflector()
        target = op.OffsetTarget(350.0, -120.0)
        pt = mapping.target_map(scenario, target, np.array([0.0, 0.0, 1.0]))
        assert pt[0] == pytest.approx(350.0, abs=1e-12)
        assert pt[1] == pytest.approx(-120.0, abs=1e-12)

    def test_pushforward_is_uniform(self):
        # Monte Carlo pushforward oracle: the ideal map alone (no optics)
        # should illuminate the rectangle uniformly
        scenario = op.Scenario.lens()
        target = op.RectTarget(3000.0, 3000.0, 1200.0)
        rng = op._substream(77, 0)
        d = op.sample_lambertian(scenario.cone_half_angle, rng, 1_000_000)
        pts = mapping.target_map(scenario, target, d)
        grid, _, _ = np.histogram2d(pts[:, 1], pts[:, 0], bins=scenario.grid_n,
                                    range=[[-1500, 1500], [-1500, 1500]])
        irr = op.IrradianceMap(grid=grid, extent=(0, 0, 3000, 3000), rays_launched=0,
                               rays_binned=0, rays_spilled=0, rays_lost=0)
        smoothed = op.smooth(irr, scenario.kernel_px)
        assert op.nonuniformity(smoothed) < 2.0


class TestEqualFluxDirections:
    def test_grid_size_and_cone_bound(self):
        d = mapping.equal_flux_directions(math.radians(70.0), 32)
        assert d.shape == (1024, 3)
        theta = np.arccos(d[:, 2])
        assert theta.max() <= math.radians(70.0) + 1e-9
        assert np.abs(np.linalg.norm(d, axis=1) - 1.0).max() < 1e-12

    def test_directions_carry_equal_flux(self):
        # each direction's square cell holds the same Lambertian flux; check
        # by mapping a dense Lambertian sample back to the square and counting
        cone = math.radians(70.0)
        rng = op._substream(5, 1)
        sample = op.sample_lambertian(cone, rng, 400_000)
        theta = np.arccos(sample[:, 2])
        phi = np.arctan2(sample[:, 1], sample[:, 0])
        rho = np.sin(theta) / math.sin(cone)
        sx, sy = mapping.disk_to_square(rho * np.cos(phi), rho * np.sin(phi))
        counts, _, _ = np.histogram2d(sx, sy, bins=8, range=[[-1, 1], [-1, 1]])
        expected = 400_000 / 64.0
        assert np.abs(counts - expected).max() < 4.0 * math.sqrt(expected)
