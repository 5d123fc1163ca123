"""
Тесты для модуля geogrid
"""

import math
import sys
import unittest
from pathlib import Path

import numpy as np

# Добавляем путь к модулям
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from seaice_workbench.errors import (
    ChartCoverageError,
    DegenerateFootprintError,
    GeometryError,
    ProjectionError,
)
from seaice_workbench.geogrid import (
    EARTH_RADIUS_KM,
    ConcentrationChart,
    Footprint,
    GeoPoint,
    Hemisphere,
    PassDirection,
    PlanePoint,
    correct_quicklook_orientation,
    derive_pass_direction,
    footprint_centroid,
    footprint_contains,
    footprint_from_plane,
    reconcile_pass_direction,
    resample_chart_to_footprint,
    stereo_forward,
    stereo_forward_arrays,
    stereo_inverse,
    stereo_inverse_arrays,
)


def make_footprint(lats, lons, direction=PassDirection.ASCENDING):
    corners = tuple(GeoPoint(la, lo) for la, lo in zip(lats, lons))
    return Footprint(corners, direction)


def square_plane_footprint(x0, y0, x1, y1, hemisphere=Hemisphere.SOUTH):
    """Контур с углами TL, TR, BR, BL на плоскости"""
    corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    return footprint_from_plane(corners, hemisphere, PassDirection.ASCENDING)


class TestProjection(unittest.TestCase):
    """Тесты полярной стереографической проекции"""

    def test_pole_maps_to_origin(self):
        q = stereo_forward(GeoPoint(-90.0, 123.0), Hemisphere.SOUTH)
        self.assertAlmostEqual(q.x, 0.0, places=9)
        self.assertAlmostEqual(q.y, 0.0, places=9)

    def test_known_point(self):
        """ρ = 2R·tan(10°) для широты −70 в южной проекции"""
        q = stereo_forward(GeoPoint(-70.0, 0.0), Hemisphere.SOUTH)
        expected = 2.0 * EARTH_RADIUS_KM * math.tan(math.radians(10.0))
        self.assertAlmostEqual(q.x, 0.0, places=9)
        self.assertAlmostEqual(q.y, expected, places=9)
        self.assertAlmostEqual(q.y, 2246.76, places=1)

    def test_inverse_examples(self):
        p = stereo_inverse(PlanePoint(0.0, 0.0), Hemisphere.SOUTH)
        self.assertEqual(p.lat, -90.0)
        rho = 2.0 * EARTH_RADIUS_KM * math.tan(math.radians(10.0))
        p = stereo_inverse(PlanePoint(0.0, rho), Hemisphere.SOUTH)
        self.assertAlmostEqual(p.lat, -70.0, places=6)
        self.assertAlmostEqual(p.lon, 0.0, places=6)

    def test_antipodal_point_rejected(self):
        with self.assertRaises(ProjectionError):
            stereo_forward(GeoPoint(90.0, 0.0), Hemisphere.SOUTH)
        with self.assertRaises(ProjectionError):
            stereo_forward(GeoPoint(-90.0, 0.0), Hemisphere.NORTH)

    def test_round_trip_random_points(self):
        """Прямое и обратное преобразования согласованы до 1e-9 градуса"""
        rng = np.random.default_rng(1)
        for hemisphere, sign in ((Hemisphere.NORTH, 1.0), (Hemisphere.SOUTH, -1.0)):
            lat = sign * rng.uniform(45.0, 89.999, size=10_000)
            lon = rng.uniform(-179.999, 180.0, size=10_000)
            x, y = stereo_forward_arrays(lat, lon, hemisphere)
            lat2, lon2 = stereo_inverse_arrays(x, y, hemisphere)
            self.assertLess(np.max(np.abs(lat2 - lat)), 1e-9)
            dlon = np.mod(lon2 - lon + 180.0, 360.0) - 180.0
            self.assertLess(np.max(np.abs(dlon)), 1e-9)

    def test_geopoint_validation(self):
        with self.assertRaises(GeometryError):
            GeoPoint(91.0, 0.0)
        with self.assertRaises(GeometryError):
            GeoPoint(float("nan"), 0.0)
        self.assertEqual(GeoPoint(-60.0, 190.0).lon, -170.0)
        self.assertEqual(GeoPoint(-60.0, -180.0).lon, 180.0)


class TestPassDirection(unittest.TestCase):
    """Тесты определения и сверки направления прохода"""

    def test_ascending_and_descending(self):
        f = make_footprint([-60, -60, -62, -62], [0, 10, 10, 0])
        self.assertEqual(derive_pass_direction(f), PassDirection.ASCENDING)
        f = make_footprint([-62, -62, -60, -60], [0, 10, 10, 0])
        self.assertEqual(derive_pass_direction(f), PassDirection.DESCENDING)

    def test_equal_latitudes_rejected(self):
        f = make_footprint([-61, -60, -62, -61], [0, 10, 10, 5])
        with self.assertRaises(DegenerateFootprintError):
            derive_pass_direction(f)

    def test_depends_only_on_corners_0_and_3(self):
        rng = np.random.default_rng(2)
        base_lats = [-60.0, -60.5, -62.5, -62.0]
        expected = derive_pass_direction(make_footprint(base_lats, [0, 10, 10, 0]))
        for _ in range(200):
            lats = list(base_lats)
            lats[1] = rng.uniform(-70, -55)
            lats[2] = rng.uniform(-70, -55)
            lons = list(rng.uniform(-180, 180, size=4))
            self.assertEqual(derive_pass_direction(make_footprint(lats, lons)), expected)

    def test_reconcile(self):
        r = reconcile_pass_direction(PassDirection.ASCENDING, PassDirection.ASCENDING)
        self.assertTrue(r.consistent)
        self.assertFalse(r.needs_correction)
        r = reconcile_pass_direction(PassDirection.ASCENDING, PassDirection.DESCENDING)
        self.assertFalse(r.consistent)
        self.assertTrue(r.needs_correction)
        r = reconcile_pass_direction("DESCENDING", "descending")
        self.assertTrue(r.consistent)

    def test_orientation_correction(self):
        image = np.array([[1.0, 2.0], [3.0, 4.0]])[..., None]
        bad = reconcile_pass_direction(PassDirection.ASCENDING, PassDirection.DESCENDING)
        good = reconcile_pass_direction(PassDirection.ASCENDING, PassDirection.ASCENDING)
        corrected = correct_quicklook_orientation(image, bad)
        np.testing.assert_array_equal(corrected[..., 0], [[4.0, 3.0], [2.0, 1.0]])
        np.testing.assert_array_equal(correct_quicklook_orientation(corrected, bad), image)
        np.testing.assert_array_equal(correct_quicklook_orientation(image, good), image)

    def test_correction_keeps_channels(self):
        rng = np.random.default_rng(3)
        image = rng.random((5, 7, 2))
        bad = reconcile_pass_direction(PassDirection.DESCENDING, PassDirection.ASCENDING)
        corrected = correct_quicklook_orientation(image, bad)
        np.testing.assert_array_equal(corrected[0, 0], image[-1, -1])


class TestResampling(unittest.TestCase):
    """Тесты пересэмплирования карты на контур снимка"""

    def make_chart(self, grid, spacing=10.0):
        return ConcentrationChart(np.asarray(grid, dtype=float), PlanePoint(0.0, 0.0), spacing, Hemisphere.SOUTH)

    def test_constant_chart(self):
        grid = np.zeros((4, 4, 2))
        grid[..., 0] = 0.7
        grid[..., 1] = 0.1
        chart = self.make_chart(grid)
        for out_h, out_w in ((3, 3), (8, 5), (1, 1)):
            f = square_plane_footprint(3.0, -4.0, 21.0, -27.0)
            patch = resample_chart_to_footprint(chart, f, out_h, out_w)
            self.assertEqual(patch.data.shape, (out_h, out_w, 2))
            np.testing.assert_allclose(patch.concentration, 0.7, atol=1e-12)
            np.testing.assert_allclose(patch.uncertainty, 0.1, atol=1e-12)

    def test_center_pixel_bilinear(self):
        grid = np.zeros((2, 2, 2))
        grid[1, :, 0] = 1.0
        chart = self.make_chart(grid)
        f = square_plane_footprint(2.0, -2.0, 8.0, -8.0)
        patch = resample_chart_to_footprint(chart, f, 3, 3)
        self.assertAlmostEqual(patch.concentration[1, 1], 0.5, places=9)

    def test_output_bounded_by_chart(self):
        rng = np.random.default_rng(4)
        chart = self.make_chart(rng.random((6, 6, 2)))
        f = square_plane_footprint(5.0, -7.0, 44.0, -38.0)
        patch = resample_chart_to_footprint(chart, f, 16, 16)
        for k in range(2):
            self.assertGreaterEqual(patch.data[..., k].min(), chart.grid[..., k].min() - 1e-12)
            self.assertLessEqual(patch.data[..., k].max(), chart.grid[..., k].max() + 1e-12)

    def test_coverage_error(self):
        chart = self.make_chart(np.full((2, 2, 2), 0.5))
        f = square_plane_footprint(2.0, -2.0, 25.0, -8.0)
        with self.assertRaises(ChartCoverageError):
            resample_chart_to_footprint(chart, f, 4, 4)

    def test_chart_validation(self):
        with self.assertRaises(GeometryError):
            self.make_chart(np.full((2, 2, 2), 1.5))
        with self.assertRaises(GeometryError):
            self.make_chart(np.full((2, 2), 0.5))
        with self.assertRaises(GeometryError):
            self.make_chart(np.full((2, 2, 2), 0.5), spacing=0.0)


class TestFootprint(unittest.TestCase):
    """Тесты контуров снимков"""

    def test_degenerate_corners(self):
        with self.assertRaises(DegenerateFootprintError):
            make_footprint([-60, -60, -62, -60], [0, 10, 10, 0])

    def test_contains_centroid(self):
        f = make_footprint([-60, -60, -62, -62], [0, 10, 10, 0])
        self.assertTrue(footprint_contains(f, footprint_centroid(f)))
        self.assertFalse(footprint_contains(f, GeoPoint(-70.0, 5.0)))
        self.assertFalse(footprint_contains(f, GeoPoint(60.0, 5.0)))

    def test_contains_across_antimeridian(self):
        f = make_footprint([-60, -60, -62, -62], [175, -175, -175, 175])
        self.assertTrue(footprint_contains(f, GeoPoint(-61.0, 180.0)))
        self.assertFalse(footprint_contains(f, GeoPoint(-61.0, 0.0)))

    def test_hemisphere(self):
        self.assertEqual(make_footprint([70, 70, 72, 72], [0, 10, 10, 0]).hemisphere, Hemisphere.NORTH)
        self.assertEqual(Hemisphere.parse("s"), Hemisphere.SOUTH)


if __name__ == "__main__":
    unittest.main()
