import itertools
import math

import numpy as np
import pytest

from tilescope.errors import FitDegenerateError, ParameterError
from tilescope.imaging import Channel
from tilescope.planner import (
    ROI,
    AcquisitionParams,
    FocusPlane,
    OverviewRegion,
    StitchMode,
    TravelMode,
    compute_tile_grid,
    fit_focus_plane,
    interpolate_z,
    plan_route,
    route_length,
    schedule,
    z_stack_offsets,
)


def brute_force_route(points):
    """Exhaustive shortest open path starting anywhere: the TSP oracle."""
    n = len(points)
    best, best_len = None, math.inf
    for perm in itertools.permutations(range(n)):
        length = route_length(points, list(perm))
        if length < best_len:
            best, best_len = list(perm), length
    return best, best_len


class TestTileGrid:
    def test_1360_um_fov_counts_on_5mm_square(self):
        roi = ROI(0, (0.0, 0.0, 5000.0, 5000.0))
        plan0 = compute_tile_grid(roi, (1360.0, 1360.0), 0.0)
        assert (plan0.rows, plan0.cols, plan0.n_tiles) == (5, 5, 25)
        plan20 = compute_tile_grid(roi, (1360.0, 1360.0), 0.20)
        assert (plan20.rows, plan20.cols, plan20.n_tiles) == (6, 6, 36)

    def test_centers_follow_stride_arithmetic(self):
        roi = ROI(1, (100.0, 200.0, 2100.0, 1200.0))
        fov, overlap = (800.0, 500.0), 0.25
        plan = compute_tile_grid(roi, fov, overlap)
        stride_x, stride_y = 800.0 * 0.75, 500.0 * 0.75
        assert plan.cols == math.ceil(2000.0 / stride_x) + 1
        assert plan.rows == math.ceil(1000.0 / stride_y) + 1
        for r in range(plan.rows):
            for c in range(plan.cols):
                assert plan.centers[r, c, 0] == pytest.approx(100.0 + 400.0 + c * stride_x)
                assert plan.centers[r, c, 1] == pytest.approx(200.0 + 250.0 + r * stride_y)

    def test_coverage_of_the_full_extent(self):
        roi = ROI(0, (0.0, 0.0, 3333.0, 777.0))
        plan = compute_tile_grid(roi, (400.0, 300.0), 0.1)
        right = plan.centers[-1, -1, 0] + 200.0
        bottom = plan.centers[-1, -1, 1] + 150.0
        assert right >= 3333.0 and bottom >= 777.0

    def test_single_tile_when_fov_covers_roi(self):
        roi = ROI(0, (0.0, 0.0, 100.0, 100.0))
        plan = compute_tile_grid(roi, (1360.0, 1360.0), 0.2)
        assert plan.n_tiles == 4  # ceil(100/1088)=1, +1 per axis

    def test_cell_maps_indices_row_major(self):
        plan = compute_tile_grid(ROI(0, (0, 0, 2000, 2000)), (800.0, 800.0), 0.0)
        assert plan.cell(0) == (0, 0)
        assert plan.cell(plan.cols) == (1, 0)
        assert plan.cell(plan.cols + 2) == (1, 2)

    def test_invalid_overlap_rejected(self):
        roi = ROI(0, (0, 0, 100, 100))
        for bad in (-0.1, 1.0, 1.5):
            with pytest.raises(ParameterError):
                compute_tile_grid(roi, (50.0, 50.0), bad)


class TestSchedule:
    def test_18_hours_at_10_minutes_gives_109_steps(self):
        params = AcquisitionParams(duration_h=18.0, interval_min=10.0)
        times = schedule(params)
        assert len(times) == 109
        assert times[0] == 0.0
        assert times[1] == 10.0
        assert times[-1] == pytest.approx(1080.0)

    def test_interval_exactly_dividing_duration_includes_endpoint(self):
        params = AcquisitionParams(duration_h=1.0, interval_min=30.0)
        assert schedule(params) == [0.0, 30.0, 60.0]

    def test_partial_last_interval_is_dropped(self):
        params = AcquisitionParams(duration_h=1.0, interval_min=45.0)
        assert schedule(params) == [0.0, 45.0]

    def test_float_arithmetic_does_not_lose_the_endpoint(self):
        params = AcquisitionParams(duration_h=0.3, interval_min=6.0)
        assert len(schedule(params)) == 4  # 0, 6, 12, 18 minutes


class TestZStack:
    def test_offsets_centered_on_midpoint(self):
        params = AcquisitionParams(z_min_um=10.0, z_max_um=14.0, z_step_um=2.0)
        assert z_stack_offsets(params) == pytest.approx([-2.0, 0.0, 2.0])

    def test_uneven_range_keeps_step_from_minimum(self):
        params = AcquisitionParams(z_min_um=0.0, z_max_um=5.0, z_step_um=2.0)
        offsets = z_stack_offsets(params)
        assert len(offsets) == 3
        assert offsets == pytest.approx([-2.5, -0.5, 1.5])

    def test_zero_step_is_single_slice(self):
        params = AcquisitionParams()
        assert z_stack_offsets(params) == [0.0]


class TestRoutes:
    def test_heuristic_within_5_percent_of_brute_force_small(self, rng):
        worst = 0.0
        for _ in range(50):
            n = int(rng.integers(4, 9))
            points = rng.uniform(0, 1000, size=(n, 2))
            route = plan_route(points, TravelMode.TSP)
            assert sorted(route) == list(range(n))
            _, optimal = brute_force_route(points)
            ratio = route_length(points, route) / optimal
            worst = max(worst, ratio)
        assert worst <= 1.05

    def test_two_opt_never_worse_than_greedy_start(self, rng):
        from tilescope.planner import _nearest_neighbor

        for _ in range(100):
            points = rng.uniform(0, 1000, size=(36, 2))
            greedy = _nearest_neighbor(points)
            improved = plan_route(points, TravelMode.TSP)
            assert route_length(points, improved) <= route_length(points, greedy) + 1e-9

    def test_unit_square_perimeter(self):
        # Corners supplied out of order; shortest open path walks the perimeter.
        points = np.array([[0.0, 1.0], [1.0, 0.0], [1.0, 1.0], [0.0, 0.0]])
        route = plan_route(points, TravelMode.TSP)
        assert route_length(points, route) == pytest.approx(3.0)

    def test_collinear_shuffle_becomes_monotone_sweep(self, rng):
        xs = np.arange(7, dtype=np.float64) * 13.0
        for _ in range(20):
            order = rng.permutation(7)
            points = np.column_stack([xs[order], np.zeros(7)])
            route = plan_route(points, TravelMode.TSP)
            swept = points[np.asarray(route), 0]
            assert np.all(np.diff(swept) > 0) or np.all(np.diff(swept) < 0)

    def test_grid_route_shorter_than_row_major(self, rng):
        plan = compute_tile_grid(ROI(0, (0, 0, 5000, 5000)), (1360.0, 1360.0), 0.2)
        points = plan.centers.reshape(-1, 2)
        tsp = plan_route(points, TravelMode.TSP)
        row_major = list(range(len(points)))
        assert route_length(points, tsp) <= route_length(points, row_major)

    def test_user_defined_order_is_preserved(self):
        points = np.array([[0.0, 0.0], [10.0, 0.0], [5.0, 5.0]])
        order = [2, 0, 1]
        assert plan_route(points, TravelMode.USER_DEFINED, order) == order

    def test_user_defined_requires_a_permutation(self):
        points = np.zeros((3, 2))
        with pytest.raises(ParameterError):
            plan_route(points, TravelMode.USER_DEFINED, [0, 1])
        with pytest.raises(ParameterError):
            plan_route(points, TravelMode.USER_DEFINED, [0, 1, 1])


class TestFocusPlane:
    def test_exact_recovery_from_corners(self, rng):
        for _ in range(100):
            a, b = rng.uniform(-0.01, 0.01, size=2)
            c = rng.uniform(-50, 50)
            corners = [(0.0, 0.0), (5000.0, 0.0), (5000.0, 5000.0), (0.0, 5000.0)]
            measurements = [(x, y, a * x + b * y + c) for x, y in corners]
            plane = fit_focus_plane(measurements)
            assert plane.a == pytest.approx(a, abs=1e-9)
            assert plane.b == pytest.approx(b, abs=1e-9)
            assert plane.c == pytest.approx(c, abs=1e-9)
            assert plane.residual_rms < 1e-9

    def test_three_points_fit_exactly(self):
        measurements = [(0.0, 0.0, 5.0), (100.0, 0.0, 6.0), (0.0, 100.0, 4.0)]
        plane = fit_focus_plane(measurements)
        for x, y, z in measurements:
            assert interpolate_z(plane, (x, y)) == pytest.approx(z, abs=1e-12)

    def test_overdetermined_least_squares_median_plane(self):
        # Symmetric +/- residuals around a flat plane average out.
        measurements = [(0, 0, 10.1), (100, 0, 9.9), (0, 100, 10.1), (100, 100, 9.9)]
        plane = fit_focus_plane(measurements)
        assert interpolate_z(plane, (50.0, 50.0)) == pytest.approx(10.0, abs=1e-9)

    def test_collinear_points_degenerate(self):
        measurements = [(0.0, 0.0, 1.0), (10.0, 10.0, 2.0), (20.0, 20.0, 3.0)]
        with pytest.raises(FitDegenerateError):
            fit_focus_plane(measurements)

    def test_too_few_points_degenerate(self):
        with pytest.raises(FitDegenerateError):
            fit_focus_plane([(0.0, 0.0, 1.0), (1.0, 0.0, 2.0)])

    def test_interpolation_is_affine(self):
        plane = FocusPlane(0.001, -0.002, 7.0)
        assert interpolate_z(plane, (1000.0, 500.0)) == pytest.approx(0.001 * 1000 - 0.002 * 500 + 7.0)


class TestParams:
    def test_defaults_are_valid(self):
        assert AcquisitionParams().field_errors() == {}

    def test_field_errors_name_offending_fields(self):
        params = AcquisitionParams(duration_h=0.0, interval_min=-1.0, overlap=1.5)
        errors = params.field_errors()
        assert set(errors) == {"duration_h", "interval_min", "overlap"}

    def test_validate_raises_with_all_fields(self):
        params = AcquisitionParams(interval_min=0.0, bit_depth=12)
        with pytest.raises(ParameterError, match="interval"):
            params.validate()

    def test_z_consistency_rules(self):
        assert "z_min_um" in AcquisitionParams(z_min_um=5.0, z_max_um=1.0).field_errors()
        assert "z_step_um" in AcquisitionParams(z_min_um=0.0, z_max_um=4.0,
                                                z_step_um=0.0).field_errors()

    def test_autofocus_cadence(self):
        beginning_only = AcquisitionParams()
        assert beginning_only.is_autofocus_step(0)
        assert not beginning_only.is_autofocus_step(1)
        every3 = AcquisitionParams(af_update_every=3)
        assert [t for t in range(7) if every3.is_autofocus_step(t)] == [0, 3, 6]

    def test_channel_exposures_validated(self):
        assert "channels" in AcquisitionParams(channels={}).field_errors()
        assert "channels" in AcquisitionParams(channels={Channel.PC: 0.0}).field_errors()

    def test_string_inputs_coerced_to_enums(self):
        params = AcquisitionParams(channels={"FL": 25.0}, stitch_mode="GridBF",
                                   travel_mode="UserDefined")
        assert params.channels == {Channel.FL: 25.0}
        assert params.stitch_mode is StitchMode.GRID_BF
        assert params.travel_mode is TravelMode.USER_DEFINED


class TestRegions:
    def test_overview_contains_roi(self):
        region = OverviewRegion((0.0, 0.0), (1000.0, 1000.0))
        assert region.contains((100.0, 100.0, 900.0, 900.0))
        assert not region.contains((-1.0, 0.0, 500.0, 500.0))
        assert not region.contains((500.0, 500.0, 1500.0, 900.0))

    def test_degenerate_rectangles_rejected(self):
        with pytest.raises(ParameterError):
            OverviewRegion((100.0, 0.0), (100.0, 1000.0))
        with pytest.raises(ParameterError):
            ROI(0, (10.0, 10.0, 10.0, 20.0))

    def test_stitch_mode_registration_channel(self):
        assert StitchMode.NO_OVERLAP.registration_channel is None
        assert StitchMode.GRID_BF.registration_channel is Channel.BF
        assert StitchMode.GRID_PC.registration_channel is Channel.PC
