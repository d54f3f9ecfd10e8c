import numpy as np
import pytest
from numpy.testing import assert_allclose

from fdiafl import grid
from fdiafl.rng import substream

from conftest import random_connected_system


def rank_by_elimination(matrix: np.ndarray, tol: float = 1e-10) -> int:
    """Independent rank oracle: plain Gaussian elimination with row pivoting."""
    a = matrix.astype(float).copy()
    rows, cols = a.shape
    rank = 0
    for col in range(cols):
        pivot = None
        for row in range(rank, rows):
            if abs(a[row, col]) > tol:
                pivot = row
                break
        if pivot is None:
            continue
        a[[rank, pivot]] = a[[pivot, rank]]
        a[rank] /= a[rank, col]
        for row in range(rows):
            if row != rank and abs(a[row, col]) > tol:
                a[row] -= a[row, col] * a[rank]
        rank += 1
    return rank


class TestBusSystemParsing:
    def test_ieee14_bundled(self, ieee14):
        assert ieee14.system.n_bus == 14
        assert ieee14.system.slack_bus == 1
        assert len(ieee14.system.branches) == 20
        assert ieee14.system.n_state == 13

    def test_two_bus_minimal(self):
        system = grid.parse_bus_system("buses 2 slack 1\nbranch 1 2 1.0\n")
        assert system.n_state == 1
        assert system.branches[0].reactance == 1.0

    def test_zero_reactance_rejected(self):
        with pytest.raises(grid.GridConfigError, match="non-positive reactance"):
            grid.parse_bus_system("buses 2 slack 1\nbranch 1 2 0.0\n")

    def test_error_names_offending_line(self):
        with pytest.raises(grid.GridConfigError, match=":3:"):
            grid.parse_bus_system("buses 3 slack 1\nbranch 1 2 1.0\nbranch 2 3 -1.0\n")

    def test_disconnected_rejected(self):
        text = "buses 4 slack 1\nbranch 1 2 1.0\nbranch 3 4 1.0\n"
        with pytest.raises(grid.GridConfigError, match="disconnected"):
            grid.parse_bus_system(text)

    def test_self_loop_rejected(self):
        with pytest.raises(grid.GridConfigError, match="coincide"):
            grid.parse_bus_system("buses 2 slack 1\nbranch 1 1 1.0\nbranch 1 2 1.0\n")

    def test_slack_out_of_range(self):
        with pytest.raises(grid.GridConfigError, match="slack"):
            grid.parse_bus_system("buses 2 slack 5\nbranch 1 2 1.0\n")

    def test_missing_header(self):
        with pytest.raises(grid.GridConfigError, match="header"):
            grid.parse_bus_system("branch 1 2 1.0\n")


class TestMeasurementConfig:
    def test_bundled_has_19_meters(self, ieee14):
        assert ieee14.config.n_measurements == 19

    def test_default_matches_bundled(self, ieee14):
        assert grid.default_measurement_config(ieee14.system) == ieee14.config

    def test_bad_direction(self, triangle):
        with pytest.raises(grid.GridConfigError, match="fwd or rev"):
            grid.parse_measurement_config("flow 1 up\n", triangle)

    def test_branch_out_of_range(self, triangle):
        with pytest.raises(grid.GridConfigError, match="out of range"):
            grid.parse_measurement_config("flow 9 fwd\n", triangle)


def _rows_unchecked(system, config):
    """Row construction bypassing the rank gate (pad with observable injections)."""
    full = grid.MeasurementConfig(
        config.entries + tuple(grid.Injection(b) for b in system.state_buses())
    )
    return grid.build_h(system, full).values[: len(config.entries)]


class TestBuildH:
    def test_triangle_flow_row(self, triangle):
        # p_12 = (theta1 - theta2)/x with theta1 = 0 fixed at the slack
        config = grid.MeasurementConfig((grid.LineFlow(1, grid.FWD),))
        assert_allclose(_rows_unchecked(triangle, config), [[-1.0, 0.0]])

    def test_triangle_injection_row(self, triangle):
        # p_2 = (theta2 - theta1) + (theta2 - theta3), all x = 1
        config = grid.MeasurementConfig(
            (grid.Injection(2), grid.Injection(3), grid.LineFlow(1, grid.FWD))
        )
        h = grid.build_h(triangle, config)
        assert_allclose(h.values[0], [2.0, -1.0])

    def test_flow_rev_negates(self, triangle):
        config = grid.MeasurementConfig(
            (grid.Injection(2), grid.Injection(3),
             grid.LineFlow(2, grid.FWD), grid.LineFlow(2, grid.REV))
        )
        h = grid.build_h(triangle, config)
        assert_allclose(h.values[2], -h.values[3])

    def test_ieee14_shape_and_rank(self, ieee14):
        values = ieee14.h.values
        assert values.shape == (19, 13)
        assert rank_by_elimination(values) == 13

    def test_row_ordering_matches_entries(self, ieee14):
        # every row must equal the row built from its entry alone
        for i, entry in enumerate(ieee14.config.entries):
            single = grid.MeasurementConfig((entry, grid.Injection(2), grid.Injection(3),
                                             *(grid.Injection(b) for b in range(4, 15))))
            rebuilt = grid.build_h(ieee14.system, single)
            assert_allclose(ieee14.h.values[i], rebuilt.values[0])

    def test_injection_rows_balance_exact(self, triangle):
        # with 1/x exactly representable, the all-bus injection rows cancel exactly
        config = grid.MeasurementConfig(tuple(grid.Injection(b) for b in range(1, 4)))
        h = grid.build_h(triangle, config)
        assert np.all(h.values.sum(axis=0) == 0.0)

    def test_injection_rows_balance_ieee14(self, ieee14):
        config = grid.MeasurementConfig(
            tuple(grid.Injection(b) for b in range(1, 15))
        )
        h = grid.build_h(ieee14.system, config)
        assert_allclose(h.values.sum(axis=0), np.zeros(13), atol=1e-12)

    def test_unobservable_raises_with_rank(self):
        path = grid.parse_bus_system("buses 3 slack 1\nbranch 1 2 1.0\nbranch 2 3 1.0\n")
        config = grid.MeasurementConfig((grid.LineFlow(1, grid.FWD),))
        with pytest.raises(grid.UnobservableError, match="unobservable configuration: rank 1"):
            grid.build_h(path, config)

    def test_all_bus_injections_observable_on_random_systems(self):
        rng = substream(123, "grid-prop")
        for _ in range(20):
            system = random_connected_system(rng, int(rng.integers(3, 8)))
            config = grid.MeasurementConfig(
                tuple(grid.Injection(b) for b in system.state_buses())
            )
            h = grid.build_h(system, config)
            assert rank_by_elimination(h.values) == system.n_state


def test_build_b_reduced_is_injection_block(ieee14):
    b_red = grid.build_b_reduced(ieee14.system)
    assert b_red.shape == (13, 13)
    # symmetric positive definite for a connected graph
    assert_allclose(b_red, b_red.T)
    assert np.all(np.linalg.eigvalsh(b_red) > 0)
