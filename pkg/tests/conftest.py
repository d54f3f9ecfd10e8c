import numpy as np
import pytest

from fdiafl import grid


class GridStack:
    """IEEE 14-bus system with the default 19-meter configuration."""

    def __init__(self):
        self.system = grid.load_bus_system(grid.bundled_path("ieee14_grid.txt"))
        self.config = grid.load_measurement_config(
            grid.bundled_path("ieee14_measurements.txt"), self.system
        )
        self.h = grid.build_h(self.system, self.config)
        self.profile = grid.load_power_profile(
            grid.bundled_path("ieee14_loads.txt"), self.system
        )


@pytest.fixture(scope="session")
def ieee14() -> GridStack:
    return GridStack()


TRIANGLE_TEXT = """
buses 3 slack 1
branch 1 2 1.0
branch 2 3 1.0
branch 1 3 1.0
"""


@pytest.fixture()
def triangle() -> grid.BusSystem:
    """3-bus triangle, all reactances 1, slack at bus 1."""
    return grid.parse_bus_system(TRIANGLE_TEXT)


def random_connected_system(rng: np.random.Generator, n_bus: int) -> grid.BusSystem:
    """Random spanning tree plus a few extra branches; reactances in [0.05, 0.5]."""
    branches = []
    for bus in range(2, n_bus + 1):
        other = int(rng.integers(1, bus))
        branches.append(grid.Branch(other, bus, float(rng.uniform(0.05, 0.5))))
    for _ in range(int(rng.integers(0, n_bus))):
        a, b = rng.choice(np.arange(1, n_bus + 1), size=2, replace=False)
        branches.append(grid.Branch(int(a), int(b), float(rng.uniform(0.05, 0.5))))
    slack = int(rng.integers(1, n_bus + 1))
    return grid.BusSystem(n_bus, slack, tuple(branches))
