"""Power network topology, measurement configuration, and the DC sensitivity matrix.

The grid is described by a plain-text file (``buses N slack S`` header plus
one ``branch FROM TO X`` line per branch). Measurements are bus injections
and branch flows; their linear sensitivities to the non-slack voltage angles
form the dense matrix H used by estimation, attack construction, and data
generation. Everything here is immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

FWD = 1
REV = -1


class GridConfigError(ValueError):
    """Raised for malformed or physically invalid grid/measurement files."""


class UnobservableError(ValueError):
    """Raised when a measurement set cannot observe the full state."""


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    reactance: float


@dataclass(frozen=True)
class BusSystem:
    """Bus/branch topology with a designated slack bus (1-based indices)."""

    n_bus: int
    slack_bus: int
    branches: tuple[Branch, ...]

    @property
    def n_state(self) -> int:
        """Dimension of the angle state vector (slack angle is fixed at 0)."""
        return self.n_bus - 1

    def state_buses(self) -> list[int]:
        """Non-slack buses in ascending order; column order of H."""
        return [b for b in range(1, self.n_bus + 1) if b != self.slack_bus]


@dataclass(frozen=True)
class Injection:
    bus: int


@dataclass(frozen=True)
class LineFlow:
    branch: int  # 1-based index into BusSystem.branches
    direction: int  # FWD measures from->to, REV the reverse


@dataclass(frozen=True)
class MeasurementConfig:
    entries: tuple

    @property
    def n_measurements(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class HMatrix:
    """Dense I x J sensitivity of measurements to non-slack angles."""

    values: np.ndarray

    @property
    def n_measurements(self) -> int:
        return self.values.shape[0]

    @property
    def n_state(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PowerProfile:
    """Base-case active power per bus, per-unit (index 0 = bus 1)."""

    load: np.ndarray
    gen: np.ndarray


def _tokenize(text: str, source: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, line.split(), raw


def parse_bus_system(text: str, source: str = "<string>") -> BusSystem:
    n_bus = None
    slack = None
    branches = []
    for lineno, tokens, raw in _tokenize(text, source):
        if tokens[0] == "buses":
            if len(tokens) != 4 or tokens[2] != "slack":
                raise GridConfigError(
                    f"{source}:{lineno}: expected 'buses N slack S', got {raw!r}"
                )
            try:
                n_bus, slack = int(tokens[1]), int(tokens[3])
            except ValueError:
                raise GridConfigError(f"{source}:{lineno}: non-integer bus count or slack")
        elif tokens[0] == "branch":
            if n_bus is None:
                raise GridConfigError(f"{source}:{lineno}: branch line before buses header")
            if len(tokens) != 4:
                raise GridConfigError(f"{source}:{lineno}: expected 'branch FROM TO X'")
            try:
                f, t, x = int(tokens[1]), int(tokens[2]), float(tokens[3])
            except ValueError:
                raise GridConfigError(f"{source}:{lineno}: malformed branch line {raw!r}")
            if not (1 <= f <= n_bus and 1 <= t <= n_bus):
                raise GridConfigError(f"{source}:{lineno}: branch bus out of range")
            if f == t:
                raise GridConfigError(f"{source}:{lineno}: branch endpoints coincide")
            if not x > 0:
                raise GridConfigError(f"{source}:{lineno}: non-positive reactance {x}")
            branches.append(Branch(f, t, x))
        else:
            raise GridConfigError(f"{source}:{lineno}: unknown directive {tokens[0]!r}")
    if n_bus is None:
        raise GridConfigError(f"{source}: missing 'buses N slack S' header")
    if not 1 <= slack <= n_bus:
        raise GridConfigError(f"{source}: slack bus {slack} out of range 1..{n_bus}")
    system = BusSystem(n_bus, slack, tuple(branches))
    if not _is_connected(system):
        raise GridConfigError(f"{source}: bus graph is disconnected")
    return system


def load_bus_system(path) -> BusSystem:
    path = Path(path)
    return parse_bus_system(path.read_text(), source=str(path))


def _is_connected(system: BusSystem) -> bool:
    if system.n_bus == 1:
        return True
    adj = {b: set() for b in range(1, system.n_bus + 1)}
    for br in system.branches:
        adj[br.from_bus].add(br.to_bus)
        adj[br.to_bus].add(br.from_bus)
    seen = {1}
    stack = [1]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == system.n_bus


def parse_measurement_config(
    text: str, system: BusSystem, source: str = "<string>"
) -> MeasurementConfig:
    entries = []
    for lineno, tokens, raw in _tokenize(text, source):
        if tokens[0] == "inj" and len(tokens) == 2:
            bus = int(tokens[1])
            if not 1 <= bus <= system.n_bus:
                raise GridConfigError(f"{source}:{lineno}: injection bus {bus} out of range")
            entries.append(Injection(bus))
        elif tokens[0] == "flow" and len(tokens) == 3:
            idx = int(tokens[1])
            if not 1 <= idx <= len(system.branches):
                raise GridConfigError(f"{source}:{lineno}: branch index {idx} out of range")
            if tokens[2] not in ("fwd", "rev"):
                raise GridConfigError(f"{source}:{lineno}: direction must be fwd or rev")
            entries.append(LineFlow(idx, FWD if tokens[2] == "fwd" else REV))
        else:
            raise GridConfigError(f"{source}:{lineno}: malformed measurement line {raw!r}")
    if not entries:
        raise GridConfigError(f"{source}: empty measurement configuration")
    return MeasurementConfig(tuple(entries))


def load_measurement_config(path, system: BusSystem) -> MeasurementConfig:
    path = Path(path)
    return parse_measurement_config(path.read_text(), system, source=str(path))


def default_measurement_config(system: BusSystem, n_flows: int = 5) -> MeasurementConfig:
    """Injection at every bus plus flow on the first ``n_flows`` branches."""
    entries = [Injection(b) for b in range(1, system.n_bus + 1)]
    entries += [LineFlow(i, FWD) for i in range(1, min(n_flows, len(system.branches)) + 1)]
    return MeasurementConfig(tuple(entries))


def parse_power_profile(text: str, system: BusSystem, source: str = "<string>") -> PowerProfile:
    load = np.zeros(system.n_bus)
    gen = np.zeros(system.n_bus)
    for lineno, tokens, raw in _tokenize(text, source):
        if tokens[0] not in ("load", "gen") or len(tokens) != 3:
            raise GridConfigError(f"{source}:{lineno}: expected 'load BUS P' or 'gen BUS P'")
        bus, p = int(tokens[1]), float(tokens[2])
        if not 1 <= bus <= system.n_bus:
            raise GridConfigError(f"{source}:{lineno}: bus {bus} out of range")
        (load if tokens[0] == "load" else gen)[bus - 1] = p
    return PowerProfile(load=load, gen=gen)


def load_power_profile(path, system: BusSystem) -> PowerProfile:
    path = Path(path)
    return parse_power_profile(path.read_text(), system, source=str(path))


def bundled_path(name: str) -> Path:
    """Path of a data file shipped with the package (e.g. 'ieee14_grid.txt')."""
    return Path(resources.files("fdiafl.data") / name)


def _flow_row(system: BusSystem, branch: Branch, direction: int, col_of: dict) -> np.ndarray:
    """Sensitivity of the from->to flow (theta_f - theta_t)/x, slack column dropped."""
    row = np.zeros(system.n_state)
    coef = direction / branch.reactance
    if branch.from_bus in col_of:
        row[col_of[branch.from_bus]] += coef
    if branch.to_bus in col_of:
        row[col_of[branch.to_bus]] -= coef
    return row


def build_h(system: BusSystem, config: MeasurementConfig) -> HMatrix:
    """Build the DC measurement matrix, row-ordered exactly as ``config.entries``.

    Injection rows are the sum of the incident flow rows signed out of the
    bus, so the non-slack injection rows form the reduced susceptance
    (Laplacian) matrix. Raises UnobservableError when the rows do not span
    the state space.
    """
    col_of = {bus: j for j, bus in enumerate(system.state_buses())}
    rows = []
    for entry in config.entries:
        if isinstance(entry, Injection):
            row = np.zeros(system.n_state)
            for br in system.branches:
                if br.from_bus == entry.bus:
                    row += _flow_row(system, br, FWD, col_of)
                elif br.to_bus == entry.bus:
                    row += _flow_row(system, br, REV, col_of)
            rows.append(row)
        elif isinstance(entry, LineFlow):
            br = system.branches[entry.branch - 1]
            rows.append(_flow_row(system, br, entry.direction, col_of))
        else:
            raise TypeError(f"unknown measurement entry {entry!r}")
    values = np.array(rows)
    values.setflags(write=False)
    rank = np.linalg.matrix_rank(values)
    if rank < system.n_state:
        raise UnobservableError(
            f"unobservable configuration: rank {rank} < {system.n_state} states"
        )
    return HMatrix(values)


def build_b_reduced(system: BusSystem) -> np.ndarray:
    """Reduced DC susceptance matrix B over non-slack buses (J x J)."""
    inj_config = MeasurementConfig(tuple(Injection(b) for b in system.state_buses()))
    return build_h(system, inj_config).values
