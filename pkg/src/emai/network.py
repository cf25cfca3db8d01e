"""Dynamic nodal network model in the global DQ frame.

A series RL branch contributes 2x2 impedance blocks
[[r + s*l/w_b, -l], [l, r + s*l/w_b]] and a bus shunt capacitance the
admittance block s*c/w_b * E2 + c*J. The infinite-bus node is an ideal
source and is grounded out of the nodal matrices; at s = 0 the blocks
reduce to the fundamental-frequency phasor network used by the power flow.
"""
from __future__ import annotations

import numpy as np

from .config import SystemConfig
from .errors import NumericalError
from .transfer import E2, J


class NodalNetwork:
    """Evaluable Y_N(s) / Z_N(s) over the active (non-infinite) buses."""

    def __init__(self, config: SystemConfig):
        self.config = config
        self.omega_b = config.omega_b
        self.slack = config.slack_bus
        self.buses = list(config.active_buses)
        self.index = {b: i for i, b in enumerate(self.buses)}
        self.dim = 2 * len(self.buses)

    def block(self, bus_id: str) -> slice:
        i = self.index[bus_id]
        return slice(2 * i, 2 * i + 2)

    def branch_impedance(self, r: float, l: float, s: complex) -> np.ndarray:
        return (r + s * l / self.omega_b) * E2 + l * J

    def y_nodal(self, s: complex) -> np.ndarray:
        """Dynamic nodal admittance Y_N(s), slack node grounded."""
        y = np.zeros((self.dim, self.dim), dtype=complex)
        for br in self.config.branches:
            yb = np.linalg.inv(self.branch_impedance(br.r, br.l, s))
            a = None if br.from_bus == self.slack else self.block(br.from_bus)
            b = None if br.to_bus == self.slack else self.block(br.to_bus)
            if a is not None:
                y[a, a] += yb
            if b is not None:
                y[b, b] += yb
            if a is not None and b is not None:
                y[a, b] -= yb
                y[b, a] -= yb
        for bus in self.buses:
            c = self.config.shunt_of(bus)
            if c > 0.0:
                blk = self.block(bus)
                y[blk, blk] += (s * c / self.omega_b) * E2 + c * J
        return y

    def z_nodal(self, s: complex) -> np.ndarray:
        """Z_N(s) = Y_N(s)^-1; raises NumericalError when Y_N is singular."""
        y = self.y_nodal(s)
        cond = np.linalg.cond(y)
        if not np.isfinite(cond) or cond > 1e14:
            raise NumericalError(
                f"nodal admittance singular at s = {s:.6g} (cond ~ {cond:.2e})")
        return np.linalg.inv(y)

    def ybus_phasor(self) -> tuple[np.ndarray, list[str]]:
        """Fundamental-frequency complex Y-bus over ALL buses (slack included),
        for the power flow: branch 1/(r + j*l), shunt j*c."""
        order = [b.id for b in self.config.buses]
        pos = {b: i for i, b in enumerate(order)}
        n = len(order)
        y = np.zeros((n, n), dtype=complex)
        for br in self.config.branches:
            yb = 1.0 / (br.r + 1j * br.l)
            i, k = pos[br.from_bus], pos[br.to_bus]
            y[i, i] += yb
            y[k, k] += yb
            y[i, k] -= yb
            y[k, i] -= yb
        for bus in order:
            y[pos[bus], pos[bus]] += 1j * self.config.shunt_of(bus)
        return y, order


def network_impedance(config: SystemConfig) -> NodalNetwork:
    """Build the evaluable dynamic network; Z_N(s) is `result.z_nodal`."""
    return NodalNetwork(config)
