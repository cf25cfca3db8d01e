"""Linearized state-space models: single devices and the whole system.

This is the package's cross-validation oracle. Device and network blocks
are assembled into one real A matrix whose eigenvalues, participation
factors, and port transfers are compared against the frequency-domain
path. Bus voltages are states because every bus carries a (possibly
default) shunt capacitance; the infinite bus enters as a disturbance
input, and every active bus also gets a current-injection port so that
C (sE - A)^-1 B reproduces the whole-system impedance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .config import GflParams, SystemConfig
from .errors import NumericalError
from .powerflow import GflOperatingPoint, OperatingPoint
from .transfer import E2, J, rotation

#: state names forming the electromagnetic group of a source
ED_STATES = ("i_d", "i_q", "gamma_d", "gamma_q", "u_dc", "gamma_dc",
             "pade_1", "pade_2", "pade_3", "pade_4")
#: state names forming the synchronization group of a source
SD_STATES = ("theta", "phi_pll")


@dataclass
class StateSpaceModel:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    state_labels: list[tuple[str, str]]
    input_labels: list[str]
    output_labels: list[str]

    @property
    def order(self) -> int:
        return self.a.shape[0]

    def transfer(self, s: complex) -> np.ndarray:
        """Frequency response C (sE - A)^-1 B + D."""
        n = self.order
        return self.c @ np.linalg.solve(s * np.eye(n) - self.a, self.b) + self.d


def gfl_state_space(params: GflParams, op: GflOperatingPoint, omega_b: float,
                    pade_order: int = 0) -> StateSpaceModel:
    """Linearized model of one grid-following inverter.

    States: filter currents, current-loop integrators, PLL angle and
    integrator, optionally the DC-link voltage with its integrator and
    Pade delay states. Input is the bus voltage in the global frame;
    outputs are the port current drawn through the device (so the transfer
    IS the global-frame admittance) and the PLL frequency deviation.

    The frame swing is linearized with both steady-state coupling terms:
    local voltage u_loc = T^-1 u - U_m0*theta and port current
    j = T(-i_loc + I_m0*theta).
    """
    if pade_order not in (0, 1, 2):
        raise ValueError(f"pade order must be 0, 1 or 2, got {pade_order}")
    has_delay = pade_order > 0 and params.t_s > 0.0
    has_dvl = params.dvl is not None

    labels = [(op.bus, n) for n in ("i_d", "i_q", "gamma_d", "gamma_q",
                                    "theta", "phi_pll")]
    if has_dvl:
        labels += [(op.bus, "u_dc"), (op.bus, "gamma_dc")]
    if has_delay:
        labels += [(op.bus, f"pade_{k + 1}") for k in range(2 * pade_order)]
    n = len(labels)
    idx = {name: k for k, (_, name) in enumerate(labels)}

    t = rotation(op.theta0)
    u_m0 = np.array([-op.u_q0, op.u_d0])
    i_m0 = np.array([-op.i_q0, op.i_d0])

    a = np.zeros((n, n))
    b = np.zeros((n, 2))

    # local bus voltage: u_loc = T^-1 u_DQ - U_m0 * theta
    cu_x = np.zeros((2, n))
    cu_x[:, idx["theta"]] = -u_m0
    cu_u = t.T

    # current reference (d axis driven by the DVL when present)
    iref = np.zeros((2, n))
    if has_dvl:
        iref[0, idx["u_dc"]] = params.dvl.kp_dvl
        iref[0, idx["gamma_dc"]] = params.dvl.ki_dvl

    # raw control voltage w = kp*(iref - i) + ki*gamma
    w = params.kp_ccl * iref
    w[0, idx["i_d"]] -= params.kp_ccl
    w[1, idx["i_q"]] -= params.kp_ccl
    w[0, idx["gamma_d"]] += params.ki_ccl
    w[1, idx["gamma_q"]] += params.ki_ccl

    # physical inverter voltage u_i: delayed control voltage
    if not has_delay:
        ui = w
    else:
        tau = 1.5 * params.t_s
        ui = np.zeros((2, n))
        for ch in range(2):
            if pade_order == 1:
                k = idx[f"pade_{ch + 1}"]
                a[k, :] += w[ch, :]
                a[k, k] += -2.0 / tau
                ui[ch, k] = 4.0 / tau
                ui[ch, :] -= w[ch, :]
            else:
                k = idx[f"pade_{2 * ch + 1}"]
                a[k, k + 1] = 1.0
                a[k + 1, :] += w[ch, :]
                a[k + 1, k] += -12.0 / tau ** 2
                a[k + 1, k + 1] += -6.0 / tau
                ui[ch, :] += w[ch, :]
                ui[ch, k + 1] += -12.0 / tau

    # filter: (l/w_b) di/dt = u_i - u_loc - (r E + l J) i
    scale = omega_b / params.l_f
    a[:2, :] += scale * (ui - cu_x)
    b[:2, :] += -scale * cu_u
    a[0, idx["i_d"]] += -scale * params.r_f
    a[1, idx["i_q"]] += -scale * params.r_f
    a[0, idx["i_q"]] += omega_b
    a[1, idx["i_d"]] += -omega_b

    # current-loop integrators: d gamma/dt = iref - i
    a[idx["gamma_d"], :] += iref[0, :]
    a[idx["gamma_d"], idx["i_d"]] += -1.0
    a[idx["gamma_q"], :] += iref[1, :]
    a[idx["gamma_q"], idx["i_q"]] += -1.0

    # PLL on the local q voltage
    a[idx["phi_pll"], :] += params.ki_pll * cu_x[1, :]
    b[idx["phi_pll"], :] += params.ki_pll * cu_u[1, :]
    a[idx["theta"], :] += params.kp_pll * cu_x[1, :]
    a[idx["theta"], idx["phi_pll"]] += 1.0
    b[idx["theta"], :] += params.kp_pll * cu_u[1, :]

    # DC energy balance (negative feedback): the capacitor absorbs the
    # deficit between the stiff DC source and the AC-side power
    if has_dvl:
        dvl = params.dvl
        row = np.zeros(n)
        row[idx["i_d"]] += op.u_id0
        row[idx["i_q"]] += op.u_iq0
        row += op.i_d0 * ui[0, :] + op.i_q0 * ui[1, :]
        a[idx["u_dc"], :] += -row / (dvl.c_dc * op.u_dc0)
        a[idx["gamma_dc"], idx["u_dc"]] = 1.0

    # outputs: port current into the device and PLL frequency deviation
    c = np.zeros((3, n))
    d = np.zeros((3, 2))
    c[:2, idx["i_d"]:idx["i_q"] + 1] = -t
    c[:2, idx["theta"]] = t @ i_m0
    c[2, :] = params.kp_pll * cu_x[1, :]
    c[2, idx["phi_pll"]] = 1.0
    d[2, :] = params.kp_pll * cu_u[1, :]

    return StateSpaceModel(a, b, c, d, labels, ["u_D", "u_Q"],
                           ["j_D", "j_Q", "omega_pll"])


def assemble_system(config: SystemConfig, op: OperatingPoint,
                    device_models: dict[str, StateSpaceModel] | None = None,
                    pade_order: int | None = None) -> StateSpaceModel:
    """Interconnect devices, branches, and bus capacitors.

    Inputs: the infinite-bus voltage (disturbance port) followed by a
    current-injection port per active bus. Outputs: active bus voltages,
    then per GFL its injected current and PLL frequency deviation.
    """
    omega_b = config.omega_b
    slack = config.slack_bus
    active = list(config.active_buses)
    if pade_order is None:
        pade_order = config.solver.pade_order

    if device_models is None:
        device_models = {}
        for src in config.gfl_sources:
            device_models[src.bus] = gfl_state_space(
                src.gfl_params, op.gfl[src.bus], omega_b, pade_order)

    labels: list[tuple[str, str]] = []
    dev_slice: dict[str, slice] = {}
    for bus, model in device_models.items():
        dev_slice[bus] = slice(len(labels), len(labels) + model.order)
        labels += model.state_labels
    br_slice: list[slice] = []
    for k, br in enumerate(config.branches):
        name = f"{br.from_bus}-{br.to_bus}"
        br_slice.append(slice(len(labels), len(labels) + 2))
        labels += [(name, "line_iD"), (name, "line_iQ")]
    bus_slice: dict[str, slice] = {}
    for bus in active:
        c_sh = config.shunt_of(bus)
        if c_sh <= 0.0:
            raise NumericalError(
                f"bus {bus!r} has zero total capacitance; bus voltages "
                "must be states")
        bus_slice[bus] = slice(len(labels), len(labels) + 2)
        labels += [(bus, "bus_vD"), (bus, "bus_vQ")]

    n = len(labels)
    input_labels = ["vinf_D", "vinf_Q"]
    for bus in active:
        input_labels += [f"inj_{bus}_D", f"inj_{bus}_Q"]
    a = np.zeros((n, n))
    b = np.zeros((n, len(input_labels)))

    def input_cols(bus: str) -> slice:
        i = active.index(bus)
        return slice(2 + 2 * i, 4 + 2 * i)

    # devices: input is their bus voltage
    for bus, model in device_models.items():
        sl = dev_slice[bus]
        a[sl, sl] = model.a
        a[sl, bus_slice[bus]] = model.b

    # branches
    for k, br in enumerate(config.branches):
        sl = br_slice[k]
        scale = omega_b / br.l
        a[sl, sl] += -scale * (br.r * E2) - omega_b * J
        for end, sign in ((br.from_bus, +1.0), (br.to_bus, -1.0)):
            if end == slack:
                b[sl, 0:2] += sign * scale * E2
            else:
                a[sl, bus_slice[end]] += sign * scale * E2

    # bus capacitors: (c/w_b) dv/dt = -c J v + branch inflow + injections
    for bus in active:
        sl = bus_slice[bus]
        c_sh = config.shunt_of(bus)
        scale = omega_b / c_sh
        a[sl, sl] += -omega_b * J
        for k, br in enumerate(config.branches):
            if br.to_bus == bus:
                a[sl, br_slice[k]] += scale * E2
            elif br.from_bus == bus:
                a[sl, br_slice[k]] += -scale * E2
        b[sl, input_cols(bus)] += scale * E2
        if bus in device_models:
            # source drain: injection into the bus is minus the port current
            model = device_models[bus]
            dsl = dev_slice[bus]
            a[sl, dsl] += -scale * model.c[:2, :]
            a[sl, sl] += -scale * model.d[:2, :]

    # outputs
    out_labels = []
    rows = []
    for bus in active:
        for ch in ("vD", "vQ"):
            out_labels.append(f"v_{bus}_{ch[-1]}")
        row = np.zeros((2, n))
        row[:, bus_slice[bus]] = E2
        rows.append(row)
    gfl_buses = [s.bus for s in config.gfl_sources]
    for bus in gfl_buses:
        model = device_models[bus]
        dsl = dev_slice[bus]
        cur = np.zeros((2, n))
        cur[:, dsl] = -model.c[:2, :]          # injection = -(port current)
        cur[:, bus_slice[bus]] += -model.d[:2, :]
        rows.append(cur)
        out_labels += [f"i_{bus}_D", f"i_{bus}_Q"]
        freq = np.zeros((1, n))
        freq[:, dsl] = model.c[2:3, :]
        freq[:, bus_slice[bus]] += model.d[2:3, :]
        rows.append(freq)
        out_labels.append(f"pll_freq_{bus}")
    c = np.vstack(rows) if rows else np.zeros((0, n))
    d = np.zeros((c.shape[0], b.shape[1]))

    return StateSpaceModel(a, b, c, d, labels, input_labels, out_labels)


@dataclass
class EigenDecomposition:
    """Eigenvalues with bi-orthonormalized left/right eigenvectors and the
    participation matrix p[k, i] = phi[k, i] * psi[i, k]."""

    eigenvalues: np.ndarray
    phi: np.ndarray
    psi: np.ndarray          # rows, scaled so psi[i] @ phi[:, i] == 1
    participation: np.ndarray
    condition: float
    reliable: bool


def eigen_analysis(model: StateSpaceModel | np.ndarray) -> EigenDecomposition:
    """Full eigendecomposition with participation factors.

    Right eigenvectors are unit norm; left ones are rescaled so that
    psi_i . phi_i = 1, which makes the participation matrix invariant
    under any eigenvector rescaling. A large condition estimate (poorly
    separated left/right pairs) flags the participation as unreliable.
    """
    a = model.a if isinstance(model, StateSpaceModel) else np.asarray(model)
    w, vl, vr = scipy.linalg.eig(a, left=True, right=True)
    n = len(w)
    phi = vr / np.linalg.norm(vr, axis=0, keepdims=True)
    psi = vl.conj().T
    cond = 0.0
    for i in range(n):
        d = psi[i] @ phi[:, i]
        norm = np.linalg.norm(psi[i])
        if norm == 0 or abs(d) / norm < 1e-300:
            raise NumericalError("defective eigenbasis: zero psi.phi product")
        cond = max(cond, norm / abs(d))
        psi[i] = psi[i] / d
    part = phi * psi.T
    return EigenDecomposition(
        eigenvalues=w,
        phi=phi,
        psi=psi,
        participation=part,
        condition=float(cond),
        reliable=bool(cond < 1e8),
    )


@dataclass
class GroupedPf:
    """Per-source electromagnetic/synchronization participation sums.

    Complex group sums per mode, plus Eq-19-style ratios normalized over
    sources. Network (and any otherwise ungrouped) states are reported as
    a pseudo-group so that the partition stays complete.
    """

    eigenvalues: np.ndarray
    sources: list[str]
    pf_ed: dict[str, np.ndarray]
    pf_sd: dict[str, np.ndarray]
    network: np.ndarray
    pr_ed: dict[str, np.ndarray]
    pr_sd: dict[str, np.ndarray]
    includes_dvl: dict[str, bool]

    def nearest_mode(self, lam: complex) -> int:
        return int(np.argmin(np.abs(self.eigenvalues - lam)))


def grouped_pf(eig: EigenDecomposition, model: StateSpaceModel) -> GroupedPf:
    """Group state participations into ED/SD per source."""
    sources = sorted({owner for owner, name in model.state_labels
                     if name in ED_STATES or name in SD_STATES})
    n_modes = len(eig.eigenvalues)
    pf_ed = {s: np.zeros(n_modes, dtype=complex) for s in sources}
    pf_sd = {s: np.zeros(n_modes, dtype=complex) for s in sources}
    network = np.zeros(n_modes, dtype=complex)
    includes_dvl = {s: False for s in sources}
    for k, (owner, name) in enumerate(model.state_labels):
        row = eig.participation[k, :]
        if owner in pf_ed and name in ED_STATES:
            pf_ed[owner] += row
            if name in ("u_dc", "gamma_dc"):
                includes_dvl[owner] = True
        elif owner in pf_sd and name in SD_STATES:
            pf_sd[owner] += row
        else:
            network += row
    denom = np.zeros(n_modes)
    for s in sources:
        denom += np.abs(pf_ed[s]) + np.abs(pf_sd[s])
    denom[denom == 0.0] = 1.0
    pr_ed = {s: np.abs(pf_ed[s]) / denom for s in sources}
    pr_sd = {s: np.abs(pf_sd[s]) / denom for s in sources}
    return GroupedPf(eig.eigenvalues, sources, pf_ed, pf_sd, network,
                     pr_ed, pr_sd, includes_dvl)


def forced_response(model: StateSpaceModel, forcing_bus: str, config: SystemConfig,
                    frequency_hz: float, amplitude: float
                    ) -> dict[str, dict[str, float]]:
    """Steady-state sinusoid amplitudes under an infinite-bus voltage
    forcing (linear response; no time stepping).

    The disturbance drives the D channel of the infinite bus with the
    given amplitude at s = j*2*pi*f; per GFL the returned magnitudes are
    the envelope norms of its bus voltage, injected current, and PLL
    frequency deviation.
    """
    if forcing_bus != config.slack_bus:
        raise NumericalError(
            f"forcing bus {forcing_bus!r} is not the infinite bus; only the "
            "infinite-bus disturbance port can be driven")
    s = 2j * np.pi * frequency_hz
    eigs = np.linalg.eigvals(model.a)
    dist = float(np.min(np.abs(eigs - s)))
    if dist < 1e-9 * (1.0 + abs(s)):
        raise NumericalError(
            f"forcing at s = {s:.6g} is {dist:.3e} from a system pole")
    u = np.zeros(model.b.shape[1], dtype=complex)
    u[model.input_labels.index("vinf_D")] = amplitude
    y = model.transfer(s) @ u
    out = {lbl: y[i] for i, lbl in enumerate(model.output_labels)}
    result: dict[str, dict[str, float]] = {}
    for src in config.gfl_sources:
        bus = src.bus
        v = np.array([out[f"v_{bus}_D"], out[f"v_{bus}_Q"]])
        i = np.array([out[f"i_{bus}_D"], out[f"i_{bus}_Q"]])
        result[bus] = {
            "voltage": float(np.linalg.norm(v)),
            "current": float(np.linalg.norm(i)),
            "pll_frequency": float(abs(out[f"pll_freq_{bus}"])),
        }
    return result
