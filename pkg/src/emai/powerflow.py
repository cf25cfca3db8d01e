"""Newton-Raphson AC power flow and per-source steady-state extraction.

Angles are reported relative to the slack bus (theta_slack = 0). GFL buses
enter as PQ buses with their setpoints; the per-source operating point uses
the locked-PLL identities u_q0 = 0, i_d0 = P/U, i_q0 = -Q/U.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SourceSpec, SystemConfig
from .errors import PowerFlowError
from .network import NodalNetwork
from .transfer import E2, J


@dataclass(frozen=True)
class GflOperatingPoint:
    """Steady state of one grid-following source, in its local dq frame."""

    bus: str
    u_m: float
    theta0: float
    p_m: float
    q_m: float
    u_d0: float
    u_q0: float
    i_d0: float
    i_q0: float
    # DC-voltage-loop quantities (None when the source has no DVL)
    u_dc0: float | None = None
    u_id0: float | None = None
    u_iq0: float | None = None


@dataclass(frozen=True)
class OperatingPoint:
    v_mag: dict[str, float]
    theta0: dict[str, float]
    mismatch_norm: float
    gfl: dict[str, GflOperatingPoint]

    def voltage(self, bus: str) -> complex:
        return self.v_mag[bus] * np.exp(1j * self.theta0[bus])


def solve_power_flow(config: SystemConfig) -> OperatingPoint:
    """Flat-start Newton-Raphson on polar mismatch equations.

    Raises PowerFlowError on non-convergence (reporting the final mismatch)
    or on a singular Jacobian.
    """
    ybus, order = NodalNetwork(config).ybus_phasor()
    n = len(order)
    pos = {b: i for i, b in enumerate(order)}
    kinds = {b.id: b.kind for b in config.buses}
    p_set = np.array([config.bus(b).p_inj for b in order])
    q_set = np.array([config.bus(b).q_inj for b in order])

    slack = config.slack_bus
    pv = [b for b in order if kinds[b] == "pv"]
    pq = [b for b in order if kinds[b] == "pq"]
    ang_vars = [b for b in order if b != slack]
    mag_vars = list(pq)

    v = np.ones(n)
    th = np.zeros(n)
    v[pos[slack]] = config.bus(slack).v_set
    for b in pv:
        v[pos[b]] = config.bus(b).v_set

    settings = config.solver
    mismatch = np.inf
    for _ in range(settings.pf_max_iter):
        vc = v * np.exp(1j * th)
        s_inj = vc * np.conj(ybus @ vc)
        dp = np.array([s_inj[pos[b]].real - p_set[pos[b]] for b in ang_vars])
        dq = np.array([s_inj[pos[b]].imag - q_set[pos[b]] for b in pq])
        mis = np.concatenate([dp, dq])
        mismatch = np.max(np.abs(mis)) if mis.size else 0.0
        if mismatch < settings.pf_tol_mismatch:
            break
        if mis.size == 0:
            break
        jac = _jacobian(ybus, v, th, pos, ang_vars, mag_vars, pq)
        try:
            step = np.linalg.solve(jac, -mis)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError("singular power-flow Jacobian") from exc
        for k, b in enumerate(ang_vars):
            th[pos[b]] += step[k]
        for k, b in enumerate(mag_vars):
            v[pos[b]] += step[len(ang_vars) + k]
        if np.max(np.abs(step)) < settings.pf_tol_step:
            vc = v * np.exp(1j * th)
            s_inj = vc * np.conj(ybus @ vc)
            dp = np.array([s_inj[pos[b]].real - p_set[pos[b]] for b in ang_vars])
            dq = np.array([s_inj[pos[b]].imag - q_set[pos[b]] for b in pq])
            mismatch = np.max(np.abs(np.concatenate([dp, dq]))) if ang_vars else 0.0
            break
    if mismatch >= settings.pf_tol_mismatch and len(ang_vars) > 0:
        raise PowerFlowError(
            f"power flow did not converge in {settings.pf_max_iter} iterations "
            f"(final mismatch {mismatch:.3e} p.u.)")

    th -= th[pos[slack]]
    op = OperatingPoint(
        v_mag={b: float(v[pos[b]]) for b in order},
        theta0={b: float(th[pos[b]]) for b in order},
        mismatch_norm=float(mismatch),
        gfl={},
    )
    gfl = {src.bus: source_operating_point(config, op, src)
           for src in config.gfl_sources}
    return OperatingPoint(op.v_mag, op.theta0, op.mismatch_norm, gfl)


def _jacobian(ybus, v, th, pos, ang_vars, mag_vars, pq) -> np.ndarray:
    """Polar-form power-flow Jacobian d(P,Q)/d(theta, |V|)."""
    vc = v * np.exp(1j * th)
    i_inj = ybus @ vc
    n_a, n_m = len(ang_vars), len(mag_vars)
    jac = np.zeros((n_a + len(pq), n_a + n_m))
    # dS/dtheta_k = j*Vk*conj(...) via complex derivative bookkeeping
    for col, bk in enumerate(ang_vars):
        k = pos[bk]
        dvc = 1j * vc[k]
        ds = np.conj(ybus[:, k] * dvc) * vc
        ds[k] += dvc * np.conj(i_inj[k])
        for row, bi in enumerate(ang_vars):
            jac[row, col] = ds[pos[bi]].real
        for row, bi in enumerate(pq):
            jac[n_a + row, col] = ds[pos[bi]].imag
    for col, bk in enumerate(mag_vars):
        k = pos[bk]
        dvc = np.exp(1j * th[k])
        ds = np.conj(ybus[:, k] * dvc) * vc
        ds[k] += dvc * np.conj(i_inj[k])
        for row, bi in enumerate(ang_vars):
            jac[row, n_a + col] = ds[pos[bi]].real
        for row, bi in enumerate(pq):
            jac[n_a + row, n_a + col] = ds[pos[bi]].imag
    return jac


def source_operating_point(config: SystemConfig, op: OperatingPoint,
                           source: SourceSpec) -> GflOperatingPoint:
    """Per-source steady state from a converged power flow.

    The PLL aligns the local d axis with the bus voltage, so u_d0 = U_m,
    u_q0 = 0 and the injected current splits as i_d0 = P/U, i_q0 = -Q/U.
    With a DVL, the inverter-side voltage is u_0 + Z_filter(0) @ i_0 and
    u_dc0 equals the DC reference.
    """
    if source.kind != "gfl":
        raise PowerFlowError(f"source on bus {source.bus!r} is not a GFL")
    bus = config.bus(source.bus)
    u_m = op.v_mag[source.bus]
    if u_m < config.solver.u_floor:
        raise PowerFlowError(
            f"bus {source.bus!r} voltage {u_m:.4f} p.u. below the "
            f"{config.solver.u_floor} p.u. floor; implausible equilibrium")
    p_m, q_m = bus.p_inj, bus.q_inj
    i_d0 = p_m / u_m
    i_q0 = -q_m / u_m
    params = source.gfl_params
    u_dc0 = u_id0 = u_iq0 = None
    if params is not None and params.dvl is not None:
        z0 = params.r_f * E2 + params.l_f * J
        u_i0 = np.array([u_m, 0.0]) + z0 @ np.array([i_d0, i_q0])
        u_dc0 = params.dvl.u_dc_ref
        u_id0, u_iq0 = float(u_i0[0]), float(u_i0[1])
    return GflOperatingPoint(
        bus=source.bus,
        u_m=u_m,
        theta0=op.theta0[source.bus],
        p_m=p_m,
        q_m=q_m,
        u_d0=u_m,
        u_q0=0.0,
        i_d0=i_d0,
        i_q0=i_q0,
        u_dc0=u_dc0,
        u_id0=u_id0,
        u_iq0=u_iq0,
    )
